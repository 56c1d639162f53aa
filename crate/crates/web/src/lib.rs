//! Browser bindings: compile a program, stop it somewhere, trace it.
//!
//! Every entry point takes source text and returns a JSON string so the
//! page needs no generated type glue.

use std::sync::Arc;

use maptrace::apps::leakcheck;
use maptrace::codegen::{compile, CompileError};
use maptrace::image::ProgramImage;
use maptrace::tracer::emit::{to_dot, to_json};
use maptrace::tracer::trace_graph;
use maptrace::vm::{Vm, VmConfig};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const MAX_STEPS: u64 = 2_000_000;

fn build(src: &str) -> Result<Arc<ProgramImage>, Value> {
    compile(src).map(Arc::new).map_err(|e| match e {
        CompileError::Diagnostics(ds) => {
            json!({ "ok": false, "diagnostics": ds.iter().map(|d| d.render("input")).collect::<Vec<_>>() })
        }
        e => json!({ "ok": false, "diagnostics": [e.to_string()] }),
    })
}

/// Runs to step `stop`, or to main's last boundary when `stop` is 0.
fn halted(img: Arc<ProgramImage>, seed: u64, stop: u64) -> Result<Vm, Value> {
    let mut vm = Vm::new(img, VmConfig { seed, ..VmConfig::default() });
    loop {
        let done = if stop == 0 { vm.at_main_exit() } else { vm.steps >= stop };
        if done || vm.finished || vm.steps >= MAX_STEPS {
            return Ok(vm);
        }
        if let Err(t) = vm.step() {
            return Err(json!({ "ok": false, "diagnostics": [format!("trap at step {}: {t}", vm.steps)] }));
        }
    }
}

fn finish(r: Result<Value, Value>) -> String {
    r.unwrap_or_else(|e| e).to_string()
}

/// Compiles `src` and reports the code size, functions and how many
/// location records each function's maps carry.
#[wasm_bindgen]
pub fn compile_program(src: &str) -> String {
    finish(build(src).map(|img| {
        let funcs: Vec<Value> = img
            .functions
            .iter()
            .zip(&img.locmaps)
            .map(|(f, m)| {
                json!({
                    "name": f.name,
                    "start": m.start,
                    "end": m.end(),
                    "frame_size": f.frame_size,
                    "records": m.entries.iter().map(Vec::len).sum::<usize>(),
                })
            })
            .collect();
        json!({
            "ok": true,
            "instructions": img.code.len(),
            "encoded_bytes": maptrace::mapfmt::encode(&img).len(),
            "locmap_bytes": maptrace::mapfmt::encoded_locmap_size(&img),
            "naive_locmap_bytes": maptrace::mapfmt::naive_locmap_size(&img),
            "functions": funcs,
        })
    }))
}

/// Halts the program at `stop` (0 = end of main) and traces it.
#[wasm_bindgen]
pub fn trace_program(src: &str, seed: u64, stop: u64) -> String {
    finish(build(src).and_then(|img| halted(img, seed, stop)).and_then(|vm| {
        let g = trace_graph(&vm, &vm.image).map_err(|e| json!({ "ok": false, "diagnostics": [e.to_string()] }))?;
        let graph: Value = serde_json::from_str(&to_json(&g, &vm.image.types)).expect("emitter writes JSON");
        Ok(json!({
            "ok": true,
            "step": vm.steps,
            "output": vm.output,
            "dot": to_dot(&g, &vm.image.types),
            "graph": graph,
        }))
    }))
}

/// Halts like [`trace_program`] and lists unreachable live chunks.
#[wasm_bindgen]
pub fn leakcheck_program(src: &str, seed: u64, stop: u64) -> String {
    finish(build(src).and_then(|img| halted(img, seed, stop)).and_then(|vm| {
        let r = leakcheck(&vm, &vm.image).map_err(|e| json!({ "ok": false, "diagnostics": [e.to_string()] }))?;
        Ok(json!({ "ok": true, "step": vm.steps, "text": r.to_string(), "report": r }))
    }))
}
