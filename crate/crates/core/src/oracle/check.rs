//! Whole-run differential checking: step a VM and compare the tracer with
//! the shadow oracle at every sampled instruction boundary.

use std::fmt;
use std::sync::Arc;

use crate::image::ProgramImage;
use crate::isa::Instr;
use crate::tracer::{self, PointerGraph, Region};
use crate::vm::{Vm, VmConfig};

use super::diff::{check_boundary_with, Failure};

#[derive(Clone, Debug)]
pub struct CheckOptions {
    pub max_steps: u64,
    /// Every boundary below this step count is checked.
    pub exhaustive_steps: u64,
    /// Above it, every `stride`-th boundary plus the interesting ones.
    pub stride: u64,
    /// Every n-th checked boundary is also traced from a captured snapshot
    /// and must give the same graph as the live trace. 0 disables.
    pub snapshot_every: u64,
    pub stop_at_first: bool,
    pub heap_cap: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            max_steps: 200_000,
            exhaustive_steps: 50_000,
            stride: 17,
            snapshot_every: 64,
            stop_at_first: false,
            heap_cap: VmConfig::default().heap_cap,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FailureCounts {
    pub precision: u64,
    pub completeness: u64,
    pub dominance: u64,
    pub r2: u64,
    pub trace: u64,
    /// Snapshot trace differed from the live trace.
    pub snapshot: u64,
    /// Heap edges into chunks that are not live.
    pub dangling: u64,
}

impl FailureCounts {
    pub fn total(&self) -> u64 {
        self.precision + self.completeness + self.dominance + self.r2 + self.trace + self.snapshot + self.dangling
    }

    fn add(&mut self, f: &Failure) {
        match f {
            Failure::Precision { .. } => self.precision += 1,
            Failure::Completeness { .. } => self.completeness += 1,
            Failure::Dominance { .. } => self.dominance += 1,
            Failure::R2(_) => self.r2 += 1,
            Failure::Trace(_) => self.trace += 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Counterexample {
    pub step: u64,
    pub thread: u32,
    pub pc: u64,
    pub failures: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Verdict {
    pub steps: u64,
    pub boundaries: u64,
    /// Checked boundaries with some thread inside a union store sequence.
    pub union_boundaries: u64,
    pub snapshot_checks: u64,
    pub finished: bool,
    pub trap: Option<String>,
    pub counts: FailureCounts,
    pub first: Option<Counterexample>,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.counts.total() == 0 && self.trap.is_none()
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.counts;
        write!(
            f,
            "{} steps={} boundaries={} union_boundaries={} snapshot_checks={} finished={} \
             precision={} completeness={} dominance={} r2={} trace={} snapshot={} dangling={}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.steps,
            self.boundaries,
            self.union_boundaries,
            self.snapshot_checks,
            self.finished as u8,
            c.precision,
            c.completeness,
            c.dominance,
            c.r2,
            c.trace,
            c.snapshot,
            c.dangling
        )?;
        if let Some(t) = &self.trap {
            write!(f, " trap={t:?}")?;
        }
        if let Some(x) = &self.first {
            write!(f, "\n  first step={} thread={} pc={}: {}", x.step, x.thread, x.pc, x.failures.join("; "))?;
        }
        Ok(())
    }
}

/// Is `pc` inside a lowered union store: the zero, tag or data store.
pub fn in_union_store(code: &[Instr], pc: u64) -> bool {
    let pc = pc as usize;
    let tag_at = |i: usize| matches!(code.get(i), Some(Instr::StTag { .. }));
    tag_at(pc) || (pc > 0 && tag_at(pc - 1)) || tag_at(pc + 1)
}

fn near_pass_or_free(code: &[Instr], pc: u64) -> bool {
    let pc = pc as usize;
    (pc.saturating_sub(1)..=pc + 1)
        .any(|i| matches!(code.get(i), Some(Instr::Pass { .. } | Instr::PassM { .. } | Instr::Free { .. })))
}

fn thread_pcs(vm: &Vm) -> impl Iterator<Item = u64> + '_ {
    vm.threads.iter().filter(|t| !t.exited).map(|t| t.pc)
}

fn dangling_edges(vm: &Vm, g: &PointerGraph) -> u64 {
    g.edges
        .iter()
        .filter(|e| match g.nodes[e.target].region {
            Region::Heap(id) => !vm.heap.chunks.get(id as usize).is_some_and(|c| c.live),
            _ => false,
        })
        .count() as u64
}

/// Whether the check inspects the boundary `vm` stands at.
pub fn is_sampled(vm: &Vm, opts: &CheckOptions) -> bool {
    vm.steps < opts.exhaustive_steps
        || vm.steps.is_multiple_of(opts.stride.max(1))
        || vm.finished
        || thread_pcs(vm).any(|pc| in_union_store(&vm.image.code, pc) || near_pass_or_free(&vm.image.code, pc))
}

/// Runs `image` under `seed` and checks the tracer at sampled boundaries.
pub fn differential_check(image: Arc<ProgramImage>, seed: u64) -> Verdict {
    differential_check_opts(image.clone(), &image, seed, &CheckOptions::default())
}

/// The general form: executes `image` but traces with the maps of `maps`
/// (the two differ only in location maps when a harness mutates them).
pub fn differential_check_opts(image: Arc<ProgramImage>, maps: &ProgramImage, seed: u64, opts: &CheckOptions) -> Verdict {
    let mut vm = Vm::new(image, VmConfig { seed, heap_cap: opts.heap_cap });
    let mut v = Verdict::default();
    loop {
        if is_sampled(&vm, opts) {
            check_one(&vm, maps, opts, &mut v);
            if opts.stop_at_first && v.first.is_some() {
                break;
            }
        }
        if vm.finished || vm.steps >= opts.max_steps {
            break;
        }
        if let Err(t) = vm.step() {
            v.trap = Some(t.to_string());
            break;
        }
    }
    v.steps = vm.steps;
    v.finished = vm.finished;
    v
}

fn check_one(vm: &Vm, maps: &ProgramImage, opts: &CheckOptions, v: &mut Verdict) {
    v.boundaries += 1;
    if thread_pcs(vm).any(|pc| in_union_store(&vm.image.code, pc)) {
        v.union_boundaries += 1;
    }
    let mut notes: Vec<String> = Vec::new();
    match check_boundary_with(vm, maps) {
        Ok(g) => {
            let d = dangling_edges(vm, &g);
            if d > 0 {
                v.counts.dangling += d;
                notes.push(format!("{d} dangling edges"));
            }
            if opts.snapshot_every > 0 && v.boundaries % opts.snapshot_every == 1 {
                v.snapshot_checks += 1;
                let snap = vm.capture_snapshot();
                if tracer::trace_graph(&snap, maps).ok().as_ref() != Some(&g) {
                    v.counts.snapshot += 1;
                    notes.push("snapshot trace differs from live trace".into());
                }
            }
        }
        Err(fs) => {
            for f in &fs {
                v.counts.add(f);
            }
            notes.extend(fs.iter().map(|f| f.to_string()));
        }
    }
    if !notes.is_empty() && v.first.is_none() {
        let thread = vm.current_thread();
        let pc = vm.thread(thread).map(|t| t.pc).unwrap_or(0);
        v.first = Some(Counterexample { step: vm.steps, thread, pc, failures: notes });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegen::compile;
    use crate::image::LocKind;

    const SRC: &str = "struct N { next: *N, v: int }\n\
        fn main() { let a: *N = alloc(N); a.next = alloc(N); let b: *N = a.next; b.v = 3; print(b.v); print(a.v); }";

    #[test]
    fn conforming_program_passes() {
        let img = Arc::new(compile(SRC).unwrap());
        let v = differential_check(img, 1);
        assert!(v.passed(), "{v}");
        assert!(v.finished);
        assert_eq!(v.boundaries, v.steps + 1);
        assert!(v.snapshot_checks > 0);
        assert!(v.to_string().starts_with("PASS steps="));
    }

    #[test]
    fn corrupted_map_reports_first_divergent_pc() {
        let img = Arc::new(compile(SRC).unwrap());
        let mut bad = (*img).clone();
        let main = bad.function_by_name("main").unwrap() as usize;
        let m = &mut bad.locmaps[main];
        // Drop every record of the first pc that has two of them.
        let (i, _) = m.entries.iter().enumerate().find(|(_, e)| e.len() >= 2).unwrap();
        let pc = m.start as u64 + i as u64;
        let removed = m.entries[i].remove(0);
        assert!(matches!(removed.kind, LocKind::Reg(_) | LocKind::Slot(_)));
        let opts = CheckOptions { stop_at_first: true, ..CheckOptions::default() };
        let v = differential_check_opts(img, &bad, 1, &opts);
        assert!(!v.passed());
        let first = v.first.unwrap();
        assert_eq!(first.pc, pc);
        assert!(v.counts.completeness >= 1, "{:?}", first.failures);
    }
}
