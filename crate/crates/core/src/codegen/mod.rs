//! Code generation: typed IR to machine code plus location maps, the
//! static map and unwind rows.

pub mod liveness;
pub mod ptrmap;
pub mod regalloc;
pub mod select;
pub mod unwind;

use thiserror::Error;

use crate::frontend::ir::{Class, Inst, TypedIr};
use crate::frontend::{self, Diagnostic};
use crate::image::{FunctionInfo, LocKind, LocationMap, LocationRecord, ProgramImage, UnionCtx};
use crate::types::PointerSlot;

/// Largest frame a single function may request.
pub const DEFAULT_FRAME_BUDGET: u32 = 64 * 1024;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodegenError {
    #[error("function `{func}` needs a {size}-byte frame, budget is {budget}")]
    Capacity { func: String, size: u32, budget: u32 },
    #[error("internal error in `{func}`: {message}")]
    Internal { func: String, message: String },
}

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("{} diagnostic(s)", .0.len())]
    Diagnostics(Vec<Diagnostic>),
    #[error(transparent)]
    Codegen(#[from] CodegenError),
}

#[derive(Clone, Copy, Debug)]
pub struct CodegenOptions {
    pub frame_budget: u32,
}

impl Default for CodegenOptions {
    fn default() -> Self {
        CodegenOptions { frame_budget: DEFAULT_FRAME_BUDGET }
    }
}

pub fn codegen(ir: &TypedIr) -> Result<ProgramImage, CodegenError> {
    codegen_with(ir, CodegenOptions::default())
}

pub fn codegen_with(ir: &TypedIr, opts: CodegenOptions) -> Result<ProgramImage, CodegenError> {
    let lowered;
    let ir = if ir.functions.iter().any(|f| f.body.iter().any(|i| matches!(i, Inst::UnionStore { .. }))) {
        lowered = frontend::lower(ir.clone());
        &lowered
    } else {
        ir
    };
    let callee_ret: Vec<Option<Class>> = ir.functions.iter().map(|f| f.ret).collect();
    let mut img = ProgramImage::empty();
    img.types = ir.types.clone();
    for (fi, f) in ir.functions.iter().enumerate() {
        let internal = |message: String| CodegenError::Internal { func: f.name.clone(), message };
        let cfg = liveness::cfg(&f.body);
        let live = liveness::liveness(f, &cfg);
        let alloc = regalloc::allocate(f, &live);
        let frame = regalloc::Frame::new(&alloc, f.union_locals.len());
        if frame.size > opts.frame_budget {
            return Err(CodegenError::Capacity { func: f.name.clone(), size: frame.size, budget: opts.frame_budget });
        }
        let mf = select::select(f, &alloc, &frame, &cfg, &live);
        let params: Vec<Class> = f.params.iter().map(|p| f.class(*p)).collect();
        let union_tys: Vec<_> = f.union_locals.iter().map(|u| u.ty).collect();
        let entries = if f.allocator {
            vec![Vec::new(); mf.code.len()]
        } else {
            let input = ptrmap::PtrMapInput {
                mf: &mf,
                params: &params,
                callee_ret: &callee_ret,
                union_locals: &union_tys,
                types: &ir.types,
            };
            ptrmap::solve(&input)
                .map_err(|c| internal(format!("location {} mixes pointer and non-pointer values at pc {}", c.loc, c.pc)))?
        };
        let start = img.code.len() as u32;
        let mut code = mf.code;
        select::relocate(&mut code, start);
        let end = start + code.len() as u32;
        img.unwind.push(unwind::unwind_rows(&code, start));
        img.code.extend(code);
        img.locmaps.push(LocationMap { func: fi as u32, start, entries });
        img.functions.push(FunctionInfo {
            name: f.name.clone(),
            start,
            end,
            params: f.params.len() as u8,
            allocator: f.allocator,
            frame_size: frame.size,
        });
    }
    let mut data = vec![0u8; ir.static_size as usize];
    for &(off, v) in &ir.static_init {
        data[off as usize..off as usize + 8].copy_from_slice(&v.to_le_bytes());
    }
    img.static_data = data;
    img.static_map = static_map(ir);
    img.globals = ir.globals.clone();
    img.entry = ir.entry;
    Ok(img)
}

fn static_map(ir: &TypedIr) -> Vec<LocationRecord> {
    let mut out = Vec::new();
    for g in &ir.globals {
        let base = g.offset as u64;
        for s in ir.types.pointer_slots(g.ty) {
            let rec = match s {
                PointerSlot::Plain { offset, pointee } => LocationRecord::plain(LocKind::Static((base + offset) as u32), pointee),
                PointerSlot::InUnion { offset, disc_offset, tag, pointee } => LocationRecord {
                    kind: LocKind::Static((base + offset) as u32),
                    pointee,
                    union_ctx: Some(UnionCtx { disc: LocKind::Static((base + disc_offset) as u32), tag }),
                },
            };
            out.push(rec);
        }
    }
    out.sort();
    out
}

/// Source text to image in one step.
pub fn compile(src: &str) -> Result<ProgramImage, CompileError> {
    let ir = frontend::compile_to_ir(src).map_err(CompileError::Diagnostics)?;
    Ok(codegen(&ir)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::Instr;

    fn main_range(img: &ProgramImage) -> std::ops::Range<u32> {
        let f = &img.functions[img.function_by_name("main").unwrap() as usize];
        f.start..f.end
    }

    fn entry(img: &ProgramImage, pc: u32) -> &[LocationRecord] {
        img.entry_at(pc).unwrap().1
    }

    #[test]
    fn prohibited_location_reuse() {
        let img = compile(
            "fn use_long(x: int) { print(x); }\nfn use_ptr(q: *int) { print(*q); }\n\
             fn f(flag: bool) {\n  let i: int = 0; let p: *int = null;\n\
               if flag { i = 42; use_long(i); } else { p = alloc(int); use_ptr(p); }\n\
               print(7);\n\
               if flag { use_long(i); } else { free(pass p); }\n}\n\
             fn main() { f(true); f(false); }",
        )
        .unwrap();
        let f = &img.functions[img.function_by_name("f").unwrap() as usize];
        // Every location ever written with a scalar must never appear as a pointer location.
        let mut scalar_regs = std::collections::BTreeSet::new();
        for pc in f.start..f.end {
            if let Instr::Li { rd, .. } | Instr::Bin { rd, .. } = img.code[pc as usize] {
                scalar_regs.insert(rd.0);
            }
        }
        for pc in f.start..f.end {
            for r in entry(&img, pc) {
                if let LocKind::Reg(n) = r.kind {
                    assert!(!scalar_regs.contains(&n), "r{n} shared at pc {pc}");
                }
            }
        }
    }

    #[test]
    fn pointer_free_code_has_empty_entries() {
        let img = compile("fn sq(x: int) -> int { return x * x; }\nfn main() { let a: int = 3; while a < 100 { a = sq(a); } print(a); }").unwrap();
        assert!(img.locmaps.iter().all(|m| m.entries.iter().all(|e| e.is_empty())));
        assert!(img.static_map.is_empty());
    }

    #[test]
    fn allocator_entries_are_empty() {
        let img = compile(
            "struct N { next: *N }\n@allocator fn mk() -> *N { let n: *N = alloc(N); n.next = null; return n; }\nfn main() { let a: *N = mk(); a.next = mk(); }",
        )
        .unwrap();
        let mk = img.function_by_name("mk").unwrap() as usize;
        assert!(img.locmaps[mk].entries.iter().all(|e| e.is_empty()));
        let main = img.function_by_name("main").unwrap() as usize;
        assert!(img.locmaps[main].entries.iter().any(|e| !e.is_empty()));
    }

    #[test]
    fn pointer_absent_before_assignment_and_after_null() {
        let img = compile("fn main() { let p: *int = null; print(1); p = alloc(int); *p = 5; p = null; print(2); print(3); }").unwrap();
        let r = main_range(&img);
        let alloc_pc = r.clone().find(|&pc| matches!(img.code[pc as usize], Instr::Alloc { .. })).unwrap();
        for pc in r.start..=alloc_pc {
            assert!(entry(&img, pc).is_empty(), "pc {pc}");
        }
        assert!(!entry(&img, alloc_pc + 1).is_empty());
        let prints: Vec<u32> = r.clone().filter(|&pc| matches!(img.code[pc as usize], Instr::Print { .. })).collect();
        for &pc in &prints[1..] {
            assert!(entry(&img, pc).is_empty(), "pc {pc}");
        }
    }

    #[test]
    fn pointer_live_across_loop_present_in_body() {
        let img = compile("fn main() { let p: *int = alloc(int); let i: int = 0; while i < 5 { *p = *p + i; i = i + 1; } print(*p); }").unwrap();
        let r = main_range(&img);
        let jmp = r.clone().find(|&pc| matches!(img.code[pc as usize], Instr::Jmp { .. })).unwrap();
        let Instr::Jmp { target } = img.code[jmp as usize] else { unreachable!() };
        for pc in target..=jmp {
            assert!(!entry(&img, pc).is_empty(), "pc {pc}");
        }
    }

    #[test]
    fn union_locals_carry_discriminant_context() {
        let img = compile(
            "union U { P: *int, I: int }\nfn main() { let u: U; u = P(alloc(int)); match u { P(x) => { print(*x); } _ => {} } u = I(3); }",
        )
        .unwrap();
        let r = main_range(&img);
        let recs: Vec<_> = r.flat_map(|pc| entry(&img, pc).iter().copied()).filter(|r| r.union_ctx.is_some()).collect();
        assert!(!recs.is_empty());
        for rec in recs {
            let ctx = rec.union_ctx.unwrap();
            let (LocKind::Slot(d), LocKind::Slot(disc)) = (rec.kind, ctx.disc) else { panic!() };
            assert_eq!(d, disc + 8);
            assert_eq!(ctx.tag, 1);
        }
    }

    #[test]
    fn entries_are_canonical() {
        let img = compile(
            "struct N { next: *N, v: int }\nfn walk(n: *N) -> int { let k: int = 0; while n != null { k = k + n.v; n = n.next; } return k; }\n\
             fn main() { let a: *N = alloc(N); let b: *N = alloc(N); a.next = b; b.v = 2; print(walk(a)); free(pass a); }",
        )
        .unwrap();
        for (fi, m) in img.locmaps.iter().enumerate() {
            for (i, e) in m.entries.iter().enumerate() {
                let pc = m.start + i as u32;
                let row = img.unwind_row(fi as u32, pc).unwrap();
                let mut keys: Vec<_> = e.iter().map(|r| r.key()).collect();
                keys.dedup();
                assert_eq!(keys.len(), e.len());
                assert!(e.windows(2).all(|w| w[0] < w[1]));
                for r in e {
                    if let LocKind::Slot(o) = r.kind {
                        assert_eq!(o % 8, 0);
                        assert!(o < 0 && (-o) as u32 <= row.cfa_offset, "slot {o} outside frame at pc {pc}");
                    }
                }
            }
        }
    }

    #[test]
    fn globals_appear_in_static_map() {
        let img = compile("struct N { next: *N, v: int }\nglobal head: *N = null;\nglobal count: int = 4;\nfn main() { head = alloc(N); }").unwrap();
        assert_eq!(img.static_map.len(), 1);
        assert!(matches!(img.static_map[0].kind, LocKind::Static(_)));
        assert_eq!(img.static_data.len(), 16);
    }

    #[test]
    fn oversized_frame_is_a_capacity_error() {
        let mut src = String::from("fn main() {\n");
        for k in 0..40 {
            src.push_str(&format!("let p{k}: *int = alloc(int);\n"));
        }
        for k in 0..40 {
            src.push_str(&format!("print(*p{k});\n"));
        }
        src.push('}');
        let ir = frontend::compile_to_ir(&src).unwrap();
        assert!(codegen(&ir).is_ok());
        let err = codegen_with(&ir, CodegenOptions { frame_budget: 64 }).unwrap_err();
        assert!(matches!(err, CodegenError::Capacity { .. }));
    }
}
