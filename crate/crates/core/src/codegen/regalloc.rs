//! Linear-scan allocation with class-exclusive locations.
//!
//! Each register and spill slot belongs to one class (scalar or pointer to
//! a specific type) for the whole function, so a location never holds a
//! pointer on one path and an integer on another. Values live across a call
//! go to callee-saved registers or slots. `@allocator` functions never touch
//! callee-saved registers, so their callers' values stay where the unwinder
//! expects them.

use crate::frontend::ir::{Class, Inst, IrFunction};
use crate::isa::{Reg, CALLEE_SAVED, CALLER_SAVED_HOMES};

use super::liveness::Liveness;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Loc {
    Reg(Reg),
    /// Index into the spill area; resolved to a CFA offset by [`Frame`].
    Spill(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
    pub crosses_call: bool,
}

pub struct Allocation {
    pub locs: Vec<Option<Loc>>,
    pub reg_class: [Option<Class>; 16],
    pub spill_class: Vec<Class>,
    pub intervals: Vec<Option<Interval>>,
}

impl Allocation {
    pub fn used_callee_saved(&self) -> Vec<Reg> {
        CALLEE_SAVED.iter().copied().filter(|r| self.reg_class[r.0 as usize].is_some()).collect()
    }

    pub fn ptr_class_homes(&self) -> Vec<Reg> {
        CALLER_SAVED_HOMES
            .iter()
            .copied()
            .filter(|r| matches!(self.reg_class[r.0 as usize], Some(Class::Ptr(_))))
            .collect()
    }
}

pub fn intervals(f: &IrFunction, live: &Liveness) -> Vec<Option<Interval>> {
    let mut out: Vec<Option<Interval>> = vec![None; f.vregs.len()];
    let mut touch = |v: usize, i: usize| {
        let e = out[v].get_or_insert(Interval { start: i, end: i, crosses_call: false });
        e.start = e.start.min(i);
        e.end = e.end.max(i);
    };
    for (i, inst) in f.body.iter().enumerate() {
        for v in live.live_in[i].ones().chain(live.live_out[i].ones()) {
            touch(v, i);
        }
        for v in inst.defs().into_iter().chain(inst.uses()) {
            touch(v.0 as usize, i);
        }
    }
    // Parameters arrive before the first instruction.
    for p in &f.params {
        if let Some(iv) = out[p.0 as usize].as_mut() {
            iv.start = 0;
        }
    }
    for (i, inst) in f.body.iter().enumerate() {
        if let Inst::Call { dst, .. } = inst {
            for v in live.live_out[i].ones() {
                if Some(v as u32) != dst.map(|d| d.0) {
                    if let Some(iv) = out[v].as_mut() {
                        iv.crosses_call = true;
                    }
                }
            }
        }
    }
    out
}

pub fn allocate(f: &IrFunction, live: &Liveness) -> Allocation {
    let intervals = intervals(f, live);
    let mut order: Vec<usize> = (0..f.vregs.len()).filter(|&v| intervals[v].is_some()).collect();
    order.sort_by_key(|&v| (intervals[v].unwrap().start, v));

    let mut locs = vec![None; f.vregs.len()];
    let mut reg_class: [Option<Class>; 16] = [None; 16];
    let mut reg_free_after: [Option<usize>; 16] = [None; 16];
    let mut spill_class: Vec<Class> = Vec::new();
    let mut spill_free_after: Vec<usize> = Vec::new();

    for v in order {
        let iv = intervals[v].unwrap();
        let class = f.vregs[v].class;
        let mut pool: Vec<Reg> = Vec::new();
        if !iv.crosses_call {
            pool.extend(CALLER_SAVED_HOMES);
        }
        if !f.allocator {
            pool.extend(CALLEE_SAVED);
        }
        let fits = |r: &Reg| {
            let i = r.0 as usize;
            reg_class[i].is_none_or(|c| c == class) && reg_free_after[i].is_none_or(|e| e < iv.start)
        };
        if let Some(r) = pool.into_iter().find(fits) {
            reg_class[r.0 as usize] = Some(class);
            reg_free_after[r.0 as usize] = Some(iv.end);
            locs[v] = Some(Loc::Reg(r));
            continue;
        }
        let slot = (0..spill_class.len()).find(|&s| spill_class[s] == class && spill_free_after[s] < iv.start);
        let s = match slot {
            Some(s) => {
                spill_free_after[s] = iv.end;
                s
            }
            None => {
                spill_class.push(class);
                spill_free_after.push(iv.end);
                spill_class.len() - 1
            }
        };
        locs[v] = Some(Loc::Spill(s as u32));
    }
    Allocation { locs, reg_class, spill_class, intervals }
}

/// Frame layout, all offsets relative to the canonical frame address.
/// Below the return address (CFA+0) and saved fp (CFA-8) come the callee
/// save slots, then two words per union local, then spills.
#[derive(Clone, Debug)]
pub struct Frame {
    pub saves: Vec<(Reg, i32)>,
    /// CFA offset of each union local's discriminant; data is 8 above.
    pub unions: Vec<i32>,
    pub spill_base: u32,
    pub size: u32,
}

impl Frame {
    pub fn new(alloc: &Allocation, union_locals: usize) -> Frame {
        let saves: Vec<(Reg, i32)> =
            alloc.used_callee_saved().into_iter().enumerate().map(|(k, r)| (r, slot_offset(k as u32))).collect();
        let mut k = saves.len() as u32;
        let mut unions = Vec::new();
        for _ in 0..union_locals {
            // Two consecutive words; the discriminant sits at the lower address.
            unions.push(slot_offset(k + 1));
            k += 2;
        }
        let spill_base = k;
        let size = (k + alloc.spill_class.len() as u32) * 8;
        Frame { saves, unions, spill_base, size }
    }

    pub fn framed(&self) -> bool {
        self.size > 0
    }

    pub fn spill_offset(&self, s: u32) -> i32 {
        slot_offset(self.spill_base + s)
    }
}

/// CFA offset of frame word k (k = 0 is just below the saved fp).
pub fn slot_offset(k: u32) -> i32 {
    -16 - 8 * k as i32
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegen::liveness::{cfg, liveness};
    use crate::frontend::compile_to_ir;

    fn alloc_main(src: &str) -> (IrFunction, Allocation) {
        let ir = compile_to_ir(src).unwrap();
        let f = ir.functions.iter().find(|f| f.name == "main").unwrap().clone();
        let live = liveness(&f, &cfg(&f.body));
        let a = allocate(&f, &live);
        (f, a)
    }

    fn loc_of(f: &IrFunction, a: &Allocation, name: &str) -> Loc {
        let v = f.vregs.iter().position(|v| v.name.as_deref() == Some(name)).unwrap();
        a.locs[v].unwrap()
    }

    #[test]
    fn pointer_and_integer_never_share() {
        // i dies before p is born; a class-blind allocator would reuse its register.
        let (f, a) = alloc_main(
            "fn main() { let i: int = 5; print(i); let p: *int = alloc(int); *p = 1; print(*p); }",
        );
        assert_ne!(loc_of(&f, &a, "i"), loc_of(&f, &a, "p"));
    }

    #[test]
    fn values_across_calls_avoid_caller_saved() {
        let ir = compile_to_ir(
            "fn g() -> int { return 1; }\nfn main() { let p: *int = alloc(int); let x: int = g(); *p = x; }",
        )
        .unwrap();
        let f = &ir.functions[1];
        let live = liveness(f, &cfg(&f.body));
        let a = allocate(f, &live);
        match loc_of(f, &a, "p") {
            Loc::Reg(r) => assert!(r.is_callee_saved()),
            Loc::Spill(_) => {}
        }
    }

    #[test]
    fn allocators_skip_callee_saved() {
        let ir = compile_to_ir(
            "fn g() -> int { return 1; }\n@allocator fn mk() -> *int { let p: *int = alloc(int); *p = g(); return p; }\nfn main() { let q: *int = mk(); }",
        )
        .unwrap();
        let f = &ir.functions[1];
        let a = allocate(f, &liveness(f, &cfg(&f.body)));
        assert!(a.used_callee_saved().is_empty());
        assert!(!a.spill_class.is_empty());
    }
}
