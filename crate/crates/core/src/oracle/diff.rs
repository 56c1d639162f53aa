//! Boundary-by-boundary comparison of the tracer against the VM's shadow
//! tags and the conservative scanner.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use crate::image::ProgramImage;
use crate::isa::{sentinel, stack_top, NUM_GPRS};
use crate::tracer::{self, Loc, PointerGraph};
use crate::vm::{audit_r2, shadow_pointer_set, ShadowLoc, Tag, Vm};

use super::conservative_scan;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Failure {
    /// The tracer could not produce a graph.
    Trace(String),
    /// Reported pointer that the shadow state does not tag as that pointer.
    Precision { loc: Loc, value: u64 },
    /// Shadow-tagged live pointer the tracer missed.
    Completeness { loc: Loc, value: u64 },
    /// Precise value not among the conservative candidates.
    Dominance { value: u64 },
    R2(String),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Trace(e) => write!(f, "trace error: {e}"),
            Failure::Precision { loc, value } => write!(f, "precision: {loc:?} = {value:#x} not a shadow pointer"),
            Failure::Completeness { loc, value } => write!(f, "completeness: missed {loc:?} = {value:#x}"),
            Failure::Dominance { value } => write!(f, "dominance: {value:#x} not a conservative candidate"),
            Failure::R2(e) => write!(f, "r2 audit: {e}"),
        }
    }
}

fn to_loc(l: ShadowLoc) -> Loc {
    match l {
        ShadowLoc::Reg { thread, n } => Loc::Reg { thread, n },
        ShadowLoc::Mem { addr } => Loc::Mem { addr },
    }
}

fn shadow_word(vm: &Vm, loc: Loc) -> Option<crate::vm::Word> {
    match loc {
        Loc::Reg { thread, n } => vm.thread(thread).filter(|t| !t.exited && (n as usize) < NUM_GPRS).map(|t| t.regs[n as usize]),
        Loc::Mem { addr } => vm.peek(addr),
    }
}

/// Locations the maps are not expected to describe: an allocator's own
/// frame, and the caller-saved registers while an allocator runs on top.
fn excluded(vm: &Vm, loc: Loc) -> bool {
    match loc {
        Loc::Reg { thread, n } => {
            let Some(t) = vm.thread(thread) else { return false };
            let top_alloc = t.calls.last().is_some_and(|c| vm.image.functions[c.func as usize].allocator);
            top_alloc && !crate::isa::Reg(n).is_callee_saved()
        }
        Loc::Mem { addr } => {
            let Some(tid) = crate::isa::stack_thread(addr) else { return false };
            let Some(t) = vm.thread(tid) else { return false };
            if addr >= stack_top(tid) {
                return false;
            }
            let mut lo = t.sp;
            for c in t.calls.iter().rev() {
                if addr >= lo && addr < c.cfa + 8 {
                    return vm.image.functions[c.func as usize].allocator;
                }
                lo = c.cfa + 8;
            }
            false
        }
    }
}

/// Shadow pointers the tracer must find: roots, and heap words inside
/// chunks reachable from roots through shadow-tagged pointers.
fn expected(vm: &Vm) -> BTreeSet<(Loc, u64)> {
    shadow_closure(vm).1
}

/// Chunks reachable from shadow roots, following shadow tags only.
pub fn shadow_reachable(vm: &Vm) -> BTreeSet<u32> {
    shadow_closure(vm).0
}

/// Live chunks no shadow-tagged path reaches.
pub fn shadow_unreachable(vm: &Vm) -> BTreeSet<u32> {
    let r = shadow_reachable(vm);
    vm.heap.live_chunks().map(|c| c.id).filter(|id| !r.contains(id)).collect()
}

fn shadow_closure(vm: &Vm) -> (BTreeSet<u32>, BTreeSet<(Loc, u64)>) {
    let s = shadow_pointer_set(vm);
    let mut out: BTreeSet<(Loc, u64)> = BTreeSet::new();
    let mut seen = BTreeSet::new();
    let mut work = VecDeque::new();
    for p in &s.roots {
        let loc = to_loc(p.loc);
        if excluded(vm, loc) {
            continue;
        }
        out.insert((loc, p.value));
        work.push_back(p.value);
    }
    while let Some(v) = work.pop_front() {
        let Some(c) = vm.heap.chunk_at(v) else { continue };
        if !seen.insert(c.id) {
            continue;
        }
        let mut a = c.base;
        while a < c.base + c.size {
            if let Some(w) = vm.heap.word(a) {
                if let Tag::Ptr(_) = w.t {
                    if w.v != 0 && !sentinel::is_sentinel(w.v) {
                        out.insert((Loc::Mem { addr: a }, w.v));
                        work.push_back(w.v);
                    }
                }
            }
            a += 8;
        }
    }
    (seen, out)
}

/// Compares a graph against the live VM it was traced from.
pub fn compare(vm: &Vm, g: &PointerGraph) -> Vec<Failure> {
    let mut out = Vec::new();
    let found = g.pointer_locations();
    for &(loc, value) in &found {
        let ok = shadow_word(vm, loc).is_some_and(|w| w.v == value && matches!(w.t, Tag::Ptr(_)));
        if !ok {
            out.push(Failure::Precision { loc, value });
        }
    }
    for (loc, value) in expected(vm) {
        if !found.contains(&(loc, value)) {
            out.push(Failure::Completeness { loc, value });
        }
    }
    let candidates: BTreeSet<u64> = conservative_scan(vm).into_iter().map(|(_, v)| v).collect();
    for v in g.values() {
        if !sentinel::is_sentinel(v) && !candidates.contains(&v) {
            out.push(Failure::Dominance { value: v });
        }
    }
    out
}

/// Full check of one boundary: trace the live VM, compare, audit R2.
pub fn check_boundary(vm: &Vm) -> Result<PointerGraph, Vec<Failure>> {
    check_boundary_with(vm, &vm.image)
}

/// As [`check_boundary`], but tracing with the maps of `maps`, which must
/// share the VM's code.
pub fn check_boundary_with(vm: &Vm, maps: &ProgramImage) -> Result<PointerGraph, Vec<Failure>> {
    let mut fails = Vec::new();
    if let Err(v) = audit_r2(vm) {
        fails.extend(v.into_iter().map(|x| Failure::R2(format!("{:?} = {:#x}: {}", x.loc, x.value, x.reason))));
    }
    match tracer::trace_graph(vm, maps) {
        Ok(g) => {
            fails.extend(compare(vm, &g));
            if fails.is_empty() {
                Ok(g)
            } else {
                Err(fails)
            }
        }
        Err(e) => {
            fails.push(Failure::Trace(e.to_string()));
            Err(fails)
        }
    }
}
