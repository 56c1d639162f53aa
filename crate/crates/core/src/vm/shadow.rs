//! Oracles over the shadow tags: the exact set of pointer-holding
//! locations, and the R2 audit. Neither consults location or type maps.

use std::collections::BTreeSet;

use crate::isa::{sentinel, stack_top, STATIC_BASE};
use crate::types::TypeId;

use super::memory::{Tag, Word};
use super::Vm;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ShadowLoc {
    Reg { thread: u32, n: u8 },
    Mem { addr: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ShadowPointer {
    pub loc: ShadowLoc,
    pub value: u64,
    pub ty: TypeId,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ShadowSet {
    /// Registers, active stack words and static words.
    pub roots: BTreeSet<ShadowPointer>,
    /// Words inside live heap chunks.
    pub heap: BTreeSet<ShadowPointer>,
}

/// Every tagged word that belongs to the program's current state, with its
/// location: registers of running threads, stack words at or above sp,
/// statics and live chunk words.
pub fn for_each_word(vm: &Vm, mut f: impl FnMut(ShadowLoc, Word, bool)) {
    for t in vm.threads.iter().filter(|t| !t.exited) {
        for (n, w) in t.regs.iter().enumerate() {
            f(ShadowLoc::Reg { thread: t.id, n: n as u8 }, *w, true);
        }
        let mut a = t.sp;
        while a < stack_top(t.id) {
            f(ShadowLoc::Mem { addr: a }, t.stack_word(a).unwrap_or_default(), true);
            a += 8;
        }
    }
    for (i, w) in vm.statics.iter().enumerate() {
        f(ShadowLoc::Mem { addr: STATIC_BASE + 8 * i as u64 }, *w, true);
    }
    for c in vm.heap.live_chunks() {
        let mut a = c.base;
        while a < c.base + c.size {
            f(ShadowLoc::Mem { addr: a }, vm.heap.word(a).copied().unwrap_or_default(), false);
            a += 8;
        }
    }
}

pub fn shadow_pointer_set(vm: &Vm) -> ShadowSet {
    let mut s = ShadowSet::default();
    for_each_word(vm, |loc, w, root| {
        if let Tag::Ptr(ty) = w.t {
            if w.v != 0 && !sentinel::is_sentinel(w.v) {
                let p = ShadowPointer { loc, value: w.v, ty };
                if root {
                    s.roots.insert(p);
                } else {
                    s.heap.insert(p);
                }
            }
        }
    });
    s
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct R2Violation {
    pub loc: ShadowLoc,
    pub value: u64,
    pub ty: TypeId,
    /// The freed chunk the stale value pointed into, if any.
    pub dead_chunk: Option<u32>,
    pub reason: &'static str,
}

/// Checks that every pointer-tagged word holds null, a sentinel, or an
/// address inside a live chunk, the static region or an active stack range,
/// and that heap targets have a sub-object of the pointee type there.
pub fn audit_r2(vm: &Vm) -> Result<(), Vec<R2Violation>> {
    let mut out = Vec::new();
    let statics = (STATIC_BASE, STATIC_BASE + 8 * vm.statics.len() as u64);
    for_each_word(vm, |loc, w, _| {
        let Tag::Ptr(ty) = w.t else { return };
        let v = w.v;
        if v == 0 || sentinel::is_sentinel(v) {
            return;
        }
        let mut bad = |reason, dead_chunk| out.push(R2Violation { loc, value: v, ty, dead_chunk, reason });
        if let Some(c) = vm.heap.chunk_at(v) {
            if !vm.image.types.types_at(c.ty, v - c.base).contains(&ty) {
                bad("no object of the pointee type at the target", None);
            }
            return;
        }
        if v >= statics.0 && v < statics.1 {
            return;
        }
        let on_stack = vm.threads.iter().any(|t| !t.exited && v >= t.sp && v < stack_top(t.id));
        if on_stack {
            return;
        }
        let dead = vm.heap.chunks.iter().rev().find(|c| c.contains(v)).map(|c| c.id);
        bad(if dead.is_some() { "dangling pointer into a freed chunk" } else { "pointer outside every object" }, dead);
    });
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}
