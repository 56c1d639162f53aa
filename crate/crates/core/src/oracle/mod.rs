//! Independent checks of the tracer. Nothing here reads location or type
//! maps: the shadow tags and the conservative scanner see only raw words.

pub mod check;
pub mod diff;
pub mod gen;
pub mod mutate;

use std::collections::BTreeSet;

use crate::isa::{stack_top, NUM_GPRS, REG_SP};
use crate::tracer::Loc;
use crate::vm::MachineView;

/// Every word in registers, stacks, statics and live chunks whose value
/// points into a live chunk, the static region or an active stack.
pub fn conservative_scan(view: &dyn MachineView) -> BTreeSet<(Loc, u64)> {
    let threads = view.thread_ids();
    let stacks: Vec<(u64, u64)> =
        threads.iter().filter_map(|&t| Some((view.reg(t, REG_SP)?, stack_top(t)))).collect();
    let (slo, shi) = view.static_range();
    let candidate = |v: u64| {
        v != 0
            && (view.chunk_at(v).is_some() || (v >= slo && v < shi) || stacks.iter().any(|&(lo, hi)| v >= lo && v < hi))
    };
    let mut out = BTreeSet::new();
    let scan = |lo: u64, hi: u64, out: &mut BTreeSet<(Loc, u64)>| {
        let mut a = lo;
        while a < hi {
            if let Some(v) = view.read(a).filter(|v| candidate(*v)) {
                out.insert((Loc::Mem { addr: a }, v));
            }
            a += 8;
        }
    };
    for &t in &threads {
        for n in 0..NUM_GPRS as u8 {
            if let Some(v) = view.reg(t, n).filter(|v| candidate(*v)) {
                out.insert((Loc::Reg { thread: t, n }, v));
            }
        }
    }
    for &(lo, hi) in &stacks {
        scan(lo, hi, &mut out);
    }
    scan(slo, shi, &mut out);
    for c in view.live_chunks() {
        scan(c.base, c.base + c.size, &mut out);
    }
    out
}
