//! Harness sensitivity: corrupt one location record at a pc the run
//! actually reaches and see whether the differential check notices.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::image::{LocKind, LocationRecord, ProgramImage};
use crate::tracer;
use crate::types::{TypeId, BOOL, INT};
use crate::vm::{Vm, VmConfig};

use super::check::{differential_check_opts, is_sampled, CheckOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum MutationKind {
    /// Remove a record.
    Drop,
    /// Change a record's pointee type.
    Retype,
    /// Claim a pointer in a location the entry did not list.
    Add,
    /// Point a record at a different register or slot.
    Move,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mutation {
    pub kind: MutationKind,
    pub func: u32,
    pub pc: u32,
    pub before: Option<LocationRecord>,
    pub after: Option<LocationRecord>,
}

impl fmt::Display for Mutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |r: &Option<LocationRecord>| r.map(|r| r.to_string()).unwrap_or_else(|| "-".into());
        write!(f, "{:?} pc={} {} -> {}", self.kind, self.pc, show(&self.before), show(&self.after))
    }
}

/// What a run shows about each pc: which innermost-frame locations ever
/// hold a non-zero word there, and which union records ever have their
/// variant selected with non-zero data.
#[derive(Clone, Debug, Default)]
pub struct Reach {
    pub pcs: Vec<u32>,
    nonzero: HashMap<u32, BTreeSet<LocKind>>,
    live_union: HashMap<u32, BTreeSet<LocationRecord>>,
}

impl Reach {
    fn holds(&self, pc: u32, k: LocKind) -> bool {
        self.nonzero.get(&pc).is_some_and(|s| s.contains(&k))
    }

    /// Would the tracer see a pointer through `r` at some visit of `pc`?
    fn effective(&self, pc: u32, r: &LocationRecord) -> bool {
        match r.union_ctx {
            None => self.holds(pc, r.kind),
            Some(_) => self.live_union.get(&pc).is_some_and(|s| s.contains(r)),
        }
    }
}

fn loc_value(vm: &Vm, t: &crate::vm::Thread, cfa: u64, k: LocKind) -> u64 {
    match k {
        LocKind::Reg(n) => t.regs[n as usize].v,
        LocKind::Slot(o) => vm.peek(cfa.wrapping_add(o as i64 as u64)).map_or(0, |w| w.v),
        LocKind::Static(o) => vm.statics.get(o as usize / 8).map_or(0, |w| w.v),
    }
}

/// Every pc some live thread stands at on a boundary the check samples.
pub fn reachable(image: &Arc<ProgramImage>, seed: u64, opts: &CheckOptions) -> Reach {
    let mut vm = Vm::new(image.clone(), VmConfig { seed, heap_cap: opts.heap_cap });
    let mut pcs = BTreeSet::new();
    let mut r = Reach::default();
    loop {
        if is_sampled(&vm, opts) {
            for t in vm.threads.iter().filter(|t| !t.exited) {
                let pc = t.pc as u32;
                pcs.insert(pc);
                let (Some(call), Some((func, entry))) = (t.calls.last(), image.entry_at(pc)) else { continue };
                let nz = r.nonzero.entry(pc).or_default();
                for k in candidate_locations(image, func) {
                    if loc_value(&vm, t, call.cfa, k) != 0 {
                        nz.insert(k);
                    }
                }
                for rec in entry {
                    if let Some(u) = rec.union_ctx {
                        let sel = loc_value(&vm, t, call.cfa, u.disc) == u.tag as u64;
                        if sel && loc_value(&vm, t, call.cfa, rec.kind) != 0 {
                            r.live_union.entry(pc).or_default().insert(*rec);
                        }
                    }
                }
            }
        }
        if vm.finished || vm.steps >= opts.max_steps || vm.step().is_err() {
            break;
        }
    }
    r.pcs = pcs.into_iter().collect();
    r
}

fn candidate_locations(img: &ProgramImage, func: u32) -> impl Iterator<Item = LocKind> {
    let frame = img.functions[func as usize].frame_size as i32;
    (0..15u8).map(LocKind::Reg).chain((0..frame / 8).map(|k| LocKind::Slot(-16 - 8 * k)))
}

fn free_locations(img: &ProgramImage, func: u32, entry: &[LocationRecord]) -> Vec<LocKind> {
    let taken: BTreeSet<LocKind> = entry.iter().map(|r| r.kind).collect();
    candidate_locations(img, func).filter(|k| !taken.contains(k)).collect()
}

/// Which mutants to draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Population {
    /// Any single-record change at a reached pc.
    All,
    /// Only changes outside allocator functions that touch a location
    /// holding a pointer (or, for an added record, any non-zero word) at
    /// some reached visit of the pc.
    Effective,
}

/// One random single-record mutation at a reached pc.
pub fn mutate(img: &ProgramImage, reach: &Reach, pop: Population, rng: &mut impl Rng) -> Option<(ProgramImage, Mutation)> {
    let pcs = &reach.pcs;
    let pointees: Vec<TypeId> = {
        let mut s: BTreeSet<TypeId> = img.locmaps.iter().flat_map(|m| m.entries.iter().flatten()).map(|r| r.pointee).collect();
        s.insert(INT);
        s.insert(BOOL);
        s.into_iter().collect()
    };
    for _ in 0..64 {
        let pc = *pcs.choose(rng)?;
        let Some((func, entry)) = img.entry_at(pc) else { continue };
        // The tracer never reads an allocator's own maps.
        if pop == Population::Effective && img.functions[func as usize].allocator {
            continue;
        }
        let entry = entry.clone();
        let mut free = free_locations(img, func, &entry);
        if pop == Population::Effective {
            free.retain(|k| reach.holds(pc, *k));
        }
        let effective: Vec<usize> = (0..entry.len()).filter(|&i| reach.effective(pc, &entry[i])).collect();
        let kinds: &[MutationKind] = if entry.is_empty() {
            &[MutationKind::Add]
        } else {
            &[MutationKind::Drop, MutationKind::Retype, MutationKind::Add, MutationKind::Move]
        };
        let kind = *kinds.choose(rng).unwrap();
        let idx = match pop {
            _ if entry.is_empty() => 0,
            Population::All => rng.gen_range(0..entry.len()),
            Population::Effective if kind == MutationKind::Add => 0,
            Population::Effective => match effective.choose(rng) {
                Some(&i) => i,
                None => continue,
            },
        };
        let (before, after) = match kind {
            MutationKind::Drop => (Some(entry[idx]), None),
            MutationKind::Retype => {
                let r = entry[idx];
                let others: Vec<TypeId> = pointees.iter().copied().filter(|t| *t != r.pointee).collect();
                let Some(&t) = others.choose(rng) else { continue };
                (Some(r), Some(LocationRecord { pointee: t, ..r }))
            }
            MutationKind::Add => {
                let Some(&k) = free.choose(rng) else { continue };
                let t = *pointees.choose(rng).unwrap();
                (None, Some(LocationRecord::plain(k, t)))
            }
            MutationKind::Move => {
                let Some(&k) = free.choose(rng) else { continue };
                let r = entry[idx];
                (Some(r), Some(LocationRecord { kind: k, ..r }))
            }
        };
        let mut e = entry;
        if let Some(b) = before {
            e.retain(|r| *r != b);
        }
        if let Some(a) = after {
            e.push(a);
        }
        e.sort();
        e.dedup();
        let mut out = img.clone();
        let map = &mut out.locmaps[func as usize];
        map.entries[(pc - map.start) as usize] = e;
        return Some((out, Mutation { kind, func, pc, before, after }));
    }
    None
}

#[derive(Clone, Debug)]
pub struct MutantOutcome {
    pub mutation: Mutation,
    pub caught: bool,
    /// The mutant's traces equal the original's at every sampled boundary.
    pub neutral: bool,
    pub verdict: String,
}

/// Does tracing with `mutant` give the same pointer locations (or the same
/// failure) as tracing with `image` at every sampled boundary?
pub fn traces_agree(image: &Arc<ProgramImage>, mutant: &ProgramImage, seed: u64, opts: &CheckOptions) -> bool {
    let mut vm = Vm::new(image.clone(), VmConfig { seed, heap_cap: opts.heap_cap });
    loop {
        if is_sampled(&vm, opts) {
            let a = tracer::trace_graph(&vm, image).map(|g| g.pointer_locations()).ok();
            let b = tracer::trace_graph(&vm, mutant).map(|g| g.pointer_locations()).ok();
            if a != b {
                return false;
            }
        }
        if vm.finished || vm.steps >= opts.max_steps || vm.step().is_err() {
            return true;
        }
    }
}

/// Runs `n` mutants of `image` through the differential check.
pub fn mutation_campaign(
    image: Arc<ProgramImage>,
    seed: u64,
    n: usize,
    pop: Population,
    rng: &mut impl Rng,
    opts: &CheckOptions,
) -> Vec<MutantOutcome> {
    let reach = reachable(&image, seed, opts);
    let stop = CheckOptions { stop_at_first: true, ..opts.clone() };
    let mut out = Vec::new();
    for _ in 0..n {
        let Some((mutant, mutation)) = mutate(&image, &reach, pop, rng) else { break };
        let v = differential_check_opts(image.clone(), &mutant, seed, &stop);
        let caught = !v.passed();
        let neutral = !caught && traces_agree(&image, &mutant, seed, opts);
        out.push(MutantOutcome { mutation, caught, neutral, verdict: v.to_string() });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegen::compile;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mutants_change_exactly_one_reachable_entry() {
        let img = Arc::new(
            compile("struct N { next: *N }\nfn main() { let a: *N = alloc(N); a.next = alloc(N); let b: *N = a.next; print(1); }")
                .unwrap(),
        );
        let opts = CheckOptions::default();
        let reach = reachable(&img, 0, &opts);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for i in 0..40 {
            let pop = if i % 2 == 0 { Population::All } else { Population::Effective };
            let (m, info) = mutate(&img, &reach, pop, &mut rng).unwrap();
            assert!(reach.pcs.contains(&info.pc));
            let changed: Vec<u32> = (0..img.code.len() as u32)
                .filter(|&pc| img.entry_at(pc).map(|e| e.1) != m.entry_at(pc).map(|e| e.1))
                .collect();
            assert_eq!(changed, vec![info.pc], "{info}");
        }
    }

    #[test]
    fn effective_mutants_are_caught_or_neutral() {
        let img = Arc::new(compile("fn main() { let p: *int = alloc(int); *p = 2; print(*p); print(*p); }").unwrap());
        let opts = CheckOptions::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let outs = mutation_campaign(img, 0, 30, Population::Effective, &mut rng, &opts);
        assert_eq!(outs.len(), 30);
        assert!(outs.iter().all(|o| o.caught || o.neutral), "{:?}", outs.iter().find(|o| !o.caught && !o.neutral));
        assert!(outs.iter().any(|o| o.caught && o.mutation.kind == MutationKind::Drop));
    }
}
