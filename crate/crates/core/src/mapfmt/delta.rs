//! Merged, delta-encoded location maps.
//!
//! A function's map is a list of records. Each record applies at
//! `previous pc + pc_delta`. RESET replaces the whole set, ADD inserts one
//! record and REMOVE drops one by key. Runs of pcs with the same set need
//! no records at all. A RESET is forced every [`RESET_INTERVAL`] changes so
//! random access only replays a bounded tail.

use crate::image::{Entry, LocKind, LocationMap, LocationRecord};

pub const RESET_INTERVAL: usize = 16;

pub type LocKey = (LocKind, Option<u32>);

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DeltaOp {
    Reset(Entry),
    Add(LocationRecord),
    Remove(LocKey),
}

impl DeltaOp {
    pub fn code(&self) -> u8 {
        match self {
            DeltaOp::Reset(_) => 0,
            DeltaOp::Add(_) => 1,
            DeltaOp::Remove(_) => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeltaRecord {
    pub pc_delta: u32,
    pub op: DeltaOp,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompressedLocMap {
    pub func: u32,
    pub start: u32,
    pub len: u32,
    pub records: Vec<DeltaRecord>,
}

impl CompressedLocMap {
    pub fn compress(m: &LocationMap) -> CompressedLocMap {
        let mut records = Vec::new();
        let mut last_pc = 0u32;
        let mut prev: Option<&Entry> = None;
        let mut since_reset = 0usize;
        for (i, e) in m.entries.iter().enumerate() {
            if prev == Some(e) {
                continue;
            }
            let i = i as u32;
            let delta = prev.map(|p| diff(p, e));
            let reset_cost = super::record_list_size(e);
            let use_delta = match &delta {
                Some(ops) if since_reset + ops.len() <= RESET_INTERVAL => {
                    ops.iter().map(super::op_size).sum::<usize>() + 2 * (ops.len() - 1) < reset_cost
                }
                _ => false,
            };
            if use_delta {
                let ops = delta.unwrap();
                since_reset += ops.len();
                for (k, op) in ops.into_iter().enumerate() {
                    records.push(DeltaRecord { pc_delta: if k == 0 { i - last_pc } else { 0 }, op });
                }
            } else {
                since_reset = 0;
                records.push(DeltaRecord { pc_delta: i - last_pc, op: DeltaOp::Reset(e.clone()) });
            }
            last_pc = i;
            prev = Some(e);
        }
        CompressedLocMap { func: m.func, start: m.start, len: m.entries.len() as u32, records }
    }

    pub fn expand(&self) -> LocationMap {
        let mut entries = Vec::with_capacity(self.len as usize);
        let mut cur: Entry = Vec::new();
        let mut pc = 0u32;
        let mut it = self.records.iter().peekable();
        for i in 0..self.len {
            while let Some(r) = it.peek() {
                if pc + r.pc_delta != i {
                    break;
                }
                pc += r.pc_delta;
                apply(&mut cur, &r.op);
                it.next();
            }
            entries.push(cur.clone());
        }
        LocationMap { func: self.func, start: self.start, entries }
    }

    /// Entry at absolute `pc`, replaying from the nearest RESET at or before it.
    pub fn locations_at(&self, pc: u32) -> Option<Entry> {
        let rel = pc.checked_sub(self.start).filter(|r| *r < self.len)?;
        let mut abs = Vec::with_capacity(self.records.len());
        let mut p = 0u32;
        for r in &self.records {
            p += r.pc_delta;
            abs.push(p);
        }
        let upto = abs.partition_point(|&p| p <= rel);
        let from = (0..upto).rev().find(|&k| matches!(self.records[k].op, DeltaOp::Reset(_)))?;
        let mut cur = Vec::new();
        for r in &self.records[from..upto] {
            apply(&mut cur, &r.op);
        }
        Some(cur)
    }
}

fn diff(a: &Entry, b: &Entry) -> Vec<DeltaOp> {
    let mut ops = Vec::new();
    for r in a {
        if !b.contains(r) {
            ops.push(DeltaOp::Remove(r.key()));
        }
    }
    for r in b {
        if !a.contains(r) {
            ops.push(DeltaOp::Add(*r));
        }
    }
    ops
}

fn apply(cur: &mut Entry, op: &DeltaOp) {
    match op {
        DeltaOp::Reset(e) => *cur = e.clone(),
        DeltaOp::Add(r) => {
            let at = cur.partition_point(|x| x < r);
            cur.insert(at, *r);
        }
        DeltaOp::Remove(k) => cur.retain(|x| x.key() != *k),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::TypeId;

    fn rec(r: u8) -> LocationRecord {
        LocationRecord::plain(LocKind::Reg(r), TypeId(3))
    }

    #[test]
    fn identical_run_is_one_reset() {
        let m = LocationMap { func: 0, start: 5, entries: vec![vec![rec(4)]; 10] };
        let c = CompressedLocMap::compress(&m);
        assert_eq!(c.records.len(), 1);
        assert!(matches!(c.records[0].op, DeltaOp::Reset(_)));
        assert_eq!(c.expand(), m);
    }

    #[test]
    fn random_access_matches_expansion() {
        let mut entries = Vec::new();
        let mut cur: Entry = Vec::new();
        for i in 0..200u32 {
            if i % 3 == 0 {
                let r = rec((i % 11) as u8);
                if let Some(p) = cur.iter().position(|x| *x == r) {
                    cur.remove(p);
                } else {
                    cur.push(r);
                    cur.sort();
                }
            }
            entries.push(cur.clone());
        }
        let m = LocationMap { func: 2, start: 100, entries };
        let c = CompressedLocMap::compress(&m);
        assert_eq!(c.expand(), m);
        for pc in 100..300 {
            assert_eq!(c.locations_at(pc).as_ref(), m.at(pc), "pc {pc}");
        }
        assert!(c.locations_at(300).is_none());
        assert!(c.locations_at(99).is_none());
    }
}
