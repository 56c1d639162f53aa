//! Per-pc pointer locations from a forward "may hold a pointer" dataflow
//! over the final machine code of a function.
//!
//! Each register and tracked frame slot carries one of: not yet reached,
//! null, some non-pointer, a pointer to T, or a value inherited from the
//! caller (callee-saved registers before they are saved). The entry at pc
//! lists every location that may hold a pointer just before pc executes.
//! Joining a pointer with a non-pointer means a location is shared across
//! classes, which allocation rules out; it is reported as an internal error.

use std::collections::HashMap;

use crate::frontend::ir::Class;
use crate::image::{Entry, LocKind, LocationRecord, UnionCtx};
use crate::isa::{Instr, Reg, ARG_REGS, CALLEE_SAVED};
use crate::types::{TypeDesc, TypeId, TypeMap};

use super::select::MFunc;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PState {
    Bot,
    Null,
    NotPtr,
    Ptr(TypeId),
    Inherited,
    Conflict,
}

impl PState {
    pub fn join(self, other: PState) -> PState {
        use PState::*;
        match (self, other) {
            (Bot, x) | (x, Bot) => x,
            (a, b) if a == b => a,
            (Null, Ptr(t)) | (Ptr(t), Null) => Ptr(t),
            (Null, NotPtr) | (NotPtr, Null) => NotPtr,
            _ => Conflict,
        }
    }

    fn of_class(c: Option<Class>) -> PState {
        match c {
            Some(Class::Ptr(t)) => PState::Ptr(t),
            _ => PState::NotPtr,
        }
    }
}

const NREGS: usize = 15;

#[derive(Clone, PartialEq, Eq)]
struct State {
    regs: [PState; NREGS],
    slots: Vec<PState>,
}

impl State {
    fn join_from(&mut self, other: &State) -> bool {
        let mut changed = false;
        for (a, b) in self.regs.iter_mut().zip(&other.regs) {
            let j = a.join(*b);
            changed |= j != *a;
            *a = j;
        }
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            let j = a.join(*b);
            changed |= j != *a;
            *a = j;
        }
        changed
    }
}

pub struct PtrMapInput<'a> {
    pub mf: &'a MFunc,
    pub params: &'a [Class],
    /// Return class of each function by index; `None` for no return value.
    pub callee_ret: &'a [Option<Class>],
    pub union_locals: &'a [TypeId],
    pub types: &'a TypeMap,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapConflict {
    pub pc: usize,
    pub loc: LocKind,
}

/// Solves the dataflow and returns one canonical entry per pc.
pub fn solve(input: &PtrMapInput) -> Result<Vec<Entry>, MapConflict> {
    let mf = input.mf;
    let code = &mf.code;
    let n = code.len();
    let frame = &mf.frame;
    let nslots = frame.size as usize / 8;
    let spill_slots: Vec<i32> =
        (frame.spill_base as usize..nslots).map(|k| super::regalloc::slot_offset(k as u32)).collect();
    let slot_index: HashMap<i32, usize> = spill_slots.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let slot_of = |base: Reg, off: i32| -> Option<usize> {
        (base == Reg::FP).then(|| slot_index.get(&(off - 8)).copied()).flatten()
    };

    let mut entry = State { regs: [PState::NotPtr; NREGS], slots: vec![PState::Null; spill_slots.len()] };
    for r in CALLEE_SAVED {
        entry.regs[r.0 as usize] = PState::Inherited;
    }
    for (i, c) in input.params.iter().enumerate() {
        entry.regs[ARG_REGS[i].0 as usize] = PState::of_class(Some(*c));
    }

    let bot = State { regs: [PState::Bot; NREGS], slots: vec![PState::Bot; spill_slots.len()] };
    let mut ins: Vec<State> = vec![bot; n];
    if n > 0 {
        ins[0] = entry;
    }
    let mut work: Vec<usize> = vec![0];
    let mut queued = vec![false; n];
    if n > 0 {
        queued[0] = true;
    }
    while let Some(pc) = work.pop() {
        queued[pc] = false;
        let mut s = ins[pc].clone();
        transfer(&code[pc], mf.ann[pc], &mut s, &slot_of, input.callee_ret);
        for succ in successors(code, pc) {
            if ins[succ].join_from(&s) && !queued[succ] {
                queued[succ] = true;
                work.push(succ);
            }
        }
    }

    let mut union_records: Vec<LocationRecord> = Vec::new();
    for (i, ty) in input.union_locals.iter().enumerate() {
        let disc = frame.unions[i];
        if let TypeDesc::Union { variants, .. } = input.types.desc(*ty) {
            for v in variants {
                if let Some(p) = input.types.pointee(v.ty) {
                    union_records.push(LocationRecord {
                        kind: LocKind::Slot(disc + 8),
                        pointee: p,
                        union_ctx: Some(UnionCtx { disc: LocKind::Slot(disc), tag: v.tag }),
                    });
                }
            }
        }
    }

    let mut out = Vec::with_capacity(n);
    for (pc, s) in ins.iter().enumerate() {
        let mut e: Entry = Vec::new();
        for (r, st) in s.regs.iter().enumerate() {
            match st {
                PState::Ptr(t) => e.push(LocationRecord::plain(LocKind::Reg(r as u8), *t)),
                PState::Conflict => return Err(MapConflict { pc, loc: LocKind::Reg(r as u8) }),
                _ => {}
            }
        }
        for (k, st) in s.slots.iter().enumerate() {
            match st {
                PState::Ptr(t) => e.push(LocationRecord::plain(LocKind::Slot(spill_slots[k]), *t)),
                PState::Conflict => return Err(MapConflict { pc, loc: LocKind::Slot(spill_slots[k]) }),
                _ => {}
            }
        }
        let in_frame = matches!((mf.enter_pc, mf.leave_pc), (Some(a), Some(b)) if pc > a && pc <= b);
        if in_frame {
            e.extend(union_records.iter().copied());
        }
        e.sort();
        out.push(e);
    }
    Ok(out)
}

fn successors(code: &[Instr], pc: usize) -> Vec<usize> {
    let n = code.len();
    match code[pc] {
        Instr::Ret => vec![],
        Instr::Jmp { target } => vec![target as usize],
        Instr::Br { target, .. } | Instr::Brz { target, .. } => {
            let mut v = vec![target as usize];
            if pc + 1 < n {
                v.push(pc + 1);
            }
            v
        }
        _ if pc + 1 < n => vec![pc + 1],
        _ => vec![],
    }
}

fn transfer(
    i: &Instr,
    ann: Option<Class>,
    s: &mut State,
    slot_of: &dyn Fn(Reg, i32) -> Option<usize>,
    callee_ret: &[Option<Class>],
) {
    let set = |s: &mut State, r: Reg, v: PState| {
        if (r.0 as usize) < NREGS {
            s.regs[r.0 as usize] = v;
        }
    };
    let get = |s: &State, r: Reg| s.regs.get(r.0 as usize).copied().unwrap_or(PState::NotPtr);
    match *i {
        Instr::Li { rd, .. } | Instr::Bin { rd, .. } | Instr::Un { rd, .. } | Instr::Rand { rd } => {
            set(s, rd, PState::NotPtr)
        }
        Instr::Clr { rd } => set(s, rd, PState::Null),
        Instr::Mov { rd, rs } => {
            let v = get(s, rs);
            set(s, rd, v)
        }
        Instr::Pass { rd, rs } => {
            let v = get(s, rs);
            set(s, rs, PState::Null);
            set(s, rd, v);
        }
        Instr::PassM { rd, base, off } => match slot_of(base, off) {
            Some(k) => {
                let v = s.slots[k];
                s.slots[k] = PState::Null;
                set(s, rd, v);
            }
            None => set(s, rd, PState::of_class(ann)),
        },
        Instr::Ld { rd, base, off } => match slot_of(base, off) {
            Some(k) => {
                let v = s.slots[k];
                set(s, rd, v)
            }
            None => set(s, rd, PState::of_class(ann)),
        },
        Instr::St { base, off, rs } => {
            if let Some(k) = slot_of(base, off) {
                s.slots[k] = get(s, rs);
            }
        }
        Instr::StTag { .. } | Instr::Print { .. } | Instr::Jmp { .. } | Instr::Br { .. } | Instr::Brz { .. } => {}
        Instr::Lea { rd, pointee, .. } | Instr::AddP { rd, pointee, .. } | Instr::IdxP { rd, pointee, .. } => {
            set(s, rd, PState::Ptr(pointee))
        }
        Instr::Alloc { rd, ty } | Instr::AllocArr { rd, ty, .. } => set(s, rd, PState::Ptr(ty)),
        Instr::Free { rs } => set(s, rs, PState::Null),
        Instr::Call { func } => {
            for r in (0..8).chain(12..15) {
                s.regs[r] = PState::NotPtr;
            }
            s.regs[0] = match callee_ret.get(func as usize).copied().flatten() {
                Some(c) => PState::of_class(Some(c)),
                None => PState::Null,
            };
        }
        Instr::Spawn { .. } => {}
        Instr::Enter { .. } | Instr::Leave => {
            for v in &mut s.slots {
                *v = PState::Null;
            }
        }
        Instr::Save { rs, .. } => set(s, rs, PState::Null),
        Instr::Restore { rd, .. } => set(s, rd, PState::Inherited),
        Instr::Ret => {}
    }
}

#[cfg(test)]
mod tests {
    use super::PState::*;

    #[test]
    fn join_lattice() {
        assert_eq!(Bot.join(Null), Null);
        assert_eq!(Null.join(Ptr(crate::types::INT)), Ptr(crate::types::INT));
        assert_eq!(NotPtr.join(Null), NotPtr);
        assert_eq!(NotPtr.join(Ptr(crate::types::INT)), Conflict);
        assert_eq!(Ptr(crate::types::INT).join(Ptr(crate::types::BOOL)), Conflict);
    }
}
