//! Instruction selection: IR plus an allocation to machine code.
//!
//! Besides translating, selection inserts the clears that keep every
//! location either holding a live pointer or null: pointer scratch
//! registers at the end of each IR instruction, dead pointer vregs where
//! they die (including along control-flow edges), dying caller-saved
//! arguments before a call, and pointer-class caller-saved homes after it.

use std::collections::HashMap;

use fixedbitset::FixedBitSet;

use super::liveness::{Cfg, Liveness};
use super::regalloc::{Allocation, Frame, Loc};
use crate::frontend::ir::{Class, Inst, IrFunction, Label, UnionPlace, VReg};
use crate::isa::{Instr, Reg, ARG_REGS, SCRATCH_REGS};

const S0: Reg = SCRATCH_REGS[0];
const S1: Reg = SCRATCH_REGS[1];
const S2: Reg = SCRATCH_REGS[2];

/// Machine code for one function. Branch targets are function-relative.
pub struct MFunc {
    pub code: Vec<Instr>,
    /// Class of the value a memory load produces (for loads not from a
    /// tracked frame slot). Used by the pointer-map dataflow.
    pub ann: Vec<Option<Class>>,
    pub frame: Frame,
    pub enter_pc: Option<usize>,
    pub leave_pc: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum MLoc {
    Reg(Reg),
    /// CFA offset.
    Slot(i32),
}

fn fp_off(cfa: i32) -> i32 {
    cfa + 8
}

struct Sel<'a> {
    f: &'a IrFunction,
    alloc: &'a Allocation,
    frame: &'a Frame,
    code: Vec<Instr>,
    ann: Vec<Option<Class>>,
    labels: HashMap<Label, usize>,
    fixups: Vec<(usize, Label)>,
    epilogue_fixups: Vec<usize>,
    ptr_scratch: Vec<Reg>,
}

impl<'a> Sel<'a> {
    fn push(&mut self, i: Instr) {
        self.code.push(i);
        self.ann.push(None);
    }

    fn push_ann(&mut self, i: Instr, c: Class) {
        self.code.push(i);
        self.ann.push(Some(c));
    }

    fn class(&self, v: VReg) -> Class {
        self.f.class(v)
    }

    fn loc(&self, v: VReg) -> Option<MLoc> {
        self.alloc.locs[v.0 as usize].map(|l| match l {
            Loc::Reg(r) => MLoc::Reg(r),
            Loc::Spill(s) => MLoc::Slot(self.frame.spill_offset(s)),
        })
    }

    fn mark_scratch(&mut self, r: Reg, c: Class) {
        if c.is_ptr() && SCRATCH_REGS.contains(&r) && !self.ptr_scratch.contains(&r) {
            self.ptr_scratch.push(r);
        }
    }

    fn read(&mut self, v: VReg, scratch: Reg) -> Reg {
        let c = self.class(v);
        match self.loc(v) {
            Some(MLoc::Reg(r)) => r,
            Some(MLoc::Slot(s)) => {
                self.push_ann(Instr::Ld { rd: scratch, base: Reg::FP, off: fp_off(s) }, c);
                self.mark_scratch(scratch, c);
                scratch
            }
            // Never-live values are only read by dead code paths; any zero will do.
            None => {
                self.push(Instr::Clr { rd: scratch });
                scratch
            }
        }
    }

    fn dst_reg(&mut self, v: VReg, scratch: Reg) -> Reg {
        match self.loc(v) {
            Some(MLoc::Reg(r)) => r,
            _ => scratch,
        }
    }

    fn finish_def(&mut self, v: VReg, r: Reg) {
        let c = self.class(v);
        match self.loc(v) {
            Some(MLoc::Reg(d)) if d != r => self.push(Instr::Mov { rd: d, rs: r }),
            Some(MLoc::Slot(s)) => self.push(Instr::St { base: Reg::FP, off: fp_off(s), rs: r }),
            _ => {}
        }
        self.mark_scratch(r, c);
    }

    fn clear(&mut self, loc: MLoc) {
        match loc {
            MLoc::Reg(r) => self.push(Instr::Clr { rd: r }),
            MLoc::Slot(s) => {
                self.push(Instr::Clr { rd: S0 });
                self.push(Instr::St { base: Reg::FP, off: fp_off(s), rs: S0 });
            }
        }
    }

    fn clear_scratch(&mut self) {
        for r in std::mem::take(&mut self.ptr_scratch) {
            self.push(Instr::Clr { rd: r });
        }
    }

    fn place(&mut self, p: UnionPlace, scratch: Reg) -> (Reg, i32) {
        match p {
            UnionPlace::Local(i) => (Reg::FP, fp_off(self.frame.unions[i as usize])),
            UnionPlace::Mem { base, off } => (self.read(base, scratch), off as i32),
        }
    }

    fn load_args(&mut self, args: &[Option<VReg>; 4]) -> u8 {
        let mut n = 0;
        for (i, a) in args.iter().enumerate() {
            let Some(a) = a else { break };
            let r = ARG_REGS[i];
            match self.loc(*a) {
                Some(MLoc::Reg(x)) => self.push(Instr::Mov { rd: r, rs: x }),
                Some(MLoc::Slot(s)) => {
                    let c = self.class(*a);
                    self.push_ann(Instr::Ld { rd: r, base: Reg::FP, off: fp_off(s) }, c)
                }
                None => self.push(Instr::Clr { rd: r }),
            }
            n += 1;
        }
        n
    }

    fn prologue(&mut self) -> Option<usize> {
        let mut enter = None;
        if self.frame.framed() {
            enter = Some(self.code.len());
            self.push(Instr::Enter { size: self.frame.size });
        }
        for &(r, off) in &self.frame.saves.clone() {
            self.push(Instr::Save { rs: r, off });
        }
        for r in self.alloc.ptr_class_homes() {
            self.push(Instr::Clr { rd: r });
        }
        for (i, &p) in self.f.params.clone().iter().enumerate() {
            let arg = ARG_REGS[i];
            let ptr = self.class(p).is_ptr();
            match self.loc(p) {
                Some(MLoc::Reg(r)) if ptr => self.push(Instr::Pass { rd: r, rs: arg }),
                Some(MLoc::Reg(r)) => self.push(Instr::Mov { rd: r, rs: arg }),
                Some(MLoc::Slot(s)) => {
                    self.push(Instr::St { base: Reg::FP, off: fp_off(s), rs: arg });
                    if ptr {
                        self.push(Instr::Clr { rd: arg });
                    }
                }
                None if ptr => self.push(Instr::Clr { rd: arg }),
                None => {}
            }
        }
        enter
    }

    fn epilogue(&mut self) -> Option<usize> {
        for &(r, off) in self.frame.saves.clone().iter().rev() {
            self.push(Instr::Restore { rd: r, off });
        }
        let mut leave = None;
        if self.frame.framed() {
            leave = Some(self.code.len());
            self.push(Instr::Leave);
        }
        self.push(Instr::Ret);
        leave
    }

    fn edge_clears(&mut self, i: usize, cfg: &Cfg, live: &Liveness) {
        let mut dying = FixedBitSet::with_capacity(self.f.vregs.len());
        for &p in &cfg.preds[i] {
            let mut d = live.live_out[p].clone();
            d.difference_with(&live.live_in[i]);
            dying.union_with(&d);
        }
        for v in dying.ones() {
            let v = VReg(v as u32);
            if self.class(v).is_ptr() {
                if let Some(l) = self.loc(v) {
                    self.clear(l);
                }
            }
        }
    }

    fn death_clears(&mut self, i: usize, inst: &Inst, live: &Liveness) {
        let mut done: Vec<VReg> = match *inst {
            Inst::Pass { src, .. } | Inst::Free { src } => vec![src],
            _ => vec![],
        };
        for v in inst.uses().into_iter().chain(inst.defs()) {
            if done.contains(&v) || !self.class(v).is_ptr() || live.is_live_out(i, v.0) {
                continue;
            }
            done.push(v);
            if let Some(l) = self.loc(v) {
                self.clear(l);
            }
        }
    }

    fn inst(&mut self, i: usize, inst: &Inst, live: &Liveness) {
        match *inst {
            Inst::Const { dst, value } => {
                let d = self.dst_reg(dst, S0);
                self.push(Instr::Li { rd: d, imm: value });
                self.finish_def(dst, d);
            }
            Inst::Null { dst } => {
                let d = self.dst_reg(dst, S0);
                self.push(Instr::Clr { rd: d });
                self.finish_def(dst, d);
                self.ptr_scratch.retain(|r| *r != S0);
            }
            Inst::Copy { dst, src } => {
                if self.loc(dst) == self.loc(src) {
                    return;
                }
                let s = self.read(src, S0);
                self.finish_def(dst, s);
            }
            Inst::Pass { dst, src } => match (self.loc(dst), self.loc(src)) {
                (Some(MLoc::Reg(rd)), Some(MLoc::Reg(rs))) => self.push(Instr::Pass { rd, rs }),
                (Some(MLoc::Reg(rd)), Some(MLoc::Slot(s))) => {
                    let c = self.class(dst);
                    self.push_ann(Instr::PassM { rd, base: Reg::FP, off: fp_off(s) }, c);
                }
                (d, Some(MLoc::Reg(rs))) => {
                    self.push(Instr::Pass { rd: S0, rs });
                    self.mark_scratch(S0, self.class(src));
                    if let Some(MLoc::Slot(s)) = d {
                        self.push(Instr::St { base: Reg::FP, off: fp_off(s), rs: S0 });
                    }
                }
                (d, Some(MLoc::Slot(s))) => {
                    let c = self.class(src);
                    self.push_ann(Instr::PassM { rd: S0, base: Reg::FP, off: fp_off(s) }, c);
                    self.mark_scratch(S0, c);
                    match d {
                        Some(MLoc::Slot(t)) => self.push(Instr::St { base: Reg::FP, off: fp_off(t), rs: S0 }),
                        Some(MLoc::Reg(rd)) => self.push(Instr::Mov { rd, rs: S0 }),
                        None => {}
                    }
                }
                (Some(MLoc::Reg(rd)), None) => self.push(Instr::Clr { rd }),
                (_, None) => {}
            },
            Inst::PassMem { dst, base, off } => {
                let b = self.read(base, S0);
                let d = self.dst_reg(dst, S1);
                self.push_ann(Instr::PassM { rd: d, base: b, off: off as i32 }, self.class(dst));
                self.finish_def(dst, d);
            }
            Inst::Bin { op, dst, a, b } => {
                let ra = self.read(a, S0);
                let rb = self.read(b, S1);
                let d = self.dst_reg(dst, S2);
                self.push(Instr::Bin { op, rd: d, ra, rb });
                self.finish_def(dst, d);
            }
            Inst::Un { op, dst, src } => {
                let s = self.read(src, S0);
                let d = self.dst_reg(dst, S1);
                self.push(Instr::Un { op, rd: d, rs: s });
                self.finish_def(dst, d);
            }
            Inst::Load { dst, base, off } => {
                let b = self.read(base, S0);
                let d = self.dst_reg(dst, S1);
                self.push_ann(Instr::Ld { rd: d, base: b, off: off as i32 }, self.class(dst));
                self.finish_def(dst, d);
            }
            Inst::Store { base, off, src } => {
                let b = self.read(base, S0);
                let s = self.read(src, S1);
                self.push(Instr::St { base: b, off: off as i32, rs: s });
            }
            Inst::StaticAddr { dst, off, pointee } => {
                let d = self.dst_reg(dst, S0);
                self.push(Instr::Lea { rd: d, off, pointee });
                self.finish_def(dst, d);
            }
            Inst::FieldAddr { dst, base, off, pointee } => {
                let b = self.read(base, S0);
                let d = self.dst_reg(dst, S1);
                self.push(Instr::AddP { rd: d, rs: b, off, pointee });
                self.finish_def(dst, d);
            }
            Inst::IndexAddr { dst, base, idx, elem_size, len, pointee } => {
                let b = self.read(base, S0);
                let x = self.read(idx, S1);
                let d = self.dst_reg(dst, S2);
                self.push(Instr::IdxP { rd: d, base: b, idx: x, elem_size, len, pointee });
                self.finish_def(dst, d);
            }
            Inst::Alloc { dst, ty } => {
                let d = self.dst_reg(dst, S0);
                self.push(Instr::Alloc { rd: d, ty });
                self.finish_def(dst, d);
            }
            Inst::AllocArray { dst, ty, count, elem_size } => {
                let c = self.read(count, S0);
                let d = self.dst_reg(dst, S1);
                self.push(Instr::AllocArr { rd: d, ty, count: c, elem_size });
                self.finish_def(dst, d);
            }
            Inst::Free { src } => match self.loc(src) {
                Some(MLoc::Reg(r)) => self.push(Instr::Free { rs: r }),
                Some(MLoc::Slot(s)) => {
                    self.push_ann(Instr::PassM { rd: S0, base: Reg::FP, off: fp_off(s) }, self.class(src));
                    self.push(Instr::Free { rs: S0 });
                }
                None => {}
            },
            Inst::Print { src } => {
                let s = self.read(src, S0);
                self.push(Instr::Print { rs: s });
            }
            Inst::Rand { dst } => {
                let d = self.dst_reg(dst, S0);
                self.push(Instr::Rand { rd: d });
                self.finish_def(dst, d);
            }
            Inst::Call { dst, func, args } => {
                self.load_args(&args);
                for a in args.iter().flatten() {
                    if self.class(*a).is_ptr() && !live.is_live_out(i, a.0) {
                        if let Some(MLoc::Reg(r)) = self.loc(*a) {
                            if r.is_caller_saved() {
                                self.push(Instr::Clr { rd: r });
                            }
                        }
                    }
                }
                self.push(Instr::Call { func });
                for r in self.alloc.ptr_class_homes() {
                    self.push(Instr::Clr { rd: r });
                }
                if let Some(d) = dst {
                    let ptr = self.class(d).is_ptr();
                    match self.loc(d) {
                        Some(MLoc::Reg(r)) if ptr => self.push(Instr::Pass { rd: r, rs: ARG_REGS[0] }),
                        Some(MLoc::Reg(r)) => self.push(Instr::Mov { rd: r, rs: ARG_REGS[0] }),
                        Some(MLoc::Slot(s)) => {
                            self.push(Instr::St { base: Reg::FP, off: fp_off(s), rs: ARG_REGS[0] });
                            if ptr {
                                self.push(Instr::Clr { rd: ARG_REGS[0] });
                            }
                        }
                        None if ptr => self.push(Instr::Clr { rd: ARG_REGS[0] }),
                        None => {}
                    }
                }
            }
            Inst::Spawn { func, args } => {
                let n = self.load_args(&args);
                self.push(Instr::Spawn { func, nargs: n });
                for (k, a) in args.iter().flatten().enumerate() {
                    if self.class(*a).is_ptr() {
                        self.push(Instr::Clr { rd: ARG_REGS[k] });
                    }
                }
            }
            Inst::Ret { src } => {
                match src {
                    Some(v) => match self.loc(v) {
                        Some(MLoc::Reg(r)) => self.push(Instr::Mov { rd: ARG_REGS[0], rs: r }),
                        Some(MLoc::Slot(s)) => {
                            let c = self.class(v);
                            self.push_ann(Instr::Ld { rd: ARG_REGS[0], base: Reg::FP, off: fp_off(s) }, c)
                        }
                        None => self.push(Instr::Clr { rd: ARG_REGS[0] }),
                    },
                    None => self.push(Instr::Clr { rd: ARG_REGS[0] }),
                }
            }
            Inst::Label(l) => {
                self.labels.insert(l, self.code.len());
            }
            Inst::Jmp(_) => {}
            Inst::Br { cond, target } => {
                let c = self.read(cond, S0);
                self.fixups.push((self.code.len(), target));
                self.push(Instr::Br { rs: c, target: 0 });
            }
            Inst::Brz { cond, target } => {
                let c = self.read(cond, S0);
                self.fixups.push((self.code.len(), target));
                self.push(Instr::Brz { rs: c, target: 0 });
            }
            Inst::UnionZero { place } => {
                let (b, o) = self.place(place, S0);
                self.push(Instr::Clr { rd: S1 });
                self.push(Instr::St { base: b, off: o + 8, rs: S1 });
            }
            Inst::UnionTag { place, tag, class } => {
                let (b, o) = self.place(place, S0);
                self.push(Instr::StTag { base: b, off: o, tag, class });
            }
            Inst::UnionData { place, src } => {
                let (b, o) = self.place(place, S0);
                let s = self.read(src, S1);
                self.push(Instr::St { base: b, off: o + 8, rs: s });
            }
            Inst::UnionTagLoad { dst, place } => {
                let (b, o) = self.place(place, S0);
                let d = self.dst_reg(dst, S1);
                self.push_ann(Instr::Ld { rd: d, base: b, off: o }, Class::Scalar);
                self.finish_def(dst, d);
            }
            Inst::UnionDataLoad { dst, place } => {
                let (b, o) = self.place(place, S0);
                let d = self.dst_reg(dst, S1);
                self.push_ann(Instr::Ld { rd: d, base: b, off: o + 8 }, self.class(dst));
                self.finish_def(dst, d);
            }
            Inst::UnionStore { .. } => unreachable!("union stores are lowered before selection"),
        }
    }
}

pub fn select(f: &IrFunction, alloc: &Allocation, frame: &Frame, cfg: &Cfg, live: &Liveness) -> MFunc {
    let mut s = Sel {
        f,
        alloc,
        frame,
        code: Vec::new(),
        ann: Vec::new(),
        labels: HashMap::new(),
        fixups: Vec::new(),
        epilogue_fixups: Vec::new(),
        ptr_scratch: Vec::new(),
    };
    let enter_pc = s.prologue();
    let n = f.body.len();
    for (i, inst) in f.body.iter().enumerate() {
        if let Inst::Label(_) = inst {
            s.inst(i, inst, live);
            s.edge_clears(i, cfg, live);
            continue;
        }
        s.edge_clears(i, cfg, live);
        s.inst(i, inst, live);
        s.clear_scratch();
        s.death_clears(i, inst, live);
        match inst {
            Inst::Jmp(l) => {
                s.fixups.push((s.code.len(), *l));
                s.push(Instr::Jmp { target: 0 });
            }
            Inst::Ret { .. } if i + 1 < n => {
                s.epilogue_fixups.push(s.code.len());
                s.push(Instr::Jmp { target: 0 });
            }
            _ => {}
        }
    }
    let epilogue = s.code.len() as u32;
    let leave_pc = s.epilogue();
    for (pc, l) in std::mem::take(&mut s.fixups) {
        let t = s.labels[&l] as u32;
        set_target(&mut s.code[pc], t);
    }
    for pc in std::mem::take(&mut s.epilogue_fixups) {
        set_target(&mut s.code[pc], epilogue);
    }
    MFunc { code: s.code, ann: s.ann, frame: frame.clone(), enter_pc, leave_pc }
}

fn set_target(i: &mut Instr, t: u32) {
    match i {
        Instr::Jmp { target } | Instr::Br { target, .. } | Instr::Brz { target, .. } => *target = t,
        _ => unreachable!(),
    }
}

/// Shifts function-relative branch targets to absolute pcs.
pub fn relocate(code: &mut [Instr], base: u32) {
    for i in code {
        if let Instr::Jmp { target } | Instr::Br { target, .. } | Instr::Brz { target, .. } = i {
            *target += base;
        }
    }
}
