//! Deterministic interpreter for compiled images.
//!
//! Every register and memory word carries a shadow [`Tag`] next to its
//! value. Tags follow instruction semantics only (loads copy, address
//! arithmetic makes pointers, arithmetic makes scalars) and serve as the
//! ground truth the tracer is checked against. Instructions either complete
//! or trap with no visible effect, so a trapped instruction can be retried.

pub mod memory;
pub mod shadow;
pub mod snapshot;

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::image::ProgramImage;
use crate::types::TypeId;
use crate::isa::{
    self, sentinel, stack_top, BinOp, IndexLen, Instr, Reg, UnOp, VariantClass, EXIT_PC, NUM_GPRS, STACK_SIZE,
    STATIC_BASE,
};

pub use memory::{Chunk, Heap, Tag, Word};
pub use shadow::{audit_r2, shadow_pointer_set, R2Violation, ShadowPointer, ShadowSet, ShadowLoc};
pub use snapshot::{MachineView, Segment, Snapshot, ThreadRegs};

/// Upper bound (exclusive) of `rand()`.
pub const RAND_RANGE: i64 = 100;
pub const MAX_QUANTUM: u32 = 8;
pub const DEFAULT_HEAP_CAP: u64 = 16 << 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Trap {
    #[error("sentinel dereference: chunk {chunk} offset {offset}")]
    Sentinel { chunk: u32, offset: u32 },
    #[error("fault at {addr:#x}: {reason}")]
    Fault { addr: u64, reason: &'static str },
    #[error("illegal pc {0:#x}")]
    IllegalOpcode(u64),
    #[error("division by zero")]
    DivZero,
    #[error("index {index} out of bounds for length {len}")]
    Bounds { index: i64, len: u64 },
    #[error("out of heap memory allocating {size} bytes")]
    OutOfMemory { size: u64 },
    #[error("stack overflow in thread {0}")]
    StackOverflow(u32),
    #[error("step limit reached")]
    StepLimit,
}

#[derive(Clone, Copy, Debug)]
pub struct VmConfig {
    pub seed: u64,
    pub heap_cap: u64,
}

impl Default for VmConfig {
    fn default() -> Self {
        VmConfig { seed: 0, heap_cap: DEFAULT_HEAP_CAP }
    }
}

/// One active call, kept for introspection by tests and oracles. The
/// tracer recovers the same information from unwind rows instead.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CallRecord {
    pub func: u32,
    /// sp at function entry; the return address sits here.
    pub cfa: u64,
}

#[derive(Clone, Debug)]
pub struct Thread {
    pub id: u32,
    pub regs: [Word; NUM_GPRS],
    pub sp: u64,
    pub pc: u64,
    /// Word i lives at `stack_top(id) - 8 * (i + 1)`.
    stack: Vec<Word>,
    pub exited: bool,
    pub calls: Vec<CallRecord>,
}

impl Thread {
    fn new(id: u32) -> Thread {
        let mut regs = [Word::ZERO; NUM_GPRS];
        regs[Reg::FP.0 as usize] = Word::ZERO;
        Thread { id, regs, sp: stack_top(id), pc: 0, stack: Vec::new(), exited: false, calls: Vec::new() }
    }

    fn slot(&self, addr: u64) -> Option<usize> {
        let top = stack_top(self.id);
        if !addr.is_multiple_of(8) || addr >= top || addr < top - STACK_SIZE {
            return None;
        }
        Some(((top - addr) / 8 - 1) as usize)
    }

    pub fn stack_word(&self, addr: u64) -> Option<Word> {
        let i = self.slot(addr)?;
        Some(self.stack.get(i).copied().unwrap_or_default())
    }

    fn stack_word_mut(&mut self, addr: u64) -> Option<&mut Word> {
        let i = self.slot(addr)?;
        if self.stack.len() <= i {
            self.stack.resize(i + 1, Word::default());
        }
        Some(&mut self.stack[i])
    }

    pub fn reg(&self, r: Reg) -> Word {
        self.regs[r.0 as usize]
    }

    fn set(&mut self, r: Reg, w: Word) {
        self.regs[r.0 as usize] = w;
    }

    /// Register file as the debug protocol exposes it: r0..r15, sp, pc.
    pub fn exposed_regs(&self) -> [u64; isa::NUM_EXPOSED_REGS] {
        let mut out = [0u64; isa::NUM_EXPOSED_REGS];
        for (o, w) in out.iter_mut().zip(&self.regs) {
            *o = w.v;
        }
        out[isa::REG_SP as usize] = self.sp;
        out[isa::REG_PC as usize] = self.pc;
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepEvent {
    Ran,
    ThreadExited(u32),
    Finished,
}

#[derive(Clone, Debug)]
pub struct Vm {
    pub image: Arc<ProgramImage>,
    pub image_hash: [u8; 32],
    pub threads: Vec<Thread>,
    pub statics: Vec<Word>,
    pub heap: Heap,
    rng: ChaCha8Rng,
    sched: ChaCha8Rng,
    current: usize,
    quantum: u32,
    pub output: Vec<i64>,
    pub steps: u64,
    pub finished: bool,
    /// Shadow tags of chunks moved off the machine, by chunk id. They come
    /// back with the bytes so the oracle keeps ground truth across a swap.
    evicted: HashMap<u32, Vec<Tag>>,
}

pub fn image_hash(img: &ProgramImage) -> [u8; 32] {
    Sha256::digest(crate::mapfmt::encode(img)).into()
}

impl Vm {
    pub fn new(image: Arc<ProgramImage>, cfg: VmConfig) -> Vm {
        let hash = image_hash(&image);
        Vm::with_hash(image, hash, cfg)
    }

    pub fn with_hash(image: Arc<ProgramImage>, image_hash: [u8; 32], cfg: VmConfig) -> Vm {
        let statics = image
            .static_data
            .chunks(8)
            .map(|c| {
                let mut b = [0u8; 8];
                b[..c.len()].copy_from_slice(c);
                Word::scalar(u64::from_le_bytes(b))
            })
            .collect::<Vec<_>>();
        let mut statics = statics;
        for r in &image.static_map {
            if let crate::image::LocKind::Static(off) = r.kind {
                // Pointer globals start out null but already typed.
                if r.union_ctx.is_none() {
                    statics[off as usize / 8].t = Tag::Ptr(r.pointee);
                }
            }
        }
        let mut main = Thread::new(0);
        let finished = image.functions.is_empty();
        if !finished {
            let f = &image.functions[image.entry as usize];
            main.pc = f.start as u64;
            main.sp -= 8;
            *main.stack_word_mut(main.sp).unwrap() = Word::scalar(EXIT_PC);
            main.calls.push(CallRecord { func: image.entry, cfa: main.sp });
        }
        let mut sched = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed5c_4ed0_u64);
        let quantum = sched.gen_range(1..=MAX_QUANTUM);
        Vm {
            image,
            image_hash,
            threads: vec![main],
            statics,
            heap: Heap::new(cfg.heap_cap),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            sched,
            current: 0,
            quantum,
            output: Vec::new(),
            steps: 0,
            finished,
            evicted: HashMap::new(),
        }
    }

    pub fn current_thread(&self) -> u32 {
        self.threads[self.current].id
    }

    pub fn thread(&self, t: u32) -> Option<&Thread> {
        self.threads.get(t as usize).filter(|t| !t.exited)
    }

    pub fn thread_mut(&mut self, t: u32) -> Option<&mut Thread> {
        self.threads.get_mut(t as usize).filter(|t| !t.exited)
    }

    /// Instruction the current thread will execute next.
    pub fn next_instr(&self) -> Option<(u32, Instr)> {
        if self.finished {
            return None;
        }
        let pc = self.threads[self.current].pc;
        self.image.code.get(pc as usize).map(|i| (pc as u32, *i))
    }

    pub fn output_text(&self) -> String {
        self.output.iter().map(|v| format!("{v}\n")).collect()
    }

    // ---- memory ----

    fn word(&self, addr: u64) -> Result<Word, Trap> {
        if let Some((chunk, offset)) = sentinel::decode(addr) {
            return Err(Trap::Sentinel { chunk, offset });
        }
        if !addr.is_multiple_of(8) {
            return Err(Trap::Fault { addr, reason: "misaligned access" });
        }
        if addr == 0 {
            return Err(Trap::Fault { addr, reason: "null dereference" });
        }
        self.peek(addr).ok_or(Trap::Fault { addr, reason: "unmapped or dangling address" })
    }

    /// Word at `addr` with its tag, if mapped.
    pub fn peek(&self, addr: u64) -> Option<Word> {
        if !addr.is_multiple_of(8) {
            return None;
        }
        if addr >= STATIC_BASE && addr < STATIC_BASE + 8 * self.statics.len() as u64 {
            return Some(self.statics[((addr - STATIC_BASE) / 8) as usize]);
        }
        if let Some(w) = self.heap.word(addr) {
            return Some(*w);
        }
        let t = isa::stack_thread(addr)?;
        self.threads.get(t as usize)?.stack_word(addr)
    }

    fn word_mut(&mut self, addr: u64) -> Result<&mut Word, Trap> {
        self.word(addr)?;
        Ok(self.poke(addr).unwrap())
    }

    /// Mutable word at `addr`, if mapped.
    pub fn poke(&mut self, addr: u64) -> Option<&mut Word> {
        if !addr.is_multiple_of(8) {
            return None;
        }
        if addr >= STATIC_BASE && addr < STATIC_BASE + 8 * self.statics.len() as u64 {
            return Some(&mut self.statics[((addr - STATIC_BASE) / 8) as usize]);
        }
        if self.heap.chunk_at(addr).is_some() {
            return self.heap.word_mut(addr);
        }
        let t = isa::stack_thread(addr)?;
        self.threads.get_mut(t as usize)?.stack_word_mut(addr)
    }

    fn ptr_base(&self, v: u64) -> Result<u64, Trap> {
        if let Some((chunk, offset)) = sentinel::decode(v) {
            return Err(Trap::Sentinel { chunk, offset });
        }
        if v == 0 {
            return Err(Trap::Fault { addr: 0, reason: "null dereference" });
        }
        Ok(v)
    }

    // ---- execution ----

    /// Runs until the program finishes, a trap occurs or `max_steps` steps
    /// have executed in total.
    pub fn run(&mut self, max_steps: u64) -> Result<(), Trap> {
        while !self.finished {
            if self.steps >= max_steps {
                return Err(Trap::StepLimit);
            }
            self.step()?;
        }
        Ok(())
    }

    pub fn step(&mut self) -> Result<StepEvent, Trap> {
        if self.finished {
            return Ok(StepEvent::Finished);
        }
        let cur = self.current;
        let pc = self.threads[cur].pc;
        let instr = *self.image.code.get(pc as usize).ok_or(Trap::IllegalOpcode(pc))?;
        let mut exited = false;
        self.exec(cur, pc, instr, &mut exited)?;
        self.steps += 1;
        let mut ev = StepEvent::Ran;
        if exited {
            self.threads[cur].exited = true;
            ev = StepEvent::ThreadExited(self.threads[cur].id);
        }
        self.quantum = self.quantum.saturating_sub(1);
        if exited || self.quantum == 0 {
            self.schedule_next();
        }
        if self.threads.iter().all(|t| t.exited) {
            self.finished = true;
            ev = StepEvent::Finished;
        }
        Ok(ev)
    }

    fn schedule_next(&mut self) {
        let n = self.threads.len();
        for k in 1..=n {
            let i = (self.current + k) % n;
            if !self.threads[i].exited {
                self.current = i;
                break;
            }
        }
        self.quantum = self.sched.gen_range(1..=MAX_QUANTUM);
    }

    fn push(&mut self, cur: usize, w: Word) -> Result<(), Trap> {
        let th = &mut self.threads[cur];
        let (sp, id) = (th.sp - 8, th.id);
        let slot = th.stack_word_mut(sp).ok_or(Trap::StackOverflow(id))?;
        *slot = w;
        th.sp = sp;
        Ok(())
    }

    fn exec(&mut self, cur: usize, pc: u64, instr: Instr, exited: &mut bool) -> Result<(), Trap> {
        let mut next = pc + 1;
        let th = &self.threads[cur];
        match instr {
            Instr::Li { rd, imm } => self.threads[cur].set(rd, Word::scalar(imm as u64)),
            Instr::Clr { rd } => self.threads[cur].set(rd, Word::ZERO),
            Instr::Mov { rd, rs } => {
                let w = th.reg(rs);
                self.threads[cur].set(rd, w);
            }
            Instr::Pass { rd, rs } => {
                let w = th.reg(rs);
                let t = &mut self.threads[cur];
                t.set(rs, Word::ZERO);
                t.set(rd, w);
            }
            Instr::PassM { rd, base, off } => {
                let addr = th.reg(base).v.wrapping_add(off as i64 as u64);
                let m = self.word_mut(addr)?;
                let w = *m;
                *m = Word::ZERO;
                self.threads[cur].set(rd, w);
            }
            Instr::Bin { op, rd, ra, rb } => {
                let a = th.reg(ra).v as i64;
                let b = th.reg(rb).v as i64;
                let v = match op {
                    BinOp::Add => a.wrapping_add(b),
                    BinOp::Sub => a.wrapping_sub(b),
                    BinOp::Mul => a.wrapping_mul(b),
                    BinOp::Div if b == 0 => return Err(Trap::DivZero),
                    BinOp::Rem if b == 0 => return Err(Trap::DivZero),
                    BinOp::Div => a.wrapping_div(b),
                    BinOp::Rem => a.wrapping_rem(b),
                    BinOp::Lt => (a < b) as i64,
                    BinOp::Le => (a <= b) as i64,
                    BinOp::Gt => (a > b) as i64,
                    BinOp::Ge => (a >= b) as i64,
                    // Pointer comparisons compare raw words.
                    BinOp::Eq => (th.reg(ra).v == th.reg(rb).v) as i64,
                    BinOp::Ne => (th.reg(ra).v != th.reg(rb).v) as i64,
                    BinOp::And => (a != 0 && b != 0) as i64,
                    BinOp::Or => (a != 0 || b != 0) as i64,
                };
                self.threads[cur].set(rd, Word::scalar(v as u64));
            }
            Instr::Un { op, rd, rs } => {
                let a = th.reg(rs).v as i64;
                let v = match op {
                    UnOp::Neg => a.wrapping_neg(),
                    UnOp::Not => (a == 0) as i64,
                };
                self.threads[cur].set(rd, Word::scalar(v as u64));
            }
            Instr::Ld { rd, base, off } => {
                let addr = th.reg(base).v.wrapping_add(off as i64 as u64);
                let w = self.word(addr)?;
                self.threads[cur].set(rd, w);
            }
            Instr::St { base, off, rs } => {
                let addr = th.reg(base).v.wrapping_add(off as i64 as u64);
                let w = th.reg(rs);
                *self.word_mut(addr)? = w;
            }
            Instr::StTag { base, off, tag, class } => {
                let addr = th.reg(base).v.wrapping_add(off as i64 as u64);
                self.word(addr)?;
                self.word(addr + 8)?;
                *self.word_mut(addr)? = Word::scalar(tag as u64);
                let data = self.word_mut(addr + 8)?;
                data.t = match class {
                    VariantClass::Scalar => Tag::Scalar,
                    VariantClass::Pointer(t) => Tag::Ptr(t),
                };
            }
            Instr::Lea { rd, off, pointee } => self.threads[cur].set(rd, Word::ptr(STATIC_BASE + off as u64, pointee)),
            Instr::AddP { rd, rs, off, pointee } => {
                let b = self.ptr_base(th.reg(rs).v)?;
                self.threads[cur].set(rd, Word::ptr(b + off as u64, pointee));
            }
            Instr::IdxP { rd, base, idx, elem_size, len, pointee } => {
                let b = self.ptr_base(th.reg(base).v)?;
                let i = th.reg(idx).v as i64;
                let (n, data) = match len {
                    IndexLen::Fixed(n) => (n as u64, b),
                    IndexLen::Dynamic => (self.word(b)?.v, b + 8),
                };
                if i < 0 || i as u64 >= n {
                    return Err(Trap::Bounds { index: i, len: n });
                }
                self.threads[cur].set(rd, Word::ptr(data + i as u64 * elem_size as u64, pointee));
            }
            Instr::Alloc { rd, ty } => {
                let size = self.image.types.size_of(ty).unwrap_or(8);
                let base = self.heap.alloc(size, ty, pc as u32).ok_or(Trap::OutOfMemory { size })?.base;
                self.threads[cur].set(rd, Word::ptr(base, ty));
            }
            Instr::AllocArr { rd, ty, count, elem_size } => {
                let n = th.reg(count).v as i64;
                if !(0..=(1 << 24)).contains(&n) {
                    return Err(Trap::Bounds { index: n, len: 1 << 24 });
                }
                let size = 8 + n as u64 * elem_size as u64;
                let base = self.heap.alloc(size, ty, pc as u32).ok_or(Trap::OutOfMemory { size })?.base;
                *self.heap.word_mut(base).unwrap() = Word::scalar(n as u64);
                self.threads[cur].set(rd, Word::ptr(base, ty));
            }
            Instr::Free { rs } => {
                let v = th.reg(rs).v;
                if v != 0 {
                    if let Some((chunk, offset)) = sentinel::decode(v) {
                        return Err(Trap::Sentinel { chunk, offset });
                    }
                    if !self.heap.live.contains_key(&v) {
                        return Err(Trap::Fault { addr: v, reason: "free of a non-chunk address" });
                    }
                    self.heap.free(v);
                }
                self.threads[cur].set(rs, Word::ZERO);
            }
            Instr::Print { rs } => self.output.push(th.reg(rs).v as i64),
            Instr::Rand { rd } => {
                let v = self.rng.gen_range(0..RAND_RANGE);
                self.threads[cur].set(rd, Word::scalar(v as u64));
            }
            Instr::Jmp { target } => next = target as u64,
            Instr::Br { rs, target } => {
                if th.reg(rs).v != 0 {
                    next = target as u64;
                }
            }
            Instr::Brz { rs, target } => {
                if th.reg(rs).v == 0 {
                    next = target as u64;
                }
            }
            Instr::Call { func } => {
                let f = self.image.functions.get(func as usize).ok_or(Trap::IllegalOpcode(pc))?;
                let start = f.start as u64;
                self.push(cur, Word::scalar(pc + 1))?;
                let t = &mut self.threads[cur];
                t.calls.push(CallRecord { func, cfa: t.sp });
                next = start;
            }
            Instr::Spawn { func, nargs } => {
                let f = self.image.functions.get(func as usize).ok_or(Trap::IllegalOpcode(pc))?;
                let id = self.threads.len() as u32;
                if stack_top(id) > crate::isa::STACK_REGION + (1 << 28) {
                    return Err(Trap::StackOverflow(id));
                }
                let mut nt = Thread::new(id);
                for k in 0..nargs as usize {
                    nt.regs[k] = th.regs[k];
                }
                nt.pc = f.start as u64;
                nt.sp -= 8;
                *nt.stack_word_mut(nt.sp).unwrap() = Word::scalar(EXIT_PC);
                nt.calls.push(CallRecord { func, cfa: nt.sp });
                self.threads.push(nt);
            }
            Instr::Enter { size } => {
                let fp = th.reg(Reg::FP);
                let id = th.id;
                let low = th.sp.checked_sub(8 + size as u64).ok_or(Trap::StackOverflow(id))?;
                if low < stack_top(id) - STACK_SIZE {
                    return Err(Trap::StackOverflow(id));
                }
                self.push(cur, Word::scalar(fp.v))?;
                let t = &mut self.threads[cur];
                let new_fp = t.sp;
                t.set(Reg::FP, Word::scalar(new_fp));
                for k in 1..=(size as u64 / 8) {
                    *t.stack_word_mut(new_fp - 8 * k).unwrap() = Word::ZERO;
                }
                t.sp = new_fp - size as u64;
            }
            Instr::Leave => {
                let t = &mut self.threads[cur];
                let fp = t.reg(Reg::FP).v;
                let saved = t.stack_word(fp).ok_or(Trap::Fault { addr: fp, reason: "bad frame pointer" })?;
                t.sp = fp + 8;
                t.set(Reg::FP, Word::scalar(saved.v));
            }
            Instr::Save { rs, off } => {
                let addr = th.reg(Reg::FP).v.wrapping_add((off + 8) as i64 as u64);
                let w = th.reg(rs);
                *self.word_mut(addr)? = w;
                self.threads[cur].set(rs, Word::ZERO);
            }
            Instr::Restore { rd, off } => {
                let addr = th.reg(Reg::FP).v.wrapping_add((off + 8) as i64 as u64);
                let m = self.word_mut(addr)?;
                let w = *m;
                *m = Word::ZERO;
                self.threads[cur].set(rd, w);
            }
            Instr::Ret => {
                let t = &mut self.threads[cur];
                let sp = t.sp;
                let ra = t.stack_word(sp).ok_or(Trap::Fault { addr: sp, reason: "bad stack pointer" })?;
                t.sp = sp + 8;
                t.calls.pop();
                if ra.v == EXIT_PC {
                    *exited = true;
                }
                next = ra.v;
            }
        }
        self.threads[cur].pc = next;
        Ok(())
    }

    // ---- snapshots ----

    pub fn capture_snapshot(&self) -> Snapshot {
        let mut segments = Vec::new();
        if !self.statics.is_empty() {
            segments.push(Segment { base: STATIC_BASE, words: self.statics.iter().map(|w| w.v).collect() });
        }
        if !self.heap.words.is_empty() {
            segments.push(Segment { base: isa::HEAP_BASE, words: self.heap.words.iter().map(|w| w.v).collect() });
        }
        let mut threads = Vec::new();
        for t in self.threads.iter().filter(|t| !t.exited) {
            threads.push(ThreadRegs { id: t.id, regs: t.exposed_regs() });
            let top = stack_top(t.id);
            let words: Vec<u64> =
                (0..((top - t.sp) / 8)).rev().map(|i| t.stack.get(i as usize).map(|w| w.v).unwrap_or(0)).collect();
            segments.push(Segment { base: t.sp, words });
        }
        segments.sort_by_key(|s| s.base);
        Snapshot {
            image_hash: self.image_hash,
            threads,
            segments,
            chunks: self.heap.chunks.clone(),
            static_size: 8 * self.statics.len() as u64,
        }
    }

    /// Entry-function final `ret` reached by the main thread: every local
    /// is dead, nothing has been torn down yet beyond the frame itself.
    pub fn at_main_exit(&self) -> bool {
        let Some(main) = self.threads.first() else { return false };
        if main.exited || self.finished || main.calls.len() != 1 {
            return false;
        }
        let f = &self.image.functions[self.image.entry as usize];
        main.pc == (f.end - 1) as u64
    }

    /// Live chunks ordered by id.
    pub fn live_chunk_list(&self) -> Vec<&Chunk> {
        let mut v: Vec<&Chunk> = self.heap.live_chunks().collect();
        v.sort_by_key(|c| c.id);
        v
    }

    /// Raw value at `addr` within the ranges a snapshot captures: statics,
    /// the heap arena including free space, and each live stack above sp.
    pub fn raw_read(&self, addr: u64) -> Option<u64> {
        if !addr.is_multiple_of(8) {
            return None;
        }
        let arena_end = isa::HEAP_BASE + 8 * self.heap.words.len() as u64;
        if addr >= isa::HEAP_BASE && addr < arena_end {
            return Some(self.heap.words[((addr - isa::HEAP_BASE) / 8) as usize].v);
        }
        self.read(addr)
    }

    /// Overwrites the value of a mapped word, keeping its tag.
    pub fn write_word(&mut self, addr: u64, v: u64) -> bool {
        if self.read(addr).is_none() {
            return false;
        }
        match self.poke(addr) {
            Some(w) => {
                w.v = v;
                true
            }
            None => false,
        }
    }

    /// Frees live chunk `id` and returns its record and words.
    pub fn evict_chunk(&mut self, id: u32) -> Option<(Chunk, Vec<u64>)> {
        let c = self.heap.chunks.get(id as usize).filter(|c| c.live)?.clone();
        let words: Vec<Word> = (0..c.size.div_ceil(8)).map(|i| *self.heap.word(c.base + 8 * i).unwrap()).collect();
        self.heap.free(c.base);
        self.evicted.insert(id, words.iter().map(|w| w.t).collect());
        Some((c, words.into_iter().map(|w| w.v).collect()))
    }

    /// Allocates a fresh chunk for the bytes of evicted chunk `old`.
    pub fn reinstate_chunk(&mut self, old: u32, ty: TypeId, size: u64, words: &[u64]) -> Result<Chunk, Trap> {
        let site = self.heap.chunks.get(old as usize).map(|c| c.site).unwrap_or(0);
        let c = self.heap.alloc(size, ty, site).ok_or(Trap::OutOfMemory { size })?.clone();
        let tags = self.evicted.remove(&old).unwrap_or_default();
        for (i, v) in words.iter().enumerate().take(size.div_ceil(8) as usize) {
            let w = self.heap.word_mut(c.base + 8 * i as u64).unwrap();
            *w = Word { v: *v, t: tags.get(i).copied().unwrap_or(Tag::Scalar) };
        }
        Ok(c)
    }

    pub fn set_reg(&mut self, t: u32, n: u8, v: u64, tag: Option<Tag>) -> bool {
        let Some(th) = self.thread_mut(t) else { return false };
        match n {
            n if (n as usize) < NUM_GPRS => {
                let w = &mut th.regs[n as usize];
                w.v = v;
                if let Some(tag) = tag {
                    w.t = tag;
                }
            }
            isa::REG_SP => th.sp = v,
            isa::REG_PC => th.pc = v,
            _ => return false,
        }
        true
    }
}

impl MachineView for Vm {
    fn thread_ids(&self) -> Vec<u32> {
        self.threads.iter().filter(|t| !t.exited).map(|t| t.id).collect()
    }

    fn reg(&self, t: u32, n: u8) -> Option<u64> {
        self.thread(t).filter(|t| !t.exited)?.exposed_regs().get(n as usize).copied()
    }

    fn read(&self, addr: u64) -> Option<u64> {
        if let Some(t) = isa::stack_thread(addr) {
            let th = self.thread(t)?;
            if th.exited || addr < th.sp {
                return None;
            }
        }
        self.peek(addr).map(|w| w.v)
    }

    fn chunk_at(&self, addr: u64) -> Option<&Chunk> {
        self.heap.chunk_at(addr)
    }

    fn any_chunk_at(&self, addr: u64) -> Option<&Chunk> {
        self.heap.chunks.iter().rev().find(|c| c.contains(addr))
    }

    fn live_chunks(&self) -> Vec<&Chunk> {
        self.heap.live_chunks().collect()
    }

    fn static_range(&self) -> (u64, u64) {
        (STATIC_BASE, STATIC_BASE + 8 * self.statics.len() as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegen::compile;
    use crate::image::{FunctionInfo, LocationMap, UnwindRow};
    use crate::isa::HEAP_BASE;

    fn raw(code: Vec<Instr>) -> Arc<ProgramImage> {
        let mut img = ProgramImage::empty();
        let n = code.len() as u32;
        img.code = code;
        img.functions.push(FunctionInfo { name: "main".into(), start: 0, end: n, params: 0, allocator: false, frame_size: 0 });
        img.locmaps.push(LocationMap { func: 0, start: 0, entries: vec![Vec::new(); n as usize] });
        img.unwind.push(vec![UnwindRow { start: 0, end: n, cfa_offset: 0, saved_fp: None, saved: vec![] }]);
        Arc::new(img)
    }

    fn vm_for(src: &str, seed: u64) -> Vm {
        Vm::new(Arc::new(compile(src).unwrap()), VmConfig { seed, ..VmConfig::default() })
    }

    fn run_src(src: &str) -> Vec<i64> {
        let mut vm = vm_for(src, 1);
        vm.run(1_000_000).unwrap();
        vm.output
    }

    const LIST3: &str = "struct N { next: *N, v: int }\n\
        fn main() { let a: *N = alloc(N); a.v = 1; let b: *N = alloc(N); b.v = 2; a.next = b; \
        let c: *N = alloc(N); c.v = 3; b.next = c; c.next = a; print(a.v); print(a.next.v); }";

    #[test]
    fn pass_moves_and_nulls() {
        let mut vm = Vm::new(
            raw(vec![Instr::Li { rd: Reg(2), imm: 0x1000_0040 }, Instr::Pass { rd: Reg(1), rs: Reg(2) }, Instr::Ret]),
            VmConfig::default(),
        );
        vm.step().unwrap();
        vm.step().unwrap();
        assert_eq!(vm.threads[0].reg(Reg(1)).v, 0x1000_0040);
        assert_eq!(vm.threads[0].reg(Reg(2)), Word::ZERO);
    }

    #[test]
    fn sentinel_load_traps_without_side_effects() {
        let s = sentinel::encode(7, 16);
        let mut vm = Vm::new(
            raw(vec![Instr::Li { rd: Reg(2), imm: s as i64 }, Instr::Ld { rd: Reg(3), base: Reg(2), off: 8 }, Instr::Ret]),
            VmConfig::default(),
        );
        vm.step().unwrap();
        let before = vm.threads[0].exposed_regs();
        assert_eq!(vm.step(), Err(Trap::Sentinel { chunk: 7, offset: 24 }));
        assert_eq!(vm.threads[0].exposed_regs(), before);
    }

    #[test]
    fn scalar_arithmetic_stays_scalar() {
        let mut vm = Vm::new(
            raw(vec![
                Instr::Li { rd: Reg(1), imm: 2 },
                Instr::Li { rd: Reg(2), imm: 3 },
                Instr::Bin { op: BinOp::Add, rd: Reg(3), ra: Reg(1), rb: Reg(2) },
                Instr::Ret,
            ]),
            VmConfig::default(),
        );
        for _ in 0..3 {
            vm.step().unwrap();
        }
        assert_eq!(vm.threads[0].reg(Reg(3)), Word::scalar(5));
    }

    #[test]
    fn programs_compute() {
        assert_eq!(
            run_src("fn fib(n: int) -> int { if n < 2 { return n; } return fib(n - 1) + fib(n - 2); }\nfn main() { print(fib(12)); }"),
            vec![144]
        );
        assert_eq!(
            run_src(
                "struct N { next: *N, v: int }\nfn main() { let h: *N = null; let i: int = 0; \
                 while i < 5 { let n: *N = alloc(N); n.v = i; n.next = h; h = n; i = i + 1; } \
                 let s: int = 0; while h != null { s = s + h.v; let d: *N = h; h = h.next; free(pass d); } print(s); }"
            ),
            vec![10]
        );
        assert_eq!(
            run_src("fn main() { let a: *dynarray int = alloc_array(int, 6); let i: int = 0; while i < len(a) { a[i] = i * i; i = i + 1; } print(a[5]); print(len(a)); }"),
            vec![25, 6]
        );
    }

    #[test]
    fn runs_are_deterministic() {
        let src = "fn w(k: int) { let i: int = 0; while i < 4 { print(k * 10 + i); i = i + 1; } }\n\
                   fn main() { spawn w(1); spawn w(2); print(rand()); print(rand()); }";
        let a = {
            let mut vm = vm_for(src, 9);
            vm.run(100_000).unwrap();
            (vm.output, vm.steps)
        };
        let b = {
            let mut vm = vm_for(src, 9);
            vm.run(100_000).unwrap();
            (vm.output, vm.steps)
        };
        assert_eq!(a, b);
        assert_eq!(a.0.len(), 10);
    }

    #[test]
    fn snapshot_is_a_deep_copy() {
        let mut vm = vm_for(LIST3, 0);
        for _ in 0..10 {
            vm.step().unwrap();
        }
        let s = vm.capture_snapshot();
        let copy = s.clone();
        for _ in 0..100 {
            if vm.finished {
                break;
            }
            vm.step().unwrap();
        }
        assert_eq!(s, copy);
    }

    #[test]
    fn two_threads_two_register_files() {
        let mut vm = vm_for("fn w() { let i: int = 0; while i < 50 { i = i + 1; } }\nfn main() { spawn w(); let j: int = 0; while j < 50 { j = j + 1; } }", 3);
        while vm.threads.len() < 2 {
            vm.step().unwrap();
        }
        vm.step().unwrap();
        let s = vm.capture_snapshot();
        assert_eq!(s.threads.len(), 2);
        assert_eq!(s.threads[1].regs[isa::REG_SP as usize], stack_top(1) - 8);
    }

    #[test]
    fn shadow_set_tracks_pointers() {
        let mut vm = vm_for(LIST3, 0);
        assert_eq!(shadow_pointer_set(&vm), ShadowSet::default());
        while !matches!(vm.next_instr(), Some((_, Instr::Print { .. }))) {
            vm.step().unwrap();
        }
        let s = shadow_pointer_set(&vm);
        assert_eq!(s.heap.len(), 3);
        assert_eq!(s.roots.len(), 1);
        assert!(s.heap.iter().all(|p| p.value >= HEAP_BASE));

        let mut vm = vm_for("fn main() { let p: *int = alloc(int); *p = 4; free(pass p); print(0); }", 0);
        while !matches!(vm.next_instr(), Some((_, Instr::Print { .. }))) {
            vm.step().unwrap();
        }
        assert_eq!(shadow_pointer_set(&vm), ShadowSet::default());
    }

    #[test]
    fn audit_clean_on_conforming_program() {
        let mut vm = vm_for(LIST3, 0);
        while !vm.finished {
            assert_eq!(audit_r2(&vm), Ok(()));
            vm.step().unwrap();
        }
    }

    #[test]
    fn audit_names_stale_alias() {
        let int_ptr = crate::types::INT;
        let mut img = (*raw(vec![
            Instr::Alloc { rd: Reg(4), ty: int_ptr },
            Instr::Mov { rd: Reg(5), rs: Reg(4) },
            Instr::Free { rs: Reg(4) },
            Instr::Ret,
        ]))
        .clone();
        img.types = crate::types::TypeMap::new();
        let mut vm = Vm::new(Arc::new(img), VmConfig::default());
        for _ in 0..3 {
            vm.step().unwrap();
        }
        let v = audit_r2(&vm).unwrap_err();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].loc, ShadowLoc::Reg { thread: 0, n: 5 });
        assert_eq!(v[0].dead_chunk, Some(0));
    }

    #[test]
    fn audit_flags_one_past_end() {
        let mut types = crate::types::TypeMap::new();
        let arr = types.intern(crate::types::TypeDesc::Array { elem: crate::types::INT, count: 2 }, "[int; 2]");
        let mut img = (*raw(vec![
            Instr::Alloc { rd: Reg(4), ty: arr },
            Instr::AddP { rd: Reg(5), rs: Reg(4), off: 16, pointee: crate::types::INT },
            Instr::Ret,
        ]))
        .clone();
        img.types = types;
        let mut vm = Vm::new(Arc::new(img), VmConfig::default());
        vm.step().unwrap();
        vm.step().unwrap();
        assert!(audit_r2(&vm).is_err());
    }

    #[test]
    fn dangling_load_faults() {
        let mut vm = Vm::new(
            raw(vec![
                Instr::Alloc { rd: Reg(4), ty: crate::types::INT },
                Instr::Mov { rd: Reg(5), rs: Reg(4) },
                Instr::Free { rs: Reg(4) },
                Instr::Ld { rd: Reg(6), base: Reg(5), off: 0 },
            ]),
            VmConfig::default(),
        );
        for _ in 0..3 {
            vm.step().unwrap();
        }
        assert!(matches!(vm.step(), Err(Trap::Fault { .. })));
    }
}
