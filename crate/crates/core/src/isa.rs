//! The mini register machine: registers, address layout, sentinel encoding
//! and the instruction set that codegen targets and the VM executes.
//!
//! Word size is 8 bytes, little-endian. `r15` doubles as the frame pointer;
//! `sp` and `pc` are separate. The guest stack grows downward and every
//! program counter is an instruction index.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::types::TypeId;

pub const NUM_GPRS: usize = 16;
/// Register file as exposed to tools: r0-r15, sp, pc.
pub const NUM_EXPOSED_REGS: usize = 18;
pub const REG_SP: u8 = 16;
pub const REG_PC: u8 = 17;

pub const HEAP_BASE: u64 = 0x1000_0000;
pub const HEAP_LIMIT: u64 = 0x2000_0000;
pub const STATIC_BASE: u64 = 0x2000_0000;
pub const STACK_REGION: u64 = 0x3000_0000;
pub const STACK_SIZE: u64 = 1 << 20;
/// Return address that ends a thread when popped.
pub const EXIT_PC: u64 = 0xFFFF_FFFF;

/// Thread whose stack segment contains `addr`.
pub fn stack_thread(addr: u64) -> Option<u32> {
    if addr < STACK_REGION {
        return None;
    }
    u32::try_from((addr - STACK_REGION) / STACK_SIZE).ok()
}

/// Top (initial sp) of a thread's stack; the stack occupies
/// `[top - STACK_SIZE, top)`.
pub fn stack_top(thread: u32) -> u64 {
    STACK_REGION + (thread as u64 + 1) * STACK_SIZE
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Reg(pub u8);

impl Reg {
    pub const FP: Reg = Reg(15);

    pub fn is_callee_saved(self) -> bool {
        (8..=11).contains(&self.0)
    }

    pub fn is_caller_saved(self) -> bool {
        self.0 <= 7 || (12..=14).contains(&self.0)
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == 15 {
            write!(f, "fp")
        } else {
            write!(f, "r{}", self.0)
        }
    }
}

pub const ARG_REGS: [Reg; 4] = [Reg(0), Reg(1), Reg(2), Reg(3)];
pub const SCRATCH_REGS: [Reg; 3] = [Reg(12), Reg(13), Reg(14)];
pub const CALLER_SAVED_HOMES: [Reg; 4] = [Reg(4), Reg(5), Reg(6), Reg(7)];
pub const CALLEE_SAVED: [Reg; 4] = [Reg(8), Reg(9), Reg(10), Reg(11)];

/// Sentinel pointers stand in for chunks that live in a remote store:
/// bit 63 set, bits 32-62 chunk id, bits 0-31 byte offset.
pub mod sentinel {
    pub const FLAG: u64 = 1 << 63;
    pub const MAX_CHUNK: u64 = (1 << 31) - 1;

    pub fn encode(chunk: u32, offset: u32) -> u64 {
        debug_assert!(chunk as u64 <= MAX_CHUNK);
        FLAG | ((chunk as u64 & MAX_CHUNK) << 32) | offset as u64
    }

    pub fn is_sentinel(value: u64) -> bool {
        value & FLAG != 0
    }

    pub fn decode(value: u64) -> Option<(u32, u32)> {
        is_sentinel(value).then_some((((value >> 32) & MAX_CHUNK) as u32, value as u32))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

impl BinOp {
    pub const ALL: [BinOp; 13] = [
        BinOp::Add,
        BinOp::Sub,
        BinOp::Mul,
        BinOp::Div,
        BinOp::Rem,
        BinOp::Lt,
        BinOp::Le,
        BinOp::Gt,
        BinOp::Ge,
        BinOp::Eq,
        BinOp::Ne,
        BinOp::And,
        BinOp::Or,
    ];

    pub fn code(self) -> u8 {
        BinOp::ALL.iter().position(|o| *o == self).unwrap() as u8
    }

    pub fn from_code(c: u8) -> Option<BinOp> {
        BinOp::ALL.get(c as usize).copied()
    }

    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UnOp {
    Neg,
    Not,
}

/// Shadow class of a union variant, carried by `StTag` so the VM can retype
/// the data word when the discriminant changes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VariantClass {
    Scalar,
    Pointer(TypeId),
}

/// Length source for bounds-checked indexing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IndexLen {
    /// Fixed-size array of the given element count.
    Fixed(u32),
    /// Dynamic array: count in word 0, payload from byte 8.
    Dynamic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Instr {
    /// rd <- imm
    Li { rd: Reg, imm: i64 },
    /// rd <- 0
    Clr { rd: Reg },
    Mov { rd: Reg, rs: Reg },
    /// rd <- rs; rs <- 0, as one step.
    Pass { rd: Reg, rs: Reg },
    /// rd <- mem[base+off]; mem[base+off] <- 0, as one step.
    PassM { rd: Reg, base: Reg, off: i32 },
    Bin { op: BinOp, rd: Reg, ra: Reg, rb: Reg },
    Un { op: UnOp, rd: Reg, rs: Reg },
    Ld { rd: Reg, base: Reg, off: i32 },
    St { base: Reg, off: i32, rs: Reg },
    /// Stores `tag` at base+off and retypes the data word at base+off+8.
    StTag { base: Reg, off: i32, tag: u32, class: VariantClass },
    /// rd <- address of a static word, a pointer to `pointee`.
    Lea { rd: Reg, off: u32, pointee: TypeId },
    /// rd <- rs + off, a pointer to `pointee`; faults on null.
    AddP { rd: Reg, rs: Reg, off: u32, pointee: TypeId },
    /// rd <- base + header + idx*elem_size after a bounds check.
    IdxP { rd: Reg, base: Reg, idx: Reg, elem_size: u32, len: IndexLen, pointee: TypeId },
    Alloc { rd: Reg, ty: TypeId },
    AllocArr { rd: Reg, ty: TypeId, count: Reg, elem_size: u32 },
    /// Frees the chunk rs points at and clears rs.
    Free { rs: Reg },
    Print { rs: Reg },
    Rand { rd: Reg },
    Jmp { target: u32 },
    /// Branch when rs != 0.
    Br { rs: Reg, target: u32 },
    /// Branch when rs == 0.
    Brz { rs: Reg, target: u32 },
    Call { func: u32 },
    Spawn { func: u32, nargs: u8 },
    /// Push fp, fp <- sp, sp -= size, zero the new frame.
    Enter { size: u32 },
    /// sp <- fp, pop fp.
    Leave,
    /// Spill a callee-saved register into the frame and clear it.
    Save { rs: Reg, off: i32 },
    /// Reload a callee-saved register from the frame and clear the slot.
    Restore { rd: Reg, off: i32 },
    Ret,
}

impl Instr {
    pub fn is_terminator(&self) -> bool {
        matches!(self, Instr::Jmp { .. } | Instr::Ret)
    }

    pub fn branch_target(&self) -> Option<u32> {
        match self {
            Instr::Jmp { target } | Instr::Br { target, .. } | Instr::Brz { target, .. } => Some(*target),
            _ => None,
        }
    }
}

impl fmt::Display for Instr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instr::Li { rd, imm } => write!(f, "li {rd}, {imm}"),
            Instr::Clr { rd } => write!(f, "clr {rd}"),
            Instr::Mov { rd, rs } => write!(f, "mov {rd}, {rs}"),
            Instr::Pass { rd, rs } => write!(f, "pass {rd}, {rs}"),
            Instr::PassM { rd, base, off } => write!(f, "pass {rd}, [{base}{off:+}]"),
            Instr::Bin { op, rd, ra, rb } => write!(f, "{rd} = {ra} {} {rb}", op.symbol()),
            Instr::Un { op, rd, rs } => write!(f, "{rd} = {}{rs}", if *op == UnOp::Neg { "-" } else { "!" }),
            Instr::Ld { rd, base, off } => write!(f, "ld {rd}, [{base}{off:+}]"),
            Instr::St { base, off, rs } => write!(f, "st [{base}{off:+}], {rs}"),
            Instr::StTag { base, off, tag, .. } => write!(f, "sttag [{base}{off:+}], {tag}"),
            Instr::Lea { rd, off, pointee } => write!(f, "lea {rd}, static+{off} ({pointee})"),
            Instr::AddP { rd, rs, off, pointee } => write!(f, "addp {rd}, {rs}+{off} ({pointee})"),
            Instr::IdxP { rd, base, idx, elem_size, .. } => write!(f, "idxp {rd}, {base}[{idx}*{elem_size}]"),
            Instr::Alloc { rd, ty } => write!(f, "alloc {rd}, {ty}"),
            Instr::AllocArr { rd, ty, count, .. } => write!(f, "allocarr {rd}, {ty} x {count}"),
            Instr::Free { rs } => write!(f, "free {rs}"),
            Instr::Print { rs } => write!(f, "print {rs}"),
            Instr::Rand { rd } => write!(f, "rand {rd}"),
            Instr::Jmp { target } => write!(f, "jmp {target}"),
            Instr::Br { rs, target } => write!(f, "br {rs}, {target}"),
            Instr::Brz { rs, target } => write!(f, "brz {rs}, {target}"),
            Instr::Call { func } => write!(f, "call f{func}"),
            Instr::Spawn { func, nargs } => write!(f, "spawn f{func}/{nargs}"),
            Instr::Enter { size } => write!(f, "enter {size}"),
            Instr::Leave => write!(f, "leave"),
            Instr::Save { rs, off } => write!(f, "save {rs}, [cfa{off:+}]"),
            Instr::Restore { rd, off } => write!(f, "restore {rd}, [cfa{off:+}]"),
            Instr::Ret => write!(f, "ret"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn sentinel_roundtrip(chunk in 0u32..=(sentinel::MAX_CHUNK as u32), offset: u32) {
            let v = sentinel::encode(chunk, offset);
            prop_assert!(sentinel::is_sentinel(v));
            prop_assert_eq!(sentinel::decode(v), Some((chunk, offset)));
        }
    }

    #[test]
    fn plain_addresses_are_not_sentinels() {
        assert_eq!(sentinel::decode(HEAP_BASE + 0x40), None);
        assert_eq!(sentinel::decode(0), None);
    }

    #[test]
    fn register_classes_partition() {
        for r in 0..15u8 {
            let r = Reg(r);
            assert!(r.is_callee_saved() ^ r.is_caller_saved(), "{r}");
        }
        assert!(!Reg::FP.is_caller_saved() && !Reg::FP.is_callee_saved());
    }

    #[test]
    fn stacks_are_disjoint() {
        assert_eq!(stack_top(0), 0x3010_0000);
        assert_eq!(stack_top(1) - STACK_SIZE, stack_top(0));
    }
}
