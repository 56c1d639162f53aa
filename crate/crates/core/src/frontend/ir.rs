//! Typed three-address IR over virtual registers.
//!
//! Every vreg has a fixed class: scalar or pointer-to-T. Union objects
//! never live in vregs; they are addressed through [`UnionPlace`].

use std::fmt;

use crate::image::GlobalInfo;
use crate::isa::{BinOp, IndexLen, UnOp, VariantClass};
use crate::types::{TypeId, TypeMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VReg(pub u32);

impl fmt::Display for VReg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Label(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Class {
    Scalar,
    Ptr(TypeId),
}

impl Class {
    pub fn is_ptr(self) -> bool {
        matches!(self, Class::Ptr(_))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VRegInfo {
    pub class: Class,
    /// Minilang type of the value (int, bool or a pointer type).
    pub ty: TypeId,
    pub name: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnionPlace {
    /// Index into [`IrFunction::union_locals`].
    Local(u32),
    /// Union object at `base + off`, where `base` is a pointer vreg.
    Mem { base: VReg, off: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Inst {
    Const { dst: VReg, value: i64 },
    Null { dst: VReg },
    Copy { dst: VReg, src: VReg },
    /// dst <- src; src <- null, atomically.
    Pass { dst: VReg, src: VReg },
    /// dst <- mem[base+off]; mem[base+off] <- null, atomically.
    PassMem { dst: VReg, base: VReg, off: u32 },
    Bin { op: BinOp, dst: VReg, a: VReg, b: VReg },
    Un { op: UnOp, dst: VReg, src: VReg },
    Load { dst: VReg, base: VReg, off: u32 },
    Store { base: VReg, off: u32, src: VReg },
    StaticAddr { dst: VReg, off: u32, pointee: TypeId },
    FieldAddr { dst: VReg, base: VReg, off: u32, pointee: TypeId },
    IndexAddr { dst: VReg, base: VReg, idx: VReg, elem_size: u32, len: IndexLen, pointee: TypeId },
    Alloc { dst: VReg, ty: TypeId },
    AllocArray { dst: VReg, ty: TypeId, count: VReg, elem_size: u32 },
    Free { src: VReg },
    Print { src: VReg },
    Rand { dst: VReg },
    Call { dst: Option<VReg>, func: u32, args: [Option<VReg>; 4] },
    Spawn { func: u32, args: [Option<VReg>; 4] },
    Ret { src: Option<VReg> },
    Label(Label),
    Jmp(Label),
    Br { cond: VReg, target: Label },
    Brz { cond: VReg, target: Label },
    /// Union store before lowering: one marker for the whole sequence.
    UnionStore { place: UnionPlace, tag: u32, class: VariantClass, src: VReg },
    /// Lowered union store steps.
    UnionZero { place: UnionPlace },
    UnionTag { place: UnionPlace, tag: u32, class: VariantClass },
    UnionData { place: UnionPlace, src: VReg },
    UnionTagLoad { dst: VReg, place: UnionPlace },
    UnionDataLoad { dst: VReg, place: UnionPlace },
}

fn args_iter(args: &[Option<VReg>; 4]) -> impl Iterator<Item = VReg> + '_ {
    args.iter().flatten().copied()
}

fn place_uses(p: &UnionPlace) -> Option<VReg> {
    match p {
        UnionPlace::Mem { base, .. } => Some(*base),
        UnionPlace::Local(_) => None,
    }
}

impl Inst {
    pub fn uses(&self) -> Vec<VReg> {
        use Inst::*;
        match self {
            Const { .. } | Null { .. } | StaticAddr { .. } | Alloc { .. } | Rand { .. } => vec![],
            Copy { src, .. } | Pass { src, .. } | Un { src, .. } => vec![*src],
            PassMem { base, .. } | Load { base, .. } | FieldAddr { base, .. } => vec![*base],
            Bin { a, b, .. } => vec![*a, *b],
            Store { base, src, .. } => vec![*base, *src],
            IndexAddr { base, idx, .. } => vec![*base, *idx],
            AllocArray { count, .. } => vec![*count],
            Free { src } | Print { src } => vec![*src],
            Call { args, .. } | Spawn { args, .. } => args_iter(args).collect(),
            Ret { src } => src.iter().copied().collect(),
            Label(_) | Jmp(_) => vec![],
            Br { cond, .. } | Brz { cond, .. } => vec![*cond],
            UnionStore { place, src, .. } | UnionData { place, src } => {
                place_uses(place).into_iter().chain([*src]).collect()
            }
            UnionZero { place } | UnionTag { place, .. } | UnionTagLoad { place, .. } | UnionDataLoad { place, .. } => {
                place_uses(place).into_iter().collect()
            }
        }
    }

    /// Vregs written. `Pass` also writes its source (to null).
    pub fn defs(&self) -> Vec<VReg> {
        use Inst::*;
        match self {
            Const { dst, .. }
            | Null { dst }
            | Copy { dst, .. }
            | PassMem { dst, .. }
            | Bin { dst, .. }
            | Un { dst, .. }
            | Load { dst, .. }
            | StaticAddr { dst, .. }
            | FieldAddr { dst, .. }
            | IndexAddr { dst, .. }
            | Alloc { dst, .. }
            | AllocArray { dst, .. }
            | Rand { dst }
            | UnionTagLoad { dst, .. }
            | UnionDataLoad { dst, .. } => vec![*dst],
            Pass { dst, src } => vec![*dst, *src],
            Call { dst, .. } => dst.iter().copied().collect(),
            _ => vec![],
        }
    }

    pub fn is_call(&self) -> bool {
        matches!(self, Inst::Call { .. })
    }

    pub fn is_union_step(&self) -> bool {
        matches!(self, Inst::UnionZero { .. } | Inst::UnionTag { .. } | Inst::UnionData { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnionLocal {
    pub name: String,
    pub ty: TypeId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IrFunction {
    pub name: String,
    pub params: Vec<VReg>,
    pub ret: Option<Class>,
    pub allocator: bool,
    pub vregs: Vec<VRegInfo>,
    pub union_locals: Vec<UnionLocal>,
    pub body: Vec<Inst>,
    pub labels: u32,
}

impl IrFunction {
    pub fn class(&self, v: VReg) -> Class {
        self.vregs[v.0 as usize].class
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TypedIr {
    pub types: TypeMap,
    pub globals: Vec<GlobalInfo>,
    pub static_size: u32,
    /// Initial values of scalar globals, by static offset.
    pub static_init: Vec<(u32, i64)>,
    pub functions: Vec<IrFunction>,
    pub entry: u32,
}

/// Structural invariants every checked IR must satisfy. Returns a
/// description of the first violation.
pub fn verify(ir: &TypedIr) -> Result<(), String> {
    for f in &ir.functions {
        let class = |v: VReg| f.class(v);
        for (i, inst) in f.body.iter().enumerate() {
            let at = || format!("{}:{}: {:?}", f.name, i, inst);
            match *inst {
                Inst::Copy { dst, src } | Inst::Pass { dst, src } if class(dst) != class(src) => {
                    return Err(format!("class-changing move at {}", at()));
                }
                Inst::Pass { src, .. } | Inst::PassMem { dst: src, .. } if !class(src).is_ptr() => {
                    return Err(format!("pass of a scalar at {}", at()));
                }
                Inst::Bin { dst, a, b, op } => {
                    let cmp = matches!(op, BinOp::Eq | BinOp::Ne);
                    if class(dst).is_ptr() || (!cmp && (class(a).is_ptr() || class(b).is_ptr())) {
                        return Err(format!("pointer arithmetic at {}", at()));
                    }
                }
                Inst::Un { dst, src, .. } if class(dst).is_ptr() || class(src).is_ptr() => {
                    return Err(format!("pointer arithmetic at {}", at()));
                }
                Inst::Const { dst, .. } | Inst::Rand { dst } if class(dst).is_ptr() => {
                    return Err(format!("integer materialized as pointer at {}", at()));
                }
                Inst::Free { src } => {
                    let prev = i.checked_sub(1).map(|j| f.body[j]);
                    let ok = matches!(prev, Some(Inst::Pass { dst, .. }) | Some(Inst::PassMem { dst, .. }) if dst == src);
                    if !ok {
                        return Err(format!("free argument not produced by pass at {}", at()));
                    }
                }
                Inst::UnionZero { place } => {
                    let ok = matches!(
                        (f.body.get(i + 1), f.body.get(i + 2)),
                        (Some(Inst::UnionTag { place: p1, .. }), Some(Inst::UnionData { place: p2, .. }))
                            if *p1 == place && *p2 == place
                    );
                    if !ok {
                        return Err(format!("broken pointer-variant store sequence at {}", at()));
                    }
                }
                Inst::UnionTag { place, class: VariantClass::Scalar, .. }
                    if !matches!(f.body.get(i + 1), Some(Inst::UnionData { place: p, .. }) if *p == place) => {
                        return Err(format!("broken scalar-variant store sequence at {}", at()));
                    }
                _ => {}
            }
        }
    }
    Ok(())
}
