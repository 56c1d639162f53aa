//! The compiled artifact: bytecode plus every read-only map the tracer needs.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::isa::Instr;
use crate::types::{TypeId, TypeMap};

/// Where a pointer lives, relative to the frame or static region it belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LocKind {
    Reg(u8),
    /// Byte offset from the canonical frame address (sp at function entry).
    Slot(i32),
    /// Byte offset inside the static region.
    Static(u32),
}

impl fmt::Display for LocKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LocKind::Reg(15) => write!(f, "fp"),
            LocKind::Reg(r) => write!(f, "r{r}"),
            LocKind::Slot(o) => write!(f, "cfa{o:+}"),
            LocKind::Static(o) => write!(f, "static+{o}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UnionCtx {
    pub disc: LocKind,
    /// Discriminant value that denotes the pointer variant.
    pub tag: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LocationRecord {
    pub kind: LocKind,
    pub pointee: TypeId,
    pub union_ctx: Option<UnionCtx>,
}

impl LocationRecord {
    pub fn plain(kind: LocKind, pointee: TypeId) -> Self {
        LocationRecord { kind, pointee, union_ctx: None }
    }

    /// Identity of the location within an entry; union records are keyed
    /// by tag too, since one data word can carry several pointer variants.
    pub fn key(&self) -> (LocKind, Option<u32>) {
        (self.kind, self.union_ctx.map(|u| u.tag))
    }
}

impl fmt::Display for LocationRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind, self.pointee)?;
        if let Some(u) = self.union_ctx {
            write!(f, "[{}=={}]", u.disc, u.tag)?;
        }
        Ok(())
    }
}

/// One sorted, duplicate-free list of records per program counter.
pub type Entry = Vec<LocationRecord>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationMap {
    pub func: u32,
    pub start: u32,
    pub entries: Vec<Entry>,
}

impl LocationMap {
    pub fn end(&self) -> u32 {
        self.start + self.entries.len() as u32
    }

    pub fn at(&self, pc: u32) -> Option<&Entry> {
        pc.checked_sub(self.start).and_then(|i| self.entries.get(i as usize))
    }
}

/// Frame layout rule for a pc range. The canonical frame address is
/// `sp + cfa_offset`; the return address sits at CFA+0.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnwindRow {
    pub start: u32,
    pub end: u32,
    pub cfa_offset: u32,
    pub saved_fp: Option<i32>,
    /// Callee-saved registers spilled in this frame, with CFA-relative slots.
    pub saved: Vec<(u8, i32)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionInfo {
    pub name: String,
    pub start: u32,
    pub end: u32,
    pub params: u8,
    pub allocator: bool,
    /// Frame bytes below the saved fp (0 when frameless).
    pub frame_size: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalInfo {
    pub name: String,
    pub offset: u32,
    pub ty: TypeId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramImage {
    pub code: Vec<Instr>,
    pub types: TypeMap,
    pub functions: Vec<FunctionInfo>,
    pub locmaps: Vec<LocationMap>,
    pub unwind: Vec<Vec<UnwindRow>>,
    pub static_map: Vec<LocationRecord>,
    pub static_data: Vec<u8>,
    pub globals: Vec<GlobalInfo>,
    pub entry: u32,
}

impl ProgramImage {
    pub fn empty() -> Self {
        ProgramImage {
            code: Vec::new(),
            types: TypeMap::new(),
            functions: Vec::new(),
            locmaps: Vec::new(),
            unwind: Vec::new(),
            static_map: Vec::new(),
            static_data: Vec::new(),
            globals: Vec::new(),
            entry: 0,
        }
    }

    pub fn static_size(&self) -> u64 {
        self.static_data.len() as u64
    }

    /// Function whose code range contains `pc`.
    pub fn function_at(&self, pc: u32) -> Option<u32> {
        let idx = self.functions.partition_point(|f| f.start <= pc);
        let f = idx.checked_sub(1)?;
        (pc < self.functions[f].end).then_some(f as u32)
    }

    pub fn function_by_name(&self, name: &str) -> Option<u32> {
        self.functions.iter().position(|f| f.name == name).map(|i| i as u32)
    }

    pub fn unwind_row(&self, func: u32, pc: u32) -> Option<&UnwindRow> {
        self.unwind.get(func as usize)?.iter().find(|r| r.start <= pc && pc < r.end)
    }

    /// Full location entry at `pc`, from the expanded maps.
    pub fn entry_at(&self, pc: u32) -> Option<(u32, &Entry)> {
        let f = self.function_at(pc)?;
        self.locmaps[f as usize].at(pc).map(|e| (f, e))
    }

    pub fn disassemble(&self) -> String {
        let mut out = String::new();
        for (fi, f) in self.functions.iter().enumerate() {
            out.push_str(&format!("{}{}:\n", if f.allocator { "@allocator " } else { "" }, f.name));
            for pc in f.start..f.end {
                let entry = &self.locmaps[fi].entries[(pc - f.start) as usize];
                let locs: Vec<String> = entry.iter().map(|r| r.to_string()).collect();
                out.push_str(&format!("  {pc:5}  {:<32} {{{}}}\n", self.code[pc as usize].to_string(), locs.join(", ")));
            }
        }
        out
    }
}
