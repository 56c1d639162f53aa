//! The `.mtb` container: a compiled image with its maps, bit-exact.
//!
//! Layout: magic `MTM1`, version u16, endianness byte (1 = little), section
//! count u16, then sections `{kind u8, length u32, payload}` and a CRC32 of
//! every preceding byte. All six sections are always present, in kind order.

mod delta;
pub(crate) mod wire;

pub use delta::{CompressedLocMap, DeltaOp, DeltaRecord, LocKey, RESET_INTERVAL};

use thiserror::Error;

use crate::image::{
    Entry, FunctionInfo, GlobalInfo, LocKind, LocationMap, LocationRecord, ProgramImage, UnionCtx, UnwindRow,
};
use crate::isa::{BinOp, IndexLen, Instr, Reg, UnOp, VariantClass};
use crate::types::{Field, TypeDesc, TypeId, TypeMap, Variant};
use wire::{Reader, Writer};

pub const MAGIC: &[u8; 4] = b"MTM1";
pub const VERSION: u16 = 1;
pub const LITTLE_ENDIAN: u8 = 1;

pub const SEC_TYPEMAP: u8 = 1;
pub const SEC_FUNC_LOCMAP: u8 = 2;
pub const SEC_STATIC_LOCMAP: u8 = 3;
pub const SEC_UNWIND: u8 = 4;
pub const SEC_CODE: u8 = 5;
pub const SEC_SYMBOLS: u8 = 6;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    Version(u16),
    #[error("unsupported endianness marker {0}")]
    Endianness(u8),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Crc { stored: u32, computed: u32 },
    #[error("input truncated")]
    Truncated,
    #[error("malformed: {0}")]
    Malformed(String),
    #[error("input is not in canonical form")]
    NonCanonical,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("pc {pc} is outside function {func}")]
pub struct RangeError {
    pub func: u32,
    pub pc: u32,
}

/// Full location entry of `func` at `pc`.
pub fn locations_at(img: &ProgramImage, func: u32, pc: u32) -> Result<&Entry, RangeError> {
    img.locmaps.get(func as usize).and_then(|m| m.at(pc)).ok_or(RangeError { func, pc })
}

pub fn encode(img: &ProgramImage) -> Vec<u8> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(MAGIC);
    w.u16(VERSION);
    w.u8(LITTLE_ENDIAN);
    w.u16(6);
    let sections: [(u8, Vec<u8>); 6] = [
        (SEC_TYPEMAP, typemap_section(&img.types)),
        (SEC_FUNC_LOCMAP, func_locmap_section(&img.locmaps)),
        (SEC_STATIC_LOCMAP, static_section(img)),
        (SEC_UNWIND, unwind_section(&img.unwind)),
        (SEC_CODE, code_section(&img.code)),
        (SEC_SYMBOLS, symbols_section(img)),
    ];
    for (kind, payload) in sections {
        w.u8(kind);
        w.u32(payload.len() as u32);
        w.buf.extend_from_slice(&payload);
    }
    let crc = crc32fast::hash(&w.buf);
    w.u32(crc);
    w.buf
}

pub fn decode(bytes: &[u8]) -> Result<ProgramImage, FormatError> {
    let mut r = Reader::new(bytes);
    if r.take(4).map_err(|_| FormatError::BadMagic)? != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(FormatError::Version(version));
    }
    let endian = r.u8()?;
    if endian != LITTLE_ENDIAN {
        return Err(FormatError::Endianness(endian));
    }
    let count = r.u16()?;
    let mut sections = Vec::new();
    for _ in 0..count {
        let kind = r.u8()?;
        let len = r.u32()? as usize;
        sections.push((kind, r.take(len)?));
    }
    let body_len = bytes.len() - r.rest.len();
    let stored = r.u32()?;
    if !r.is_empty() {
        return Err(FormatError::Malformed("trailing bytes after checksum".into()));
    }
    let computed = crc32fast::hash(&bytes[..body_len]);
    if stored != computed {
        return Err(FormatError::Crc { stored, computed });
    }
    let kinds: Vec<u8> = sections.iter().map(|s| s.0).collect();
    if kinds != [SEC_TYPEMAP, SEC_FUNC_LOCMAP, SEC_STATIC_LOCMAP, SEC_UNWIND, SEC_CODE, SEC_SYMBOLS] {
        return Err(FormatError::Malformed(format!("unexpected section kinds {kinds:?}")));
    }
    let mut img = ProgramImage::empty();
    img.types = read_all(sections[0].1, read_typemap)?;
    img.locmaps = read_all(sections[1].1, read_func_locmaps)?;
    let (data, map) = read_all(sections[2].1, read_static)?;
    img.static_data = data;
    img.static_map = map;
    img.unwind = read_all(sections[3].1, read_unwind)?;
    img.code = read_all(sections[4].1, read_code)?;
    let (entry, functions, globals) = read_all(sections[5].1, read_symbols)?;
    img.entry = entry;
    img.functions = functions;
    img.globals = globals;
    if encode(&img) != bytes {
        return Err(FormatError::NonCanonical);
    }
    Ok(img)
}

fn read_all<'a, T>(payload: &'a [u8], f: impl FnOnce(&mut Reader<'a>) -> Result<T, FormatError>) -> Result<T, FormatError> {
    let mut r = Reader::new(payload);
    let v = f(&mut r)?;
    if !r.is_empty() {
        return Err(FormatError::Malformed("section has trailing bytes".into()));
    }
    Ok(v)
}

/// Size of the location-map sections in the naive form: every pc carries
/// its full entry.
pub fn naive_locmap_size(img: &ProgramImage) -> usize {
    let mut w = Writer::default();
    w.uv(img.locmaps.len() as u64);
    for m in &img.locmaps {
        w.uv(m.func as u64);
        w.uv(m.start as u64);
        w.uv(m.entries.len() as u64);
        for e in &m.entries {
            write_records(&mut w, e);
        }
    }
    w.buf.len()
}

/// Size of the merged, delta-encoded location-map section payload.
pub fn encoded_locmap_size(img: &ProgramImage) -> usize {
    func_locmap_section(&img.locmaps).len()
}

// ---- location records ----

fn write_kind(w: &mut Writer, k: LocKind) {
    match k {
        LocKind::Reg(r) => {
            w.u8(0);
            w.u8(r);
        }
        LocKind::Slot(o) => {
            w.u8(1);
            w.sv(o as i64);
        }
        LocKind::Static(o) => {
            w.u8(2);
            w.uv(o as u64);
        }
    }
}

fn read_kind(r: &mut Reader) -> Result<LocKind, FormatError> {
    match r.u8()? {
        0 => Ok(LocKind::Reg(r.u8()?)),
        1 => Ok(LocKind::Slot(r.sv32()?)),
        2 => Ok(LocKind::Static(r.uv32()?)),
        k => Err(FormatError::Malformed(format!("bad location kind {k}"))),
    }
}

fn write_record(w: &mut Writer, rec: &LocationRecord) {
    write_kind(w, rec.kind);
    w.uv(rec.pointee.0 as u64);
    match rec.union_ctx {
        None => w.u8(0),
        Some(u) => {
            w.u8(1);
            write_kind(w, u.disc);
            w.uv(u.tag as u64);
        }
    }
}

fn read_record(r: &mut Reader) -> Result<LocationRecord, FormatError> {
    let kind = read_kind(r)?;
    let pointee = TypeId(r.uv32()?);
    let union_ctx = if r.bool()? { Some(UnionCtx { disc: read_kind(r)?, tag: r.uv32()? }) } else { None };
    Ok(LocationRecord { kind, pointee, union_ctx })
}

fn write_records(w: &mut Writer, e: &[LocationRecord]) {
    w.uv(e.len() as u64);
    for rec in e {
        write_record(w, rec);
    }
}

fn read_records(r: &mut Reader) -> Result<Entry, FormatError> {
    let n = r.count()?;
    (0..n).map(|_| read_record(r)).collect()
}

fn write_key(w: &mut Writer, k: LocKey) {
    write_kind(w, k.0);
    match k.1 {
        None => w.u8(0),
        Some(t) => {
            w.u8(1);
            w.uv(t as u64);
        }
    }
}

fn read_key(r: &mut Reader) -> Result<LocKey, FormatError> {
    let kind = read_kind(r)?;
    let tag = if r.bool()? { Some(r.uv32()?) } else { None };
    Ok((kind, tag))
}

pub(crate) fn record_list_size(e: &[LocationRecord]) -> usize {
    let mut w = Writer::default();
    write_records(&mut w, e);
    w.buf.len()
}

pub(crate) fn op_size(op: &DeltaOp) -> usize {
    let mut w = Writer::default();
    write_op(&mut w, op);
    w.buf.len()
}

fn write_op(w: &mut Writer, op: &DeltaOp) {
    match op {
        DeltaOp::Reset(e) => write_records(w, e),
        DeltaOp::Add(rec) => write_record(w, rec),
        DeltaOp::Remove(k) => write_key(w, *k),
    }
}

// ---- sections ----

fn typemap_section(t: &TypeMap) -> Vec<u8> {
    let mut w = Writer::default();
    w.uv(t.len() as u64);
    for (id, desc) in t.iter() {
        w.str(t.name(id));
        match desc {
            TypeDesc::Scalar { size } => {
                w.u8(0);
                w.uv(*size as u64);
            }
            TypeDesc::Pointer { pointee } => {
                w.u8(1);
                w.uv(pointee.0 as u64);
            }
            TypeDesc::Struct { size, fields } => {
                w.u8(2);
                w.uv(*size as u64);
                w.uv(fields.len() as u64);
                for f in fields {
                    w.uv(f.offset as u64);
                    w.uv(f.ty.0 as u64);
                }
            }
            TypeDesc::Union { size, disc_offset, data_offset, variants } => {
                w.u8(3);
                w.uv(*size as u64);
                w.uv(*disc_offset as u64);
                w.uv(*data_offset as u64);
                w.uv(variants.len() as u64);
                for v in variants {
                    w.uv(v.tag as u64);
                    w.uv(v.ty.0 as u64);
                }
            }
            TypeDesc::Array { elem, count } => {
                w.u8(4);
                w.uv(elem.0 as u64);
                w.uv(*count as u64);
            }
            TypeDesc::DynArray { elem } => {
                w.u8(5);
                w.uv(elem.0 as u64);
            }
        }
    }
    w.buf
}

fn read_typemap(r: &mut Reader) -> Result<TypeMap, FormatError> {
    let n = r.count()?;
    let mut descs = Vec::with_capacity(n);
    let mut names = Vec::with_capacity(n);
    for _ in 0..n {
        names.push(r.str()?);
        let d = match r.u8()? {
            0 => TypeDesc::Scalar { size: r.uv32()? },
            1 => TypeDesc::Pointer { pointee: TypeId(r.uv32()?) },
            2 => {
                let size = r.uv32()?;
                let k = r.count()?;
                let fields =
                    (0..k).map(|_| Ok(Field { offset: r.uv32()?, ty: TypeId(r.uv32()?) })).collect::<Result<_, _>>()?;
                TypeDesc::Struct { size, fields }
            }
            3 => {
                let size = r.uv32()?;
                let disc_offset = r.uv32()?;
                let data_offset = r.uv32()?;
                let k = r.count()?;
                let variants =
                    (0..k).map(|_| Ok(Variant { tag: r.uv32()?, ty: TypeId(r.uv32()?) })).collect::<Result<_, _>>()?;
                TypeDesc::Union { size, disc_offset, data_offset, variants }
            }
            4 => TypeDesc::Array { elem: TypeId(r.uv32()?), count: r.uv32()? },
            5 => TypeDesc::DynArray { elem: TypeId(r.uv32()?) },
            k => return Err(FormatError::Malformed(format!("bad type tag {k}"))),
        };
        descs.push(d);
    }
    let t = TypeMap::from_parts(descs, names);
    t.validate().map_err(|id| FormatError::Malformed(format!("type {} is invalid", id.0)))?;
    Ok(t)
}

fn func_locmap_section(maps: &[LocationMap]) -> Vec<u8> {
    let mut w = Writer::default();
    w.uv(maps.len() as u64);
    for m in maps {
        let c = CompressedLocMap::compress(m);
        w.uv(c.func as u64);
        w.uv(c.start as u64);
        w.uv(c.len as u64);
        w.uv(c.records.len() as u64);
        for rec in &c.records {
            w.uv(rec.pc_delta as u64);
            w.u8(rec.op.code());
            write_op(&mut w, &rec.op);
        }
    }
    w.buf
}

fn read_func_locmaps(r: &mut Reader) -> Result<Vec<LocationMap>, FormatError> {
    let n = r.count()?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let func = r.uv32()?;
        let start = r.uv32()?;
        let len = r.uv32()?;
        let k = r.count()?;
        let mut records = Vec::with_capacity(k);
        let mut pc = 0u64;
        for i in 0..k {
            let pc_delta = r.uv32()?;
            pc += pc_delta as u64;
            let op = match r.u8()? {
                0 => DeltaOp::Reset(read_records(r)?),
                1 => DeltaOp::Add(read_record(r)?),
                2 => DeltaOp::Remove(read_key(r)?),
                o => return Err(FormatError::Malformed(format!("bad delta op {o}"))),
            };
            if i == 0 && (pc_delta != 0 || !matches!(op, DeltaOp::Reset(_))) {
                return Err(FormatError::Malformed("location map must start with a RESET at its first pc".into()));
            }
            if pc >= len as u64 {
                return Err(FormatError::Malformed("delta record past the end of its function".into()));
            }
            records.push(DeltaRecord { pc_delta, op });
        }
        if k == 0 && len > 0 {
            return Err(FormatError::Malformed("non-empty function without records".into()));
        }
        out.push(CompressedLocMap { func, start, len, records }.expand());
    }
    Ok(out)
}

fn static_section(img: &ProgramImage) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(&img.static_data);
    write_records(&mut w, &img.static_map);
    w.buf
}

fn read_static(r: &mut Reader) -> Result<(Vec<u8>, Vec<LocationRecord>), FormatError> {
    let data = r.bytes()?.to_vec();
    let map = read_records(r)?;
    Ok((data, map))
}

fn unwind_section(rows: &[Vec<UnwindRow>]) -> Vec<u8> {
    let mut w = Writer::default();
    w.uv(rows.len() as u64);
    for f in rows {
        w.uv(f.len() as u64);
        for row in f {
            w.uv(row.start as u64);
            w.uv((row.end - row.start) as u64);
            w.uv(row.cfa_offset as u64);
            match row.saved_fp {
                None => w.u8(0),
                Some(o) => {
                    w.u8(1);
                    w.sv(o as i64);
                }
            }
            w.uv(row.saved.len() as u64);
            for (reg, off) in &row.saved {
                w.u8(*reg);
                w.sv(*off as i64);
            }
        }
    }
    w.buf
}

fn read_unwind(r: &mut Reader) -> Result<Vec<Vec<UnwindRow>>, FormatError> {
    let n = r.count()?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let k = r.count()?;
        let mut rows = Vec::with_capacity(k);
        for _ in 0..k {
            let start = r.uv32()?;
            let end = start
                .checked_add(r.uv32()?)
                .ok_or_else(|| FormatError::Malformed("unwind row overflows".into()))?;
            let cfa_offset = r.uv32()?;
            let saved_fp = if r.bool()? { Some(r.sv32()?) } else { None };
            let s = r.count()?;
            let saved = (0..s).map(|_| Ok((r.u8()?, r.sv32()?))).collect::<Result<_, FormatError>>()?;
            rows.push(UnwindRow { start, end, cfa_offset, saved_fp, saved });
        }
        out.push(rows);
    }
    Ok(out)
}

fn symbols_section(img: &ProgramImage) -> Vec<u8> {
    let mut w = Writer::default();
    w.uv(img.entry as u64);
    w.uv(img.functions.len() as u64);
    for f in &img.functions {
        w.str(&f.name);
        w.uv(f.start as u64);
        w.uv((f.end - f.start) as u64);
        w.u8(f.params);
        w.bool(f.allocator);
        w.uv(f.frame_size as u64);
    }
    w.uv(img.globals.len() as u64);
    for g in &img.globals {
        w.str(&g.name);
        w.uv(g.offset as u64);
        w.uv(g.ty.0 as u64);
    }
    w.buf
}

type Symbols = (u32, Vec<FunctionInfo>, Vec<GlobalInfo>);

fn read_symbols(r: &mut Reader) -> Result<Symbols, FormatError> {
    let entry = r.uv32()?;
    let n = r.count()?;
    let mut functions = Vec::with_capacity(n);
    for _ in 0..n {
        let name = r.str()?;
        let start = r.uv32()?;
        let end = start.checked_add(r.uv32()?).ok_or_else(|| FormatError::Malformed("function range overflows".into()))?;
        functions.push(FunctionInfo { name, start, end, params: r.u8()?, allocator: r.bool()?, frame_size: r.uv32()? });
    }
    let g = r.count()?;
    let mut globals = Vec::with_capacity(g);
    for _ in 0..g {
        globals.push(GlobalInfo { name: r.str()?, offset: r.uv32()?, ty: TypeId(r.uv32()?) });
    }
    Ok((entry, functions, globals))
}

// ---- code ----

fn reg(w: &mut Writer, r: Reg) {
    w.u8(r.0);
}

fn rd_reg(r: &mut Reader) -> Result<Reg, FormatError> {
    let v = r.u8()?;
    if v as usize >= crate::isa::NUM_GPRS {
        return Err(FormatError::Malformed(format!("bad register {v}")));
    }
    Ok(Reg(v))
}

fn code_section(code: &[Instr]) -> Vec<u8> {
    let mut w = Writer::default();
    w.uv(code.len() as u64);
    for i in code {
        write_instr(&mut w, i);
    }
    w.buf
}

fn read_code(r: &mut Reader) -> Result<Vec<Instr>, FormatError> {
    let n = r.count()?;
    (0..n).map(|_| read_instr(r)).collect()
}

fn write_instr(w: &mut Writer, i: &Instr) {
    match *i {
        Instr::Li { rd, imm } => {
            w.u8(0);
            reg(w, rd);
            w.sv(imm);
        }
        Instr::Clr { rd } => {
            w.u8(1);
            reg(w, rd);
        }
        Instr::Mov { rd, rs } => {
            w.u8(2);
            reg(w, rd);
            reg(w, rs);
        }
        Instr::Pass { rd, rs } => {
            w.u8(3);
            reg(w, rd);
            reg(w, rs);
        }
        Instr::PassM { rd, base, off } => {
            w.u8(4);
            reg(w, rd);
            reg(w, base);
            w.sv(off as i64);
        }
        Instr::Bin { op, rd, ra, rb } => {
            w.u8(5);
            w.u8(op.code());
            reg(w, rd);
            reg(w, ra);
            reg(w, rb);
        }
        Instr::Un { op, rd, rs } => {
            w.u8(6);
            w.u8(matches!(op, UnOp::Not) as u8);
            reg(w, rd);
            reg(w, rs);
        }
        Instr::Ld { rd, base, off } => {
            w.u8(7);
            reg(w, rd);
            reg(w, base);
            w.sv(off as i64);
        }
        Instr::St { base, off, rs } => {
            w.u8(8);
            reg(w, base);
            w.sv(off as i64);
            reg(w, rs);
        }
        Instr::StTag { base, off, tag, class } => {
            w.u8(9);
            reg(w, base);
            w.sv(off as i64);
            w.uv(tag as u64);
            match class {
                VariantClass::Scalar => w.u8(0),
                VariantClass::Pointer(t) => {
                    w.u8(1);
                    w.uv(t.0 as u64);
                }
            }
        }
        Instr::Lea { rd, off, pointee } => {
            w.u8(10);
            reg(w, rd);
            w.uv(off as u64);
            w.uv(pointee.0 as u64);
        }
        Instr::AddP { rd, rs, off, pointee } => {
            w.u8(11);
            reg(w, rd);
            reg(w, rs);
            w.uv(off as u64);
            w.uv(pointee.0 as u64);
        }
        Instr::IdxP { rd, base, idx, elem_size, len, pointee } => {
            w.u8(12);
            reg(w, rd);
            reg(w, base);
            reg(w, idx);
            w.uv(elem_size as u64);
            match len {
                IndexLen::Fixed(n) => {
                    w.u8(0);
                    w.uv(n as u64);
                }
                IndexLen::Dynamic => w.u8(1),
            }
            w.uv(pointee.0 as u64);
        }
        Instr::Alloc { rd, ty } => {
            w.u8(13);
            reg(w, rd);
            w.uv(ty.0 as u64);
        }
        Instr::AllocArr { rd, ty, count, elem_size } => {
            w.u8(14);
            reg(w, rd);
            w.uv(ty.0 as u64);
            reg(w, count);
            w.uv(elem_size as u64);
        }
        Instr::Free { rs } => {
            w.u8(15);
            reg(w, rs);
        }
        Instr::Print { rs } => {
            w.u8(16);
            reg(w, rs);
        }
        Instr::Rand { rd } => {
            w.u8(17);
            reg(w, rd);
        }
        Instr::Jmp { target } => {
            w.u8(18);
            w.uv(target as u64);
        }
        Instr::Br { rs, target } => {
            w.u8(19);
            reg(w, rs);
            w.uv(target as u64);
        }
        Instr::Brz { rs, target } => {
            w.u8(20);
            reg(w, rs);
            w.uv(target as u64);
        }
        Instr::Call { func } => {
            w.u8(21);
            w.uv(func as u64);
        }
        Instr::Spawn { func, nargs } => {
            w.u8(22);
            w.uv(func as u64);
            w.u8(nargs);
        }
        Instr::Enter { size } => {
            w.u8(23);
            w.uv(size as u64);
        }
        Instr::Leave => w.u8(24),
        Instr::Save { rs, off } => {
            w.u8(25);
            reg(w, rs);
            w.sv(off as i64);
        }
        Instr::Restore { rd, off } => {
            w.u8(26);
            reg(w, rd);
            w.sv(off as i64);
        }
        Instr::Ret => w.u8(27),
    }
}

fn read_instr(r: &mut Reader) -> Result<Instr, FormatError> {
    let op = r.u8()?;
    let ty = |r: &mut Reader| -> Result<TypeId, FormatError> { Ok(TypeId(r.uv32()?)) };
    Ok(match op {
        0 => Instr::Li { rd: rd_reg(r)?, imm: r.sv()? },
        1 => Instr::Clr { rd: rd_reg(r)? },
        2 => Instr::Mov { rd: rd_reg(r)?, rs: rd_reg(r)? },
        3 => Instr::Pass { rd: rd_reg(r)?, rs: rd_reg(r)? },
        4 => Instr::PassM { rd: rd_reg(r)?, base: rd_reg(r)?, off: r.sv32()? },
        5 => {
            let code = r.u8()?;
            let op = BinOp::from_code(code).ok_or_else(|| FormatError::Malformed(format!("bad binop {code}")))?;
            Instr::Bin { op, rd: rd_reg(r)?, ra: rd_reg(r)?, rb: rd_reg(r)? }
        }
        6 => {
            let op = match r.u8()? {
                0 => UnOp::Neg,
                1 => UnOp::Not,
                c => return Err(FormatError::Malformed(format!("bad unop {c}"))),
            };
            Instr::Un { op, rd: rd_reg(r)?, rs: rd_reg(r)? }
        }
        7 => Instr::Ld { rd: rd_reg(r)?, base: rd_reg(r)?, off: r.sv32()? },
        8 => Instr::St { base: rd_reg(r)?, off: r.sv32()?, rs: rd_reg(r)? },
        9 => {
            let base = rd_reg(r)?;
            let off = r.sv32()?;
            let tag = r.uv32()?;
            let class = match r.u8()? {
                0 => VariantClass::Scalar,
                1 => VariantClass::Pointer(ty(r)?),
                c => return Err(FormatError::Malformed(format!("bad variant class {c}"))),
            };
            Instr::StTag { base, off, tag, class }
        }
        10 => Instr::Lea { rd: rd_reg(r)?, off: r.uv32()?, pointee: ty(r)? },
        11 => Instr::AddP { rd: rd_reg(r)?, rs: rd_reg(r)?, off: r.uv32()?, pointee: ty(r)? },
        12 => {
            let rd = rd_reg(r)?;
            let base = rd_reg(r)?;
            let idx = rd_reg(r)?;
            let elem_size = r.uv32()?;
            let len = match r.u8()? {
                0 => IndexLen::Fixed(r.uv32()?),
                1 => IndexLen::Dynamic,
                c => return Err(FormatError::Malformed(format!("bad index length kind {c}"))),
            };
            Instr::IdxP { rd, base, idx, elem_size, len, pointee: ty(r)? }
        }
        13 => Instr::Alloc { rd: rd_reg(r)?, ty: ty(r)? },
        14 => Instr::AllocArr { rd: rd_reg(r)?, ty: ty(r)?, count: rd_reg(r)?, elem_size: r.uv32()? },
        15 => Instr::Free { rs: rd_reg(r)? },
        16 => Instr::Print { rs: rd_reg(r)? },
        17 => Instr::Rand { rd: rd_reg(r)? },
        18 => Instr::Jmp { target: r.uv32()? },
        19 => Instr::Br { rs: rd_reg(r)?, target: r.uv32()? },
        20 => Instr::Brz { rs: rd_reg(r)?, target: r.uv32()? },
        21 => Instr::Call { func: r.uv32()? },
        22 => Instr::Spawn { func: r.uv32()?, nargs: r.u8()? },
        23 => Instr::Enter { size: r.uv32()? },
        24 => Instr::Leave,
        25 => Instr::Save { rs: rd_reg(r)?, off: r.sv32()? },
        26 => Instr::Restore { rd: rd_reg(r)?, off: r.sv32()? },
        27 => Instr::Ret,
        o => return Err(FormatError::Malformed(format!("bad opcode {o}"))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegen::compile;

    const LIST: &str = "struct N { next: *N, v: int }\nunion U { P: *N, I: int }\nglobal head: *N = null;\nglobal k: int = 7;\n\
        fn push(h: *N, v: int) -> *N { let n: *N = alloc(N); n.next = h; n.v = v; return n; }\n\
        fn main() { let i: int = 0; let u: U; while i < 10 { head = push(head, i); i = i + 1; } u = P(head); \
        match u { P(x) => { print(x.v); } _ => {} } let a: *dynarray int = alloc_array(int, 4); a[2] = 5; print(a[2]); }";

    #[test]
    fn round_trip_is_identity() {
        let img = compile(LIST).unwrap();
        let bytes = encode(&img);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, img);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn empty_image_is_header_sections_and_crc() {
        let bytes = encode(&ProgramImage::empty());
        let back = decode(&bytes).unwrap();
        assert_eq!(back.code.len(), 0);
        assert_eq!(&bytes[..4], MAGIC);
        assert_eq!(u16::from_le_bytes([bytes[7], bytes[8]]), 6);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode(&compile(LIST).unwrap());
        for i in 9..bytes.len() - 4 {
            let mut b = bytes.clone();
            b[i] ^= 0x40;
            assert!(decode(&b).is_err(), "flip at {i} accepted");
        }
        let mut b = bytes.clone();
        b[bytes.len() / 2] ^= 1;
        assert!(matches!(decode(&b), Err(FormatError::Crc { .. }) | Err(FormatError::Truncated)));
        let mut b = bytes.clone();
        b[..4].copy_from_slice(b"XXXX");
        assert_eq!(decode(&b), Err(FormatError::BadMagic));
        let mut b = bytes.clone();
        b[4] = 9;
        assert_eq!(decode(&b), Err(FormatError::Version(9)));
        for n in [0, 3, 10, bytes.len() - 1] {
            assert!(decode(&bytes[..n]).is_err());
        }
    }

    #[test]
    fn payload_flip_reports_crc() {
        let bytes = encode(&compile(LIST).unwrap());
        let mut at = 9;
        let mut code_mid = 0;
        for _ in 0..6 {
            let len = u32::from_le_bytes(bytes[at + 1..at + 5].try_into().unwrap()) as usize;
            if bytes[at] == SEC_CODE {
                code_mid = at + 5 + len / 2;
            }
            at += 5 + len;
        }
        let mut b = bytes.clone();
        b[code_mid] = b[code_mid].wrapping_add(1);
        assert!(matches!(decode(&b), Err(FormatError::Crc { .. })));
    }

    #[test]
    fn merged_form_beats_naive() {
        let img = compile(LIST).unwrap();
        assert!(encoded_locmap_size(&img) < naive_locmap_size(&img));
    }

    #[test]
    fn locations_at_checks_range() {
        let img = compile(LIST).unwrap();
        let main = img.function_by_name("main").unwrap();
        let f = &img.functions[main as usize];
        assert!(locations_at(&img, main, f.start).unwrap().is_empty());
        assert!(locations_at(&img, main, f.end).is_err());
        assert!(locations_at(&img, 99, 0).is_err());
    }
}
