//! The `.mts` snapshot file.
//!
//! Layout, little-endian: magic `MTS1`, version u16, image hash (32 bytes),
//! static size u64, thread count u32 with `{id u32, 18 x u64}` each, segment
//! count u32 with `{base u64, length u64, payload}` each, chunk count u32
//! with `{id u32, base u64, size u64, type u32, live u8, site u32}` each,
//! then a CRC32 of everything before it.

use thiserror::Error;

use crate::isa::NUM_EXPOSED_REGS;
use crate::mapfmt::wire::{Reader, Writer};
use crate::mapfmt::FormatError;
use crate::types::TypeId;
use crate::vm::{Chunk, Segment, Snapshot, ThreadRegs};

pub const SNAP_MAGIC: &[u8; 4] = b"MTS1";
pub const SNAP_VERSION: u16 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SnapError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("snapshot belongs to a different image")]
    ImageMismatch,
}

pub fn save_snapshot(s: &Snapshot) -> Vec<u8> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(SNAP_MAGIC);
    w.u16(SNAP_VERSION);
    w.buf.extend_from_slice(&s.image_hash);
    w.u64(s.static_size);
    w.u32(s.threads.len() as u32);
    for t in &s.threads {
        w.u32(t.id);
        for r in t.regs {
            w.u64(r);
        }
    }
    w.u32(s.segments.len() as u32);
    for seg in &s.segments {
        w.u64(seg.base);
        w.u64(8 * seg.words.len() as u64);
        for v in &seg.words {
            w.u64(*v);
        }
    }
    w.u32(s.chunks.len() as u32);
    for c in &s.chunks {
        put_chunk(&mut w, c);
    }
    let crc = crc32fast::hash(&w.buf);
    w.u32(crc);
    w.buf
}

pub(crate) fn put_chunk(w: &mut Writer, c: &Chunk) {
    w.u32(c.id);
    w.u64(c.base);
    w.u64(c.size);
    w.u32(c.ty.0);
    w.u8(c.live as u8);
    w.u32(c.site);
}

pub(crate) fn get_chunk(r: &mut Reader) -> Result<Chunk, FormatError> {
    Ok(Chunk { id: r.u32()?, base: r.u64()?, size: r.u64()?, ty: TypeId(r.u32()?), live: r.bool()?, site: r.u32()? })
}

/// Parses a snapshot file. With `expected`, rejects snapshots taken
/// under any other image hash.
pub fn load_snapshot(bytes: &[u8], expected: Option<&[u8; 32]>) -> Result<Snapshot, SnapError> {
    if bytes.len() < 4 || &bytes[..4] != SNAP_MAGIC {
        return Err(FormatError::BadMagic.into());
    }
    if bytes.len() < 10 {
        return Err(FormatError::Truncated.into());
    }
    let body = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..body]);
    if stored != computed {
        return Err(FormatError::Crc { stored, computed }.into());
    }
    let mut r = Reader::new(&bytes[4..body]);
    let v = r.u16()?;
    if v != SNAP_VERSION {
        return Err(FormatError::Version(v).into());
    }
    let image_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
    if expected.is_some_and(|e| *e != image_hash) {
        return Err(SnapError::ImageMismatch);
    }
    let static_size = r.u64()?;
    let n = bounded(r.u32()?, &r, 4 + 8 * NUM_EXPOSED_REGS)?;
    let mut threads = Vec::with_capacity(n);
    for _ in 0..n {
        let id = r.u32()?;
        let mut regs = [0u64; NUM_EXPOSED_REGS];
        for x in &mut regs {
            *x = r.u64()?;
        }
        threads.push(ThreadRegs { id, regs });
    }
    let n = bounded(r.u32()?, &r, 16)?;
    let mut segments = Vec::with_capacity(n);
    for _ in 0..n {
        let base = r.u64()?;
        let len = r.u64()?;
        if len % 8 != 0 || len > r.rest.len() as u64 {
            return Err(FormatError::Malformed(format!("segment length {len}")).into());
        }
        let words = (0..len / 8).map(|_| r.u64()).collect::<Result<Vec<_>, _>>()?;
        segments.push(Segment { base, words });
    }
    let n = bounded(r.u32()?, &r, 29)?;
    let chunks = (0..n).map(|_| get_chunk(&mut r)).collect::<Result<Vec<_>, _>>()?;
    if !r.is_empty() {
        return Err(FormatError::Malformed("trailing bytes".into()).into());
    }
    let s = Snapshot { image_hash, threads, segments, chunks, static_size };
    s.validate().map_err(FormatError::Malformed)?;
    Ok(s)
}

fn bounded(n: u32, r: &Reader, each: usize) -> Result<usize, FormatError> {
    if (n as usize).saturating_mul(each) > r.rest.len() {
        return Err(FormatError::Truncated);
    }
    Ok(n as usize)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::codegen::compile;
    use crate::vm::{Vm, VmConfig};

    fn snap() -> Snapshot {
        let src = "struct N { next: *N, v: int }\nglobal g: *N = null;\n\
            fn main() { g = alloc(N); g.next = alloc(N); let t: *N = alloc(N); free(pass t); print(g.v); }";
        let mut vm = Vm::new(Arc::new(compile(src).unwrap()), VmConfig::default());
        for _ in 0..25 {
            vm.step().unwrap();
        }
        vm.capture_snapshot()
    }

    #[test]
    fn round_trip_is_lossless() {
        let s = snap();
        assert!(s.chunks.iter().any(|c| !c.live));
        assert_eq!(load_snapshot(&save_snapshot(&s), Some(&s.image_hash)).unwrap(), s);
    }

    #[test]
    fn truncation_is_a_format_error() {
        let b = save_snapshot(&snap());
        for cut in [0, 3, 9, 40, b.len() - 1] {
            assert!(matches!(load_snapshot(&b[..cut], None), Err(SnapError::Format(_))), "cut {cut}");
        }
    }

    #[test]
    fn wrong_image_is_rejected() {
        let s = snap();
        let b = save_snapshot(&s);
        let mut other = s.image_hash;
        other[0] ^= 1;
        assert_eq!(load_snapshot(&b, Some(&other)), Err(SnapError::ImageMismatch));
        assert!(load_snapshot(&b, None).is_ok());
    }
}
