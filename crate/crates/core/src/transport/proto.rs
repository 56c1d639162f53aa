//! Debug-stub wire protocol: `u32` little-endian length, opcode byte,
//! payload. The length counts the opcode and payload. A response carries
//! the request opcode with the high bit set, or `0xFF` and a `u16` code.

use std::io::{self, Read, Write};

use crate::isa::NUM_EXPOSED_REGS;
use crate::mapfmt::wire::{Reader, Writer};
use crate::mapfmt::FormatError;
use crate::types::TypeId;
use crate::vm::Chunk;

use super::snapfile::{get_chunk, put_chunk};

pub const PROTOCOL_VERSION: u16 = 1;
pub const MAX_READ: u32 = 64 * 1024;
pub const MAX_FRAME: u32 = 16 << 20;

pub const OP_HELLO: u8 = 0x01;
pub const OP_LIST_THREADS: u8 = 0x02;
pub const OP_GET_REGS: u8 = 0x03;
pub const OP_READ_MEM: u8 = 0x04;
pub const OP_GET_ALLOC_TABLE: u8 = 0x05;
pub const OP_GET_STATIC_INFO: u8 = 0x06;
pub const OP_HALT: u8 = 0x07;
pub const OP_RESUME: u8 = 0x08;
pub const OP_WRITE_MEM: u8 = 0x09;
pub const OP_SET_REG: u8 = 0x0A;
pub const OP_WAIT_STOP: u8 = 0x0B;
pub const OP_EVICT_CHUNK: u8 = 0x0C;
pub const OP_REINSTATE_CHUNK: u8 = 0x0D;
pub const OP_ERROR: u8 = 0xFF;

pub const ERR_UNKNOWN_OPCODE: u16 = 1;
pub const ERR_BAD_THREAD: u16 = 2;
pub const ERR_ADDRESS: u16 = 3;
pub const ERR_NOT_HALTED: u16 = 4;
pub const ERR_MALFORMED: u16 = 5;
pub const ERR_BAD_CHUNK: u16 = 6;
pub const ERR_OUT_OF_MEMORY: u16 = 7;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Request {
    Hello,
    ListThreads,
    GetRegs { tid: u32 },
    ReadMem { addr: u64, len: u32 },
    GetAllocTable,
    GetStaticInfo,
    Halt,
    Resume,
    WriteMem { addr: u64, data: Vec<u8> },
    SetReg { tid: u32, reg: u8, value: u64 },
    /// Blocks until the guest stops: halted, finished or trapped.
    WaitStop,
    /// Frees a live chunk and returns its contents.
    EvictChunk { id: u32 },
    /// Allocates a chunk for the contents of evicted chunk `old`.
    ReinstateChunk { old: u32, ty: TypeId, size: u64, data: Vec<u8> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StopReason {
    Halted,
    Finished,
    Sentinel { chunk: u32, offset: u32 },
    OutOfMemory { size: u64 },
    Trap(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Response {
    Hello { version: u16, image_hash: [u8; 32], halted: bool },
    Threads(Vec<u32>),
    Regs([u64; NUM_EXPOSED_REGS]),
    Mem(Vec<u8>),
    AllocTable { arena_len: u64, chunks: Vec<Chunk> },
    StaticInfo { base: u64, size: u64 },
    Ack,
    Stopped { reason: StopReason, steps: u64 },
    Evicted { chunk: Chunk, data: Vec<u8> },
    Reinstated(Chunk),
    Error(u16),
}

impl Request {
    pub fn opcode(&self) -> u8 {
        match self {
            Request::Hello => OP_HELLO,
            Request::ListThreads => OP_LIST_THREADS,
            Request::GetRegs { .. } => OP_GET_REGS,
            Request::ReadMem { .. } => OP_READ_MEM,
            Request::GetAllocTable => OP_GET_ALLOC_TABLE,
            Request::GetStaticInfo => OP_GET_STATIC_INFO,
            Request::Halt => OP_HALT,
            Request::Resume => OP_RESUME,
            Request::WriteMem { .. } => OP_WRITE_MEM,
            Request::SetReg { .. } => OP_SET_REG,
            Request::WaitStop => OP_WAIT_STOP,
            Request::EvictChunk { .. } => OP_EVICT_CHUNK,
            Request::ReinstateChunk { .. } => OP_REINSTATE_CHUNK,
        }
    }

    pub fn payload(&self) -> Vec<u8> {
        let mut w = Writer::default();
        match self {
            Request::GetRegs { tid } => w.u32(*tid),
            Request::ReadMem { addr, len } => {
                w.u64(*addr);
                w.u32(*len);
            }
            Request::WriteMem { addr, data } => {
                w.u64(*addr);
                w.buf.extend_from_slice(data);
            }
            Request::SetReg { tid, reg, value } => {
                w.u32(*tid);
                w.u8(*reg);
                w.u64(*value);
            }
            Request::EvictChunk { id } => w.u32(*id),
            Request::ReinstateChunk { old, ty, size, data } => {
                w.u32(*old);
                w.u32(ty.0);
                w.u64(*size);
                w.buf.extend_from_slice(data);
            }
            _ => {}
        }
        w.buf
    }

    /// `Ok(None)` for an opcode this protocol does not define.
    pub fn decode(op: u8, payload: &[u8]) -> Result<Option<Request>, FormatError> {
        let mut r = Reader::new(payload);
        let req = match op {
            OP_HELLO => Request::Hello,
            OP_LIST_THREADS => Request::ListThreads,
            OP_GET_REGS => Request::GetRegs { tid: r.u32()? },
            OP_READ_MEM => Request::ReadMem { addr: r.u64()?, len: r.u32()? },
            OP_GET_ALLOC_TABLE => Request::GetAllocTable,
            OP_GET_STATIC_INFO => Request::GetStaticInfo,
            OP_HALT => Request::Halt,
            OP_RESUME => Request::Resume,
            OP_WRITE_MEM => {
                let addr = r.u64()?;
                Request::WriteMem { addr, data: std::mem::take(&mut r.rest).to_vec() }
            }
            OP_SET_REG => Request::SetReg { tid: r.u32()?, reg: r.u8()?, value: r.u64()? },
            OP_WAIT_STOP => Request::WaitStop,
            OP_EVICT_CHUNK => Request::EvictChunk { id: r.u32()? },
            OP_REINSTATE_CHUNK => {
                let (old, ty, size) = (r.u32()?, TypeId(r.u32()?), r.u64()?);
                Request::ReinstateChunk { old, ty, size, data: std::mem::take(&mut r.rest).to_vec() }
            }
            _ => return Ok(None),
        };
        if !r.is_empty() {
            return Err(FormatError::Malformed("trailing request bytes".into()));
        }
        Ok(Some(req))
    }
}

fn put_reason(w: &mut Writer, reason: &StopReason) {
    match reason {
        StopReason::Halted => w.u8(0),
        StopReason::Finished => w.u8(1),
        StopReason::Sentinel { chunk, offset } => {
            w.u8(2);
            w.u32(*chunk);
            w.u32(*offset);
        }
        StopReason::OutOfMemory { size } => {
            w.u8(3);
            w.u64(*size);
        }
        StopReason::Trap(m) => {
            w.u8(4);
            w.str(m);
        }
    }
}

fn get_reason(r: &mut Reader) -> Result<StopReason, FormatError> {
    Ok(match r.u8()? {
        0 => StopReason::Halted,
        1 => StopReason::Finished,
        2 => StopReason::Sentinel { chunk: r.u32()?, offset: r.u32()? },
        3 => StopReason::OutOfMemory { size: r.u64()? },
        4 => StopReason::Trap(r.str()?),
        k => return Err(FormatError::Malformed(format!("stop reason {k}"))),
    })
}

impl Response {
    /// Opcode and payload, given the opcode of the request it answers.
    pub fn encode(&self, req_op: u8) -> (u8, Vec<u8>) {
        let mut w = Writer::default();
        match self {
            Response::Error(code) => {
                w.u16(*code);
                return (OP_ERROR, w.buf);
            }
            Response::Hello { version, image_hash, halted } => {
                w.u16(*version);
                w.buf.extend_from_slice(image_hash);
                w.bool(*halted);
            }
            Response::Threads(ids) => {
                w.u32(ids.len() as u32);
                for id in ids {
                    w.u32(*id);
                }
            }
            Response::Regs(regs) => {
                for r in regs {
                    w.u64(*r);
                }
            }
            Response::Mem(data) => w.buf.extend_from_slice(data),
            Response::AllocTable { arena_len, chunks } => {
                w.u64(*arena_len);
                w.u32(chunks.len() as u32);
                for c in chunks {
                    put_chunk(&mut w, c);
                }
            }
            Response::StaticInfo { base, size } => {
                w.u64(*base);
                w.u64(*size);
            }
            Response::Ack => {}
            Response::Stopped { reason, steps } => {
                put_reason(&mut w, reason);
                w.u64(*steps);
            }
            Response::Evicted { chunk, data } => {
                put_chunk(&mut w, chunk);
                w.buf.extend_from_slice(data);
            }
            Response::Reinstated(c) => put_chunk(&mut w, c),
        }
        (req_op | 0x80, w.buf)
    }

    pub fn decode(req_op: u8, op: u8, payload: &[u8]) -> Result<Response, FormatError> {
        let mut r = Reader::new(payload);
        if op == OP_ERROR {
            let code = r.u16()?;
            return Ok(Response::Error(code));
        }
        if op != req_op | 0x80 {
            return Err(FormatError::Malformed(format!("response opcode {op:#x} for request {req_op:#x}")));
        }
        let resp = match req_op {
            OP_HELLO => Response::Hello {
                version: r.u16()?,
                image_hash: r.take(32)?.try_into().unwrap(),
                halted: r.bool()?,
            },
            OP_LIST_THREADS => {
                let n = r.u32()? as usize;
                if n * 4 > r.rest.len() {
                    return Err(FormatError::Truncated);
                }
                Response::Threads((0..n).map(|_| r.u32()).collect::<Result<_, _>>()?)
            }
            OP_GET_REGS => {
                let mut regs = [0u64; NUM_EXPOSED_REGS];
                for x in &mut regs {
                    *x = r.u64()?;
                }
                Response::Regs(regs)
            }
            OP_READ_MEM => Response::Mem(std::mem::take(&mut r.rest).to_vec()),
            OP_GET_ALLOC_TABLE => {
                let arena_len = r.u64()?;
                let n = r.u32()? as usize;
                if n > r.rest.len() {
                    return Err(FormatError::Truncated);
                }
                let chunks = (0..n).map(|_| get_chunk(&mut r)).collect::<Result<_, _>>()?;
                Response::AllocTable { arena_len, chunks }
            }
            OP_GET_STATIC_INFO => Response::StaticInfo { base: r.u64()?, size: r.u64()? },
            OP_HALT | OP_RESUME | OP_WRITE_MEM | OP_SET_REG => Response::Ack,
            OP_WAIT_STOP => Response::Stopped { reason: get_reason(&mut r)?, steps: r.u64()? },
            OP_EVICT_CHUNK => {
                let chunk = get_chunk(&mut r)?;
                Response::Evicted { chunk, data: std::mem::take(&mut r.rest).to_vec() }
            }
            OP_REINSTATE_CHUNK => Response::Reinstated(get_chunk(&mut r)?),
            _ => return Err(FormatError::Malformed(format!("unknown request opcode {req_op:#x}"))),
        };
        if !r.is_empty() {
            return Err(FormatError::Malformed("trailing response bytes".into()));
        }
        Ok(resp)
    }
}

pub fn write_frame(w: &mut impl Write, op: u8, payload: &[u8]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(5 + payload.len());
    buf.extend_from_slice(&(payload.len() as u32 + 1).to_le_bytes());
    buf.push(op);
    buf.extend_from_slice(payload);
    w.write_all(&buf)?;
    w.flush()
}

/// Next frame, or `None` on a clean end of stream.
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<(u8, Vec<u8>)>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_le_bytes(len);
    if len == 0 || len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("bad frame length {len}")));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body)?;
    let op = body[0];
    body.remove(0);
    Ok(Some((op, body)))
}

pub fn words_to_bytes(words: &[u64]) -> Vec<u8> {
    words.iter().flat_map(|w| w.to_le_bytes()).collect()
}

pub fn bytes_to_words(bytes: &[u8]) -> Vec<u64> {
    bytes.chunks(8).map(|c| {
        let mut b = [0u8; 8];
        b[..c.len()].copy_from_slice(c);
        u64::from_le_bytes(b)
    }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn requests_round_trip() {
        let reqs = [
            Request::Hello,
            Request::GetRegs { tid: 3 },
            Request::ReadMem { addr: 0x2000_0000, len: 64 },
            Request::WriteMem { addr: 8, data: vec![1, 2, 3, 4, 5, 6, 7, 8] },
            Request::SetReg { tid: 1, reg: 17, value: 9 },
            Request::ReinstateChunk { old: 4, ty: TypeId(3), size: 16, data: vec![0; 16] },
        ];
        for r in reqs {
            assert_eq!(Request::decode(r.opcode(), &r.payload()).unwrap(), Some(r));
        }
        assert_eq!(Request::decode(0x42, &[]).unwrap(), None);
    }

    #[test]
    fn responses_round_trip() {
        let c = Chunk { id: 2, base: 0x1000_0010, size: 24, ty: TypeId(5), live: true, site: 7 };
        let cases = [
            (OP_HELLO, Response::Hello { version: 1, image_hash: [7; 32], halted: true }),
            (OP_LIST_THREADS, Response::Threads(vec![0, 2])),
            (OP_GET_ALLOC_TABLE, Response::AllocTable { arena_len: 64, chunks: vec![c.clone()] }),
            (OP_WAIT_STOP, Response::Stopped { reason: StopReason::Sentinel { chunk: 3, offset: 8 }, steps: 99 }),
            (OP_EVICT_CHUNK, Response::Evicted { chunk: c, data: vec![0; 24] }),
            (OP_READ_MEM, Response::Error(ERR_ADDRESS)),
        ];
        for (op, resp) in cases {
            let (rop, payload) = resp.encode(op);
            assert_eq!(Response::decode(op, rop, &payload).unwrap(), resp);
        }
    }

    #[test]
    fn framing() {
        let mut buf = Vec::new();
        write_frame(&mut buf, OP_GET_REGS, &[0, 0, 0, 0]).unwrap();
        assert_eq!(buf, [5, 0, 0, 0, 3, 0, 0, 0, 0]);
        let mut r = &buf[..];
        assert_eq!(read_frame(&mut r).unwrap(), Some((OP_GET_REGS, vec![0, 0, 0, 0])));
        assert_eq!(read_frame(&mut r).unwrap(), None);
        let mut bad: &[u8] = &[0, 0, 0, 0];
        assert!(read_frame(&mut bad).is_err());
    }
}
