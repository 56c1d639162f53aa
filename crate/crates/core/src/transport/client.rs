//! Client side of the debug protocol and remote snapshot assembly.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::isa::{stack_top, HEAP_BASE, NUM_EXPOSED_REGS};
use crate::mapfmt::FormatError;
use crate::types::TypeId;
use crate::vm::{Chunk, Segment, Snapshot, ThreadRegs};

use super::proto::*;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Io(#[from] io::Error),
    #[error("protocol: {0}")]
    Protocol(#[from] FormatError),
    #[error("server closed the connection")]
    Closed,
    #[error("server error code {0}")]
    Remote(u16),
    #[error("unexpected response {0:?}")]
    Unexpected(Box<Response>),
}

pub struct Client<S> {
    stream: S,
}

macro_rules! expect {
    ($resp:expr, $pat:pat => $out:expr) => {
        match $resp {
            $pat => Ok($out),
            Response::Error(c) => Err(ClientError::Remote(c)),
            other => Err(ClientError::Unexpected(Box::new(other))),
        }
    };
}

impl<S: Read + Write> Client<S> {
    pub fn new(stream: S) -> Self {
        Client { stream }
    }

    pub fn into_inner(self) -> S {
        self.stream
    }

    pub fn request(&mut self, req: &Request) -> Result<Response, ClientError> {
        write_frame(&mut self.stream, req.opcode(), &req.payload())?;
        let (op, payload) = read_frame(&mut self.stream)?.ok_or(ClientError::Closed)?;
        Ok(Response::decode(req.opcode(), op, &payload)?)
    }

    /// Protocol version, image hash and whether the guest is halted.
    pub fn hello(&mut self) -> Result<(u16, [u8; 32], bool), ClientError> {
        expect!(self.request(&Request::Hello)?, Response::Hello { version, image_hash, halted } => (version, image_hash, halted))
    }

    pub fn list_threads(&mut self) -> Result<Vec<u32>, ClientError> {
        expect!(self.request(&Request::ListThreads)?, Response::Threads(t) => t)
    }

    pub fn get_regs(&mut self, tid: u32) -> Result<[u64; NUM_EXPOSED_REGS], ClientError> {
        expect!(self.request(&Request::GetRegs { tid })?, Response::Regs(r) => r)
    }

    /// Reads `len` bytes, split into requests of at most 64 KiB.
    pub fn read_mem(&mut self, addr: u64, len: u64) -> Result<Vec<u8>, ClientError> {
        let mut out = Vec::with_capacity(len as usize);
        let mut at = 0;
        while at < len {
            let n = (len - at).min(MAX_READ as u64) as u32;
            let part = expect!(self.request(&Request::ReadMem { addr: addr + at, len: n })?, Response::Mem(m) => m)?;
            if part.len() != n as usize {
                return Err(FormatError::Malformed("short memory read".into()).into());
            }
            out.extend_from_slice(&part);
            at += n as u64;
        }
        Ok(out)
    }

    pub fn read_words(&mut self, addr: u64, count: u64) -> Result<Vec<u64>, ClientError> {
        Ok(bytes_to_words(&self.read_mem(addr, 8 * count)?))
    }

    pub fn alloc_table(&mut self) -> Result<(u64, Vec<Chunk>), ClientError> {
        expect!(self.request(&Request::GetAllocTable)?, Response::AllocTable { arena_len, chunks } => (arena_len, chunks))
    }

    pub fn static_info(&mut self) -> Result<(u64, u64), ClientError> {
        expect!(self.request(&Request::GetStaticInfo)?, Response::StaticInfo { base, size } => (base, size))
    }

    pub fn halt(&mut self) -> Result<(), ClientError> {
        expect!(self.request(&Request::Halt)?, Response::Ack => ())
    }

    pub fn resume(&mut self) -> Result<(), ClientError> {
        expect!(self.request(&Request::Resume)?, Response::Ack => ())
    }

    pub fn write_words(&mut self, addr: u64, words: &[u64]) -> Result<(), ClientError> {
        let data = words_to_bytes(words);
        expect!(self.request(&Request::WriteMem { addr, data })?, Response::Ack => ())
    }

    pub fn set_reg(&mut self, tid: u32, reg: u8, value: u64) -> Result<(), ClientError> {
        expect!(self.request(&Request::SetReg { tid, reg, value })?, Response::Ack => ())
    }

    pub fn wait_stop(&mut self) -> Result<(StopReason, u64), ClientError> {
        expect!(self.request(&Request::WaitStop)?, Response::Stopped { reason, steps } => (reason, steps))
    }

    pub fn evict_chunk(&mut self, id: u32) -> Result<(Chunk, Vec<u64>), ClientError> {
        expect!(self.request(&Request::EvictChunk { id })?, Response::Evicted { chunk, data } => (chunk, bytes_to_words(&data)))
    }

    pub fn reinstate_chunk(&mut self, old: u32, ty: TypeId, size: u64, words: &[u64]) -> Result<Chunk, ClientError> {
        let data = words_to_bytes(words);
        expect!(self.request(&Request::ReinstateChunk { old, ty, size, data })?, Response::Reinstated(c) => c)
    }
}

/// Assembles a snapshot of the halted guest over the protocol. Any
/// failure discards what was read so far.
pub fn remote_snapshot<S: Read + Write>(c: &mut Client<S>) -> Result<Snapshot, ClientError> {
    let (_, image_hash, _) = c.hello()?;
    let mut segments = Vec::new();
    let (sbase, static_size) = c.static_info()?;
    if static_size > 0 {
        segments.push(Segment { base: sbase, words: c.read_words(sbase, static_size / 8)? });
    }
    let (arena_len, chunks) = c.alloc_table()?;
    if arena_len > 0 {
        segments.push(Segment { base: HEAP_BASE, words: c.read_words(HEAP_BASE, arena_len / 8)? });
    }
    let mut threads = Vec::new();
    for id in c.list_threads()? {
        let regs = c.get_regs(id)?;
        let sp = regs[crate::isa::REG_SP as usize];
        let top = stack_top(id);
        let words = if top > sp { c.read_words(sp, (top - sp) / 8)? } else { Vec::new() };
        segments.push(Segment { base: sp, words });
        threads.push(ThreadRegs { id, regs });
    }
    segments.sort_by_key(|s| s.base);
    Ok(Snapshot { image_hash, threads, segments, chunks, static_size })
}
