//! Frozen machine state and the read-only view the tracer consumes.

use crate::isa::{stack_top, NUM_EXPOSED_REGS, REG_SP, STATIC_BASE};

use super::memory::Chunk;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ThreadRegs {
    pub id: u32,
    /// r0..r15, sp, pc.
    pub regs: [u64; NUM_EXPOSED_REGS],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub base: u64,
    pub words: Vec<u64>,
}

impl Segment {
    pub fn end(&self) -> u64 {
        self.base + 8 * self.words.len() as u64
    }
}

/// Read access to a stopped machine: a snapshot, or a live VM between steps.
pub trait MachineView {
    fn thread_ids(&self) -> Vec<u32>;
    /// Register `n` of thread `t`, `n` in `0..18` (16 = sp, 17 = pc).
    fn reg(&self, t: u32, n: u8) -> Option<u64>;
    fn read(&self, addr: u64) -> Option<u64>;
    /// Live chunk containing `addr`.
    fn chunk_at(&self, addr: u64) -> Option<&Chunk>;
    /// Most recent chunk, live or freed, whose extent covers `addr`.
    fn any_chunk_at(&self, addr: u64) -> Option<&Chunk>;
    fn live_chunks(&self) -> Vec<&Chunk>;
    fn static_range(&self) -> (u64, u64);
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Snapshot {
    pub image_hash: [u8; 32],
    pub threads: Vec<ThreadRegs>,
    /// Sorted by base: static region, heap arena, then thread stacks.
    pub segments: Vec<Segment>,
    /// Every chunk ever allocated, by id.
    pub chunks: Vec<Chunk>,
    pub static_size: u64,
}

impl Snapshot {
    fn segment(&self, addr: u64) -> Option<&Segment> {
        let i = self.segments.partition_point(|s| s.base <= addr);
        let s = self.segments.get(i.checked_sub(1)?)?;
        (addr < s.end()).then_some(s)
    }

    pub fn thread(&self, t: u32) -> Option<&ThreadRegs> {
        self.threads.iter().find(|x| x.id == t)
    }

    /// Stack words of thread `t` from sp to the top of its stack.
    pub fn stack_range(&self, t: u32) -> Option<(u64, u64)> {
        let th = self.thread(t)?;
        Some((th.regs[REG_SP as usize], stack_top(t)))
    }

    /// Checks that segments are sorted and disjoint and chunk ids are dense.
    pub fn validate(&self) -> Result<(), String> {
        for w in self.segments.windows(2) {
            if w[0].end() > w[1].base {
                return Err(format!("segments at {:#x} and {:#x} overlap", w[0].base, w[1].base));
            }
        }
        for (i, c) in self.chunks.iter().enumerate() {
            if c.id as usize != i {
                return Err(format!("chunk table out of order at {i}"));
            }
        }
        Ok(())
    }
}

impl MachineView for Snapshot {
    fn thread_ids(&self) -> Vec<u32> {
        self.threads.iter().map(|t| t.id).collect()
    }

    fn reg(&self, t: u32, n: u8) -> Option<u64> {
        self.thread(t)?.regs.get(n as usize).copied()
    }

    fn read(&self, addr: u64) -> Option<u64> {
        if !addr.is_multiple_of(8) {
            return None;
        }
        let s = self.segment(addr)?;
        s.words.get(((addr - s.base) / 8) as usize).copied()
    }

    fn chunk_at(&self, addr: u64) -> Option<&Chunk> {
        // Live chunks never overlap, so the last live chunk starting at or
        // below addr is the only candidate.
        self.chunks.iter().filter(|c| c.live && c.base <= addr).max_by_key(|c| c.base).filter(|c| c.contains(addr))
    }

    fn any_chunk_at(&self, addr: u64) -> Option<&Chunk> {
        self.chunks.iter().rev().find(|c| c.contains(addr))
    }

    fn live_chunks(&self) -> Vec<&Chunk> {
        self.chunks.iter().filter(|c| c.live).collect()
    }

    fn static_range(&self) -> (u64, u64) {
        (STATIC_BASE, STATIC_BASE + self.static_size)
    }
}
