//! Guest memory words, shadow tags and the heap allocator.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::isa::{HEAP_BASE, HEAP_LIMIT};
use crate::types::TypeId;

/// Ground-truth classification of a guest word, maintained by instruction
/// semantics and never consulted by the tracer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Tag {
    #[default]
    Uninit,
    Scalar,
    /// A pointer to an object of the given type (or null / a sentinel).
    Ptr(TypeId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Word {
    pub v: u64,
    pub t: Tag,
}

impl Word {
    pub const ZERO: Word = Word { v: 0, t: Tag::Scalar };

    pub fn scalar(v: u64) -> Word {
        Word { v, t: Tag::Scalar }
    }

    pub fn ptr(v: u64, ty: TypeId) -> Word {
        Word { v, t: Tag::Ptr(ty) }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: u32,
    pub base: u64,
    pub size: u64,
    pub ty: TypeId,
    pub live: bool,
    /// pc of the allocating instruction.
    pub site: u32,
}

impl Chunk {
    pub fn contains(&self, addr: u64) -> bool {
        addr >= self.base && addr < self.base + self.size
    }
}

pub const ALIGN: u64 = 16;

/// First-fit allocator over `[HEAP_BASE, HEAP_BASE + cap)`. Chunk ids grow
/// monotonically and are never reused.
#[derive(Clone, Debug)]
pub struct Heap {
    pub words: Vec<Word>,
    pub cap: u64,
    pub chunks: Vec<Chunk>,
    /// base -> index into `chunks`, live chunks only.
    pub live: BTreeMap<u64, usize>,
    /// Free ranges (start, len), sorted and coalesced.
    free: Vec<(u64, u64)>,
    /// Bytes currently reserved (rounded sizes).
    pub used: u64,
}

pub fn rounded(size: u64) -> u64 {
    size.max(8).div_ceil(ALIGN) * ALIGN
}

impl Heap {
    pub fn new(cap: u64) -> Heap {
        let cap = cap.min(HEAP_LIMIT - HEAP_BASE);
        Heap { words: Vec::new(), cap, chunks: Vec::new(), live: BTreeMap::new(), free: vec![(HEAP_BASE, cap)], used: 0 }
    }

    /// Reserves a zeroed chunk; `None` when no free range fits.
    pub fn alloc(&mut self, size: u64, ty: TypeId, site: u32) -> Option<&Chunk> {
        let need = rounded(size);
        let i = self.free.iter().position(|&(_, len)| len >= need)?;
        let (start, len) = self.free[i];
        if len == need {
            self.free.remove(i);
        } else {
            self.free[i] = (start + need, len - need);
        }
        let end_word = ((start + need - HEAP_BASE) / 8) as usize;
        if self.words.len() < end_word {
            self.words.resize(end_word, Word::default());
        }
        let first = ((start - HEAP_BASE) / 8) as usize;
        for w in &mut self.words[first..end_word] {
            *w = Word::ZERO;
        }
        let id = self.chunks.len() as u32;
        self.chunks.push(Chunk { id, base: start, size, ty, live: true, site });
        self.live.insert(start, id as usize);
        self.used += need;
        Some(&self.chunks[id as usize])
    }

    pub fn free(&mut self, base: u64) -> Option<u32> {
        let idx = self.live.remove(&base)?;
        let c = &mut self.chunks[idx];
        c.live = false;
        let need = rounded(c.size);
        self.used -= need;
        let first = ((base - HEAP_BASE) / 8) as usize;
        for w in &mut self.words[first..first + (need / 8) as usize] {
            *w = Word::default();
        }
        let at = self.free.partition_point(|&(s, _)| s < base);
        self.free.insert(at, (base, need));
        if at + 1 < self.free.len() && self.free[at].0 + self.free[at].1 == self.free[at + 1].0 {
            self.free[at].1 += self.free[at + 1].1;
            self.free.remove(at + 1);
        }
        if at > 0 && self.free[at - 1].0 + self.free[at - 1].1 == self.free[at].0 {
            self.free[at - 1].1 += self.free[at].1;
            self.free.remove(at);
        }
        Some(idx as u32)
    }

    /// The live chunk containing `addr`.
    pub fn chunk_at(&self, addr: u64) -> Option<&Chunk> {
        let (_, &i) = self.live.range(..=addr).next_back()?;
        let c = &self.chunks[i];
        c.contains(addr).then_some(c)
    }

    pub fn word(&self, addr: u64) -> Option<&Word> {
        self.chunk_at(addr)?;
        self.words.get(((addr - HEAP_BASE) / 8) as usize)
    }

    pub fn word_mut(&mut self, addr: u64) -> Option<&mut Word> {
        self.chunk_at(addr)?;
        self.words.get_mut(((addr - HEAP_BASE) / 8) as usize)
    }

    pub fn live_chunks(&self) -> impl Iterator<Item = &Chunk> {
        self.live.values().map(|&i| &self.chunks[i])
    }
}
