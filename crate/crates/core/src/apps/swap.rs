//! Swap manager: moves chunks to a remote store when the guest runs out of
//! heap, replacing every pointer into them with a sentinel, and brings
//! them back when the guest touches a sentinel. It drives the guest only
//! through the debug protocol.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;

use thiserror::Error;

use crate::image::ProgramImage;
use crate::isa::{sentinel, NUM_GPRS};
use crate::tracer::{object_slots, trace_graph_with, unwind, Loc, Region, TraceError, TraceOptions};
use crate::transport::proto::ERR_OUT_OF_MEMORY;
use crate::transport::{remote_snapshot, Client, ClientError, StopReason, Stub};
use crate::types::{PointerSlot, TypeId};
use crate::vm::{MachineView, Snapshot, Vm, VmConfig};

use super::store::{RemoteStore, StoreReader, StoredChunk};

#[derive(Debug, Error)]
pub enum SwapError {
    #[error("guest is not halted")]
    NotHalted,
    #[error("chunk {0} is not live")]
    ChunkNotLive(u32),
    #[error("chunk {0} is not in the remote store")]
    StoreMiss(u32),
    #[error("no chunk can be evicted to make room for {0} bytes")]
    NoVictim(u64),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("store: {0}")]
    Store(#[from] io::Error),
    #[error("guest stopped: {0}")]
    Guest(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SwapEvent {
    Out { chunk: u32, size: u64, rewrites: usize },
    In { chunk: u32, new_chunk: u32, rewrites: usize },
}

/// Chooses the chunk to evict. `pinned` chunks must not be chosen.
pub trait EvictionPolicy {
    fn pick(&mut self, snap: &Snapshot, pinned: &BTreeSet<u32>) -> Option<u32>;
}

/// Least recently allocated live chunk that nothing pins.
pub struct OldestFirst;

impl EvictionPolicy for OldestFirst {
    fn pick(&mut self, snap: &Snapshot, pinned: &BTreeSet<u32>) -> Option<u32> {
        snap.live_chunks().into_iter().map(|c| c.id).filter(|id| !pinned.contains(id)).min()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Site {
    Reg { thread: u32, n: u8 },
    Mem(u64),
    Store { id: u32, word: usize },
}

pub struct SwapManager<'a, S> {
    pub client: Client<S>,
    image: Arc<ProgramImage>,
    store: &'a mut dyn RemoteStore,
    policy: Box<dyn EvictionPolicy>,
    pub events: Vec<SwapEvent>,
    /// Scan the whole machine after every swap for leftover addresses.
    pub audit: bool,
    pub audit_failures: Vec<String>,
}

impl<'a, S: Read + Write> SwapManager<'a, S> {
    pub fn new(client: Client<S>, image: Arc<ProgramImage>, store: &'a mut dyn RemoteStore) -> Self {
        SwapManager {
            client,
            image,
            store,
            policy: Box::new(OldestFirst),
            events: Vec::new(),
            audit: false,
            audit_failures: Vec::new(),
        }
    }

    pub fn with_policy(mut self, p: Box<dyn EvictionPolicy>) -> Self {
        self.policy = p;
        self
    }

    fn snapshot(&mut self) -> Result<Snapshot, SwapError> {
        let (_, _, halted) = self.client.hello()?;
        if !halted {
            return Err(SwapError::NotHalted);
        }
        Ok(remote_snapshot(&mut self.client)?)
    }

    /// Every pointer-holding location with its value: the traced roots,
    /// plus a typed sweep of all live and stored chunks so that garbage
    /// never keeps a stale address either.
    fn pointer_sites(&self, snap: &Snapshot) -> Result<BTreeMap<Site, u64>, SwapError> {
        let reader = StoreReader(&*self.store);
        let g = trace_graph_with(snap, &self.image, TraceOptions { remote: Some(&reader) })?;
        let mut out = BTreeMap::new();
        for e in &g.edges {
            let site = match e.loc {
                Some(Loc::Reg { thread, n }) => Site::Reg { thread, n },
                Some(Loc::Mem { addr }) => Site::Mem(addr),
                None => match e.source {
                    crate::tracer::Source::Node { node, offset } => match g.nodes[node].region {
                        Region::Remote(id) => Site::Store { id, word: (offset / 8) as usize },
                        _ => continue,
                    },
                    _ => continue,
                },
            };
            out.insert(site, e.value);
        }
        let types = &self.image.types;
        // Objects reached through an interior pointer are only partly
        // walked, so sweep every chunk rather than just the unreached ones.
        for c in snap.live_chunks() {
            let read = |off: u64| snap.read(c.base + off);
            for (off, v) in typed_words(types, c.ty, c.size, read) {
                out.insert(Site::Mem(c.base + off), v);
            }
        }
        for id in self.store.ids()? {
            let Some(sc) = self.store.get(id)? else { continue };
            let read = |off: u64| sc.words.get((off / 8) as usize).copied();
            for (off, v) in typed_words(types, sc.ty, sc.size, read) {
                out.insert(Site::Store { id, word: (off / 8) as usize }, v);
            }
        }
        Ok(out)
    }

    fn write_site(&mut self, site: Site, v: u64) -> Result<(), SwapError> {
        match site {
            Site::Reg { thread, n } => self.client.set_reg(thread, n, v)?,
            Site::Mem(addr) => self.client.write_words(addr, &[v])?,
            Site::Store { id, word } => {
                let mut c = self.store.get(id)?.ok_or(SwapError::StoreMiss(id))?;
                c.words[word] = v;
                self.store.put(id, c)?;
            }
        }
        Ok(())
    }

    /// Chunks that must stay local: anything a register points into, and
    /// anything referenced from an allocator's frame, whose words the
    /// maps deliberately leave undescribed.
    fn pinned(&self, snap: &Snapshot) -> Result<BTreeSet<u32>, SwapError> {
        let mut vals = Vec::new();
        for t in &snap.threads {
            vals.extend_from_slice(&t.regs[..NUM_GPRS]);
            for f in unwind(snap, &self.image, t.id).map_err(TraceError::from)? {
                if self.image.functions[f.func as usize].allocator {
                    let (lo, hi) = f.extent();
                    vals.extend((lo..hi).step_by(8).filter_map(|a| snap.read(a)));
                }
            }
        }
        Ok(vals.into_iter().filter_map(|v| snap.chunk_at(v).map(|c| c.id)).collect())
    }

    pub fn swap_out(&mut self, id: u32) -> Result<(), SwapError> {
        let snap = self.snapshot()?;
        let c = snap.chunks.get(id as usize).filter(|c| c.live).ok_or(SwapError::ChunkNotLive(id))?.clone();
        let sites = self.pointer_sites(&snap)?;
        let mut rewrites = 0;
        for (site, v) in sites {
            if c.contains(v) {
                self.write_site(site, sentinel::encode(id, (v - c.base) as u32))?;
                rewrites += 1;
            }
        }
        let (chunk, words) = self.client.evict_chunk(id)?;
        self.store.put(id, StoredChunk { ty: chunk.ty, size: chunk.size, words })?;
        self.events.push(SwapEvent::Out { chunk: id, size: c.size, rewrites });
        if self.audit {
            let stale = self.count_words(|v| v >= c.base && v < c.base + c.size)?;
            if stale > 0 {
                self.audit_failures.push(format!("swap-out of {id}: {stale} raw addresses remain"));
            }
        }
        Ok(())
    }

    pub fn swap_in(&mut self, id: u32) -> Result<(), SwapError> {
        let c = loop {
            // Re-read every time: making room may rewrite pointers inside
            // the stored bytes.
            let stored = self.store.get(id)?.ok_or(SwapError::StoreMiss(id))?;
            match self.client.reinstate_chunk(id, stored.ty, stored.size, &stored.words) {
                Ok(c) => break c,
                Err(ClientError::Remote(ERR_OUT_OF_MEMORY)) => self.make_room(stored.size)?,
                Err(e) => return Err(e.into()),
            }
        };
        self.store.remove(id)?;
        let snap = self.snapshot()?;
        let mut rewrites = 0;
        let target = |v: u64| sentinel::decode(v).filter(|&(ch, off)| ch == id && (off as u64) < c.size.max(1));
        for (site, v) in self.pointer_sites(&snap)? {
            if let Some((_, off)) = target(v) {
                self.write_site(site, c.base + off as u64)?;
                rewrites += 1;
            }
        }
        // Allocator frames are outside the maps; a sentinel for this exact
        // chunk there can only have come from a pointer copied in.
        for t in &snap.threads {
            let frames = unwind(&snap, &self.image, t.id).map_err(TraceError::from)?;
            let alloc = |f: &crate::tracer::Frame| self.image.functions[f.func as usize].allocator;
            if frames.first().is_some_and(alloc) {
                for n in 0..NUM_GPRS as u8 {
                    if let Some((_, off)) = target(t.regs[n as usize]) {
                        self.client.set_reg(t.id, n, c.base + off as u64)?;
                        rewrites += 1;
                    }
                }
            }
            for f in frames.iter().filter(|f| alloc(f)) {
                let (lo, hi) = f.extent();
                for a in (lo..hi).step_by(8) {
                    if let Some((_, off)) = snap.read(a).and_then(target) {
                        self.client.write_words(a, &[c.base + off as u64])?;
                        rewrites += 1;
                    }
                }
            }
        }
        self.events.push(SwapEvent::In { chunk: id, new_chunk: c.id, rewrites });
        if self.audit {
            let stale = self.count_words(|v| sentinel::decode(v).is_some_and(|(ch, _)| ch == id))?;
            if stale > 0 {
                self.audit_failures.push(format!("swap-in of {id}: {stale} sentinels remain"));
            }
        }
        Ok(())
    }

    /// Evicts one chunk chosen by the policy.
    pub fn make_room(&mut self, size: u64) -> Result<(), SwapError> {
        let snap = self.snapshot()?;
        let pinned = self.pinned(&snap)?;
        let victim = self.policy.pick(&snap, &pinned).ok_or(SwapError::NoVictim(size))?;
        self.swap_out(victim)
    }

    /// Words anywhere on the machine or in the store matching `pred`.
    fn count_words(&mut self, pred: impl Fn(u64) -> bool) -> Result<usize, SwapError> {
        let snap = remote_snapshot(&mut self.client)?;
        let mut n = 0;
        for t in &snap.threads {
            n += t.regs[..NUM_GPRS].iter().filter(|v| pred(**v)).count();
        }
        for seg in &snap.segments {
            for (i, v) in seg.words.iter().enumerate() {
                let a = seg.base + 8 * i as u64;
                let in_heap = (crate::isa::HEAP_BASE..crate::isa::HEAP_LIMIT).contains(&a);
                if pred(*v) && (!in_heap || snap.chunk_at(a).is_some()) {
                    n += 1;
                }
            }
        }
        for id in self.store.ids()? {
            if let Some(c) = self.store.get(id)? {
                n += c.words.iter().filter(|v| pred(**v)).count();
            }
        }
        Ok(n)
    }

    /// Resumes the guest and services its traps until it finishes.
    pub fn run(&mut self) -> Result<(), SwapError> {
        loop {
            self.client.resume()?;
            let (reason, _) = self.client.wait_stop()?;
            match reason {
                StopReason::Finished => return Ok(()),
                StopReason::Halted => {}
                StopReason::Sentinel { chunk, .. } => self.swap_in(chunk)?,
                StopReason::OutOfMemory { size } => self.make_room(size)?,
                StopReason::Trap(m) => return Err(SwapError::Guest(m)),
            }
        }
    }
}

/// Non-null pointer words of an object, honouring union discriminants.
fn typed_words(
    types: &crate::types::TypeMap,
    ty: TypeId,
    size: u64,
    read: impl Fn(u64) -> Option<u64>,
) -> Vec<(u64, u64)> {
    let mut out = Vec::new();
    for s in object_slots(types, ty, size, &read) {
        if let PointerSlot::InUnion { disc_offset, tag, .. } = s {
            if read(disc_offset) != Some(tag as u64) {
                continue;
            }
        }
        if let Some(v) = read(s.offset()).filter(|v| *v != 0) {
            out.push((s.offset(), v));
        }
    }
    out
}

#[derive(Debug)]
pub struct SwapRun {
    pub output: Vec<i64>,
    pub events: Vec<SwapEvent>,
    pub audit_failures: Vec<String>,
    pub steps: u64,
}

impl SwapRun {
    pub fn swap_outs(&self) -> usize {
        self.events.iter().filter(|e| matches!(e, SwapEvent::Out { .. })).count()
    }

    pub fn swap_ins(&self) -> usize {
        self.events.iter().filter(|e| matches!(e, SwapEvent::In { .. })).count()
    }
}

/// Runs `img` under a heap cap with a co-located stub, swapping over a
/// loopback connection.
pub fn swapdemo(
    img: Arc<ProgramImage>,
    cfg: VmConfig,
    max_steps: u64,
    store: &mut dyn RemoteStore,
    audit: bool,
) -> Result<SwapRun, SwapError> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let vm = Vm::new(img.clone(), cfg);
    let server = thread::spawn(move || -> io::Result<Vm> {
        let (stream, _) = listener.accept()?;
        let mut stub = Stub::new(vm);
        stub.max_steps = max_steps;
        Ok(crate::transport::serve_connection(stub, stream)?.vm)
    });
    let client = Client::new(TcpStream::connect(addr)?);
    let mut m = SwapManager::new(client, img, store);
    m.audit = audit;
    let result = m.run();
    let SwapManager { client, events, audit_failures, .. } = m;
    drop(client);
    let vm = server.join().map_err(|_| SwapError::Guest("stub thread panicked".into()))??;
    result?;
    Ok(SwapRun { output: vm.output, events, audit_failures, steps: vm.steps })
}
