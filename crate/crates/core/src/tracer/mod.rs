//! Precise tracing of a stopped machine from its maps alone: unwind each
//! thread, read the roots the location maps name, then follow pointers
//! through the type map.

pub mod emit;
pub mod unwind;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::image::{LocKind, LocationRecord, ProgramImage};
use crate::isa::{sentinel, stack_thread, STATIC_BASE};
use crate::types::{shift, PointerSlot, TypeDesc, TypeId, WORD};
use crate::vm::MachineView;

pub use unwind::{unwind, Frame, Home, UnwindError};

/// A physical guest location that holds a pointer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Loc {
    Reg { thread: u32, n: u8 },
    Mem { addr: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum RootOrigin {
    Frame { thread: u32, frame: u32 },
    Static,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Root {
    pub loc: Loc,
    pub value: u64,
    pub pointee: TypeId,
    pub origin: RootOrigin,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceError {
    #[error(transparent)]
    Unwind(#[from] UnwindError),
    #[error("function {func} at pc {pc}: record {record} does not resolve inside the frame")]
    MapMismatch { func: u32, pc: u32, record: String },
    #[error("pointer {value:#x} of pointee type {pointee} at {loc:?}: {reason}")]
    TypeError { loc: Option<Loc>, value: u64, pointee: TypeId, reason: String },
}

/// Roots of every thread plus the static region.
pub fn collect_roots(view: &dyn MachineView, img: &ProgramImage) -> Result<Vec<Root>, TraceError> {
    let mut roots = Vec::new();
    for t in view.thread_ids() {
        let frames = unwind(view, img, t)?;
        roots.extend(frame_roots(view, img, t, &frames)?);
    }
    roots.extend(static_roots(view, img));
    roots.sort();
    roots.dedup_by_key(|r| r.loc);
    Ok(roots)
}

/// Roots named by the location maps of one thread's frames.
pub fn frame_roots(
    view: &dyn MachineView,
    img: &ProgramImage,
    t: u32,
    frames: &[Frame],
) -> Result<Vec<Root>, TraceError> {
    let mut out = Vec::new();
    for (i, f) in frames.iter().enumerate() {
        let info = &img.functions[f.func as usize];
        if info.allocator {
            continue;
        }
        let entry = img.locmaps[f.func as usize].at(f.pc).ok_or_else(|| TraceError::MapMismatch {
            func: f.func,
            pc: f.pc,
            record: "missing entry".into(),
        })?;
        let mismatch = |r: &LocationRecord| TraceError::MapMismatch { func: f.func, pc: f.pc, record: r.to_string() };
        for r in entry {
            let Some(loc) = frame_loc(f, i == 0, t, r.kind).map_err(|_| mismatch(r))? else { continue };
            if let Some(u) = r.union_ctx {
                let disc = frame_loc(f, i == 0, t, u.disc).map_err(|_| mismatch(r))?;
                let d = disc.and_then(|l| read_loc(view, l));
                if d != Some(u.tag as u64) {
                    continue;
                }
            }
            let value = read_loc(view, loc).ok_or_else(|| mismatch(r))?;
            if value != 0 {
                out.push(Root { loc, value, pointee: r.pointee, origin: RootOrigin::Frame { thread: t, frame: i as u32 } });
            }
        }
    }
    Ok(out)
}

/// Physical location of a frame-relative record. `Ok(None)` means the
/// record names a caller-saved register in an outer frame, whose value
/// the call has already destroyed.
fn frame_loc(f: &Frame, innermost: bool, t: u32, kind: LocKind) -> Result<Option<Loc>, ()> {
    match kind {
        LocKind::Reg(n) => match f.home(n) {
            Some(Home::Reg(r)) => Ok(Some(Loc::Reg { thread: t, n: r })),
            Some(Home::Mem(addr)) => Ok(Some(Loc::Mem { addr })),
            None if innermost => Ok(Some(Loc::Reg { thread: t, n })),
            None => Ok(None),
        },
        LocKind::Slot(o) => {
            let addr = f.cfa.wrapping_add(o as i64 as u64);
            let (lo, hi) = f.extent();
            if o >= 0 || addr < lo || addr >= hi {
                return Err(());
            }
            Ok(Some(Loc::Mem { addr }))
        }
        LocKind::Static(_) => Err(()),
    }
}

fn read_loc(view: &dyn MachineView, loc: Loc) -> Option<u64> {
    match loc {
        Loc::Reg { thread, n } => view.reg(thread, n),
        Loc::Mem { addr } => view.read(addr),
    }
}

pub fn static_roots(view: &dyn MachineView, img: &ProgramImage) -> Vec<Root> {
    let mut out = Vec::new();
    for r in &img.static_map {
        let LocKind::Static(off) = r.kind else { continue };
        if let Some(u) = r.union_ctx {
            let LocKind::Static(d) = u.disc else { continue };
            if view.read(STATIC_BASE + d as u64) != Some(u.tag as u64) {
                continue;
            }
        }
        let addr = STATIC_BASE + off as u64;
        match view.read(addr) {
            Some(0) | None => {}
            Some(value) => out.push(Root { loc: Loc::Mem { addr }, value, pointee: r.pointee, origin: RootOrigin::Static }),
        }
    }
    out
}

/// Bytes of a chunk that lives in a remote store rather than guest memory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RemoteChunk {
    pub ty: TypeId,
    pub words: Vec<u64>,
}

pub trait RemoteReader {
    fn remote_chunk(&self, id: u32) -> Option<RemoteChunk>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Region {
    Heap(u32),
    Static,
    Stack { thread: u32, frame: u32 },
    Remote(u32),
}

impl Region {
    fn kind(&self) -> u8 {
        match self {
            Region::Heap(_) => 0,
            Region::Static => 1,
            Region::Stack { .. } => 2,
            Region::Remote(_) => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Node {
    pub region: Region,
    pub base: u64,
    pub size: u64,
    /// Chunk type for heap and remote nodes.
    pub ty: Option<TypeId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Source {
    Reg { thread: u32, n: u8 },
    Node { node: usize, offset: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Edge {
    pub source: Source,
    pub target: usize,
    pub target_offset: u64,
    pub value: u64,
    pub pointee: TypeId,
    pub root: bool,
    /// Guest location of the pointer word; `None` inside remote chunks.
    pub loc: Option<Loc>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PointerGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

impl PointerGraph {
    /// Every (guest location, value) pair the graph reports.
    pub fn pointer_locations(&self) -> BTreeSet<(Loc, u64)> {
        self.edges.iter().filter_map(|e| e.loc.map(|l| (l, e.value))).collect()
    }

    pub fn values(&self) -> BTreeSet<u64> {
        self.edges.iter().map(|e| e.value).collect()
    }
}

#[derive(Clone, Copy, Default)]
pub struct TraceOptions<'a> {
    pub remote: Option<&'a dyn RemoteReader>,
}

pub fn trace_graph(view: &dyn MachineView, img: &ProgramImage) -> Result<PointerGraph, TraceError> {
    trace_graph_with(view, img, TraceOptions::default())
}

type NodeKey = (u8, u64, Region);

struct Builder<'a> {
    view: &'a dyn MachineView,
    img: &'a ProgramImage,
    opts: TraceOptions<'a>,
    stack_frames: Vec<(u32, Vec<Frame>)>,
    nodes: BTreeMap<NodeKey, Node>,
    /// Edges keyed by source location, with targets still as node keys.
    edges: BTreeMap<(SourceKey, u64), (NodeKey, Edge)>,
    work: VecDeque<NodeKey>,
    remote_words: BTreeMap<u32, RemoteChunk>,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum SourceKey {
    Reg { thread: u32, n: u8 },
    Node(NodeKey),
}

pub fn trace_graph_with(
    view: &dyn MachineView,
    img: &ProgramImage,
    opts: TraceOptions,
) -> Result<PointerGraph, TraceError> {
    let mut b = Builder {
        view,
        img,
        opts,
        stack_frames: Vec::new(),
        nodes: BTreeMap::new(),
        edges: BTreeMap::new(),
        work: VecDeque::new(),
        remote_words: BTreeMap::new(),
    };
    let mut roots = Vec::new();
    for t in view.thread_ids() {
        let frames = unwind(view, img, t)?;
        roots.extend(frame_roots(view, img, t, &frames)?);
        b.stack_frames.push((t, frames));
    }
    roots.extend(static_roots(view, img));
    roots.sort();
    roots.dedup_by_key(|r| r.loc);
    for r in &roots {
        let (src, off) = match r.loc {
            Loc::Reg { thread, n } => (SourceKey::Reg { thread, n }, 0),
            Loc::Mem { addr } => {
                let k = b.container(addr).ok_or_else(|| TraceError::TypeError {
                    loc: Some(r.loc),
                    value: r.value,
                    pointee: r.pointee,
                    reason: "root location lies outside every frame and the static region".into(),
                })?;
                (SourceKey::Node(k), addr - k.1)
            }
        };
        b.add_edge(src, off, Some(r.loc), r.value, r.pointee, true)?;
    }
    while let Some(k) = b.work.pop_front() {
        b.descend(k)?;
    }
    Ok(b.finish())
}

impl<'a> Builder<'a> {
    /// Node for a stack frame or the static region containing `addr`.
    fn container(&mut self, addr: u64) -> Option<NodeKey> {
        let (slo, shi) = self.view.static_range();
        if addr >= slo && addr < shi {
            return Some(self.node(Region::Static, slo, shi - slo, None, false));
        }
        let t = stack_thread(addr)?;
        let frames = &self.stack_frames.iter().find(|(id, _)| *id == t)?.1;
        let (i, f) = frames.iter().enumerate().find(|(_, f)| {
            let (lo, hi) = f.extent();
            addr >= lo && addr < hi
        })?;
        let (lo, hi) = f.extent();
        Some(self.node(Region::Stack { thread: t, frame: i as u32 }, lo, hi - lo, None, false))
    }

    fn node(&mut self, region: Region, base: u64, size: u64, ty: Option<TypeId>, descend: bool) -> NodeKey {
        let k = (region.kind(), base, region);
        if let std::collections::btree_map::Entry::Vacant(e) = self.nodes.entry(k) {
            e.insert(Node { region, base, size, ty });
            if descend {
                self.work.push_back(k);
            }
        }
        k
    }

    fn add_edge(
        &mut self,
        src: SourceKey,
        off: u64,
        loc: Option<Loc>,
        value: u64,
        pointee: TypeId,
        root: bool,
    ) -> Result<(), TraceError> {
        let err = |reason: String| TraceError::TypeError { loc, value, pointee, reason };
        let (target, target_offset) = if let Some((id, o)) = sentinel::decode(value) {
            let rc = self.opts.remote.and_then(|r| r.remote_chunk(id));
            let (ty, size) = match &rc {
                Some(c) => (Some(c.ty), c.words.len() as u64 * WORD),
                None => (None, 0),
            };
            if let Some(c) = rc {
                if !self.types_match(c.ty, o as u64, pointee) {
                    return Err(err(format!("remote chunk {id} has no object of that type at offset {o}")));
                }
                self.remote_words.insert(id, c);
            }
            let descend = self.remote_words.contains_key(&id);
            (self.node(Region::Remote(id), sentinel::encode(id, 0), size, ty, descend), o as u64)
        } else if let Some(c) = self.view.chunk_at(value) {
            let (id, base, size, ty) = (c.id, c.base, c.size, c.ty);
            if !self.types_match(ty, value - base, pointee) {
                return Err(err(format!("chunk {id} has no object of that type at offset {}", value - base)));
            }
            (self.node(Region::Heap(id), base, size, Some(ty), true), value - base)
        } else if let Some(k) = self.container(value) {
            if k.2 == Region::Static && !self.static_type_matches(value - k.1, pointee) {
                return Err(err("no global of that type at the target".into()));
            }
            (k, value - k.1)
        } else if let Some(c) = self.view.any_chunk_at(value) {
            return Err(err(format!("target lies in freed chunk {}", c.id)));
        } else {
            return Err(err("target lies outside every object".into()));
        };
        let edge = Edge { source: Source::Reg { thread: 0, n: 0 }, target: 0, target_offset, value, pointee, root, loc };
        self.edges.insert((src, off), (target, edge));
        Ok(())
    }

    fn types_match(&self, chunk_ty: TypeId, off: u64, pointee: TypeId) -> bool {
        self.img.types.types_at(chunk_ty, off).contains(&pointee)
    }

    fn static_type_matches(&self, off: u64, pointee: TypeId) -> bool {
        self.img.globals.iter().any(|g| {
            let start = g.offset as u64;
            let size = self.img.types.size_of(g.ty).unwrap_or(WORD);
            off >= start && off < start + size && self.img.types.types_at(g.ty, off - start).contains(&pointee)
        })
    }

    fn descend(&mut self, k: NodeKey) -> Result<(), TraceError> {
        let node = self.nodes[&k].clone();
        let Some(ty) = node.ty else { return Ok(()) };
        let remote = match node.region {
            Region::Remote(id) => Some(id),
            _ => None,
        };
        let read = |s: &Self, off: u64| -> Option<u64> {
            match remote {
                Some(id) => s.remote_words.get(&id)?.words.get((off / WORD) as usize).copied(),
                None => s.view.read(node.base + off),
            }
        };
        let slots = object_slots(&self.img.types, ty, node.size, |off| read(self, off));
        for s in slots {
            if let PointerSlot::InUnion { disc_offset, tag, .. } = s {
                if read(self, disc_offset) != Some(tag as u64) {
                    continue;
                }
            }
            let off = s.offset();
            let Some(value) = read(self, off) else { continue };
            if value == 0 {
                continue;
            }
            let loc = remote.is_none().then_some(Loc::Mem { addr: node.base + off });
            self.add_edge(SourceKey::Node(k), off, loc, value, s.pointee(), false)?;
        }
        Ok(())
    }

    fn finish(self) -> PointerGraph {
        let index: BTreeMap<NodeKey, usize> = self.nodes.keys().enumerate().map(|(i, k)| (*k, i)).collect();
        let nodes: Vec<Node> = self.nodes.into_values().collect();
        let mut edges: Vec<Edge> = self
            .edges
            .into_iter()
            .map(|((src, off), (target, mut e))| {
                e.source = match src {
                    SourceKey::Reg { thread, n } => Source::Reg { thread, n },
                    SourceKey::Node(k) => Source::Node { node: index[&k], offset: off },
                };
                e.target = index[&target];
                e
            })
            .collect();
        edges.sort_by_key(|e| e.source);
        PointerGraph { nodes, edges }
    }
}

/// Pointer slots of an object of type `ty` occupying `size` bytes. Dynamic
/// arrays read their element count through `read`.
pub fn object_slots(
    types: &crate::types::TypeMap,
    ty: TypeId,
    size: u64,
    read: impl Fn(u64) -> Option<u64>,
) -> Vec<PointerSlot> {
    match types.desc(ty) {
        TypeDesc::DynArray { elem } => {
            let esize = types.size_of(*elem).unwrap_or(WORD).max(1);
            let inner = types.pointer_slots(*elem);
            if inner.is_empty() {
                return Vec::new();
            }
            let fit = size.saturating_sub(WORD) / esize;
            let n = read(0).unwrap_or(0).min(fit);
            let mut out = Vec::with_capacity(n as usize * inner.len());
            for i in 0..n {
                for s in &inner {
                    out.push(shift(s, WORD + i * esize));
                }
            }
            out
        }
        _ => types.pointer_slots(ty),
    }
}

/// Chunk ids of heap nodes, plus remote nodes when asked.
pub fn reachable_chunks(g: &PointerGraph, include_remote: bool) -> BTreeSet<u32> {
    g.nodes
        .iter()
        .filter_map(|n| match n.region {
            Region::Heap(id) => Some(id),
            Region::Remote(id) if include_remote => Some(id),
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::codegen::compile;
    use crate::oracle::diff::check_boundary;
    use crate::vm::{StepEvent, Vm, VmConfig};

    fn vm_for(src: &str, seed: u64) -> Vm {
        Vm::new(Arc::new(compile(src).unwrap()), VmConfig { seed, ..VmConfig::default() })
    }

    /// Runs to the entry function's last instruction.
    fn at_exit(src: &str) -> Vm {
        let mut vm = vm_for(src, 1);
        while !vm.at_main_exit() {
            vm.step().unwrap();
        }
        vm
    }

    /// Steps until the main thread's pc reaches the first `print`.
    fn at_first_print(src: &str) -> Vm {
        let mut vm = vm_for(src, 1);
        while !matches!(vm.next_instr(), Some((_, crate::isa::Instr::Print { .. }))) {
            vm.step().unwrap();
        }
        vm
    }

    fn diff_every_boundary(src: &str, seed: u64) -> u64 {
        let mut vm = vm_for(src, seed);
        let mut n = 0;
        loop {
            if let Err(f) = check_boundary(&vm) {
                panic!("step {}: {:?}\n{}", vm.steps, f, vm.image.disassemble());
            }
            n += 1;
            if vm.step().unwrap() == StepEvent::Finished {
                return n;
            }
        }
    }

    const LIST3: &str = "struct N { next: *N, v: int }\n\
        fn main() { let a: *N = alloc(N); a.v = 1; let b: *N = alloc(N); b.v = 2; a.next = b; \
        let c: *N = alloc(N); c.v = 3; b.next = c; print(a.v); print(a.next.next.v); }";

    #[test]
    fn main_only_is_one_frame() {
        let vm = at_first_print(LIST3);
        let frames = unwind(&vm, &vm.image, 0).unwrap();
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].pc as u64, vm.threads[0].pc);
    }

    #[test]
    fn nested_calls_match_vm_call_stack() {
        let src = "fn g(x: int) -> int { print(x); return x + 1; }\n\
            fn f(x: int) -> int { let y: int = g(x); return y * 2; }\n\
            fn main() { let z: int = f(3); print(z); }";
        let vm = at_first_print(src);
        let frames = unwind(&vm, &vm.image, 0).unwrap();
        let calls = &vm.threads[0].calls;
        assert_eq!(frames.len(), 3);
        let want: Vec<(u32, u64)> = calls.iter().rev().map(|c| (c.func, c.cfa)).collect();
        let got: Vec<(u32, u64)> = frames.iter().map(|f| (f.func, f.cfa)).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn clobbered_return_address_fails_unwind() {
        let src = "fn g(x: int) -> int { print(x); return x; }\nfn main() { let z: int = g(3); print(z); }";
        let mut vm = at_first_print(src);
        let cfa = vm.threads[0].calls.last().unwrap().cfa;
        vm.poke(cfa).unwrap().v = 0x7fff_0000;
        assert!(matches!(unwind(&vm, &vm.image, 0), Err(UnwindError::BadPc { .. })));
    }

    #[test]
    fn list_has_one_root_and_two_heap_edges() {
        let vm = at_first_print(LIST3);
        let g = trace_graph(&vm, &vm.image).unwrap();
        assert_eq!(g.edges.iter().filter(|e| e.root).count(), 1);
        assert_eq!(g.edges.iter().filter(|e| !e.root).count(), 2);
        assert_eq!(reachable_chunks(&g, false), BTreeSet::from([0, 1, 2]));
    }

    #[test]
    fn cycle_terminates() {
        let src = "struct N { next: *N, v: int }\n\
            fn main() { let a: *N = alloc(N); let b: *N = alloc(N); a.next = b; b.next = a; print(1); print(a.v); }";
        let vm = at_first_print(src);
        let g = trace_graph(&vm, &vm.image).unwrap();
        assert_eq!(g.nodes.iter().filter(|n| matches!(n.region, Region::Heap(_))).count(), 2);
        assert_eq!(g.edges.len(), 3);
    }

    #[test]
    fn dynarray_skips_null_elements() {
        let src = "fn main() { let a: *dynarray *int = alloc_array(*int, 4); a[1] = alloc(int); a[3] = alloc(int); \
            print(1); print(len(a)); }";
        let vm = at_first_print(src);
        let g = trace_graph(&vm, &vm.image).unwrap();
        let arr = g.nodes.iter().position(|n| n.region == Region::Heap(0)).unwrap();
        let out: Vec<u64> = g
            .edges
            .iter()
            .filter_map(|e| match e.source {
                Source::Node { node, offset } if node == arr => Some(offset),
                _ => None,
            })
            .collect();
        assert_eq!(out, vec![16, 32]);
    }

    #[test]
    fn union_scalar_variant_is_not_a_root() {
        let src = "union U { Num: int, P: *int }\n\
            fn main() { let q: *int = alloc(int); let u: U = P(q); u = Num(7); print(1); \
            match u { Num(n) => { print(n); } _ => {} } }";
        let vm = at_first_print(src);
        let g = trace_graph(&vm, &vm.image).unwrap();
        assert!(g.edges.is_empty(), "{g:?}");
    }

    #[test]
    fn null_pointer_after_untaken_branch_is_no_root() {
        let src = "fn main() { let p: *int = null; if rand() == 42 { p = alloc(int); } print(1); \
            if p != null { print(*p); } }";
        for seed in 0..20 {
            let mut vm = vm_for(src, seed);
            while !matches!(vm.next_instr(), Some((_, crate::isa::Instr::Print { .. }))) {
                vm.step().unwrap();
            }
            let g = trace_graph(&vm, &vm.image).unwrap();
            assert_eq!(g.edges.len(), vm.heap.live_chunks().count());
        }
    }

    #[test]
    fn static_roots_and_static_targets() {
        let src = "struct N { next: *N, v: int }\nglobal head: *N = null;\nglobal cell: N;\n\
            fn main() { head = alloc(N); head.next = &cell; print(1); print(head.v); }";
        let vm = at_first_print(src);
        let g = trace_graph(&vm, &vm.image).unwrap();
        assert!(g.nodes.iter().any(|n| n.region == Region::Static));
        assert_eq!(g.edges.len(), 2);
        assert!(g.edges.iter().any(|e| e.root && matches!(e.loc, Some(Loc::Mem { addr }) if addr == STATIC_BASE)));
    }

    #[test]
    fn dropped_chunk_is_unreachable_at_exit() {
        let src = "struct N { next: *N, v: int }\nglobal keep: *N = null;\n\
            fn main() { keep = alloc(N); let t: *N = alloc(N); t.v = 1; t = null; print(keep.v); }";
        let vm = at_exit(src);
        let g = trace_graph(&vm, &vm.image).unwrap();
        assert_eq!(reachable_chunks(&g, false), BTreeSet::from([0]));
    }

    #[test]
    fn remote_nodes_follow_flag() {
        let src = "struct N { next: *N, v: int }\n\
            fn main() { let a: *N = alloc(N); a.next = alloc(N); print(1); print(a.v); }";
        let mut vm = at_first_print(src);
        let b = vm.heap.chunks[1].base;
        vm.poke(vm.heap.chunks[0].base).unwrap().v = sentinel::encode(1, 0);
        vm.heap.free(b);
        let g = trace_graph(&vm, &vm.image).unwrap();
        assert_eq!(reachable_chunks(&g, false), BTreeSet::from([0]));
        assert_eq!(reachable_chunks(&g, true), BTreeSet::from([0, 1]));
    }

    #[test]
    fn graph_is_deterministic_and_pure() {
        let vm = at_first_print(LIST3);
        let snap = vm.capture_snapshot();
        let a = trace_graph(&snap, &vm.image).unwrap();
        let b = trace_graph(&snap, &vm.image).unwrap();
        assert_eq!(a, b);
        assert_eq!(snap, vm.capture_snapshot());
        assert_eq!(a, trace_graph(&vm, &vm.image).unwrap());
        assert_eq!(emit::to_json(&a, &vm.image.types), emit::to_json(&b, &vm.image.types));
    }

    #[test]
    fn every_boundary_agrees_with_shadow() {
        let progs = [
            LIST3,
            "struct N { next: *N, v: int }\nglobal head: *N = null;\n\
             fn push(h: *N, v: int) -> *N { let n: *N = alloc(N); n.next = h; n.v = v; return n; }\n\
             fn sum(h: *N) -> int { let s: int = 0; while h != null { s = s + h.v; h = h.next; } return s; }\n\
             fn main() { let i: int = 0; while i < 6 { head = push(head, i); i = i + 1; } print(sum(head)); \
             let d: *N = pass head; while d != null { let nx: *N = d.next; free(pass d); d = nx; } }",
            "union U { Num: int, P: *int }\nstruct B { u: U, k: int }\n\
             fn main() { let b: *B = alloc(B); let i: int = 0; while i < 5 { if rand() < 50 { b.u = P(alloc(int)); } \
             else { b.u = Num(i); } i = i + 1; } match b.u { P(x) => { print(*x); } Num(n) => { print(n); } _ => {} } }",
            "@allocator fn mk(v: int) -> *int { let p: *int = alloc(int); *p = v; return p; }\n\
             fn main() { let a: *int = mk(1); let b: *int = mk(2); print(*a + *b); }",
            "fn work(p: *int, n: int) { let i: int = 0; while i < n { *p = *p + i; i = i + 1; } print(*p); }\n\
             fn main() { let a: *int = alloc(int); let b: *int = alloc(int); spawn work(a, 5); spawn work(b, 7); \
             work(a, 3); }",
        ];
        for (i, p) in progs.iter().enumerate() {
            for seed in 0..3 {
                let n = diff_every_boundary(p, seed);
                assert!(n > 10, "program {i} ran {n} steps");
            }
        }
    }
}
