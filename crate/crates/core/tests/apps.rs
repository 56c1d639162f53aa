use std::collections::BTreeSet;
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use maptrace::apps::{leakcheck, swapdemo, DirStore, MemoryStore, RemoteStore, SwapError, SwapManager};
use maptrace::codegen::compile;
use maptrace::image::ProgramImage;
use maptrace::isa::{sentinel, Instr};
use maptrace::oracle::diff::shadow_unreachable;
use maptrace::transport::{serve, Client};
use maptrace::vm::{Vm, VmConfig};

fn at_exit(src: &str) -> Vm {
    let mut vm = Vm::new(Arc::new(compile(src).unwrap()), VmConfig::default());
    while !vm.at_main_exit() {
        vm.step().unwrap();
    }
    vm
}

#[test]
fn dropped_pointer_is_a_leak() {
    let vm = at_exit("fn main() { let p: *int = alloc(int); *p = 4; print(*p); p = null; let q: *int = alloc(int); print(1); }");
    let r = leakcheck(&vm, &vm.image).unwrap();
    assert_eq!(r.chunk_ids(), vec![0, 1]);
    assert_eq!(r.chunk_ids(), shadow_unreachable(&vm).into_iter().collect::<Vec<_>>());
}

#[test]
fn no_allocations_no_leaks() {
    let vm = at_exit("fn main() { print(3); }");
    let r = leakcheck(&vm, &vm.image).unwrap();
    assert!(r.is_clean());
    assert_eq!(r.to_string(), "no leaks (0 live chunks)\n");
}

#[test]
fn unreachable_cycle_and_kept_global() {
    let src = "struct N { next: *N, v: int }\nglobal keep: *N = null;\n\
        fn main() { keep = alloc(N); let a: *N = alloc(N); let b: *N = alloc(N); a.next = b; b.next = a; print(a.v); }";
    let vm = at_exit(src);
    let r = leakcheck(&vm, &vm.image).unwrap();
    assert_eq!(r.chunk_ids(), vec![1, 2]);
    assert_eq!(r.leaked_bytes, 32);
    assert_eq!(shadow_unreachable(&vm), BTreeSet::from([1, 2]));
    assert!(r.to_string().contains("2 leaked chunks"));
}

const LIST: &str = "struct N { next: *N, v: int, pad: [int; 6] }\n\
    fn build(n: int) -> *N { let h: *N = null; let i: int = 0; \
      while i < n { let x: *N = alloc(N); x.v = i; x.next = h; h = x; i = i + 1; } return h; }\n\
    fn sum(h: *N) -> int { let s: int = 0; while h != null { s = s + h.v; h = h.next; } return s; }\n\
    fn main() { let h: *N = build(80); print(sum(h)); print(sum(h)); }";

fn image(src: &str) -> Arc<ProgramImage> {
    Arc::new(compile(src).unwrap())
}

#[test]
fn swapdemo_matches_uncapped_output() {
    let img = image(LIST);
    let mut plain = Vm::new(img.clone(), VmConfig::default());
    plain.run(10_000_000).unwrap();
    let mut store = MemoryStore::default();
    let cfg = VmConfig { seed: 0, heap_cap: 4096 };
    let run = swapdemo(img, cfg, 10_000_000, &mut store, true).unwrap();
    assert_eq!(run.output, plain.output);
    assert!(run.swap_outs() >= 1 && run.swap_ins() >= 1, "{:?}", run.events);
    assert!(run.audit_failures.is_empty(), "{:?}", run.audit_failures);
}

#[test]
fn swapdemo_dir_store() {
    let img = image(LIST);
    let d = tempfile::tempdir().unwrap();
    let mut store = DirStore::new(d.path()).unwrap();
    let run = swapdemo(img, VmConfig { seed: 3, heap_cap: 4096 }, 10_000_000, &mut store, true).unwrap();
    assert_eq!(run.output, vec![3160, 3160]);
    assert!(run.audit_failures.is_empty());
}

fn halted_at_print(src: &str) -> (Client<TcpStream>, JoinHandle<Vm>, Arc<ProgramImage>) {
    let img = image(src);
    let mut vm = Vm::new(img.clone(), VmConfig::default());
    while !matches!(vm.next_instr(), Some((_, Instr::Print { .. }))) {
        vm.step().unwrap();
    }
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let h = thread::spawn(move || serve(vm, &listener).unwrap());
    (Client::new(TcpStream::connect(addr).unwrap()), h, img)
}

#[test]
fn swap_out_rewrites_every_reference() {
    let src = "struct N { next: *N, v: int }\n\
        fn main() { let a: *N = alloc(N); let b: *N = alloc(N); a.next = b; b.v = 5; print(1); print(b.v + a.v); }";
    let (client, h, img) = halted_at_print(src);
    let mut store = MemoryStore::default();
    let mut m = SwapManager::new(client, img, &mut store);
    m.audit = true;
    m.swap_out(1).unwrap();
    assert!(m.audit_failures.is_empty(), "{:?}", m.audit_failures);
    let SwapManager { client, events, .. } = m;
    drop(client);
    let vm = h.join().unwrap();
    assert!(matches!(events[0], maptrace::apps::SwapEvent::Out { chunk: 1, rewrites: 2, .. }));
    let s = sentinel::encode(1, 0);
    assert_eq!(vm.peek(vm.heap.chunks[0].base).unwrap().v, s);
    assert!(vm.threads[0].regs.iter().any(|w| w.v == s));
    assert!(store.get(1).unwrap().is_some());
    assert!(maptrace::vm::audit_r2(&vm).is_ok());
}

#[test]
fn unreferenced_chunk_is_pure_eviction() {
    let src = "fn main() { let a: *int = alloc(int); a = null; let b: *int = alloc(int); print(1); print(*b); }";
    let (client, h, img) = halted_at_print(src);
    let mut store = MemoryStore::default();
    let mut m = SwapManager::new(client, img, &mut store);
    m.swap_out(0).unwrap();
    assert!(matches!(m.events[0], maptrace::apps::SwapEvent::Out { chunk: 0, rewrites: 0, .. }));
    drop(m);
    h.join().unwrap();
}

#[test]
fn interior_pointer_keeps_offset() {
    let src = "struct P { a: int, b: int }\nstruct H { p: *int }\n\
        fn main() { let x: *P = alloc(P); let h: *H = alloc(H); h.p = &x.b; x.b = 9; print(1); print(*h.p + x.a); }";
    let (client, h, img) = halted_at_print(src);
    let mut store = MemoryStore::default();
    let mut m = SwapManager::new(client, img, &mut store);
    m.swap_out(0).unwrap();
    drop(m);
    let vm = h.join().unwrap();
    assert_eq!(vm.peek(vm.heap.chunks[1].base).unwrap().v, sentinel::encode(0, 8));
}

#[test]
fn swap_in_restores_and_unknown_chunk_misses() {
    let src = "struct N { next: *N, v: int }\n\
        fn main() { let a: *N = alloc(N); let b: *N = alloc(N); a.next = b; b.v = 5; print(1); print(a.next.v + b.v); }";
    let (client, h, img) = halted_at_print(src);
    let mut store = MemoryStore::default();
    let mut m = SwapManager::new(client, img, &mut store);
    m.audit = true;
    m.swap_out(1).unwrap();
    assert!(matches!(m.swap_in(9), Err(SwapError::StoreMiss(9))));
    m.run().unwrap();
    assert!(m.audit_failures.is_empty());
    // The trapping load already copied the sentinel into a register.
    assert!(m.events.iter().any(|e| matches!(e, maptrace::apps::SwapEvent::In { chunk: 1, rewrites: 3, .. })), "{:?}", m.events);
    drop(m);
    let vm = h.join().unwrap();
    assert_eq!(vm.output, vec![1, 10]);
}

#[test]
fn swap_in_survives_room_making_that_rewrites_the_stored_object() {
    // Bringing a chunk back can evict a chunk it points to, which rewrites
    // words inside the still-stored copy.
    let img = image(&maptrace::oracle::gen::swap_program(8));
    let mut plain = Vm::new(img.clone(), VmConfig { seed: 8, ..VmConfig::default() });
    plain.run(50_000_000).unwrap();
    let mut store = MemoryStore::default();
    let run = swapdemo(img, VmConfig { seed: 8, heap_cap: 4096 }, 50_000_000, &mut store, true).unwrap();
    assert_eq!(run.output, plain.output);
    assert!(run.audit_failures.is_empty(), "{:?}", run.audit_failures);
}
