use std::io::Write;
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use maptrace::codegen::compile;
use maptrace::transport::proto::{self, Response};
use maptrace::transport::{remote_snapshot, serve, Client, ClientError, StopReason};
use maptrace::vm::{Vm, VmConfig};

const THREADS: &str = "struct N { next: *N, v: int }\nglobal head: *N = null;\n\
    fn work(p: *N, n: int) { let i: int = 0; while i < n { p.v = p.v + i; i = i + 1; } print(p.v); }\n\
    fn main() { head = alloc(N); head.next = alloc(N); spawn work(head, 20); work(head.next, 30); print(head.v); }";

const SPIN: &str = "fn main() { let i: int = 0; while i < 100000000 { i = i + 1; } print(i); }";

fn start(src: &str, seed: u64, steps: u64) -> (Client<TcpStream>, JoinHandle<Vm>) {
    let mut vm = Vm::new(Arc::new(compile(src).unwrap()), VmConfig { seed, ..VmConfig::default() });
    for _ in 0..steps {
        vm.step().unwrap();
    }
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let h = thread::spawn(move || serve(vm, &listener).unwrap());
    (Client::new(TcpStream::connect(addr).unwrap()), h)
}

fn finish(c: Client<TcpStream>, h: JoinHandle<Vm>) -> Vm {
    drop(c);
    h.join().unwrap()
}

#[test]
fn remote_snapshot_equals_local_capture() {
    for (seed, steps) in [(1, 0), (2, 17), (3, 60), (4, 140), (5, 333)] {
        let (mut c, h) = start(THREADS, seed, steps);
        let remote = remote_snapshot(&mut c).unwrap();
        let vm = finish(c, h);
        assert_eq!(remote, vm.capture_snapshot(), "seed {seed} step {steps}");
    }
}

#[test]
fn two_threads_both_register_files() {
    let (mut c, h) = start(THREADS, 9, 40);
    let s = remote_snapshot(&mut c).unwrap();
    assert_eq!(s.threads.len(), 2);
    finish(c, h);
}

#[test]
fn get_regs_matches_local_registers() {
    let (mut c, h) = start(THREADS, 1, 25);
    let regs = c.get_regs(0).unwrap();
    assert_eq!(regs.len(), 18);
    let vm = finish(c, h);
    assert_eq!(regs, vm.threads[0].exposed_regs());
}

#[test]
fn error_codes() {
    let (mut c, h) = start(THREADS, 1, 10);
    assert!(matches!(c.read_mem(0x4000_0000, 8), Err(ClientError::Remote(proto::ERR_ADDRESS))));
    assert!(matches!(c.get_regs(77), Err(ClientError::Remote(proto::ERR_BAD_THREAD))));
    let mut raw = c.into_inner();
    proto::write_frame(&mut raw, 0x42, &[]).unwrap();
    let (op, p) = proto::read_frame(&mut raw).unwrap().unwrap();
    assert_eq!(Response::decode(0x42, op, &p).unwrap(), Response::Error(proto::ERR_UNKNOWN_OPCODE));
    let c = Client::new(raw);
    finish(c, h);
}

#[test]
fn halt_resume_and_running_guards() {
    let (mut c, h) = start(SPIN, 1, 0);
    c.resume().unwrap();
    assert!(matches!(c.write_words(0x3000_0000, &[0]), Err(ClientError::Remote(proto::ERR_NOT_HALTED))));
    assert!(matches!(c.get_regs(0), Err(ClientError::Remote(proto::ERR_NOT_HALTED))));
    c.halt().unwrap();
    let (reason, steps) = c.wait_stop().unwrap();
    assert_eq!(reason, StopReason::Halted);
    assert!(steps > 0);
    let s = remote_snapshot(&mut c).unwrap();
    let vm = finish(c, h);
    assert_eq!(s, vm.capture_snapshot());
}

#[test]
fn wait_stop_reports_finish() {
    let (mut c, h) = start(THREADS, 3, 0);
    c.resume().unwrap();
    let (reason, _) = c.wait_stop().unwrap();
    assert_eq!(reason, StopReason::Finished);
    let vm = finish(c, h);
    assert!(vm.finished);
}

#[test]
fn write_and_set_reg_mutate_halted_guest() {
    let (mut c, h) = start(THREADS, 1, 30);
    let (base, _) = c.static_info().unwrap();
    c.write_words(base, &[0]).unwrap();
    c.set_reg(0, 4, 1234).unwrap();
    let vm = finish(c, h);
    assert_eq!(vm.statics[0].v, 0);
    assert_eq!(vm.threads[0].regs[4].v, 1234);
}

#[test]
fn bad_framing_closes_without_touching_guest() {
    let (c, h) = start(THREADS, 1, 30);
    let mut raw = c.into_inner();
    raw.write_all(&[0, 0, 0, 0]).unwrap();
    let r = proto::read_frame(&mut raw);
    assert!(matches!(r, Ok(None) | Err(_)));
    let vm = h.join().unwrap();
    assert_eq!(vm.steps, 30);
}

#[test]
fn server_closing_mid_read_is_a_transport_error() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let h = thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        let _ = proto::read_frame(&mut s);
        s.write_all(&[200, 0, 0, 0, 0x81, 1]).unwrap();
    });
    let mut c = Client::new(TcpStream::connect(addr).unwrap());
    let r = remote_snapshot(&mut c);
    assert!(matches!(r, Err(ClientError::Io(_)) | Err(ClientError::Closed)), "{r:?}");
    h.join().unwrap();
}
