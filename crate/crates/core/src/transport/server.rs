//! Debug stub: serves one client over a stream, stepping the guest between
//! requests while it runs. Requests are handled only at instruction
//! boundaries.

use std::io;
use std::net::TcpStream;
use std::sync::mpsc::{self, TryRecvError};
use std::thread;

use crate::isa::{NUM_EXPOSED_REGS, STATIC_BASE};
use crate::vm::{MachineView, StepEvent, Trap, Vm};

use super::proto::*;

/// Steps executed between checks for incoming requests.
const SLICE: u32 = 256;

pub struct Stub {
    pub vm: Vm,
    running: bool,
    stop: StopReason,
    /// Total step budget; the guest stops with a trap once it is spent.
    pub max_steps: u64,
}

impl Stub {
    /// A stub with the guest halted before its first instruction.
    pub fn new(vm: Vm) -> Stub {
        let stop = if vm.finished { StopReason::Finished } else { StopReason::Halted };
        Stub { vm, running: false, stop, max_steps: u64::MAX }
    }

    pub fn running(&self) -> bool {
        self.running
    }

    pub fn stop_reason(&self) -> &StopReason {
        &self.stop
    }

    /// Runs up to `n` steps; stops on trap, finish or budget.
    pub fn run_slice(&mut self, n: u32) {
        for _ in 0..n {
            if !self.running {
                return;
            }
            if self.vm.steps >= self.max_steps {
                self.halt_with(StopReason::Trap(Trap::StepLimit.to_string()));
                return;
            }
            match self.vm.step() {
                Ok(StepEvent::Finished) => self.halt_with(StopReason::Finished),
                Ok(_) if self.vm.finished => self.halt_with(StopReason::Finished),
                Ok(_) => {}
                Err(Trap::Sentinel { chunk, offset }) => self.halt_with(StopReason::Sentinel { chunk, offset }),
                Err(Trap::OutOfMemory { size }) => self.halt_with(StopReason::OutOfMemory { size }),
                Err(t) => self.halt_with(StopReason::Trap(t.to_string())),
            }
        }
    }

    fn halt_with(&mut self, r: StopReason) {
        self.running = false;
        self.stop = r;
    }

    pub fn stopped(&self) -> Response {
        Response::Stopped { reason: self.stop.clone(), steps: self.vm.steps }
    }

    /// Answers every request except `WaitStop`, which the serving loop
    /// defers until the guest stops.
    pub fn handle(&mut self, req: &Request) -> Response {
        let halted = !self.running;
        let needs_halt = matches!(
            req,
            Request::ListThreads
                | Request::GetRegs { .. }
                | Request::ReadMem { .. }
                | Request::GetAllocTable
                | Request::WriteMem { .. }
                | Request::SetReg { .. }
                | Request::EvictChunk { .. }
                | Request::ReinstateChunk { .. }
        );
        if needs_halt && !halted {
            return Response::Error(ERR_NOT_HALTED);
        }
        let vm = &mut self.vm;
        match req {
            Request::Hello => Response::Hello { version: PROTOCOL_VERSION, image_hash: vm.image_hash, halted },
            Request::ListThreads => Response::Threads(vm.thread_ids()),
            Request::GetRegs { tid } => match vm.thread(*tid).filter(|t| !t.exited) {
                Some(t) => Response::Regs(t.exposed_regs()),
                None => Response::Error(ERR_BAD_THREAD),
            },
            Request::ReadMem { addr, len } => {
                if *len > MAX_READ || addr % 8 != 0 || len % 8 != 0 {
                    return Response::Error(ERR_MALFORMED);
                }
                let mut out = Vec::with_capacity(*len as usize);
                for i in 0..(*len as u64 / 8) {
                    match addr.checked_add(8 * i).and_then(|a| vm.raw_read(a)) {
                        Some(v) => out.extend_from_slice(&v.to_le_bytes()),
                        None => return Response::Error(ERR_ADDRESS),
                    }
                }
                Response::Mem(out)
            }
            Request::GetAllocTable => {
                Response::AllocTable { arena_len: 8 * vm.heap.words.len() as u64, chunks: vm.heap.chunks.clone() }
            }
            Request::GetStaticInfo => Response::StaticInfo { base: STATIC_BASE, size: 8 * vm.statics.len() as u64 },
            Request::Halt => {
                if self.running {
                    self.halt_with(StopReason::Halted);
                }
                Response::Ack
            }
            Request::Resume => {
                if !vm.finished {
                    self.running = true;
                }
                Response::Ack
            }
            Request::WriteMem { addr, data } => {
                if addr % 8 != 0 || data.len() % 8 != 0 {
                    return Response::Error(ERR_MALFORMED);
                }
                let words = bytes_to_words(data);
                let addrs: Vec<Option<u64>> = (0..words.len() as u64).map(|i| addr.checked_add(8 * i)).collect();
                if addrs.iter().any(|a| a.and_then(|a| vm.read(a)).is_none()) {
                    return Response::Error(ERR_ADDRESS);
                }
                for (a, v) in addrs.into_iter().zip(words) {
                    vm.write_word(a.unwrap(), v);
                }
                Response::Ack
            }
            Request::SetReg { tid, reg, value } => {
                if vm.thread(*tid).is_none_or(|t| t.exited) {
                    return Response::Error(ERR_BAD_THREAD);
                }
                if *reg as usize >= NUM_EXPOSED_REGS {
                    return Response::Error(ERR_MALFORMED);
                }
                vm.set_reg(*tid, *reg, *value, None);
                Response::Ack
            }
            Request::WaitStop => self.stopped(),
            Request::EvictChunk { id } => match vm.evict_chunk(*id) {
                Some((chunk, words)) => Response::Evicted { chunk, data: words_to_bytes(&words) },
                None => Response::Error(ERR_BAD_CHUNK),
            },
            Request::ReinstateChunk { old, ty, size, data } => {
                if data.len() as u64 != size.div_ceil(8) * 8 || vm.image.types.get(*ty).is_none() {
                    return Response::Error(ERR_MALFORMED);
                }
                match vm.reinstate_chunk(*old, *ty, *size, &bytes_to_words(data)) {
                    Ok(c) => Response::Reinstated(c),
                    Err(_) => Response::Error(ERR_OUT_OF_MEMORY),
                }
            }
        }
    }
}

enum Incoming {
    Frame(u8, Vec<u8>),
    Closed,
}

/// Serves one connection until the client disconnects or sends a bad
/// frame, then hands the stub back.
pub fn serve_connection(mut stub: Stub, stream: TcpStream) -> io::Result<Stub> {
    let mut reader = stream.try_clone()?;
    let mut writer = stream;
    let (tx, rx) = mpsc::channel();
    let pump = thread::spawn(move || loop {
        match read_frame(&mut reader) {
            Ok(Some((op, p))) => {
                if tx.send(Incoming::Frame(op, p)).is_err() {
                    return;
                }
            }
            _ => {
                let _ = tx.send(Incoming::Closed);
                return;
            }
        }
    });
    let mut waiting = false;
    loop {
        let msg = if stub.running {
            match rx.try_recv() {
                Ok(m) => m,
                Err(TryRecvError::Empty) => {
                    stub.run_slice(SLICE);
                    if waiting && !stub.running {
                        waiting = false;
                        let (op, p) = stub.stopped().encode(OP_WAIT_STOP);
                        write_frame(&mut writer, op, &p)?;
                    }
                    continue;
                }
                Err(TryRecvError::Disconnected) => Incoming::Closed,
            }
        } else {
            rx.recv().unwrap_or(Incoming::Closed)
        };
        let Incoming::Frame(op, payload) = msg else { break };
        let resp = match Request::decode(op, &payload) {
            Ok(Some(Request::WaitStop)) if stub.running => {
                waiting = true;
                continue;
            }
            Ok(Some(req)) => stub.handle(&req),
            Ok(None) => Response::Error(ERR_UNKNOWN_OPCODE),
            Err(_) => Response::Error(ERR_MALFORMED),
        };
        let (rop, p) = resp.encode(op);
        write_frame(&mut writer, rop, &p)?;
    }
    let _ = writer.shutdown(std::net::Shutdown::Both);
    let _ = pump.join();
    Ok(stub)
}

/// Accepts one client on `endpoint` and serves it.
pub fn serve(vm: Vm, listener: &std::net::TcpListener) -> io::Result<Vm> {
    let (stream, _) = listener.accept()?;
    Ok(serve_connection(Stub::new(vm), stream)?.vm)
}
