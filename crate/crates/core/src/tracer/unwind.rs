//! Stack walking from unwind rows alone.

use thiserror::Error;

use crate::image::ProgramImage;
use crate::isa::{CALLEE_SAVED, EXIT_PC, REG_PC, REG_SP, STACK_SIZE};
use crate::vm::MachineView;

/// Where a frame's view of a callee-saved register currently lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Home {
    Reg(u8),
    Mem(u64),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub func: u32,
    pub pc: u32,
    pub cfa: u64,
    /// sp while this frame is active (lowest address of the frame).
    pub sp: u64,
    /// Homes of r8..r11 as seen by this frame.
    pub callee_saved: [Home; 4],
}

impl Frame {
    pub fn home(&self, reg: u8) -> Option<Home> {
        CALLEE_SAVED.iter().position(|r| r.0 == reg).map(|i| self.callee_saved[i])
    }

    /// Byte range `[sp, cfa + 8)`: locals, saved fp and return address.
    pub fn extent(&self) -> (u64, u64) {
        (self.sp, self.cfa + 8)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum UnwindError {
    #[error("thread {0} does not exist")]
    NoThread(u32),
    #[error("pc {pc:#x} in thread {thread} is outside all functions")]
    BadPc { thread: u32, pc: u64 },
    #[error("no unwind row for function {func} at pc {pc}")]
    NoRow { func: u32, pc: u32 },
    #[error("stack word {addr:#x} unreadable while unwinding thread {thread}")]
    Unreadable { thread: u32, addr: u64 },
    #[error("call chain of thread {0} is too deep")]
    TooDeep(u32),
}

/// Frames of thread `t`, innermost first.
pub fn unwind(view: &dyn MachineView, img: &ProgramImage, t: u32) -> Result<Vec<Frame>, UnwindError> {
    let reg = |n: u8| view.reg(t, n).ok_or(UnwindError::NoThread(t));
    let mut pc = reg(REG_PC)?;
    let mut sp = reg(REG_SP)?;
    let mut homes = CALLEE_SAVED.map(|r| Home::Reg(r.0));
    let mut frames = Vec::new();
    let read = |addr: u64| view.read(addr).ok_or(UnwindError::Unreadable { thread: t, addr });
    loop {
        if frames.len() as u64 > STACK_SIZE / 16 {
            return Err(UnwindError::TooDeep(t));
        }
        let pc32 = u32::try_from(pc).map_err(|_| UnwindError::BadPc { thread: t, pc })?;
        let func = img.function_at(pc32).ok_or(UnwindError::BadPc { thread: t, pc })?;
        let row = img.unwind_row(func, pc32).ok_or(UnwindError::NoRow { func, pc: pc32 })?;
        let cfa = sp + row.cfa_offset as u64;
        frames.push(Frame { func, pc: pc32, cfa, sp, callee_saved: homes });
        let ra = read(cfa)?;
        for &(r, off) in &row.saved {
            if let Some(i) = CALLEE_SAVED.iter().position(|c| c.0 == r) {
                homes[i] = Home::Mem(cfa.wrapping_add(off as i64 as u64));
            }
        }
        if ra == EXIT_PC {
            return Ok(frames);
        }
        if let Some(o) = row.saved_fp {
            read(cfa.wrapping_add(o as i64 as u64))?;
        }
        sp = cfa + 8;
        pc = ra;
    }
}
