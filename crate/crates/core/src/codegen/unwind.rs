//! Unwind rows: how to find the CFA, saved fp and saved callee-saved
//! registers at every pc of a function.

use crate::image::UnwindRow;
use crate::isa::Instr;

/// Rows describe the state before the instruction at each pc executes.
/// Consecutive pcs with identical rules share a row.
pub fn unwind_rows(code: &[Instr], base: u32) -> Vec<UnwindRow> {
    let mut rows: Vec<UnwindRow> = Vec::new();
    let mut cur = UnwindRow { start: base, end: base, cfa_offset: 0, saved_fp: None, saved: Vec::new() };
    for (i, ins) in code.iter().enumerate() {
        let pc = base + i as u32;
        match rows.last_mut() {
            Some(last) if same_rule(last, &cur) && last.end == pc => last.end = pc + 1,
            _ => rows.push(UnwindRow { start: pc, end: pc + 1, ..cur.clone() }),
        }
        match *ins {
            Instr::Enter { size } => {
                cur.cfa_offset = size + 8;
                cur.saved_fp = Some(-8);
            }
            Instr::Leave => {
                cur.cfa_offset = 0;
                cur.saved_fp = None;
            }
            Instr::Save { rs, off } => cur.saved.push((rs.0, off)),
            Instr::Restore { rd, .. } => cur.saved.retain(|(r, _)| *r != rd.0),
            _ => {}
        }
    }
    rows
}

fn same_rule(a: &UnwindRow, b: &UnwindRow) -> bool {
    a.cfa_offset == b.cfa_offset && a.saved_fp == b.saved_fp && a.saved == b.saved
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::Reg;

    #[test]
    fn frameless_leaf_is_one_row() {
        let code = [Instr::Li { rd: Reg(0), imm: 1 }, Instr::Ret];
        let rows = unwind_rows(&code, 7);
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].start, rows[0].end, rows[0].cfa_offset), (7, 9, 0));
    }

    #[test]
    fn save_slot_visible_from_save_onward() {
        let code = [
            Instr::Enter { size: 16 },
            Instr::Save { rs: Reg(8), off: -24 },
            Instr::Li { rd: Reg(8), imm: 3 },
            Instr::Restore { rd: Reg(8), off: -24 },
            Instr::Leave,
            Instr::Ret,
        ];
        let rows = unwind_rows(&code, 0);
        let at = |pc: u32| rows.iter().find(|r| r.start <= pc && pc < r.end).unwrap();
        assert!(at(1).saved.is_empty());
        assert_eq!(at(1).cfa_offset, 24);
        assert_eq!(at(2).saved, vec![(8, -24)]);
        assert_eq!(at(3).saved, vec![(8, -24)]);
        assert!(at(4).saved.is_empty());
        assert_eq!(at(5).cfa_offset, 0);
    }
}
