//! Control flow and backward liveness over IR instructions.

use std::collections::HashMap;

use fixedbitset::FixedBitSet;

use crate::frontend::ir::{Inst, IrFunction, Label};

pub struct Cfg {
    pub succs: Vec<Vec<usize>>,
    pub preds: Vec<Vec<usize>>,
}

pub fn label_positions(body: &[Inst]) -> HashMap<Label, usize> {
    body.iter()
        .enumerate()
        .filter_map(|(i, inst)| match inst {
            Inst::Label(l) => Some((*l, i)),
            _ => None,
        })
        .collect()
}

pub fn cfg(body: &[Inst]) -> Cfg {
    let labels = label_positions(body);
    let n = body.len();
    let mut succs = vec![Vec::new(); n];
    for (i, inst) in body.iter().enumerate() {
        match inst {
            Inst::Jmp(l) => succs[i].push(labels[l]),
            Inst::Ret { .. } => {}
            Inst::Br { target, .. } | Inst::Brz { target, .. } => {
                if i + 1 < n {
                    succs[i].push(i + 1);
                }
                if !succs[i].contains(&labels[target]) {
                    succs[i].push(labels[target]);
                }
            }
            _ => {
                if i + 1 < n {
                    succs[i].push(i + 1);
                }
            }
        }
    }
    let mut preds = vec![Vec::new(); n];
    for (i, ss) in succs.iter().enumerate() {
        for &s in ss {
            preds[s].push(i);
        }
    }
    Cfg { succs, preds }
}

pub struct Liveness {
    pub live_in: Vec<FixedBitSet>,
    pub live_out: Vec<FixedBitSet>,
}

impl Liveness {
    pub fn is_live_out(&self, i: usize, v: u32) -> bool {
        self.live_out[i].contains(v as usize)
    }
}

/// Standard backward fixpoint: live_in = uses ∪ (live_out − defs).
/// `Pass` both reads and nulls its source, so the source counts as used
/// but is not killed by it.
pub fn liveness(f: &IrFunction, cfg: &Cfg) -> Liveness {
    let n = f.body.len();
    let nv = f.vregs.len();
    let mut live_in = vec![FixedBitSet::with_capacity(nv); n];
    let mut live_out = vec![FixedBitSet::with_capacity(nv); n];
    let uses: Vec<Vec<_>> = f.body.iter().map(|i| i.uses()).collect();
    let kills: Vec<Vec<_>> = f
        .body
        .iter()
        .map(|i| match i {
            Inst::Pass { dst, .. } => vec![*dst],
            other => other.defs(),
        })
        .collect();
    let mut changed = true;
    while changed {
        changed = false;
        for i in (0..n).rev() {
            let mut out = FixedBitSet::with_capacity(nv);
            for &s in &cfg.succs[i] {
                out.union_with(&live_in[s]);
            }
            let mut inn = out.clone();
            for d in &kills[i] {
                inn.set(d.0 as usize, false);
            }
            for u in &uses[i] {
                inn.insert(u.0 as usize);
            }
            if inn != live_in[i] || out != live_out[i] {
                live_in[i] = inn;
                live_out[i] = out;
                changed = true;
            }
        }
    }
    Liveness { live_in, live_out }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::compile_to_ir;
    use crate::frontend::ir::VReg;

    /// A vreg is live before instruction i iff some path from i reaches a
    /// use before any redefinition. Enumerates simple paths explicitly.
    fn brute_live_in(f: &IrFunction, cfg: &Cfg, i: usize, v: VReg) -> bool {
        fn walk(f: &IrFunction, cfg: &Cfg, i: usize, v: VReg, seen: &mut Vec<bool>) -> bool {
            if seen[i] {
                return false;
            }
            seen[i] = true;
            let inst = &f.body[i];
            let found = if inst.uses().contains(&v) {
                true
            } else if inst.defs().contains(&v) {
                false
            } else {
                cfg.succs[i].iter().any(|&s| walk(f, cfg, s, v, seen))
            };
            seen[i] = false;
            found
        }
        walk(f, cfg, i, v, &mut vec![false; f.body.len()])
    }

    #[test]
    fn matches_path_enumeration() {
        let srcs = [
            "fn main() { let p: *int = alloc(int); let i: int = 0; while i < 3 { *p = i; i = i + 1; } print(*p); }",
            "fn main() { let p: *int = null; if rand() < 50 { p = alloc(int); } else { print(1); } if p != null { print(*p); } }",
            "fn main() { let a: int = 1; let b: int = a + 2; if b > 2 { a = 5; } print(a); }",
        ];
        for src in srcs {
            let ir = compile_to_ir(src).unwrap();
            let f = &ir.functions[0];
            assert!(f.body.len() <= 40, "{}", f.body.len());
            let cfg = cfg(&f.body);
            let live = liveness(f, &cfg);
            for i in 0..f.body.len() {
                for v in 0..f.vregs.len() as u32 {
                    assert_eq!(
                        live.live_in[i].contains(v as usize),
                        brute_live_in(f, &cfg, i, VReg(v)),
                        "{src}: v{v} at {i}"
                    );
                }
            }
        }
    }

    #[test]
    fn pointer_live_across_loop() {
        let ir = compile_to_ir("fn main() { let p: *int = alloc(int); let i: int = 0; while i < 3 { *p = i; i = i + 1; } }").unwrap();
        let f = &ir.functions[0];
        let cfg = cfg(&f.body);
        let live = liveness(f, &cfg);
        let p = f.vregs.iter().position(|v| v.name.as_deref() == Some("p")).unwrap();
        let labels = label_positions(&f.body);
        let head = labels.values().min().copied().unwrap();
        assert!(live.live_in[head].contains(p));
    }
}
