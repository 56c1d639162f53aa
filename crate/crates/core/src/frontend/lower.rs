//! Expands union-store markers into their ordered store sequences.
//!
//! A pointer variant becomes zero-data, write-tag, write-pointer, so a
//! snapshot between any two steps sees the old variant, a null pointer of
//! the new variant, or the final value. A scalar variant is tag then data.

use super::ir::{Inst, TypedIr};
use crate::isa::VariantClass;

pub fn lower(mut ir: TypedIr) -> TypedIr {
    for f in &mut ir.functions {
        if !f.body.iter().any(|i| matches!(i, Inst::UnionStore { .. })) {
            continue;
        }
        let mut out = Vec::with_capacity(f.body.len() + 8);
        for inst in f.body.drain(..) {
            match inst {
                Inst::UnionStore { place, tag, class, src } => {
                    if let VariantClass::Pointer(_) = class {
                        out.push(Inst::UnionZero { place });
                    }
                    out.push(Inst::UnionTag { place, tag, class });
                    out.push(Inst::UnionData { place, src });
                }
                other => out.push(other),
            }
        }
        f.body = out;
    }
    ir
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{check_rules, ir, parse};

    fn lowered(src: &str) -> ir::TypedIr {
        lower(check_rules(&parse(src).unwrap()).unwrap())
    }

    const UNION_SRC: &str = "union U { Num: int, IntPtr: *int }\n\
        fn main() { let p: *int = alloc(int); let u: U = Num(7); u = IntPtr(p); }";

    #[test]
    fn pointer_variant_is_zero_tag_value() {
        let ir = lowered(UNION_SRC);
        let body = &ir.functions[0].body;
        let zero = body.iter().position(|i| matches!(i, Inst::UnionZero { .. })).unwrap();
        assert!(matches!(body[zero + 1], Inst::UnionTag { tag: 2, class: VariantClass::Pointer(_), .. }));
        assert!(matches!(body[zero + 2], Inst::UnionData { .. }));
        assert!(ir::verify(&ir).is_ok());
    }

    #[test]
    fn scalar_variant_is_tag_value() {
        let ir = lowered(UNION_SRC);
        let body = &ir.functions[0].body;
        let first_tag = body.iter().position(|i| matches!(i, Inst::UnionTag { .. })).unwrap();
        assert!(matches!(body[first_tag], Inst::UnionTag { tag: 1, class: VariantClass::Scalar, .. }));
        assert!(matches!(body[first_tag + 1], Inst::UnionData { .. }));
        assert!(first_tag == 0 || !matches!(body[first_tag - 1], Inst::UnionZero { .. }));
    }

    #[test]
    fn union_free_program_is_unchanged() {
        let ast = parse("fn main() { let x: int = 3; print(x); }").unwrap();
        let before = check_rules(&ast).unwrap();
        assert_eq!(lower(before.clone()), before);
    }
}
