//! Name resolution, type checking and rule enforcement, producing typed IR.
//!
//! Locals are restricted to int, bool, pointers and unions; structs and
//! arrays live only in the heap or the static region. Union payloads are
//! one word and can only be read through `match`.

use std::collections::HashMap;

use super::ast::*;
use super::ir::{Class, Inst, IrFunction, Label, TypedIr, UnionLocal, UnionPlace, VReg, VRegInfo};
use super::{Diagnostic, Rule, RuleViolation};
use crate::image::GlobalInfo;
use crate::isa::{BinOp, IndexLen, UnOp, VariantClass};
use crate::types::{Field, TypeDesc, TypeId, TypeMap, Variant, BOOL, INT, WORD};

pub const MAX_PARAMS: usize = 4;

type Res<T> = Result<T, ()>;

struct FnSig {
    index: u32,
    params: Vec<TypeId>,
    ret: Option<TypeId>,
    pos: Pos,
}

struct VariantInfo {
    name: String,
    tag: u32,
    ty: TypeId,
}

#[derive(Clone, Copy)]
enum Local {
    Value(VReg, TypeId),
    Union(u32, TypeId),
}

#[derive(Clone, Copy)]
enum Val {
    V(VReg, TypeId),
    Null,
}

#[derive(Clone, Copy)]
enum Place {
    Local(VReg, TypeId),
    UnionLocal(u32, TypeId),
    Mem { base: VReg, off: u32, ty: TypeId },
}

struct Checker {
    types: TypeMap,
    structs: HashMap<String, TypeId>,
    unions: HashMap<String, TypeId>,
    fields: HashMap<TypeId, Vec<(String, u32, TypeId)>>,
    variants: HashMap<TypeId, Vec<VariantInfo>>,
    variant_names: HashMap<String, Pos>,
    globals: HashMap<String, (u32, TypeId)>,
    funcs: HashMap<String, FnSig>,
    diags: Vec<Diagnostic>,
}

struct FnCtx {
    f: IrFunction,
    scopes: Vec<HashMap<String, Local>>,
    ret: Option<TypeId>,
}

impl FnCtx {
    fn emit(&mut self, i: Inst) {
        self.f.body.push(i);
    }

    fn label(&mut self) -> Label {
        self.f.labels += 1;
        Label(self.f.labels - 1)
    }

    fn lookup(&self, name: &str) -> Option<Local> {
        self.scopes.iter().rev().find_map(|s| s.get(name).copied())
    }
}

pub fn check(ast: &Ast) -> Result<TypedIr, Vec<Diagnostic>> {
    let mut c = Checker {
        types: TypeMap::new(),
        structs: HashMap::new(),
        unions: HashMap::new(),
        fields: HashMap::new(),
        variants: HashMap::new(),
        variant_names: HashMap::new(),
        globals: HashMap::new(),
        funcs: HashMap::new(),
        diags: Vec::new(),
    };
    c.declare_types(ast);
    let (globals, static_size, static_init) = c.declare_globals(ast);
    c.declare_functions(ast);
    let mut functions = Vec::new();
    for f in &ast.functions {
        functions.push(c.function(f));
    }
    let main = c.funcs.get("main").map(|s| (s.index, s.params.is_empty(), s.pos));
    let entry = match main {
        Some((index, no_params, pos)) => {
            if !no_params {
                c.error(pos, "`main` takes no parameters");
            }
            index
        }
        None => {
            c.error(Pos { line: 1, col: 1 }, "program has no `main` function");
            0
        }
    };
    if c.types.validate().is_err() {
        c.error(Pos { line: 1, col: 1 }, "recursive type contains itself by value");
    }
    if !c.diags.is_empty() {
        c.diags.sort_by_key(|d| d.pos());
        return Err(c.diags);
    }
    Ok(TypedIr { types: c.types, globals, static_size, static_init, functions, entry })
}

impl Checker {
    fn error(&mut self, pos: Pos, msg: impl Into<String>) {
        self.diags.push(Diagnostic::Error { pos, message: msg.into() });
    }

    fn violation(&mut self, rule: Rule, pos: Pos, msg: impl Into<String>) {
        self.diags.push(Diagnostic::Rule(RuleViolation { rule, pos, message: msg.into() }));
    }

    // ---- declarations ----

    fn declare_types(&mut self, ast: &Ast) {
        for s in &ast.structs {
            if self.structs.contains_key(&s.name) || self.unions.contains_key(&s.name) {
                self.error(s.pos, format!("type `{}` declared twice", s.name));
                continue;
            }
            let id = self.types.reserve(&s.name);
            self.structs.insert(s.name.clone(), id);
        }
        for u in &ast.unions {
            if self.structs.contains_key(&u.name) || self.unions.contains_key(&u.name) {
                self.error(u.pos, format!("type `{}` declared twice", u.name));
                continue;
            }
            let id = self.types.reserve(&u.name);
            self.unions.insert(u.name.clone(), id);
        }
        for u in &ast.unions {
            let id = self.unions[&u.name];
            if self.variants.contains_key(&id) {
                continue;
            }
            let mut vs = Vec::new();
            for (i, m) in u.variants.iter().enumerate() {
                let Some(ty) = self.resolve(&m.ty, m.pos) else { continue };
                if !(ty == INT || ty == BOOL || self.types.is_pointer(ty)) {
                    self.error(m.pos, "union variants must hold an int, bool or pointer");
                    continue;
                }
                if vs.iter().any(|v: &VariantInfo| v.name == m.name) {
                    self.error(m.pos, format!("variant `{}` declared twice", m.name));
                    continue;
                }
                self.variant_names.entry(m.name.clone()).or_insert(m.pos);
                vs.push(VariantInfo { name: m.name.clone(), tag: i as u32 + 1, ty });
            }
            let desc = TypeDesc::Union {
                size: 16,
                disc_offset: 0,
                data_offset: 8,
                variants: vs.iter().map(|v| Variant { tag: v.tag, ty: v.ty }).collect(),
            };
            self.types.define(id, desc);
            self.variants.insert(id, vs);
        }
        // Struct layout needs field sizes, which may come from structs declared later.
        let mut state: HashMap<TypeId, bool> = HashMap::new();
        for s in &ast.structs {
            self.layout_struct(ast, s, &mut state);
        }
    }

    fn layout_struct(&mut self, ast: &Ast, s: &StructDecl, state: &mut HashMap<TypeId, bool>) {
        let id = self.structs[&s.name];
        match state.get(&id) {
            Some(true) => return,
            Some(false) => {
                self.error(s.pos, format!("struct `{}` contains itself", s.name));
                return;
            }
            None => {}
        }
        state.insert(id, false);
        let mut fields = Vec::new();
        let mut names = Vec::new();
        let mut off = 0u32;
        for m in &s.fields {
            // Contained structs (not through pointers) must be laid out first.
            let mut t = &m.ty;
            while let TypeExpr::Array(inner, _) | TypeExpr::DynArray(inner) = t {
                t = inner;
            }
            if let TypeExpr::Named(n) = t {
                if let Some(inner) = ast.structs.iter().find(|d| &d.name == n) {
                    self.layout_struct(ast, inner, state);
                }
            }
            let Some(ty) = self.resolve(&m.ty, m.pos) else { continue };
            let Some(size) = self.sized(ty) else {
                self.error(m.pos, "struct fields must have a fixed size");
                continue;
            };
            if names.iter().any(|(n, _, _): &(String, u32, TypeId)| *n == m.name) {
                self.error(m.pos, format!("field `{}` declared twice", m.name));
                continue;
            }
            fields.push(Field { offset: off, ty });
            names.push((m.name.clone(), off, ty));
            off += size as u32;
        }
        self.types.define(id, TypeDesc::Struct { size: off.max(WORD as u32), fields });
        self.fields.insert(id, names);
        state.insert(id, true);
    }

    fn sized(&self, ty: TypeId) -> Option<u64> {
        match self.types.desc(ty) {
            TypeDesc::Array { elem, .. } => self.sized(*elem).and_then(|_| self.types.size_of(ty)),
            TypeDesc::Struct { size: 0, .. } => None,
            _ => self.types.size_of(ty),
        }
    }

    fn resolve(&mut self, t: &TypeExpr, pos: Pos) -> Option<TypeId> {
        match t {
            TypeExpr::Int => Some(INT),
            TypeExpr::Bool => Some(BOOL),
            TypeExpr::Ptr(inner) => {
                let p = self.resolve(inner, pos)?;
                Some(self.types.pointer_to(p))
            }
            TypeExpr::Named(n) => match self.structs.get(n).or_else(|| self.unions.get(n)) {
                Some(id) => Some(*id),
                None => {
                    self.error(pos, format!("unknown type `{n}`"));
                    None
                }
            },
            TypeExpr::Array(inner, n) => {
                let e = self.resolve(inner, pos)?;
                if matches!(self.types.desc(e), TypeDesc::DynArray { .. }) {
                    self.error(pos, "array elements must have a fixed size");
                    return None;
                }
                let name = format!("[{}; {n}]", self.types.name(e));
                Some(self.types.intern(TypeDesc::Array { elem: e, count: *n }, &name))
            }
            TypeExpr::DynArray(inner) => {
                let e = self.resolve(inner, pos)?;
                if matches!(self.types.desc(e), TypeDesc::DynArray { .. }) {
                    self.error(pos, "array elements must have a fixed size");
                    return None;
                }
                let name = format!("dynarray {}", self.types.name(e));
                Some(self.types.intern(TypeDesc::DynArray { elem: e }, &name))
            }
        }
    }

    fn declare_globals(&mut self, ast: &Ast) -> (Vec<GlobalInfo>, u32, Vec<(u32, i64)>) {
        let mut out = Vec::new();
        let mut init = Vec::new();
        let mut off = 0u32;
        for g in &ast.globals {
            if self.globals.contains_key(&g.name) {
                self.error(g.pos, format!("global `{}` declared twice", g.name));
                continue;
            }
            let Some(ty) = self.resolve(&g.ty, g.pos) else { continue };
            let Some(size) = self.sized(ty) else {
                self.error(g.pos, "globals must have a fixed size");
                continue;
            };
            if let Some(e) = &g.init {
                let value = match (&e.kind, ty) {
                    (ExprKind::Int(n), INT) => Some(*n),
                    (ExprKind::Unary(UnOp::Neg, inner), INT) => match inner.kind {
                        ExprKind::Int(n) => Some(-n),
                        _ => None,
                    },
                    (ExprKind::Bool(b), BOOL) => Some(*b as i64),
                    (ExprKind::Null, _) if self.types.is_pointer(ty) => Some(0),
                    _ => None,
                };
                match value {
                    Some(v) if v != 0 => init.push((off, v)),
                    Some(_) => {}
                    None if self.types.is_pointer(ty) => {
                        self.violation(Rule::R1, e.pos, "global pointers can only be initialized to null")
                    }
                    None => self.error(e.pos, "global initializer must be a literal of the global's type"),
                }
            }
            self.globals.insert(g.name.clone(), (off, ty));
            out.push(GlobalInfo { name: g.name.clone(), offset: off, ty });
            off += size as u32;
        }
        (out, off, init)
    }

    fn declare_functions(&mut self, ast: &Ast) {
        for (i, f) in ast.functions.iter().enumerate() {
            if self.funcs.contains_key(&f.name) {
                self.error(f.pos, format!("function `{}` declared twice", f.name));
                continue;
            }
            if self.variant_names.contains_key(&f.name) {
                self.error(f.pos, format!("`{}` is already a union variant", f.name));
            }
            if f.params.len() > MAX_PARAMS {
                self.error(f.pos, format!("at most {MAX_PARAMS} parameters are supported"));
            }
            let mut params = Vec::new();
            for p in &f.params {
                let ty = self.resolve(&p.ty, p.pos).unwrap_or(INT);
                if !self.is_value_type(ty) {
                    self.error(p.pos, "parameters must be int, bool or a pointer");
                }
                params.push(ty);
            }
            let ret = f.ret.as_ref().map(|t| {
                let ty = self.resolve(t, f.pos).unwrap_or(INT);
                if !self.is_value_type(ty) {
                    self.error(f.pos, "functions return int, bool or a pointer");
                }
                ty
            });
            self.funcs.insert(f.name.clone(), FnSig { index: i as u32, params, ret, pos: f.pos });
        }
    }

    fn is_value_type(&self, ty: TypeId) -> bool {
        ty == INT || ty == BOOL || self.types.is_pointer(ty)
    }

    fn is_union(&self, ty: TypeId) -> bool {
        matches!(self.types.desc(ty), TypeDesc::Union { .. })
    }

    fn class_of(&self, ty: TypeId) -> Class {
        match self.types.pointee(ty) {
            Some(p) => Class::Ptr(p),
            None => Class::Scalar,
        }
    }

    fn tyname(&self, ty: TypeId) -> String {
        self.types.name(ty).to_string()
    }

    // ---- functions ----

    fn function(&mut self, decl: &FnDecl) -> IrFunction {
        let ret = self.funcs.get(&decl.name).and_then(|s| s.ret);
        let mut cx = FnCtx {
            f: IrFunction {
                name: decl.name.clone(),
                params: Vec::new(),
                ret: ret.map(|t| self.class_of(t)),
                allocator: decl.allocator,
                vregs: Vec::new(),
                union_locals: Vec::new(),
                body: Vec::new(),
                labels: 0,
            },
            scopes: vec![HashMap::new()],
            ret,
        };
        for p in &decl.params {
            let ty = self.resolve(&p.ty, p.pos).unwrap_or(INT);
            if cx.lookup(&p.name).is_some() {
                self.error(p.pos, format!("parameter `{}` declared twice", p.name));
            }
            let v = self.vreg(&mut cx, ty, Some(&p.name));
            cx.f.params.push(v);
            cx.scopes[0].insert(p.name.clone(), Local::Value(v, ty));
        }
        self.block(&mut cx, &decl.body);
        // Falling off the end returns zero.
        let src = match ret {
            Some(ty) => {
                let v = self.vreg(&mut cx, ty, None);
                cx.emit(if self.types.is_pointer(ty) { Inst::Null { dst: v } } else { Inst::Const { dst: v, value: 0 } });
                Some(v)
            }
            None => None,
        };
        cx.emit(Inst::Ret { src });
        cx.f
    }

    fn vreg(&self, cx: &mut FnCtx, ty: TypeId, name: Option<&str>) -> VReg {
        let v = VReg(cx.f.vregs.len() as u32);
        cx.f.vregs.push(VRegInfo { class: self.class_of(ty), ty, name: name.map(str::to_string) });
        v
    }

    fn declare_local(&mut self, cx: &mut FnCtx, name: &str, local: Local, pos: Pos) {
        if cx.lookup(name).is_some() || self.globals.contains_key(name) {
            self.error(pos, format!("`{name}` is already declared"));
        }
        cx.scopes.last_mut().unwrap().insert(name.to_string(), local);
    }

    fn block(&mut self, cx: &mut FnCtx, b: &Block) {
        cx.scopes.push(HashMap::new());
        for s in b {
            let _ = self.stmt(cx, s);
        }
        cx.scopes.pop();
    }

    fn stmt(&mut self, cx: &mut FnCtx, s: &Stmt) -> Res<()> {
        match &s.kind {
            StmtKind::Let { name, ty, init } => {
                let Some(ty) = self.resolve(ty, s.pos) else { return Err(()) };
                if self.is_union(ty) {
                    let idx = cx.f.union_locals.len() as u32;
                    cx.f.union_locals.push(UnionLocal { name: name.clone(), ty });
                    match init {
                        Some(e) => {
                            let (tag, class, src) = self.variant_payload(cx, e, ty)?;
                            self.declare_local(cx, name, Local::Union(idx, ty), s.pos);
                            cx.emit(Inst::UnionStore { place: UnionPlace::Local(idx), tag, class, src });
                        }
                        None => {
                            self.declare_local(cx, name, Local::Union(idx, ty), s.pos);
                            let z = self.vreg(cx, INT, None);
                            cx.emit(Inst::Const { dst: z, value: 0 });
                            cx.emit(Inst::UnionStore {
                                place: UnionPlace::Local(idx),
                                tag: 0,
                                class: VariantClass::Scalar,
                                src: z,
                            });
                        }
                    }
                    return Ok(());
                }
                if !self.is_value_type(ty) {
                    self.error(
                        s.pos,
                        format!("local `{name}` of type `{}`: only int, bool, pointers and unions can be locals", self.tyname(ty)),
                    );
                    return Err(());
                }
                let src = match init {
                    Some(e) => {
                        let val = self.rvalue(cx, e)?;
                        Some(self.coerce(cx, val, ty, e.pos)?)
                    }
                    None => None,
                };
                let v = self.vreg(cx, ty, Some(name));
                match src {
                    Some(src) => cx.emit(Inst::Copy { dst: v, src }),
                    None if self.types.is_pointer(ty) => cx.emit(Inst::Null { dst: v }),
                    None => cx.emit(Inst::Const { dst: v, value: 0 }),
                }
                self.declare_local(cx, name, Local::Value(v, ty), s.pos);
            }
            StmtKind::Assign { target, value } => self.assign(cx, target, value)?,
            StmtKind::If { cond, then, els } => {
                let c = self.condition(cx, cond)?;
                let else_l = cx.label();
                let end = cx.label();
                cx.emit(Inst::Brz { cond: c, target: else_l });
                self.block(cx, then);
                cx.emit(Inst::Jmp(end));
                cx.emit(Inst::Label(else_l));
                if let Some(b) = els {
                    self.block(cx, b);
                }
                cx.emit(Inst::Label(end));
            }
            StmtKind::While { cond, body } => {
                let head = cx.label();
                let end = cx.label();
                cx.emit(Inst::Label(head));
                let c = self.condition(cx, cond)?;
                cx.emit(Inst::Brz { cond: c, target: end });
                self.block(cx, body);
                cx.emit(Inst::Jmp(head));
                cx.emit(Inst::Label(end));
            }
            StmtKind::Return(value) => {
                let src = match (value, cx.ret) {
                    (Some(e), Some(ty)) => {
                        let val = self.rvalue(cx, e)?;
                        Some(self.coerce(cx, val, ty, e.pos)?)
                    }
                    (None, None) => None,
                    (Some(e), None) => {
                        self.error(e.pos, "function has no return type");
                        return Err(());
                    }
                    (None, Some(_)) => {
                        self.error(s.pos, "missing return value");
                        return Err(());
                    }
                };
                cx.emit(Inst::Ret { src });
            }
            StmtKind::Free(e) => {
                if !matches!(e.kind, ExprKind::Pass(_)) {
                    self.violation(Rule::R2, e.pos, "argument of `free` must be a `pass` expression");
                    return Err(());
                }
                match self.rvalue(cx, e)? {
                    Val::V(v, ty) if self.types.is_pointer(ty) => cx.emit(Inst::Free { src: v }),
                    _ => {
                        self.error(e.pos, "`free` needs a pointer");
                        return Err(());
                    }
                }
            }
            StmtKind::Print(e) => {
                let v = self.scalar(cx, e)?;
                cx.emit(Inst::Print { src: v });
            }
            StmtKind::Spawn { func, args } => {
                let Some(sig) = self.funcs.get(func) else {
                    self.error(s.pos, format!("unknown function `{func}`"));
                    return Err(());
                };
                let (index, params) = (sig.index, sig.params.clone());
                let args = self.args(cx, func, &params, args, s.pos)?;
                cx.emit(Inst::Spawn { func: index, args });
            }
            StmtKind::Match { scrutinee, arms, default } => self.match_stmt(cx, scrutinee, arms, default.as_ref(), s.pos)?,
            StmtKind::Expr(e) => {
                if let ExprKind::Call(name, args) = &e.kind {
                    if let Some(sig) = self.funcs.get(name) {
                        if sig.ret.is_none() {
                            let (index, params) = (sig.index, sig.params.clone());
                            let args = self.args(cx, name, &params, args, e.pos)?;
                            cx.emit(Inst::Call { dst: None, func: index, args });
                            return Ok(());
                        }
                    }
                }
                self.rvalue(cx, e)?;
            }
        }
        Ok(())
    }

    fn match_stmt(
        &mut self,
        cx: &mut FnCtx,
        scrutinee: &Expr,
        arms: &[MatchArm],
        default: Option<&Block>,
        pos: Pos,
    ) -> Res<()> {
        let place = self.place(cx, scrutinee)?;
        let (uplace, uty) = match place {
            Place::UnionLocal(i, ty) => (UnionPlace::Local(i), ty),
            Place::Mem { base, off, ty } if self.is_union(ty) => (UnionPlace::Mem { base, off }, ty),
            _ => {
                self.error(scrutinee.pos, "`match` needs a union");
                return Err(());
            }
        };
        let tag = self.vreg(cx, INT, None);
        cx.emit(Inst::UnionTagLoad { dst: tag, place: uplace });
        let end = cx.label();
        let mut seen: Vec<&str> = Vec::new();
        for arm in arms {
            let Some((vtag, vty)) = self.variant(uty, &arm.variant) else {
                self.error(arm.pos, format!("union `{}` has no variant `{}`", self.tyname(uty), arm.variant));
                continue;
            };
            if seen.contains(&arm.variant.as_str()) {
                self.error(arm.pos, format!("variant `{}` matched twice", arm.variant));
                continue;
            }
            seen.push(&arm.variant);
            let k = self.vreg(cx, INT, None);
            let c = self.vreg(cx, BOOL, None);
            let next = cx.label();
            cx.emit(Inst::Const { dst: k, value: vtag as i64 });
            cx.emit(Inst::Bin { op: BinOp::Eq, dst: c, a: tag, b: k });
            cx.emit(Inst::Brz { cond: c, target: next });
            cx.scopes.push(HashMap::new());
            let b = self.vreg(cx, vty, Some(&arm.binding));
            cx.emit(Inst::UnionDataLoad { dst: b, place: uplace });
            self.declare_local(cx, &arm.binding, Local::Value(b, vty), arm.pos);
            self.block(cx, &arm.body);
            cx.scopes.pop();
            cx.emit(Inst::Jmp(end));
            cx.emit(Inst::Label(next));
        }
        if let Some(b) = default {
            self.block(cx, b);
        }
        cx.emit(Inst::Label(end));
        let _ = pos;
        Ok(())
    }

    fn variant(&self, union: TypeId, name: &str) -> Option<(u32, TypeId)> {
        self.variants.get(&union)?.iter().find(|v| v.name == name).map(|v| (v.tag, v.ty))
    }

    fn is_variant_ctor(&self, e: &Expr) -> bool {
        matches!(&e.kind, ExprKind::Call(n, _) if self.variant_names.contains_key(n) && !self.funcs.contains_key(n))
    }

    /// Evaluates a variant constructor `V(x)` destined for a union of type `union`.
    fn variant_payload(&mut self, cx: &mut FnCtx, e: &Expr, union: TypeId) -> Res<(u32, VariantClass, VReg)> {
        let ExprKind::Call(name, args) = &e.kind else {
            self.violation(Rule::R1, e.pos, "a union can only be assigned through a variant constructor");
            return Err(());
        };
        if !self.is_variant_ctor(e) {
            self.violation(Rule::R1, e.pos, "a union can only be assigned through a variant constructor");
            return Err(());
        }
        if args.len() != 1 {
            self.error(e.pos, format!("variant `{name}` takes exactly one value"));
            return Err(());
        }
        let val = self.rvalue(cx, &args[0])?;
        let Some((tag, vty)) = self.variant(union, name) else {
            self.error(e.pos, format!("union `{}` has no variant `{name}`", self.tyname(union)));
            return Err(());
        };
        let src = self.coerce(cx, val, vty, args[0].pos)?;
        let class = match self.types.pointee(vty) {
            Some(p) => VariantClass::Pointer(p),
            None => VariantClass::Scalar,
        };
        Ok((tag, class, src))
    }

    fn assign(&mut self, cx: &mut FnCtx, target: &Expr, value: &Expr) -> Res<()> {
        if self.is_variant_ctor(value) {
            // Payload first, then the target place.
            let ExprKind::Call(name, args) = &value.kind else { unreachable!() };
            if args.len() != 1 {
                self.error(value.pos, format!("variant `{name}` takes exactly one value"));
                return Err(());
            }
            let val = self.rvalue(cx, &args[0])?;
            let place = self.place(cx, target)?;
            let (uplace, uty) = match place {
                Place::UnionLocal(i, ty) => (UnionPlace::Local(i), ty),
                Place::Mem { base, off, ty } if self.is_union(ty) => (UnionPlace::Mem { base, off }, ty),
                _ => {
                    self.violation(Rule::R1, value.pos, "variant constructor assigned to a non-union location");
                    return Err(());
                }
            };
            let Some((tag, vty)) = self.variant(uty, name) else {
                self.error(value.pos, format!("union `{}` has no variant `{name}`", self.tyname(uty)));
                return Err(());
            };
            let src = self.coerce(cx, val, vty, args[0].pos)?;
            let class = match self.types.pointee(vty) {
                Some(p) => VariantClass::Pointer(p),
                None => VariantClass::Scalar,
            };
            cx.emit(Inst::UnionStore { place: uplace, tag, class, src });
            return Ok(());
        }
        let val = self.rvalue(cx, value)?;
        let place = self.place(cx, target)?;
        match place {
            Place::Local(v, ty) => {
                let src = self.coerce(cx, val, ty, value.pos)?;
                cx.emit(Inst::Copy { dst: v, src });
            }
            Place::UnionLocal(..) => {
                self.violation(Rule::R1, value.pos, "a union can only be assigned through a variant constructor");
                return Err(());
            }
            Place::Mem { base, off, ty } => {
                if self.is_union(ty) {
                    self.violation(Rule::R1, value.pos, "a union can only be assigned through a variant constructor");
                    return Err(());
                }
                if !self.is_value_type(ty) {
                    self.error(target.pos, format!("cannot assign a whole `{}`", self.tyname(ty)));
                    return Err(());
                }
                let src = self.coerce(cx, val, ty, value.pos)?;
                cx.emit(Inst::Store { base, off, src });
            }
        }
        Ok(())
    }

    fn args(&mut self, cx: &mut FnCtx, name: &str, params: &[TypeId], args: &[Expr], pos: Pos) -> Res<[Option<VReg>; 4]> {
        if args.len() != params.len() {
            self.error(pos, format!("`{name}` takes {} arguments, {} given", params.len(), args.len()));
            return Err(());
        }
        let mut out = [None; 4];
        for (i, (a, ty)) in args.iter().zip(params).enumerate().take(MAX_PARAMS) {
            let val = self.rvalue(cx, a)?;
            out[i] = Some(self.coerce(cx, val, *ty, a.pos)?);
        }
        Ok(out)
    }

    /// Converts `val` to a vreg of type `ty`, reporting rule violations for
    /// pointer/non-pointer mixing (R1) and pointer type mismatches (R3).
    fn coerce(&mut self, cx: &mut FnCtx, val: Val, ty: TypeId, pos: Pos) -> Res<VReg> {
        let want_ptr = self.types.is_pointer(ty);
        match val {
            Val::Null if want_ptr => {
                let v = self.vreg(cx, ty, None);
                cx.emit(Inst::Null { dst: v });
                Ok(v)
            }
            Val::Null => {
                self.violation(Rule::R1, pos, format!("null stored in non-pointer type `{}`", self.tyname(ty)));
                Err(())
            }
            Val::V(v, src) if src == ty => Ok(v),
            Val::V(_, src) => {
                let have_ptr = self.types.is_pointer(src);
                match (have_ptr, want_ptr) {
                    (true, true) => self.violation(
                        Rule::R3,
                        pos,
                        format!("pointer of type `{}` used where `{}` is expected", self.tyname(src), self.tyname(ty)),
                    ),
                    (true, false) => self.violation(
                        Rule::R1,
                        pos,
                        format!("pointer value stored in non-pointer type `{}`", self.tyname(ty)),
                    ),
                    (false, true) => self.violation(
                        Rule::R1,
                        pos,
                        format!("non-pointer value of type `{}` stored in pointer type `{}`", self.tyname(src), self.tyname(ty)),
                    ),
                    (false, false) => self.error(
                        pos,
                        format!("expected `{}`, found `{}`", self.tyname(ty), self.tyname(src)),
                    ),
                }
                Err(())
            }
        }
    }

    fn condition(&mut self, cx: &mut FnCtx, e: &Expr) -> Res<VReg> {
        self.scalar(cx, e)
    }

    /// An int or bool rvalue.
    fn scalar(&mut self, cx: &mut FnCtx, e: &Expr) -> Res<VReg> {
        match self.rvalue(cx, e)? {
            Val::V(v, ty) if ty == INT || ty == BOOL => Ok(v),
            Val::V(_, ty) if self.types.is_pointer(ty) => {
                self.violation(Rule::R1, e.pos, "pointer value used as an integer");
                Err(())
            }
            Val::Null => {
                self.violation(Rule::R1, e.pos, "null used as an integer");
                Err(())
            }
            Val::V(_, ty) => {
                self.error(e.pos, format!("expected int or bool, found `{}`", self.tyname(ty)));
                Err(())
            }
        }
    }

    fn typed_scalar(&mut self, cx: &mut FnCtx, e: &Expr, want: TypeId) -> Res<VReg> {
        let val = self.rvalue(cx, e)?;
        self.coerce(cx, val, want, e.pos)
    }

    // ---- places ----

    fn place(&mut self, cx: &mut FnCtx, e: &Expr) -> Res<Place> {
        match &e.kind {
            ExprKind::Var(name) => {
                if let Some(l) = cx.lookup(name) {
                    return Ok(match l {
                        Local::Value(v, ty) => Place::Local(v, ty),
                        Local::Union(i, ty) => Place::UnionLocal(i, ty),
                    });
                }
                if let Some(&(off, ty)) = self.globals.get(name) {
                    let pty = self.types.pointer_to(ty);
                    let base = self.vreg(cx, pty, None);
                    cx.emit(Inst::StaticAddr { dst: base, off, pointee: ty });
                    return Ok(Place::Mem { base, off: 0, ty });
                }
                self.error(e.pos, format!("unknown name `{name}`"));
                Err(())
            }
            ExprKind::Field(obj, name) => {
                let (base, off, sty) = self.object(cx, obj)?;
                if self.is_union(sty) {
                    self.violation(Rule::R1, e.pos, "union variants can only be read through `match`");
                    return Err(());
                }
                let Some((foff, fty)) = self
                    .fields
                    .get(&sty)
                    .and_then(|fs| fs.iter().find(|(n, _, _)| n == name).map(|(_, o, t)| (*o, *t)))
                else {
                    self.error(e.pos, format!("type `{}` has no field `{name}`", self.tyname(sty)));
                    return Err(());
                };
                Ok(Place::Mem { base, off: off + foff, ty: fty })
            }
            ExprKind::Index(arr, idx) => {
                let (base, off, aty) = self.object(cx, arr)?;
                let (elem, len) = match self.types.desc(aty) {
                    TypeDesc::Array { elem, count } => (*elem, IndexLen::Fixed(*count)),
                    TypeDesc::DynArray { elem } => (*elem, IndexLen::Dynamic),
                    _ => {
                        self.error(e.pos, format!("cannot index a `{}`", self.tyname(aty)));
                        return Err(());
                    }
                };
                let i = self.typed_scalar(cx, idx, INT)?;
                let arr_base = if off == 0 {
                    base
                } else {
                    let pty = self.types.pointer_to(aty);
                    let b = self.vreg(cx, pty, None);
                    cx.emit(Inst::FieldAddr { dst: b, base, off, pointee: aty });
                    b
                };
                let elem_size = self.types.size_of(elem).unwrap_or(WORD) as u32;
                let pty = self.types.pointer_to(elem);
                let p = self.vreg(cx, pty, None);
                cx.emit(Inst::IndexAddr { dst: p, base: arr_base, idx: i, elem_size, len, pointee: elem });
                Ok(Place::Mem { base: p, off: 0, ty: elem })
            }
            ExprKind::Deref(inner) => match self.rvalue(cx, inner)? {
                Val::V(v, ty) if self.types.is_pointer(ty) => {
                    let pointee = self.types.pointee(ty).unwrap();
                    Ok(Place::Mem { base: v, off: 0, ty: pointee })
                }
                Val::Null => {
                    self.error(e.pos, "dereference of null");
                    Err(())
                }
                Val::V(_, _) => {
                    self.violation(Rule::R1, e.pos, "dereference of a non-pointer value");
                    Err(())
                }
            },
            _ => {
                self.error(e.pos, "expression is not assignable");
                Err(())
            }
        }
    }

    /// Resolves the object an access path goes through: an aggregate place,
    /// or the target of a pointer value. Returns (base pointer, offset, type).
    fn object(&mut self, cx: &mut FnCtx, e: &Expr) -> Res<(VReg, u32, TypeId)> {
        let is_path = matches!(e.kind, ExprKind::Var(_) | ExprKind::Field(..) | ExprKind::Index(..) | ExprKind::Deref(_));
        if is_path {
            let place = self.place(cx, e)?;
            match place {
                Place::Mem { base, off, ty } if !self.is_value_type(ty) => return Ok((base, off, ty)),
                Place::UnionLocal(_, _) => {
                    self.violation(Rule::R1, e.pos, "union variants can only be read through `match`");
                    return Err(());
                }
                _ => {}
            }
            let val = self.load(cx, place, e.pos)?;
            return self.through_pointer(val, e.pos);
        }
        let val = self.rvalue(cx, e)?;
        self.through_pointer(val, e.pos)
    }

    fn through_pointer(&mut self, val: Val, pos: Pos) -> Res<(VReg, u32, TypeId)> {
        match val {
            Val::V(v, ty) if self.types.is_pointer(ty) => Ok((v, 0, self.types.pointee(ty).unwrap())),
            Val::V(_, ty) => {
                self.error(pos, format!("`{}` has no fields or elements", self.tyname(ty)));
                Err(())
            }
            Val::Null => {
                self.error(pos, "access through null");
                Err(())
            }
        }
    }

    fn load(&mut self, cx: &mut FnCtx, place: Place, pos: Pos) -> Res<Val> {
        match place {
            Place::Local(v, ty) => Ok(Val::V(v, ty)),
            Place::UnionLocal(..) => {
                self.violation(Rule::R1, pos, "union value read outside `match`");
                Err(())
            }
            Place::Mem { base, off, ty } => {
                if self.is_union(ty) {
                    self.violation(Rule::R1, pos, "union value read outside `match`");
                    return Err(());
                }
                if !self.is_value_type(ty) {
                    self.error(pos, format!("`{}` cannot be used as a value", self.tyname(ty)));
                    return Err(());
                }
                let v = self.vreg(cx, ty, None);
                cx.emit(Inst::Load { dst: v, base, off });
                Ok(Val::V(v, ty))
            }
        }
    }

    // ---- rvalues ----

    fn rvalue(&mut self, cx: &mut FnCtx, e: &Expr) -> Res<Val> {
        match &e.kind {
            ExprKind::Int(n) => {
                let v = self.vreg(cx, INT, None);
                cx.emit(Inst::Const { dst: v, value: *n });
                Ok(Val::V(v, INT))
            }
            ExprKind::Bool(b) => {
                let v = self.vreg(cx, BOOL, None);
                cx.emit(Inst::Const { dst: v, value: *b as i64 });
                Ok(Val::V(v, BOOL))
            }
            ExprKind::Null => Ok(Val::Null),
            ExprKind::Var(_) | ExprKind::Field(..) | ExprKind::Index(..) | ExprKind::Deref(_) => {
                let place = self.place(cx, e)?;
                self.load(cx, place, e.pos)
            }
            ExprKind::AddrOf(inner) => {
                let place = self.place(cx, inner)?;
                match place {
                    Place::Local(..) | Place::UnionLocal(..) => {
                        self.violation(Rule::R2, e.pos, "address of a stack local would outlive its frame");
                        Err(())
                    }
                    Place::Mem { base, off, ty } => {
                        let pty = self.types.pointer_to(ty);
                        if off == 0 && cx.f.class(base) == Class::Ptr(ty) {
                            return Ok(Val::V(base, pty));
                        }
                        let v = self.vreg(cx, pty, None);
                        cx.emit(Inst::FieldAddr { dst: v, base, off, pointee: ty });
                        Ok(Val::V(v, pty))
                    }
                }
            }
            ExprKind::Pass(inner) => {
                let is_path = matches!(inner.kind, ExprKind::Var(_) | ExprKind::Field(..) | ExprKind::Index(..) | ExprKind::Deref(_));
                if !is_path {
                    self.error(e.pos, "`pass` needs a pointer variable or field");
                    return Err(());
                }
                let place = self.place(cx, inner)?;
                match place {
                    Place::Local(src, ty) if self.types.is_pointer(ty) => {
                        let v = self.vreg(cx, ty, None);
                        cx.emit(Inst::Pass { dst: v, src });
                        Ok(Val::V(v, ty))
                    }
                    Place::Mem { base, off, ty } if self.types.is_pointer(ty) => {
                        let v = self.vreg(cx, ty, None);
                        cx.emit(Inst::PassMem { dst: v, base, off });
                        Ok(Val::V(v, ty))
                    }
                    Place::UnionLocal(..) => {
                        self.violation(Rule::R1, e.pos, "`pass` on a union is not supported; use `match`");
                        Err(())
                    }
                    Place::Mem { ty, .. } if self.is_union(ty) => {
                        self.violation(Rule::R1, e.pos, "`pass` on a union is not supported; use `match`");
                        Err(())
                    }
                    _ => {
                        self.error(e.pos, "`pass` needs a pointer");
                        Err(())
                    }
                }
            }
            ExprKind::Alloc(t) => {
                let ty = self.resolve(t, e.pos).ok_or(())?;
                if self.sized(ty).is_none() {
                    self.error(e.pos, "use `alloc_array` for dynamic arrays");
                    return Err(());
                }
                let pty = self.types.pointer_to(ty);
                let v = self.vreg(cx, pty, None);
                cx.emit(Inst::Alloc { dst: v, ty });
                Ok(Val::V(v, pty))
            }
            ExprKind::AllocArray(t, n) => {
                let elem = self.resolve(t, e.pos).ok_or(())?;
                let Some(elem_size) = self.sized(elem) else {
                    self.error(e.pos, "array elements must have a fixed size");
                    return Err(());
                };
                let count = self.typed_scalar(cx, n, INT)?;
                let name = format!("dynarray {}", self.tyname(elem));
                let dty = self.types.intern(TypeDesc::DynArray { elem }, &name);
                let pty = self.types.pointer_to(dty);
                let v = self.vreg(cx, pty, None);
                cx.emit(Inst::AllocArray { dst: v, ty: dty, count, elem_size: elem_size as u32 });
                Ok(Val::V(v, pty))
            }
            ExprKind::Len(inner) => {
                let (base, off, aty) = self.object(cx, inner)?;
                match self.types.desc(aty).clone() {
                    TypeDesc::Array { count, .. } => {
                        let v = self.vreg(cx, INT, None);
                        cx.emit(Inst::Const { dst: v, value: count as i64 });
                        Ok(Val::V(v, INT))
                    }
                    TypeDesc::DynArray { .. } => {
                        let v = self.vreg(cx, INT, None);
                        cx.emit(Inst::Load { dst: v, base, off });
                        Ok(Val::V(v, INT))
                    }
                    _ => {
                        self.error(e.pos, "`len` needs an array");
                        Err(())
                    }
                }
            }
            ExprKind::Rand => {
                let v = self.vreg(cx, INT, None);
                cx.emit(Inst::Rand { dst: v });
                Ok(Val::V(v, INT))
            }
            ExprKind::Call(name, args) => {
                if let Some(sig) = self.funcs.get(name) {
                    let (index, params, ret) = (sig.index, sig.params.clone(), sig.ret);
                    let Some(ret) = ret else {
                        self.error(e.pos, format!("`{name}` returns no value"));
                        return Err(());
                    };
                    let args = self.args(cx, name, &params, args, e.pos)?;
                    let v = self.vreg(cx, ret, None);
                    cx.emit(Inst::Call { dst: Some(v), func: index, args });
                    return Ok(Val::V(v, ret));
                }
                if self.variant_names.contains_key(name) {
                    self.violation(Rule::R1, e.pos, "union value constructed outside a union store");
                    return Err(());
                }
                self.error(e.pos, format!("unknown function `{name}`"));
                Err(())
            }
            ExprKind::Cast(inner, t) => {
                let val = self.rvalue(cx, inner)?;
                let to = self.resolve(t, e.pos).ok_or(())?;
                let to_ptr = self.types.is_pointer(to);
                match val {
                    Val::Null if to_ptr => Ok(Val::Null),
                    Val::Null => {
                        self.violation(Rule::R1, e.pos, "cast of null to a non-pointer type");
                        Err(())
                    }
                    Val::V(v, from) => {
                        let from_ptr = self.types.is_pointer(from);
                        if from == to {
                            return Ok(Val::V(v, to));
                        }
                        match (from_ptr, to_ptr) {
                            (true, false) => {
                                self.violation(Rule::R1, e.pos, "cast from pointer to non-pointer");
                                Err(())
                            }
                            (false, true) => {
                                self.violation(Rule::R1, e.pos, "cast to pointer from non-pointer");
                                Err(())
                            }
                            (true, true) => {
                                self.violation(
                                    Rule::R3,
                                    e.pos,
                                    format!("cast between pointer types `{}` and `{}`", self.tyname(from), self.tyname(to)),
                                );
                                Err(())
                            }
                            (false, false) if from == INT && to == BOOL => {
                                let z = self.vreg(cx, INT, None);
                                let d = self.vreg(cx, BOOL, None);
                                cx.emit(Inst::Const { dst: z, value: 0 });
                                cx.emit(Inst::Bin { op: BinOp::Ne, dst: d, a: v, b: z });
                                Ok(Val::V(d, BOOL))
                            }
                            (false, false) if from == BOOL && to == INT => {
                                let d = self.vreg(cx, INT, None);
                                cx.emit(Inst::Copy { dst: d, src: v });
                                Ok(Val::V(d, INT))
                            }
                            (false, false) => {
                                self.error(e.pos, format!("cannot cast `{}` to `{}`", self.tyname(from), self.tyname(to)));
                                Err(())
                            }
                        }
                    }
                }
            }
            ExprKind::Binary(op, a, b) => self.binary(cx, *op, a, b, e.pos),
            ExprKind::Unary(op, inner) => {
                let want = if *op == UnOp::Neg { INT } else { BOOL };
                let val = self.rvalue(cx, inner)?;
                if let Val::V(_, ty) = val {
                    if self.types.is_pointer(ty) {
                        self.violation(Rule::R1, e.pos, "arithmetic on a pointer value");
                        return Err(());
                    }
                }
                let src = self.coerce(cx, val, want, inner.pos)?;
                let v = self.vreg(cx, want, None);
                cx.emit(Inst::Un { op: *op, dst: v, src });
                Ok(Val::V(v, want))
            }
        }
    }

    fn binary(&mut self, cx: &mut FnCtx, op: BinOp, a: &Expr, b: &Expr, pos: Pos) -> Res<Val> {
        if matches!(op, BinOp::And | BinOp::Or) {
            let r = self.vreg(cx, BOOL, None);
            let av = self.typed_scalar(cx, a, BOOL)?;
            cx.emit(Inst::Copy { dst: r, src: av });
            let end = cx.label();
            cx.emit(if op == BinOp::And { Inst::Brz { cond: r, target: end } } else { Inst::Br { cond: r, target: end } });
            let bv = self.typed_scalar(cx, b, BOOL)?;
            cx.emit(Inst::Copy { dst: r, src: bv });
            cx.emit(Inst::Label(end));
            return Ok(Val::V(r, BOOL));
        }
        let va = self.rvalue(cx, a)?;
        let vb = self.rvalue(cx, b)?;
        let is_ptr = |c: &Self, v: &Val| match v {
            Val::Null => true,
            Val::V(_, t) => c.types.is_pointer(*t),
        };
        let (pa, pb) = (is_ptr(self, &va), is_ptr(self, &vb));
        if matches!(op, BinOp::Eq | BinOp::Ne) && (pa || pb) {
            // Pointer comparison: both sides must have the same pointer type.
            let ty = match (va, vb) {
                (Val::V(_, t), _) | (_, Val::V(_, t)) => t,
                (Val::Null, Val::Null) => {
                    let v = self.vreg(cx, BOOL, None);
                    cx.emit(Inst::Const { dst: v, value: (op == BinOp::Eq) as i64 });
                    return Ok(Val::V(v, BOOL));
                }
            };
            if !self.types.is_pointer(ty) {
                self.violation(Rule::R1, pos, "comparison between pointer and non-pointer");
                return Err(());
            }
            let x = self.coerce(cx, va, ty, a.pos)?;
            let y = self.coerce(cx, vb, ty, b.pos)?;
            let v = self.vreg(cx, BOOL, None);
            cx.emit(Inst::Bin { op, dst: v, a: x, b: y });
            return Ok(Val::V(v, BOOL));
        }
        if pa || pb {
            self.violation(Rule::R1, pos, format!("`{}` on a pointer value", op.symbol()));
            return Err(());
        }
        let (ta, tb) = match (va, vb) {
            (Val::V(_, x), Val::V(_, y)) => (x, y),
            _ => unreachable!(),
        };
        let (operand, result) = match op {
            BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div | BinOp::Rem => (INT, INT),
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => (INT, BOOL),
            _ => (ta, BOOL),
        };
        if ta != operand || tb != operand {
            self.error(
                pos,
                format!("`{}` on `{}` and `{}`", op.symbol(), self.tyname(ta), self.tyname(tb)),
            );
            return Err(());
        }
        let (Val::V(x, _), Val::V(y, _)) = (va, vb) else { unreachable!() };
        let v = self.vreg(cx, result, None);
        cx.emit(Inst::Bin { op, dst: v, a: x, b: y });
        Ok(Val::V(v, result))
    }
}

#[cfg(test)]
mod tests {
    use super::super::{ir, parse, Diagnostic, Rule};
    use super::*;

    fn rules(src: &str) -> Vec<Rule> {
        match check(&parse(src).unwrap()) {
            Ok(_) => vec![],
            Err(d) => d.iter().filter_map(Diagnostic::rule).collect(),
        }
    }

    fn ok(src: &str) -> TypedIr {
        match check(&parse(src).unwrap()) {
            Ok(ir) => ir,
            Err(d) => panic!("{d:?}"),
        }
    }

    #[test]
    fn pointer_to_int_cast_is_r1() {
        assert_eq!(rules("fn main() { let p: *int = alloc(int); let x: int = p as int; }"), vec![Rule::R1]);
    }

    #[test]
    fn free_without_pass_is_r2() {
        assert_eq!(rules("fn main() { let p: *int = alloc(int); free(p); }"), vec![Rule::R2]);
    }

    #[test]
    fn mismatched_pointer_is_r3() {
        assert_eq!(rules("fn main() { let p: *int = alloc(int); let q: *bool = p; }"), vec![Rule::R3]);
    }

    #[test]
    fn linked_list_is_accepted() {
        let ir = ok("struct N { v: int, next: *N }\n\
                     fn push(h: *N, v: int) -> *N { let n: *N = alloc(N); n.v = v; n.next = h; return n; }\n\
                     fn main() { let h: *N = null; let i: int = 0;\n\
                       while i < 3 { h = push(h, i); i = i + 1; }\n\
                       while h != null { print(h.v); let t: *N = pass h.next; free(pass h); h = t; } }");
        assert_eq!(ir.functions.len(), 2);
        assert!(ir::verify(&ir).is_ok());
    }

    #[test]
    fn all_violations_are_reported() {
        let got = rules(
            "fn main() { let p: *int = alloc(int); let x: int = p; free(p); let b: *bool = p; let q: *int = 5 as *int; }",
        );
        assert_eq!(got, vec![Rule::R1, Rule::R2, Rule::R3, Rule::R1]);
    }

    #[test]
    fn raw_union_read_is_r1() {
        let src = "union U { Num: int, P: *int }\nfn main() { let u: U = Num(3); print(u.Num); }";
        assert_eq!(rules(src), vec![Rule::R1]);
    }

    #[test]
    fn address_of_local_is_r2() {
        assert_eq!(rules("fn main() { let x: int = 1; let p: *int = &x; }"), vec![Rule::R2]);
    }

    #[test]
    fn interior_address_of_field() {
        let ir = ok("struct S { a: int, b: int }\nfn main() { let s: *S = alloc(S); let p: *int = &s.b; *p = 4; }");
        assert!(ir.functions[0].body.iter().any(|i| matches!(i, Inst::FieldAddr { off: 8, .. })));
    }

    #[test]
    fn free_argument_comes_from_pass() {
        let ir = ok("fn main() { let p: *int = alloc(int); if rand() == 42 { free(pass p); } }");
        assert!(ir::verify(&ir).is_ok());
        let body = &ir.functions[0].body;
        let f = body.iter().position(|i| matches!(i, Inst::Free { .. })).unwrap();
        assert!(matches!(body[f - 1], Inst::Pass { .. }));
    }

    #[test]
    fn no_pointer_integer_conversions_in_ir() {
        let ir = ok("struct N { v: int, next: *N }\nglobal g: *N;\n\
                     fn main() { g = alloc(N); let x: int = g.v + 1; let b: bool = x as bool; print(b as int); }");
        for f in &ir.functions {
            for inst in &f.body {
                if let Inst::Copy { dst, src } = inst {
                    assert_eq!(f.class(*dst), f.class(*src));
                }
            }
        }
        assert!(ir::verify(&ir).is_ok());
    }

    #[test]
    fn unknown_names_are_plain_errors() {
        let d = check(&parse("fn main() { y = 1; }").unwrap()).unwrap_err();
        assert!(matches!(d[0], Diagnostic::Error { .. }));
    }

    #[test]
    fn struct_locals_are_rejected() {
        let d = check(&parse("struct S { a: int }\nfn main() { let s: S; }").unwrap()).unwrap_err();
        assert!(d[0].rule().is_none());
    }
}
