//! Random minilang programs that satisfy the pointer rules by construction.
//!
//! Every dereference goes through a local that was null-checked in the
//! same thread, only freshly allocated, unshared chunks are freed, and all
//! loops have literal bounds. Calls only go to lower-numbered functions and
//! never sit inside loops, so runs stay short.

use std::fmt::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FuzzConfig {
    pub seed: u64,
    pub max_functions: usize,
    /// Statements per function body, before nesting.
    pub max_stmts: usize,
    pub unions: bool,
    pub dynarrays: bool,
    pub threads: bool,
    pub recursion: bool,
    /// Relative weight of pass/free statements, 0 disables them.
    pub pass_free: u32,
    /// Extra weight for union statements.
    pub union_bias: u32,
    pub iterations: usize,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            seed: 0x6d61_7074,
            max_functions: 5,
            max_stmts: 16,
            unions: true,
            dynarrays: true,
            threads: true,
            recursion: true,
            pass_free: 6,
            union_bias: 0,
            iterations: 1000,
        }
    }
}

impl FuzzConfig {
    pub fn union_heavy(seed: u64) -> FuzzConfig {
        FuzzConfig { seed, unions: true, union_bias: 30, ..FuzzConfig::default() }
    }

    pub fn rng(&self, index: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Ty {
    Int,
    IntP,
    Box,
    Node,
    Cell,
    Bag,
    BoxArr,
    IntArr,
    Val,
}

impl Ty {
    fn name(self) -> &'static str {
        match self {
            Ty::Int => "int",
            Ty::IntP => "*int",
            Ty::Box => "*Box",
            Ty::Node => "*Node",
            Ty::Cell => "*Cell",
            Ty::Bag => "*Bag",
            Ty::BoxArr => "*dynarray *Box",
            Ty::IntArr => "*dynarray int",
            Ty::Val => "Val",
        }
    }
}

#[derive(Clone, Debug)]
struct Var {
    name: String,
    ty: Ty,
    /// Loop counters, parameters, bindings and arrays are never reassigned.
    fixed: bool,
    len: usize,
}

#[derive(Clone, Debug)]
struct Sig {
    name: String,
    params: Vec<Ty>,
    ret: Option<Ty>,
}

struct Gen<'a> {
    cfg: &'a FuzzConfig,
    rng: ChaCha8Rng,
    out: String,
    indent: usize,
    scopes: Vec<Vec<Var>>,
    fresh: u32,
    sigs: Vec<Sig>,
    /// Index of the function being generated; callees come from below.
    current: usize,
    calls_left: u32,
    is_main: bool,
}

const PARAM_TYS: [Ty; 4] = [Ty::Int, Ty::Box, Ty::Node, Ty::Bag];

/// One program of the corpus described by `cfg`.
pub fn generate_program(cfg: &FuzzConfig, index: u64) -> String {
    let mut g = Gen {
        cfg,
        rng: cfg.rng(index),
        out: String::new(),
        indent: 0,
        scopes: Vec::new(),
        fresh: 0,
        sigs: Vec::new(),
        current: 0,
        calls_left: 0,
        is_main: false,
    };
    g.program();
    g.out
}

/// The whole corpus, in order.
pub fn corpus(cfg: &FuzzConfig) -> impl Iterator<Item = String> + '_ {
    (0..cfg.iterations as u64).map(move |i| generate_program(cfg, i))
}

impl Gen<'_> {
    fn line(&mut self, s: &str) {
        for _ in 0..self.indent {
            self.out.push_str("    ");
        }
        self.out.push_str(s);
        self.out.push('\n');
    }

    fn open(&mut self, s: &str) {
        self.line(s);
        self.indent += 1;
        self.scopes.push(Vec::new());
    }

    fn close(&mut self) {
        self.indent -= 1;
        self.scopes.pop();
        self.line("}");
    }

    fn fresh(&mut self, prefix: &str) -> String {
        self.fresh += 1;
        format!("{prefix}{}", self.fresh)
    }

    fn declare(&mut self, name: &str, ty: Ty, fixed: bool, len: usize) {
        self.scopes.last_mut().unwrap().push(Var { name: name.to_string(), ty, fixed, len });
    }

    fn vars(&self, ty: Ty, assignable: bool) -> Vec<Var> {
        self.scopes.iter().flatten().filter(|v| v.ty == ty && (!assignable || !v.fixed)).cloned().collect()
    }

    fn pick_var(&mut self, ty: Ty, assignable: bool) -> Option<Var> {
        let vs = self.vars(ty, assignable);
        vs.choose(&mut self.rng).cloned()
    }

    fn program(&mut self) {
        let unions = self.cfg.unions;
        self.out.push_str("struct Box { a: int, b: int }\n");
        self.out.push_str("struct Node { next: *Node, v: int, data: *Box }\n");
        self.out.push_str("struct Bag { items: [*Box; 3], n: int }\n");
        if unions {
            self.out.push_str("union Val { Num: int, BoxP: *Box, NodeP: *Node }\n");
            self.out.push_str("struct Cell { u: Val, k: int, other: *Box }\n");
        }
        self.out.push_str("global groot: *Node = null;\nglobal gbox: *Box = null;\nglobal gcount: int = 0;\n");
        if unions {
            self.out.push_str("global gval: Val;\n");
        }
        self.out.push_str(
            "@allocator fn mk_box(a: int) -> *Box { let b: *Box = alloc(Box); b.a = a; b.b = a + 1; return b; }\n\
             @allocator fn mk_node(v: int, nx: *Node) -> *Node { let n: *Node = alloc(Node); n.v = v; n.next = nx; return n; }\n",
        );
        if self.cfg.recursion {
            self.out.push_str(
                "fn depth(n: *Node, d: int) -> int { if n == null { return d; } if d > 12 { return d; } \
                 let r: int = depth(n.next, d + 1); return r; }\n",
            );
        }

        let nf = self.rng.gen_range(0..=self.cfg.max_functions);
        for i in 0..nf {
            let np = self.rng.gen_range(0..=3);
            let params = (0..np).map(|_| *PARAM_TYS.choose(&mut self.rng).unwrap()).collect();
            let ret = match self.rng.gen_range(0..4) {
                0 => None,
                1 => Some(Ty::Int),
                2 => Some(Ty::Box),
                _ => Some(Ty::Node),
            };
            self.sigs.push(Sig { name: format!("f{i}"), params, ret });
        }
        for i in 0..nf {
            self.function(i);
        }
        self.current = nf;
        self.is_main = true;
        self.calls_left = 4;
        self.open("fn main() {");
        let n = self.rng.gen_range(3..=self.cfg.max_stmts.max(3));
        self.block(n, 0, false);
        self.close();
    }

    fn function(&mut self, i: usize) {
        self.current = i;
        self.is_main = false;
        self.calls_left = 2;
        let sig = self.sigs[i].clone();
        let params: Vec<String> = sig.params.iter().enumerate().map(|(k, t)| format!("q{k}: {}", t.name())).collect();
        let ret = sig.ret.map(|t| format!(" -> {}", t.name())).unwrap_or_default();
        self.open(&format!("fn {}({}){ret} {{", sig.name, params.join(", ")));
        for (k, t) in sig.params.iter().enumerate() {
            self.declare(&format!("q{k}"), *t, true, 0);
        }
        let n = self.rng.gen_range(1..=self.cfg.max_stmts.max(1));
        self.block(n, 0, false);
        if let Some(t) = sig.ret {
            let e = self.value(t);
            self.line(&format!("return {e};"));
        }
        self.close();
    }

    fn block(&mut self, n: usize, depth: u32, in_loop: bool) {
        for _ in 0..n {
            self.stmt(depth, in_loop);
        }
    }

    // ---- expressions -------------------------------------------------

    fn int_expr(&mut self, depth: u32) -> String {
        match self.rng.gen_range(0..if depth > 1 { 4 } else { 7 }) {
            0 => self.rng.gen_range(-5..40).to_string(),
            1 | 2 => match self.pick_var(Ty::Int, false) {
                Some(v) => v.name,
                None => self.rng.gen_range(0..9).to_string(),
            },
            3 => {
                let arrs: Vec<Var> =
                    self.scopes.iter().flatten().filter(|v| matches!(v.ty, Ty::BoxArr | Ty::IntArr)).cloned().collect();
                match arrs.choose(&mut self.rng) {
                    Some(a) => format!("len({})", a.name),
                    None => "gcount".to_string(),
                }
            }
            4 => format!("rand() % {}", self.rng.gen_range(2..12)),
            _ => {
                let op = ["+", "-", "*", "+"][self.rng.gen_range(0..4)];
                let a = self.int_expr(depth + 1);
                let b = self.int_expr(depth + 1);
                format!("({a} {op} {b})")
            }
        }
    }

    fn cond(&mut self) -> String {
        match self.rng.gen_range(0..5) {
            0 => {
                let ty = [Ty::Box, Ty::Node][self.rng.gen_range(0..2)];
                match self.pick_var(ty, false) {
                    Some(v) => format!("{} {} null", v.name, if self.rng.gen() { "==" } else { "!=" }),
                    None => "gcount > 3".to_string(),
                }
            }
            1 => {
                let a = self.cond_cmp();
                let b = self.cond_cmp();
                format!("{a} && {b}")
            }
            2 => {
                let a = self.cond_cmp();
                format!("!({a})")
            }
            _ => self.cond_cmp(),
        }
    }

    fn cond_cmp(&mut self) -> String {
        let a = self.int_expr(1);
        let b = self.int_expr(1);
        let op = ["<", ">", "==", "!=", "<=", ">="][self.rng.gen_range(0..6)];
        format!("{a} {op} {b}")
    }

    /// A side-effect-free pointer expression, or an allocation.
    fn ptr_expr(&mut self, ty: Ty) -> String {
        let k = self.rng.gen_range(0..10);
        if k < 4 {
            if let Some(v) = self.pick_var(ty, false) {
                return v.name;
            }
        }
        if k == 4 {
            return "null".into();
        }
        match ty {
            Ty::Box => match self.rng.gen_range(0..4) {
                0 => "gbox".into(),
                1 => "alloc(Box)".into(),
                _ => {
                    let a = self.int_expr(1);
                    format!("mk_box({a})")
                }
            },
            Ty::Node => match self.rng.gen_range(0..4) {
                0 => "groot".into(),
                1 => "alloc(Node)".into(),
                _ => {
                    let a = self.int_expr(1);
                    let nx = self.pick_var(Ty::Node, false).map(|v| v.name).unwrap_or_else(|| "null".into());
                    format!("mk_node({a}, {nx})")
                }
            },
            Ty::Cell => "alloc(Cell)".into(),
            Ty::Bag => "alloc(Bag)".into(),
            Ty::IntP => "&gcount".into(),
            _ => unreachable!("not a plain pointer type"),
        }
    }

    fn value(&mut self, ty: Ty) -> String {
        if ty == Ty::Int {
            self.int_expr(0)
        } else {
            self.ptr_expr(ty)
        }
    }

    fn ptr_ty(&mut self) -> Ty {
        let mut tys = vec![Ty::Box, Ty::Box, Ty::Node, Ty::Node, Ty::Bag, Ty::IntP];
        if self.cfg.unions {
            tys.push(Ty::Cell);
        }
        *tys.choose(&mut self.rng).unwrap()
    }

    fn variant(&mut self) -> String {
        match self.rng.gen_range(0..3) {
            0 => {
                let e = self.int_expr(1);
                format!("Num({e})")
            }
            1 => {
                let e = self.ptr_expr(Ty::Box);
                format!("BoxP({e})")
            }
            _ => {
                let e = self.ptr_expr(Ty::Node);
                format!("NodeP({e})")
            }
        }
    }

    // ---- statements --------------------------------------------------

    fn stmt(&mut self, depth: u32, in_loop: bool) {
        let cfg = self.cfg;
        let mut table: Vec<(u32, u8)> = vec![(6, 0), (8, 1), (4, 2), (5, 3), (7, 4), (6, 5), (3, 6), (3, 14), (2, 16)];
        if depth < 2 {
            table.push((3, 7));
            table.push((3, 8));
        }
        if !in_loop && self.calls_left > 0 && (self.current > 0 || cfg.recursion) {
            table.push((4, 9));
        }
        if cfg.pass_free > 0 {
            table.push((cfg.pass_free, 10));
            table.push((cfg.pass_free, 11));
        }
        if cfg.dynarrays {
            table.push((5, 12));
        }
        if cfg.unions {
            table.push((4 + cfg.union_bias, 13));
        }
        if !in_loop && depth < 2 {
            table.push((2, 15));
        }
        if cfg.threads && self.is_main && !in_loop && self.calls_left > 0 {
            table.push((2, 17));
        }
        let total: u32 = table.iter().map(|t| t.0).sum();
        let mut r = self.rng.gen_range(0..total);
        let mut kind = 0;
        for (w, k) in table {
            if r < w {
                kind = k;
                break;
            }
            r -= w;
        }
        match kind {
            0 => self.let_int(),
            1 => self.let_ptr(),
            2 => self.assign_int(),
            3 => self.assign_ptr(),
            4 => self.field_store(),
            5 => self.field_load(),
            6 => {
                let e = self.int_expr(0);
                self.line(&format!("print({e});"));
            }
            7 => self.if_stmt(depth, in_loop),
            8 => self.while_stmt(depth),
            9 => self.call_stmt(),
            10 => self.fresh_free(),
            11 => self.pass_stmt(),
            12 => self.dynarray_stmt(),
            13 => self.union_stmt(depth, in_loop),
            14 => self.global_stmt(),
            15 => self.list_stmt(),
            16 => self.interior_stmt(),
            _ => self.spawn_stmt(),
        }
    }

    fn let_int(&mut self) {
        let e = self.int_expr(0);
        let n = self.fresh("i");
        self.line(&format!("let {n}: int = {e};"));
        self.declare(&n, Ty::Int, false, 0);
    }

    fn let_ptr(&mut self) {
        let ty = self.ptr_ty();
        let e = self.ptr_expr(ty);
        let n = self.fresh("p");
        self.line(&format!("let {n}: {} = {e};", ty.name()));
        self.declare(&n, ty, false, 0);
    }

    fn assign_int(&mut self) {
        match self.pick_var(Ty::Int, true) {
            Some(v) => {
                let e = self.int_expr(0);
                self.line(&format!("{} = {e};", v.name));
            }
            None => self.let_int(),
        }
    }

    fn assign_ptr(&mut self) {
        let ty = self.ptr_ty();
        match self.pick_var(ty, true) {
            Some(v) => {
                let e = self.ptr_expr(ty);
                self.line(&format!("{} = {e};", v.name));
            }
            None => self.let_ptr(),
        }
    }

    /// `if x != null { body }` around a single statement that uses `x`.
    fn guarded(&mut self, x: &str, body: &str) {
        self.line(&format!("if {x} != null {{ {body} }}"));
    }

    fn field_store(&mut self) {
        let ty = self.ptr_ty();
        let Some(v) = self.pick_var(ty, false) else { return self.let_ptr() };
        let x = v.name;
        let body = match ty {
            Ty::Box => {
                let e = self.int_expr(0);
                format!("{x}.{} = {e};", if self.rng.gen() { "a" } else { "b" })
            }
            Ty::Node => match self.rng.gen_range(0..3) {
                0 => {
                    let e = self.int_expr(0);
                    format!("{x}.v = {e};")
                }
                1 => {
                    let e = self.ptr_expr(Ty::Node);
                    format!("{x}.next = {e};")
                }
                _ => {
                    let e = self.ptr_expr(Ty::Box);
                    format!("{x}.data = {e};")
                }
            },
            Ty::Bag => {
                if self.rng.gen() {
                    let e = self.ptr_expr(Ty::Box);
                    format!("{x}.items[{}] = {e};", self.rng.gen_range(0..3))
                } else {
                    let e = self.int_expr(0);
                    format!("{x}.n = {e};")
                }
            }
            Ty::Cell => match self.rng.gen_range(0..3) {
                0 => {
                    let e = self.int_expr(0);
                    format!("{x}.k = {e};")
                }
                1 => {
                    let e = self.ptr_expr(Ty::Box);
                    format!("{x}.other = {e};")
                }
                _ => {
                    let e = self.variant();
                    format!("{x}.u = {e};")
                }
            },
            _ => {
                let e = self.int_expr(0);
                format!("*{x} = {e};")
            }
        };
        self.guarded(&x, &body);
    }

    fn field_load(&mut self) {
        let ty = self.ptr_ty();
        let Some(v) = self.pick_var(ty, false) else { return self.let_ptr() };
        let x = v.name;
        let (dty, rhs) = match ty {
            Ty::Box => (Ty::Int, format!("{x}.{}", if self.rng.gen() { "a" } else { "b" })),
            Ty::Node => match self.rng.gen_range(0..3) {
                0 => (Ty::Int, format!("{x}.v")),
                1 => (Ty::Node, format!("{x}.next")),
                _ => (Ty::Box, format!("{x}.data")),
            },
            Ty::Bag => {
                if self.rng.gen() {
                    (Ty::Box, format!("{x}.items[{}]", self.rng.gen_range(0..3)))
                } else {
                    (Ty::Int, format!("{x}.n"))
                }
            }
            Ty::Cell => {
                if self.rng.gen() {
                    (Ty::Int, format!("{x}.k"))
                } else {
                    (Ty::Box, format!("{x}.other"))
                }
            }
            _ => (Ty::Int, format!("*{x}")),
        };
        let d = self.fresh(if dty == Ty::Int { "i" } else { "p" });
        let init = if dty == Ty::Int { "0" } else { "null" };
        self.line(&format!("let {d}: {} = {init};", dty.name()));
        self.guarded(&x, &format!("{d} = {rhs};"));
        self.declare(&d, dty, false, 0);
    }

    fn if_stmt(&mut self, depth: u32, in_loop: bool) {
        let c = self.cond();
        self.open(&format!("if {c} {{"));
        let n = self.rng.gen_range(1..=3);
        self.block(n, depth + 1, in_loop);
        if self.rng.gen_bool(0.4) {
            self.indent -= 1;
            self.scopes.pop();
            self.line("} else {");
            self.indent += 1;
            self.scopes.push(Vec::new());
            let n = self.rng.gen_range(1..=2);
            self.block(n, depth + 1, in_loop);
        }
        self.close();
    }

    fn while_stmt(&mut self, depth: u32) {
        let w = self.fresh("w");
        let k = self.rng.gen_range(1..=6);
        self.line(&format!("let {w}: int = 0;"));
        self.declare(&w, Ty::Int, true, 0);
        self.open(&format!("while {w} < {k} {{"));
        let n = self.rng.gen_range(1..=3);
        self.block(n, depth + 1, true);
        self.line(&format!("{w} = {w} + 1;"));
        self.close();
    }

    fn args(&mut self, params: &[Ty]) -> String {
        params.iter().map(|t| self.value(*t)).collect::<Vec<_>>().join(", ")
    }

    fn call_stmt(&mut self) {
        self.calls_left -= 1;
        if self.current == 0 || (self.cfg.recursion && self.rng.gen_bool(0.25)) {
            if !self.cfg.recursion {
                return;
            }
            let n = self.ptr_expr(Ty::Node);
            let r = self.fresh("i");
            self.line(&format!("let {r}: int = depth({n}, 0);"));
            self.declare(&r, Ty::Int, false, 0);
            return;
        }
        let callee = self.sigs[self.rng.gen_range(0..self.current)].clone();
        let args = self.args(&callee.params);
        match callee.ret {
            Some(t) => {
                let r = self.fresh(if t == Ty::Int { "i" } else { "p" });
                self.line(&format!("let {r}: {} = {}({args});", t.name(), callee.name));
                self.declare(&r, t, false, 0);
            }
            None => self.line(&format!("{}({args});", callee.name)),
        }
    }

    fn spawn_stmt(&mut self) {
        let workers: Vec<Sig> = self.sigs.iter().filter(|s| s.ret.is_none()).cloned().collect();
        let Some(w) = workers.choose(&mut self.rng).cloned() else { return self.let_int() };
        self.calls_left -= 1;
        let args = self.args(&w.params);
        self.line(&format!("spawn {}({args});", w.name));
    }

    /// Allocate, use and free a chunk nothing else can see.
    fn fresh_free(&mut self) {
        let t = self.fresh("t");
        if self.rng.gen() {
            let a = self.int_expr(1);
            self.line(&format!("let {t}: *Box = mk_box({a});"));
            let e = self.int_expr(1);
            self.line(&format!("{t}.b = {e};"));
            self.line(&format!("print({t}.a + {t}.b);"));
            self.line(&format!("free(pass {t});"));
        } else {
            let k = self.rng.gen_range(1..=5);
            let w = self.fresh("w");
            let nx = self.fresh("t");
            self.line(&format!("let {t}: *Node = null;"));
            self.line(&format!("let {w}: int = 0;"));
            self.line(&format!("while {w} < {k} {{ {t} = mk_node({w}, {t}); {w} = {w} + 1; }}"));
            self.line(&format!(
                "while {t} != null {{ let {nx}: *Node = pass {t}.next; print({t}.v); free(pass {t}); {t} = pass {nx}; }}"
            ));
        }
    }

    fn pass_stmt(&mut self) {
        let ty = [Ty::Box, Ty::Node][self.rng.gen_range(0..2)];
        let src = self.pick_var(ty, true);
        let dst = self.pick_var(ty, true);
        match (src, dst) {
            (Some(s), Some(d)) if s.name != d.name && self.rng.gen() => {
                self.line(&format!("{} = pass {};", d.name, s.name));
            }
            _ => {
                let Some(n) = self.pick_var(Ty::Node, false) else { return self.let_ptr() };
                let d = self.fresh("p");
                let (fty, field) = if self.rng.gen() { (Ty::Node, "next") } else { (Ty::Box, "data") };
                self.line(&format!("let {d}: {} = null;", fty.name()));
                self.guarded(&n.name, &format!("{d} = pass {}.{field};", n.name));
                self.declare(&d, fty, false, 0);
            }
        }
    }

    fn dynarray_stmt(&mut self) {
        let arrs: Vec<Var> =
            self.scopes.iter().flatten().filter(|v| matches!(v.ty, Ty::BoxArr | Ty::IntArr)).cloned().collect();
        if arrs.is_empty() || self.rng.gen_bool(0.2) {
            let k = self.rng.gen_range(1..=6);
            if self.rng.gen_bool(0.6) {
                let a = self.fresh("a");
                self.line(&format!("let {a}: *dynarray *Box = alloc_array(*Box, {k});"));
                self.declare(&a, Ty::BoxArr, true, k);
            } else {
                let a = self.fresh("x");
                self.line(&format!("let {a}: *dynarray int = alloc_array(int, {k});"));
                self.declare(&a, Ty::IntArr, true, k);
            }
            return;
        }
        let a = arrs.choose(&mut self.rng).unwrap().clone();
        let idx = if self.rng.gen() {
            self.rng.gen_range(0..a.len).to_string()
        } else {
            format!("rand() % {}", a.len)
        };
        let name = &a.name;
        match (a.ty, self.rng.gen_range(0..4)) {
            (Ty::BoxArr, 0 | 1) => {
                let e = self.ptr_expr(Ty::Box);
                self.line(&format!("{name}[{idx}] = {e};"));
            }
            (Ty::BoxArr, 2) => {
                let d = self.fresh("p");
                self.line(&format!("let {d}: *Box = {name}[{idx}];"));
                self.declare(&d, Ty::Box, false, 0);
            }
            (Ty::BoxArr, _) => {
                let w = self.fresh("w");
                let s = self.fresh("i");
                let e = self.fresh("p");
                self.line(&format!("let {s}: int = 0;"));
                self.line(&format!("let {w}: int = 0;"));
                self.line(&format!(
                    "while {w} < len({name}) {{ let {e}: *Box = {name}[{w}]; if {e} != null {{ {s} = {s} + {e}.a; }} {w} = {w} + 1; }}"
                ));
                self.line(&format!("print({s});"));
                self.declare(&s, Ty::Int, false, 0);
            }
            (_, 0 | 1) => {
                let e = self.int_expr(1);
                self.line(&format!("{name}[{idx}] = {e};"));
            }
            _ => self.line(&format!("print({name}[{idx}] + len({name}));")),
        }
    }

    fn union_stmt(&mut self, depth: u32, in_loop: bool) {
        let locals = self.vars(Ty::Val, true);
        match self.rng.gen_range(0..7) {
            0 => {
                let e = self.variant();
                let u = self.fresh("u");
                self.line(&format!("let {u}: Val = {e};"));
                self.declare(&u, Ty::Val, false, 0);
            }
            1 if !locals.is_empty() => {
                let u = locals.choose(&mut self.rng).unwrap().name.clone();
                let e = self.variant();
                self.line(&format!("{u} = {e};"));
            }
            2 if self.gval_ok() => {
                let e = self.variant();
                self.line(&format!("gval = {e};"));
            }
            3 => {
                let Some(c) = self.pick_var(Ty::Cell, false) else {
                    let c = self.fresh("p");
                    self.line(&format!("let {c}: *Cell = alloc(Cell);"));
                    self.declare(&c, Ty::Cell, false, 0);
                    return;
                };
                let e = self.variant();
                self.guarded(&c.name, &format!("{}.u = {e};", c.name));
            }
            4 if depth < 2 => {
                let Some(c) = self.pick_var(Ty::Cell, false) else { return self.let_ptr() };
                self.open(&format!("if {} != null {{", c.name));
                self.match_stmt(&format!("{}.u", c.name), depth + 1, in_loop);
                self.close();
            }
            5 | 6 if depth < 2 => {
                let scrut = match locals.choose(&mut self.rng) {
                    Some(u) if self.rng.gen_bool(0.7) || !self.gval_ok() => u.name.clone(),
                    None if !self.gval_ok() => return self.let_int(),
                    _ => "gval".to_string(),
                };
                self.match_stmt(&scrut, depth, in_loop);
            }
            _ => {
                let e = self.variant();
                let u = self.fresh("u");
                self.line(&format!("let {u}: Val = {e};"));
                self.declare(&u, Ty::Val, false, 0);
            }
        }
    }

    /// A match reads the tag and the data word separately, so only the
    /// main thread's code may touch the shared union global when other
    /// threads can run.
    fn gval_ok(&self) -> bool {
        self.is_main || !self.cfg.threads
    }

    fn match_stmt(&mut self, scrut: &str, depth: u32, in_loop: bool) {
        self.open(&format!("match {scrut} {{"));
        let mut arms = vec![0, 1, 2];
        arms.shuffle(&mut self.rng);
        arms.truncate(self.rng.gen_range(1..=3));
        for arm in arms.iter().copied() {
            let b = self.fresh("m");
            let (variant, ty) = [("Num", Ty::Int), ("BoxP", Ty::Box), ("NodeP", Ty::Node)][arm];
            self.open(&format!("{variant}({b}) => {{"));
            self.declare(&b, ty, true, 0);
            match ty {
                Ty::Int => self.line(&format!("print({b});")),
                Ty::Box => self.guarded(&b, &format!("print({b}.a);")),
                _ => self.guarded(&b, &format!("print({b}.v);")),
            }
            if depth < 2 && self.rng.gen_bool(0.5) {
                self.stmt(depth + 1, in_loop);
            }
            if ty != Ty::Int && self.rng.gen_bool(0.5) {
                if let Some(v) = self.pick_var(ty, true) {
                    self.line(&format!("{} = {b};", v.name));
                }
            }
            self.close();
        }
        if arms.len() < 3 {
            self.line("_ => { gcount = gcount + 1; }");
        }
        self.close();
    }

    fn global_stmt(&mut self) {
        match self.rng.gen_range(0..5) {
            0 => {
                let e = self.ptr_expr(Ty::Node);
                self.line(&format!("groot = {e};"));
            }
            1 => {
                let e = self.ptr_expr(Ty::Box);
                self.line(&format!("gbox = {e};"));
            }
            2 => {
                let e = self.int_expr(1);
                self.line(&format!("gcount = gcount + {e};"));
            }
            _ => {
                let (ty, g) = if self.rng.gen() { (Ty::Node, "groot") } else { (Ty::Box, "gbox") };
                let d = self.fresh("p");
                self.line(&format!("let {d}: {} = {g};", ty.name()));
                self.declare(&d, ty, false, 0);
            }
        }
    }

    /// Build a short list onto a node variable, or walk one.
    fn list_stmt(&mut self) {
        let w = self.fresh("w");
        if self.rng.gen() {
            let Some(h) = self.pick_var(Ty::Node, true) else { return self.let_ptr() };
            let k = self.rng.gen_range(1..=5);
            let v = self.int_expr(1);
            self.line(&format!("let {w}: int = 0;"));
            self.line(&format!("while {w} < {k} {{ {h} = mk_node({w} + {v}, {h}); {w} = {w} + 1; }}", h = h.name));
        } else {
            let Some(h) = self.pick_var(Ty::Node, false) else { return self.let_ptr() };
            let t = self.fresh("p");
            let s = self.fresh("i");
            self.line(&format!("let {t}: *Node = {};", h.name));
            self.line(&format!("let {s}: int = 0;"));
            self.line(&format!("let {w}: int = 0;"));
            self.line(&format!(
                "while {t} != null && {w} < 40 {{ {s} = {s} + {t}.v; {t} = {t}.next; {w} = {w} + 1; }}"
            ));
            self.line(&format!("print({s});"));
            self.declare(&t, Ty::Node, false, 0);
            self.declare(&s, Ty::Int, false, 0);
        }
    }

    fn interior_stmt(&mut self) {
        if self.rng.gen_bool(0.3) {
            let q = self.fresh("p");
            self.line(&format!("let {q}: *int = &gcount;"));
            self.declare(&q, Ty::IntP, false, 0);
            return;
        }
        let Some(b) = self.pick_var(Ty::Box, false) else { return self.let_ptr() };
        let q = self.fresh("p");
        let field = if self.rng.gen() { "a" } else { "b" };
        self.line(&format!("let {q}: *int = null;"));
        self.guarded(&b.name, &format!("{q} = &{}.{field};", b.name));
        let e = self.int_expr(1);
        self.guarded(&q, &format!("*{q} = *{q} + {e};"));
        self.declare(&q, Ty::IntP, false, 0);
    }
}

/// A program whose heap is fully rooted in globals at exit (`inject` =
/// false), or one with dropped roots and unreachable cycles mixed in.
pub fn leak_program(seed: u64, inject: bool) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c65_616b);
    let mut s = String::from(
        "struct Box { a: int, b: int }\n\
         struct Node { next: *Node, v: int, data: *Box }\n\
         struct Bag { items: [*Box; 3], n: int }\n\
         global groot: *Node = null;\nglobal gbag: *Bag = null;\nglobal gbox: *Box = null;\n\
         fn push(v: int) { let n: *Node = alloc(Node); n.v = v; n.next = groot; groot = n; }\n\
         fn main() {\n",
    );
    let mut leaks = 0;
    let steps = rng.gen_range(4..10);
    let want_leaks = if inject { rng.gen_range(1..=3) } else { 0 };
    for i in 0..steps {
        // Spread the injected leaks over the statement sequence.
        let leak_here = leaks < want_leaks && (rng.gen_bool(0.4) || steps - i <= want_leaks - leaks);
        if leak_here {
            leaks += 1;
            match rng.gen_range(0..5) {
                0 => writeln!(s, "    let d{i}: *Box = alloc(Box); d{i}.a = {i}; print(d{i}.a); d{i} = null;").unwrap(),
                1 => writeln!(
                    s,
                    "    let a{i}: *Node = alloc(Node); let b{i}: *Node = alloc(Node); a{i}.next = b{i}; b{i}.next = a{i}; \
                     print(a{i}.v); a{i} = null; b{i} = null;"
                )
                .unwrap(),
                2 => writeln!(
                    s,
                    "    push({i}); if groot != null {{ let h{i}: *Node = groot; groot = h{i}.next; print(h{i}.v); h{i} = null; }}"
                )
                .unwrap(),
                3 => writeln!(
                    s,
                    "    let c{i}: *Node = alloc(Node); c{i}.next = c{i}; c{i}.data = alloc(Box); print(c{i}.v); c{i} = null;"
                )
                .unwrap(),
                _ => writeln!(
                    s,
                    "    if gbox != null {{ let o{i}: *Box = gbox; print(o{i}.a); }} gbox = alloc(Box); gbox.a = {i}; gbox = alloc(Box);"
                )
                .unwrap(),
            }
            continue;
        }
        match rng.gen_range(0..6) {
            0 => writeln!(s, "    push({});", rng.gen_range(0..50)).unwrap(),
            1 => writeln!(
                s,
                "    let k{i}: int = 0; while k{i} < {} {{ push(k{i}); k{i} = k{i} + 1; }}",
                rng.gen_range(1..5)
            )
            .unwrap(),
            2 => writeln!(
                s,
                "    if gbag == null {{ gbag = alloc(Bag); }} let g{i}: *Bag = gbag; if g{i}.items[{j}] == null {{ g{i}.items[{j}] = alloc(Box); }} g{i}.n = g{i}.n + 1;",
                j = rng.gen_range(0..3)
            )
            .unwrap(),
            3 => writeln!(
                s,
                "    let t{i}: *Box = alloc(Box); t{i}.a = {i}; print(t{i}.a); free(pass t{i});"
            )
            .unwrap(),
            4 => writeln!(
                s,
                "    if groot != null {{ let r{i}: *Node = groot; if r{i}.data == null {{ r{i}.data = alloc(Box); }} \
                 if r{i}.next != null {{ let q{i}: *Node = r{i}.next; if q{i}.next == null {{ q{i}.next = r{i}; }} }} }}"
            )
            .unwrap(),
            _ => writeln!(s, "    if gbox == null {{ gbox = alloc(Box); }} print(gbox.a);").unwrap(),
        }
    }
    s.push_str("    print(0);\n}\n");
    s
}

/// A list workload whose peak heap is several times 4 KiB but whose
/// working set at any call is a handful of nodes.
pub fn swap_program(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7377_6170);
    let pad = rng.gen_range(4..9);
    let n = rng.gen_range(60..110);
    let passes = rng.gen_range(2..4);
    let bump = rng.gen_range(1..5);
    let mut s = format!(
        "struct Box {{ a: int, b: int }}\n\
         struct N {{ next: *N, v: int, data: *Box, pad: [int; {pad}] }}\n\
         fn build(n: int) -> *N {{ let h: *N = null; let i: int = 0; \
           while i < n {{ let x: *N = alloc(N); x.v = i; x.next = h; if i % 3 == 0 {{ x.data = alloc(Box); x.data.a = i; }} h = x; i = i + 1; }} return h; }}\n\
         fn sum(h: *N) -> int {{ let s: int = 0; while h != null {{ s = s + h.v; if h.data != null {{ s = s + h.data.a; }} h = h.next; }} return s; }}\n\
         fn bump(h: *N, k: int) {{ while h != null {{ h.v = h.v + k; h = h.next; }} }}\n\
         fn main() {{\n    let h: *N = build({n});\n"
    );
    for _ in 0..passes {
        writeln!(s, "    print(sum(h));\n    bump(h, {bump});").unwrap();
    }
    if rng.gen() {
        s.push_str("    let t: *N = pass h.next;\n    print(sum(t));\n    h.next = pass t;\n");
    }
    s.push_str("    print(sum(h));\n}\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::compile_to_ir;

    #[test]
    fn same_seed_same_source() {
        let cfg = FuzzConfig { seed: 42, ..FuzzConfig::default() };
        assert_eq!(generate_program(&cfg, 7), generate_program(&cfg, 7));
        assert_ne!(generate_program(&cfg, 7), generate_program(&cfg, 8));
    }

    #[test]
    fn toggles_remove_features() {
        let cfg = FuzzConfig { unions: false, threads: false, dynarrays: false, ..FuzzConfig::default() };
        for i in 0..50 {
            let src = generate_program(&cfg, i);
            assert!(!src.contains("union") && !src.contains("spawn") && !src.contains("dynarray"), "{src}");
        }
    }

    #[test]
    fn corpus_sample_passes_rules() {
        let cfg = FuzzConfig::default();
        for (i, src) in corpus(&FuzzConfig { iterations: 100, ..cfg }).enumerate() {
            if let Err(d) = compile_to_ir(&src) {
                panic!("program {i} rejected: {d:?}\n{src}");
            }
        }
    }

    #[test]
    fn leak_and_swap_programs_compile() {
        for seed in 0..20 {
            for inject in [false, true] {
                let src = leak_program(seed, inject);
                assert!(compile_to_ir(&src).is_ok(), "{src}");
            }
            let src = swap_program(seed);
            assert!(compile_to_ir(&src).is_ok(), "{src}");
        }
    }
}
