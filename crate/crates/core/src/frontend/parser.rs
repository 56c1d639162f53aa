//! Recursive-descent parser for minilang. Expressions use precedence
//! climbing; every construct is decided by one token of lookahead.

use super::ast::*;
use super::lexer::{lex, Tok};
use super::SyntaxError;
use crate::isa::{BinOp, UnOp};

pub fn parse(src: &str) -> Result<Ast, SyntaxError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, i: 0 };
    p.program()
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    i: usize,
}

type PResult<T> = Result<T, SyntaxError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.i].0
    }

    fn peek_at(&self, n: usize) -> &Tok {
        &self.toks[(self.i + n).min(self.toks.len() - 1)].0
    }

    fn pos(&self) -> Pos {
        self.toks[self.i].1
    }

    fn bump(&mut self) -> (Tok, Pos) {
        let t = self.toks[self.i].clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    fn err<T>(&self, what: &str) -> PResult<T> {
        Err(SyntaxError { pos: self.pos(), message: format!("expected {what}, found {}", self.peek()) })
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Tok::Kw(q) if *q == k)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> PResult<Pos> {
        if self.is_punct(p) {
            Ok(self.bump().1)
        } else {
            self.err(&format!("`{p}`"))
        }
    }

    fn expect_kw(&mut self, k: &str) -> PResult<Pos> {
        if self.is_kw(k) {
            Ok(self.bump().1)
        } else {
            self.err(&format!("`{k}`"))
        }
    }

    fn ident(&mut self) -> PResult<(String, Pos)> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                let pos = self.bump().1;
                Ok((s, pos))
            }
            _ => self.err("identifier"),
        }
    }

    fn program(&mut self) -> PResult<Ast> {
        let mut ast = Ast::default();
        loop {
            match self.peek() {
                Tok::Eof => return Ok(ast),
                Tok::Kw("struct") => ast.structs.push(self.struct_decl()?),
                Tok::Kw("union") => ast.unions.push(self.union_decl()?),
                Tok::Kw("global") => ast.globals.push(self.global_decl()?),
                Tok::Kw("fn") | Tok::Punct("@") => ast.functions.push(self.fn_decl()?),
                _ => return self.err("`fn`, `struct`, `union` or `global`"),
            }
        }
    }

    fn members(&mut self) -> PResult<Vec<Member>> {
        self.expect_punct("{")?;
        let mut out = Vec::new();
        while !self.is_punct("}") {
            let (name, pos) = self.ident()?;
            self.expect_punct(":")?;
            let ty = self.type_expr()?;
            out.push(Member { name, ty, pos });
            if !self.eat_punct(",") {
                break;
            }
        }
        self.expect_punct("}")?;
        Ok(out)
    }

    fn struct_decl(&mut self) -> PResult<StructDecl> {
        let pos = self.expect_kw("struct")?;
        let (name, _) = self.ident()?;
        let fields = self.members()?;
        Ok(StructDecl { name, fields, pos })
    }

    fn union_decl(&mut self) -> PResult<UnionDecl> {
        let pos = self.expect_kw("union")?;
        let (name, _) = self.ident()?;
        let variants = self.members()?;
        Ok(UnionDecl { name, variants, pos })
    }

    fn global_decl(&mut self) -> PResult<GlobalDecl> {
        let pos = self.expect_kw("global")?;
        let (name, _) = self.ident()?;
        self.expect_punct(":")?;
        let ty = self.type_expr()?;
        let init = if self.eat_punct("=") { Some(self.expr()?) } else { None };
        self.expect_punct(";")?;
        Ok(GlobalDecl { name, ty, init, pos })
    }

    fn fn_decl(&mut self) -> PResult<FnDecl> {
        let mut allocator = false;
        let start = self.pos();
        if self.eat_punct("@") {
            let (attr, apos) = self.ident()?;
            if attr != "allocator" {
                return Err(SyntaxError { pos: apos, message: format!("unknown attribute `@{attr}`") });
            }
            allocator = true;
        }
        let kw = self.expect_kw("fn")?;
        let pos = if allocator { start } else { kw };
        let (name, _) = self.ident()?;
        self.expect_punct("(")?;
        let mut params = Vec::new();
        while !self.is_punct(")") {
            let (pname, ppos) = self.ident()?;
            self.expect_punct(":")?;
            let ty = self.type_expr()?;
            params.push(Member { name: pname, ty, pos: ppos });
            if !self.eat_punct(",") {
                break;
            }
        }
        self.expect_punct(")")?;
        let ret = if self.eat_punct("->") { Some(self.type_expr()?) } else { None };
        let body = self.block()?;
        Ok(FnDecl { name, params, ret, body, allocator, pos })
    }

    fn type_expr(&mut self) -> PResult<TypeExpr> {
        match self.peek().clone() {
            Tok::Kw("int") => {
                self.bump();
                Ok(TypeExpr::Int)
            }
            Tok::Kw("bool") => {
                self.bump();
                Ok(TypeExpr::Bool)
            }
            Tok::Kw("dynarray") => {
                self.bump();
                Ok(TypeExpr::DynArray(Box::new(self.type_expr()?)))
            }
            Tok::Punct("*") => {
                self.bump();
                Ok(TypeExpr::Ptr(Box::new(self.type_expr()?)))
            }
            Tok::Punct("[") => {
                self.bump();
                let elem = self.type_expr()?;
                self.expect_punct(";")?;
                let n = match self.peek() {
                    Tok::Int(n) if *n > 0 && *n <= u32::MAX as i64 => *n as u32,
                    _ => return self.err("positive array length"),
                };
                self.bump();
                self.expect_punct("]")?;
                Ok(TypeExpr::Array(Box::new(elem), n))
            }
            Tok::Ident(name) => {
                self.bump();
                Ok(TypeExpr::Named(name))
            }
            _ => self.err("type"),
        }
    }

    fn block(&mut self) -> PResult<Block> {
        self.expect_punct("{")?;
        let mut out = Vec::new();
        while !self.is_punct("}") {
            if matches!(self.peek(), Tok::Eof) {
                return self.err("`}`");
            }
            out.push(self.stmt()?);
        }
        self.expect_punct("}")?;
        Ok(out)
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        let pos = self.pos();
        let kind = match self.peek() {
            Tok::Kw("let") => {
                self.bump();
                let (name, _) = self.ident()?;
                self.expect_punct(":")?;
                let ty = self.type_expr()?;
                let init = if self.eat_punct("=") { Some(self.expr()?) } else { None };
                self.expect_punct(";")?;
                StmtKind::Let { name, ty, init }
            }
            Tok::Kw("if") => self.if_stmt()?,
            Tok::Kw("while") => {
                self.bump();
                let cond = self.expr()?;
                let body = self.block()?;
                StmtKind::While { cond, body }
            }
            Tok::Kw("return") => {
                self.bump();
                let value = if self.is_punct(";") { None } else { Some(self.expr()?) };
                self.expect_punct(";")?;
                StmtKind::Return(value)
            }
            Tok::Kw("free") => {
                self.bump();
                self.expect_punct("(")?;
                let e = self.expr()?;
                self.expect_punct(")")?;
                self.expect_punct(";")?;
                StmtKind::Free(e)
            }
            Tok::Kw("print") => {
                self.bump();
                self.expect_punct("(")?;
                let e = self.expr()?;
                self.expect_punct(")")?;
                self.expect_punct(";")?;
                StmtKind::Print(e)
            }
            Tok::Kw("spawn") => {
                self.bump();
                let (func, _) = self.ident()?;
                let args = self.call_args()?;
                self.expect_punct(";")?;
                StmtKind::Spawn { func, args }
            }
            Tok::Kw("match") => self.match_stmt()?,
            _ => {
                let e = self.expr()?;
                if self.eat_punct("=") {
                    let value = self.expr()?;
                    self.expect_punct(";")?;
                    StmtKind::Assign { target: e, value }
                } else {
                    self.expect_punct(";")?;
                    StmtKind::Expr(e)
                }
            }
        };
        Ok(Stmt { kind, pos })
    }

    fn if_stmt(&mut self) -> PResult<StmtKind> {
        self.expect_kw("if")?;
        let cond = self.expr()?;
        let then = self.block()?;
        let els = if self.is_kw("else") {
            self.bump();
            if self.is_kw("if") {
                let pos = self.pos();
                let nested = self.if_stmt()?;
                Some(vec![Stmt { kind: nested, pos }])
            } else {
                Some(self.block()?)
            }
        } else {
            None
        };
        Ok(StmtKind::If { cond, then, els })
    }

    fn match_stmt(&mut self) -> PResult<StmtKind> {
        self.expect_kw("match")?;
        let scrutinee = self.expr()?;
        self.expect_punct("{")?;
        let mut arms = Vec::new();
        let mut default = None;
        while !self.is_punct("}") {
            let pos = self.pos();
            if matches!(self.peek(), Tok::Ident(s) if s == "_") {
                self.bump();
                self.expect_punct("=>")?;
                if default.is_some() {
                    return Err(SyntaxError { pos, message: "duplicate `_` arm".into() });
                }
                default = Some(self.block()?);
            } else {
                let (variant, _) = self.ident()?;
                self.expect_punct("(")?;
                let (binding, _) = self.ident()?;
                self.expect_punct(")")?;
                self.expect_punct("=>")?;
                let body = self.block()?;
                arms.push(MatchArm { variant, binding, body, pos });
            }
            self.eat_punct(",");
        }
        self.expect_punct("}")?;
        Ok(StmtKind::Match { scrutinee, arms, default })
    }

    fn call_args(&mut self) -> PResult<Vec<Expr>> {
        self.expect_punct("(")?;
        let mut args = Vec::new();
        while !self.is_punct(")") {
            args.push(self.expr()?);
            if !self.eat_punct(",") {
                break;
            }
        }
        self.expect_punct(")")?;
        Ok(args)
    }

    pub fn expr(&mut self) -> PResult<Expr> {
        self.binary(1)
    }

    fn binop(&self) -> Option<(BinOp, u8)> {
        let op = match self.peek() {
            Tok::Punct(p) => *p,
            _ => return None,
        };
        Some(match op {
            "||" => (BinOp::Or, 1),
            "&&" => (BinOp::And, 2),
            "==" => (BinOp::Eq, 3),
            "!=" => (BinOp::Ne, 3),
            "<" => (BinOp::Lt, 4),
            "<=" => (BinOp::Le, 4),
            ">" => (BinOp::Gt, 4),
            ">=" => (BinOp::Ge, 4),
            "+" => (BinOp::Add, 5),
            "-" => (BinOp::Sub, 5),
            "*" => (BinOp::Mul, 6),
            "/" => (BinOp::Div, 6),
            "%" => (BinOp::Rem, 6),
            _ => return None,
        })
    }

    fn binary(&mut self, min_prec: u8) -> PResult<Expr> {
        let mut lhs = self.cast()?;
        while let Some((op, prec)) = self.binop() {
            if prec < min_prec {
                break;
            }
            let pos = self.bump().1;
            let rhs = self.binary(prec + 1)?;
            lhs = Expr { kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), pos };
        }
        Ok(lhs)
    }

    fn cast(&mut self) -> PResult<Expr> {
        let mut e = self.unary()?;
        while self.is_kw("as") {
            let pos = self.bump().1;
            let ty = self.type_expr()?;
            e = Expr { kind: ExprKind::Cast(Box::new(e), ty), pos };
        }
        Ok(e)
    }

    fn unary(&mut self) -> PResult<Expr> {
        let pos = self.pos();
        let kind = match self.peek() {
            Tok::Punct("-") => {
                self.bump();
                ExprKind::Unary(UnOp::Neg, Box::new(self.unary()?))
            }
            Tok::Punct("!") => {
                self.bump();
                ExprKind::Unary(UnOp::Not, Box::new(self.unary()?))
            }
            Tok::Punct("*") => {
                self.bump();
                ExprKind::Deref(Box::new(self.unary()?))
            }
            Tok::Punct("&") => {
                self.bump();
                ExprKind::AddrOf(Box::new(self.unary()?))
            }
            Tok::Kw("pass") => {
                self.bump();
                ExprKind::Pass(Box::new(self.unary()?))
            }
            _ => return self.postfix(),
        };
        Ok(Expr { kind, pos })
    }

    fn postfix(&mut self) -> PResult<Expr> {
        let mut e = self.primary()?;
        loop {
            if self.is_punct(".") {
                let pos = self.bump().1;
                let (name, _) = self.ident()?;
                e = Expr { kind: ExprKind::Field(Box::new(e), name), pos };
            } else if self.is_punct("[") {
                let pos = self.bump().1;
                let idx = self.expr()?;
                self.expect_punct("]")?;
                e = Expr { kind: ExprKind::Index(Box::new(e), Box::new(idx)), pos };
            } else {
                return Ok(e);
            }
        }
    }

    fn primary(&mut self) -> PResult<Expr> {
        let pos = self.pos();
        let kind = match self.peek().clone() {
            Tok::Int(n) => {
                self.bump();
                ExprKind::Int(n)
            }
            Tok::Kw("true") => {
                self.bump();
                ExprKind::Bool(true)
            }
            Tok::Kw("false") => {
                self.bump();
                ExprKind::Bool(false)
            }
            Tok::Kw("null") => {
                self.bump();
                ExprKind::Null
            }
            Tok::Kw("rand") => {
                self.bump();
                self.expect_punct("(")?;
                self.expect_punct(")")?;
                ExprKind::Rand
            }
            Tok::Kw("alloc") => {
                self.bump();
                self.expect_punct("(")?;
                let ty = self.type_expr()?;
                self.expect_punct(")")?;
                ExprKind::Alloc(ty)
            }
            Tok::Kw("alloc_array") => {
                self.bump();
                self.expect_punct("(")?;
                let ty = self.type_expr()?;
                self.expect_punct(",")?;
                let n = self.expr()?;
                self.expect_punct(")")?;
                ExprKind::AllocArray(ty, Box::new(n))
            }
            Tok::Kw("len") => {
                self.bump();
                self.expect_punct("(")?;
                let e = self.expr()?;
                self.expect_punct(")")?;
                ExprKind::Len(Box::new(e))
            }
            Tok::Punct("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_punct(")")?;
                return Ok(e);
            }
            Tok::Ident(name) => {
                self.bump();
                if self.is_punct("(") && !matches!(self.peek_at(1), Tok::Punct("{")) {
                    let args = self.call_args()?;
                    ExprKind::Call(name, args)
                } else {
                    ExprKind::Var(name)
                }
            }
            _ => return self.err("expression"),
        };
        Ok(Expr { kind, pos })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_program() {
        let ast = parse("fn main() { }").unwrap();
        assert_eq!(ast.functions.len(), 1);
        assert!(ast.functions[0].body.is_empty());
    }

    #[test]
    fn conditional_free() {
        let ast = parse(
            "fn main() {\n let p: *int = alloc(int);\n if rand() == 42 { free(pass p); }\n}",
        )
        .unwrap();
        let body = &ast.functions[0].body;
        assert_eq!(body.len(), 2);
        match &body[1].kind {
            StmtKind::If { then, .. } => match &then[0].kind {
                StmtKind::Free(e) => assert!(matches!(e.kind, ExprKind::Pass(_))),
                other => panic!("{other:?}"),
            },
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_error_at_brace() {
        let err = parse("fn f( {").unwrap_err();
        assert_eq!(err.pos, Pos { line: 1, col: 7 });
    }

    #[test]
    fn precedence() {
        let ast = parse("fn main() { let x: int = 1 + 2 * 3 == 7 && true; }").unwrap();
        match &ast.functions[0].body[0].kind {
            StmtKind::Let { init: Some(e), .. } => match &e.kind {
                ExprKind::Binary(BinOp::And, l, _) => {
                    assert!(matches!(l.kind, ExprKind::Binary(BinOp::Eq, _, _)))
                }
                other => panic!("{other:?}"),
            },
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn declarations_and_match() {
        let src = "struct N { v: int, next: *N }\nunion C { Num: int, P: *N }\nglobal g: [*N; 3];\n\
                   @allocator fn mk() -> *N { return alloc(N); }\n\
                   fn main() { let c: C; c = P(mk()); match c { P(x) => { print(x.v); } _ => { } } }";
        let ast = parse(src).unwrap();
        assert_eq!(ast.structs.len(), 1);
        assert_eq!(ast.unions[0].variants.len(), 2);
        assert_eq!(ast.globals[0].ty, TypeExpr::Array(Box::new(TypeExpr::Ptr(Box::new(TypeExpr::Named("N".into())))), 3));
        assert!(ast.functions[0].allocator);
        assert!(matches!(ast.functions[1].body[2].kind, StmtKind::Match { ref arms, default: Some(_), .. } if arms.len() == 1));
    }

    #[test]
    fn deref_assignment_and_cast() {
        let ast = parse("fn main() { *p = 5; let x: int = p as int; }").unwrap();
        assert!(matches!(ast.functions[0].body[0].kind, StmtKind::Assign { .. }));
        match &ast.functions[0].body[1].kind {
            StmtKind::Let { init: Some(e), .. } => assert!(matches!(e.kind, ExprKind::Cast(..))),
            other => panic!("{other:?}"),
        }
    }
}
