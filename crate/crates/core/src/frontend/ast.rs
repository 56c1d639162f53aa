use std::fmt;

use crate::isa::{BinOp, UnOp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TypeExpr {
    Int,
    Bool,
    Ptr(Box<TypeExpr>),
    Named(String),
    Array(Box<TypeExpr>, u32),
    DynArray(Box<TypeExpr>),
}

impl fmt::Display for TypeExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeExpr::Int => write!(f, "int"),
            TypeExpr::Bool => write!(f, "bool"),
            TypeExpr::Ptr(t) => write!(f, "*{t}"),
            TypeExpr::Named(n) => write!(f, "{n}"),
            TypeExpr::Array(t, n) => write!(f, "[{t}; {n}]"),
            TypeExpr::DynArray(t) => write!(f, "dynarray {t}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Member {
    pub name: String,
    pub ty: TypeExpr,
    pub pos: Pos,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StructDecl {
    pub name: String,
    pub fields: Vec<Member>,
    pub pos: Pos,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnionDecl {
    pub name: String,
    pub variants: Vec<Member>,
    pub pos: Pos,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalDecl {
    pub name: String,
    pub ty: TypeExpr,
    pub init: Option<Expr>,
    pub pos: Pos,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FnDecl {
    pub name: String,
    pub params: Vec<Member>,
    pub ret: Option<TypeExpr>,
    pub body: Block,
    pub allocator: bool,
    pub pos: Pos,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Ast {
    pub structs: Vec<StructDecl>,
    pub unions: Vec<UnionDecl>,
    pub globals: Vec<GlobalDecl>,
    pub functions: Vec<FnDecl>,
}

pub type Block = Vec<Stmt>;

#[derive(Clone, Debug, PartialEq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub pos: Pos,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchArm {
    pub variant: String,
    pub binding: String,
    pub body: Block,
    pub pos: Pos,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StmtKind {
    Let { name: String, ty: TypeExpr, init: Option<Expr> },
    Assign { target: Expr, value: Expr },
    If { cond: Expr, then: Block, els: Option<Block> },
    While { cond: Expr, body: Block },
    Return(Option<Expr>),
    Free(Expr),
    Print(Expr),
    Spawn { func: String, args: Vec<Expr> },
    Match { scrutinee: Expr, arms: Vec<MatchArm>, default: Option<Block> },
    Expr(Expr),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub pos: Pos,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExprKind {
    Int(i64),
    Bool(bool),
    Null,
    Var(String),
    Field(Box<Expr>, String),
    Index(Box<Expr>, Box<Expr>),
    Deref(Box<Expr>),
    AddrOf(Box<Expr>),
    Pass(Box<Expr>),
    Alloc(TypeExpr),
    AllocArray(TypeExpr, Box<Expr>),
    Len(Box<Expr>),
    Rand,
    /// A function call, or a union variant constructor when the name is a variant.
    Call(String, Vec<Expr>),
    Cast(Box<Expr>, TypeExpr),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Unary(UnOp, Box<Expr>),
}

impl Ast {
    pub fn function(&self, name: &str) -> Option<&FnDecl> {
        self.functions.iter().find(|f| f.name == name)
    }
}
