//! minilang: parsing, rule enforcement and lowering to typed IR.

pub mod ast;
pub mod check;
pub mod ir;
pub mod lexer;
pub mod lower;
pub mod parser;

use std::fmt;

pub use ast::{Ast, Pos};
pub use ir::TypedIr;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{pos}: syntax error: {message}")]
pub struct SyntaxError {
    pub pos: Pos,
    pub message: String,
}

/// The three precondition rules a traceable program must obey.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rule {
    /// Pointer values are only ever stored in pointer-typed locations.
    R1,
    /// Pointers are always valid or null.
    R2,
    /// Pointer types match the objects they point to.
    R3,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::R1 => "R1",
            Rule::R2 => "R2",
            Rule::R3 => "R3",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RuleViolation {
    pub rule: Rule,
    pub pos: Pos,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Diagnostic {
    Syntax(SyntaxError),
    Rule(RuleViolation),
    /// Ordinary type or name error that is not one of the rules.
    Error { pos: Pos, message: String },
}

impl Diagnostic {
    pub fn pos(&self) -> Pos {
        match self {
            Diagnostic::Syntax(e) => e.pos,
            Diagnostic::Rule(v) => v.pos,
            Diagnostic::Error { pos, .. } => *pos,
        }
    }

    pub fn rule(&self) -> Option<Rule> {
        match self {
            Diagnostic::Rule(v) => Some(v.rule),
            _ => None,
        }
    }

    /// `file:line:col: R<k>: message`, or `error:` for non-rule diagnostics.
    pub fn render(&self, file: &str) -> String {
        match self {
            Diagnostic::Syntax(e) => format!("{file}:{}: error: {}", e.pos, e.message),
            Diagnostic::Rule(v) => format!("{file}:{}: {}: {}", v.pos, v.rule, v.message),
            Diagnostic::Error { pos, message } => format!("{file}:{pos}: error: {message}"),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render("<input>"))
    }
}

pub fn parse(src: &str) -> Result<Ast, SyntaxError> {
    parser::parse(src)
}

/// Type-checks `ast`, enforces R1-R3 and builds typed IR. All diagnostics
/// are returned together, in source order.
pub fn check_rules(ast: &Ast) -> Result<TypedIr, Vec<Diagnostic>> {
    check::check(ast)
}

pub fn lower(ir: TypedIr) -> TypedIr {
    lower::lower(ir)
}

/// parse, check_rules and lower in one go.
pub fn compile_to_ir(src: &str) -> Result<TypedIr, Vec<Diagnostic>> {
    let ast = parse(src).map_err(|e| vec![Diagnostic::Syntax(e)])?;
    Ok(lower(check_rules(&ast)?))
}
