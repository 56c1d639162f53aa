use super::ast::Pos;
use super::SyntaxError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    Kw(&'static str),
    Punct(&'static str),
    Eof,
}

impl std::fmt::Display for Tok {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "identifier `{s}`"),
            Tok::Int(n) => write!(f, "integer `{n}`"),
            Tok::Kw(k) => write!(f, "`{k}`"),
            Tok::Punct(p) => write!(f, "`{p}`"),
            Tok::Eof => write!(f, "end of input"),
        }
    }
}

const KEYWORDS: &[&str] = &[
    "fn", "struct", "union", "global", "let", "if", "else", "while", "return", "free", "print", "spawn", "match",
    "pass", "alloc", "alloc_array", "len", "rand", "as", "null", "true", "false", "int", "bool", "dynarray",
];

// Longest first so that `==` wins over `=`.
const PUNCTS: &[&str] = &[
    "->", "=>", "==", "!=", "<=", ">=", "&&", "||", "{", "}", "(", ")", "[", "]", ";", ":", ",", ".", "*", "&", "+",
    "-", "/", "%", "<", ">", "!", "=", "@",
];

pub fn lex(src: &str) -> Result<Vec<(Tok, Pos)>, SyntaxError> {
    let mut out = Vec::new();
    let bytes = src.as_bytes();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    while i < bytes.len() {
        let c = bytes[i];
        let pos = Pos { line, col };
        if c == b'\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_ascii_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == b'/' && bytes.get(i + 1) == Some(&b'/') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let text = &src[start..i];
            let n: i64 = text
                .parse()
                .map_err(|_| SyntaxError { pos, message: format!("integer literal `{text}` out of range") })?;
            col += (i - start) as u32;
            out.push((Tok::Int(n), pos));
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let word = &src[start..i];
            col += (i - start) as u32;
            match KEYWORDS.iter().find(|k| **k == word) {
                Some(k) => out.push((Tok::Kw(k), pos)),
                None => out.push((Tok::Ident(word.to_string()), pos)),
            }
            continue;
        }
        match PUNCTS.iter().find(|p| src[i..].starts_with(**p)) {
            Some(p) => {
                i += p.len();
                col += p.len() as u32;
                out.push((Tok::Punct(p), pos));
            }
            None => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(SyntaxError { pos, message: format!("unexpected character `{ch}`") });
            }
        }
    }
    out.push((Tok::Eof, Pos { line, col }));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_and_positions() {
        let toks = lex("fn main() {\n  let x: *int = null; // hi\n}").unwrap();
        assert_eq!(toks[0], (Tok::Kw("fn"), Pos { line: 1, col: 1 }));
        assert_eq!(toks[1].0, Tok::Ident("main".into()));
        let star = toks.iter().find(|(t, _)| *t == Tok::Punct("*")).unwrap();
        assert_eq!(star.1, Pos { line: 2, col: 10 });
        assert_eq!(toks.last().unwrap().0, Tok::Eof);
    }

    #[test]
    fn two_char_operators() {
        let toks: Vec<Tok> = lex("a==b=>c->d").unwrap().into_iter().map(|t| t.0).collect();
        assert!(toks.contains(&Tok::Punct("==")));
        assert!(toks.contains(&Tok::Punct("=>")));
        assert!(toks.contains(&Tok::Punct("->")));
    }

    #[test]
    fn bad_character() {
        let err = lex("fn $").unwrap_err();
        assert_eq!(err.pos, Pos { line: 1, col: 4 });
    }
}
