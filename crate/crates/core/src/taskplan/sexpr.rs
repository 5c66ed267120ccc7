//! S-expression reader with source positions.

use std::fmt;

use super::ParseError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SExpr {
    Atom(String, Pos),
    List(Vec<SExpr>, Pos),
}

impl SExpr {
    pub fn pos(&self) -> Pos {
        match self {
            SExpr::Atom(_, p) | SExpr::List(_, p) => *p,
        }
    }

    pub fn atom(&self) -> Option<&str> {
        match self {
            SExpr::Atom(s, _) => Some(s),
            SExpr::List(..) => None,
        }
    }

    pub fn list(&self) -> Option<&[SExpr]> {
        match self {
            SExpr::List(v, _) => Some(v),
            SExpr::Atom(..) => None,
        }
    }

    /// True when this is an atom equal to `kw`, ignoring ASCII case.
    pub fn is_keyword(&self, kw: &str) -> bool {
        self.atom().is_some_and(|a| a.eq_ignore_ascii_case(kw))
    }

    /// Head atom of a list, lowercased.
    pub fn head(&self) -> Option<String> {
        self.list()
            .and_then(|v| v.first())
            .and_then(SExpr::atom)
            .map(str::to_ascii_lowercase)
    }
}

/// Reads every top-level expression in `text`. `;` starts a comment.
pub fn parse(text: &str) -> Result<Vec<SExpr>, ParseError> {
    let mut stack: Vec<(Vec<SExpr>, Pos)> = Vec::new();
    let mut top = Vec::new();
    let mut line = 1;
    let mut col = 0;
    let mut chars = text.chars().peekable();
    let mut token = String::new();
    let mut token_pos = Pos { line: 1, col: 1 };

    fn flush(token: &mut String, pos: Pos, stack: &mut [(Vec<SExpr>, Pos)], top: &mut Vec<SExpr>) {
        if token.is_empty() {
            return;
        }
        let atom = SExpr::Atom(std::mem::take(token), pos);
        match stack.last_mut() {
            Some((v, _)) => v.push(atom),
            None => top.push(atom),
        }
    }

    while let Some(c) = chars.next() {
        col += 1;
        let here = Pos { line, col };
        match c {
            ';' => {
                flush(&mut token, token_pos, &mut stack, &mut top);
                for c in chars.by_ref() {
                    if c == '\n' {
                        line += 1;
                        col = 0;
                        break;
                    }
                }
            }
            '(' => {
                flush(&mut token, token_pos, &mut stack, &mut top);
                stack.push((Vec::new(), here));
            }
            ')' => {
                flush(&mut token, token_pos, &mut stack, &mut top);
                let Some((items, start)) = stack.pop() else {
                    return Err(ParseError::at(here, "unbalanced parentheses: unexpected `)`"));
                };
                let list = SExpr::List(items, start);
                match stack.last_mut() {
                    Some((v, _)) => v.push(list),
                    None => top.push(list),
                }
            }
            c if c.is_whitespace() => {
                flush(&mut token, token_pos, &mut stack, &mut top);
                if c == '\n' {
                    line += 1;
                    col = 0;
                }
            }
            c => {
                if token.is_empty() {
                    token_pos = here;
                }
                token.push(c);
            }
        }
    }
    flush(&mut token, token_pos, &mut stack, &mut top);
    if let Some((_, start)) = stack.last() {
        return Err(ParseError::at(*start, "unbalanced parentheses: `(` is never closed"));
    }
    Ok(top)
}
