//! Minimal s-expression reader for solver output.

use crate::error::{Result, SrmError};

#[derive(Debug, Clone, PartialEq)]
pub enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

impl Sexp {
    pub fn atom(&self) -> Option<&str> {
        match self {
            Sexp::Atom(s) => Some(s),
            Sexp::List(_) => None,
        }
    }

    pub fn list(&self) -> Option<&[Sexp]> {
        match self {
            Sexp::List(v) => Some(v),
            Sexp::Atom(_) => None,
        }
    }

    /// Evaluates a real-valued term built from decimals, `-`, `+`, `*` and `/`.
    pub fn real(&self) -> Option<f64> {
        match self {
            Sexp::Atom(s) => s.parse().ok(),
            Sexp::List(v) => {
                let (op, args) = v.split_first()?;
                let vals: Option<Vec<f64>> = args.iter().map(Sexp::real).collect();
                let vals = vals?;
                match (op.atom()?, vals.as_slice()) {
                    ("-", [x]) => Some(-x),
                    ("-", [x, rest @ ..]) => Some(rest.iter().fold(*x, |a, b| a - b)),
                    ("+", xs) => Some(xs.iter().sum()),
                    ("*", xs) => Some(xs.iter().product()),
                    ("/", [x, y]) => Some(x / y),
                    _ => None,
                }
            }
        }
    }
}

/// Parses every top-level expression in `text`. `;` starts a line comment;
/// `|...|` symbols and `"..."` strings are kept verbatim as atoms.
pub fn parse_all(text: &str) -> Result<Vec<Sexp>> {
    let mut stack: Vec<Vec<Sexp>> = vec![Vec::new()];
    let mut chars = text.char_indices().peekable();
    let bad = |msg: &str| SrmError::Solver(format!("malformed solver output: {msg}"));
    while let Some((i, c)) = chars.next() {
        match c {
            '(' => stack.push(Vec::new()),
            ')' => {
                let done = stack
                    .pop()
                    .filter(|_| !stack.is_empty())
                    .ok_or_else(|| bad("unbalanced `)`"))?;
                stack.last_mut().expect("outer level").push(Sexp::List(done));
            }
            ';' => {
                for (_, c) in chars.by_ref() {
                    if c == '\n' {
                        break;
                    }
                }
            }
            c if c.is_whitespace() => {}
            '|' | '"' => {
                let end = text[i + 1..].find(c).ok_or_else(|| bad("unterminated quote"))? + i + 1;
                stack
                    .last_mut()
                    .expect("level")
                    .push(Sexp::Atom(text[i..=end].to_string()));
                while chars.peek().is_some_and(|&(j, _)| j <= end) {
                    chars.next();
                }
            }
            _ => {
                let mut end = i + c.len_utf8();
                while let Some(&(j, d)) = chars.peek() {
                    if d.is_whitespace() || d == '(' || d == ')' || d == ';' {
                        break;
                    }
                    end = j + d.len_utf8();
                    chars.next();
                }
                stack
                    .last_mut()
                    .expect("level")
                    .push(Sexp::Atom(text[i..end].to_string()));
            }
        }
    }
    if stack.len() != 1 {
        return Err(bad("unbalanced `(`"));
    }
    Ok(stack.pop().expect("top level"))
}
