//! Expression language for system files.
//!
//! Three syntactic categories share one lexer:
//!
//! ```text
//! scalar := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := ['-'] atom
//! atom   := number | ident | ident '(' args ')' | '(' scalar ')'
//! set    := setatom ('+' setatom)*
//! setatom:= '{' scalar '}' | '[' scalar ',' scalar ']'
//!         | 'hull' '(' scalar ',' scalar ')' | term '*' setatom | '(' set ')'
//! guard  := orexpr over 'and' / 'or' / 'not' and scalar comparisons,
//!           or the single word 'otherwise'
//! ```
//!
//! Identifiers are `x1`..`x9`, `t`, `z1`..`z9` (Matrosov auxiliary
//! variables) and any parameter names registered in the [`Vocabulary`].

mod ast;
mod lexer;
mod parser;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use ast::{sgn, sgn1, BinOp, CmpOp, Env, Func, GuardExpr, ScalarExpr, SetExpr, MIN_DIVISOR};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind} at byte {offset}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseErrorKind {
    #[error("unexpected character `{0}`")]
    UnexpectedChar(char),
    #[error("invalid number `{0}`")]
    InvalidNumber(String),
    #[error("expected {expected}, found {found}")]
    UnexpectedToken { expected: String, found: String },
    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("`{name}` takes {expected} argument(s), got {found}")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("trailing input starting with {0}")]
    TrailingInput(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("variable `{0}` is not bound")]
    MissingVariable(String),
    #[error("interval literal has lo > hi: [{lo}, {hi}]")]
    InvertedInterval { lo: f64, hi: f64 },
}

/// Names a parser accepts beyond numbers and function calls.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    state_dim: usize,
    aux_dim: usize,
    params: BTreeMap<String, Arc<ScalarExpr>>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary {
            state_dim: 9,
            aux_dim: 9,
            params: BTreeMap::new(),
        }
    }
}

impl Vocabulary {
    /// Accept `x1..x{state_dim}` and no auxiliary variables.
    pub fn new(state_dim: usize) -> Self {
        Vocabulary {
            state_dim,
            aux_dim: 0,
            params: BTreeMap::new(),
        }
    }

    pub fn with_aux(mut self, aux_dim: usize) -> Self {
        self.aux_dim = aux_dim;
        self
    }

    /// Register a named parameter. Its definition is parsed against the
    /// vocabulary as it stands, so later parameters may refer to earlier
    /// ones.
    pub fn define(&mut self, name: &str, src: &str) -> Result<(), ParseError> {
        if Func::from_name(name).is_some() || self.lookup(name).is_some() || is_keyword(name) {
            return Err(ParseError {
                offset: 0,
                kind: ParseErrorKind::UnexpectedToken {
                    expected: "a fresh parameter name".into(),
                    found: format!("`{}`", name),
                },
            });
        }
        let expr = self.parse_scalar(src)?;
        self.params.insert(name.to_string(), Arc::new(expr));
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub(crate) fn lookup(&self, name: &str) -> Option<ScalarExpr> {
        if name == "t" {
            return Some(ScalarExpr::Time);
        }
        if let Some(e) = self.params.get(name) {
            return Some(ScalarExpr::Param {
                name: name.to_string(),
                expr: Arc::clone(e),
            });
        }
        let (prefix, digits) = name.split_at(1);
        let idx: usize = match digits.parse() {
            Ok(i) if i >= 1 && !digits.starts_with('0') => i,
            _ => return None,
        };
        match prefix {
            "x" if idx <= self.state_dim => Some(ScalarExpr::State(idx - 1)),
            "z" if idx <= self.aux_dim => Some(ScalarExpr::Aux(idx - 1)),
            _ => None,
        }
    }

    pub fn parse_scalar(&self, src: &str) -> Result<ScalarExpr, ParseError> {
        parser::Parser::new(src, self)?.scalar_all()
    }

    pub fn parse_set(&self, src: &str) -> Result<SetExpr, ParseError> {
        parser::Parser::new(src, self)?.set_all()
    }

    pub fn parse_guard(&self, src: &str) -> Result<GuardExpr, ParseError> {
        parser::Parser::new(src, self)?.guard_all()
    }
}

pub(crate) fn is_keyword(name: &str) -> bool {
    matches!(name, "and" | "or" | "not" | "otherwise" | "hull")
}

/// Parse with the default vocabulary (`x1..x9`, `z1..z9`, `t`).
pub fn parse_scalar(src: &str) -> Result<ScalarExpr, ParseError> {
    Vocabulary::default().parse_scalar(src)
}

pub fn parse_set(src: &str) -> Result<SetExpr, ParseError> {
    Vocabulary::default().parse_set(src)
}

pub fn parse_guard(src: &str) -> Result<GuardExpr, ParseError> {
    Vocabulary::default().parse_guard(src)
}

pub fn eval_guard(g: &GuardExpr, x: &[f64], t: f64) -> Result<bool, EvalError> {
    g.eval(&Env::new(x, t))
}

impl fmt::Display for Vocabulary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x1..x{}, t", self.state_dim)?;
        if self.aux_dim > 0 {
            write!(f, ", z1..z{}", self.aux_dim)?;
        }
        for (k, v) in &self.params {
            write!(f, ", {} = {}", k, v)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
