use super::ast::{BinOp, CmpOp, Func, GuardExpr, ScalarExpr, SetExpr};
use super::lexer::{tokenize, Tok, Token};
use super::{is_keyword, ParseError, ParseErrorKind, Vocabulary};

type PResult<T> = Result<T, ParseError>;

pub(crate) struct Parser<'v> {
    toks: Vec<Token>,
    pos: usize,
    vocab: &'v Vocabulary,
}

impl<'v> Parser<'v> {
    pub(crate) fn new(src: &str, vocab: &'v Vocabulary) -> PResult<Self> {
        Ok(Parser {
            toks: tokenize(src)?,
            pos: 0,
            vocab,
        })
    }

    pub(crate) fn scalar_all(mut self) -> PResult<ScalarExpr> {
        let e = self.scalar()?;
        self.finish()?;
        Ok(e)
    }

    pub(crate) fn set_all(mut self) -> PResult<SetExpr> {
        let e = self.set()?;
        self.finish()?;
        Ok(e)
    }

    pub(crate) fn guard_all(mut self) -> PResult<GuardExpr> {
        let e = self.guard()?;
        self.finish()?;
        Ok(e)
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].offset
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected<T>(&self, expected: &str) -> PResult<T> {
        Err(ParseError {
            offset: self.offset(),
            kind: ParseErrorKind::UnexpectedToken {
                expected: expected.to_string(),
                found: self.peek().describe(),
            },
        })
    }

    fn expect(&mut self, tok: Tok, expected: &str) -> PResult<()> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            self.unexpected(expected)
        }
    }

    fn finish(&self) -> PResult<()> {
        if *self.peek() == Tok::Eof {
            Ok(())
        } else {
            Err(ParseError {
                offset: self.offset(),
                kind: ParseErrorKind::TrailingInput(self.peek().describe()),
            })
        }
    }

    fn at_word(&self, word: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == word)
    }

    /// Run `f`; on failure rewind and return `None`.
    fn attempt<T>(&mut self, f: impl FnOnce(&mut Self) -> PResult<T>) -> Option<T> {
        let save = self.pos;
        match f(self) {
            Ok(v) => Some(v),
            Err(_) => {
                self.pos = save;
                None
            }
        }
    }

    // scalars

    fn scalar(&mut self) -> PResult<ScalarExpr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> PResult<ScalarExpr> {
        self.term_until_set(false)
    }

    /// A product chain. With `stop_at_set`, a `*` whose right operand
    /// starts a set atom is left unconsumed.
    fn term_until_set(&mut self, stop_at_set: bool) -> PResult<ScalarExpr> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            if stop_at_set && op == BinOp::Mul && self.set_atom_follows_star() {
                return Ok(lhs);
            }
            self.bump();
            let rhs = self.factor()?;
            lhs = binary(op, lhs, rhs);
        }
    }

    fn set_atom_follows_star(&mut self) -> bool {
        match self.peek_at(1) {
            Tok::LBrace | Tok::LBracket => true,
            Tok::Ident(s) if s == "hull" => true,
            Tok::LParen => {
                let save = self.pos;
                self.pos += 2;
                let ok = self.attempt(|p| p.paren_set()).is_some();
                self.pos = save;
                ok
            }
            _ => false,
        }
    }

    fn factor(&mut self) -> PResult<ScalarExpr> {
        if *self.peek() == Tok::Minus {
            self.bump();
            let e = self.atom()?;
            return Ok(ScalarExpr::Neg(Box::new(e)));
        }
        self.atom()
    }

    fn atom(&mut self) -> PResult<ScalarExpr> {
        let offset = self.offset();
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(ScalarExpr::Num(v))
            }
            Tok::LParen => {
                self.bump();
                let e = self.scalar()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                if *self.peek() == Tok::LParen {
                    self.call(&name, offset)
                } else if is_keyword(&name) {
                    Err(ParseError {
                        offset,
                        kind: ParseErrorKind::UnexpectedToken {
                            expected: "a scalar expression".into(),
                            found: format!("keyword `{}`", name),
                        },
                    })
                } else {
                    self.vocab.lookup(&name).ok_or(ParseError {
                        offset,
                        kind: ParseErrorKind::UnknownIdentifier(name),
                    })
                }
            }
            _ => self.unexpected("a number, identifier or `(`"),
        }
    }

    fn call(&mut self, name: &str, offset: usize) -> PResult<ScalarExpr> {
        let func = Func::from_name(name).ok_or_else(|| ParseError {
            offset,
            kind: ParseErrorKind::UnknownFunction(name.to_string()),
        })?;
        self.expect(Tok::LParen, "`(`")?;
        let mut args = vec![self.scalar()?];
        while *self.peek() == Tok::Comma {
            self.bump();
            args.push(self.scalar()?);
        }
        self.expect(Tok::RParen, "`,` or `)`")?;
        if args.len() != func.arity() {
            return Err(ParseError {
                offset,
                kind: ParseErrorKind::Arity {
                    name: name.to_string(),
                    expected: func.arity(),
                    found: args.len(),
                },
            });
        }
        Ok(ScalarExpr::Call { func, args })
    }

    // sets

    fn set(&mut self) -> PResult<SetExpr> {
        let mut lhs = self.set_atom()?;
        while *self.peek() == Tok::Plus {
            self.bump();
            let rhs = self.set_atom()?;
            lhs = SetExpr::Sum(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    /// `( set )`, starting just after the opening parenthesis.
    fn paren_set(&mut self) -> PResult<SetExpr> {
        let s = self.set()?;
        self.expect(Tok::RParen, "`)`")?;
        Ok(s)
    }

    fn set_atom(&mut self) -> PResult<SetExpr> {
        match self.peek() {
            Tok::LBrace => {
                self.bump();
                let e = self.scalar()?;
                self.expect(Tok::RBrace, "`}`")?;
                Ok(SetExpr::Singleton(e))
            }
            Tok::LBracket => {
                self.bump();
                let lo = self.scalar()?;
                self.expect(Tok::Comma, "`,` in interval literal")?;
                let hi = self.scalar()?;
                self.expect(Tok::RBracket, "`]`")?;
                Ok(SetExpr::Range(lo, hi))
            }
            Tok::Ident(s) if s == "hull" => {
                self.bump();
                self.expect(Tok::LParen, "`(` after hull")?;
                let a = self.scalar()?;
                self.expect(Tok::Comma, "`,`")?;
                let b = self.scalar()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(SetExpr::Hull(a, b))
            }
            _ => {
                if *self.peek() == Tok::LParen {
                    let save = self.pos;
                    self.bump();
                    if let Some(s) = self.attempt(|p| p.paren_set()) {
                        return Ok(s);
                    }
                    self.pos = save;
                }
                let coef = self.term_until_set(true)?;
                self.expect(Tok::Star, "`*` followed by a set")?;
                let s = self.set_atom()?;
                Ok(SetExpr::Scale(coef, Box::new(s)))
            }
        }
    }

    // guards

    fn guard(&mut self) -> PResult<GuardExpr> {
        let mut lhs = self.guard_and()?;
        while self.at_word("or") {
            self.bump();
            let rhs = self.guard_and()?;
            lhs = GuardExpr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn guard_and(&mut self) -> PResult<GuardExpr> {
        let mut lhs = self.guard_not()?;
        while self.at_word("and") {
            self.bump();
            let rhs = self.guard_not()?;
            lhs = GuardExpr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn guard_not(&mut self) -> PResult<GuardExpr> {
        if self.at_word("not") {
            self.bump();
            let g = self.guard_not()?;
            return Ok(GuardExpr::Not(Box::new(g)));
        }
        if self.at_word("otherwise") {
            self.bump();
            return Ok(GuardExpr::Otherwise);
        }
        if *self.peek() == Tok::LParen {
            let save = self.pos;
            self.bump();
            let inner = self.attempt(|p| {
                let g = p.guard()?;
                p.expect(Tok::RParen, "`)`")?;
                Ok(g)
            });
            match inner {
                Some(g) => return Ok(g),
                None => self.pos = save,
            }
        }
        self.comparison()
    }

    fn comparison(&mut self) -> PResult<GuardExpr> {
        let lhs = self.scalar()?;
        let op = match self.peek() {
            Tok::EqEq => CmpOp::Eq,
            Tok::NotEq => CmpOp::Ne,
            Tok::Lt => CmpOp::Lt,
            Tok::Le => CmpOp::Le,
            Tok::Gt => CmpOp::Gt,
            Tok::Ge => CmpOp::Ge,
            _ => return self.unexpected("a comparison operator"),
        };
        self.bump();
        let rhs = self.scalar()?;
        Ok(GuardExpr::Compare { op, lhs, rhs })
    }
}

fn binary(op: BinOp, lhs: ScalarExpr, rhs: ScalarExpr) -> ScalarExpr {
    ScalarExpr::Binary {
        op,
        lhs: Box::new(lhs),
        rhs: Box::new(rhs),
    }
}
