use std::fmt;
use std::sync::Arc;

use super::EvalError;
use crate::interval::Interval;

/// Denominators smaller than this in magnitude are treated as zero.
pub const MIN_DIVISOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Abs,
    Max,
    Min,
    Sgn,
    /// `0` on the open interval `(-1, 1)`, `sgn` elsewhere.
    Sgn1,
    Exp,
    Sin,
    Cos,
}

impl Func {
    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "abs" => Func::Abs,
            "max" => Func::Max,
            "min" => Func::Min,
            "sgn" => Func::Sgn,
            "sgn1" => Func::Sgn1,
            "exp" => Func::Exp,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Abs => "abs",
            Func::Max => "max",
            Func::Min => "min",
            Func::Sgn => "sgn",
            Func::Sgn1 => "sgn1",
            Func::Exp => "exp",
            Func::Sin => "sin",
            Func::Cos => "cos",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Max | Func::Min => 2,
            _ => 1,
        }
    }

    fn apply(self, args: &[f64]) -> f64 {
        match self {
            Func::Abs => args[0].abs(),
            Func::Max => args[0].max(args[1]),
            Func::Min => args[0].min(args[1]),
            Func::Sgn => sgn(args[0]),
            Func::Sgn1 => sgn1(args[0]),
            Func::Exp => args[0].exp(),
            Func::Sin => args[0].sin(),
            Func::Cos => args[0].cos(),
        }
    }
}

/// Sign with `sgn(0) = 0`.
pub fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn sgn1(v: f64) -> f64 {
    if -1.0 < v && v < 1.0 {
        0.0
    } else {
        sgn(v)
    }
}

/// Variable bindings for evaluation: state `x`, time `t` and the auxiliary
/// vector `z` used by Matrosov auxiliary functions.
#[derive(Debug, Clone, Copy)]
pub struct Env<'a> {
    pub x: &'a [f64],
    pub t: f64,
    pub z: &'a [f64],
}

impl<'a> Env<'a> {
    pub fn new(x: &'a [f64], t: f64) -> Self {
        Env { x, t, z: &[] }
    }

    pub fn with_z(x: &'a [f64], t: f64, z: &'a [f64]) -> Self {
        Env { x, t, z }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScalarExpr {
    Num(f64),
    /// `x{i+1}`
    State(usize),
    /// `z{i+1}`
    Aux(usize),
    Time,
    /// A named time-varying parameter, inlined at parse time.
    Param {
        name: String,
        expr: Arc<ScalarExpr>,
    },
    Neg(Box<ScalarExpr>),
    Binary {
        op: BinOp,
        lhs: Box<ScalarExpr>,
        rhs: Box<ScalarExpr>,
    },
    Call {
        func: Func,
        args: Vec<ScalarExpr>,
    },
}

impl ScalarExpr {
    pub fn eval(&self, env: &Env<'_>) -> Result<f64, EvalError> {
        match self {
            ScalarExpr::Num(v) => Ok(*v),
            ScalarExpr::State(i) => env
                .x
                .get(*i)
                .copied()
                .ok_or_else(|| EvalError::MissingVariable(format!("x{}", i + 1))),
            ScalarExpr::Aux(i) => env
                .z
                .get(*i)
                .copied()
                .ok_or_else(|| EvalError::MissingVariable(format!("z{}", i + 1))),
            ScalarExpr::Time => Ok(env.t),
            ScalarExpr::Param { expr, .. } => expr.eval(env),
            ScalarExpr::Neg(e) => Ok(-e.eval(env)?),
            ScalarExpr::Binary { op, lhs, rhs } => {
                let a = lhs.eval(env)?;
                let b = rhs.eval(env)?;
                match op {
                    BinOp::Add => Ok(a + b),
                    BinOp::Sub => Ok(a - b),
                    BinOp::Mul => Ok(a * b),
                    BinOp::Div => {
                        if b.abs() < MIN_DIVISOR {
                            Err(EvalError::DivisionByZero)
                        } else {
                            Ok(a / b)
                        }
                    }
                }
            }
            ScalarExpr::Call { func, args } => {
                let mut vals = [0.0; 2];
                for (slot, a) in vals.iter_mut().zip(args) {
                    *slot = a.eval(env)?;
                }
                Ok(func.apply(&vals[..args.len()]))
            }
        }
    }

    pub fn depends_on_time(&self) -> bool {
        match self {
            ScalarExpr::Time => true,
            ScalarExpr::Num(_) | ScalarExpr::State(_) | ScalarExpr::Aux(_) => false,
            ScalarExpr::Param { expr, .. } => expr.depends_on_time(),
            ScalarExpr::Neg(e) => e.depends_on_time(),
            ScalarExpr::Binary { lhs, rhs, .. } => lhs.depends_on_time() || rhs.depends_on_time(),
            ScalarExpr::Call { args, .. } => args.iter().any(ScalarExpr::depends_on_time),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            ScalarExpr::Binary { op, .. } => op.precedence(),
            ScalarExpr::Neg(_) => 3,
            ScalarExpr::Num(v) if v.is_sign_negative() => 0,
            _ => 4,
        }
    }

    fn write_prec(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        let paren = self.precedence() < min_prec;
        if paren {
            write!(f, "(")?;
        }
        match self {
            ScalarExpr::Num(v) => write_number(f, *v)?,
            ScalarExpr::State(i) => write!(f, "x{}", i + 1)?,
            ScalarExpr::Aux(i) => write!(f, "z{}", i + 1)?,
            ScalarExpr::Time => write!(f, "t")?,
            ScalarExpr::Param { name, .. } => write!(f, "{}", name)?,
            ScalarExpr::Neg(e) => {
                write!(f, "-")?;
                e.write_prec(f, 4)?;
            }
            ScalarExpr::Binary { op, lhs, rhs } => {
                lhs.write_prec(f, op.precedence())?;
                write!(f, " {} ", op.symbol())?;
                rhs.write_prec(f, op.precedence() + 1)?;
            }
            ScalarExpr::Call { func, args } => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    a.write_prec(f, 0)?;
                }
                write!(f, ")")?;
            }
        }
        if paren {
            write!(f, ")")?;
        }
        Ok(())
    }
}

fn write_number(f: &mut fmt::Formatter<'_>, v: f64) -> fmt::Result {
    let a = v.abs();
    if a != 0.0 && !(1e-4..1e15).contains(&a) {
        write!(f, "{:e}", v)
    } else {
        write!(f, "{}", v)
    }
}

impl fmt::Display for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_prec(f, 0)
    }
}

/// Interval-valued expression. Evaluates to a single closed interval.
#[derive(Debug, Clone, PartialEq)]
pub enum SetExpr {
    Singleton(ScalarExpr),
    /// Interval literal `[lo, hi]`; `lo > hi` at evaluation time is an error.
    Range(ScalarExpr, ScalarExpr),
    /// `hull(a, b)`, endpoints in either order.
    Hull(ScalarExpr, ScalarExpr),
    Sum(Box<SetExpr>, Box<SetExpr>),
    Scale(ScalarExpr, Box<SetExpr>),
}

impl SetExpr {
    pub fn eval(&self, env: &Env<'_>) -> Result<Interval, EvalError> {
        match self {
            SetExpr::Singleton(e) => Ok(Interval::point(e.eval(env)?)),
            SetExpr::Range(lo, hi) => {
                let (lo, hi) = (lo.eval(env)?, hi.eval(env)?);
                Interval::new(lo, hi).map_err(|_| EvalError::InvertedInterval { lo, hi })
            }
            SetExpr::Hull(a, b) => Ok(Interval::hull(a.eval(env)?, b.eval(env)?)),
            SetExpr::Sum(a, b) => Ok(a.eval(env)?.add(&b.eval(env)?)),
            SetExpr::Scale(c, s) => Ok(s.eval(env)?.scale(c.eval(env)?)),
        }
    }

    pub fn depends_on_time(&self) -> bool {
        match self {
            SetExpr::Singleton(e) => e.depends_on_time(),
            SetExpr::Range(a, b) | SetExpr::Hull(a, b) => {
                a.depends_on_time() || b.depends_on_time()
            }
            SetExpr::Sum(a, b) => a.depends_on_time() || b.depends_on_time(),
            SetExpr::Scale(c, s) => c.depends_on_time() || s.depends_on_time(),
        }
    }

    fn write_atom(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SetExpr::Sum(..) | SetExpr::Scale(..) => write!(f, "({})", self),
            _ => write!(f, "{}", self),
        }
    }
}

impl fmt::Display for SetExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SetExpr::Singleton(e) => write!(f, "{{{}}}", e),
            SetExpr::Range(a, b) => write!(f, "[{}, {}]", a, b),
            SetExpr::Hull(a, b) => write!(f, "hull({}, {})", a, b),
            SetExpr::Sum(a, b) => {
                write!(f, "{} + ", a)?;
                match **b {
                    SetExpr::Sum(..) => write!(f, "({})", b),
                    _ => write!(f, "{}", b),
                }
            }
            SetExpr::Scale(c, s) => {
                c.write_prec(f, 2)?;
                write!(f, " * ")?;
                s.write_atom(f)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    #[allow(clippy::float_cmp)]
    fn holds(self, a: f64, b: f64) -> bool {
        match self {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }
    }
}

/// Boolean guard selecting a piece of a piecewise map. Comparisons are
/// exact: `abs(x1) == 1` is false at `x1 = 1 + 1e-12`.
#[derive(Debug, Clone, PartialEq)]
pub enum GuardExpr {
    /// Catch-all final piece.
    Otherwise,
    Compare {
        op: CmpOp,
        lhs: ScalarExpr,
        rhs: ScalarExpr,
    },
    Not(Box<GuardExpr>),
    And(Box<GuardExpr>, Box<GuardExpr>),
    Or(Box<GuardExpr>, Box<GuardExpr>),
}

impl GuardExpr {
    pub fn eval(&self, env: &Env<'_>) -> Result<bool, EvalError> {
        Ok(match self {
            GuardExpr::Otherwise => true,
            GuardExpr::Compare { op, lhs, rhs } => op.holds(lhs.eval(env)?, rhs.eval(env)?),
            GuardExpr::Not(g) => !g.eval(env)?,
            // both sides are evaluated so that errors surface deterministically
            GuardExpr::And(a, b) => {
                let (a, b) = (a.eval(env)?, b.eval(env)?);
                a && b
            }
            GuardExpr::Or(a, b) => {
                let (a, b) = (a.eval(env)?, b.eval(env)?);
                a || b
            }
        })
    }

    pub fn depends_on_time(&self) -> bool {
        match self {
            GuardExpr::Otherwise => false,
            GuardExpr::Compare { lhs, rhs, .. } => lhs.depends_on_time() || rhs.depends_on_time(),
            GuardExpr::Not(g) => g.depends_on_time(),
            GuardExpr::And(a, b) | GuardExpr::Or(a, b) => {
                a.depends_on_time() || b.depends_on_time()
            }
        }
    }

    fn level(&self) -> u8 {
        match self {
            GuardExpr::Or(..) => 1,
            GuardExpr::And(..) => 2,
            _ => 3,
        }
    }

    fn write_level(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        if self.level() < min {
            write!(f, "(")?;
            self.write_level(f, 0)?;
            return write!(f, ")");
        }
        match self {
            GuardExpr::Otherwise => write!(f, "otherwise"),
            GuardExpr::Compare { op, lhs, rhs } => write!(f, "{} {} {}", lhs, op.symbol(), rhs),
            GuardExpr::Not(g) => {
                write!(f, "not ")?;
                match **g {
                    GuardExpr::Not(_) | GuardExpr::Otherwise => g.write_level(f, 3),
                    _ => {
                        write!(f, "(")?;
                        g.write_level(f, 0)?;
                        write!(f, ")")
                    }
                }
            }
            GuardExpr::And(a, b) => {
                a.write_level(f, 2)?;
                write!(f, " and ")?;
                b.write_level(f, 3)
            }
            GuardExpr::Or(a, b) => {
                a.write_level(f, 1)?;
                write!(f, " or ")?;
                b.write_level(f, 2)
            }
        }
    }
}

impl fmt::Display for GuardExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_level(f, 0)
    }
}
