//! Set-valued time derivatives of a candidate function along the inclusion.
//!
//! All three notions reduce to bilinear optimization of `pᵀ[q; 1]` over a
//! pair of boxes, which separates per axis and is solved in closed form.

use std::cmp::Ordering;
use std::fmt;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::interval::{Interval, IntervalBox};
use crate::reduction::{reduce_base, reduce_box};
use crate::setmap::{PiecewiseBoxMap, RegularFunctionSpec};

/// A real number or `-∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Extended {
    NegInf,
    Real(f64),
}

impl Extended {
    pub fn is_neg_inf(self) -> bool {
        matches!(self, Extended::NegInf)
    }

    pub fn real(self) -> Option<f64> {
        match self {
            Extended::NegInf => None,
            Extended::Real(v) => Some(v),
        }
    }

    /// `self - c`; `-∞` stays `-∞`.
    pub fn minus(self, c: f64) -> Extended {
        match self {
            Extended::NegInf => Extended::NegInf,
            Extended::Real(v) => Extended::Real(v - c),
        }
    }

    pub fn le(self, c: f64) -> bool {
        match self {
            Extended::NegInf => true,
            Extended::Real(v) => v <= c,
        }
    }

    /// Total order with `-∞` lowest and NaN highest.
    pub fn total_cmp(&self, other: &Extended) -> Ordering {
        match (self, other) {
            (Extended::NegInf, Extended::NegInf) => Ordering::Equal,
            (Extended::NegInf, _) => Ordering::Less,
            (_, Extended::NegInf) => Ordering::Greater,
            (Extended::Real(a), Extended::Real(b)) => match (a.is_nan(), b.is_nan()) {
                (true, true) => Ordering::Equal,
                (true, false) => Ordering::Greater,
                (false, true) => Ordering::Less,
                _ => a.partial_cmp(b).expect("not NaN"),
            },
        }
    }
}

impl From<f64> for Extended {
    fn from(v: f64) -> Self {
        Extended::Real(v)
    }
}

impl Serialize for Extended {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Extended::NegInf => s.serialize_str("-inf"),
            Extended::Real(v) => s.serialize_f64(*v),
        }
    }
}

impl fmt::Display for Extended {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Extended::NegInf => f.write_str("-inf"),
            Extended::Real(v) => write!(f, "{}", v + 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DerivativeKind {
    #[serde(rename = "PS-interval")]
    PsInterval,
    #[serde(rename = "BC-interval")]
    BcInterval,
    #[serde(rename = "U-generalized")]
    UGeneralized,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivativeValue {
    pub kind: DerivativeKind,
    /// The scalar derivative, or the maximum of the interval for the
    /// interval-valued kinds. `-∞` when the underlying set is empty.
    pub value: Extended,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interval: Option<Interval>,
    pub empty_reduction: bool,
}

fn check_pair(p: &IntervalBox, q: &IntervalBox) -> Result<()> {
    if p.dims() != q.dims() + 1 {
        return Err(Error::invalid(format!(
            "gradient box has {} axes, direction box has {}",
            p.dims(),
            q.dims()
        )));
    }
    if p.is_empty() || q.is_empty() {
        return Err(Error::invalid("bilinear optimization over an empty box"));
    }
    Ok(())
}

fn bounds(i: Interval) -> (f64, f64) {
    i.bounds().expect("checked non-empty")
}

/// `max_{p ∈ P, q ∈ Q} pᵀ[q; 1]`.
pub fn bilinear_maxmax(p: &IntervalBox, q: &IntervalBox) -> Result<f64> {
    check_pair(p, q)?;
    let n = q.dims();
    let mut acc = 0.0;
    for i in 0..n {
        let (a, b) = bounds(p.axis(i));
        let (c, d) = bounds(q.axis(i));
        acc += (a * c).max(a * d).max(b * c).max(b * d);
    }
    Ok(acc + bounds(p.axis(n)).1)
}

/// `min_{p ∈ P} max_{q ∈ Q} pᵀ[q; 1]`.
pub fn bilinear_minmax(p: &IntervalBox, q: &IntervalBox) -> Result<f64> {
    check_pair(p, q)?;
    let n = q.dims();
    let mut acc = 0.0;
    for i in 0..n {
        let (a, b) = bounds(p.axis(i));
        let (c, d) = bounds(q.axis(i));
        let g = |s: f64| (s * c).max(s * d);
        let mut best = g(a).min(g(b));
        if a <= 0.0 && 0.0 <= b {
            best = best.min(g(0.0));
        }
        acc += best;
    }
    Ok(acc + bounds(p.axis(n)).0)
}

/// Derivative of `v` given a precomputed reduced set.
pub fn from_reduced(
    grad_v: &IntervalBox,
    regular: bool,
    reduced: &IntervalBox,
) -> Result<Extended> {
    if reduced.is_empty() {
        return Ok(Extended::NegInf);
    }
    let v = if regular {
        bilinear_minmax(grad_v, reduced)?
    } else {
        bilinear_maxmax(grad_v, reduced)?
    };
    Ok(Extended::Real(v))
}

/// The `𝒰`-generalized derivative of `v` along `f` at `(x, t)`.
pub fn u_generalized_derivative(
    v: &RegularFunctionSpec,
    f: &PiecewiseBoxMap,
    us: &[RegularFunctionSpec],
    x: &[f64],
    t: f64,
) -> Result<DerivativeValue> {
    let base = f.eval(x, t)?;
    if base.is_empty() {
        return Err(Error::EmptyInclusion { x: x.to_vec(), t });
    }
    let reduced = reduce_base(&base, us, x, t)?.result;
    let value = from_reduced(&v.eval_gradient(x, t)?, v.regular, &reduced)?;
    Ok(DerivativeValue {
        kind: DerivativeKind::UGeneralized,
        value,
        interval: None,
        empty_reduction: reduced.is_empty(),
    })
}

/// `{p̂ᵀ[q; 1] : q ∈ G_V^F(x, t)}` with `p̂` the center of `∂V(x, t)`.
pub fn baseline_bc(
    v: &RegularFunctionSpec,
    f: &PiecewiseBoxMap,
    x: &[f64],
    t: f64,
) -> Result<DerivativeValue> {
    if !v.regular {
        return Err(Error::NotRegular(v.name.clone()));
    }
    let base = f.eval(x, t)?;
    if base.is_empty() {
        return Err(Error::EmptyInclusion { x: x.to_vec(), t });
    }
    let grad = v.eval_gradient(x, t)?;
    let g = reduce_box(&base, &grad)?.result;
    if g.is_empty() {
        return Ok(DerivativeValue {
            kind: DerivativeKind::BcInterval,
            value: Extended::NegInf,
            interval: Some(Interval::EMPTY),
            empty_reduction: true,
        });
    }
    let n = base.dims();
    let p_hat = grad.center().expect("gradient is non-empty");
    let (mut lo, mut hi) = (0.0, 0.0);
    for (i, &p) in p_hat.iter().enumerate().take(n) {
        let (c, d) = bounds(g.axis(i));
        lo += (p * c).min(p * d);
        hi += (p * c).max(p * d);
    }
    lo += p_hat[n];
    hi += p_hat[n];
    Ok(DerivativeValue {
        kind: DerivativeKind::BcInterval,
        value: Extended::Real(hi),
        interval: Some(Interval::new(lo, hi)?),
        empty_reduction: false,
    })
}

/// `⋂_{p ∈ ∂V} pᵀ[F; 1]` as `[sup_p m(p), inf_p M(p)]`.
pub fn baseline_ps(
    v: &RegularFunctionSpec,
    f: &PiecewiseBoxMap,
    x: &[f64],
    t: f64,
) -> Result<DerivativeValue> {
    let base = f.eval(x, t)?;
    if base.is_empty() {
        return Err(Error::EmptyInclusion { x: x.to_vec(), t });
    }
    let grad = v.eval_gradient(x, t)?;
    let interval = ps_interval(&grad, &base)?;
    Ok(DerivativeValue {
        kind: DerivativeKind::PsInterval,
        value: interval.hi().map_or(Extended::NegInf, Extended::Real),
        interval: Some(interval),
        empty_reduction: interval.is_empty(),
    })
}

pub fn ps_interval(p: &IntervalBox, q: &IntervalBox) -> Result<Interval> {
    check_pair(p, q)?;
    let n = q.dims();
    let (mut sup_m, mut inf_m) = (0.0, 0.0);
    for i in 0..n {
        let (a, b) = bounds(p.axis(i));
        let (c, d) = bounds(q.axis(i));
        let lower = |s: f64| (s * c).min(s * d);
        let upper = |s: f64| (s * c).max(s * d);
        let mut lo_best = lower(a).max(lower(b));
        let mut hi_best = upper(a).min(upper(b));
        if a <= 0.0 && 0.0 <= b {
            lo_best = lo_best.max(lower(0.0));
            hi_best = hi_best.min(upper(0.0));
        }
        sup_m += lo_best;
        inf_m += hi_best;
    }
    let (ta, tb) = bounds(p.axis(n));
    sup_m += tb;
    inf_m += ta;
    if sup_m > inf_m {
        Ok(Interval::EMPTY)
    } else {
        Ok(Interval::new(sup_m, inf_m)?)
    }
}
