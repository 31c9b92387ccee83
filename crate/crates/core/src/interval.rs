//! Closed intervals and axis-aligned boxes.
//!
//! Every set value in the crate (velocity sets, Clarke gradients, reduced
//! inclusions) is an [`IntervalBox`]. Emptiness is a distinguished state
//! rather than an inverted pair of endpoints, so no operation ever has to
//! reason about `lo > hi`.
//!
//! Only boxes are supported. General polytopes (V-representation),
//! zonotopes or ellipsoids would slot in behind the same operations
//! (`minkowski_sum`, `direction_axes`, intersection with a linear subspace),
//! but the reduction would then need an LP instead of the per-axis pinch.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntervalError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("operation requires a non-empty box")]
    EmptyBox,
    #[error("invalid interval bounds [{lo}, {hi}]")]
    InvalidBounds { lo: f64, hi: f64 },
    #[error("invalid annulus: inner radius {inner}, outer radius {outer}")]
    InvalidAnnulus { inner: f64, outer: f64 },
}

/// A closed interval `[lo, hi]` or the empty set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "Option<[f64; 2]>", try_from = "Option<[f64; 2]>")]
pub struct Interval(Option<(f64, f64)>);

impl From<Interval> for Option<[f64; 2]> {
    fn from(i: Interval) -> Self {
        i.0.map(|(lo, hi)| [lo, hi])
    }
}

impl TryFrom<Option<[f64; 2]>> for Interval {
    type Error = IntervalError;
    fn try_from(v: Option<[f64; 2]>) -> Result<Self, Self::Error> {
        match v {
            None => Ok(Interval::EMPTY),
            Some([lo, hi]) => Interval::new(lo, hi),
        }
    }
}

impl Interval {
    pub const EMPTY: Interval = Interval(None);

    pub fn new(lo: f64, hi: f64) -> Result<Self, IntervalError> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(IntervalError::InvalidBounds { lo, hi });
        }
        Ok(Interval(Some((lo, hi))))
    }

    pub fn point(v: f64) -> Self {
        Interval(Some((v, v)))
    }

    /// Convex hull of two reals, `co{a, b}`.
    pub fn hull(a: f64, b: f64) -> Self {
        Interval(Some((a.min(b), a.max(b))))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_none()
    }

    pub fn bounds(&self) -> Option<(f64, f64)> {
        self.0
    }

    pub fn lo(&self) -> Option<f64> {
        self.0.map(|(lo, _)| lo)
    }

    pub fn hi(&self) -> Option<f64> {
        self.0.map(|(_, hi)| hi)
    }

    /// Exact test `lo == hi`.
    pub fn is_degenerate(&self) -> bool {
        matches!(self.0, Some((lo, hi)) if lo == hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        matches!(self.0, Some((lo, hi)) if lo <= v && v <= hi)
    }

    pub fn add(&self, other: &Interval) -> Interval {
        match (self.0, other.0) {
            (Some((a, b)), Some((c, d))) => Interval(Some((a + c, b + d))),
            _ => Interval::EMPTY,
        }
    }

    pub fn scale(&self, c: f64) -> Interval {
        match self.0 {
            Some((lo, hi)) => Interval::hull(c * lo, c * hi),
            None => Interval::EMPTY,
        }
    }

    pub fn intersect(&self, other: &Interval) -> Interval {
        match (self.0, other.0) {
            (Some((a, b)), Some((c, d))) => {
                let lo = a.max(c);
                let hi = b.min(d);
                if lo <= hi {
                    Interval(Some((lo, hi)))
                } else {
                    Interval::EMPTY
                }
            }
            _ => Interval::EMPTY,
        }
    }

    /// Smallest interval containing both operands.
    pub fn join(&self, other: &Interval) -> Interval {
        match (self.0, other.0) {
            (Some((a, b)), Some((c, d))) => Interval(Some((a.min(c), b.max(d)))),
            (Some(_), None) => *self,
            (None, _) => *other,
        }
    }

    /// `{0}` if the interval contains zero, empty otherwise.
    pub fn pinch_to_zero(&self) -> Interval {
        if self.contains(0.0) {
            Interval::point(0.0)
        } else {
            Interval::EMPTY
        }
    }

    pub fn is_subset_of(&self, other: &Interval) -> bool {
        match (self.0, other.0) {
            (None, _) => true,
            (Some(_), None) => false,
            (Some((a, b)), Some((c, d))) => c <= a && b <= d,
        }
    }

    pub fn midpoint(&self) -> Option<f64> {
        self.0.map(|(lo, hi)| 0.5 * (lo + hi))
    }

    pub fn width(&self) -> Option<f64> {
        self.0.map(|(lo, hi)| hi - lo)
    }

    /// Distance from `v` to the interval; infinite when empty.
    pub fn distance_to(&self, v: f64) -> f64 {
        match self.0 {
            None => f64::INFINITY,
            Some((lo, hi)) => {
                if v < lo {
                    lo - v
                } else if v > hi {
                    v - hi
                } else {
                    0.0
                }
            }
        }
    }

    pub fn inflate(&self, eps: f64) -> Interval {
        match self.0 {
            Some((lo, hi)) => Interval(Some((lo - eps, hi + eps))),
            None => Interval::EMPTY,
        }
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            None => write!(f, "∅"),
            Some((lo, hi)) if lo == hi => write!(f, "{{{}}}", lo + 0.0),
            Some((lo, hi)) => write!(f, "[{}, {}]", lo + 0.0, hi + 0.0),
        }
    }
}

/// Shortest round-trip decimal form, with `-0` printed as `0`.
pub fn real_str(v: f64) -> String {
    (v + 0.0).to_string()
}

/// Product of `dims` closed intervals. A box with any empty axis is the
/// empty box; the constructor canonicalises so that every axis is then
/// empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalBox {
    axes: Vec<Interval>,
}

impl IntervalBox {
    pub fn new(axes: Vec<Interval>) -> Self {
        if axes.iter().any(Interval::is_empty) {
            IntervalBox::empty(axes.len())
        } else {
            IntervalBox { axes }
        }
    }

    pub fn empty(dims: usize) -> Self {
        IntervalBox {
            axes: vec![Interval::EMPTY; dims],
        }
    }

    pub fn from_bounds(lo: &[f64], hi: &[f64]) -> Result<Self, IntervalError> {
        check_dims(lo.len(), hi.len())?;
        let axes = lo
            .iter()
            .zip(hi)
            .map(|(&l, &h)| Interval::new(l, h))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(IntervalBox { axes })
    }

    pub fn singleton(p: &[f64]) -> Self {
        IntervalBox {
            axes: p.iter().map(|&v| Interval::point(v)).collect(),
        }
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Interval] {
        &self.axes
    }

    pub fn axis(&self, i: usize) -> Interval {
        self.axes[i]
    }

    pub fn is_empty(&self) -> bool {
        self.axes.first().is_some_and(Interval::is_empty)
    }

    pub fn is_singleton(&self) -> bool {
        !self.is_empty() && self.axes.iter().all(Interval::is_degenerate)
    }

    pub fn lower(&self) -> Option<Vec<f64>> {
        self.axes.iter().map(Interval::lo).collect()
    }

    pub fn upper(&self) -> Option<Vec<f64>> {
        self.axes.iter().map(Interval::hi).collect()
    }

    pub fn center(&self) -> Option<Vec<f64>> {
        self.axes.iter().map(Interval::midpoint).collect()
    }

    /// Componentwise interval sum `A + B`.
    pub fn minkowski_sum(&self, other: &IntervalBox) -> Result<IntervalBox, IntervalError> {
        check_dims(self.dims(), other.dims())?;
        Ok(IntervalBox::new(
            self.axes
                .iter()
                .zip(&other.axes)
                .map(|(a, b)| a.add(b))
                .collect(),
        ))
    }

    pub fn scale(&self, c: f64) -> IntervalBox {
        IntervalBox::new(self.axes.iter().map(|a| a.scale(c)).collect())
    }

    pub fn contains(&self, p: &[f64]) -> Result<bool, IntervalError> {
        check_dims(self.dims(), p.len())?;
        Ok(!self.is_empty() && self.axes.iter().zip(p).all(|(a, &v)| a.contains(v)))
    }

    /// Indices of the nondegenerate axes. These span the affine hull of
    /// the box, so `p ↦ pᵀv` is constant over the box exactly when `v` is
    /// orthogonal to every returned axis.
    pub fn direction_axes(&self) -> Result<Vec<usize>, IntervalError> {
        if self.is_empty() {
            return Err(IntervalError::EmptyBox);
        }
        Ok(self
            .axes
            .iter()
            .enumerate()
            .filter(|(_, a)| !a.is_degenerate())
            .map(|(i, _)| i)
            .collect())
    }

    pub fn intersect(&self, other: &IntervalBox) -> Result<IntervalBox, IntervalError> {
        check_dims(self.dims(), other.dims())?;
        Ok(IntervalBox::new(
            self.axes
                .iter()
                .zip(&other.axes)
                .map(|(a, b)| a.intersect(b))
                .collect(),
        ))
    }

    /// Hull of the union.
    pub fn join(&self, other: &IntervalBox) -> Result<IntervalBox, IntervalError> {
        check_dims(self.dims(), other.dims())?;
        if self.is_empty() {
            return Ok(other.clone());
        }
        if other.is_empty() {
            return Ok(self.clone());
        }
        Ok(IntervalBox::new(
            self.axes
                .iter()
                .zip(&other.axes)
                .map(|(a, b)| a.join(b))
                .collect(),
        ))
    }

    pub fn is_subset_of(&self, other: &IntervalBox) -> Result<bool, IntervalError> {
        check_dims(self.dims(), other.dims())?;
        if self.is_empty() {
            return Ok(true);
        }
        Ok(self
            .axes
            .iter()
            .zip(&other.axes)
            .all(|(a, b)| a.is_subset_of(b)))
    }

    /// Replace axis `i` with `{0}` if it contains zero, or empty the box.
    pub fn pinch_axis(&self, i: usize) -> IntervalBox {
        let mut axes = self.axes.clone();
        axes[i] = axes[i].pinch_to_zero();
        IntervalBox::new(axes)
    }

    /// Cartesian product `self × other`.
    pub fn product(&self, other: &IntervalBox) -> IntervalBox {
        let mut axes = self.axes.clone();
        axes.extend_from_slice(&other.axes);
        IntervalBox::new(axes)
    }

    /// The first `k` axes.
    pub fn truncate(&self, k: usize) -> IntervalBox {
        IntervalBox::new(self.axes[..k].to_vec())
    }

    pub fn inflate(&self, eps: f64) -> IntervalBox {
        IntervalBox::new(self.axes.iter().map(|a| a.inflate(eps)).collect())
    }

    /// Euclidean distance from `p` to the box; infinite when empty.
    pub fn distance_to(&self, p: &[f64]) -> Result<f64, IntervalError> {
        check_dims(self.dims(), p.len())?;
        if self.is_empty() {
            return Ok(f64::INFINITY);
        }
        Ok(self
            .axes
            .iter()
            .zip(p)
            .map(|(a, &v)| a.distance_to(v).powi(2))
            .sum::<f64>()
            .sqrt())
    }

    /// Hausdorff distance between boxes under the max-norm; zero when both
    /// are empty, infinite when exactly one is.
    pub fn hausdorff(&self, other: &IntervalBox) -> Result<f64, IntervalError> {
        check_dims(self.dims(), other.dims())?;
        match (self.is_empty(), other.is_empty()) {
            (true, true) => return Ok(0.0),
            (true, false) | (false, true) => return Ok(f64::INFINITY),
            _ => {}
        }
        Ok(self
            .axes
            .iter()
            .zip(&other.axes)
            .map(|(a, b)| {
                let (al, ah) = a.bounds().unwrap();
                let (bl, bh) = b.bounds().unwrap();
                (al - bl).abs().max((ah - bh).abs())
            })
            .fold(0.0, f64::max))
    }

    /// All `2^k` vertices (with duplicates collapsed on degenerate axes).
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        if self.is_empty() {
            return Vec::new();
        }
        let mut out = vec![Vec::with_capacity(self.dims())];
        for a in &self.axes {
            let (lo, hi) = a.bounds().unwrap();
            let ends: &[f64] = if lo == hi { &[lo][..] } else { &[lo, hi][..] };
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    ends.iter().map(move |&e| {
                        let mut v = prefix.clone();
                        v.push(e);
                        v
                    })
                })
                .collect();
        }
        out
    }
}

impl fmt::Display for IntervalBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return write!(f, "∅");
        }
        for (i, a) in self.axes.iter().enumerate() {
            if i > 0 {
                write!(f, " × ")?;
            }
            write!(f, "{}", a)?;
        }
        Ok(())
    }
}

fn check_dims(left: usize, right: usize) -> Result<(), IntervalError> {
    if left != right {
        return Err(IntervalError::DimensionMismatch { left, right });
    }
    Ok(())
}

/// Closed Euclidean annulus `{x : inner ≤ ‖x‖₂ ≤ outer}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annulus {
    inner: f64,
    outer: f64,
}

impl Annulus {
    pub fn new(inner: f64, outer: f64) -> Result<Self, IntervalError> {
        if !(inner >= 0.0) || !(outer > inner) || !outer.is_finite() {
            return Err(IntervalError::InvalidAnnulus { inner, outer });
        }
        Ok(Annulus { inner, outer })
    }

    pub fn inner(&self) -> f64 {
        self.inner
    }

    pub fn outer(&self) -> f64 {
        self.outer
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let r = norm2(x);
        self.inner <= r && r <= self.outer
    }
}

pub(crate) fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}
