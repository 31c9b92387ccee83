//! Forward Euler integration of selections of `F`, plus post-hoc checks of
//! the trajectory against `F̃_𝒰`, a Lyapunov bound and tail convergence.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Env, ScalarExpr};
use crate::interval::{norm2, real_str, IntervalBox};
use crate::reduction::reduce_base;
use crate::system::SystemDef;

pub const DEFAULT_H: f64 = 1e-3;
pub const MEMBERSHIP_BUDGET: f64 = 0.01;
pub const DEFAULT_MEMBERSHIP_TOL: f64 = 1e-2;
pub const TAIL_THRESHOLD: f64 = 1e-3;
/// Slack per unit time in the descent check, as a multiple of `h`.
pub const DESCENT_SLACK: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SelectionStrategy {
    /// Vertex of `F̃` (or `F` when `F̃` is empty) minimizing `p̂ᵀq`, with
    /// `p̂` the center of `∂V`.
    ReducedDescent,
    /// Center of `F`.
    Midpoint,
    /// Uniformly random vertex of `F`.
    RandomExtreme { seed: u64 },
}

impl SelectionStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            SelectionStrategy::ReducedDescent => "reduced-descent",
            SelectionStrategy::Midpoint => "midpoint",
            SelectionStrategy::RandomExtreme { .. } => "random-extreme",
        }
    }

    /// Parse a strategy name; `seed` only matters for random-extreme.
    pub fn from_name(name: &str, seed: u64) -> Result<Self> {
        match name {
            "reduced-descent" => Ok(SelectionStrategy::ReducedDescent),
            "midpoint" => Ok(SelectionStrategy::Midpoint),
            "random-extreme" => Ok(SelectionStrategy::RandomExtreme { seed }),
            other => Err(Error::invalid(format!(
                "unknown strategy `{other}` (expected reduced-descent, midpoint or random-extreme)"
            ))),
        }
    }
}

impl FromStr for SelectionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SelectionStrategy::from_name(s, 0)
    }
}

impl fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
    /// Selection used for the step leaving this sample.
    pub q: Vec<f64>,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub t0: f64,
    pub h: f64,
    pub horizon: f64,
    pub strategy: SelectionStrategy,
    pub samples: Vec<Sample>,
    /// The next step would have left the domain.
    pub exited: bool,
    pub final_norm: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        &self.samples.last().expect("trajectory has samples").x
    }

    pub fn csv_header(&self) -> Vec<String> {
        let n = self.samples.first().map_or(0, |s| s.x.len());
        let mut h = vec!["t".to_string()];
        h.extend((1..=n).map(|i| format!("x{i}")));
        h.extend((1..=n).map(|i| format!("q{i}")));
        h.push("V".into());
        h
    }

    /// Columns `t, x1..xn, q1..qn, V`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::invalid(format!("writing CSV: {e}"));
        w.write_record(self.csv_header()).map_err(io)?;
        for s in &self.samples {
            let mut rec = vec![real_str(s.t)];
            rec.extend(s.x.iter().map(|&v| real_str(v)));
            rec.extend(s.q.iter().map(|&v| real_str(v)));
            rec.push(real_str(s.v));
            w.write_record(&rec).map_err(io)?;
        }
        w.flush()
            .map_err(|e| Error::invalid(format!("writing CSV: {e}")))?;
        Ok(())
    }
}

struct Selector {
    strategy: SelectionStrategy,
    rng: Option<ChaCha8Rng>,
}

impl Selector {
    fn new(strategy: SelectionStrategy) -> Self {
        let rng = match strategy {
            SelectionStrategy::RandomExtreme { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            _ => None,
        };
        Selector { strategy, rng }
    }

    fn select(&mut self, sys: &SystemDef, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let f = sys.f.eval(x, t)?;
        if f.is_empty() {
            return Err(Error::EmptyInclusion { x: x.to_vec(), t });
        }
        Ok(match self.strategy {
            SelectionStrategy::Midpoint => f.center().expect("non-empty box"),
            SelectionStrategy::RandomExtreme { .. } => {
                let rng = self.rng.as_mut().expect("seeded strategy");
                f.axes()
                    .iter()
                    .map(|a| {
                        let (lo, hi) = a.bounds().expect("non-empty box");
                        if rng.random_bool(0.5) {
                            hi
                        } else {
                            lo
                        }
                    })
                    .collect()
            }
            SelectionStrategy::ReducedDescent => {
                let reduced = reduce_base(&f, &sys.u, x, t)?.result;
                let target = if reduced.is_empty() { &f } else { &reduced };
                let p = sys
                    .v
                    .eval_gradient(x, t)?
                    .center()
                    .expect("gradient box is non-empty");
                target
                    .axes()
                    .iter()
                    .zip(&p)
                    .map(|(a, &pi)| {
                        let (lo, hi) = a.bounds().expect("non-empty box");
                        if pi > 0.0 {
                            lo
                        } else if pi < 0.0 {
                            hi
                        } else {
                            0.5 * (lo + hi)
                        }
                    })
                    .collect()
            }
        })
    }
}

/// `N = round((T - t0) / h)` explicit Euler steps `x ← x + h q`, stopping
/// before the first step that leaves the domain.
pub fn integrate(
    sys: &SystemDef,
    x0: &[f64],
    t0: f64,
    h: f64,
    horizon: f64,
    strategy: SelectionStrategy,
) -> Result<Trajectory> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::invalid(format!("step h must be positive, got {h}")));
    }
    if !(horizon > t0) {
        return Err(Error::invalid(format!(
            "horizon T = {horizon} must exceed t0 = {t0}"
        )));
    }
    if x0.len() != sys.n {
        return Err(Error::invalid(format!(
            "x0 has {} coordinates, n = {}",
            x0.len(),
            sys.n
        )));
    }
    if !sys.domain.contains(x0)? {
        return Err(Error::invalid(format!(
            "x0 = {x0:?} lies outside the domain"
        )));
    }
    let steps = ((horizon - t0) / h).round() as usize;
    let mut selector = Selector::new(strategy);
    let mut samples = Vec::with_capacity(steps + 1);
    let mut x = x0.to_vec();
    let mut exited = false;
    for k in 0..=steps {
        let t = t0 + k as f64 * h;
        let q = selector.select(sys, &x, t)?;
        let v = sys.v.eval(&x, t)?;
        let next: Vec<f64> = x.iter().zip(&q).map(|(xi, qi)| xi + h * qi).collect();
        samples.push(Sample {
            t,
            x: std::mem::replace(&mut x, next),
            q,
            v,
        });
        if k < steps && !sys.domain.contains(&x)? {
            exited = true;
            break;
        }
    }
    let final_norm = norm2(&samples.last().expect("at least one sample").x);
    Ok(Trajectory {
        t0,
        h,
        horizon,
        strategy,
        samples,
        exited,
        final_norm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepViolation {
    pub step: usize,
    pub t: f64,
    pub x: Vec<f64>,
    pub quotient: Vec<f64>,
    /// `None` when `F̃` is empty.
    pub distance: Option<f64>,
    pub allowed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MembershipReport {
    pub steps: usize,
    pub tol: f64,
    pub violations: usize,
    pub fraction: f64,
    pub budget: f64,
    pub passed: bool,
    pub max_finite_distance: f64,
    pub first_violations: Vec<StepViolation>,
}

/// Distance from each difference quotient to `F̃_𝒰(x_k, t_k)`. The
/// allowance at step `k` is `tol · max(1, max |F(x_k, t_k)|)`.
pub fn check_reduction_membership(
    traj: &Trajectory,
    sys: &SystemDef,
    tol: f64,
) -> Result<MembershipReport> {
    let steps = traj.samples.len().saturating_sub(1);
    let mut violations = 0;
    let mut max_finite = 0.0f64;
    let mut first = Vec::new();
    for (k, pair) in traj.samples.windows(2).enumerate() {
        let (a, b) = (&pair[0], &pair[1]);
        let quotient: Vec<f64> =
            a.x.iter()
                .zip(&b.x)
                .map(|(p, q)| (q - p) / traj.h)
                .collect();
        let f = sys.f.eval(&a.x, a.t)?;
        let reduced = reduce_base(&f, &sys.u, &a.x, a.t)?.result;
        let scale = box_scale(&f).max(1.0);
        let allowed = tol * scale;
        let distance = if reduced.is_empty() {
            None
        } else {
            Some(reduced.distance_to(&quotient)?)
        };
        if let Some(d) = distance {
            max_finite = max_finite.max(d);
        }
        if distance.is_none_or(|d| d > allowed) {
            violations += 1;
            if first.len() < 16 {
                first.push(StepViolation {
                    step: k,
                    t: a.t,
                    x: a.x.clone(),
                    quotient,
                    distance,
                    allowed,
                });
            }
        }
    }
    let fraction = if steps == 0 {
        0.0
    } else {
        violations as f64 / steps as f64
    };
    Ok(MembershipReport {
        steps,
        tol,
        violations,
        fraction,
        budget: MEMBERSHIP_BUDGET,
        passed: fraction <= MEMBERSHIP_BUDGET,
        max_finite_distance: max_finite,
        first_violations: first,
    })
}

fn box_scale(b: &IntervalBox) -> f64 {
    b.axes()
        .iter()
        .filter_map(|a| a.bounds())
        .map(|(lo, hi)| lo.abs().max(hi.abs()))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DescentReport {
    pub steps: usize,
    pub slack: f64,
    /// Steps with `ΔV > -h W(x_k) + h slack`.
    pub bound_violations: usize,
    /// Steps with `ΔV > h slack`.
    pub monotone_violations: usize,
    /// `max_k (ΔV / h + W(x_k))`.
    pub max_gap: f64,
    pub passed: bool,
}

/// Check `V(x_{k+1}) - V(x_k) ≤ -h W(x_k) + h·10h` at every step, and
/// nonincrease of `V` up to the same slack.
pub fn check_lyapunov_descent(traj: &Trajectory, w: &ScalarExpr) -> Result<DescentReport> {
    let h = traj.h;
    let slack = DESCENT_SLACK * h;
    let mut bound = 0;
    let mut mono = 0;
    let mut gap = f64::NEG_INFINITY;
    for pair in traj.samples.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let wk = eval_w(w, &a.x, a.t)?;
        let dv = b.v - a.v;
        if dv > -h * wk + h * slack {
            bound += 1;
        }
        if dv > h * slack {
            mono += 1;
        }
        gap = gap.max(dv / h + wk);
    }
    let steps = traj.samples.len().saturating_sub(1);
    Ok(DescentReport {
        steps,
        slack,
        bound_violations: bound,
        monotone_violations: mono,
        max_gap: if steps == 0 { 0.0 } else { gap },
        passed: bound == 0 && mono == 0,
    })
}

fn eval_w(w: &ScalarExpr, x: &[f64], t: f64) -> Result<f64> {
    w.eval(&Env::new(x, t))
        .map_err(|e| Error::eval(format!("W at x = {x:?}, t = {t}"), e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailReport {
    pub tail_fraction: f64,
    pub tail_samples: usize,
    pub tail_start: f64,
    pub tail_max: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// Max of `W` over the last `tail_fraction` of the samples (at least one).
pub fn check_partial_convergence(
    traj: &Trajectory,
    w: &ScalarExpr,
    tail_fraction: f64,
    threshold: f64,
) -> Result<TailReport> {
    if !(tail_fraction > 0.0 && tail_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "tail_fraction must lie in (0, 1), got {tail_fraction}"
        )));
    }
    let len = traj.samples.len();
    let count = ((len as f64 * tail_fraction).ceil() as usize).clamp(1, len);
    let tail = &traj.samples[len - count..];
    let mut max = f64::NEG_INFINITY;
    for s in tail {
        max = max.max(eval_w(w, &s.x, s.t)?);
    }
    Ok(TailReport {
        tail_fraction,
        tail_samples: count,
        tail_start: tail[0].t,
        tail_max: max,
        threshold,
        passed: max < threshold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SoundnessReport {
    pub steps: usize,
    pub violations: usize,
    pub first_violation: Option<usize>,
    pub passed: bool,
}

/// Every recorded selection lies in `F(x_k, t_k)`.
pub fn check_selection_soundness(traj: &Trajectory, sys: &SystemDef) -> Result<SoundnessReport> {
    let mut violations = 0;
    let mut first = None;
    for (k, s) in traj.samples.iter().enumerate() {
        if !sys.f.eval(&s.x, s.t)?.contains(&s.q)? {
            violations += 1;
            first.get_or_insert(k);
        }
    }
    Ok(SoundnessReport {
        steps: traj.samples.len(),
        violations,
        first_violation: first,
        passed: violations == 0,
    })
}
