//! Grid screening of Lyapunov, invariance and Matrosov hypotheses.
//!
//! Every check evaluates `lhs ≤ rhs` at grid nodes and records the margin
//! `lhs - rhs`; a node passes when the margin is at most the tolerance. A
//! passing run is "certified on grid", which is a necessary-condition
//! screen and not a proof over the continuum.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::derivative::{baseline_bc, u_generalized_derivative, Extended};
use crate::error::{Error, Result};
use crate::expr::{Env, ScalarExpr};
use crate::interval::{norm2, real_str, Annulus, IntervalBox};
use crate::setmap::RegularFunctionSpec;
use crate::system::SystemDef;

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_EQ_TOL: f64 = 1e-6;
pub const WITNESS_LIMIT: usize = 16;
pub const K_CAP: f64 = (1u64 << 20) as f64;
/// Relative slack on the annulus radii when selecting grid nodes.
pub const ANNULUS_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum AxisSpec {
    /// Uniform nodes over the domain axis, endpoints included.
    Count(usize),
    Nodes(Vec<f64>),
}

/// Tensor grid over the state domain plus time nodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSpec {
    axes: Vec<Vec<f64>>,
    time: Vec<f64>,
}

fn sorted_nodes(mut v: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::invalid(format!("{what}: non-finite node {bad}")));
    }
    v.sort_by(f64::total_cmp);
    v.dedup();
    Ok(v)
}

impl GridSpec {
    /// `axes` and `include` hold one entry per state axis, or a single entry
    /// applied to every axis. Include nodes are merged verbatim. Empty
    /// `time` means `[0]`.
    pub fn build(
        domain: &IntervalBox,
        axes: &[AxisSpec],
        include: &[Vec<f64>],
        time: &[f64],
    ) -> Result<GridSpec> {
        let n = domain.dims();
        if domain.is_empty() {
            return Err(Error::invalid("grid domain is empty"));
        }
        let pick = |len: usize, i: usize, what: &str| -> Result<usize> {
            match len {
                1 => Ok(0),
                l if l == n => Ok(i),
                l => Err(Error::invalid(format!(
                    "grid {what} has {l} entries, expected 1 or {n}"
                ))),
            }
        };
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let (lo, hi) = domain.axis(i).bounds().expect("non-empty domain");
            let mut nodes = match &axes[pick(axes.len(), i, "axes")?] {
                AxisSpec::Count(c) if *c >= 2 => (0..*c)
                    .map(|k| {
                        if k + 1 == *c {
                            hi
                        } else {
                            lo + (hi - lo) * k as f64 / (*c - 1) as f64
                        }
                    })
                    .collect(),
                AxisSpec::Count(c) if *c == 1 && lo == hi => vec![lo],
                AxisSpec::Count(c) => {
                    return Err(Error::invalid(format!(
                        "axis {} needs at least 2 nodes, got {c}",
                        i + 1
                    )))
                }
                AxisSpec::Nodes(v) => v.clone(),
            };
            if !include.is_empty() {
                nodes.extend(include[pick(include.len(), i, "include")?].iter().copied());
            }
            let nodes = sorted_nodes(nodes, &format!("grid axis {}", i + 1))?;
            if let Some(bad) = nodes.iter().find(|&&v| v < lo || v > hi) {
                return Err(Error::invalid(format!(
                    "grid node {bad} on axis {} lies outside the domain [{lo}, {hi}]",
                    i + 1
                )));
            }
            if nodes.is_empty() {
                return Err(Error::invalid(format!("grid axis {} has no nodes", i + 1)));
            }
            out.push(nodes);
        }
        let time = if time.is_empty() {
            vec![0.0]
        } else {
            time.to_vec()
        };
        Ok(GridSpec {
            axes: out,
            time: sorted_nodes(time, "time nodes")?,
        })
    }

    pub fn from_nodes(axes: Vec<Vec<f64>>, time: Vec<f64>) -> Result<GridSpec> {
        let axes = axes
            .into_iter()
            .enumerate()
            .map(|(i, a)| sorted_nodes(a, &format!("grid axis {}", i + 1)))
            .collect::<Result<Vec<_>>>()?;
        if axes.is_empty() || axes.iter().any(Vec::is_empty) {
            return Err(Error::invalid("grid needs at least one node per axis"));
        }
        let time = if time.is_empty() { vec![0.0] } else { time };
        Ok(GridSpec {
            axes,
            time: sorted_nodes(time, "time nodes")?,
        })
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn time(&self) -> &[f64] {
        &self.time
    }

    pub fn node_count(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    /// All state nodes, first axis slowest.
    pub fn nodes(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.node_count());
        let mut idx = vec![0usize; self.dims()];
        loop {
            out.push(
                idx.iter()
                    .enumerate()
                    .map(|(i, &k)| self.axes[i][k])
                    .collect(),
            );
            let mut d = self.dims();
            loop {
                if d == 0 {
                    return out;
                }
                d -= 1;
                idx[d] += 1;
                if idx[d] < self.axes[d].len() {
                    break;
                }
                idx[d] = 0;
            }
        }
    }

    pub fn summary(&self) -> GridSummary {
        GridSummary {
            nodes_per_axis: self.axes.iter().map(Vec::len).collect(),
            bounds: self.axes.iter().map(|a| [a[0], a[a.len() - 1]]).collect(),
            time: self.time.clone(),
            state_nodes: self.node_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSummary {
    pub nodes_per_axis: Vec<usize>,
    pub bounds: Vec<[f64; 2]>,
    pub time: Vec<f64>,
    pub state_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Node {
    pub x: Vec<f64>,
    pub t: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<f64>>,
}

impl Node {
    pub fn new(x: Vec<f64>, t: f64) -> Self {
        Node { x, t, z: None }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[f64]| {
            v.iter()
                .map(|&c| real_str(c))
                .collect::<Vec<_>>()
                .join(", ")
        };
        write!(f, "x = ({}), t = {}", join(&self.x), self.t)?;
        if let Some(z) = &self.z {
            write!(f, ", z = ({})", join(z))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub point: Node,
    pub lhs: Extended,
    pub rhs: f64,
    pub margin: Extended,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// One node's contribution to a check.
#[derive(Debug, Clone)]
pub struct Eval {
    pub lhs: Extended,
    pub rhs: f64,
    /// Require `margin < tol` instead of `margin ≤ tol`.
    pub strict: bool,
    pub note: Option<String>,
}

impl Eval {
    pub fn le(lhs: impl Into<Extended>, rhs: f64) -> Self {
        Eval {
            lhs: lhs.into(),
            rhs,
            strict: false,
            note: None,
        }
    }

    pub fn lt(lhs: impl Into<Extended>, rhs: f64) -> Self {
        Eval {
            strict: true,
            ..Eval::le(lhs, rhs)
        }
    }

    fn with_note(mut self, note: String) -> Self {
        self.note = Some(note);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub condition: String,
    pub description: String,
    pub passed: bool,
    pub tolerance: f64,
    pub nodes_checked: usize,
    pub violation_count: usize,
    /// Node with the largest margin (first in node order on ties).
    pub worst: Option<Witness>,
    /// Largest violations, ties kept in node order.
    pub witnesses: Vec<Witness>,
}

/// Evaluate a condition at every node in parallel and fold in node order.
pub fn run_check<F>(
    condition: &str,
    description: &str,
    nodes: &[Node],
    tol: f64,
    eval: F,
) -> Result<CheckResult>
where
    F: Fn(usize, &Node) -> Result<Option<Eval>> + Sync,
{
    let evals: Vec<Result<Option<Eval>>> = nodes
        .par_iter()
        .enumerate()
        .map(|(i, n)| eval(i, n))
        .collect();
    let mut checked = 0;
    let mut worst: Option<Witness> = None;
    let mut violations = Vec::new();
    for (node, ev) in nodes.iter().zip(evals) {
        let Some(ev) = ev? else { continue };
        checked += 1;
        let margin = ev.lhs.minus(ev.rhs);
        let ok = match margin {
            Extended::NegInf => true,
            Extended::Real(m) if ev.strict => m < tol,
            Extended::Real(m) => m <= tol,
        };
        let w = Witness {
            point: node.clone(),
            lhs: ev.lhs,
            rhs: ev.rhs,
            margin,
            note: ev.note,
        };
        if worst
            .as_ref()
            .is_none_or(|b| margin.total_cmp(&b.margin).is_gt())
        {
            worst = Some(w.clone());
        }
        if !ok {
            violations.push(w);
        }
    }
    let violation_count = violations.len();
    violations.sort_by(|a, b| b.margin.total_cmp(&a.margin));
    violations.truncate(WITNESS_LIMIT);
    Ok(CheckResult {
        condition: condition.to_string(),
        description: description.to_string(),
        passed: violation_count == 0,
        tolerance: tol,
        nodes_checked: checked,
        violation_count,
        worst,
        witnesses: violations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Certified,
    Inconclusive,
    Violated,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Certified => "CERTIFIED",
            Verdict::Inconclusive => "INCONCLUSIVE",
            Verdict::Violated => "VIOLATED",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub verdict: Verdict,
    pub condition: String,
    pub message: String,
    pub worst_point: Option<Node>,
    pub worst_margin: Option<Extended>,
    pub violation_count: usize,
    pub witnesses: Vec<Witness>,
    pub checks: Vec<CheckResult>,
    pub tolerances: BTreeMap<String, f64>,
    pub grid: GridSummary,
    pub diagnostics: Vec<String>,
}

impl Certificate {
    /// VIOLATED if any check failed. The headline point, margin and
    /// witnesses come from the first failing check, else the first check.
    pub fn from_checks(
        condition: &str,
        checks: Vec<CheckResult>,
        tolerances: BTreeMap<String, f64>,
        grid: GridSummary,
        diagnostics: Vec<String>,
    ) -> Certificate {
        let failing = checks.iter().position(|c| !c.passed);
        let head = failing.or(if checks.is_empty() { None } else { Some(0) });
        let (worst_point, worst_margin, witnesses) = match head {
            Some(i) => {
                let c = &checks[i];
                (
                    c.worst.as_ref().map(|w| w.point.clone()),
                    c.worst.as_ref().map(|w| w.margin),
                    c.witnesses.clone(),
                )
            }
            None => (None, None, Vec::new()),
        };
        let violation_count = checks.iter().map(|c| c.violation_count).sum();
        let (verdict, message) = match failing {
            None => (Verdict::Certified, "certified on grid".to_string()),
            Some(i) => {
                let c = &checks[i];
                let at = c
                    .witnesses
                    .first()
                    .map(|w| w.point.to_string())
                    .unwrap_or_default();
                (
                    Verdict::Violated,
                    format!(
                        "`{}` violated at {} node(s); largest margin at {}",
                        c.condition, c.violation_count, at
                    ),
                )
            }
        };
        Certificate {
            verdict,
            condition: condition.to_string(),
            message,
            worst_point,
            worst_margin,
            violation_count,
            witnesses,
            checks,
            tolerances,
            grid,
            diagnostics,
        }
    }

    pub fn is_certified(&self) -> bool {
        self.verdict == Verdict::Certified
    }
}

impl fmt::Display for Certificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}: {} ({})", self.condition, self.verdict, self.message)?;
        for c in &self.checks {
            write!(
                f,
                "  [{}] {}: {} node(s), {} violation(s)",
                if c.passed { "pass" } else { "FAIL" },
                c.condition,
                c.nodes_checked,
                c.violation_count
            )?;
            if let Some(w) = &c.worst {
                write!(f, ", worst margin {} at {}", w.margin, w.point)?;
            }
            writeln!(f)?;
        }
        for d in &self.diagnostics {
            writeln!(f, "  note: {d}")?;
        }
        Ok(())
    }
}

fn eval_scalar(e: &ScalarExpr, x: &[f64], t: f64, what: &str) -> Result<f64> {
    e.eval(&Env::new(x, t))
        .map_err(|err| Error::eval(format!("{what} at x = {x:?}, t = {t}"), err))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DerivativeMode {
    /// `𝒰`-generalized derivative with the system's `𝒰`.
    Reduced,
    /// Bacciotti–Ceragioli maximum, i.e. `𝒰 = {V}`.
    Baseline,
}

#[derive(Debug, Clone)]
pub struct CertifyOptions {
    pub mode: DerivativeMode,
    pub tol: f64,
    pub w_lower: Option<ScalarExpr>,
    pub w_upper: Option<ScalarExpr>,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            mode: DerivativeMode::Reduced,
            tol: DEFAULT_TOL,
            w_lower: None,
            w_upper: None,
        }
    }
}

pub fn derivative_at(sys: &SystemDef, mode: DerivativeMode, x: &[f64], t: f64) -> Result<Extended> {
    Ok(match mode {
        DerivativeMode::Reduced => u_generalized_derivative(&sys.v, &sys.f, &sys.u, x, t)?.value,
        DerivativeMode::Baseline => baseline_bc(&sys.v, &sys.f, x, t)?.value,
    })
}

/// Time nodes to visit: all grid time nodes, or only the first one when
/// nothing in the system depends on `t`.
pub fn time_nodes(sys: &SystemDef, grid: &GridSpec) -> Vec<f64> {
    if sys.is_autonomous() {
        vec![grid.time()[0]]
    } else {
        grid.time().to_vec()
    }
}

fn state_time_nodes(grid: &GridSpec, times: &[f64]) -> Vec<Node> {
    grid.nodes()
        .into_iter()
        .flat_map(|x| times.iter().map(move |&t| Node::new(x.clone(), t)))
        .collect()
}

fn check_grid(sys: &SystemDef, grid: &GridSpec) -> Result<()> {
    if grid.dims() != sys.n {
        return Err(Error::invalid(format!(
            "grid has {} axes, system has n = {}",
            grid.dims(),
            sys.n
        )));
    }
    Ok(())
}

/// Positive definiteness screen: `f(0, t) = 0` and `f(x, t) > 0` at every
/// other node. The origin is added when it lies in the domain.
fn definiteness_check(
    name: &str,
    sys: &SystemDef,
    nodes: &[Node],
    times: &[f64],
    f: impl Fn(&[f64], f64) -> Result<f64> + Sync,
) -> Result<CheckResult> {
    let origin = vec![0.0; sys.n];
    let mut all = nodes.to_vec();
    if sys.domain.contains(&origin)? && !nodes.iter().any(|n| n.x == origin) {
        all.extend(times.iter().map(|&t| Node::new(origin.clone(), t)));
    }
    run_check(
        &format!("{name} positive definite"),
        &format!("{name}(0) = 0 and {name}(x) > 0 for x ≠ 0"),
        &all,
        0.0,
        |_, node| {
            let v = f(&node.x, node.t)?;
            Ok(Some(if node.x.iter().all(|&c| c == 0.0) {
                Eval::le(v.abs(), 0.0)
            } else {
                Eval::lt(-v, 0.0)
            }))
        },
    )
}

fn tolerances(entries: &[(&str, f64)]) -> BTreeMap<String, f64> {
    entries.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn decrease_check(
    sys: &SystemDef,
    nodes: &[Node],
    w: &ScalarExpr,
    mode: DerivativeMode,
    tol: f64,
) -> Result<CheckResult> {
    let label = match mode {
        DerivativeMode::Reduced => "U-generalized derivative",
        DerivativeMode::Baseline => "baseline derivative",
    };
    run_check(
        "decrease",
        &format!("{label} ≤ -W(x, t)"),
        nodes,
        tol,
        |_, node| {
            let d = derivative_at(sys, mode, &node.x, node.t)?;
            Ok(Some(Eval::le(d, -eval_scalar(w, &node.x, node.t, "W")?)))
        },
    )
}

/// Check `V̇ ≤ -W` on the grid, with definiteness screening of `V` and,
/// when given, the sandwich `W_lower ≤ V ≤ W_upper`.
pub fn certify_lyapunov(
    sys: &SystemDef,
    w: &ScalarExpr,
    grid: &GridSpec,
    opts: &CertifyOptions,
) -> Result<Certificate> {
    check_grid(sys, grid)?;
    let times = time_nodes(sys, grid);
    let nodes = state_time_nodes(grid, &times);
    let v = &sys.v;
    let mut checks = vec![
        decrease_check(sys, &nodes, w, opts.mode, opts.tol)?,
        definiteness_check("V", sys, &nodes, &times, |x, t| v.eval(x, t))?,
    ];
    if let Some(lo) = &opts.w_lower {
        checks.push(run_check(
            "lower bound",
            "W_lower(x) ≤ V(x, t)",
            &nodes,
            opts.tol,
            |_, n| {
                Ok(Some(Eval::le(
                    eval_scalar(lo, &n.x, n.t, "W_lower")?,
                    v.eval(&n.x, n.t)?,
                )))
            },
        )?);
        checks.push(definiteness_check(
            "W_lower",
            sys,
            &nodes,
            &times,
            |x, t| eval_scalar(lo, x, t, "W_lower"),
        )?);
    }
    if let Some(hi) = &opts.w_upper {
        checks.push(run_check(
            "upper bound",
            "V(x, t) ≤ W_upper(x)",
            &nodes,
            opts.tol,
            |_, n| {
                Ok(Some(Eval::le(
                    v.eval(&n.x, n.t)?,
                    eval_scalar(hi, &n.x, n.t, "W_upper")?,
                )))
            },
        )?);
        checks.push(definiteness_check(
            "W_upper",
            sys,
            &nodes,
            &times,
            |x, t| eval_scalar(hi, x, t, "W_upper"),
        )?);
    }
    let mut diagnostics = Vec::new();
    let w_pd = definiteness_check("W", sys, &nodes, &times, |x, t| eval_scalar(w, x, t, "W"))?;
    if !w_pd.passed {
        diagnostics.push(format!(
            "W is not positive definite on the grid ({} node(s)); the bound gives stability but not asymptotic stability",
            w_pd.violation_count
        ));
    }
    if opts.mode == DerivativeMode::Baseline {
        diagnostics.push("baseline mode: reduction by U = {V} only".into());
    }
    Ok(Certificate::from_checks(
        "lyapunov",
        checks,
        tolerances(&[("margin", opts.tol), ("definiteness", 0.0)]),
        grid.summary(),
        diagnostics,
    ))
}

/// Check `V̇ ≤ -W` with `W ≥ 0` only required to be semidefinite.
pub fn certify_semidefinite(
    sys: &SystemDef,
    w: &ScalarExpr,
    grid: &GridSpec,
    opts: &CertifyOptions,
) -> Result<Certificate> {
    check_grid(sys, grid)?;
    let times = time_nodes(sys, grid);
    let nodes = state_time_nodes(grid, &times);
    let v = &sys.v;
    let checks = vec![
        decrease_check(sys, &nodes, w, opts.mode, opts.tol)?,
        run_check("W semidefinite", "W(x) ≥ 0", &nodes, opts.tol, |_, n| {
            Ok(Some(Eval::le(-eval_scalar(w, &n.x, n.t, "W")?, 0.0)))
        })?,
        definiteness_check("V", sys, &nodes, &times, |x, t| v.eval(x, t))?,
    ];
    Ok(Certificate::from_checks(
        "semidefinite",
        checks,
        tolerances(&[("margin", opts.tol), ("definiteness", 0.0)]),
        grid.summary(),
        Vec::new(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateCheck {
    pub x: Vec<f64>,
    pub f: IntervalBox,
    /// `0 ∈ F(x)`.
    pub equilibrium: bool,
    pub derivative: Extended,
    pub in_e_estimate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceReport {
    pub zero_tol: f64,
    pub nodes_checked: usize,
    /// Grid nodes where the derivative is within `zero_tol` of zero.
    pub e_nodes: Vec<Vec<f64>>,
    pub neg_inf_nodes: usize,
    pub semidefinite: Certificate,
    pub candidates: Vec<CandidateCheck>,
    /// Nonzero candidates with `0 ∈ F(x)`; these could be constant solutions.
    pub nonzero_equilibria: Vec<Vec<f64>>,
    /// Semidefinite check passed and no nonzero candidate is an equilibrium.
    pub passed: bool,
    pub note: String,
}

/// Discrete estimate of `E = {x : V̇_𝒰(x) = 0}` and equilibrium screening
/// of user-proposed points of the invariant set.
pub fn invariance_data(
    sys: &SystemDef,
    grid: &GridSpec,
    zero_tol: f64,
    candidates: &[Vec<f64>],
    tol: f64,
) -> Result<InvarianceReport> {
    check_grid(sys, grid)?;
    if !sys.is_autonomous() {
        return Err(Error::invalid(
            "invariance analysis needs an autonomous system",
        ));
    }
    let t = grid.time()[0];
    let nodes = state_time_nodes(grid, &[t]);
    let values: Vec<Result<Extended>> = nodes
        .par_iter()
        .map(|n| derivative_at(sys, DerivativeMode::Reduced, &n.x, t))
        .collect();
    let values = values.into_iter().collect::<Result<Vec<_>>>()?;
    let is_zero = |d: Extended| d.real().is_some_and(|v| v.abs() <= zero_tol);
    let e_nodes = nodes
        .iter()
        .zip(&values)
        .filter(|(_, &d)| is_zero(d))
        .map(|(n, _)| n.x.clone())
        .collect();
    let neg_inf_nodes = values.iter().filter(|d| d.is_neg_inf()).count();
    let check = run_check(
        "semidefinite",
        "U-generalized derivative ≤ 0",
        &nodes,
        tol,
        |i, _| Ok(Some(Eval::le(values[i], 0.0))),
    )?;
    let semidefinite = Certificate::from_checks(
        "invariance",
        vec![check],
        tolerances(&[("margin", tol), ("zero", zero_tol)]),
        grid.summary(),
        Vec::new(),
    );
    let candidates = candidates
        .iter()
        .map(|x| {
            if x.len() != sys.n {
                return Err(Error::invalid(format!(
                    "candidate {x:?} does not have {} coordinates",
                    sys.n
                )));
            }
            let f = sys.f.eval(x, t)?;
            let derivative = derivative_at(sys, DerivativeMode::Reduced, x, t)?;
            Ok(CandidateCheck {
                x: x.clone(),
                equilibrium: f.contains(&vec![0.0; sys.n])?,
                f,
                derivative,
                in_e_estimate: is_zero(derivative),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let nonzero_equilibria: Vec<Vec<f64>> = candidates
        .iter()
        .filter(|c| c.equilibrium && c.x.iter().any(|&v| v != 0.0))
        .map(|c| c.x.clone())
        .collect();
    Ok(InvarianceReport {
        zero_tol,
        nodes_checked: nodes.len(),
        e_nodes,
        neg_inf_nodes,
        passed: semidefinite.is_certified() && nonzero_equilibria.is_empty(),
        semidefinite,
        candidates,
        nonzero_equilibria,
        note: "the largest weakly invariant subset of E is not computed; candidates are screened by 0 ∈ F(x), \
               which is necessary for a solution to stay at x"
            .into(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrosovStage {
    pub w: RegularFunctionSpec,
    pub u: Vec<RegularFunctionSpec>,
}

/// Matrosov functions `W_j` with reduction collections `𝒰_j`, bounds
/// `Y_j(z, x)` and the auxiliary map `z = φ(x, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrosovProblem {
    pub annulus: Annulus,
    pub gamma: f64,
    pub stages: Vec<MatrosovStage>,
    pub y: Vec<ScalarExpr>,
    pub phi: Vec<ScalarExpr>,
    /// Nodes per `z` axis on `[-γ, γ]`.
    pub z_count: usize,
    pub eq_tol: f64,
}

impl MatrosovProblem {
    pub fn new(
        annulus: Annulus,
        gamma: f64,
        stages: Vec<MatrosovStage>,
        y: Vec<ScalarExpr>,
        phi: Vec<ScalarExpr>,
        z_count: usize,
        eq_tol: f64,
    ) -> Result<Self> {
        if stages.is_empty() || stages.len() != y.len() {
            return Err(Error::invalid(format!(
                "need matching non-empty W and Y lists, got {} and {}",
                stages.len(),
                y.len()
            )));
        }
        if !(gamma > 0.0) {
            return Err(Error::invalid("gamma must be positive"));
        }
        if !(eq_tol >= 0.0) {
            return Err(Error::invalid("eq_tol must be non-negative"));
        }
        if z_count == 0 || (!phi.is_empty() && z_count < 2 && z_count != 1) {
            return Err(Error::invalid("z_count must be positive"));
        }
        if y.iter().any(ScalarExpr::depends_on_time) {
            return Err(Error::invalid(
                "Y functions depend on (z, x) only, not on t",
            ));
        }
        Ok(MatrosovProblem {
            annulus,
            gamma,
            stages,
            y,
            phi,
            z_count,
            eq_tol,
        })
    }

    pub fn m(&self) -> usize {
        self.y.len()
    }

    /// `z` nodes: a uniform grid on `[-γ, γ]^m` cut to the ball of radius `γ`.
    pub fn z_nodes(&self) -> Vec<Vec<f64>> {
        let m = self.phi.len();
        if m == 0 {
            return vec![Vec::new()];
        }
        let axis: Vec<f64> = if self.z_count == 1 {
            vec![0.0]
        } else {
            (0..self.z_count)
                .map(|k| -self.gamma + 2.0 * self.gamma * k as f64 / (self.z_count - 1) as f64)
                .collect()
        };
        let grid = GridSpec::from_nodes(vec![axis; m], Vec::new()).expect("finite nodes");
        grid.nodes()
            .into_iter()
            .filter(|z| norm2(z) <= self.gamma * (1.0 + ANNULUS_SLACK))
            .collect()
    }

    pub fn in_annulus(&self, x: &[f64]) -> bool {
        let r = norm2(x);
        r >= self.annulus.inner() * (1.0 - ANNULUS_SLACK)
            && r <= self.annulus.outer() * (1.0 + ANNULUS_SLACK)
    }

    /// Nodes `(z, x)` of `B(0, γ) × D(δ, Δ)`.
    pub fn nodes(&self, grid: &GridSpec) -> Vec<Node> {
        let zs = self.z_nodes();
        grid.nodes()
            .into_iter()
            .filter(|x| self.in_annulus(x))
            .flat_map(|x| {
                zs.iter().map(move |z| Node {
                    x: x.clone(),
                    t: 0.0,
                    z: Some(z.clone()),
                })
            })
            .collect()
    }

    /// `Y_1..Y_M` at a node.
    pub fn y_values(&self, node: &Node) -> Result<Vec<f64>> {
        let z = node.z.as_deref().unwrap_or(&[]);
        let env = Env::with_z(&node.x, node.t, z);
        self.y
            .iter()
            .enumerate()
            .map(|(j, y)| {
                y.eval(&env)
                    .map_err(|e| Error::eval(format!("Y{} at {node}", j + 1), e))
            })
            .collect()
    }

    /// `Y_1 = … = Y_l = 0` within `eq_tol`.
    fn triggered(&self, ys: &[f64], l: usize) -> bool {
        ys[..l].iter().all(|v| v.abs() <= self.eq_tol)
    }
}

fn y_table(prob: &MatrosovProblem, nodes: &[Node]) -> Result<Vec<Vec<f64>>> {
    let ys: Vec<Result<Vec<f64>>> = nodes.par_iter().map(|n| prob.y_values(n)).collect();
    ys.into_iter().collect()
}

fn matrosov_tolerances(prob: &MatrosovProblem) -> BTreeMap<String, f64> {
    tolerances(&[
        ("eq_tol", prob.eq_tol),
        ("delta", prob.annulus.inner()),
        ("Delta", prob.annulus.outer()),
        ("gamma", prob.gamma),
        ("annulus_slack", ANNULUS_SLACK),
    ])
}

/// The Matrosov property: wherever `Y_0 = … = Y_j = 0`, `Y_{j+1} ≤ 0`,
/// with `Y_0 ≡ 0` and `Y_{M+1} ≡ 1`.
pub fn matrosov_chain(prob: &MatrosovProblem, grid: &GridSpec) -> Result<Certificate> {
    let nodes = prob.nodes(grid);
    let ys = y_table(prob, &nodes)?;
    let m = prob.m();
    let check = run_check(
        "matrosov property",
        "Y_0 = … = Y_j = 0 implies Y_{j+1} ≤ 0",
        &nodes,
        prob.eq_tol,
        |i, _| {
            let y = &ys[i];
            let mut worst = (f64::NEG_INFINITY, 0);
            for j in 0..=m {
                if !prob.triggered(y, j) {
                    break;
                }
                let next = if j == m { 1.0 } else { y[j] };
                if next > worst.0 {
                    worst = (next, j + 1);
                }
            }
            Ok(Some(
                Eval::le(worst.0, 0.0).with_note(format!("Y{}", worst.1)),
            ))
        },
    )?;
    let mut diagnostics = Vec::new();
    if nodes.is_empty() {
        diagnostics.push("no grid node lies in the annulus".into());
    }
    Ok(Certificate::from_checks(
        "matrosov property",
        vec![check],
        matrosov_tolerances(prob),
        grid.summary(),
        diagnostics,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrosovConstants {
    pub epsilon: f64,
    /// `K_1 … K_{M-1}`.
    pub k: Vec<f64>,
    pub zeta: f64,
    /// `-ζ / 2^{M-1}`.
    pub z_bound: f64,
}

impl MatrosovConstants {
    /// `Z = Σ K_j Y_j + Y_M`.
    pub fn z(&self, ys: &[f64]) -> f64 {
        let m = ys.len();
        self.k.iter().zip(ys).map(|(k, y)| k * y).sum::<f64>() + ys[m - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantSearch {
    pub constants: Option<MatrosovConstants>,
    pub epsilon: Option<f64>,
    pub certificate: Certificate,
}

fn inconclusive(
    prob: &MatrosovProblem,
    grid: &GridSpec,
    message: String,
    diagnostics: Vec<String>,
) -> Certificate {
    Certificate {
        verdict: Verdict::Inconclusive,
        condition: "matrosov constants".into(),
        message,
        worst_point: None,
        worst_margin: None,
        violation_count: 0,
        witnesses: Vec::new(),
        checks: Vec::new(),
        tolerances: matrosov_tolerances(prob),
        grid: grid.summary(),
        diagnostics,
    }
}

/// Estimate `ε` on the chain set, then find `K_{M-1}, …, K_1` by doubling
/// so that `Z ≤ -ζ / 2^{M-1}` at every node. `ζ` defaults to `ε`.
pub fn matrosov_constants(
    prob: &MatrosovProblem,
    grid: &GridSpec,
    zeta_target: Option<f64>,
) -> Result<ConstantSearch> {
    let nodes = prob.nodes(grid);
    let ys = y_table(prob, &nodes)?;
    let m = prob.m();
    let mut diagnostics = Vec::new();

    let chain_max = ys
        .iter()
        .filter(|y| prob.triggered(y, m - 1))
        .map(|y| y[m - 1])
        .fold(None, |acc: Option<f64>, v| {
            Some(acc.map_or(v, |a| a.max(v)))
        });
    let epsilon = match chain_max {
        Some(v) => -v,
        None => {
            diagnostics.push("no node has Y_1 = … = Y_{M-1} = 0; epsilon set to 1".into());
            1.0
        }
    };
    if !(epsilon > 0.0) {
        let msg = format!(
            "Y{m} reaches {} where the lower functions vanish; no positive epsilon",
            -epsilon
        );
        return Ok(ConstantSearch {
            constants: None,
            epsilon: Some(epsilon),
            certificate: inconclusive(prob, grid, msg, diagnostics),
        });
    }
    let zeta = zeta_target.unwrap_or(epsilon);

    // ỹ holds Ỹ_l at every node
    let mut tilde: Vec<f64> = ys.iter().map(|y| y[m - 1]).collect();
    let mut eps_t = zeta;
    let mut k = vec![0.0; m.saturating_sub(1)];
    for l in (2..=m).rev() {
        let active: Vec<usize> = (0..ys.len())
            .filter(|&i| prob.triggered(&ys[i], l - 2))
            .collect();
        let worst_for = |kv: f64| {
            active
                .iter()
                .map(|&i| kv * ys[i][l - 2] + tilde[i])
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let mut kv = 1.0;
        while worst_for(kv) > -eps_t / 2.0 {
            if kv >= K_CAP {
                let msg = format!(
                    "K{} exceeds the cap 2^20 (max of K*Y{} + Y~{} at the cap is {:e}, target {:e})",
                    l - 1,
                    l - 1,
                    l,
                    worst_for(kv),
                    -eps_t / 2.0
                );
                diagnostics.push(msg.clone());
                return Ok(ConstantSearch {
                    constants: None,
                    epsilon: Some(epsilon),
                    certificate: inconclusive(prob, grid, msg, diagnostics),
                });
            }
            kv *= 2.0;
        }
        k[l - 2] = kv;
        for (i, y) in ys.iter().enumerate() {
            tilde[i] += kv * y[l - 2];
        }
        eps_t /= 2.0;
    }
    let constants = MatrosovConstants {
        epsilon,
        k,
        zeta,
        z_bound: -zeta / 2f64.powi(m as i32 - 1),
    };
    let mut certificate = verify_constants(prob, &constants, grid)?;
    certificate.diagnostics.extend(diagnostics);
    Ok(ConstantSearch {
        constants: Some(constants),
        epsilon: Some(epsilon),
        certificate,
    })
}

/// Check `Z ≤ -ζ / 2^{M-1}` at every node of `grid` in the annulus.
pub fn verify_constants(
    prob: &MatrosovProblem,
    constants: &MatrosovConstants,
    grid: &GridSpec,
) -> Result<Certificate> {
    let nodes = prob.nodes(grid);
    let check = run_check(
        "Z bound",
        "Σ K_j Y_j + Y_M ≤ -ζ / 2^{M-1}",
        &nodes,
        0.0,
        |_, n| {
            let ys = prob.y_values(n)?;
            Ok(Some(Eval::le(constants.z(&ys), constants.z_bound)))
        },
    )?;
    let mut tol = matrosov_tolerances(prob);
    tol.insert("z_bound".into(), 0.0);
    Ok(Certificate::from_checks(
        "matrosov constants",
        vec![check],
        tol,
        grid.summary(),
        Vec::new(),
    ))
}

/// The boundedness and derivative-bound conditions on `W_j`. Reported for
/// inspection; the chain and constant verdicts do not depend on them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrosovDiagnostics {
    pub gamma: f64,
    /// `max |W_j(x, t)|, ‖φ(x, t)‖` over the annulus nodes.
    pub required_gamma: f64,
    pub boundedness_ok: bool,
    pub derivative_bound: Vec<CheckResult>,
}

pub fn matrosov_conditions(
    sys: &SystemDef,
    prob: &MatrosovProblem,
    grid: &GridSpec,
    tol: f64,
) -> Result<MatrosovDiagnostics> {
    check_grid(sys, grid)?;
    let xs: Vec<Vec<f64>> = grid
        .nodes()
        .into_iter()
        .filter(|x| prob.in_annulus(x))
        .collect();
    let nodes: Vec<Node> = xs
        .iter()
        .flat_map(|x| grid.time().iter().map(move |&t| Node::new(x.clone(), t)))
        .collect();
    let phi_at = |n: &Node| -> Result<Vec<f64>> {
        prob.phi
            .iter()
            .enumerate()
            .map(|(i, p)| eval_scalar(p, &n.x, n.t, &format!("phi[{i}]")))
            .collect()
    };
    let bounds: Vec<Result<f64>> = nodes
        .par_iter()
        .map(|n| {
            let mut b = norm2(&phi_at(n)?);
            for s in &prob.stages {
                b = b.max(s.w.eval(&n.x, n.t)?.abs());
            }
            Ok(b)
        })
        .collect();
    let required_gamma = bounds
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let mut derivative_bound = Vec::with_capacity(prob.m());
    for (j, stage) in prob.stages.iter().enumerate() {
        derivative_bound.push(run_check(
            &format!("derivative bound {}", j + 1),
            &format!(
                "U-generalized derivative of {} ≤ Y{}(φ(x, t), x)",
                stage.w.name,
                j + 1
            ),
            &nodes,
            tol,
            |_, n| {
                let d = u_generalized_derivative(&stage.w, &sys.f, &stage.u, &n.x, n.t)?.value;
                let z = phi_at(n)?;
                let y = prob.y[j]
                    .eval(&Env::with_z(&n.x, n.t, &z))
                    .map_err(|e| Error::eval(format!("Y{} at {n}", j + 1), e))?;
                Ok(Some(Eval::le(d, y)))
            },
        )?);
    }
    Ok(MatrosovDiagnostics {
        gamma: prob.gamma,
        required_gamma,
        boundedness_ok: required_gamma <= prob.gamma,
        derivative_bound,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrosovReport {
    pub verdict: Verdict,
    pub chain: Certificate,
    pub constants: Option<ConstantSearch>,
    pub conditions: MatrosovDiagnostics,
}

/// Chain check, then (if it passes) the constant search, plus the
/// condition diagnostics.
pub fn matrosov_analysis(
    sys: &SystemDef,
    prob: &MatrosovProblem,
    grid: &GridSpec,
    tol: f64,
) -> Result<MatrosovReport> {
    let chain = matrosov_chain(prob, grid)?;
    let constants = if chain.is_certified() {
        Some(matrosov_constants(prob, grid, None)?)
    } else {
        None
    };
    let verdict = match &constants {
        Some(c) => c.certificate.verdict,
        None => chain.verdict,
    };
    Ok(MatrosovReport {
        verdict,
        chain,
        constants,
        conditions: matrosov_conditions(sys, prob, grid, tol)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Vocabulary;

    fn domain(lo: f64, hi: f64, n: usize) -> IntervalBox {
        IntervalBox::from_bounds(&vec![lo; n], &vec![hi; n]).unwrap()
    }

    #[test]
    fn grid_merges_include_nodes_verbatim() {
        let g = GridSpec::build(
            &domain(-2.0, 2.0, 2),
            &[AxisSpec::Count(5)],
            &[vec![1.0, -1.0, 0.0]],
            &[],
        )
        .unwrap();
        assert_eq!(g.axes()[0], vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        assert_eq!(g.time(), &[0.0]);
        let g = GridSpec::build(
            &domain(-2.0, 2.0, 1),
            &[AxisSpec::Count(4)],
            &[vec![1.0]],
            &[2.0, 0.5],
        )
        .unwrap();
        assert!(g.axes()[0].contains(&1.0));
        assert_eq!(g.axes()[0].len(), 5);
        assert_eq!(g.time(), &[0.5, 2.0]);
    }

    #[test]
    fn grid_rejects_bad_specs() {
        let d = domain(-1.0, 1.0, 2);
        assert!(GridSpec::build(&d, &[AxisSpec::Count(1)], &[], &[]).is_err());
        assert!(GridSpec::build(&d, &[AxisSpec::Nodes(vec![0.0, 3.0])], &[], &[]).is_err());
        assert!(GridSpec::build(&d, &vec![AxisSpec::Count(3); 3], &[], &[]).is_err());
        assert!(GridSpec::build(&d, &[AxisSpec::Count(3)], &[vec![f64::NAN]], &[]).is_err());
    }

    #[test]
    fn nodes_are_row_major() {
        let g = GridSpec::from_nodes(vec![vec![0.0, 1.0], vec![5.0, 6.0, 7.0]], vec![]).unwrap();
        let n = g.nodes();
        assert_eq!(n.len(), 6);
        assert_eq!(n[0], vec![0.0, 5.0]);
        assert_eq!(n[1], vec![0.0, 6.0]);
        assert_eq!(n[3], vec![1.0, 5.0]);
    }

    #[test]
    fn axis_spec_deserializes_both_forms() {
        let a: Vec<AxisSpec> = serde_json::from_str("[51, [0, 0.5, 1]]").unwrap();
        assert_eq!(a[0], AxisSpec::Count(51));
        assert_eq!(a[1], AxisSpec::Nodes(vec![0.0, 0.5, 1.0]));
    }

    #[test]
    fn run_check_orders_witnesses_and_counts() {
        let nodes: Vec<Node> = (0..5).map(|i| Node::new(vec![i as f64], 0.0)).collect();
        let margins = [0.0, 2.0, -1.0, 2.0, 1.0];
        let c = run_check("c", "d", &nodes, 0.5, |i, _| {
            Ok(if i == 2 {
                None
            } else {
                Some(Eval::le(margins[i], 0.0))
            })
        })
        .unwrap();
        assert_eq!(c.nodes_checked, 4);
        assert_eq!(c.violation_count, 3);
        assert_eq!(c.worst.as_ref().unwrap().point.x, vec![1.0]);
        let order: Vec<f64> = c.witnesses.iter().map(|w| w.point.x[0]).collect();
        assert_eq!(order, vec![1.0, 3.0, 4.0]);
        assert!(!c.passed);
    }

    #[test]
    fn neg_inf_passes_vacuously_and_strict_excludes_equality() {
        let nodes = vec![Node::new(vec![0.0], 0.0)];
        let c = run_check("c", "d", &nodes, 0.0, |_, _| {
            Ok(Some(Eval::le(Extended::NegInf, -5.0)))
        })
        .unwrap();
        assert!(c.passed);
        let c = run_check("c", "d", &nodes, 0.0, |_, _| Ok(Some(Eval::lt(0.0, 0.0)))).unwrap();
        assert!(!c.passed);
    }

    fn problem(y: &[&str], eq_tol: f64) -> (MatrosovProblem, GridSpec) {
        let vocab = Vocabulary::new(2).with_aux(1);
        let ys: Vec<ScalarExpr> = y.iter().map(|s| vocab.parse_scalar(s).unwrap()).collect();
        let w = RegularFunctionSpec::new(
            "W",
            vocab.parse_scalar("0").unwrap(),
            crate::setmap::PiecewiseBoxMap::constant(2, vec![vocab.parse_set("{0}").unwrap(); 3]),
            true,
        )
        .unwrap();
        let stages = vec![MatrosovStage { w, u: vec![] }; ys.len()];
        let prob = MatrosovProblem::new(
            Annulus::new(0.1, 2.0).unwrap(),
            1.0,
            stages,
            ys,
            vec![vocab.parse_scalar("0").unwrap()],
            5,
            eq_tol,
        )
        .unwrap();
        let grid = GridSpec::build(
            &domain(-2.0, 2.0, 2),
            &[AxisSpec::Count(51)],
            &[vec![-1.0, -0.1, 0.1, 1.0]],
            &[],
        )
        .unwrap();
        (prob, grid)
    }

    #[test]
    fn chain_examples() {
        let (p, g) = problem(&["-2*x2*x2", "-x1*x1 - x2*x1 + 2*x2*x2"], DEFAULT_EQ_TOL);
        assert!(matrosov_chain(&p, &g).unwrap().is_certified());
        let (p, g) = problem(&["-1"], DEFAULT_EQ_TOL);
        assert!(matrosov_chain(&p, &g).unwrap().is_certified());
        let (p, g) = problem(&["-2*x2*x2", "x1*x1"], DEFAULT_EQ_TOL);
        let c = matrosov_chain(&p, &g).unwrap();
        assert_eq!(c.verdict, Verdict::Violated);
        assert!(c.witnesses.iter().all(|w| w.point.x[1] == 0.0));
    }

    #[test]
    fn constants_for_the_two_stage_chain() {
        let (p, g) = problem(&["-2*x2*x2", "-x1*x1 - x2*x1 + 2*x2*x2"], DEFAULT_EQ_TOL);
        let s = matrosov_constants(&p, &g, None).unwrap();
        let c = s.constants.unwrap();
        assert!((c.epsilon - 0.01).abs() < 1e-12, "{}", c.epsilon);
        assert_eq!(c.k, vec![2.0]);
        assert!(s.certificate.is_certified());
    }

    #[test]
    fn single_stage_needs_no_constants() {
        let (p, g) = problem(&["-1"], DEFAULT_EQ_TOL);
        let s = matrosov_constants(&p, &g, None).unwrap();
        let c = s.constants.unwrap();
        assert!(c.k.is_empty());
        assert_eq!(c.zeta, 1.0);
        assert_eq!(c.z_bound, -1.0);
        assert!(s.certificate.is_certified());
    }

    #[test]
    fn barely_negative_chain_hits_the_cap() {
        let (p, g) = problem(&["-2*x2*x2", "-1e-9*x1*x1 + 1e7*x2*x2"], 1e-15);
        assert!(matrosov_chain(&p, &g).unwrap().is_certified());
        let s = matrosov_constants(&p, &g, None).unwrap();
        assert!(s.constants.is_none());
        assert_eq!(s.certificate.verdict, Verdict::Inconclusive);
    }
}
