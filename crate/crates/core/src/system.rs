//! System definition files.
//!
//! A system file is one JSON object. Unknown keys are rejected at every
//! level. Besides the inclusion `F`, the candidate `V`, the collection `U`,
//! the `domain`, `grid`, `params` and `matrosov` blocks, a file may carry
//! per-command defaults under `probes`, `certify`, `invariance` and
//! `simulate`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::certify::{AxisSpec, GridSpec, MatrosovProblem, MatrosovStage};
use crate::error::{Error, Result};
use crate::expr::{ScalarExpr, Vocabulary};
use crate::interval::{Annulus, IntervalBox};
use crate::setmap::{PiecewiseBoxMap, RegularFunctionSpec};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    #[serde(default)]
    name: Option<String>,
    n: usize,
    #[serde(default)]
    params: BTreeMap<String, String>,
    #[serde(rename = "F")]
    f: Vec<RawPiece>,
    #[serde(rename = "V")]
    v: RawFunction,
    #[serde(rename = "U", default)]
    u: Vec<RawFunction>,
    domain: RawDomain,
    #[serde(default)]
    grid: Option<RawGrid>,
    #[serde(default)]
    matrosov: Option<RawMatrosov>,
    #[serde(default)]
    probes: Vec<Vec<f64>>,
    #[serde(default)]
    certify: Option<RawCertify>,
    #[serde(default)]
    invariance: Option<RawInvariance>,
    #[serde(default)]
    simulate: Option<RawSimulate>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPiece {
    guard: String,
    value: RawValue,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawValue {
    Word(String),
    Axes(Vec<String>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFunction {
    #[serde(default)]
    name: Option<String>,
    value: String,
    gradient: Vec<RawPiece>,
    #[serde(default = "yes")]
    regular: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDomain {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

/// Grid block: one entry per axis, either a node count (uniform over the
/// domain) or an explicit node list.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawGrid {
    pub axes: Vec<AxisSpec>,
    #[serde(default)]
    pub include: Vec<Vec<f64>>,
    #[serde(default)]
    pub time: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMatrosov {
    delta: f64,
    #[serde(rename = "Delta")]
    big_delta: f64,
    gamma: f64,
    #[serde(rename = "W")]
    w: Vec<RawMatrosovW>,
    #[serde(rename = "Y")]
    y: Vec<String>,
    phi: Vec<String>,
    #[serde(default)]
    z_count: Option<usize>,
    #[serde(default)]
    eq_tol: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMatrosovW {
    #[serde(default)]
    name: Option<String>,
    value: String,
    gradient: Vec<RawPiece>,
    #[serde(default = "yes")]
    regular: bool,
    #[serde(rename = "U", default)]
    u: Vec<RawFunction>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCertify {
    #[serde(rename = "W", default)]
    w: Option<String>,
    #[serde(rename = "W_lower", default)]
    w_lower: Option<String>,
    #[serde(rename = "W_upper", default)]
    w_upper: Option<String>,
    #[serde(rename = "W_semidef", default)]
    w_semidef: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInvariance {
    #[serde(default)]
    zero_tol: Option<f64>,
    #[serde(default)]
    candidates: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimulate {
    x0: Vec<f64>,
    #[serde(default)]
    t0: Option<f64>,
    #[serde(default)]
    h: Option<f64>,
    #[serde(rename = "T")]
    horizon: f64,
    #[serde(default)]
    strategy: Option<String>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(rename = "W", default)]
    w: Option<String>,
    #[serde(rename = "W_tail", default)]
    w_tail: Option<String>,
    #[serde(default)]
    tail_fraction: Option<f64>,
    #[serde(default)]
    membership_tol: Option<f64>,
}

/// Lyapunov bound functions for `certify`.
#[derive(Debug, Clone, Default)]
pub struct CertifySettings {
    /// `W` in `derivative ≤ -W(x)`.
    pub w: Option<ScalarExpr>,
    pub w_lower: Option<ScalarExpr>,
    pub w_upper: Option<ScalarExpr>,
    pub w_semidef: Option<ScalarExpr>,
}

#[derive(Debug, Clone)]
pub struct InvarianceSettings {
    pub zero_tol: f64,
    pub candidates: Vec<Vec<f64>>,
}

pub const DEFAULT_ZERO_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct SimulateSettings {
    pub x0: Vec<f64>,
    pub t0: f64,
    pub h: f64,
    pub horizon: f64,
    pub strategy: Option<String>,
    pub seed: u64,
    pub w: Option<ScalarExpr>,
    pub w_tail: Option<ScalarExpr>,
    pub tail_fraction: f64,
    pub membership_tol: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SystemDef {
    pub name: String,
    pub n: usize,
    pub vocab: Vocabulary,
    pub f: PiecewiseBoxMap,
    pub v: RegularFunctionSpec,
    pub u: Vec<RegularFunctionSpec>,
    pub domain: IntervalBox,
    pub grid: Option<GridSpec>,
    pub grid_source: Option<RawGrid>,
    pub matrosov: Option<MatrosovProblem>,
    pub probes: Vec<Vec<f64>>,
    pub certify: CertifySettings,
    pub invariance: Option<InvarianceSettings>,
    pub simulate: Option<SimulateSettings>,
}

impl SystemDef {
    pub fn from_json(src: &str) -> Result<Self> {
        let raw: RawSystem = serde_json::from_str(src)?;
        build(raw)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        SystemDef::from_json(&src)
    }

    /// No part of `F`, `V` or `U` depends on `t`.
    pub fn is_autonomous(&self) -> bool {
        !self.f.is_time_dependent()
            && !self.v.is_time_dependent()
            && !self.v.gradient.is_time_dependent()
            && self
                .u
                .iter()
                .all(|u| !u.is_time_dependent() && !u.gradient.is_time_dependent())
    }

    pub fn parse_scalar(&self, src: &str, context: &str) -> Result<ScalarExpr> {
        self.vocab
            .parse_scalar(src)
            .map_err(|e| Error::parse(context, e))
    }

    /// Grid from a `grid` JSON block, resolved against this system's domain.
    pub fn grid_from_json(&self, src: &str) -> Result<GridSpec> {
        let raw: RawGrid = serde_json::from_str(src)?;
        GridSpec::build(&self.domain, &raw.axes, &raw.include, &raw.time)
    }

    /// The system grid with every axis replaced by `count` uniform nodes,
    /// keeping `include` nodes and time nodes.
    pub fn grid_with_count(&self, count: usize) -> Result<GridSpec> {
        let (include, time) = match &self.grid_source {
            Some(g) => (g.include.clone(), g.time.clone()),
            None => (Vec::new(), Vec::new()),
        };
        GridSpec::build(
            &self.domain,
            &vec![AxisSpec::Count(count); self.n],
            &include,
            &time,
        )
    }
}

fn build(raw: RawSystem) -> Result<SystemDef> {
    let n = raw.n;
    if n == 0 || n > 9 {
        return Err(Error::invalid(format!(
            "n must be between 1 and 9, got {n}"
        )));
    }
    let vocab = define_params(Vocabulary::new(n), &raw.params)?;

    let f = build_map(&vocab, n, &raw.f, "F")?;
    let v = build_function(&vocab, &raw.v, "V")?;
    let u = raw
        .u
        .iter()
        .enumerate()
        .map(|(i, spec)| build_function(&vocab, spec, &format!("U{}", i + 1)))
        .collect::<Result<Vec<_>>>()?;
    for spec in &u {
        if !spec.regular {
            return Err(Error::NotRegular(spec.name.clone()));
        }
    }
    let domain = IntervalBox::from_bounds(&raw.domain.lo, &raw.domain.hi)?;
    if domain.dims() != n {
        return Err(Error::invalid(format!(
            "domain has {} axes, n = {}",
            domain.dims(),
            n
        )));
    }
    let grid = match &raw.grid {
        Some(g) => Some(GridSpec::build(&domain, &g.axes, &g.include, &g.time)?),
        None => None,
    };
    for p in &raw.probes {
        if p.len() != n {
            return Err(Error::invalid(format!(
                "probe {p:?} does not have {n} coordinates"
            )));
        }
    }

    let matrosov = match &raw.matrosov {
        Some(m) => Some(build_matrosov(&vocab, m, &domain)?),
        None => None,
    };

    let scalar = |src: &Option<String>, ctx: &str| -> Result<Option<ScalarExpr>> {
        src.as_deref()
            .map(|s| vocab.parse_scalar(s).map_err(|e| Error::parse(ctx, e)))
            .transpose()
    };
    let rc = raw.certify.unwrap_or_default();
    let certify = CertifySettings {
        w: scalar(&rc.w, "certify.W")?,
        w_lower: scalar(&rc.w_lower, "certify.W_lower")?,
        w_upper: scalar(&rc.w_upper, "certify.W_upper")?,
        w_semidef: scalar(&rc.w_semidef, "certify.W_semidef")?,
    };
    let invariance = raw.invariance.map(|r| InvarianceSettings {
        zero_tol: r.zero_tol.unwrap_or(DEFAULT_ZERO_TOL),
        candidates: r.candidates,
    });
    let simulate = match raw.simulate {
        Some(s) => Some(SimulateSettings {
            x0: s.x0,
            t0: s.t0.unwrap_or(0.0),
            h: s.h.unwrap_or(1e-3),
            horizon: s.horizon,
            strategy: s.strategy,
            seed: s.seed.unwrap_or(0),
            w: scalar(&s.w, "simulate.W")?,
            w_tail: scalar(&s.w_tail, "simulate.W_tail")?,
            tail_fraction: s.tail_fraction.unwrap_or(0.1),
            membership_tol: s.membership_tol,
        }),
        None => None,
    };

    Ok(SystemDef {
        name: raw.name.unwrap_or_else(|| "system".into()),
        n,
        vocab,
        f,
        v,
        u,
        domain,
        grid,
        grid_source: raw.grid,
        matrosov,
        probes: raw.probes,
        certify,
        invariance,
        simulate,
    })
}

/// Parameters may refer to each other in any order; cycles and unknown
/// names are reported against the first parameter that cannot be defined.
fn define_params(mut vocab: Vocabulary, params: &BTreeMap<String, String>) -> Result<Vocabulary> {
    let mut pending: Vec<(&String, &String)> = params.iter().collect();
    while !pending.is_empty() {
        let before = pending.len();
        let mut last_err = None;
        pending.retain(|(name, src)| match vocab.define(name, src) {
            Ok(()) => false,
            Err(e) => {
                last_err.get_or_insert((name.to_string(), e));
                true
            }
        });
        if pending.len() == before {
            let (name, e) = last_err.expect("pending parameters produced an error");
            return Err(Error::parse(format!("params.{name}"), e));
        }
    }
    Ok(vocab)
}

fn build_map(
    vocab: &Vocabulary,
    out_dim: usize,
    pieces: &[RawPiece],
    ctx: &str,
) -> Result<PiecewiseBoxMap> {
    let mut parsed = Vec::with_capacity(pieces.len());
    for (i, p) in pieces.iter().enumerate() {
        let value = match &p.value {
            RawValue::Word(w) if w == "empty" => None,
            RawValue::Word(w) => {
                return Err(Error::invalid(format!(
                    "{ctx} piece {i}: value must be an array of set expressions or \"empty\", got {w:?}"
                )))
            }
            RawValue::Axes(a) => Some(a.iter().map(String::as_str).collect()),
        };
        parsed.push((p.guard.as_str(), value));
    }
    PiecewiseBoxMap::parse(vocab, out_dim, &parsed, ctx)
}

fn build_function(
    vocab: &Vocabulary,
    raw: &RawFunction,
    default_name: &str,
) -> Result<RegularFunctionSpec> {
    let name = raw.name.clone().unwrap_or_else(|| default_name.to_string());
    let value = vocab
        .parse_scalar(&raw.value)
        .map_err(|e| Error::parse(format!("{name}.value"), e))?;
    let gradient = build_map(
        vocab,
        vocab.state_dim() + 1,
        &raw.gradient,
        &format!("{name}.gradient"),
    )?;
    RegularFunctionSpec::new(&name, value, gradient, raw.regular)
}

fn build_matrosov(
    vocab: &Vocabulary,
    raw: &RawMatrosov,
    domain: &IntervalBox,
) -> Result<MatrosovProblem> {
    let annulus = Annulus::new(raw.delta, raw.big_delta)?;
    if !(raw.gamma > 0.0) {
        return Err(Error::invalid("matrosov.gamma must be positive"));
    }
    if raw.w.len() != raw.y.len() || raw.w.is_empty() {
        return Err(Error::invalid(format!(
            "matrosov needs matching non-empty W and Y lists, got {} and {}",
            raw.w.len(),
            raw.y.len()
        )));
    }
    // the annulus must fit inside the domain box
    let n = domain.dims();
    for i in 0..n {
        let (lo, hi) = domain.axis(i).bounds().expect("domain is non-empty");
        if -raw.big_delta < lo || raw.big_delta > hi {
            return Err(Error::invalid(format!(
                "annulus with outer radius {} is not inside the domain along axis {}",
                raw.big_delta,
                i + 1
            )));
        }
    }
    let m = raw.phi.len();
    let phi = raw
        .phi
        .iter()
        .enumerate()
        .map(|(i, s)| {
            vocab
                .parse_scalar(s)
                .map_err(|e| Error::parse(format!("matrosov.phi[{i}]"), e))
        })
        .collect::<Result<Vec<_>>>()?;
    let yvocab = vocab.clone().with_aux(m);
    let y = raw
        .y
        .iter()
        .enumerate()
        .map(|(i, s)| {
            yvocab
                .parse_scalar(s)
                .map_err(|e| Error::parse(format!("matrosov.Y[{i}]"), e))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut stages = Vec::with_capacity(raw.w.len());
    for (j, w) in raw.w.iter().enumerate() {
        let name = w.name.clone().unwrap_or_else(|| format!("W{}", j + 1));
        let value = vocab
            .parse_scalar(&w.value)
            .map_err(|e| Error::parse(format!("{name}.value"), e))?;
        let gradient = build_map(vocab, n + 1, &w.gradient, &format!("{name}.gradient"))?;
        let spec = RegularFunctionSpec::new(&name, value, gradient, w.regular)?;
        let u =
            w.u.iter()
                .enumerate()
                .map(|(i, s)| build_function(vocab, s, &format!("{name}.U{}", i + 1)))
                .collect::<Result<Vec<_>>>()?;
        for s in &u {
            if !s.regular {
                return Err(Error::NotRegular(s.name.clone()));
            }
        }
        stages.push(MatrosovStage { w: spec, u });
    }
    MatrosovProblem::new(
        annulus,
        raw.gamma,
        stages,
        y,
        phi,
        raw.z_count.unwrap_or(5),
        raw.eq_tol.unwrap_or(crate::certify::DEFAULT_EQ_TOL),
    )
}
