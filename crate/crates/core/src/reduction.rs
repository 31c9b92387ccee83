//! The reduction `G_U^F` and the reduced inclusion `F̃_𝒰`.
//!
//! `pᵀ[q; 1]` is constant over a gradient box `P` exactly when `[q; 1]` is
//! orthogonal to every nondegenerate axis of `P`. On a state axis that
//! means `q_i = 0`; on the time axis it is impossible, so the reduction is
//! empty.

use std::fmt;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::interval::{real_str, IntervalBox};
use crate::setmap::{PiecewiseBoxMap, RegularFunctionSpec};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReducedValue {
    pub base: IntervalBox,
    /// State axes forced to zero (0-based).
    pub constrained_axes: Vec<usize>,
    pub result: IntervalBox,
    pub time_obstruction: bool,
}

/// Reduce the box `base ⊂ Rⁿ` against the gradient box `grad ⊂ R^{n+1}`.
pub fn reduce_box(base: &IntervalBox, grad: &IntervalBox) -> Result<ReducedValue> {
    let n = base.dims();
    if grad.dims() != n + 1 {
        return Err(Error::invalid(format!(
            "gradient box has {} axes, expected {}",
            grad.dims(),
            n + 1
        )));
    }
    let dirs = grad.direction_axes()?;
    let time_obstruction = dirs.contains(&n);
    let constrained_axes: Vec<usize> = dirs.into_iter().filter(|&i| i < n).collect();
    let result = if time_obstruction || base.is_empty() {
        IntervalBox::empty(n)
    } else {
        constrained_axes
            .iter()
            .fold(base.clone(), |b, &i| b.pinch_axis(i))
    };
    Ok(ReducedValue {
        base: base.clone(),
        constrained_axes,
        result,
        time_obstruction,
    })
}

pub fn reduce_once(
    f: &PiecewiseBoxMap,
    u: &RegularFunctionSpec,
    x: &[f64],
    t: f64,
) -> Result<ReducedValue> {
    if !u.regular {
        return Err(Error::NotRegular(u.name.clone()));
    }
    let base = f.eval(x, t)?;
    reduce_box(&base, &u.eval_gradient(x, t)?)
}

/// Result of reducing one base box against a whole collection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reduction {
    pub base: IntervalBox,
    pub result: IntervalBox,
    /// Union of the constrained axes over the collection, sorted.
    pub constrained_axes: Vec<usize>,
    pub time_obstruction: bool,
}

/// `F̃_𝒰(x, t)` given `F(x, t)`. An empty collection leaves `F` unchanged.
pub fn reduce_base(
    base: &IntervalBox,
    us: &[RegularFunctionSpec],
    x: &[f64],
    t: f64,
) -> Result<Reduction> {
    let mut result = base.clone();
    let mut axes = Vec::new();
    let mut time_obstruction = false;
    for u in us {
        if !u.regular {
            return Err(Error::NotRegular(u.name.clone()));
        }
        let r = reduce_box(base, &u.eval_gradient(x, t)?)?;
        result = result.intersect(&r.result)?;
        axes.extend(r.constrained_axes);
        time_obstruction |= r.time_obstruction;
    }
    axes.sort_unstable();
    axes.dedup();
    Ok(Reduction {
        base: base.clone(),
        result,
        constrained_axes: axes,
        time_obstruction,
    })
}

pub fn reduce_collection_detailed(
    f: &PiecewiseBoxMap,
    us: &[RegularFunctionSpec],
    x: &[f64],
    t: f64,
) -> Result<Reduction> {
    let base = f.eval(x, t)?;
    reduce_base(&base, us, x, t)
}

pub fn reduce_collection(
    f: &PiecewiseBoxMap,
    us: &[RegularFunctionSpec],
    x: &[f64],
    t: f64,
) -> Result<IntervalBox> {
    Ok(reduce_collection_detailed(f, us, x, t)?.result)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionRow {
    pub x: Vec<f64>,
    pub t: f64,
    pub base: IntervalBox,
    pub reduced: IntervalBox,
    pub constrained_axes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionTable {
    pub n: usize,
    pub rows: Vec<ReductionRow>,
}

/// One row per probe, in probe order.
pub fn tabulate_reduction(
    f: &PiecewiseBoxMap,
    us: &[RegularFunctionSpec],
    probes: &[(Vec<f64>, f64)],
) -> Result<ReductionTable> {
    let rows = probes
        .iter()
        .map(|(x, t)| {
            let r = reduce_collection_detailed(f, us, x, *t)?;
            Ok(ReductionRow {
                x: x.clone(),
                t: *t,
                base: r.base,
                reduced: r.result,
                constrained_axes: r.constrained_axes,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ReductionTable {
        n: f.state_dim(),
        rows,
    })
}

impl ReductionTable {
    pub fn csv_header(&self) -> Vec<String> {
        let n = self.n;
        let mut h: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        h.push("t".into());
        for prefix in ["F_lo", "F_hi", "Fred_lo", "Fred_hi"] {
            h.extend((1..=n).map(|i| format!("{prefix}{i}")));
        }
        h.push("empty_flag".into());
        h
    }

    /// Columns `x..., t, F_lo..., F_hi..., Fred_lo..., Fred_hi..., empty_flag`;
    /// bounds of an empty box are left blank.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::invalid(format!("writing CSV: {e}"));
        w.write_record(self.csv_header()).map_err(io)?;
        for row in &self.rows {
            let mut rec: Vec<String> = row.x.iter().map(|&v| real_str(v)).collect();
            rec.push(real_str(row.t));
            for b in [&row.base, &row.reduced] {
                rec.extend(bounds_cells(b.lower(), self.n));
                rec.extend(bounds_cells(b.upper(), self.n));
            }
            rec.push(u8::from(row.reduced.is_empty()).to_string());
            w.write_record(&rec).map_err(io)?;
        }
        w.flush()
            .map_err(|e| Error::invalid(format!("writing CSV: {e}")))?;
        Ok(())
    }
}

fn bounds_cells(v: Option<Vec<f64>>, n: usize) -> Vec<String> {
    match v {
        Some(v) => v.iter().map(|&x| real_str(x)).collect(),
        None => vec![String::new(); n],
    }
}

impl fmt::Display for ReductionTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in &self.rows {
            let x: Vec<String> = row.x.iter().map(|&v| real_str(v)).collect();
            let axes: Vec<String> = row
                .constrained_axes
                .iter()
                .map(|i| format!("x{}", i + 1))
                .collect();
            writeln!(
                f,
                "x = ({}), t = {}: F = {}  ->  F~ = {}  [pinned: {}]",
                x.join(", "),
                row.t,
                row.base,
                row.reduced,
                if axes.is_empty() {
                    "-".to_string()
                } else {
                    axes.join(", ")
                }
            )?;
        }
        Ok(())
    }
}
