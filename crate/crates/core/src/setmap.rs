//! Piecewise box-valued maps, regular function specifications and a
//! finite-difference check of declared Clarke gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Env, GuardExpr, ScalarExpr, SetExpr, Vocabulary};
use crate::interval::{Interval, IntervalBox};

#[derive(Debug, Clone, PartialEq)]
pub enum PieceValue {
    Empty,
    Axes(Vec<SetExpr>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub guard: GuardExpr,
    pub value: PieceValue,
}

/// Ordered guarded pieces; the first piece whose guard holds gives the
/// value. The last guard is always `otherwise`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseBoxMap {
    state_dim: usize,
    out_dim: usize,
    time_dependent: bool,
    pieces: Vec<Piece>,
}

impl PiecewiseBoxMap {
    pub fn new(state_dim: usize, out_dim: usize, pieces: Vec<Piece>) -> Result<Self> {
        match pieces.last() {
            Some(Piece {
                guard: GuardExpr::Otherwise,
                ..
            }) => {}
            _ => return Err(Error::invalid("the last piece must have guard `otherwise`")),
        }
        let mut time_dependent = false;
        for (i, p) in pieces.iter().enumerate() {
            time_dependent |= p.guard.depends_on_time();
            if let PieceValue::Axes(axes) = &p.value {
                if axes.len() != out_dim {
                    return Err(Error::invalid(format!(
                        "piece {} has {} axes, expected {}",
                        i,
                        axes.len(),
                        out_dim
                    )));
                }
                time_dependent |= axes.iter().any(SetExpr::depends_on_time);
            }
        }
        Ok(PiecewiseBoxMap {
            state_dim,
            out_dim,
            time_dependent,
            pieces,
        })
    }

    /// Build from source strings; `None` as a value means the empty set.
    pub fn parse(
        vocab: &Vocabulary,
        out_dim: usize,
        pieces: &[(&str, Option<Vec<&str>>)],
        context: &str,
    ) -> Result<Self> {
        let mut out = Vec::with_capacity(pieces.len());
        for (i, (guard, value)) in pieces.iter().enumerate() {
            let guard = vocab
                .parse_guard(guard)
                .map_err(|e| Error::parse(format!("{context} piece {i} guard"), e))?;
            let value = match value {
                None => PieceValue::Empty,
                Some(axes) => PieceValue::Axes(
                    axes.iter()
                        .enumerate()
                        .map(|(k, s)| {
                            vocab.parse_set(s).map_err(|e| {
                                Error::parse(format!("{context} piece {i} axis {k}"), e)
                            })
                        })
                        .collect::<Result<_>>()?,
                ),
            };
            out.push(Piece { guard, value });
        }
        PiecewiseBoxMap::new(vocab.state_dim(), out_dim, out)
    }

    /// Single `otherwise` piece with the given value.
    pub fn constant(state_dim: usize, value: Vec<SetExpr>) -> Self {
        let out_dim = value.len();
        PiecewiseBoxMap::new(
            state_dim,
            out_dim,
            vec![Piece {
                guard: GuardExpr::Otherwise,
                value: PieceValue::Axes(value),
            }],
        )
        .expect("single otherwise piece is always valid")
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn is_time_dependent(&self) -> bool {
        self.time_dependent
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    /// Index of the piece that fires at `(x, t)`.
    pub fn firing_piece(&self, x: &[f64], t: f64) -> Result<usize> {
        self.check_dim(x)?;
        let env = Env::new(x, t);
        for (i, p) in self.pieces.iter().enumerate() {
            let hit = p
                .guard
                .eval(&env)
                .map_err(|e| Error::eval(format!("guard of piece {i} at x = {x:?}"), e))?;
            if hit {
                return Ok(i);
            }
        }
        unreachable!("last piece is `otherwise`")
    }

    pub fn eval(&self, x: &[f64], t: f64) -> Result<IntervalBox> {
        let i = self.firing_piece(x, t)?;
        let env = Env::new(x, t);
        match &self.pieces[i].value {
            PieceValue::Empty => Ok(IntervalBox::empty(self.out_dim)),
            PieceValue::Axes(axes) => {
                let vals = axes
                    .iter()
                    .enumerate()
                    .map(|(k, a)| {
                        a.eval(&env).map_err(|e| {
                            Error::eval(format!("piece {i} axis {k} at x = {x:?}, t = {t}"), e)
                        })
                    })
                    .collect::<Result<Vec<Interval>>>()?;
                Ok(IntervalBox::new(vals))
            }
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.state_dim {
            return Err(Error::invalid(format!(
                "point has dimension {}, map expects {}",
                x.len(),
                self.state_dim
            )));
        }
        Ok(())
    }
}

/// A scalar function of `(x, t)` with its declared Clarke gradient in
/// `R^{n+1}` (state axes then the time axis).
#[derive(Debug, Clone, PartialEq)]
pub struct RegularFunctionSpec {
    pub name: String,
    pub value: ScalarExpr,
    pub gradient: PiecewiseBoxMap,
    pub regular: bool,
}

impl RegularFunctionSpec {
    pub fn new(
        name: &str,
        value: ScalarExpr,
        gradient: PiecewiseBoxMap,
        regular: bool,
    ) -> Result<Self> {
        if gradient.out_dim() != gradient.state_dim() + 1 {
            return Err(Error::invalid(format!(
                "gradient of `{}` must have {} axes (state then time), found {}",
                name,
                gradient.state_dim() + 1,
                gradient.out_dim()
            )));
        }
        Ok(RegularFunctionSpec {
            name: name.to_string(),
            value,
            gradient,
            regular,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.gradient.state_dim()
    }

    pub fn is_time_dependent(&self) -> bool {
        self.value.depends_on_time()
    }

    pub fn eval(&self, x: &[f64], t: f64) -> Result<f64> {
        self.value
            .eval(&Env::new(x, t))
            .map_err(|e| Error::eval(format!("`{}` at x = {x:?}, t = {t}", self.name), e))
    }

    pub fn eval_gradient(&self, x: &[f64], t: f64) -> Result<IntervalBox> {
        let g = self.gradient.eval(x, t)?;
        if g.is_empty() {
            return Err(Error::EmptyGradient {
                name: self.name.clone(),
                x: x.to_vec(),
                t,
            });
        }
        let time_axis = g.axis(self.state_dim());
        if !self.is_time_dependent() && time_axis != Interval::point(0.0) {
            return Err(Error::TimeAxisNotZero {
                name: self.name.clone(),
                axis: time_axis.to_string(),
            });
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientReport {
    pub name: String,
    pub x: Vec<f64>,
    pub t: f64,
    pub radius: f64,
    pub samples: usize,
    pub declared: IntervalBox,
    pub estimate_hull: IntervalBox,
    pub inside_fraction: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub const GRADIENT_TOL: f64 = 1e-4;
pub const GRADIENT_PASS_FRACTION: f64 = 0.99;
const GRADIENT_SEED: u64 = 0x6772_6164;

/// Compare classical gradients near `(x, t)` with the declared box there.
///
/// Points are drawn uniformly from the ball of the given radius in
/// `R^{n+1}`, pushed out to at least `min(1e-3, radius / 2)` from the
/// centre, and differentiated by central differences with step
/// `radius / 100`.
pub fn validate_gradient(
    f: &RegularFunctionSpec,
    x: &[f64],
    t: f64,
    radius: f64,
    samples: usize,
) -> Result<GradientReport> {
    validate_gradient_seeded(f, x, t, radius, samples, GRADIENT_SEED)
}

pub fn validate_gradient_seeded(
    f: &RegularFunctionSpec,
    x: &[f64],
    t: f64,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<GradientReport> {
    if !(radius > 0.0) || samples < 10 {
        return Err(Error::invalid(
            "gradient validation needs radius > 0 and at least 10 samples",
        ));
    }
    let declared = f.eval_gradient(x, t)?;
    let target = declared.inflate(GRADIENT_TOL);
    let n = x.len();
    let dim = n + 1;
    let step = radius / 100.0;
    let floor = (1e-3f64).min(radius / 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut center = x.to_vec();
    center.push(t);

    let value = |p: &[f64]| f.value.eval(&Env::new(&p[..n], p[n])).ok();

    let mut hull = IntervalBox::empty(dim);
    let mut inside = 0usize;
    for _ in 0..samples {
        let dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir
            .iter()
            .map(|v: &f64| v * v)
            .sum::<f64>()
            .sqrt()
            .max(f64::MIN_POSITIVE);
        let r = (radius * rng.random::<f64>().powf(1.0 / dim as f64)).max(floor);
        let p: Vec<f64> = center
            .iter()
            .zip(&dir)
            .map(|(c, d)| c + r * d / norm)
            .collect();

        let mut grad = Vec::with_capacity(dim);
        for i in 0..dim {
            let mut hi = p.clone();
            let mut lo = p.clone();
            hi[i] += step;
            lo[i] -= step;
            match (value(&hi), value(&lo)) {
                (Some(a), Some(b)) => grad.push((a - b) / (2.0 * step)),
                _ => break,
            }
        }
        if grad.len() != dim {
            continue;
        }
        hull = hull.join(&IntervalBox::singleton(&grad))?;
        if target.contains(&grad)? {
            inside += 1;
        }
    }
    let inside_fraction = inside as f64 / samples as f64;
    Ok(GradientReport {
        name: f.name.clone(),
        x: x.to_vec(),
        t,
        radius,
        samples,
        declared,
        estimate_hull: hull,
        inside_fraction,
        tolerance: GRADIENT_TOL,
        pass: inside_fraction >= GRADIENT_PASS_FRACTION,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_set;

    fn ex1_f() -> PiecewiseBoxMap {
        PiecewiseBoxMap::parse(
            &Vocabulary::new(1),
            1,
            &[
                ("abs(x1) == 1", Some(vec!["[-2, 5]"])),
                ("otherwise", Some(vec!["{2 * sgn(x1 - 1)}"])),
            ],
            "F",
        )
        .unwrap()
    }

    fn ex1_u() -> RegularFunctionSpec {
        let v = Vocabulary::new(1);
        let g = PiecewiseBoxMap::parse(
            &v,
            2,
            &[
                ("x1 == 1", Some(vec!["[1, 2]", "{0}"])),
                ("x1 == -1", Some(vec!["[-2, -1]", "{0}"])),
                ("x1 == 0", Some(vec!["[-1, 1]", "{0}"])),
                ("abs(x1) < 1", Some(vec!["{sgn(x1)}", "{0}"])),
                ("otherwise", Some(vec!["{2 * sgn(x1)}", "{0}"])),
            ],
            "U",
        )
        .unwrap();
        RegularFunctionSpec::new(
            "U",
            v.parse_scalar("max(abs(x1), 2 * abs(x1) - 1)").unwrap(),
            g,
            true,
        )
        .unwrap()
    }

    fn bx(axes: &[(f64, f64)]) -> IntervalBox {
        IntervalBox::from_bounds(
            &axes.iter().map(|a| a.0).collect::<Vec<_>>(),
            &axes.iter().map(|a| a.1).collect::<Vec<_>>(),
        )
        .unwrap()
    }

    #[test]
    fn eval_map_examples() {
        let f = ex1_f();
        assert_eq!(f.eval(&[0.5], 0.0).unwrap(), bx(&[(-2.0, -2.0)]));
        assert_eq!(f.eval(&[1.0], 0.0).unwrap(), bx(&[(-2.0, 5.0)]));
        assert_eq!(f.eval(&[-1.0], 3.0).unwrap(), bx(&[(-2.0, 5.0)]));
        assert_eq!(f.eval(&[2.0], 0.0).unwrap(), bx(&[(2.0, 2.0)]));
        assert!(!f.is_time_dependent());

        let zero = PiecewiseBoxMap::constant(3, vec![parse_set("{0}").unwrap(); 3]);
        assert!(zero.eval(&[1.0, -2.0, 7.0], 1.0).unwrap().is_singleton());
        assert_eq!(
            zero.eval(&[1.0, -2.0, 7.0], 1.0).unwrap().center().unwrap(),
            vec![0.0; 3]
        );
        assert!(zero.eval(&[1.0], 0.0).is_err());
    }

    #[test]
    fn empty_piece_and_missing_otherwise() {
        let v = Vocabulary::new(1);
        let m = PiecewiseBoxMap::parse(
            &v,
            1,
            &[("x1 > 0", None), ("otherwise", Some(vec!["{1}"]))],
            "m",
        )
        .unwrap();
        assert!(m.eval(&[1.0], 0.0).unwrap().is_empty());
        assert!(!m.eval(&[-1.0], 0.0).unwrap().is_empty());
        assert!(PiecewiseBoxMap::parse(&v, 1, &[("x1 > 0", None)], "m").is_err());
        assert!(PiecewiseBoxMap::parse(&v, 2, &[("otherwise", Some(vec!["{1}"]))], "m").is_err());
    }

    #[test]
    fn eval_gradient_examples() {
        let u = ex1_u();
        assert_eq!(
            u.eval_gradient(&[0.0], 0.0).unwrap(),
            bx(&[(-1.0, 1.0), (0.0, 0.0)])
        );
        assert_eq!(
            u.eval_gradient(&[1.0], 0.0).unwrap(),
            bx(&[(1.0, 2.0), (0.0, 0.0)])
        );

        let v = Vocabulary::new(2);
        let g = PiecewiseBoxMap::parse(
            &v,
            3,
            &[("otherwise", Some(vec!["{x1}", "{x2}", "{0}"]))],
            "V",
        )
        .unwrap();
        let vf = RegularFunctionSpec::new(
            "V",
            v.parse_scalar("0.5 * (x1 * x1 + x2 * x2)").unwrap(),
            g,
            true,
        )
        .unwrap();
        assert_eq!(
            vf.eval_gradient(&[0.5, 0.5], 0.0).unwrap(),
            bx(&[(0.5, 0.5), (0.5, 0.5), (0.0, 0.0)])
        );
    }

    #[test]
    fn gradient_declaration_errors() {
        let v = Vocabulary::new(1);
        let g = PiecewiseBoxMap::parse(
            &v,
            2,
            &[("x1 > 0", None), ("otherwise", Some(vec!["{1}", "{0}"]))],
            "U",
        )
        .unwrap();
        let f = RegularFunctionSpec::new("U", v.parse_scalar("x1").unwrap(), g, true).unwrap();
        assert!(matches!(
            f.eval_gradient(&[1.0], 0.0),
            Err(Error::EmptyGradient { .. })
        ));

        let g = PiecewiseBoxMap::parse(&v, 2, &[("otherwise", Some(vec!["{1}", "[0, 1]"]))], "U")
            .unwrap();
        let f = RegularFunctionSpec::new("U", v.parse_scalar("x1").unwrap(), g, true).unwrap();
        assert!(matches!(
            f.eval_gradient(&[1.0], 0.0),
            Err(Error::TimeAxisNotZero { .. })
        ));

        let g = PiecewiseBoxMap::parse(&v, 1, &[("otherwise", Some(vec!["{1}"]))], "U").unwrap();
        assert!(RegularFunctionSpec::new("U", v.parse_scalar("x1").unwrap(), g, true).is_err());
    }

    #[test]
    fn validate_gradient_examples() {
        let u = ex1_u();
        let r = validate_gradient(&u, &[1.0], 0.0, 0.05, 200).unwrap();
        assert!(r.pass, "{r:?}");
        let (lo, hi) = r.estimate_hull.axis(0).bounds().unwrap();
        assert!((lo - 1.0).abs() < 1e-6 && (hi - 2.0).abs() < 1e-6);

        let v = Vocabulary::new(1);
        let zero = RegularFunctionSpec::new(
            "zero",
            v.parse_scalar("0").unwrap(),
            PiecewiseBoxMap::constant(1, vec![parse_set("{0}").unwrap(); 2]),
            true,
        )
        .unwrap();
        let r = validate_gradient(&zero, &[0.3], 0.0, 0.1, 50).unwrap();
        assert!(r.pass);
        assert!(
            r.estimate_hull
                .hausdorff(&IntervalBox::singleton(&[0.0, 0.0]))
                .unwrap()
                < 1e-12
        );
    }

    #[test]
    fn validate_gradient_rejects_wrong_declaration() {
        let v = Vocabulary::new(1);
        let wrong = RegularFunctionSpec::new(
            "abs",
            v.parse_scalar("abs(x1)").unwrap(),
            PiecewiseBoxMap::constant(
                1,
                vec![parse_set("{1}").unwrap(), parse_set("{0}").unwrap()],
            ),
            true,
        )
        .unwrap();
        let r = validate_gradient(&wrong, &[0.0], 0.0, 0.1, 200).unwrap();
        assert!(!r.pass);
        assert!(r.inside_fraction < 0.7);
    }
}
