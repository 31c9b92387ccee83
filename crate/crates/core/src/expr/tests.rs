use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn s(src: &str, x: &[f64], t: f64) -> f64 {
    parse_scalar(src).unwrap().eval(&Env::new(x, t)).unwrap()
}

fn set(src: &str, x: &[f64]) -> Interval {
    parse_set(src).unwrap().eval(&Env::new(x, 0.0)).unwrap()
}

fn guard(src: &str, x: &[f64]) -> bool {
    eval_guard(&parse_guard(src).unwrap(), x, 0.0).unwrap()
}

use crate::interval::Interval;

#[test]
fn scalar_examples() {
    assert_eq!(s("abs(x1)", &[-2.0], 0.0), 2.0);
    assert_eq!(s("sgn1(0.5)", &[], 0.0), 0.0);
    assert_eq!(s("max(x1-1,0)-min(x1+1,0)", &[2.0], 0.0), 1.0);
    // brute cross-check of the same expression
    for k in -40..=40 {
        let x = k as f64 / 10.0;
        let want = (x - 1.0).max(0.0) - (x + 1.0).min(0.0);
        assert_eq!(s("max(x1-1,0)-min(x1+1,0)", &[x], 0.0), want);
    }
}

#[test]
fn precedence_and_unary_minus() {
    assert_eq!(s("1 + 2 * 3", &[], 0.0), 7.0);
    assert_eq!(s("-x1 * x1", &[3.0], 0.0), -9.0);
    assert_eq!(s("8 / 4 / 2", &[], 0.0), 1.0);
    assert_eq!(s("1 - 2 - 3", &[], 0.0), -4.0);
    assert_eq!(s("2 * -x1", &[3.0], 0.0), -6.0);
    assert_eq!(s("0.5*exp(-t)", &[], 0.0), 0.5);
}

#[test]
fn sign_functions() {
    assert_eq!(sgn(0.0), 0.0);
    assert_eq!(sgn(-3.0), -1.0);
    assert_eq!(sgn1(1.0), 1.0);
    assert_eq!(sgn1(-1.0), -1.0);
    assert_eq!(sgn1(-0.999), 0.0);
    assert_eq!(sgn1(2.0), 1.0);
}

#[test]
fn set_examples() {
    assert_eq!(
        set("{ -x1 + x2 } + [-1, 1]", &[1.0, 0.0]),
        Interval::new(-2.0, 0.0).unwrap()
    );
    assert_eq!(set("{0}", &[]), Interval::point(0.0));
    assert_eq!(
        set("x2 * hull(0, sgn(x1))", &[2.0, 3.0]),
        Interval::new(0.0, 3.0).unwrap()
    );
    assert_eq!(
        set("(x1 + 1) * [0, 1] + {2}", &[1.0]),
        Interval::new(2.0, 4.0).unwrap()
    );
    assert_eq!(
        set("-1 * (x1 * [0, 1] + {1})", &[2.0]),
        Interval::new(-3.0, -1.0).unwrap()
    );
    assert_eq!(set("2 * 3 * {1}", &[]), Interval::point(6.0));
}

#[test]
fn inverted_literal_is_an_error() {
    let e = parse_set("[x1, 0]").unwrap();
    assert_eq!(
        e.eval(&Env::new(&[1.0], 0.0)),
        Err(EvalError::InvertedInterval { lo: 1.0, hi: 0.0 })
    );
}

#[test]
fn guard_examples() {
    assert!(guard("abs(x1)==1 and abs(x2)!=1", &[1.0, 0.5]));
    assert!(guard("not (x1<0)", &[0.0]));
    assert!(!guard("abs(x1)==1", &[1.0 + 1e-12]));
    assert!(guard("otherwise", &[]));
    assert!(guard("(x1 + 1) < 2 or x1 > 5", &[0.5]));
    assert!(!guard("x1 > 0 and (x1 < 1 or x1 > 2)", &[1.5]));
}

#[test]
fn guard_division_by_zero_errors() {
    let g = parse_guard("1 / x1 > 0").unwrap();
    assert_eq!(eval_guard(&g, &[0.0], 0.0), Err(EvalError::DivisionByZero));
    assert_eq!(
        eval_guard(&g, &[1e-301], 0.0),
        Err(EvalError::DivisionByZero)
    );
}

#[test]
fn parse_errors_carry_offsets() {
    let e = parse_scalar("x1 + foo").unwrap_err();
    assert_eq!(e.offset, 5);
    assert_eq!(e.kind, ParseErrorKind::UnknownIdentifier("foo".into()));

    let e = parse_scalar("max(x1)").unwrap_err();
    assert!(matches!(
        e.kind,
        ParseErrorKind::Arity {
            expected: 2,
            found: 1,
            ..
        }
    ));

    let e = parse_scalar("tan(x1)").unwrap_err();
    assert_eq!(e.kind, ParseErrorKind::UnknownFunction("tan".into()));

    let e = parse_scalar("x1 x2").unwrap_err();
    assert_eq!(e.offset, 3);
    assert!(matches!(e.kind, ParseErrorKind::TrailingInput(_)));

    assert!(parse_set("[1 2]").is_err());
    assert!(parse_set("[1, 2").is_err());
    assert!(parse_set("x1").is_err());
    assert!(parse_scalar("x0").is_err());
    assert!(parse_scalar("x01").is_err());
    assert!(Vocabulary::new(2).parse_scalar("x3").is_err());
    assert!(Vocabulary::new(2).parse_scalar("z1").is_err());
}

#[test]
fn parameters_inline_and_print_by_name() {
    let mut v = Vocabulary::new(2);
    v.define("g", "0.5*exp(-t)").unwrap();
    v.define("gdot", "-g").unwrap();
    let e = v.parse_scalar("x2*(1 + g) + gdot").unwrap();
    assert_eq!(e.to_string(), "x2 * (1 + g) + gdot");
    let got = e.eval(&Env::new(&[0.0, 2.0], 0.0)).unwrap();
    assert!((got - 2.5).abs() < 1e-15);
    assert!(e.depends_on_time());
    assert!(v.define("abs", "1").is_err());
    assert!(v.define("x1", "1").is_err());
}

/// Canonical strings: printing the parse must give them back verbatim.
const CORPUS: &[&str] = &[
    "abs(x1)",
    "sgn1(0.5)",
    "max(x1 - 1, 0) - min(x1 + 1, 0)",
    "max(abs(x1), 2 * abs(x1) - 1)",
    "2 * sgn(x1 - 1)",
    "sgn(x1)",
    "2 * sgn(x1)",
    "0.5 * (x1 * x1 + x2 * x2)",
    "max(x1 - 1, 0) - min(x1 + 1, 0) + max(x2 - 1, 0) - min(x2 + 1, 0)",
    "-x1 + x2",
    "-x1 - x2",
    "-x1 * x1 - x2 * x2",
    "0.5 * exp(-t)",
    "-0.5 * exp(-t)",
    "x1 * x1 + (1 + 0.5 * exp(-t)) * x2 * x2",
    "-2 * x2 * x2",
    "-x1 * x1 - x2 * x1 + 2 * x2 * x2",
    "x1 * x2",
    "min(max(abs(x1), abs(x2)), 1)",
    "2 * x1",
    "x1 / (x2 + 1)",
    "x1 - (x2 - 1)",
    "x1 / (2 * x2)",
    "-(x1 + x2)",
    "-(-x1)",
    "sin(t) * cos(t)",
    "exp(-t) * (1 + x1)",
    "1e-9 * x1",
    "1e20",
    "-1e-9 * x1 * x1 + 10000000 * x2 * x2",
    "z1 * x1 - z2",
    "{0}",
    "{-x1 + x2} + [-1, 1]",
    "{-x1 - x2} + [-0.5, 0.5]",
    "[-2, 5]",
    "{2 * sgn(x1 - 1)}",
    "hull(0, sgn(x1))",
    "x2 * hull(0, sgn(x1))",
    "{x2} + x1 * [-1, 1]",
    "(x1 + 1) * [0, 1]",
    "-1 * ({1} + [0, 1])",
    "2 * 3 * {1}",
    "x1 / 2 * hull(1, 2)",
    "hull(sgn1(x1), 2 * sgn1(x1))",
    "{-x1 + x2 * (1 + 0.5 * exp(-t))} + [-1, 1]",
    "[-1, 1] + ({0} + {1})",
    "abs(x1) == 1",
    "abs(x1) == 1 and abs(x2) != 1",
    "abs(x1) == 1 and abs(x2) == 1",
    "not (x1 < 0)",
    "x1 == 0 and x2 == 0",
    "max(abs(x1), abs(x2)) < 1 and abs(x1) > abs(x2)",
    "x1 <= 0 or x1 >= 1",
    "(x1 < 0 or x2 < 0) and t > 1",
    "x1 < 0 or x2 < 0 and t > 1",
    "not not (x1 == 1)",
    "otherwise",
];

#[derive(Clone, Copy)]
enum Kind {
    Scalar,
    Set,
    Guard,
}

fn classify(src: &str) -> Kind {
    if parse_guard(src).is_ok() {
        Kind::Guard
    } else if parse_set(src).is_ok() {
        Kind::Set
    } else {
        Kind::Scalar
    }
}

fn reprint(src: &str, kind: Kind) -> Result<String, ParseError> {
    Ok(match kind {
        Kind::Scalar => parse_scalar(src)?.to_string(),
        Kind::Set => parse_set(src)?.to_string(),
        Kind::Guard => parse_guard(src)?.to_string(),
    })
}

#[test]
fn corpus_round_trips() {
    assert!(CORPUS.len() >= 50);
    for src in CORPUS {
        let kind = classify(src);
        assert_eq!(reprint(src, kind).unwrap(), *src, "round trip of {src}");
    }
}

#[test]
fn round_trip_is_whitespace_insensitive() {
    assert_eq!(
        parse_scalar("max(x1-1,0)").unwrap().to_string(),
        "max(x1 - 1, 0)"
    );
    assert_eq!(
        parse_set("{ -x1+x2 }+[ -1,1 ]").unwrap().to_string(),
        "{-x1 + x2} + [-1, 1]"
    );
}

#[test]
fn dropping_a_closing_paren_is_rejected() {
    let mut mutations = 0;
    for src in CORPUS {
        let kind = classify(src);
        for (i, _) in src.match_indices(')') {
            let mutated = format!("{}{}", &src[..i], &src[i + 1..]);
            assert!(reprint(&mutated, kind).is_err(), "accepted `{mutated}`");
            mutations += 1;
        }
    }
    assert!(mutations > 40);
}

fn realize(e: &SetExpr, env: &Env<'_>, rng: &mut ChaCha8Rng) -> f64 {
    let pick = |lo: f64, hi: f64, rng: &mut ChaCha8Rng| match rng.random_range(0..20) {
        0..=8 => lo,
        9..=17 => hi,
        _ => rng.random_range(lo..=hi),
    };
    match e {
        SetExpr::Singleton(v) => v.eval(env).unwrap(),
        SetExpr::Range(a, b) => pick(a.eval(env).unwrap(), b.eval(env).unwrap(), rng),
        SetExpr::Hull(a, b) => {
            let (a, b) = (a.eval(env).unwrap(), b.eval(env).unwrap());
            pick(a.min(b), a.max(b), rng)
        }
        SetExpr::Sum(a, b) => realize(a, env, rng) + realize(b, env, rng),
        SetExpr::Scale(c, s) => c.eval(env).unwrap() * realize(s, env, rng),
    }
}

#[test]
fn set_eval_matches_hull_of_realizations() {
    let exprs: Vec<SetExpr> = [
        "{-x1 + x2} + [-1, 1]",
        "{x2} + x1 * [-0.5, 0.5] + x2 * hull(0, sgn(x1))",
        "(x1 - t) * ([-1, 2] + hull(x2, -x2))",
        "-1 * ({1} + [0, 1]) + x1 * x2 * [-1, 1]",
    ]
    .iter()
    .map(|s| parse_set(s).unwrap())
    .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let t = rng.random_range(0.0..10.0);
        let env = Env::new(&x, t);
        for e in &exprs {
            let want = e.eval(&env).unwrap();
            let (lo, hi) = want.bounds().unwrap();
            let (mut slo, mut shi) = (f64::INFINITY, f64::NEG_INFINITY);
            for _ in 0..1000 {
                let v = realize(e, &env, &mut rng);
                slo = slo.min(v);
                shi = shi.max(v);
            }
            // every realization lies inside, and the extremes are attained
            assert!(slo >= lo - 1e-9 && shi <= hi + 1e-9);
            assert!((slo - lo).abs() <= 1e-9 && (shi - hi).abs() <= 1e-9, "{e}");
        }
    }
}
