use incred::derivative::{baseline_bc, baseline_ps, u_generalized_derivative, Extended};
use incred::fixtures;
use incred::interval::{Interval, IntervalBox};
use incred::reduction::{reduce_box, reduce_collection, tabulate_reduction};

fn bx(axes: &[(f64, f64)]) -> IntervalBox {
    IntervalBox::new(
        axes.iter()
            .map(|&(l, h)| Interval::new(l, h).unwrap())
            .collect(),
    )
}

#[test]
fn example1_table_csv() {
    let sys = fixtures::load("example1").unwrap();
    let probes: Vec<(Vec<f64>, f64)> = sys.probes.iter().map(|x| (x.clone(), 0.0)).collect();
    let table = tabulate_reduction(&sys.f, &sys.u, &probes).unwrap();
    let mut buf = Vec::new();
    table.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + probes.len());
    assert!(lines[0].starts_with("x1,"), "{}", lines[0]);
    assert!(!text.contains("-0,"), "{text}");
    let again = {
        let mut b = Vec::new();
        tabulate_reduction(&sys.f, &sys.u, &probes)
            .unwrap()
            .write_csv(&mut b)
            .unwrap();
        String::from_utf8(b).unwrap()
    };
    assert_eq!(text, again);
}

#[test]
fn example1_derivatives() {
    let sys = fixtures::load("example1").unwrap();
    let d = |x: f64| {
        u_generalized_derivative(&sys.v, &sys.f, &sys.u, &[x], 0.0)
            .unwrap()
            .value
    };
    assert_eq!(d(1.0), Extended::Real(0.0));
    assert_eq!(d(-1.0), Extended::Real(0.0));
    assert_eq!(d(0.0), Extended::NegInf);
    assert_eq!(d(2.0), Extended::Real(4.0));
    assert_eq!(d(-2.0), Extended::Real(4.0));
    assert_eq!(d(0.5), Extended::Real(-1.0));
}

#[test]
fn reduce_box_pins_constrained_axes() {
    let f = bx(&[(-1.0, 1.0), (-3.0, -1.0)]);
    let grad = bx(&[(0.0, 2.0), (0.0, 0.0), (0.0, 0.0)]);
    let r = reduce_box(&f, &grad).unwrap();
    assert_eq!(r.result, bx(&[(0.0, 0.0), (-3.0, -1.0)]));
    assert_eq!(r.constrained_axes, vec![0]);

    let f = bx(&[(1.0, 2.0)]);
    let r = reduce_box(&f, &bx(&[(-1.0, 1.0), (0.0, 0.0)])).unwrap();
    assert!(r.result.is_empty());

    let r = reduce_box(&f, &bx(&[(3.0, 3.0), (0.0, 1.0)])).unwrap();
    assert!(r.result.is_empty());
    assert!(r.time_obstruction);
}

#[test]
fn example2_guards_and_interior() {
    let sys = fixtures::load("example2").unwrap();
    let red = |x: &[f64]| reduce_collection(&sys.f, &sys.u, x, 0.0).unwrap();
    assert!(red(&[1.0, 0.5]).is_empty());
    assert!(red(&[-0.5, 1.0]).is_empty());
    assert!(red(&[0.5, 0.5]).is_singleton());
    let d = u_generalized_derivative(&sys.v, &sys.f, &sys.u, &[0.5, 0.5], 0.0).unwrap();
    assert!((d.value.real().unwrap() + 0.5).abs() < 1e-12);
    assert!(!d.empty_reduction);
    let d = u_generalized_derivative(&sys.v, &sys.f, &sys.u, &[1.0, 1.0], 0.0).unwrap();
    assert!(d.value.is_neg_inf() && d.empty_reduction);
}

#[test]
fn baselines_see_through_the_guard() {
    let sys = fixtures::load("example2").unwrap();
    let bc = baseline_bc(&sys.v, &sys.f, &[1.0, 1.0], 0.0).unwrap();
    let ps = baseline_ps(&sys.v, &sys.f, &[1.0, 1.0], 0.0).unwrap();
    assert_eq!(bc.value, Extended::Real(0.0));
    assert_eq!(ps.value, Extended::Real(0.0));
    let iv = ps.interval.unwrap();
    assert_eq!(iv.bounds(), Some((-4.0, 0.0)));
}

#[test]
fn empty_collection_leaves_f_unchanged() {
    let sys = fixtures::load("example3").unwrap();
    for x in sys.grid.as_ref().unwrap().nodes().iter().step_by(37) {
        assert_eq!(
            reduce_collection(&sys.f, &[], x, 0.0).unwrap(),
            sys.f.eval(x, 0.0).unwrap()
        );
    }
}

#[test]
fn smooth_collection_changes_nothing_off_zero_gradient() {
    let sys = fixtures::load("smooth_only").unwrap();
    for x in sys.grid.as_ref().unwrap().nodes() {
        let f = sys.f.eval(&x, 0.0).unwrap();
        let r = reduce_collection(&sys.f, &sys.u, &x, 0.0).unwrap();
        assert!(r.is_subset_of(&f).unwrap());
    }
}

#[test]
fn time_dependent_example_reduces_at_every_time() {
    let sys = fixtures::load("example4").unwrap();
    let grid = sys.grid.clone().unwrap();
    for &t in grid.time() {
        assert!(reduce_collection(&sys.f, &sys.u, &[1.0, 0.5], t)
            .unwrap()
            .is_empty());
        let d = u_generalized_derivative(&sys.v, &sys.f, &sys.u, &[0.5, -0.5], t).unwrap();
        assert!(d.value.real().unwrap() < 0.0, "t = {t}: {}", d.value);
    }
}
