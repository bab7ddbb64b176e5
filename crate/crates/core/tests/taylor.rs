use hormander_lab::expr::ScalarExpr;
use hormander_lab::models::ModelOperator;
use hormander_lab::polynomial::Polynomial;
use hormander_lab::taylor::*;
use rand::Rng;
use rand_xoshiro::rand_core::SeedableRng;
use rand_xoshiro::SplitMix64;

fn slope(model: &str, f: &str) -> RemainderReport {
    let m = ModelOperator::by_name(model).unwrap();
    let chart = m.chart_at(&m.origin()).unwrap();
    let u = ScalarExpr::parse(f, &m.names()).unwrap();
    remainder_order(&u, &chart, &default_radii(), 7, TaylorConvention::default()).unwrap()
}

#[test]
fn kolmogorov_remainder_orders() {
    for (f, lo, hi) in [
        ("sin(x)", 2.9, 3.3),
        ("y", 2.8, 3.2),
        ("exp(x+t)", 2.5, 3.3),
        ("x*y", 3.5, 4.3),
    ] {
        let r = slope("kolmogorov", f);
        let s = r.slope.unwrap();
        assert!(s > lo && s < hi, "{f}: slope {s}");
    }
}

#[test]
fn heisenberg_smooth_suite() {
    for f in ["sin(x1)*cos(x2)", "x3 + x1*x2", "exp(t - x3)"] {
        let r = slope("heisenberg-time", f);
        assert!(r.exact || r.slope.unwrap() > 2.5, "{f}: {:?}", r.slope);
    }
}

#[test]
fn degree_two_polynomials_are_exact() {
    let m = ModelOperator::by_name("kolmogorov").unwrap();
    let chart = m.chart_at(&m.origin()).unwrap();
    let x = Polynomial::variable(3, 0);
    let t = Polynomial::variable(3, 2);
    let one = Polynomial::constant(3, 1.0);
    let polys = [
        &x * &x,
        t.clone(),
        &(&(&one.scale(3.0) - &x) + &(&x * &x).scale(0.5)) + &t.scale(2.0),
    ];
    for p in &polys {
        let jet = jet_of_polynomial(m.generators(), p, &m.origin());
        let f = |q: &[f64]| p.eval(q);
        let r = remainder_order_with_jet(&f, &jet, &chart, &default_radii(), 7, TaylorConvention::default())
            .unwrap();
        assert!(r.exact, "{p}: {:?}", r.max_remainder);
    }
    // flow jets carry O(1e-8) difference noise but stay far below d^3
    let u = ScalarExpr::parse("x^2", &m.names()).unwrap();
    let jet = jet_by_flows(chart.generators(), &u, &m.origin(), JET_STEP, chart.settings()).unwrap();
    let v = taylor_eval(&jet, &chart, &[0.3, 0.1, -0.2], TaylorConvention::default()).unwrap();
    assert!((v - 0.09).abs() < 1e-9);
}

#[test]
fn heisenberg_vertical_coordinate_needs_chart_ordering() {
    let m = ModelOperator::by_name("heisenberg-time").unwrap();
    let chart = m.chart_at(&m.origin()).unwrap();
    let x3 = Polynomial::variable(4, 2);
    let jet = jet_of_polynomial(m.generators(), &x3, &m.origin());
    let zeta = [0.2, 0.3, 0.05, 0.0];
    let ordered = taylor_eval(&jet, &chart, &zeta, TaylorConvention::ChartOrdered).unwrap();
    let verbatim = taylor_eval(&jet, &chart, &zeta, TaylorConvention::Verbatim).unwrap();
    assert!((ordered - 0.05).abs() < 1e-14);
    assert!((verbatim - ordered - 0.5 * 0.2 * 0.3).abs() < 1e-14);
}

#[test]
fn exact_on_random_points_all_models() {
    // anisotropic degree <= 2 polynomials, exact jets
    let mut rng = SplitMix64::seed_from_u64(3);
    for model in ["heat", "kolmogorov", "heisenberg-time"] {
        let m = ModelOperator::by_name(model).unwrap();
        let n = m.dimension();
        let chart = m.chart_at(&m.origin()).unwrap();
        let v = |k: usize| Polynomial::variable(n, k);
        let time = v(n - 1);
        let x1 = v(0);
        let second = if model == "kolmogorov" { x1.clone() } else { v(1) };
        let mut u = &(&x1 * &second) + &time.scale(2.0);
        u = &u + &Polynomial::constant(n, 1.5);
        if model == "heisenberg-time" {
            u = &u + &v(2).scale(-3.0);
        }
        let jet = jet_of_polynomial(m.generators(), &u, &m.origin());
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let h: Vec<f64> = (0..n).map(|_| rng.random_range(-0.3..0.3)).collect();
            let zeta = chart.e_map(&h).unwrap();
            let t = taylor_eval(&jet, &chart, &zeta, TaylorConvention::default()).unwrap();
            worst = worst.max((u.eval(&zeta) - t).abs());
        }
        assert!(worst <= 1e-12, "{model}: {worst}");
    }
}

#[test]
fn jets_agree_symbolic_vs_flows() {
    let m = ModelOperator::by_name("heisenberg-time").unwrap();
    let x1 = Polynomial::variable(4, 0);
    let x3 = Polynomial::variable(4, 2);
    let t = Polynomial::variable(4, 3);
    let p = &(&(&x1 * &x3) + &(&t * &t)) + &(&x1 * &x1);
    let z = [0.1, -0.2, 0.3, 0.05];
    let a = jet_of_polynomial(m.generators(), &p, &z);
    let b = jet_by_flows(m.generators(), &|q: &[f64]| p.eval(q), &z, JET_STEP, &Default::default())
        .unwrap();
    assert!((a.u - b.u).abs() < 1e-12);
    assert!((a.drift - b.drift).abs() < 1e-6);
    for i in 0..2 {
        assert!((a.first[i] - b.first[i]).abs() < 1e-6);
        for j in 0..2 {
            assert!((a.second[i][j] - b.second[i][j]).abs() < 1e-6);
        }
    }
    // bracket identity on the jet
    assert!((a.bracket(1, 2) - x1.eval(&z)).abs() < 1e-12);
}

#[test]
fn half_order_drift_condition() {
    let m = ModelOperator::by_name("kolmogorov").unwrap();
    let samples: Vec<Vec<f64>> = (0..5)
        .map(|k| vec![0.1 * k as f64 - 0.2, 0.05, 0.0])
        .collect();
    let steps = hormander_lab::stats::log_space(1e-1, 1e-6, 6);
    let smooth = ScalarExpr::parse("sin(x)*exp(t) + x*y", &m.names()).unwrap();
    let r = c2l_mixed_check(&smooth, m.generators(), &samples, &steps, &Default::default()).unwrap();
    assert!(r.pass, "{:?}", r.sup_quotient);
    let lin = ScalarExpr::parse("x", &m.names()).unwrap();
    let r = c2l_mixed_check(&lin, m.generators(), &samples, &steps, &Default::default()).unwrap();
    assert!(r.sup_quotient.iter().all(|q| *q < 1e-8));
    let rough = ScalarExpr::parse("x*sqrt(abs(t))", &m.names()).unwrap();
    let r = c2l_mixed_check(&rough, m.generators(), &samples, &steps, &Default::default()).unwrap();
    assert!(!r.pass);
    assert!(*r.sup_quotient.last().unwrap() > 0.5);
}

#[test]
fn symbolic_jets_match_polynomial_jets() {
    let m = ModelOperator::by_name("heisenberg-time").unwrap();
    let x1 = Polynomial::variable(4, 0);
    let x3 = Polynomial::variable(4, 2);
    let t = Polynomial::variable(4, 3);
    let p = &(&(&x1 * &x3) + &(&t * &t)) + &(&x1 * &x1);
    let e = ScalarExpr::parse("x1*x3 + t^2 + x1^2", &m.names()).unwrap();
    let z = [0.1, -0.2, 0.3, 0.05];
    let a = jet_of_polynomial(m.generators(), &p, &z);
    let b = jet_of_expression(m.generators(), &e, &z).unwrap();
    assert!((a.drift - b.drift).abs() < 1e-14);
    for i in 0..2 {
        assert!((a.first[i] - b.first[i]).abs() < 1e-14);
        for j in 0..2 {
            assert!((a.second[i][j] - b.second[i][j]).abs() < 1e-14);
        }
    }
}

#[test]
fn text_polynomials_are_reproduced_at_a_thousand_points() {
    for (model, f) in [("kolmogorov", "1.5 + x^2 + 2*t - 3*x"), ("heat", "x*y + 2*t"), ("heisenberg-time", "x1*x2 - 3*x3 + t")] {
        let m = ModelOperator::by_name(model).unwrap();
        let chart = m.chart_at(&m.origin()).unwrap();
        let u = ScalarExpr::parse(f, &m.names()).unwrap();
        let jet = jet_of_expression(m.generators(), &u, &m.origin()).unwrap();
        let r = sampled_taylor_residual(&u, &jet, &chart, 1000, 0.3, 3, TaylorConvention::default()).unwrap();
        assert!(r <= 1e-12, "{model}: {r}");
    }
}
