use std::sync::Arc;

use hormander_lab::models::{ModelOperator, MODEL_NAMES};
use hormander_lab::solver::*;

fn operator(name: &str, r: f64, n: usize) -> DiscreteOperator {
    let m = ModelOperator::by_name(name).unwrap();
    let a = Coefficients::Constant(m.coefficients.clone());
    DiscreteOperator::assemble(&m, &a, &m.origin(), r, n).unwrap()
}

#[test]
fn constant_data_gives_constant_solution() {
    for name in MODEL_NAMES {
        let op = operator(name, 1.0, 4);
        let sol = op.solve(Arc::new(|_: &[f64]| 1.0), &|_: &[f64]| 0.0).unwrap();
        for v in sol.values() {
            assert!((v - 1.0).abs() < 1e-9, "{name}: {v}");
        }
        assert!(sol.residual() < SOLVER_TOL);
    }
}

#[test]
fn caloric_function_converges_at_second_order() {
    // e^{-t} sin x solves u_xx - u_t = 0
    let exact = |p: &[f64]| (-p[1]).exp() * p[0].sin();
    let err = |n: usize| {
        let op = operator("heat1", 1.0, n);
        let sol = op.solve(Arc::new(exact), &|_: &[f64]| 0.0).unwrap();
        let g = op.grid();
        (0..g.len())
            .map(|i| (sol.value(i) - exact(g.point(i))).abs())
            .fold(0.0, f64::max)
    };
    let (coarse, fine) = (err(8), err(16));
    let step: f64 = 1.0 / 8.0;
    assert!(coarse < step * step, "{coarse}");
    assert!(fine < coarse / 3.0, "{coarse} -> {fine}");
}

#[test]
fn quadratic_solutions_are_exact() {
    for (name, f) in [("heat", "x^2+y^2+4*t"), ("kolmogorov", "y-t*x"), ("heisenberg-time", "x3 + x1*x2")] {
        let m = ModelOperator::by_name(name).unwrap();
        let e = hormander_lab::expr::ScalarExpr::parse(f, &m.names()).unwrap();
        let op = operator(name, 0.5, 6);
        let e2 = e.clone();
        let sol = op.solve(Arc::new(move |p: &[f64]| e2.eval(p)), &|_: &[f64]| 0.0).unwrap();
        let g = op.grid();
        for i in 0..g.len() {
            assert!((sol.value(i) - e.eval(g.point(i))).abs() < 1e-9, "{name}");
        }
    }
}

#[test]
fn unit_source_obeys_the_parabolic_bound() {
    for r in [1.0, 0.5] {
        let op = operator("kolmogorov", r, 8);
        let sol = op.solve(Arc::new(|_: &[f64]| 0.0), &|_: &[f64]| 1.0).unwrap();
        assert!(sol.sup_abs() <= r * r * (1.0 + 1e-9), "{}", sol.sup_abs());
        // L u = 1 >= 0 with zero data: u <= 0
        assert!(sol.values().iter().all(|v| *v <= 1e-12));
    }
}

#[test]
fn value_at_interpolates_and_falls_back() {
    let op = operator("kolmogorov", 1.0, 6);
    // x + (y - t x) is linear in chart coordinates, so interpolation is exact
    let f = |p: &[f64]| p[0] + p[1] - p[2] * p[0];
    let sol = op.solve(Arc::new(f), &|_: &[f64]| 0.0).unwrap();
    for p in [[0.11, 0.003, -0.07], [0.3, -0.01, 0.02], [3.0, 0.0, 0.0]] {
        assert!((sol.value_at(&p) - f(&p)).abs() < 1e-9);
    }
}

#[test]
fn grid_refinement_scales_node_count() {
    let a = operator("kolmogorov", 1.0, 4).grid().len() as f64;
    let b = operator("kolmogorov", 1.0, 8).grid().len() as f64;
    // roughly n^Q with Q = 6
    let ratio = b / a;
    assert!(ratio > 30.0 && ratio < 90.0, "{ratio}");
}

#[test]
fn operator_is_reusable_across_data() {
    let op = operator("heat", 0.5, 6);
    let first = op.solve(Arc::new(|p: &[f64]| p[0]), &|_: &[f64]| 0.0).unwrap();
    let second = op.solve(Arc::new(|p: &[f64]| p[1]), &|_: &[f64]| 0.0).unwrap();
    let g = op.grid();
    for i in 0..g.len() {
        assert!((first.value(i) - g.point(i)[0]).abs() < 1e-9);
        assert!((second.value(i) - g.point(i)[1]).abs() < 1e-9);
    }
}
