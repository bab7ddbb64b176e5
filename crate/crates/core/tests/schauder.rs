use std::sync::Arc;

use hormander_lab::error::LabError;
use hormander_lab::expr::ScalarExpr;
use hormander_lab::models::{ModelOperator, MODEL_NAMES};
use hormander_lab::modulus::ModulusOfContinuity;
use hormander_lab::schauder::*;
use hormander_lab::solver::{Coefficients, DiscreteOperator};

fn model(name: &str) -> ModelOperator {
    ModelOperator::by_name(name).unwrap()
}

fn modulus(spec: &str) -> ModulusOfContinuity {
    ModulusOfContinuity::parse(spec).unwrap()
}

#[test]
fn max_principle_holds_on_every_model() {
    for name in MODEL_NAMES {
        let r = max_principle_check(&model(name), 0.5, 6, 20, 11).unwrap();
        assert_eq!(r.violations, 0, "{name}");
        assert!(r.worst_ratio <= 1.0 + 1e-9);
    }
}

#[test]
fn max_principle_simple_cases() {
    let m = model("kolmogorov");
    let a = Coefficients::Constant(m.coefficients.clone());
    let op = DiscreteOperator::assemble(&m, &a, &m.origin(), 0.5, 8).unwrap();
    let zero = op.solve(Arc::new(|_: &[f64]| 0.0), &|_: &[f64]| 0.0).unwrap();
    assert_eq!(zero.sup_abs(), 0.0);
    let unit = op.solve(Arc::new(|_: &[f64]| 0.0), &|p: &[f64]| (3.0 * p[0]).sin()).unwrap();
    assert!(unit.sup_abs() <= 0.25 + GRID_TOL);
}

#[test]
fn constant_forcing_gives_zero_iteration() {
    let m = model("kolmogorov");
    let f = Forcing::expression(&m, "3", ModulusOfContinuity::Zero).unwrap();
    let l = wang_iteration(&m, &f, 3, 6).unwrap();
    for r in &l.records {
        assert_eq!(r.sup_v, 0.0);
        assert_eq!(r.second_increment, 0.0);
        assert_eq!(r.origin_increment, 0.0);
    }
}

#[test]
fn iteration_decays_at_the_predicted_rates() {
    let m = model("kolmogorov");
    let f = Forcing::radial(&m, modulus("pow:0.5")).unwrap();
    let l = wang_iteration(&m, &f, 6, DEFAULT_GRID).unwrap();
    assert_eq!(l.records.len(), 7);
    assert!(l.bounds_hold);
    assert!((l.decay_exponent.unwrap() - 2.5).abs() <= 0.2);
    assert!((l.second_increment_exponent.unwrap() - 0.5).abs() <= 0.2);
    assert!((l.first_increment_exponent.unwrap() - 1.5).abs() <= 0.2);
    assert!(l.telescoping_error < 1e-12);
    assert!(l.dini_constant.unwrap().is_finite());
    assert!(l.taylor_constant.unwrap().is_finite());
    assert!(l.saturation_ratio < 0.05);
}

#[test]
fn non_dini_forcing_has_no_dini_constant() {
    let m = model("heat1");
    let f = Forcing::radial(&m, ModulusOfContinuity::Log).unwrap();
    let l = wang_iteration(&m, &f, 4, 8).unwrap();
    assert!(l.dini_constant.is_none());
    assert!(l.taylor_constant.is_none());
    assert!(l.bounds_hold);
    // increments at the origin keep shrinking more slowly than any power
    let last = l.records.last().unwrap();
    assert!(last.origin_increment > 0.0);
}

#[test]
fn constant_coefficients_reduce_to_the_plain_iteration() {
    let m = model("kolmogorov");
    let f = Forcing::radial(&m, modulus("pow:0.5")).unwrap();
    let a = CoefficientField::parse(&m, "1", ModulusOfContinuity::Zero).unwrap();
    let v = variable_coefficient_experiment(&m, &a, &f, "x^2+2*t", (0.5, 2.0), 3, 6, 6).unwrap();
    let w = wang_iteration(&m, &f, 3, 6).unwrap();
    for (x, y) in v.ledger.records.iter().zip(&w.records) {
        assert_eq!(x.sup_v, y.sup_v);
        assert_eq!(x.second_at_origin, y.second_at_origin);
    }
}

#[test]
fn variable_coefficient_range_and_decay() {
    let m = model("kolmogorov");
    let a = CoefficientField::parse(&m, "1+x^2/4", modulus("lip")).unwrap();
    let f = Forcing::radial(&m, ModulusOfContinuity::Zero).unwrap();
    let n_ref = 8;
    let v = variable_coefficient_experiment(&m, &a, &f, "x^2+2*t", (0.5, 2.0), 4, 6, n_ref).unwrap();
    // nodes reach |x| = (n-1)/n; the open cylinder has 1 <= a < 5/4
    let top = (n_ref as f64 - 1.0) / n_ref as f64;
    assert!((v.lambda - 1.0).abs() < 1e-12);
    assert!((v.big_lambda - (1.0 + top * top / 4.0)).abs() < 1e-12);
    assert!(v.eta > 0.0);
    // the defect vanishes quadratically at 0, faster than the declared modulus
    assert!(v.ledger.bounds_hold);
    assert!(v.constants.windows(2).all(|c| c[1] <= c[0] * 1.01));
}

#[test]
fn ellipticity_violation_names_the_node() {
    let m = model("kolmogorov");
    let a = CoefficientField::parse(&m, "x", modulus("lip")).unwrap();
    let f = Forcing::radial(&m, ModulusOfContinuity::Zero).unwrap();
    match variable_coefficient_experiment(&m, &a, &f, "0", (0.5, 2.0), 2, 4, 4) {
        Err(LabError::Ellipticity { node, eigenvalue, .. }) => {
            assert_eq!(node.len(), 3);
            assert!(eigenvalue < 0.5);
        }
        other => panic!("expected an ellipticity error, got {:?}", other.err()),
    }
}

#[test]
fn dini_modulus_is_linear_for_smooth_solutions() {
    let m = model("heat1");
    let f = Forcing::radial(&m, ModulusOfContinuity::Zero).unwrap();
    let r = dini_modulus_of_second_derivatives(&m, &f, "x^3+6*x*t", 48, 6, 5).unwrap();
    assert!(r.pass, "{:?}", r.fitted_exponent);
    // the d sup|u| term carries the whole bound
    assert!(r.bins.iter().all(|b| b.slack >= 0.0));
}

#[test]
fn dini_modulus_follows_the_forcing_exponent() {
    let m = model("heat1");
    let f = Forcing::radial(&m, modulus("pow:0.5")).unwrap();
    let r = dini_modulus_of_second_derivatives(&m, &f, "0", 64, 6, 5).unwrap();
    assert!(r.pass, "{:?}", r.fitted_exponent);
    assert!(r.fitted_constant > 0.0 && r.fitted_constant.is_finite());
}

#[test]
fn dini_binning_needs_enough_pairs() {
    let m = model("heat1");
    let f = Forcing::radial(&m, ModulusOfContinuity::Zero).unwrap();
    assert!(matches!(
        dini_modulus_of_second_derivatives(&m, &f, "0", 6, 12, 5),
        Err(LabError::Binning { .. })
    ));
}

#[test]
fn singular_exponent_recovers_mixtures() {
    let ds = [0.05, 0.08, 0.12, 0.18, 0.25];
    let ms: Vec<f64> = ds.iter().map(|d: &f64| 2.0 * d.powf(0.4) + 0.5 * d).collect();
    assert!((singular_exponent(&ds, &ms).unwrap() - 0.4).abs() < 0.01);
}

#[test]
fn mean_value_constant_is_scale_invariant() {
    let m = model("kolmogorov");
    let names = m.names();
    let pool = vec![
        PoolMember::Exact(ScalarExpr::parse("x", &names).unwrap()),
        PoolMember::Exact(ScalarExpr::parse("1", &names).unwrap()),
    ];
    let r = mean_value_check(&m, &pool, &[1.0, 0.5, 0.25], 6).unwrap();
    assert!(r.pass, "{}", r.spread);
    let constant = r.rows.iter().find(|row| row.function == "1").unwrap();
    assert!(constant.constant < 1e-9);
    // halving R doubles the Lipschitz prefactor
    let x: Vec<_> = r.rows.iter().filter(|row| row.function == "x").collect();
    assert!((x[1].prefactor / x[0].prefactor - 2.0).abs() < 1e-6);
}

#[test]
fn apriori_exponents_match_degrees() {
    let m = model("kolmogorov");
    let pool = default_pool(&m, 1, 2).unwrap();
    let r = apriori_derivative_check(&m, &pool, &[1.0, 0.5, 0.25], 6).unwrap();
    assert!(r.pass);
    let bracket = r.directions.iter().find(|d| d.degree == 3).unwrap();
    assert!((bracket.exponent.unwrap() + 3.0).abs() <= 0.3);
}

#[test]
fn apriori_constant_has_zero_derivatives() {
    let m = model("heat1");
    let pool = vec![PoolMember::Exact(ScalarExpr::parse("2", &m.names()).unwrap())];
    let r = apriori_derivative_check(&m, &pool, &[1.0, 0.5], 8).unwrap();
    assert!(r.entries.iter().all(|e| e.sup_derivative < 1e-6 * e.sup_u));
}
