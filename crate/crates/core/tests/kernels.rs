use hormander_lab::expr::ScalarExpr;
use hormander_lab::kernel_checks::*;
use hormander_lab::models::ModelOperator;

fn model(name: &str) -> ModelOperator {
    ModelOperator::by_name(name).unwrap()
}

#[test]
fn gamma_solves_the_equation() {
    for name in ["kolmogorov", "heat1", "heat"] {
        let r = gamma_residual_oracle(&model(name), 40, 5).unwrap();
        assert!(r.pass, "{name}: {}", r.max_relative_residual);
    }
}

#[test]
fn gamma_inverts_the_operator() {
    for name in ["kolmogorov", "heat1"] {
        let r = convolution_oracle(&model(name), 10, 9).unwrap();
        assert!(r.pass, "{name}: {}", r.max_relative_error);
    }
}

#[test]
fn gamma_power_bounds_are_stable() {
    let r = gamma_bound_check(&model("kolmogorov"), 400, 1).unwrap();
    assert_eq!(r.homogeneous_dimension, 6);
    assert!(r.pass, "{:?}", r.families);
}

#[test]
fn annulus_quantities_scale() {
    let r = annulus_estimates(&model("kolmogorov"), &[1.0, 0.5, 0.25, 0.125], 3).unwrap();
    assert!(r.pass, "{}", r.max_spread);
}

#[test]
fn representation_reproduces_solutions() {
    for (name, f) in [("kolmogorov", "x"), ("heat1", "x^2 + 2*t"), ("heat1", "1")] {
        let m = model(name);
        let u = ScalarExpr::parse(f, &m.names()).unwrap();
        let r = representation_check(&m, &u, f, 0.5, DEFAULT_Q_RES).unwrap();
        assert!(r.pass, "{name} {f}: {} {}", r.max_relative_error, r.halving_change);
    }
}

#[test]
fn potential_second_derivatives_bounded() {
    for name in ["kolmogorov", "heat1"] {
        let r = second_derivative_potential_bound(&model(name), &[1.0, 0.5, 0.25], 2).unwrap();
        assert!(r.pass, "{name}: {}", r.max_spread);
    }
}
