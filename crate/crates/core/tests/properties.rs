use std::sync::Arc;

use proptest::prelude::*;

use hormander_lab::field::{lie_bracket, VectorField};
use hormander_lab::models::{ModelOperator, MODEL_NAMES};
use hormander_lab::modulus::ModulusOfContinuity;
use hormander_lab::polynomial::Term;
use hormander_lab::solver::{Coefficients, DiscreteOperator};

const DIM: usize = 3;

fn field() -> impl Strategy<Value = VectorField> {
    let term = (prop::collection::vec(0u32..=2, DIM), -2.0..2.0f64)
        .prop_map(|(exponents, coeff)| Term { exponents, coeff });
    prop::collection::vec(prop::collection::vec(term, 0..3), DIM)
        .prop_map(|c| VectorField::from_terms(DIM, &c).unwrap())
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, DIM)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bracket_is_antisymmetric(x in field(), y in field(), p in point()) {
        let xy = lie_bracket(&x, &y).unwrap().eval(&p);
        let yx: Vec<f64> = lie_bracket(&y, &x).unwrap().eval(&p).iter().map(|v| -v).collect();
        prop_assert!(close(&xy, &yx, 1e-12));
    }

    #[test]
    fn jacobi_identity(x in field(), y in field(), z in field(), p in point()) {
        let b = |a: &VectorField, c: &VectorField| lie_bracket(a, c).unwrap();
        let sum = b(&x, &b(&y, &z)).add(&b(&y, &b(&z, &x))).add(&b(&z, &b(&x, &y)));
        let scale = [b(&x, &b(&y, &z)), b(&y, &b(&z, &x))]
            .iter()
            .flat_map(|f| f.eval(&p))
            .fold(1.0, |m: f64, v| m.max(v.abs()));
        prop_assert!(sum.eval(&p).iter().all(|v| v.abs() <= 1e-10 * scale));
    }

    #[test]
    fn log_inverts_exp(k in 0usize..4, h in prop::collection::vec(-0.28..0.28f64, 4), base in prop::collection::vec(-0.5..0.5f64, 4)) {
        let m = ModelOperator::by_name(MODEL_NAMES[k]).unwrap();
        let n = m.dimension();
        let chart = m.chart_at(&base[..n]).unwrap();
        let z = chart.e_map(&h[..n]).unwrap();
        let back = chart.log_map(&z).unwrap();
        prop_assert!(close(&back, &h[..n], 1e-8));
    }

    #[test]
    fn gauge_is_homogeneous(k in 0usize..4, h in prop::collection::vec(-1.0..1.0f64, 4), r in 0.05..4.0f64) {
        let m = ModelOperator::by_name(MODEL_NAMES[k]).unwrap();
        let n = m.dimension();
        let chart = m.chart_at(&m.origin()).unwrap();
        let g = chart.gauge(&h[..n]);
        let gr = chart.gauge(&chart.dilate_coords(r, &h[..n]));
        prop_assert!((gr - r * g).abs() <= 1e-12 * (1.0 + gr));
    }

    #[test]
    fn distance_scales_under_dilation(h in prop::collection::vec(-0.2..0.2f64, 3), r in 0.25..2.0f64) {
        let m = ModelOperator::by_name("kolmogorov").unwrap();
        let chart = m.chart_at(&m.origin()).unwrap();
        let zeta = chart.e_map(&h).unwrap();
        let d = chart.quasi_distance(&zeta).unwrap();
        let dr = chart.quasi_distance(&chart.dilate(r, &zeta).unwrap()).unwrap();
        prop_assert!((dr - r * d).abs() <= 1e-9 * (1.0 + dr));
    }

    #[test]
    fn dini_integral_is_additive(alpha in 0.05..1.0f64, a in 0.0..0.3f64, b in 0.3..0.6f64, c in 0.6..1.0f64) {
        for m in [ModulusOfContinuity::Power { alpha }, ModulusOfContinuity::Log] {
            let a = if matches!(m, ModulusOfContinuity::Log) { a + 1e-3 } else { a };
            let whole = m.dini_integral(a, c).unwrap().finite().unwrap();
            let parts = m.dini_integral(a, b).unwrap().finite().unwrap()
                + m.dini_integral(b, c).unwrap().finite().unwrap();
            prop_assert!((whole - parts).abs() <= 1e-12 * (1.0 + whole));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn discrete_solve_is_linear(a in -2.0..2.0f64, b in -2.0..2.0f64, w in 0.5..3.0f64) {
        let m = ModelOperator::by_name("kolmogorov").unwrap();
        let coeffs = Coefficients::Constant(m.coefficients.clone());
        let op = DiscreteOperator::assemble(&m, &coeffs, &m.origin(), 0.5, 4).unwrap();
        let phi1 = move |p: &[f64]| (w * p[0]).sin() + p[2];
        let phi2 = |p: &[f64]| p[1] * p[1];
        let g = |p: &[f64]| p[0].cos();
        let u1 = op.solve(Arc::new(phi1), &g).unwrap();
        let u2 = op.solve(Arc::new(phi2), &|_: &[f64]| 0.0).unwrap();
        let mix = op
            .solve(Arc::new(move |p: &[f64]| a * phi1(p) + b * phi2(p)), &|p: &[f64]| a * g(p))
            .unwrap();
        for i in 0..op.grid().len() {
            let expect = a * u1.value(i) + b * u2.value(i);
            prop_assert!((mix.value(i) - expect).abs() <= 1e-7 * (1.0 + expect.abs()));
        }
    }
}
