use hormander_lab::field::VectorField;
use hormander_lab::filtration::Generators;
use hormander_lab::flow::FlowSettings;
use hormander_lab::polynomial::Term;
use hormander_lab::geometry::*;
use hormander_lab::models::{ModelOperator, MODEL_NAMES};

fn model(name: &str) -> ModelOperator {
    ModelOperator::by_name(name).unwrap()
}

#[test]
fn commutator_of_flows_is_exact_on_step_two_models() {
    for name in ["kolmogorov", "heisenberg-time"] {
        let m = model(name);
        for z in [m.origin(), vec![0.2; m.dimension()]] {
            let r = bracket_flow_order(m.generators(), &z, &default_amplitudes(), &FlowSettings::default())
                .unwrap();
            // step-two groups: the commutator of flows is the bracket flow
            assert!(r.pass, "{name}: {:?}", r.min_slope);
            assert!(r.pairs.iter().all(|p| p.exact), "{name}");
        }
    }
}

fn term(exponents: &[u32], coeff: f64) -> Term {
    Term {
        exponents: exponents.to_vec(),
        coeff,
    }
}

#[test]
fn non_nilpotent_pair_shows_third_order() {
    // X1 = d_x, X2 = (1 + x^2) d_y: [X1, X2] = 2x d_y is not central
    let x1 = VectorField::from_terms(2, &[vec![term(&[0, 0], 1.0)], vec![]]).unwrap();
    let x2 = VectorField::from_terms(2, &[vec![], vec![term(&[0, 0], 1.0), term(&[2, 0], 1.0)]])
        .unwrap();
    let g = Generators::new(None, vec![x1, x2]).unwrap();
    for z in [[0.0, 0.0], [0.3, -0.2]] {
        let r = bracket_flow_order(&g, &z, &default_amplitudes(), &FlowSettings::default()).unwrap();
        let s = r.pairs[0].slope.unwrap();
        assert!(!r.pairs[0].exact);
        assert!((s - 3.0).abs() < 0.1, "{s}");
        assert!(r.pass);
    }
}

#[test]
fn charts_are_faithful_on_every_model() {
    for name in MODEL_NAMES {
        let m = model(name);
        let chart = m.chart_at(&m.origin()).unwrap();
        let r = chart_fidelity(&chart, 0.5, 200, 3).unwrap();
        assert!(r.pass, "{name}: {r:?}");
    }
}

#[test]
fn quasi_triangle_constant_is_moderate_and_reproducible() {
    for name in MODEL_NAMES {
        let m = model(name);
        let chart = m.chart_at(&m.origin()).unwrap();
        let a = quasi_metric_constants(&chart, 0.3, 1000, 9).unwrap();
        let b = quasi_metric_constants(&chart, 0.3, 1000, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.triangle_constant >= 0.0 && a.triangle_constant < 10.0, "{name}");
        assert!(a.symmetry_constant.is_finite());
    }
}

#[test]
fn dilation_scales_the_distance() {
    let m = model("heat");
    let chart = m.chart_at(&m.origin()).unwrap();
    let z = [0.05, -0.02, 0.003];
    let d = distance(&chart, &m.origin(), &z).unwrap();
    let dz = chart.dilate(2.0, &z).unwrap();
    let d2 = distance(&chart, &m.origin(), &dz).unwrap();
    assert!((d2 / d - 2.0).abs() < 0.01);
}
