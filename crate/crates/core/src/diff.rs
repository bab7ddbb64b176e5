//! Central differences along integral curves of vector fields.

use crate::error::Result;
use crate::field::VectorField;
use crate::flow::{flow, FlowSettings};

/// `X f(z)` from `f(exp(+-s X) z)`.
pub fn d1(
    x: &VectorField,
    f: &dyn Fn(&[f64]) -> f64,
    z: &[f64],
    s: f64,
    settings: &FlowSettings,
) -> Result<f64> {
    let p = flow(x, s, z, settings)?;
    let m = flow(x, -s, z, settings)?;
    Ok((f(&p) - f(&m)) / (2.0 * s))
}

/// `X X f(z)`, three-point stencil along the flow.
pub fn d2_same(
    x: &VectorField,
    f: &dyn Fn(&[f64]) -> f64,
    z: &[f64],
    s: f64,
    settings: &FlowSettings,
) -> Result<f64> {
    let p = flow(x, s, z, settings)?;
    let m = flow(x, -s, z, settings)?;
    Ok((f(&p) - 2.0 * f(z) + f(&m)) / (s * s))
}

/// `X_i X_j f(z)` by nesting; the three-point stencil when `i == j`.
pub fn d2(
    xi: &VectorField,
    xj: &VectorField,
    f: &dyn Fn(&[f64]) -> f64,
    z: &[f64],
    si: f64,
    sj: f64,
    settings: &FlowSettings,
) -> Result<f64> {
    if xi == xj {
        return d2_same(xi, f, z, si, settings);
    }
    let inner = |p: &[f64]| d1(xj, f, p, sj, settings).unwrap_or(f64::NAN);
    d1(xi, &inner, z, si, settings)
}
