//! Cut-off functions `eta_R` adapted to the cylinders `H_R`.

use crate::chart::{ExpChart, LogOptions};
use crate::error::Result;
use crate::field::VectorField;
use crate::flow::flow;

/// Quintic smootherstep profile: 1 on `[0, 3/4]`, 0 on `[1, inf)`, `C^2`.
pub fn chi(t: f64) -> f64 {
    if t <= 0.75 {
        1.0
    } else if t >= 1.0 {
        0.0
    } else {
        let s = (1.0 - t) * 4.0;
        s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    }
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Smooth homogeneous gauge `(sum |h_i|^{2D/deg_i})^{1/2D}`, `D = lcm(deg)`.
///
/// It is bounded by `sum |h_i|^{1/deg_i}`, so `eta_R = 1` on `H_{3R/4}`.
#[derive(Clone, Debug)]
pub struct SmoothGauge {
    exponents: Vec<i32>,
    root: f64,
}

impl SmoothGauge {
    pub fn new(degrees: &[u32]) -> Self {
        let d = degrees.iter().fold(1, |acc, &k| acc / gcd(acc, k) * k);
        Self {
            exponents: degrees.iter().map(|&k| (2 * d / k) as i32).collect(),
            root: 1.0 / (2 * d) as f64,
        }
    }

    pub fn eval(&self, h: &[f64]) -> f64 {
        h.iter()
            .zip(&self.exponents)
            .map(|(v, &e)| v.powi(e))
            .sum::<f64>()
            .powf(self.root)
    }
}

#[derive(Clone, Debug)]
pub struct Cutoff {
    chart: ExpChart,
    radius: f64,
    gauge: SmoothGauge,
}

impl Cutoff {
    pub fn new(chart: ExpChart, radius: f64) -> Self {
        let gauge = SmoothGauge::new(&chart.degrees());
        Self {
            chart,
            radius,
            gauge,
        }
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn chart(&self) -> &ExpChart {
        &self.chart
    }

    pub fn eval_coords(&self, h: &[f64]) -> f64 {
        chi(self.gauge.eval(h) / self.radius)
    }

    pub fn eval(&self, zeta: &[f64]) -> Result<f64> {
        Ok(self.eval_coords(&self.chart.log_map_with(zeta, &self.log_options(None))?))
    }

    fn scales(&self) -> Vec<f64> {
        self.chart
            .degrees()
            .iter()
            .map(|&d| self.radius.powi(d as i32))
            .collect()
    }

    fn log_options(&self, guess: Option<Vec<f64>>) -> LogOptions {
        LogOptions {
            guess,
            scales: Some(self.scales()),
            jacobian: None,
        }
    }

    /// First and second derivatives of `eta_R` along the flow of `field`
    /// (of degree `degree`) at `E(h)`, by central differences.
    pub fn field_derivatives(
        &self,
        field: &VectorField,
        degree: u32,
        h: &[f64],
    ) -> Result<(f64, f64)> {
        let p = self.chart.e_map_unchecked(h)?;
        self.field_derivatives_at(field, degree, h, &p)
    }

    /// As [`Cutoff::field_derivatives`] with `p = E(h)` already known.
    pub fn field_derivatives_at(
        &self,
        field: &VectorField,
        degree: u32,
        h: &[f64],
        p: &[f64],
    ) -> Result<(f64, f64)> {
        let eps = 1e-3 * self.radius.powi(degree as i32);
        let settings = self.chart.settings();
        let opts = self.log_options(Some(h.to_vec()));
        let plus = flow(field, eps, p, settings)?;
        let minus = flow(field, -eps, p, settings)?;
        let ep = self.eval_coords(&self.chart.log_map_with(&plus, &opts)?);
        let em = self.eval_coords(&self.chart.log_map_with(&minus, &opts)?);
        let e0 = self.eval_coords(h);
        Ok(((ep - em) / (2.0 * eps), (ep - 2.0 * e0 + em) / (eps * eps)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_is_c2() {
        assert_eq!(chi(0.0), 1.0);
        assert_eq!(chi(0.75), 1.0);
        assert_eq!(chi(1.0), 0.0);
        let d = 1e-6;
        for t in [0.75, 1.0] {
            let slope = (chi(t + d) - chi(t - d)) / (2.0 * d);
            assert!(slope.abs() < 1e-6);
        }
        assert!((chi(0.875) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gauge_is_homogeneous_and_below_sum() {
        let g = SmoothGauge::new(&[1, 2, 3]);
        let h = [0.3, -0.02, 0.004];
        let r = 0.37;
        let hr = [h[0] * r, h[1] * r * r, h[2] * r * r * r];
        assert!((g.eval(&hr) - r * g.eval(&h)).abs() < 1e-14);
        let sum: f64 = h[0].abs() + h[1].abs().sqrt() + h[2].abs().cbrt();
        assert!(g.eval(&h) <= sum);
    }
}
