//! Two output distributions on the unit circle with identical total variance
//! but different entropy: uniform on the circle, and an equal mixture of two
//! antipodal arcs of half-width `delta` around `+e1` and `-e1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceDemoReport {
    pub delta: f64,
    pub n_samples: usize,
    pub circle_trace_variance: f64,
    pub caps_trace_variance: f64,
    /// `log(support length)` of each distribution, in arc length.
    pub circle_entropy: f64,
    pub caps_entropy: f64,
    pub entropy_gap: f64,
    /// Spacing estimates of the same entropies from the samples.
    pub circle_entropy_mc: f64,
    pub caps_entropy_mc: f64,
    pub entropy_gap_mc: f64,
}

impl VarianceDemoReport {
    /// Variances agree with each other and with 1, entropies do not.
    pub fn passes(&self, var_tol: f64, gap_tol: f64) -> bool {
        (self.circle_trace_variance - 1.0).abs() <= var_tol
            && (self.caps_trace_variance - 1.0).abs() <= var_tol
            && (self.entropy_gap - (2.0 * PI).ln() + (4.0 * self.delta).ln()).abs() <= gap_tol
            && (self.entropy_gap_mc - self.entropy_gap).abs() <= 0.05
            && self.entropy_gap > 0.0
    }
}

fn trace_variance(points: &[[f64; 2]]) -> f64 {
    let n = points.len() as f64;
    let mut mean = [0.0; 2];
    let mut sq = 0.0;
    for p in points {
        mean[0] += p[0] / n;
        mean[1] += p[1] / n;
        sq += (p[0] * p[0] + p[1] * p[1]) / n;
    }
    sq - mean[0] * mean[0] - mean[1] * mean[1]
}

/// Vasicek m-spacing entropy estimate of a scalar sample.
pub(crate) fn spacing_entropy(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    let m = ((n as f64).sqrt().round() as usize).max(1);
    let mut acc = 0.0;
    for i in 0..n {
        let hi = values[(i + m).min(n - 1)];
        let lo = values[i.saturating_sub(m)];
        acc += (n as f64 / (2.0 * m as f64) * (hi - lo).max(f64::MIN_POSITIVE)).ln();
    }
    acc / n as f64
}

pub fn variance_failure_demo(delta: f64, n_samples: usize, rng: &mut RngStream) -> Result<VarianceDemoReport> {
    if !(delta > 0.0 && delta < PI / 2.0) {
        return Err(Error::InvalidParameter(format!("arc half-width {delta} outside (0, pi/2)")));
    }
    if n_samples < 2 {
        return Err(Error::InvalidParameter("need at least two samples".into()));
    }
    let mut circle = Vec::with_capacity(n_samples);
    let mut circle_arc = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let t = rng.uniform(0.0, 2.0 * PI)?;
        circle.push([t.cos(), t.sin()]);
        circle_arc.push(t);
    }
    let mut caps = Vec::with_capacity(n_samples);
    let mut caps_arc = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let cap = if rng.unit() < 0.5 { 0.0 } else { 1.0 };
        let offset = rng.uniform(-delta, delta)?;
        let t = cap * PI + offset;
        caps.push([t.cos(), t.sin()]);
        // arc-length position within the two-arc support
        caps_arc.push(cap * 2.0 * delta + offset + delta);
    }
    let circle_entropy = (2.0 * PI).ln();
    let caps_entropy = 2f64.ln() + (2.0 * delta).ln();
    let circle_entropy_mc = spacing_entropy(&mut circle_arc);
    let caps_entropy_mc = spacing_entropy(&mut caps_arc);
    Ok(VarianceDemoReport {
        delta,
        n_samples,
        circle_trace_variance: trace_variance(&circle),
        caps_trace_variance: trace_variance(&caps),
        circle_entropy,
        caps_entropy,
        entropy_gap: circle_entropy - caps_entropy,
        circle_entropy_mc,
        caps_entropy_mc,
        entropy_gap_mc: circle_entropy_mc - caps_entropy_mc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_variance_different_entropy() {
        let r = variance_failure_demo(PI / 8.0, 100_000, &mut RngStream::new(0, 0)).unwrap();
        assert!((r.circle_trace_variance - 1.0).abs() < 0.01);
        assert!((r.caps_trace_variance - 1.0).abs() < 0.01);
        assert!((r.entropy_gap - 4f64.ln()).abs() < 1e-12);
        assert!((r.entropy_gap_mc - r.entropy_gap).abs() < 0.02, "{r:?}");
        assert!(r.passes(0.01, 1e-3));
    }

    #[test]
    fn spacing_estimator_on_uniform() {
        let mut rng = RngStream::new(1, 0);
        let mut v: Vec<f64> = (0..50_000).map(|_| rng.uniform(0.0, 3.0).unwrap()).collect();
        assert!((spacing_entropy(&mut v) - 3f64.ln()).abs() < 0.02);
    }

    #[test]
    fn rejects_bad_width() {
        assert!(variance_failure_demo(0.0, 10, &mut RngStream::new(0, 0)).is_err());
        assert!(variance_failure_demo(2.0, 10, &mut RngStream::new(0, 0)).is_err());
    }
}
