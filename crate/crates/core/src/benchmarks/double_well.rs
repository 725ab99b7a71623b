//! Chain of overdamped particles in a quartic double-well potential with
//! nearest-neighbour springs, integrated by Euler–Maruyama.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DoubleWellParams {
    pub particles: usize,
    pub a: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub n_snap: usize,
    pub q0_range: (f64, f64),
    pub sigma_range: (f64, f64),
    pub kappa_range: (f64, f64),
}

impl Default for DoubleWellParams {
    fn default() -> Self {
        Self {
            particles: 5,
            a: 1.0,
            dt: 0.005,
            n_steps: 1000,
            n_snap: 4,
            q0_range: (-1.5, 1.5),
            sigma_range: (0.3, 2.0),
            kappa_range: (0.0, 3.0),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DoubleWellSystem {
    pub params: DoubleWellParams,
}

impl DoubleWellSystem {
    pub fn new(params: DoubleWellParams) -> Result<Self> {
        let p = &params;
        if p.particles == 0 || p.n_snap == 0 || p.n_steps == 0 || p.n_steps % p.n_snap != 0 {
            return Err(Error::InvalidParameter(format!(
                "need particles, snapshots > 0 and n_steps divisible by n_snap, got {p:?}"
            )));
        }
        if !(p.dt > 0.0) {
            return Err(Error::InvalidParameter("dt must be positive".into()));
        }
        for (lo, hi) in [p.q0_range, p.sigma_range, p.kappa_range] {
            if !(lo < hi) {
                return Err(Error::InvalidRange { lo, hi });
            }
        }
        if p.sigma_range.0 <= 0.0 {
            return Err(Error::InvalidParameter("noise range must be positive".into()));
        }
        Ok(Self { params })
    }

    pub fn input_dim(&self) -> usize {
        self.params.particles + 2
    }

    pub fn output_dim(&self) -> usize {
        self.params.particles * self.params.n_snap
    }

    /// `(q(0), sigma, kappa)`.
    pub fn sample_input(&self, rng: &mut RngStream) -> Result<Vec<f64>> {
        let p = &self.params;
        let mut x = Vec::with_capacity(self.input_dim());
        for _ in 0..p.particles {
            x.push(rng.uniform(p.q0_range.0, p.q0_range.1)?);
        }
        x.push(rng.uniform(p.sigma_range.0, p.sigma_range.1)?);
        x.push(rng.uniform(p.kappa_range.0, p.kappa_range.1)?);
        Ok(x)
    }

    /// Flattened snapshots `[snapshot][particle]`, taken every
    /// `n_steps / n_snap` steps.
    pub fn simulate(&self, q0: &[f64], sigma: f64, kappa: f64, rng: &mut RngStream) -> Result<Vec<f64>> {
        let p = &self.params;
        if q0.len() != p.particles {
            return Err(Error::Dimension {
                expected: p.particles,
                got: q0.len(),
            });
        }
        if !(sigma >= 0.0) {
            return Err(Error::Domain(format!("noise intensity must be nonnegative, got {sigma}")));
        }
        let n = p.particles;
        let mut q = q0.to_vec();
        let mut drift = vec![0.0; n];
        let noise = sigma * p.dt.sqrt();
        let every = p.n_steps / p.n_snap;
        let mut out = Vec::with_capacity(self.output_dim());
        for step in 1..=p.n_steps {
            for i in 0..n {
                let mut f = p.a * (q[i] - q[i] * q[i] * q[i]);
                if i > 0 {
                    f += kappa * (q[i - 1] - q[i]);
                }
                if i + 1 < n {
                    f += kappa * (q[i + 1] - q[i]);
                }
                drift[i] = f;
            }
            for i in 0..n {
                q[i] += drift[i] * p.dt + noise * rng.std_normal();
            }
            if step % every == 0 {
                out.extend_from_slice(&q);
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("trajectory diverged".into()));
        }
        Ok(out)
    }

    pub fn label(&self, x: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
        let n = self.params.particles;
        if x.len() != n + 2 {
            return Err(Error::Dimension {
                expected: n + 2,
                got: x.len(),
            });
        }
        self.simulate(&x[..n], x[n], x[n + 1], rng)
    }

    /// Single-particle potential `a (q^4 / 4 - q^2 / 2)`.
    pub fn potential(&self, q: f64) -> f64 {
        self.params.a * (0.25 * q.powi(4) - 0.5 * q * q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single() -> DoubleWellSystem {
        DoubleWellSystem::new(DoubleWellParams {
            particles: 1,
            ..DoubleWellParams::default()
        })
        .unwrap()
    }

    #[test]
    fn shapes() {
        let s = DoubleWellSystem::new(DoubleWellParams::default()).unwrap();
        assert_eq!(s.input_dim(), 7);
        assert_eq!(s.output_dim(), 20);
        let mut rng = RngStream::new(0, 0);
        let x = s.sample_input(&mut rng).unwrap();
        assert!(x[5] >= 0.3 && x[5] < 2.0 && x[6] >= 0.0 && x[6] < 3.0);
        assert_eq!(s.label(&x, &mut rng).unwrap().len(), 20);
    }

    #[test]
    fn fixed_point_is_stable_without_noise() {
        let s = DoubleWellSystem::new(DoubleWellParams::default()).unwrap();
        let y = s.simulate(&[1.0; 5], 1e-6, 0.0, &mut RngStream::new(1, 0)).unwrap();
        assert!(y.iter().all(|v| (v - 1.0).abs() < 1e-4));
    }

    #[test]
    fn noiseless_motion_descends_the_potential() {
        let s = single();
        let mut rng = RngStream::new(2, 0);
        for _ in 0..200 {
            let q0 = rng.uniform(-1.5, 1.5).unwrap();
            let y = s.simulate(&[q0], 1e-6, 0.0, &mut rng).unwrap();
            assert!(s.potential(y[3]) <= s.potential(q0) + 1e-6);
        }
    }

    #[test]
    fn escape_grows_with_noise() {
        let s = single();
        let mut rng = RngStream::new(3, 0);
        let frac = |sigma: f64, rng: &mut RngStream| {
            (0..500)
                .filter(|_| s.simulate(&[-0.5], sigma, 0.0, rng).unwrap()[3] > 0.0)
                .count() as f64
                / 500.0
        };
        let low = frac(0.3, &mut rng);
        let high = frac(1.0, &mut rng);
        assert!(low < 0.02, "{low}");
        assert!(high > 0.25, "{high}");
    }

    #[test]
    fn invalid_configuration() {
        let bad = DoubleWellParams {
            n_steps: 1001,
            ..DoubleWellParams::default()
        };
        assert!(DoubleWellSystem::new(bad).is_err());
        let s = single();
        assert!(s.simulate(&[0.0, 0.0], 1.0, 0.0, &mut RngStream::new(0, 0)).is_err());
    }
}
