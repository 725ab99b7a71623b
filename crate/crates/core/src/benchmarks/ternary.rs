//! Phase competition on a ternary composition simplex with process
//! parameters. Phase probabilities are a softmin over quadratic free
//! energies of the composition; each phase emits a Gaussian response.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{log_sum_exp, DiagGaussianMixture};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TernaryParams {
    pub phases: usize,
    pub tau_g: f64,
    pub n_proc: usize,
    pub c_scale: f64,
    pub h_raw_scale: f64,
    pub h_reg: f64,
    pub b_scale: f64,
    pub d_scale: f64,
    pub omega_scale: f64,
    pub w_scale: f64,
    pub e_scale: f64,
    pub f_mean: f64,
    pub f_std: f64,
    pub system_seed: u64,
}

impl Default for TernaryParams {
    fn default() -> Self {
        Self {
            phases: 4,
            tau_g: 0.08,
            n_proc: 6,
            c_scale: 6.0,
            h_raw_scale: 0.5,
            h_reg: 0.3,
            b_scale: 2.0,
            d_scale: 2.0,
            omega_scale: 2.0,
            w_scale: 1.0,
            e_scale: 0.5,
            f_mean: -1.0,
            f_std: 0.3,
            system_seed: 12,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Phase {
    pub hessian: Array2<f64>,
    pub bias: Array1<f64>,
    pub c: Array1<f64>,
    pub d: f64,
    pub omega: Array1<f64>,
    pub w: Array1<f64>,
    pub e: Array1<f64>,
    pub f: f64,
}

#[derive(Clone, Debug)]
pub struct TernarySystem {
    pub params: TernaryParams,
    pub phases: Vec<Phase>,
}

fn gaussian_vec(rng: &mut RngStream, n: usize, std: f64) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || rng.normal(0.0, std))
}

impl TernarySystem {
    pub fn new(params: TernaryParams) -> Result<Self> {
        if params.phases == 0 || !(params.tau_g > 0.0) {
            return Err(Error::InvalidParameter(format!("degenerate ternary system {params:?}")));
        }
        let p = &params;
        let mut rng = RngStream::new(p.system_seed, 0);
        let phases = (0..p.phases)
            .map(|_| {
                let r = Array2::from_shape_simple_fn((3, 3), || rng.normal(0.0, p.h_raw_scale));
                let hessian = r.dot(&r.t()) + Array2::<f64>::eye(3) * p.h_reg;
                Phase {
                    hessian,
                    bias: gaussian_vec(&mut rng, 3, p.b_scale),
                    c: gaussian_vec(&mut rng, 3, p.c_scale),
                    d: rng.normal(0.0, p.d_scale),
                    omega: gaussian_vec(&mut rng, 3, p.omega_scale),
                    w: gaussian_vec(&mut rng, p.n_proc, p.w_scale),
                    e: gaussian_vec(&mut rng, 3, p.e_scale),
                    f: rng.normal(p.f_mean, p.f_std),
                }
            })
            .collect();
        Ok(Self { params, phases })
    }

    pub fn input_dim(&self) -> usize {
        2 + self.params.n_proc
    }

    /// `(x_A, x_B, p_1, ..)` with the composition from a flat Dirichlet.
    pub fn sample_input(&self, rng: &mut RngStream) -> Result<Vec<f64>> {
        let comp = rng.dirichlet(&[1.0, 1.0, 1.0])?;
        let mut x = vec![comp[0], comp[1]];
        for _ in 0..self.params.n_proc {
            x.push(rng.uniform(-1.0, 1.0)?);
        }
        Ok(x)
    }

    pub fn free_energies(&self, x3: &[f64; 3]) -> Vec<f64> {
        let v = ndarray::ArrayView1::from(&x3[..]);
        self.phases
            .iter()
            .map(|ph| 0.5 * v.dot(&ph.hessian.dot(&v)) + ph.bias.dot(&v))
            .collect()
    }

    /// Phase posterior at a composition; independent of process parameters.
    pub fn phase_weights(&self, x3: &[f64; 3]) -> Vec<f64> {
        let logits: Vec<f64> = self
            .free_energies(x3)
            .iter()
            .map(|g| -g / self.params.tau_g)
            .collect();
        let lse = log_sum_exp(&logits);
        let mut w: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        w
    }

    pub fn oracle(&self, x: &[f64]) -> Result<DiagGaussianMixture> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let x3 = [x[0], x[1], 1.0 - x[0] - x[1]];
        let v = ndarray::ArrayView1::from(&x3[..]);
        let proc = ndarray::ArrayView1::from(&x[2..]);
        let weights = self.phase_weights(&x3);
        let means = self
            .phases
            .iter()
            .map(|ph| ph.c.dot(&v) + ph.d + 0.5 * ph.omega.dot(&v).sin() + ph.w.dot(&proc))
            .collect();
        let vars = self.phases.iter().map(|ph| (ph.e.dot(&v) + ph.f).exp()).collect();
        DiagGaussianMixture::from_flat(weights, means, vars, 1)
    }

    /// Fraction of a triangular simplex grid of resolution `n` (with
    /// `(n+1)(n+2)/2` points) where the largest phase probability is below
    /// `threshold`, and the mean phase probabilities sorted descending.
    pub fn boundary_stats(&self, n: usize, threshold: f64) -> (f64, Vec<f64>) {
        let mut boundary = 0usize;
        let mut total = 0usize;
        let mut mass = vec![0.0; self.phases.len()];
        for i in 0..=n {
            for j in 0..=(n - i) {
                let x3 = [i as f64 / n as f64, j as f64 / n as f64, (n - i - j) as f64 / n as f64];
                let w = self.phase_weights(&x3);
                if w.iter().cloned().fold(0.0, f64::max) < threshold {
                    boundary += 1;
                }
                for (m, v) in mass.iter_mut().zip(&w) {
                    *m += v;
                }
                total += 1;
            }
        }
        mass.iter_mut().for_each(|m| *m /= total as f64);
        mass.sort_by(|a, b| b.total_cmp(a));
        (boundary as f64 / total as f64, mass)
    }
}
