//! Gated multimodal conditional density on a low-dimensional input manifold.
//!
//! Inputs are `x = tanh(A l + b_m)` with `l ~ N(0, I_L)`. Outputs follow a
//! `K`-component diagonal mixture whose parameters are driven by random
//! Fourier features of `x`. A radial gate on `|x[..L]|` switches between a
//! single dominant component (inside `r0`) and angular sectors (outside).

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{log_sum_exp, DiagGaussianMixture};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MultimodalParams {
    pub input_dim: usize,
    pub output_dim: usize,
    pub latent_dim: usize,
    pub components: usize,
    pub n_features: usize,
    pub c_scale: f64,
    pub beta: f64,
    pub r0: f64,
    pub gamma: f64,
    pub scale: f64,
    pub dist_seed: u64,
    pub manifold_seed: u64,
}

impl Default for MultimodalParams {
    fn default() -> Self {
        Self {
            input_dim: 10,
            output_dim: 16,
            latent_dim: 4,
            components: 3,
            n_features: 128,
            c_scale: 10.0,
            beta: 8.0,
            r0: 1.3,
            gamma: 2.0,
            scale: 3.0,
            dist_seed: 42,
            manifold_seed: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MultimodalSystem {
    pub params: MultimodalParams,
    /// `D x L`
    pub a: Array2<f64>,
    pub b_m: Array1<f64>,
    /// `P x D`
    pub omega: Array2<f64>,
    pub phi: Array1<f64>,
    /// `K x M x P`
    pub b_mean: Array3<f64>,
    pub c_logvar: Array3<f64>,
    /// `K x M`
    pub offsets: Array2<f64>,
    /// `(K - 1) x L`, unit rows.
    pub v: Array2<f64>,
}

fn gaussian_matrix(rng: &mut RngStream, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.normal(0.0, std))
}

impl MultimodalSystem {
    pub fn new(params: MultimodalParams) -> Result<Self> {
        let p = &params;
        if p.input_dim == 0 || p.output_dim == 0 || p.n_features == 0 || p.components < 2 {
            return Err(Error::InvalidParameter(format!("degenerate multimodal system {p:?}")));
        }
        if p.latent_dim == 0 || p.latent_dim > p.input_dim {
            return Err(Error::InvalidParameter("latent_dim must lie in 1..=input_dim".into()));
        }
        let (d, m, l, k, n_f) = (p.input_dim, p.output_dim, p.latent_dim, p.components, p.n_features);
        let mut man = RngStream::new(p.manifold_seed, 0);
        let a = gaussian_matrix(&mut man, d, l, (1.0 / l as f64).sqrt());
        let b_m = Array1::from_shape_simple_fn(d, || man.std_normal());

        let mut dist = RngStream::new(p.dist_seed, 0);
        let omega = gaussian_matrix(&mut dist, n_f, d, (1.0 / d as f64).sqrt());
        let mut phi = Array1::zeros(n_f);
        for v in phi.iter_mut() {
            *v = dist.uniform(0.0, 2.0 * std::f64::consts::PI)?;
        }
        let std_p = (1.0 / n_f as f64).sqrt();
        let b_mean = Array3::from_shape_simple_fn((k, m, n_f), || dist.normal(0.0, std_p));
        let c_logvar = Array3::from_shape_simple_fn((k, m, n_f), || dist.normal(0.0, std_p));
        let offsets = gaussian_matrix(&mut dist, k, m, p.c_scale);
        let mut v = gaussian_matrix(&mut dist, k - 1, l, 1.0);
        for mut row in v.outer_iter_mut() {
            let norm = row.dot(&row).sqrt();
            row /= norm;
        }
        Ok(Self {
            params,
            a,
            b_m,
            omega,
            phi,
            b_mean,
            c_logvar,
            offsets,
            v,
        })
    }

    pub fn input_from_latent(&self, latent: &[f64]) -> Vec<f64> {
        let pre = self.a.dot(&ndarray::ArrayView1::from(latent)) + &self.b_m;
        pre.iter().map(|v| v.tanh()).collect()
    }

    pub fn sample_input(&self, rng: &mut RngStream) -> Vec<f64> {
        let latent: Vec<f64> = (0..self.params.latent_dim).map(|_| rng.std_normal()).collect();
        self.input_from_latent(&latent)
    }

    /// Mixing weights from the radial gate and angular scores.
    pub fn mixing_weights(&self, x: &[f64]) -> Vec<f64> {
        let p = &self.params;
        let head = &x[..p.latent_dim];
        let r = head.iter().map(|v| v * v).sum::<f64>().sqrt();
        let g = 0.5 * (1.0 + (p.beta * (r - p.r0)).tanh());
        let ang: Vec<f64> = self
            .v
            .outer_iter()
            .map(|row| p.gamma * row.iter().zip(head).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let lse = log_sum_exp(&ang);
        let mut logits = Vec::with_capacity(p.components);
        logits.push(p.scale * (1.0 - g));
        logits.extend(ang.iter().map(|a| p.scale * g * (a - lse).exp()));
        let lse = log_sum_exp(&logits);
        let mut w: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        w
    }

    pub fn oracle(&self, x: &[f64]) -> Result<DiagGaussianMixture> {
        let p = &self.params;
        if x.len() != p.input_dim {
            return Err(Error::Dimension {
                expected: p.input_dim,
                got: x.len(),
            });
        }
        let h = (self.omega.dot(&ndarray::ArrayView1::from(x)) + &self.phi).mapv(f64::cos);
        let (k, m) = (p.components, p.output_dim);
        let weights = self.mixing_weights(x);
        let mut raw = Array2::<f64>::zeros((k, m));
        let mut vars = Vec::with_capacity(k * m);
        for c in 0..k {
            let mu = self.b_mean.index_axis(ndarray::Axis(0), c).dot(&h) + self.offsets.row(c);
            raw.row_mut(c).assign(&mu);
            let lv = self.c_logvar.index_axis(ndarray::Axis(0), c).dot(&h);
            vars.extend(lv.iter().map(|v| v.exp()));
        }
        let mut centre = Array1::<f64>::zeros(m);
        for (c, w) in weights.iter().enumerate() {
            centre.scaled_add(*w, &raw.row(c));
        }
        let means: Vec<f64> = raw.outer_iter().flat_map(|r| (&r - &centre).to_vec()).collect();
        DiagGaussianMixture::from_flat(weights, means, vars, m)
    }
}
