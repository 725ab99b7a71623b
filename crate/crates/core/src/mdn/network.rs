//! MLP backbone with a diagonal Gaussian mixture head.
//!
//! Head layout for `K` components over `N` outputs (width `K * (1 + 2N)`):
//! `K` mixture logits, then `K x N` means, then `K x N` raw variances.
//! Variances are `softplus(raw) + VAR_FLOOR`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gmm::{log_sum_exp, DiagGaussianMixture, VAR_FLOOR};
use crate::rng::RngStream;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MdnArch {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: usize,
    /// Number of hidden layers.
    pub depth: usize,
    pub components: usize,
}

impl MdnArch {
    pub fn head_width(&self) -> usize {
        self.components * (1 + 2 * self.output_dim)
    }

    /// Width of the representation fed into the head.
    pub fn feature_dim(&self) -> usize {
        if self.depth == 0 {
            self.input_dim
        } else {
            self.hidden
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.components == 0 {
            return Err(Error::InvalidParameter(format!("degenerate architecture {self:?}")));
        }
        if self.depth > 0 && self.hidden == 0 {
            return Err(Error::InvalidParameter("hidden width must be positive".into()));
        }
        Ok(())
    }

    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.depth + 1);
        let mut fan_in = self.input_dim;
        for _ in 0..self.depth {
            shapes.push((fan_in, self.hidden));
            fan_in = self.hidden;
        }
        shapes.push((fan_in, self.head_width()));
        shapes
    }
}

/// Affine layer `y = x W + b` with `W` stored `fan_in x fan_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }
}

/// Parameters of one network. The last entry of `layers` is the head.
#[derive(Clone, Debug, PartialEq)]
pub struct MdnParams {
    arch: MdnArch,
    layers: Vec<Dense>,
    /// Optimizer steps applied so far.
    pub steps: u64,
}

impl MdnParams {
    pub fn zeros(arch: MdnArch) -> Self {
        Self {
            arch,
            layers: arch.layer_shapes().into_iter().map(|(i, o)| Dense::zeros(i, o)).collect(),
            steps: 0,
        }
    }

    /// LeCun-uniform weights, zero biases.
    pub fn init(arch: MdnArch, rng: &mut RngStream) -> Result<Self> {
        arch.validate()?;
        let mut p = Self::zeros(arch);
        for layer in &mut p.layers {
            let limit = (3.0 / layer.weight.nrows() as f64).sqrt();
            for w in layer.weight.iter_mut() {
                *w = rng.uniform(-limit, limit)?;
            }
        }
        Ok(p)
    }

    pub(crate) fn from_layers(arch: MdnArch, layers: Vec<Dense>, steps: u64) -> Result<Self> {
        let shapes = arch.layer_shapes();
        check_dim(shapes.len(), layers.len())?;
        for ((fan_in, fan_out), l) in shapes.into_iter().zip(&layers) {
            check_dim(fan_in, l.weight.nrows())?;
            check_dim(fan_out, l.weight.ncols())?;
            check_dim(fan_out, l.bias.len())?;
        }
        Ok(Self { arch, layers, steps })
    }

    pub fn arch(&self) -> MdnArch {
        self.arch
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn head(&self) -> &Dense {
        self.layers.last().expect("head layer")
    }

    pub fn head_mut(&mut self) -> &mut Dense {
        self.layers.last_mut().expect("head layer")
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// All parameters in layer order, weights row-major then biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_dim(self.n_params(), flat.len())?;
        let mut it = flat.iter();
        for l in &mut self.layers {
            for (dst, src) in l.weight.iter_mut().chain(l.bias.iter_mut()).zip(&mut it) {
                *dst = *src;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn l2_distance(&self, other: &MdnParams) -> f64 {
        self.to_flat()
            .iter()
            .zip(other.to_flat())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

pub(crate) fn gelu(a: f64) -> f64 {
    0.5 * a * (1.0 + libm::erf(a * std::f64::consts::FRAC_1_SQRT_2))
}

#[cfg(test)]
pub(crate) fn gelu_grad(a: f64) -> f64 {
    gelu_and_grad(a).1
}

fn gelu_and_grad(a: f64) -> (f64, f64) {
    let cdf = 0.5 * (1.0 + libm::erf(a * std::f64::consts::FRAC_1_SQRT_2));
    (a * cdf, cdf + a * FRAC_1_SQRT_2PI * (-0.5 * a * a).exp())
}

fn softplus(x: f64) -> f64 {
    if x >= 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `(softplus(x), sigmoid(x))` from a single exponential.
fn softplus_and_sigmoid(x: f64) -> (f64, f64) {
    if x >= 0.0 {
        let e = (-x).exp();
        (x + e.ln_1p(), 1.0 / (1.0 + e))
    } else {
        let e = x.exp();
        (e.ln_1p(), e / (1.0 + e))
    }
}

/// Activations kept for the backward pass.
pub(crate) struct Trace {
    /// `hidden[0]` is the input, `hidden[l]` the output of hidden layer `l`.
    pub hidden: Vec<Array2<f64>>,
    /// GELU derivatives at each hidden pre-activation.
    pub dgelu: Vec<Array2<f64>>,
    pub out: Array2<f64>,
}

fn affine(x: &ArrayView2<f64>, layer: &Dense) -> Array2<f64> {
    let mut a = x.dot(&layer.weight);
    a += &layer.bias;
    a
}

pub(crate) fn forward_trace(params: &MdnParams, x: ArrayView2<f64>, keep_grad: bool) -> Trace {
    let depth = params.arch.depth;
    let mut hidden = Vec::with_capacity(depth + 1);
    let mut dgelu = Vec::with_capacity(depth);
    hidden.push(x.to_owned());
    for layer in &params.layers[..depth] {
        let mut a = affine(&hidden.last().unwrap().view(), layer);
        if keep_grad {
            let mut d = Array2::zeros(a.raw_dim());
            Zip::from(&mut a).and(&mut d).for_each(|a, d| {
                let (h, g) = gelu_and_grad(*a);
                *a = h;
                *d = g;
            });
            dgelu.push(d);
        } else {
            a.mapv_inplace(gelu);
        }
        hidden.push(a);
    }
    let out = affine(&hidden.last().unwrap().view(), params.head());
    Trace { hidden, dgelu, out }
}

fn check_batch(arch: &MdnArch, x: &ArrayView2<f64>) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::Empty("batch"));
    }
    check_dim(arch.input_dim, x.ncols())
}

/// Decode one head output row into a mixture.
pub fn decode_head(row: &[f64], components: usize, dim: usize) -> Result<DiagGaussianMixture> {
    check_dim(components * (1 + 2 * dim), row.len())?;
    let logits = &row[..components];
    let lse = log_sum_exp(logits);
    let mut weights: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let means = row[components..components * (1 + dim)].to_vec();
    let variances = row[components * (1 + dim)..]
        .iter()
        .map(|r| softplus(*r) + VAR_FLOOR)
        .collect();
    DiagGaussianMixture::from_flat(weights, means, variances, dim)
}

/// Predictive mixture at a single input.
pub fn forward(params: &MdnParams, x: &[f64]) -> Result<DiagGaussianMixture> {
    let view = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(forward_batch(params, view)?.pop().expect("one row"))
}

pub fn forward_batch(params: &MdnParams, x: ArrayView2<f64>) -> Result<Vec<DiagGaussianMixture>> {
    check_batch(&params.arch, &x)?;
    let trace = forward_trace(params, x, false);
    let (k, n) = (params.arch.components, params.arch.output_dim);
    trace
        .out
        .outer_iter()
        .map(|row| decode_head(row.as_slice().expect("standard layout"), k, n))
        .collect()
}

/// Last hidden-layer activations (the input itself when `depth == 0`).
pub fn backbone_features(params: &MdnParams, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_batch(&params.arch, &x)?;
    let depth = params.arch.depth;
    let mut h = x.to_owned();
    for layer in &params.layers[..depth] {
        h = affine(&h.view(), layer);
        h.mapv_inplace(gelu);
    }
    Ok(h)
}

/// Negative log-likelihood of one target under one head row, writing the
/// gradient with respect to the row (scaled by `scale`) into `grad`.
fn row_nll_and_grad(row: &[f64], y: &[f64], k: usize, n: usize, scale: f64, grad: Option<&mut [f64]>) -> f64 {
    let logits = &row[..k];
    let means = &row[k..k * (1 + n)];
    let raws = &row[k * (1 + n)..];
    let lse_logits = log_sum_exp(logits);

    let mut log_joint = [0.0f64; 64];
    let mut heap;
    let lj: &mut [f64] = if k <= 64 {
        &mut log_joint[..k]
    } else {
        heap = vec![0.0; k];
        &mut heap
    };
    // variances and softplus derivatives, filled once per row
    let mut vars = vec![0.0; k * n];
    let mut slopes = if grad.is_some() { vec![0.0; k * n] } else { Vec::new() };
    for c in 0..k {
        let mut acc = 0.0;
        for d in 0..n {
            let idx = c * n + d;
            let raw = raws[idx];
            let v = if grad.is_some() {
                let (sp, sig) = softplus_and_sigmoid(raw);
                slopes[idx] = sig;
                sp + VAR_FLOOR
            } else {
                softplus(raw) + VAR_FLOOR
            };
            vars[idx] = v;
            let diff = y[d] - means[idx];
            acc += LN_2PI + v.ln() + diff * diff / v;
        }
        lj[c] = logits[c] - lse_logits - 0.5 * acc;
    }
    let lse = log_sum_exp(lj);
    if let Some(g) = grad {
        for c in 0..k {
            let resp = (lj[c] - lse).exp();
            let alpha = (logits[c] - lse_logits).exp();
            g[c] = scale * (alpha - resp);
            for d in 0..n {
                let idx = c * n + d;
                let v = vars[idx];
                let diff = y[d] - means[idx];
                g[k + idx] = -scale * resp * diff / v;
                let dv = resp * 0.5 * (1.0 / v - diff * diff / (v * v));
                g[k * (1 + n) + idx] = scale * dv * slopes[idx];
            }
        }
    }
    -lse
}

fn check_targets(arch: &MdnArch, x: &ArrayView2<f64>, y: &ArrayView2<f64>) -> Result<()> {
    check_batch(arch, x)?;
    check_dim(x.nrows(), y.nrows())?;
    check_dim(arch.output_dim, y.ncols())
}

/// Mean negative log-likelihood over a batch.
pub fn nll_loss(params: &MdnParams, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<f64> {
    check_targets(&params.arch, &x, &y)?;
    let trace = forward_trace(params, x, false);
    let (k, n) = (params.arch.components, params.arch.output_dim);
    let total: f64 = trace
        .out
        .outer_iter()
        .zip(y.outer_iter())
        .map(|(row, yr)| row_nll_and_grad(row.as_slice().unwrap(), &yr.to_vec(), k, n, 0.0, None))
        .sum();
    Ok(total / x.nrows() as f64)
}

/// Mean negative log-likelihood and its exact gradient.
pub fn grad_nll(params: &MdnParams, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<(f64, MdnParams)> {
    check_targets(&params.arch, &x, &y)?;
    let arch = params.arch;
    let (k, n) = (arch.components, arch.output_dim);
    let batch = x.nrows();
    let scale = 1.0 / batch as f64;
    let trace = forward_trace(params, x, true);

    let mut d_out = Array2::<f64>::zeros(trace.out.raw_dim());
    let mut loss = 0.0;
    for ((row, yr), mut g) in trace.out.outer_iter().zip(y.outer_iter()).zip(d_out.outer_iter_mut()) {
        let yv: Vec<f64> = yr.to_vec();
        loss += row_nll_and_grad(row.as_slice().unwrap(), &yv, k, n, scale, Some(g.as_slice_mut().unwrap()));
    }
    loss *= scale;

    let mut grads = MdnParams::zeros(arch);
    let depth = arch.depth;
    let mut delta = d_out;
    for l in (0..=depth).rev() {
        let input = &trace.hidden[l];
        grads.layers[l].weight = input.t().dot(&delta);
        grads.layers[l].bias = delta.sum_axis(Axis(0));
        if l == 0 {
            break;
        }
        let mut d_h = delta.dot(&params.layers[l].weight.t());
        d_h *= &trace.dgelu[l - 1];
        delta = d_h;
    }
    Ok((loss, grads))
}

/// Gradient of `ln p(y | x)` with respect to the mean-head weights, for a
/// given target `y`. Returned flattened as `[component][output][feature]`.
pub fn mean_head_log_lik_grad(features: ArrayView1<f64>, mixture: &DiagGaussianMixture, y: &[f64]) -> Result<Vec<f64>> {
    let resp = mixture.responsibilities(y)?;
    let (k, n, h) = (mixture.n_components(), mixture.dim(), features.len());
    let mut row = Vec::with_capacity(k * n * h);
    for c in 0..k {
        let (mu, var) = (mixture.mean(c), mixture.variance(c));
        for d in 0..n {
            let coef = resp[c] * (y[d] - mu[d]) / var[d];
            row.extend(features.iter().map(|z| coef * z));
        }
    }
    Ok(row)
}

/// Column range of the mean block inside the head weight matrix.
pub fn mean_head_columns(arch: &MdnArch) -> std::ops::Range<usize> {
    arch.components..arch.components * (1 + arch.output_dim)
}

/// Raw head outputs for a batch (logits, means, raw variances).
pub fn head_outputs(params: &MdnParams, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_batch(&params.arch, &x)?;
    Ok(forward_trace(params, x, false).out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::{array, s};

    fn arch(k: usize, n: usize) -> MdnArch {
        MdnArch {
            input_dim: 3,
            output_dim: n,
            hidden: 5,
            depth: 2,
            components: k,
        }
    }

    #[test]
    fn zero_head_gives_uniform_weights() {
        let mut rng = RngStream::new(0, 0);
        let mut p = MdnParams::init(arch(4, 2), &mut rng).unwrap();
        p.head_mut().weight.fill(0.0);
        let m = forward(&p, &[0.1, -0.4, 2.0]).unwrap();
        for w in m.weights() {
            assert_relative_eq!(*w, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn weights_normalized_and_variances_floored() {
        let mut rng = RngStream::new(1, 0);
        for trial in 0..20 {
            let mut p = MdnParams::init(arch(3, 2), &mut rng).unwrap();
            if trial % 2 == 0 {
                // push the raw-variance head far negative
                let h = p.head_mut();
                let start = 3 * 3;
                h.bias.slice_mut(s![start..]).fill(-1e4);
            }
            let m = forward(&p, &[rng.std_normal(), rng.std_normal(), rng.std_normal()]).unwrap();
            assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(m.variances_flat().iter().all(|v| *v >= VAR_FLOOR));
        }
    }

    #[test]
    fn pinned_standard_normal_head() {
        let a = MdnArch {
            input_dim: 1,
            output_dim: 1,
            hidden: 4,
            depth: 1,
            components: 1,
        };
        let mut p = MdnParams::zeros(a);
        // softplus(raw) + floor = 1
        let raw = ((1.0 - VAR_FLOOR).exp() - 1.0).ln();
        p.head_mut().bias[2] = raw;
        let loss = nll_loss(&p, array![[0.7]].view(), array![[0.0]].view()).unwrap();
        assert_relative_eq!(loss, 0.918_938_533_204_672_7, epsilon = 1e-12);
    }

    #[test]
    fn duplicated_batch_has_same_loss_and_gradient() {
        let mut rng = RngStream::new(2, 0);
        let p = MdnParams::init(arch(2, 2), &mut rng).unwrap();
        let x = array![[0.1, 0.2, 0.3], [-1.0, 0.5, 0.0]];
        let y = array![[1.0, -1.0], [0.0, 2.0]];
        let x2 = ndarray::concatenate![Axis(0), x, x];
        let y2 = ndarray::concatenate![Axis(0), y, y];
        let (l1, g1) = grad_nll(&p, x.view(), y.view()).unwrap();
        let (l2, g2) = grad_nll(&p, x2.view(), y2.view()).unwrap();
        assert_relative_eq!(l1, l2, epsilon = 1e-12);
        for (a, b) in g1.to_flat().iter().zip(g2.to_flat()) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn mean_gradient_points_towards_target() {
        let a = MdnArch {
            input_dim: 1,
            output_dim: 1,
            hidden: 3,
            depth: 1,
            components: 1,
        };
        let mut rng = RngStream::new(3, 0);
        let p = MdnParams::init(a, &mut rng).unwrap();
        let x = array![[0.5], [0.5], [0.5]];
        let mu = forward(&p, &[0.5]).unwrap().mean(0)[0];
        let target = mu + 2.0;
        let y = array![[target], [target], [target]];
        let (_, g) = grad_nll(&p, x.view(), y.view()).unwrap();
        // descent direction on the mean-head bias moves mu towards y
        assert!(-g.head().bias[1] > 0.0);
    }

    #[test]
    fn empty_and_mismatched_batches_error() {
        let mut rng = RngStream::new(4, 0);
        let p = MdnParams::init(arch(2, 2), &mut rng).unwrap();
        let empty = Array2::<f64>::zeros((0, 3));
        let empty_y = Array2::<f64>::zeros((0, 2));
        assert!(matches!(nll_loss(&p, empty.view(), empty_y.view()), Err(Error::Empty(_))));
        assert!(forward(&p, &[1.0, 2.0]).is_err());
        assert!(nll_loss(&p, array![[0.0, 0.0, 0.0]].view(), array![[0.0]].view()).is_err());
    }

    #[test]
    fn gelu_matches_reference_values() {
        // exact-erf GELU
        assert_relative_eq!(gelu(1.0), 0.841_344_746_068_542_9, epsilon = 1e-12);
        assert_relative_eq!(gelu(-1.0), -0.158_655_253_931_457_05, epsilon = 1e-12);
        let h = 1e-6;
        for a in [-2.0, -0.3, 0.0, 0.7, 3.0] {
            let fd = (gelu(a + h) - gelu(a - h)) / (2.0 * h);
            assert_relative_eq!(gelu_grad(a), fd, epsilon = 1e-8);
        }
    }
}
