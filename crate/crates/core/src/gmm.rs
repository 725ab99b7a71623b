//! Diagonal-covariance Gaussian mixtures.
//!
//! Entropy quantities come in three flavours: the exact Gaussian entropy,
//! a pairwise-overlap lower bound and a component-wise upper bound on the
//! differential entropy of a mixture, plus a Monte-Carlo estimator used as
//! an oracle for the bounds.


use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::RngStream;

/// Lower bound applied to every variance entry.
pub const VAR_FLOOR: f64 = 1e-6;

/// Allowed deviation of mixture weights from summing to one.
pub const WEIGHT_TOL: f64 = 1e-9;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `log(sum(exp(xs)))` with a max shift. Returns `-inf` for an empty slice
/// or when every entry is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureRepr", into = "MixtureRepr")]
pub struct DiagGaussianMixture {
    dim: usize,
    weights: Vec<f64>,
    /// K x N, row-major.
    means: Vec<f64>,
    /// K x N, row-major.
    variances: Vec<f64>,
    /// `-0.5 * sum_d ln(2 pi var)` per component.
    log_norms: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MixtureRepr {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

impl TryFrom<MixtureRepr> for DiagGaussianMixture {
    type Error = Error;

    fn try_from(r: MixtureRepr) -> Result<Self> {
        Self::new(r.weights, r.means, r.variances)
    }
}

impl From<DiagGaussianMixture> for MixtureRepr {
    fn from(m: DiagGaussianMixture) -> Self {
        MixtureRepr {
            means: m.means.chunks(m.dim).map(<[f64]>::to_vec).collect(),
            variances: m.variances.chunks(m.dim).map(<[f64]>::to_vec).collect(),
            weights: m.weights,
        }
    }
}

impl DiagGaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let dim = means.first().map(Vec::len).unwrap_or(0);
        if means.len() != weights.len() {
            return Err(Error::Dimension {
                expected: weights.len(),
                got: means.len(),
            });
        }
        if variances.len() != weights.len() {
            return Err(Error::Dimension {
                expected: weights.len(),
                got: variances.len(),
            });
        }
        for row in means.iter().chain(&variances) {
            check_dim(dim, row.len())?;
        }
        Self::from_flat(weights, means.concat(), variances.concat(), dim)
    }

    /// Build from row-major `K x N` mean and variance buffers.
    pub fn from_flat(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>, dim: usize) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::Empty("mixture components"));
        }
        if dim == 0 {
            return Err(Error::Empty("mixture dimension"));
        }
        check_dim(k * dim, means.len())?;
        check_dim(k * dim, variances.len())?;
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Domain("mixture weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::Domain(format!("mixture weights sum to {total}, not 1")));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("mixture mean".into()));
        }
        if let Some(v) = variances.iter().find(|v| !(**v >= VAR_FLOOR) || !v.is_finite()) {
            return Err(Error::Domain(format!(
                "variance {v} below floor {VAR_FLOOR} or non-finite"
            )));
        }
        let log_norms = variances
            .chunks(dim)
            .map(|vs| -0.5 * vs.iter().map(|v| LN_2PI + v.ln()).sum::<f64>())
            .collect();
        Ok(Self {
            dim,
            weights,
            means,
            variances,
            log_norms,
        })
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k * self.dim..(k + 1) * self.dim]
    }

    pub fn variance(&self, k: usize) -> &[f64] {
        &self.variances[k * self.dim..(k + 1) * self.dim]
    }

    pub fn means_flat(&self) -> &[f64] {
        &self.means
    }

    pub fn variances_flat(&self) -> &[f64] {
        &self.variances
    }

    /// Mixture mean `sum_k w_k mu_k`.
    pub fn overall_mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (k, w) in self.weights.iter().enumerate() {
            for (o, m) in out.iter_mut().zip(self.mean(k)) {
                *o += w * m;
            }
        }
        out
    }

    fn component_log_density(&self, k: usize, y: &[f64]) -> f64 {
        let quad: f64 = self
            .mean(k)
            .iter()
            .zip(self.variance(k))
            .zip(y)
            .map(|((m, v), yv)| (yv - m) * (yv - m) / v)
            .sum();
        self.log_norms[k] - 0.5 * quad
    }

    /// Per-component `ln w_k + ln N(y; mu_k, C_k)`.
    pub fn component_log_joint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, y.len())?;
        Ok((0..self.n_components())
            .map(|k| self.weights[k].ln() + self.component_log_density(k, y))
            .collect())
    }

    /// Posterior component responsibilities at `y`.
    pub fn responsibilities(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut lj = self.component_log_joint(y)?;
        let lse = log_sum_exp(&lj);
        lj.iter_mut().for_each(|l| *l = (*l - lse).exp());
        Ok(lj)
    }

    pub fn log_pdf(&self, y: &[f64]) -> Result<f64> {
        check_dim(self.dim, y.len())?;
        Ok(self.log_pdf_unchecked(y))
    }

    pub(crate) fn log_pdf_unchecked(&self, y: &[f64]) -> f64 {
        let k = self.n_components();
        let mut stack = [0.0f64; 64];
        let mut heap;
        let lj: &mut [f64] = if k <= stack.len() {
            &mut stack[..k]
        } else {
            heap = vec![0.0; k];
            &mut heap
        };
        for (c, l) in lj.iter_mut().enumerate() {
            let w = self.weights[c];
            *l = if w > 0.0 {
                w.ln() + self.component_log_density(c, y)
            } else {
                f64::NEG_INFINITY
            };
        }
        log_sum_exp(lj)
    }

    pub fn sample_component(&self, rng: &mut RngStream) -> usize {
        let u = rng.unit();
        let mut cum = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            cum += w;
            if u < cum {
                return k;
            }
        }
        // u landed in the rounding gap above the cumulative sum
        self.weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
    }

    pub fn sample(&self, rng: &mut RngStream) -> Vec<f64> {
        let k = self.sample_component(rng);
        self.mean(k)
            .iter()
            .zip(self.variance(k))
            .map(|(m, v)| m + v.sqrt() * rng.std_normal())
            .collect()
    }

    /// Pairwise-overlap lower bound on the differential entropy:
    /// `-sum_i w_i ln sum_j w_j N(mu_i; mu_j, C_i + C_j)`.
    pub fn entropy_lower(&self) -> f64 {
        let k = self.n_components();
        let mut terms = vec![f64::NEG_INFINITY; k];
        let mut h = 0.0;
        for i in 0..k {
            let wi = self.weights[i];
            if wi == 0.0 {
                continue;
            }
            let (mi, vi) = (self.mean(i), self.variance(i));
            for j in 0..k {
                let wj = self.weights[j];
                terms[j] = if wj == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    let (mj, vj) = (self.mean(j), self.variance(j));
                    let mut acc = 0.0;
                    for d in 0..self.dim {
                        let s = vi[d] + vj[d];
                        let diff = mi[d] - mj[d];
                        acc += LN_2PI + s.ln() + diff * diff / s;
                    }
                    wj.ln() - 0.5 * acc
                };
            }
            h -= wi * log_sum_exp(&terms);
        }
        h
    }

    /// Component-wise upper bound on the differential entropy:
    /// `sum_i w_i (-ln w_i + 0.5 ln((2 pi e)^N |C_i|))`.
    pub fn entropy_upper(&self) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(k, w)| w * (-w.ln() + gaussian_entropy_unchecked(self.variance(k))))
            .sum()
    }

    /// Monte-Carlo entropy estimate `-mean ln p(Y)`, `Y ~ p`, with its
    /// standard error.
    pub fn entropy_mc(&self, n_samples: usize, rng: &mut RngStream) -> Result<McEstimate> {
        if n_samples < 2 {
            return Err(Error::InvalidParameter(format!(
                "entropy_mc needs at least 2 samples, got {n_samples}"
            )));
        }
        let vals = (0..n_samples).map(|_| {
            let y = self.sample(rng);
            -self.log_pdf_unchecked(&y)
        });
        Ok(McEstimate::from_values(vals))
    }
}

/// A Monte-Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
}

impl McEstimate {
    /// Welford accumulation over an iterator of at least two values.
    pub fn from_values(vals: impl IntoIterator<Item = f64>) -> Self {
        let (mut n, mut mean, mut m2) = (0.0f64, 0.0f64, 0.0f64);
        for v in vals {
            n += 1.0;
            let delta = v - mean;
            mean += delta / n;
            m2 += delta * (v - mean);
        }
        let var = if n > 1.0 { m2 / (n - 1.0) } else { 0.0 };
        Self {
            estimate: mean,
            stderr: (var / n).sqrt(),
        }
    }
}

fn gaussian_entropy_unchecked(variances: &[f64]) -> f64 {
    0.5 * variances.iter().map(|v| LN_2PI + 1.0 + v.ln()).sum::<f64>()
}

/// Entropy of a diagonal Gaussian, `0.5 * sum_d ln(2 pi e var_d)`.
/// The mean does not enter.
pub fn entropy_exact_gaussian(variances: &[f64]) -> Result<f64> {
    if variances.is_empty() {
        return Err(Error::Empty("gaussian variances"));
    }
    if let Some(v) = variances.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!("variance must be positive, got {v}")));
    }
    Ok(gaussian_entropy_unchecked(variances))
}

/// Per-member predictive mixtures for one input, with member weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePrediction {
    members: Vec<DiagGaussianMixture>,
    member_weights: Vec<f64>,
}

impl EnsemblePrediction {
    pub fn new(members: Vec<DiagGaussianMixture>, member_weights: Vec<f64>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Empty("ensemble members"));
        }
        check_dim(members.len(), member_weights.len())?;
        let dim = members[0].dim();
        for m in &members {
            check_dim(dim, m.dim())?;
        }
        if member_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Domain("member weights must be nonnegative".into()));
        }
        let total: f64 = member_weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::Domain(format!("member weights sum to {total}, not 1")));
        }
        Ok(Self {
            members,
            member_weights,
        })
    }

    /// Equal member weights `1 / n_ens`.
    pub fn uniform(members: Vec<DiagGaussianMixture>) -> Result<Self> {
        let n = members.len();
        Self::new(members, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn members(&self) -> &[DiagGaussianMixture] {
        &self.members
    }

    pub fn member_weights(&self) -> &[f64] {
        &self.member_weights
    }

    pub fn dim(&self) -> usize {
        self.members[0].dim()
    }

    pub fn marginal_mixture(&self) -> DiagGaussianMixture {
        marginal_mixture(self)
    }
}

/// Flatten an ensemble into one mixture with weights `w_z * alpha_i^(z)`.
pub fn marginal_mixture(e: &EnsemblePrediction) -> DiagGaussianMixture {
    let dim = e.dim();
    let total: usize = e.members.iter().map(DiagGaussianMixture::n_components).sum();
    let mut weights = Vec::with_capacity(total);
    let mut means = Vec::with_capacity(total * dim);
    let mut variances = Vec::with_capacity(total * dim);
    let mut log_norms = Vec::with_capacity(total);
    for (m, wz) in e.members.iter().zip(&e.member_weights) {
        weights.extend(m.weights.iter().map(|a| wz * a));
        means.extend_from_slice(&m.means);
        variances.extend_from_slice(&m.variances);
        log_norms.extend_from_slice(&m.log_norms);
    }
    // inputs are validated, so the weight sum is within tolerance already
    DiagGaussianMixture {
        dim,
        weights,
        means,
        variances,
        log_norms,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;
    use approx::assert_relative_eq;

    fn single(mu: f64, var: f64) -> DiagGaussianMixture {
        DiagGaussianMixture::new(vec![1.0], vec![vec![mu]], vec![vec![var]]).unwrap()
    }

    #[test]
    fn standard_normal_peak() {
        let m = single(0.0, 1.0);
        assert_relative_eq!(m.log_pdf(&[0.0]).unwrap(), -0.918_938_533_204_672_7, epsilon = 1e-12);
    }

    #[test]
    fn duplicated_components_match_single() {
        let m = single(0.3, 2.0);
        let dup = DiagGaussianMixture::new(
            vec![0.5, 0.5],
            vec![vec![0.3], vec![0.3]],
            vec![vec![2.0], vec![2.0]],
        )
        .unwrap();
        for y in [-3.0, 0.0, 0.3, 5.0] {
            assert_relative_eq!(m.log_pdf(&[y]).unwrap(), dup.log_pdf(&[y]).unwrap(), epsilon = 1e-12);
        }
        assert_relative_eq!(m.entropy_lower(), dup.entropy_lower(), epsilon = 1e-12);
        assert!(dup.entropy_upper() > m.entropy_upper());
    }

    #[test]
    fn shape_errors() {
        let m = single(0.0, 1.0);
        assert!(matches!(m.log_pdf(&[0.0, 1.0]), Err(Error::Dimension { .. })));
        assert!(DiagGaussianMixture::new(vec![0.5, 0.4], vec![vec![0.0], vec![1.0]], vec![vec![1.0], vec![1.0]]).is_err());
        assert!(DiagGaussianMixture::new(vec![1.0], vec![vec![0.0]], vec![vec![1e-9]]).is_err());
        assert!(DiagGaussianMixture::new(vec![1.0], vec![vec![0.0, 1.0]], vec![vec![1.0]]).is_err());
        assert!(DiagGaussianMixture::new(vec![], vec![], vec![]).is_err());
    }

    #[test]
    fn exact_gaussian_entropy() {
        let h1 = entropy_exact_gaussian(&[1.0]).unwrap();
        assert_relative_eq!(h1, 1.418_938_533_204_672_7, epsilon = 1e-12);
        assert_relative_eq!(entropy_exact_gaussian(&[1.0, 1.0]).unwrap(), 2.0 * h1, epsilon = 1e-12);
        assert_relative_eq!(entropy_exact_gaussian(&[4.0]).unwrap(), h1 + 2f64.ln(), epsilon = 1e-12);
        assert!(entropy_exact_gaussian(&[0.0]).is_err());
        assert!(entropy_exact_gaussian(&[-1.0]).is_err());
    }

    #[test]
    fn lower_bound_closed_forms() {
        assert_relative_eq!(single(0.0, 1.0).entropy_lower(), 0.5 * (4.0 * PI).ln(), epsilon = 1e-12);
        // well-separated components: the bound approaches sum w(-ln w) + 0.5 ln(4 pi var)
        let w = [0.3, 0.7];
        let m = DiagGaussianMixture::new(w.to_vec(), vec![vec![-50.0], vec![50.0]], vec![vec![1.0], vec![1.0]]).unwrap();
        let expected = w.iter().map(|p| -p * p.ln()).sum::<f64>() + 0.5 * (4.0 * PI).ln();
        assert_relative_eq!(m.entropy_lower(), expected, max_relative = 1e-6);
    }

    #[test]
    fn upper_bound_closed_forms() {
        let m = single(1.0, 3.0);
        assert_relative_eq!(m.entropy_upper(), entropy_exact_gaussian(&[3.0]).unwrap(), epsilon = 1e-12);
        let two = DiagGaussianMixture::new(vec![0.5, 0.5], vec![vec![0.0], vec![1.0]], vec![vec![1.0], vec![1.0]]).unwrap();
        assert_relative_eq!(two.entropy_upper(), 2.112_085_713_764_618, epsilon = 1e-9);
    }

    #[test]
    fn mc_entropy_of_standard_normal() {
        let mut rng = RngStream::new(0, 0);
        let est = single(0.0, 1.0).entropy_mc(100_000, &mut rng).unwrap();
        assert!((est.estimate - 1.418_938_5).abs() < 3.0 * est.stderr, "{est:?}");
        assert!(single(0.0, 1.0).entropy_mc(1, &mut rng).is_err());
    }

    #[test]
    fn marginal_identity_and_shapes() {
        let a = DiagGaussianMixture::new(vec![0.2, 0.8], vec![vec![0.0, 1.0], vec![2.0, -1.0]], vec![vec![1.0, 0.5], vec![0.3, 2.0]]).unwrap();
        let one = EnsemblePrediction::uniform(vec![a.clone()]).unwrap();
        assert_eq!(one.marginal_mixture(), a);
        let two = EnsemblePrediction::uniform(vec![a.clone(), a.clone()]).unwrap();
        let marg = two.marginal_mixture();
        assert_eq!(marg.n_components(), 4);
        for y in [[0.0, 0.0], [1.0, -2.0], [5.0, 5.0]] {
            assert_relative_eq!(marg.log_pdf(&y).unwrap(), a.log_pdf(&y).unwrap(), epsilon = 1e-12);
        }
    }

    #[test]
    fn sampling_near_floor_returns_mean() {
        let m = DiagGaussianMixture::new(vec![1.0], vec![vec![2.5, -1.0]], vec![vec![VAR_FLOOR, VAR_FLOOR]]).unwrap();
        let mut rng = RngStream::new(1, 0);
        for _ in 0..100 {
            let y = m.sample(&mut rng);
            assert!((y[0] - 2.5).abs() < 0.01 && (y[1] + 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn json_round_trip_uses_nested_arrays() {
        let m = DiagGaussianMixture::new(vec![0.25, 0.75], vec![vec![0.0, 1.0], vec![2.0, 3.0]], vec![vec![1.0, 1.0], vec![0.5, 0.5]]).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("\"means\":[[0.0,1.0],[2.0,3.0]]"), "{s}");
        let back: DiagGaussianMixture = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<DiagGaussianMixture>(r#"{"weights":[0.5],"means":[[0]],"variances":[[1]]}"#).is_err());
    }
}
