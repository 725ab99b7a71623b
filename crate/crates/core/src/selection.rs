//! Turning a score vector into a query batch.

use std::collections::HashSet;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::RngStream;

const STD_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    Topk,
    /// Gumbel-top-k sampling from `softmax(score / temperature)`.
    Sbal { temperature: f64 },
    /// Score-weighted farthest-point sampling over standardized inputs.
    Maxdist { weight: f64 },
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Topk => "topk",
            Self::Sbal { .. } => "sbal",
            Self::Maxdist { .. } => "maxdist",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Sbal { temperature } if !(temperature > 0.0) || !temperature.is_finite() => {
                Err(Error::Config(format!("SBAL temperature must be positive, got {temperature}")))
            }
            Self::Maxdist { weight } if !(weight >= 0.0) || !weight.is_finite() => {
                Err(Error::Config(format!("MaxDist weight must be nonnegative, got {weight}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchRequest {
    pub k: usize,
    pub strategy: Strategy,
    /// Pool indices that may not be chosen (already labeled).
    pub exclusions: HashSet<usize>,
}

impl BatchRequest {
    pub fn new(k: usize, strategy: Strategy, exclusions: impl IntoIterator<Item = usize>) -> Self {
        Self {
            k,
            strategy,
            exclusions: exclusions.into_iter().collect(),
        }
    }

    fn available(&self, n: usize) -> Vec<usize> {
        (0..n).filter(|i| !self.exclusions.contains(i)).collect()
    }

    fn check(&self, n: usize) -> Result<Vec<usize>> {
        self.strategy.validate()?;
        let avail = self.available(n);
        if self.k == 0 || self.k > avail.len() {
            return Err(Error::InvalidParameter(format!(
                "batch size {} with {} available candidates",
                self.k,
                avail.len()
            )));
        }
        Ok(avail)
    }
}

fn check_scores(scores: &[f64]) -> Result<()> {
    match scores.iter().position(|s| !s.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("score at candidate {i}"))),
        None => Ok(()),
    }
}

/// Indices of the `k` largest values among `candidates`, largest first,
/// lowest index first on ties.
fn top_k_of(values: &[f64], candidates: &[usize], k: usize) -> Vec<usize> {
    let mut order = candidates.to_vec();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

pub fn select_topk(scores: &[f64], req: &BatchRequest) -> Result<Vec<usize>> {
    check_scores(scores)?;
    let avail = req.check(scores.len())?;
    Ok(top_k_of(scores, &avail, req.k))
}

/// Gumbel noise is drawn for every pool index in order, so the draw does
/// not depend on which indices are excluded.
pub fn select_sbal(scores: &[f64], req: &BatchRequest, stream: &mut RngStream) -> Result<Vec<usize>> {
    check_scores(scores)?;
    let avail = req.check(scores.len())?;
    let temperature = match req.strategy {
        Strategy::Sbal { temperature } => temperature,
        _ => 1.0,
    };
    let perturbed: Vec<f64> = scores.iter().map(|s| s / temperature + stream.gumbel()).collect();
    Ok(top_k_of(&perturbed, &avail, req.k))
}

/// Per-column z-scores over all rows, with the standard deviation floored.
pub fn standardize(features: ArrayView2<f64>) -> Array2<f64> {
    let n = features.nrows().max(1) as f64;
    let mean = features.mean_axis(Axis(0)).expect("nonempty");
    let mut out = &features - &mean;
    let std = out.map_axis(Axis(0), |c| (c.dot(&c) / n).sqrt().max(STD_FLOOR));
    out /= &std;
    out
}

/// Min-max scaling of the available scores onto `[0, 1]`; a constant score
/// vector maps to zeros. Excluded entries are left at zero.
fn normalized_scores(scores: &[f64], avail: &[usize]) -> Vec<f64> {
    let lo = avail.iter().map(|&i| scores[i]).fold(f64::INFINITY, f64::min);
    let hi = avail.iter().map(|&i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
    let mut out = vec![0.0; scores.len()];
    if hi > lo {
        for &i in avail {
            out[i] = (scores[i] - lo) / (hi - lo);
        }
    }
    out
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy maximization of `d_min(i) * (1 + w * s(i))`, with `d_min` the
/// squared distance to the nearest excluded or already chosen row. With
/// nothing to measure distance from, the first pick uses `d_min = 1`.
pub fn select_maxdist(scores: &[f64], features: ArrayView2<f64>, req: &BatchRequest) -> Result<Vec<usize>> {
    check_scores(scores)?;
    check_dim(scores.len(), features.nrows())?;
    let avail = req.check(scores.len())?;
    let weight = match req.strategy {
        Strategy::Maxdist { weight } => weight,
        _ => 1.0,
    };
    let z = standardize(features);
    let s = normalized_scores(scores, &avail);
    let anchors: Vec<usize> = {
        let mut v: Vec<usize> = req.exclusions.iter().copied().filter(|&i| i < scores.len()).collect();
        v.sort_unstable();
        v
    };
    let mut d_min: Vec<f64> = (0..scores.len())
        .map(|i| {
            anchors
                .iter()
                .map(|&a| sq_dist(z.row(i), z.row(a)))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut taken = vec![false; scores.len()];
    let mut chosen = Vec::with_capacity(req.k);
    for _ in 0..req.k {
        let mut best: Option<(usize, f64)> = None;
        for &i in avail.iter().filter(|&&i| !taken[i]) {
            let d = if d_min[i].is_finite() { d_min[i] } else { 1.0 };
            let value = d * (1.0 + weight * s[i]);
            if best.is_none_or(|(_, v)| value > v) {
                best = Some((i, value));
            }
        }
        let (pick, _) = best.expect("candidates remain");
        taken[pick] = true;
        chosen.push(pick);
        let centre = z.row(pick);
        for &i in &avail {
            if !taken[i] {
                d_min[i] = d_min[i].min(sq_dist(z.row(i), centre));
            }
        }
    }
    Ok(chosen)
}

/// Dispatch on the request's strategy. MaxDist needs `features`.
pub fn select(
    scores: &[f64],
    features: Option<ArrayView2<f64>>,
    req: &BatchRequest,
    stream: &mut RngStream,
) -> Result<Vec<usize>> {
    match req.strategy {
        Strategy::Topk => select_topk(scores, req),
        Strategy::Sbal { .. } => select_sbal(scores, req, stream),
        Strategy::Maxdist { .. } => {
            let f = features.ok_or_else(|| Error::Config("MaxDist needs input features".into()))?;
            select_maxdist(scores, f, req)
        }
    }
}
