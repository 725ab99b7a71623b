//! Per-candidate acquisition scores and set-valued selectors.

mod bait;
mod coreset;
mod variance_demo;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{EnsemblePrediction, McEstimate};
use crate::rng::RngStream;

pub use bait::{bait_objective, fisher_embed, select_bait, select_bait_with, BaitBackend, FisherEmbedding};
pub use coreset::{cover_radius, select_coreset};
pub use variance_demo::{variance_failure_demo, VarianceDemoReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionKind {
    Random,
    EpistemicVariance,
    Milb,
    Bait,
    Coreset,
}

impl AcquisitionKind {
    pub const ALL: [AcquisitionKind; 5] = [
        AcquisitionKind::Random,
        AcquisitionKind::EpistemicVariance,
        AcquisitionKind::Milb,
        AcquisitionKind::Bait,
        AcquisitionKind::Coreset,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::EpistemicVariance => "epistemic_variance",
            Self::Milb => "milb",
            Self::Bait => "bait",
            Self::Coreset => "coreset",
        }
    }

    /// BAIT and core-set pick whole batches directly instead of scoring.
    pub fn is_set_valued(&self) -> bool {
        matches!(self, Self::Bait | Self::Coreset)
    }
}

impl std::str::FromStr for AcquisitionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|k| k.name() == norm || (norm == "mi_lb" && *k == Self::Milb) || (norm == "variance" && *k == Self::EpistemicVariance))
            .ok_or_else(|| Error::Config(format!("unknown acquisition '{s}'")))
    }
}

impl std::fmt::Display for AcquisitionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub kind: AcquisitionKind,
    pub scores: Vec<f64>,
}

impl ScoreVector {
    pub fn new(kind: AcquisitionKind, scores: Vec<f64>) -> Result<Self> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("{kind} score at candidate {i}")));
        }
        Ok(Self { kind, scores })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["candidate_index", "score"])?;
        for (i, s) in self.scores.iter().enumerate() {
            out.write_record([i.to_string(), format!("{s:e}")])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

pub fn score_random(n: usize, stream: &mut RngStream) -> Result<ScoreVector> {
    if n == 0 {
        return Err(Error::Empty("pool"));
    }
    ScoreVector::new(AcquisitionKind::Random, (0..n).map(|_| stream.unit()).collect())
}

/// Weighted spread of the per-member predictive means:
/// `sum_z w_z |m_z - m_bar|^2`.
pub fn epistemic_variance(pred: &EnsemblePrediction) -> f64 {
    let means: Vec<Vec<f64>> = pred.members().iter().map(|m| m.overall_mean()).collect();
    let w = pred.member_weights();
    let dim = pred.dim();
    let mut bar = vec![0.0; dim];
    for (m, wz) in means.iter().zip(w) {
        for (b, v) in bar.iter_mut().zip(m) {
            *b += wz * v;
        }
    }
    means
        .iter()
        .zip(w)
        .map(|(m, wz)| wz * m.iter().zip(&bar).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum()
}

/// Mixture-entropy lower bound of the marginal minus the weighted upper
/// bounds of the members.
pub fn milb(pred: &EnsemblePrediction) -> f64 {
    let upper: f64 = pred
        .members()
        .iter()
        .zip(pred.member_weights())
        .map(|(m, w)| w * m.entropy_upper())
        .sum();
    pred.marginal_mixture().entropy_lower() - upper
}

fn check_preds(preds: &[EnsemblePrediction]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::Empty("pool"));
    }
    Ok(())
}

pub fn score_epistemic_variance(preds: &[EnsemblePrediction]) -> Result<ScoreVector> {
    check_preds(preds)?;
    ScoreVector::new(AcquisitionKind::EpistemicVariance, preds.iter().map(epistemic_variance).collect())
}

pub fn score_milb(preds: &[EnsemblePrediction]) -> Result<ScoreVector> {
    check_preds(preds)?;
    ScoreVector::new(AcquisitionKind::Milb, preds.iter().map(milb).collect())
}

/// Monte-Carlo estimate of the mutual information between the member index
/// and the output: `E[log p_z(y) - log p(y)]` with `z ~ w`, `y ~ p_z`.
pub fn mutual_information_mc(pred: &EnsemblePrediction, n_samples: usize, rng: &mut RngStream) -> Result<McEstimate> {
    if n_samples < 2 {
        return Err(Error::InvalidParameter("need at least two samples".into()));
    }
    let marginal = pred.marginal_mixture();
    let w = pred.member_weights();
    let mut vals = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let u = rng.unit();
        let mut acc = 0.0;
        let mut z = w.len() - 1;
        for (i, wi) in w.iter().enumerate() {
            acc += wi;
            if u < acc {
                z = i;
                break;
            }
        }
        let member = &pred.members()[z];
        let y = member.sample(rng);
        vals.push(member.log_pdf_unchecked(&y) - marginal.log_pdf_unchecked(&y));
    }
    Ok(McEstimate::from_values(vals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::DiagGaussianMixture;
    use crate::gmm::log_sum_exp;
    use approx::assert_relative_eq;

    fn gauss(mean: f64, var: f64) -> DiagGaussianMixture {
        DiagGaussianMixture::new(vec![1.0], vec![vec![mean]], vec![vec![var]]).unwrap()
    }

    fn random_mixture(rng: &mut RngStream, k: usize, n: usize) -> DiagGaussianMixture {
        let w = rng.dirichlet(&vec![1.0; k]).unwrap();
        let means = (0..k).map(|_| (0..n).map(|_| rng.normal(0.0, 2.0)).collect()).collect();
        let vars = (0..k).map(|_| (0..n).map(|_| rng.normal(0.0, 0.7).exp()).collect()).collect();
        DiagGaussianMixture::new(w, means, vars).unwrap()
    }

    fn random_ensemble(rng: &mut RngStream) -> EnsemblePrediction {
        let n_ens = 1 + rng.index(4);
        let k = 1 + rng.index(3);
        let n = 1 + rng.index(4);
        let members = (0..n_ens).map(|_| random_mixture(rng, k, n)).collect();
        let w = rng.dirichlet(&vec![2.0; n_ens]).unwrap();
        EnsemblePrediction::new(members, w).unwrap()
    }

    /// The score written out as one double sum over (member, component)
    /// pairs of the marginal, without forming the marginal object.
    fn milb_expanded(pred: &EnsemblePrediction) -> f64 {
        let members = pred.members();
        let w = pred.member_weights();
        let dim = pred.dim();
        let mut flat = Vec::new();
        for (z, m) in members.iter().enumerate() {
            for i in 0..m.n_components() {
                flat.push((w[z] * m.weights()[i], m.mean(i).to_vec(), m.variance(i).to_vec()));
            }
        }
        let mut lower = 0.0;
        for (bi, mi, vi) in &flat {
            if *bi == 0.0 {
                continue;
            }
            let terms: Vec<f64> = flat
                .iter()
                .map(|(bj, mj, vj)| {
                    let mut q = 0.0;
                    for d in 0..dim {
                        let s = vi[d] + vj[d];
                        q += (2.0 * std::f64::consts::PI * s).ln() + (mi[d] - mj[d]).powi(2) / s;
                    }
                    bj.ln() - 0.5 * q
                })
                .collect();
            lower -= bi * log_sum_exp(&terms);
        }
        let mut upper = 0.0;
        for (z, m) in members.iter().enumerate() {
            for i in 0..m.n_components() {
                let a = m.weights()[i];
                if a == 0.0 {
                    continue;
                }
                let logdet: f64 = m.variance(i).iter().map(|v| v.ln()).sum();
                let h = 0.5 * (dim as f64 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() + logdet);
                upper += w[z] * a * (-a.ln() + h);
            }
        }
        lower - upper
    }

    #[test]
    fn identical_members_closed_form() {
        let pred = EnsemblePrediction::uniform(vec![gauss(0.0, 1.0), gauss(0.0, 1.0)]).unwrap();
        let expected = 0.5 * (2.0 / std::f64::consts::E).ln();
        assert_relative_eq!(milb(&pred), expected, epsilon = 1e-12);
        assert_relative_eq!(expected, -0.153_426, epsilon = 1e-6);
        assert_eq!(epistemic_variance(&pred), 0.0);
    }

    #[test]
    fn separated_members_closed_form() {
        let pred = EnsemblePrediction::uniform(vec![gauss(-50.0, 1.0), gauss(50.0, 1.0)]).unwrap();
        let expected = 2f64.ln() + 0.5 * (2.0 / std::f64::consts::E).ln();
        assert_relative_eq!(milb(&pred), expected, epsilon = 1e-9);
        assert_relative_eq!(expected, 0.539_721, epsilon = 1e-6);
        let mi = mutual_information_mc(&pred, 20_000, &mut RngStream::new(0, 0)).unwrap();
        assert!((mi.estimate - 2f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn two_point_epistemic_variance() {
        let pred = EnsemblePrediction::uniform(vec![gauss(-1.0, 0.3), gauss(1.0, 2.0)]).unwrap();
        assert_relative_eq!(epistemic_variance(&pred), 1.0, epsilon = 1e-15);
        let swapped = EnsemblePrediction::uniform(vec![gauss(1.0, 2.0), gauss(-1.0, 0.3)]).unwrap();
        assert_eq!(epistemic_variance(&pred), epistemic_variance(&swapped));
    }

    #[test]
    fn boxed_and_expanded_forms_agree() {
        let mut rng = RngStream::new(17, 0);
        for _ in 0..200 {
            let pred = random_ensemble(&mut rng);
            let a = milb(&pred);
            let b = milb_expanded(&pred);
            assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn identical_members_never_positive() {
        let mut rng = RngStream::new(18, 0);
        for _ in 0..100 {
            let (k, d) = (1 + rng.index(4), 1 + rng.index(3));
            let m = random_mixture(&mut rng, k, d);
            let pred = EnsemblePrediction::uniform(vec![m.clone(), m.clone(), m]).unwrap();
            assert!(milb(&pred) <= 1e-12);
            assert!(epistemic_variance(&pred).abs() < 1e-20);
        }
    }

    #[test]
    fn lower_bound_holds_against_monte_carlo() {
        let mut rng = RngStream::new(19, 0);
        let mut mc_rng = RngStream::new(20, 0);
        for _ in 0..40 {
            let pred = random_ensemble(&mut rng);
            let mi = mutual_information_mc(&pred, 4000, &mut mc_rng).unwrap();
            assert!(milb(&pred) <= mi.estimate + 3.0 * mi.stderr);
            assert!(mi.estimate >= -3.0 * mi.stderr);
        }
    }

    #[test]
    fn scores_permute_with_candidates() {
        let mut rng = RngStream::new(21, 0);
        let preds: Vec<_> = (0..12).map(|_| random_ensemble(&mut rng)).collect();
        let perm = [3, 7, 0, 11, 5, 1, 9, 2, 10, 4, 8, 6];
        let permuted: Vec<_> = perm.iter().map(|&i| preds[i].clone()).collect();
        for f in [score_milb, score_epistemic_variance] {
            let a = f(&preds).unwrap();
            let b = f(&permuted).unwrap();
            for (j, &i) in perm.iter().enumerate() {
                assert_eq!(a.scores[i], b.scores[j]);
            }
        }
    }

    #[test]
    fn random_scores() {
        let a = score_random(1000, &mut RngStream::new(1, 0)).unwrap();
        let b = score_random(1000, &mut RngStream::new(1, 0)).unwrap();
        let c = score_random(1000, &mut RngStream::new(2, 0)).unwrap();
        assert_eq!(a, b);
        assert!(a.scores.iter().all(|s| (0.0..1.0).contains(s)));
        let top = |v: &ScoreVector| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&i, &j| v.scores[j].total_cmp(&v.scores[i]));
            let mut t = idx[..10].to_vec();
            t.sort();
            t
        };
        assert_ne!(top(&a), top(&c));
        assert!(score_random(0, &mut RngStream::new(1, 0)).is_err());
    }

    #[test]
    fn csv_dump() {
        let v = ScoreVector::new(AcquisitionKind::Milb, vec![0.5, -1.25]).unwrap();
        let mut buf = Vec::new();
        v.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "candidate_index,score\n0,5e-1\n1,-1.25e0\n");
        assert!(ScoreVector::new(AcquisitionKind::Milb, vec![f64::NAN]).is_err());
    }

    #[test]
    fn kind_parsing() {
        for k in AcquisitionKind::ALL {
            assert_eq!(k.name().parse::<AcquisitionKind>().unwrap(), k);
        }
        assert_eq!("MI-LB".parse::<AcquisitionKind>().unwrap(), AcquisitionKind::Milb);
        assert!("bogus".parse::<AcquisitionKind>().is_err());
    }
}
