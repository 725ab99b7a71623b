//! The active-learning loop: train, evaluate, score, select, label.

use std::time::Instant;

use ndarray::{s, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{
    fisher_embed, milb, score_epistemic_variance, score_milb, score_random, select_bait, select_coreset,
    AcquisitionKind, ScoreVector,
};
use crate::benchmarks::{make_pool, LabeledPool, System};
use crate::error::{Error, Result};
use crate::gmm::EnsemblePrediction;
use crate::harness::config::ExperimentConfig;
use crate::mdn::{backbone_features, predict_batch, train_ensemble, MdnEnsemble};
use crate::rng::{label, RngStream};
use crate::selection::{select, BatchRequest};

const PROBE: u64 = 0x5001;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub n_labeled: usize,
    pub test_nll: f64,
    /// Pool indices queried after this round's evaluation.
    pub acquired: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_milb: Option<f64>,
    /// Wall-clock time of the round. Kept out of the JSON record so that
    /// records are byte-reproducible; see [`RunRecord::timings`].
    #[serde(skip)]
    pub elapsed_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub seed: u64,
    pub benchmark: String,
    pub method: String,
    pub rounds: Vec<RoundRecord>,
}

impl RunRecord {
    pub fn final_nll(&self) -> f64 {
        self.rounds.last().map_or(f64::NAN, |r| r.test_nll)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }

    pub fn timings(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.elapsed_seconds).collect()
    }
}

/// Predictions for every row, computed in parallel chunks.
pub fn predict_chunked(ens: &MdnEnsemble, x: ArrayView2<f64>, chunk: usize) -> Result<Vec<EnsemblePrediction>> {
    let n = x.nrows();
    let starts: Vec<usize> = (0..n).step_by(chunk.max(1)).collect();
    let parts = starts
        .par_iter()
        .map(|&a| predict_batch(ens, x.slice(s![a..(a + chunk).min(n), ..])))
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().flatten().collect())
}

/// Mean negative log marginal density over a test set.
pub fn evaluate_nll(ens: &MdnEnsemble, x: &Array2<f64>, y: &Array2<f64>) -> Result<f64> {
    if x.nrows() == 0 {
        return Err(Error::Empty("test set"));
    }
    if x.nrows() != y.nrows() {
        return Err(Error::Dimension {
            expected: x.nrows(),
            got: y.nrows(),
        });
    }
    let preds = predict_chunked(ens, x.view(), 256)?;
    let total = (0..preds.len())
        .into_par_iter()
        .map(|i| preds[i].marginal_mixture().log_pdf(&y.row(i).to_vec()))
        .collect::<Result<Vec<f64>>>()?
        .iter()
        .sum::<f64>();
    Ok(-total / x.nrows() as f64)
}

/// Score every pool point with a per-candidate acquisition.
pub fn score_pool(
    kind: AcquisitionKind,
    ens: &MdnEnsemble,
    inputs: &Array2<f64>,
    chunk: usize,
    stream: &mut RngStream,
) -> Result<ScoreVector> {
    match kind {
        AcquisitionKind::Random => score_random(inputs.nrows(), stream),
        AcquisitionKind::EpistemicVariance | AcquisitionKind::Milb => {
            let n = inputs.nrows();
            let starts: Vec<usize> = (0..n).step_by(chunk.max(1)).collect();
            let parts = starts
                .par_iter()
                .map(|&a| {
                    let preds = predict_batch(ens, inputs.slice(s![a..(a + chunk).min(n), ..]))?;
                    let v = if kind == AcquisitionKind::Milb {
                        score_milb(&preds)?
                    } else {
                        score_epistemic_variance(&preds)?
                    };
                    Ok(v.scores)
                })
                .collect::<Result<Vec<_>>>()?;
            ScoreVector::new(kind, parts.into_iter().flatten().collect())
        }
        _ => Err(Error::InvalidParameter(format!("{kind} does not produce per-candidate scores"))),
    }
}

fn acquire_batch(
    cfg: &ExperimentConfig,
    ens: &MdnEnsemble,
    pool: &LabeledPool,
    stream: &RngStream,
) -> Result<Vec<usize>> {
    let labeled = pool.labeled();
    match cfg.acquisition {
        AcquisitionKind::Bait => {
            let cands = pool.unlabeled();
            let member = &ens.members()[0];
            let cx = pool.inputs.select(Axis(0), &cands);
            let lx = pool.inputs.select(Axis(0), labeled);
            let ce = fisher_embed(member, cx.view(), &stream.fork(1))?;
            let le = fisher_embed(member, lx.view(), &stream.fork(2))?;
            let local = select_bait(&ce, &le, cfg.batch_size, cfg.bait_ridge)?;
            Ok(local.into_iter().map(|i| cands[i]).collect())
        }
        AcquisitionKind::Coreset => {
            let cands = pool.unlabeled();
            let member = &ens.members()[0];
            let cf = backbone_features(member, pool.inputs.select(Axis(0), &cands).view())?;
            let lf = backbone_features(member, pool.inputs.select(Axis(0), labeled).view())?;
            let local = select_coreset(cf.view(), lf.view(), cfg.batch_size)?;
            Ok(local.into_iter().map(|i| cands[i]).collect())
        }
        kind => {
            let scores = score_pool(kind, ens, &pool.inputs, cfg.chunk_size, &mut stream.fork(1))?;
            let req = BatchRequest::new(cfg.batch_size, cfg.strategy, labeled.iter().copied());
            select(&scores.scores, Some(pool.inputs.view()), &req, &mut stream.fork(2))
        }
    }
}

fn round_error(round: usize, e: Error) -> Error {
    match e {
        Error::Run { .. } => e,
        other => Error::Run {
            round,
            message: other.to_string(),
        },
    }
}

pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<RunRecord> {
    cfg.validate()?;
    let system: System = cfg.benchmark.build()?;
    let root = RngStream::new(seed, 0);
    let mut pool = make_pool(&system, cfg.pool_size, cfg.test_size, cfg.init_size, &root)?;
    let arch = cfg.arch(system.input_dim(), system.output_dim());
    let probe = if cfg.probe_size > 0 {
        Some(system.sample_inputs(cfg.probe_size, &mut root.fork(PROBE))?)
    } else {
        None
    };
    let mut rounds = Vec::with_capacity(cfg.rounds + 1);
    for round in 0..=cfg.rounds {
        let start = Instant::now();
        let rs = root.fork(label::ROUND + round as u64);
        let step = || -> Result<RoundRecord> {
            let data = pool.training_data();
            let ens = train_ensemble(&data, arch, &cfg.train, cfg.model.n_ens, &rs.fork(label::INIT))?;
            let test_nll = evaluate_nll(&ens, &pool.test_x, &pool.test_y)?;
            if !test_nll.is_finite() {
                return Err(Error::NonFinite(format!("test NLL {test_nll}")));
            }
            let probe_milb = match &probe {
                Some(p) => {
                    let preds = predict_chunked(&ens, p.view(), cfg.chunk_size)?;
                    Some(preds.iter().map(milb).sum::<f64>() / preds.len() as f64)
                }
                None => None,
            };
            let acquired = if round < cfg.rounds {
                acquire_batch(cfg, &ens, &pool, &rs.fork(label::ACQUISITION))?
            } else {
                Vec::new()
            };
            Ok(RoundRecord {
                round,
                n_labeled: pool.n_labeled(),
                test_nll,
                acquired,
                probe_milb,
                elapsed_seconds: 0.0,
            })
        };
        let mut rec = step().map_err(|e| round_error(round, e))?;
        pool.acquire(&system, &rec.acquired).map_err(|e| round_error(round, e))?;
        rec.elapsed_seconds = start.elapsed().as_secs_f64();
        rounds.push(rec);
    }
    Ok(RunRecord {
        config_hash: cfg.hash(),
        seed,
        benchmark: cfg.benchmark.name().to_string(),
        method: cfg.method(),
        rounds,
    })
}
