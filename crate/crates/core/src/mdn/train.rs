//! Member and ensemble training, ensemble prediction.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::gmm::EnsemblePrediction;
use crate::mdn::network::{forward_batch, grad_nll, MdnArch, MdnParams};
use crate::mdn::optim::{adamw_step, AdamState, LrSchedule, TrainConfig};
use crate::rng::{label, RngStream};

/// Inputs and targets, one row per example.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array2<f64>) -> Result<Self> {
        check_dim(x.nrows(), y.nrows())?;
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.y.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select(Axis(0), rows),
            y: self.y.select(Axis(0), rows),
        }
    }
}

/// Final parameters plus the per-step training loss.
#[derive(Clone, Debug)]
pub struct TrainedMember {
    pub params: MdnParams,
    pub losses: Vec<f64>,
}

/// Train one network from scratch. Batches have `min(batch_size, n)` rows;
/// when the data set is larger than a batch, rows are drawn with replacement.
pub fn train_member(data: &Dataset, arch: MdnArch, cfg: &TrainConfig, stream: &RngStream) -> Result<MdnParams> {
    Ok(train_member_traced(data, arch, cfg, stream)?.params)
}

pub fn train_member_traced(
    data: &Dataset,
    arch: MdnArch,
    cfg: &TrainConfig,
    stream: &RngStream,
) -> Result<TrainedMember> {
    train_member_steps(data, arch, cfg, stream, cfg.n_iter(data.len()))
}

/// As [`train_member_traced`] with an explicit step budget.
pub fn train_member_steps(
    data: &Dataset,
    arch: MdnArch,
    cfg: &TrainConfig,
    stream: &RngStream,
    n_iter: usize,
) -> Result<TrainedMember> {
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    cfg.validate()?;
    arch.validate()?;
    check_dim(arch.input_dim, data.input_dim())?;
    check_dim(arch.output_dim, data.output_dim())?;

    let mut params = MdnParams::init(arch, &mut stream.fork(label::INIT))?;
    let mut batches = stream.fork(label::BATCHES);
    let schedule = LrSchedule::for_run(cfg, n_iter);
    let mut state = AdamState::new(&params);
    let n = data.len();
    let full_batch = n <= cfg.batch_size;
    let mut rows = vec![0usize; cfg.batch_size.min(n)];
    let mut losses = Vec::with_capacity(n_iter);

    for step in 0..n_iter {
        let (loss, mut grads) = if full_batch {
            grad_nll(&params, data.x.view(), data.y.view())?
        } else {
            rows.iter_mut().for_each(|r| *r = batches.index(n));
            let b = data.select(&rows);
            grad_nll(&params, b.x.view(), b.y.view())?
        };
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {step}")));
        }
        losses.push(loss);
        adamw_step(&mut params, &mut grads, &mut state, step, &schedule, cfg);
        if !params.is_finite() {
            return Err(Error::NonFinite(format!("parameters after step {step}")));
        }
    }
    Ok(TrainedMember { params, losses })
}

/// Independently trained networks with uniform member weights.
#[derive(Clone, Debug, PartialEq)]
pub struct MdnEnsemble {
    members: Vec<MdnParams>,
}

impl MdnEnsemble {
    pub fn new(members: Vec<MdnParams>) -> Result<Self> {
        let first = members.first().ok_or(Error::Empty("ensemble"))?;
        if members.iter().any(|m| m.arch() != first.arch()) {
            return Err(Error::InvalidParameter("ensemble members differ in architecture".into()));
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[MdnParams] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn arch(&self) -> MdnArch {
        self.members[0].arch()
    }

    pub fn member_weights(&self) -> Vec<f64> {
        vec![1.0 / self.members.len() as f64; self.members.len()]
    }
}

/// Member `i` trains on the stream `master.fork(i)`.
pub fn train_ensemble(
    data: &Dataset,
    arch: MdnArch,
    cfg: &TrainConfig,
    n_ens: usize,
    master: &RngStream,
) -> Result<MdnEnsemble> {
    if n_ens == 0 {
        return Err(Error::InvalidParameter("n_ens must be positive".into()));
    }
    let members = (0..n_ens)
        .into_par_iter()
        .map(|i| train_member(data, arch, cfg, &master.fork(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    MdnEnsemble::new(members)
}

pub fn predict_ensemble(ens: &MdnEnsemble, x: &[f64]) -> Result<EnsemblePrediction> {
    let view = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(predict_batch(ens, view)?.pop().expect("one row"))
}

/// Per-row ensemble predictions for a batch of inputs.
pub fn predict_batch(ens: &MdnEnsemble, x: ArrayView2<f64>) -> Result<Vec<EnsemblePrediction>> {
    let per_member = ens
        .members
        .iter()
        .map(|m| forward_batch(m, x))
        .collect::<Result<Vec<_>>>()?;
    let mut iters: Vec<_> = per_member.into_iter().map(|v| v.into_iter()).collect();
    (0..x.nrows())
        .map(|_| {
            let members = iters.iter_mut().map(|it| it.next().expect("row")).collect();
            EnsemblePrediction::uniform(members)
        })
        .collect()
}
