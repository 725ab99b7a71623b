//! Data-generating processes, pools and on-demand labeling.

pub mod double_well;
pub mod multimodal;
pub mod ternary;

use std::collections::HashMap;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::DiagGaussianMixture;
use crate::mdn::train::Dataset;
use crate::rng::{label, RngStream};

pub use double_well::{DoubleWellParams, DoubleWellSystem};
pub use multimodal::{MultimodalParams, MultimodalSystem};
pub use ternary::{TernaryParams, TernarySystem};

/// Benchmark choice plus its simulator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum BenchmarkSpec {
    Multimodal(MultimodalParams),
    DoubleWell(DoubleWellParams),
    Ternary(TernaryParams),
}

impl BenchmarkSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Multimodal(_) => "multimodal",
            Self::DoubleWell(_) => "double_well",
            Self::Ternary(_) => "ternary",
        }
    }

    pub fn build(&self) -> Result<System> {
        Ok(match self {
            Self::Multimodal(p) => System::Multimodal(MultimodalSystem::new(p.clone())?),
            Self::DoubleWell(p) => System::DoubleWell(DoubleWellSystem::new(p.clone())?),
            Self::Ternary(p) => System::Ternary(TernarySystem::new(p.clone())?),
        })
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().replace('-', "_").as_str() {
            "multimodal" => Ok(Self::Multimodal(MultimodalParams::default())),
            "double_well" | "doublewell" => Ok(Self::DoubleWell(DoubleWellParams::default())),
            "ternary" => Ok(Self::Ternary(TernaryParams::default())),
            other => Err(Error::Config(format!("unknown benchmark '{other}'"))),
        }
    }
}

/// A constructed simulator. Systems are immutable once built.
#[derive(Clone, Debug)]
pub enum System {
    Multimodal(MultimodalSystem),
    DoubleWell(DoubleWellSystem),
    Ternary(TernarySystem),
}

impl System {
    pub fn input_dim(&self) -> usize {
        match self {
            Self::Multimodal(s) => s.params.input_dim,
            Self::DoubleWell(s) => s.input_dim(),
            Self::Ternary(s) => s.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Self::Multimodal(s) => s.params.output_dim,
            Self::DoubleWell(s) => s.output_dim(),
            Self::Ternary(_) => 1,
        }
    }

    pub fn sample_input(&self, rng: &mut RngStream) -> Result<Vec<f64>> {
        match self {
            Self::Multimodal(s) => Ok(s.sample_input(rng)),
            Self::DoubleWell(s) => s.sample_input(rng),
            Self::Ternary(s) => s.sample_input(rng),
        }
    }

    /// Closed-form conditional density, where one exists.
    pub fn oracle(&self, x: &[f64]) -> Option<Result<DiagGaussianMixture>> {
        match self {
            Self::Multimodal(s) => Some(s.oracle(x)),
            Self::DoubleWell(_) => None,
            Self::Ternary(s) => Some(s.oracle(x)),
        }
    }

    /// Run the simulator once at `x`.
    pub fn label(&self, x: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
        match self {
            Self::DoubleWell(s) => s.label(x, rng),
            _ => Ok(self.oracle(x).expect("closed form")?.sample(rng)),
        }
    }

    pub fn sample_inputs(&self, n: usize, rng: &mut RngStream) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((n, self.input_dim()));
        for mut row in out.outer_iter_mut() {
            row.assign(&ndarray::ArrayView1::from(&self.sample_input(rng)?[..]));
        }
        Ok(out)
    }

    /// Labels for each row, row `i` simulated on `stream.fork(i)`.
    pub fn label_rows(&self, x: &Array2<f64>, stream: &RngStream) -> Result<Array2<f64>> {
        let rows: Vec<Vec<f64>> = (0..x.nrows())
            .into_par_iter()
            .map(|i| self.label(x.row(i).as_slice().expect("standard layout"), &mut stream.fork(i as u64)))
            .collect::<Result<_>>()?;
        let mut out = Array2::zeros((x.nrows(), self.output_dim()));
        for (mut dst, src) in out.outer_iter_mut().zip(rows) {
            dst.assign(&ndarray::ArrayView1::from(&src[..]));
        }
        Ok(out)
    }
}

/// Mean `-log p*(y | x)` under the closed-form density.
pub fn oracle_nll(system: &System, x: &Array2<f64>, y: &Array2<f64>) -> Result<f64> {
    if x.nrows() == 0 {
        return Err(Error::Empty("test set"));
    }
    let mut total = 0.0;
    for (xr, yr) in x.outer_iter().zip(y.outer_iter()) {
        let mix = system
            .oracle(xr.as_slice().expect("standard layout"))
            .ok_or_else(|| Error::InvalidParameter("benchmark has no closed-form density".into()))??;
        total -= mix.log_pdf(yr.as_slice().expect("standard layout"))?;
    }
    Ok(total / x.nrows() as f64)
}

/// Candidate pool with a held-out test set. Pool labels are simulated when
/// a point is acquired, each pool index on its own stream, so a label does
/// not depend on when it was requested.
#[derive(Clone, Debug)]
pub struct LabeledPool {
    pub inputs: Array2<f64>,
    pub test_x: Array2<f64>,
    pub test_y: Array2<f64>,
    labeled: Vec<usize>,
    labels: HashMap<usize, Vec<f64>>,
    label_stream: RngStream,
}

pub fn make_pool(
    system: &System,
    pool_size: usize,
    test_size: usize,
    init_size: usize,
    stream: &RngStream,
) -> Result<LabeledPool> {
    if pool_size == 0 || test_size == 0 || init_size == 0 {
        return Err(Error::InvalidParameter("pool, test and initial sizes must be positive".into()));
    }
    if init_size > pool_size {
        return Err(Error::InvalidParameter(format!("initial set {init_size} exceeds pool {pool_size}")));
    }
    let inputs = system.sample_inputs(pool_size, &mut stream.fork(label::POOL_INPUTS))?;
    let test_x = system.sample_inputs(test_size, &mut stream.fork(label::TEST_INPUTS))?;
    let test_y = system.label_rows(&test_x, &stream.fork(label::TEST_LABELS))?;
    // partial Fisher-Yates for the initial indices
    let mut order: Vec<usize> = (0..pool_size).collect();
    let mut rng = stream.fork(label::INITIAL_SET);
    for i in 0..init_size {
        let j = i + rng.index(pool_size - i);
        order.swap(i, j);
    }
    let mut pool = LabeledPool {
        inputs,
        test_x,
        test_y,
        labeled: Vec::new(),
        labels: HashMap::new(),
        label_stream: stream.fork(label::POOL_LABELS),
    };
    pool.acquire(system, &order[..init_size])?;
    Ok(pool)
}

impl LabeledPool {
    pub fn size(&self) -> usize {
        self.inputs.nrows()
    }

    /// Labeled pool indices in acquisition order.
    pub fn labeled(&self) -> &[usize] {
        &self.labeled
    }

    pub fn n_labeled(&self) -> usize {
        self.labeled.len()
    }

    pub fn is_labeled(&self, i: usize) -> bool {
        self.labels.contains_key(&i)
    }

    pub fn unlabeled(&self) -> Vec<usize> {
        (0..self.size()).filter(|i| !self.is_labeled(*i)).collect()
    }

    /// Simulate labels for new pool indices.
    pub fn acquire(&mut self, system: &System, indices: &[usize]) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for &i in indices {
            if i >= self.size() {
                return Err(Error::InvalidParameter(format!("pool index {i} out of range")));
            }
            if self.is_labeled(i) || !seen.insert(i) {
                return Err(Error::InvalidParameter(format!("pool index {i} acquired twice")));
            }
        }
        let labels: Vec<Vec<f64>> = indices
            .par_iter()
            .map(|&i| {
                let x = self.inputs.row(i);
                system.label(x.as_slice().expect("standard layout"), &mut self.label_stream.fork(i as u64))
            })
            .collect::<Result<_>>()?;
        for (&i, y) in indices.iter().zip(labels) {
            self.labels.insert(i, y);
            self.labeled.push(i);
        }
        Ok(())
    }

    pub fn label_of(&self, i: usize) -> Option<&[f64]> {
        self.labels.get(&i).map(|v| v.as_slice())
    }

    /// Labeled inputs and targets in acquisition order.
    pub fn training_data(&self) -> Dataset {
        let x = self.inputs.select(ndarray::Axis(0), &self.labeled);
        let dim = self.test_y.ncols();
        let mut y = Array2::zeros((self.labeled.len(), dim));
        for (mut row, i) in y.outer_iter_mut().zip(&self.labeled) {
            row.assign(&ndarray::ArrayView1::from(&self.labels[i][..]));
        }
        Dataset { x, y }
    }
}
