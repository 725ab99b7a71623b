//! Randomized self-checks of the numerical kernels: the entropy sandwich,
//! the NLL gradient against finite differences, and the MI-LB certificate.

use ndarray::Array2;
use serde::Serialize;

use crate::acquisition::{milb, mutual_information_mc};
use crate::error::Result;
use crate::gmm::{DiagGaussianMixture, EnsemblePrediction};
use crate::mdn::{grad_nll, nll_loss, MdnArch, MdnParams};
use crate::rng::RngStream;

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub violations: usize,
    /// Largest observed violation margin (or error, for the gradient suite).
    pub worst: f64,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Weights from a flat Dirichlet, means `N(0, 9)`, variances `LogNormal(0, 1)`.
pub fn random_mixture(rng: &mut RngStream, k: usize, dim: usize) -> Result<DiagGaussianMixture> {
    let weights = rng.dirichlet(&vec![1.0; k])?;
    let means = (0..k * dim).map(|_| rng.normal(0.0, 3.0)).collect();
    let vars = (0..k * dim).map(|_| rng.std_normal().exp()).collect();
    DiagGaussianMixture::from_flat(weights, means, vars, dim)
}

fn timed<F: FnOnce() -> Result<(usize, f64)>>(name: &'static str, cases: usize, f: F) -> Result<SuiteReport> {
    let start = std::time::Instant::now();
    let (violations, worst) = f()?;
    Ok(SuiteReport {
        name,
        cases,
        violations,
        worst,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Checks `lower <= H_mc + 3 se` and `upper >= H_mc - 3 se` on random
/// mixtures with up to `max_k` components in up to `max_dim` dimensions.
pub fn entropy_sandwich(n_cases: usize, n_samples: usize, max_k: usize, max_dim: usize, seed: u64) -> Result<SuiteReport> {
    timed("entropy_sandwich", n_cases, || {
        let root = RngStream::new(seed, 0);
        let mut violations = 0;
        let mut worst = f64::NEG_INFINITY;
        for case in 0..n_cases {
            let mut rng = root.fork(case as u64);
            let k = 1 + rng.index(max_k);
            let dim = 1 + rng.index(max_dim);
            let m = random_mixture(&mut rng, k, dim)?;
            let mc = m.entropy_mc(n_samples, &mut rng)?;
            let margin = (m.entropy_lower() - mc.estimate - 3.0 * mc.stderr)
                .max(mc.estimate - 3.0 * mc.stderr - m.entropy_upper());
            worst = worst.max(margin);
            if margin > 0.0 {
                violations += 1;
            }
        }
        Ok((violations, worst))
    })
}

/// Checks `milb <= I_mc + 3 se` on random ensembles.
pub fn milb_certificate(
    n_cases: usize,
    n_samples: usize,
    max_members: usize,
    max_k: usize,
    max_dim: usize,
    seed: u64,
) -> Result<SuiteReport> {
    timed("milb_certificate", n_cases, || {
        let root = RngStream::new(seed, 1);
        let mut violations = 0;
        let mut worst = f64::NEG_INFINITY;
        for case in 0..n_cases {
            let mut rng = root.fork(case as u64);
            let n_ens = 1 + rng.index(max_members);
            let dim = 1 + rng.index(max_dim);
            let members = (0..n_ens)
                .map(|_| {
                    let k = 1 + rng.index(max_k);
                    random_mixture(&mut rng, k, dim)
                })
                .collect::<Result<Vec<_>>>()?;
            let pred = EnsemblePrediction::uniform(members)?;
            let mc = mutual_information_mc(&pred, n_samples, &mut rng)?;
            let margin = milb(&pred) - mc.estimate - 3.0 * mc.stderr;
            worst = worst.max(margin);
            if margin > 0.0 {
                violations += 1;
            }
        }
        Ok((violations, worst))
    })
}

/// Relative error `|a - b| / max(|a|, |b|, floor)`.
fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest relative error between the analytic gradient and central
/// differences with step `h`, over every parameter of one network.
pub fn gradient_error(params: &MdnParams, x: &Array2<f64>, y: &Array2<f64>, h: f64) -> Result<f64> {
    let (_, grads) = grad_nll(params, x.view(), y.view())?;
    let analytic = grads.to_flat();
    let mut flat = params.to_flat();
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for i in 0..flat.len() {
        let orig = flat[i];
        flat[i] = orig + h;
        probe.set_flat(&flat)?;
        let up = nll_loss(&probe, x.view(), y.view())?;
        flat[i] = orig - h;
        probe.set_flat(&flat)?;
        let down = nll_loss(&probe, x.view(), y.view())?;
        flat[i] = orig;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max(rel_err(analytic[i], fd, GRAD_FLOOR));
    }
    Ok(worst)
}

/// Absolute scale below which gradient entries are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Finite-difference check over random small architectures and batches.
/// A case violates when its worst relative error reaches `tol`.
pub fn gradient_check(n_cases: usize, h: f64, tol: f64, seed: u64) -> Result<SuiteReport> {
    timed("gradient_check", n_cases, || {
        let root = RngStream::new(seed, 2);
        let mut violations = 0;
        let mut worst: f64 = 0.0;
        for case in 0..n_cases {
            let mut rng = root.fork(case as u64);
            let arch = MdnArch {
                input_dim: 1 + rng.index(4),
                output_dim: 1 + rng.index(3),
                hidden: 2 + rng.index(7),
                depth: rng.index(3),
                components: 1 + rng.index(4),
            };
            let params = MdnParams::init(arch, &mut rng)?;
            let batch = 1 + rng.index(8);
            let x = Array2::from_shape_simple_fn((batch, arch.input_dim), || rng.normal(0.0, 1.0));
            let y = Array2::from_shape_simple_fn((batch, arch.output_dim), || rng.normal(0.0, 1.0));
            let err = gradient_error(&params, &x, &y, h)?;
            worst = worst.max(err);
            if !(err < tol) {
                violations += 1;
            }
        }
        Ok((violations, worst))
    })
}

/// The three suites at the sizes used by the `verify` subcommand.
pub fn run_all(seed: u64, quick: bool) -> Result<Vec<SuiteReport>> {
    let (n_mix, n_mc, n_ens_cases, n_mi) = if quick { (100, 10_000, 50, 10_000) } else { (1000, 100_000, 200, 20_000) };
    Ok(vec![
        entropy_sandwich(n_mix, n_mc, 8, 20, seed)?,
        milb_certificate(n_ens_cases, n_mi, 4, 3, 4, seed)?,
        gradient_check(10, 1e-5, 1e-4, seed)?,
    ])
}
