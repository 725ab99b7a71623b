//! Acceptance gate. Each check prints one PASS/FAIL line and asserts.
//!
//! Checks run one at a time (a shared lock) so that their wall-clock
//! budgets are measured without contention from each other.

use std::collections::HashSet;
use std::io::Write;
use std::f64::consts::PI;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use milb_core::acquisition::{milb, variance_failure_demo, AcquisitionKind};
use milb_core::benchmarks::{oracle_nll, BenchmarkSpec, DoubleWellParams, DoubleWellSystem};
use milb_core::gmm::{DiagGaussianMixture, EnsemblePrediction};
use milb_core::harness::verify::{entropy_sandwich, gradient_check, milb_certificate};
use milb_core::harness::{cli_main, evaluate_nll, run_experiment, ExperimentConfig};
use milb_core::mdn::{train_ensemble, Dataset, MdnArch, TrainConfig};
use milb_core::rng::RngStream;
use milb_core::selection::{select_maxdist, select_sbal, select_topk, BatchRequest, Strategy};
use ndarray::Array2;

static SERIAL: Mutex<()> = Mutex::new(());

fn report(id: u32, name: &str, pass: bool, detail: String, elapsed: Duration, budget: Duration) {
    let within = elapsed <= budget;
    // raw handle, so the line shows even when test output is captured
    let _ = writeln!(
        std::io::stdout(),
        "[{}] criterion {id:>2} {name}: {detail} ({:.1}s, budget {}s)",
        if pass && within { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
    assert!(within, "criterion {id} ({name}) exceeded its {}s budget", budget.as_secs());
}

fn lock() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

#[test]
fn c01_entropy_sandwich() {
    let _g = lock();
    let t = Instant::now();
    let r = entropy_sandwich(1000, 100_000, 8, 20, 2024).unwrap();
    report(
        1,
        "entropy sandwich",
        r.passed() && r.cases == 1000,
        format!("{} mixtures, {} violations, worst margin {:.3e}", r.cases, r.violations, r.worst),
        t.elapsed(),
        Duration::from_secs(120),
    );
}

#[test]
fn c02_milb_certificate() {
    let _g = lock();
    let t = Instant::now();
    let r = milb_certificate(200, 20_000, 4, 3, 4, 2024).unwrap();
    report(
        2,
        "MI-LB certificate",
        r.passed() && r.cases == 200,
        format!("{} ensembles, {} violations, worst margin {:.3e}", r.cases, r.violations, r.worst),
        t.elapsed(),
        Duration::from_secs(300),
    );
}

#[test]
fn c03_gradient_finite_differences() {
    let _g = lock();
    let t = Instant::now();
    let r = gradient_check(10, 1e-5, 1e-4, 2024).unwrap();
    report(
        3,
        "gradient check",
        r.passed() && r.cases == 10,
        format!("{} draws, max relative error {:.2e} (< 1e-4)", r.cases, r.worst),
        t.elapsed(),
        Duration::from_secs(60),
    );
}

#[test]
fn c04_closed_form_milb() {
    let _g = lock();
    let t = Instant::now();
    let g = |m: f64| DiagGaussianMixture::new(vec![1.0], vec![vec![m]], vec![vec![1.0]]).unwrap();
    let same = milb(&EnsemblePrediction::uniform(vec![g(0.3), g(0.3)]).unwrap());
    let apart = milb(&EnsemblePrediction::uniform(vec![g(-50.0), g(50.0)]).unwrap());
    let base = 0.5 * (2.0 / std::f64::consts::E).ln();
    let ok = (same - base).abs() < 1e-9 && (apart - (2f64.ln() + base)).abs() < 1e-6;
    report(
        4,
        "closed-form MI-LB",
        ok,
        format!("identical {same:.9} (want {base:.9}), separated {apart:.9} (want {:.9})", 2f64.ln() + base),
        t.elapsed(),
        Duration::from_secs(1),
    );
}

#[test]
fn c05_multimodal_oracle_nll() {
    let _g = lock();
    let t = Instant::now();
    let system = BenchmarkSpec::from_name("multimodal").unwrap().build().unwrap();
    let root = RngStream::new(0, 0);
    let x = system.sample_inputs(2000, &mut root.fork(1)).unwrap();
    let y = system.label_rows(&x, &root.fork(2)).unwrap();
    let nll = oracle_nll(&system, &x, &y).unwrap();
    report(
        5,
        "multimodal oracle NLL",
        (21.5..=24.5).contains(&nll),
        format!("{nll:.3} over 2000 pairs (band [21.5, 24.5])"),
        t.elapsed(),
        Duration::from_secs(60),
    );
}

#[test]
fn c06_kramers_transition() {
    let _g = lock();
    let t = Instant::now();
    let system = DoubleWellSystem::new(DoubleWellParams {
        particles: 1,
        ..DoubleWellParams::default()
    })
    .unwrap();
    let root = RngStream::new(6, 0);
    let sigmas = [0.3, 0.5, 0.7, 1.0];
    let fractions: Vec<f64> = sigmas
        .iter()
        .enumerate()
        .map(|(s, &sigma)| {
            let escaped = (0..2000)
                .filter(|&i| {
                    let mut rng = root.fork((s * 10_000 + i) as u64);
                    let y = system.simulate(&[-0.5], sigma, 0.0, &mut rng).unwrap();
                    *y.last().unwrap() > 0.0
                })
                .count();
            escaped as f64 / 2000.0
        })
        .collect();
    let monotone = fractions.windows(2).all(|w| w[1] >= w[0]);
    let at07 = fractions[2];
    let ok = fractions[0] < 0.01 && at07 >= 0.2 && 1.0 - at07 >= 0.2 && monotone;
    report(
        6,
        "Kramers transition",
        ok,
        format!("opposite-well fraction at sigma {sigmas:?} = {fractions:?}"),
        t.elapsed(),
        Duration::from_secs(120),
    );
}

#[test]
fn c07_mixture_head_necessity() {
    let _g = lock();
    let t = Instant::now();
    let system = BenchmarkSpec::from_name("double_well").unwrap().build().unwrap();
    let root = RngStream::new(7, 0);
    let x = system.sample_inputs(20_000, &mut root.fork(1)).unwrap();
    let y = system.label_rows(&x, &root.fork(2)).unwrap();
    let tx = system.sample_inputs(2000, &mut root.fork(3)).unwrap();
    let ty = system.label_rows(&tx, &root.fork(4)).unwrap();
    let data = Dataset::new(x, y).unwrap();
    let nll = |components: usize| {
        let arch = MdnArch {
            input_dim: system.input_dim(),
            output_dim: system.output_dim(),
            hidden: 128,
            depth: 3,
            components,
        };
        let ens = train_ensemble(&data, arch, &TrainConfig::default(), 4, &root.fork(10 + components as u64)).unwrap();
        evaluate_nll(&ens, &tx, &ty).unwrap()
    };
    let (k8, k1) = (nll(8), nll(1));
    report(
        7,
        "mixture head necessity",
        k8 <= k1 - 2.0,
        format!("test NLL K=8 {k8:.3}, K=1 {k1:.3}, gap {:.3} nats (need >= 2)", k1 - k8),
        t.elapsed(),
        Duration::from_secs(45 * 60),
    );
}

fn desk_double_well() -> ExperimentConfig {
    let mut c = ExperimentConfig::defaults("double_well").unwrap();
    c.pool_size = 10_000;
    c.test_size = 2000;
    c.init_size = 100;
    c.rounds = 10;
    c.batch_size = 30;
    c.model.n_ens = 4;
    c.model.components = 8;
    c.seeds = vec![0, 1, 2];
    c
}

#[test]
fn c08_acquisition_ordering() {
    let _g = lock();
    let t = Instant::now();
    let base = desk_double_well();
    let finals = |kind: AcquisitionKind| -> Vec<f64> {
        let mut c = base.clone();
        c.acquisition = kind;
        c.seeds
            .iter()
            .map(|&s| run_experiment(&c, s).unwrap().final_nll())
            .collect()
    };
    let milb_nll = finals(AcquisitionKind::Milb);
    let random_nll = finals(AcquisitionKind::Random);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ratio = mean(&random_nll) / mean(&milb_nll);
    let every = milb_nll.iter().zip(&random_nll).all(|(m, r)| m < r);
    report(
        8,
        "acquisition ordering",
        every && ratio >= 1.5,
        format!("final NLL MI-LB {milb_nll:.2?}, Random {random_nll:.2?}, mean ratio {ratio:.3} (need >= 1.5)"),
        t.elapsed(),
        Duration::from_secs(3 * 3600),
    );
}

#[test]
fn c09_variance_failure_demo() {
    let _g = lock();
    let t = Instant::now();
    let delta = PI / 8.0;
    let r = variance_failure_demo(delta, 200_000, &mut RngStream::new(9, 0)).unwrap();
    let want = (2.0 * PI).ln() - (4.0 * delta).ln();
    report(
        9,
        "variance failure demo",
        r.passes(0.01, 1e-3),
        format!(
            "trace variances {:.4} / {:.4}, entropy gap {:.6} (want {want:.6}), sampled gap {:.4}",
            r.circle_trace_variance, r.caps_trace_variance, r.entropy_gap, r.entropy_gap_mc
        ),
        t.elapsed(),
        Duration::from_secs(10),
    );
}

#[test]
fn c10_determinism() {
    let _g = lock();
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut c = ExperimentConfig::defaults("ternary").unwrap();
    c.pool_size = 400;
    c.test_size = 100;
    c.init_size = 20;
    c.rounds = 2;
    c.batch_size = 5;
    c.model.n_ens = 2;
    c.model.hidden = 16;
    c.train.min_iter = 100;
    c.train.iter_cap = 200;
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&c).unwrap()).unwrap();
    let run = |sub: &str| {
        let out = dir.path().join(sub);
        let args = ["milb", "run", "--config", cfg_path.to_str().unwrap(), "--seed", "3", "--out", out.to_str().unwrap()];
        assert_eq!(cli_main(args), 0);
        std::fs::read(out.join(format!("run_{}_3.json", c.hash()))).unwrap()
    };
    let (a, b) = (run("a"), run("b"));
    report(
        10,
        "determinism",
        a == b && !a.is_empty(),
        format!("two runs, {} and {} bytes, identical: {}", a.len(), b.len(), a == b),
        t.elapsed(),
        Duration::from_secs(120),
    );
}

/// Farthest-point traversal from the excluded rows, on per-column
/// z-scored features, ties to the lowest index.
fn farthest_point(features: &Array2<f64>, anchors: &[usize], k: usize) -> Vec<usize> {
    let (n, d) = features.dim();
    let mut z = features.clone();
    for j in 0..d {
        let col: Vec<f64> = (0..n).map(|i| features[[i, j]]).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt().max(1e-8);
        for i in 0..n {
            z[[i, j]] = (features[[i, j]] - mean) / std;
        }
    }
    let dist = |a: usize, b: usize| -> f64 { (0..d).map(|j| (z[[a, j]] - z[[b, j]]).powi(2)).sum::<f64>().sqrt() };
    let mut centres: Vec<usize> = anchors.to_vec();
    let mut out = Vec::new();
    for _ in 0..k {
        let pick = (0..n)
            .filter(|i| !centres.contains(i))
            .map(|i| (i, centres.iter().map(|&c| dist(i, c)).fold(f64::INFINITY, f64::min)))
            .fold(None, |best: Option<(usize, f64)>, (i, v)| match best {
                Some((_, bv)) if bv >= v => best,
                _ => Some((i, v)),
            })
            .unwrap()
            .0;
        centres.push(pick);
        out.push(pick);
    }
    out
}

#[test]
fn c11_selection_limits() {
    let _g = lock();
    let t = Instant::now();
    let root = RngStream::new(11, 0);
    let mut sbal_ok = 0;
    let mut maxdist_ok = 0;
    for case in 0..100u64 {
        let mut rng = root.fork(case);
        let n = 20 + rng.index(181);
        let scores: Vec<f64> = (0..n).map(|_| rng.normal(0.0, 1.0)).collect();
        let n_ex = 1 + rng.index(5);
        let ex: Vec<usize> = (0..n_ex).map(|_| rng.index(n)).collect();
        let k = 1 + rng.index(10);

        let cold = BatchRequest::new(k, Strategy::Sbal { temperature: 1e-9 }, ex.clone());
        let top = BatchRequest::new(k, Strategy::Topk, ex.clone());
        let a: HashSet<usize> = select_sbal(&scores, &cold, &mut rng.fork(1)).unwrap().into_iter().collect();
        let b: HashSet<usize> = select_topk(&scores, &top).unwrap().into_iter().collect();
        sbal_ok += usize::from(a == b);

        let dim = 1 + rng.index(6);
        let f = Array2::from_shape_simple_fn((n, dim), || rng.normal(0.0, 2.0));
        let req = BatchRequest::new(k, Strategy::Maxdist { weight: 0.0 }, ex.clone());
        let got: HashSet<usize> = select_maxdist(&scores, f.view(), &req).unwrap().into_iter().collect();
        let mut anchors: Vec<usize> = ex.iter().copied().collect::<HashSet<_>>().into_iter().collect();
        anchors.sort_unstable();
        let want: HashSet<usize> = farthest_point(&f, &anchors, k).into_iter().collect();
        maxdist_ok += usize::from(got == want);
    }
    report(
        11,
        "selection limits",
        sbal_ok == 100 && maxdist_ok == 100,
        format!("SBAL(T=1e-9)==top-k {sbal_ok}/100, MaxDist(w=0)==farthest-point {maxdist_ok}/100"),
        t.elapsed(),
        Duration::from_secs(60),
    );
}
