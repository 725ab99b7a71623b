//! Small end-to-end experiments on each benchmark.

use milb_core::acquisition::AcquisitionKind;
use milb_core::benchmarks::{oracle_nll, BenchmarkSpec, System};
use milb_core::harness::{run_experiment, ExperimentConfig};
use milb_core::RngStream;

fn small(benchmark: &str, acquisition: AcquisitionKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::defaults(benchmark).unwrap();
    cfg.pool_size = 600;
    cfg.test_size = 300;
    cfg.init_size = 20;
    cfg.rounds = 3;
    cfg.batch_size = 60;
    cfg.model.hidden = 32;
    cfg.model.depth = 2;
    cfg.model.components = 3;
    cfg.model.n_ens = 2;
    cfg.train.iter_cap = 600;
    cfg.train.min_iter = 300;
    cfg.acquisition = acquisition;
    cfg
}

#[test]
fn random_acquisition_improves_nll() {
    for bench in ["multimodal", "double_well", "ternary"] {
        let rec = run_experiment(&small(bench, AcquisitionKind::Random), 0).unwrap();
        let first = rec.rounds[0].test_nll;
        let last = rec.final_nll();
        println!("{bench}: {first:.3} -> {last:.3}");
        assert!(last < first, "{bench}: {first} -> {last}");
    }
}

#[test]
fn runs_repeat_exactly() {
    let cfg = small("multimodal", AcquisitionKind::Milb);
    let a = run_experiment(&cfg, 5).unwrap();
    let b = run_experiment(&cfg, 5).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    let c = run_experiment(&cfg, 6).unwrap();
    assert_ne!(a.rounds[1].acquired, c.rounds[1].acquired);
}

#[test]
fn probe_milb_shrinks_with_data() {
    let mut cfg = small("multimodal", AcquisitionKind::Random);
    cfg.probe_size = 100;
    cfg.rounds = 4;
    cfg.batch_size = 120;
    let rec = run_experiment(&cfg, 1).unwrap();
    let probe: Vec<f64> = rec.rounds.iter().map(|r| r.probe_milb.unwrap()).collect();
    println!("probe MI-LB by round: {probe:?}");
    assert!(probe.last().unwrap() < probe.first().unwrap(), "{probe:?}");
}

#[test]
fn ternary_oracle_and_boundary() {
    let System::Ternary(sys) = BenchmarkSpec::from_name("ternary").unwrap().build().unwrap() else {
        unreachable!()
    };
    let (frac, _) = sys.boundary_stats(200, 0.7);
    let system = System::Ternary(sys);
    let root = RngStream::new(0, 0);
    let x = system.sample_inputs(2000, &mut root.fork(1)).unwrap();
    let y = system.label_rows(&x, &root.fork(2)).unwrap();
    let nll = oracle_nll(&system, &x, &y).unwrap();
    println!("ternary oracle NLL {nll:.4}, boundary fraction {frac:.4}");
    assert!(nll.is_finite());
    assert!(frac > 0.0 && frac < 1.0);
}
