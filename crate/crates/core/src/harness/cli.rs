//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use crate::acquisition::{score_milb, AcquisitionKind};
use crate::error::{Error, Result};
use crate::gmm::EnsemblePrediction;
use crate::harness::config::ExperimentConfig;
use crate::harness::report::{aggregate, final_table, load_records, write_curves_csv, write_grouped_curves};
use crate::harness::run::{run_experiment, RunRecord};
use crate::harness::verify::{random_mixture, run_all};
use crate::rng::RngStream;
use crate::selection::Strategy;

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

#[derive(Parser, Debug)]
#[command(name = "milb", version = VERSION, about = "Active learning with mixture-density-network ensembles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment for one seed.
    Run(RunArgs),
    /// Run every acquisition for every seed of a config.
    Sweep(SweepArgs),
    /// Randomized checks of the entropy bounds, gradients and MI-LB certificate.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Smaller suites.
        #[arg(long)]
        quick: bool,
    },
    /// Throughput of the scoring and entropy kernels.
    Bench {
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        n_ens: usize,
        #[arg(long, default_value_t = 5)]
        components: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
    },
    /// Aggregate `run_*.json` records in a directory to CSV.
    Report {
        #[arg(long)]
        dir: PathBuf,
        /// Defaults to `<dir>/curves.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// JSON experiment config.
    #[arg(long, conflicts_with = "benchmark")]
    config: Option<PathBuf>,
    /// Use the built-in settings for a benchmark instead of a config file.
    #[arg(long)]
    benchmark: Option<String>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    sbal_temp: Option<f64>,
    #[arg(long)]
    maxdist_w: Option<f64>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// Defaults to the first seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    acquisition: Option<String>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// Comma-separated acquisitions; defaults to all.
    #[arg(long, value_delimiter = ',')]
    acquisitions: Vec<String>,
    /// Comma-separated seeds; defaults to the config's.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
}

fn parse_strategy(name: &str, temp: Option<f64>, w: Option<f64>) -> Result<Strategy> {
    let s = match name.to_ascii_lowercase().as_str() {
        "topk" | "top_k" | "top-k" => Strategy::Topk,
        "sbal" => Strategy::Sbal {
            temperature: temp.unwrap_or(1.0),
        },
        "maxdist" => Strategy::Maxdist { weight: w.unwrap_or(1.0) },
        other => return Err(Error::Config(format!("unknown strategy '{other}'"))),
    };
    s.validate()?;
    Ok(s)
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut cfg = match (&args.config, &args.benchmark) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(b)) => ExperimentConfig::defaults(b)?,
        (None, None) => return Err(Error::Config("either --config or --benchmark is required".into())),
    };
    if let Some(name) = &args.strategy {
        cfg.strategy = parse_strategy(name, args.sbal_temp, args.maxdist_w)?;
    } else {
        // temperature or weight alone adjusts the configured strategy
        match &mut cfg.strategy {
            Strategy::Sbal { temperature } => *temperature = args.sbal_temp.unwrap_or(*temperature),
            Strategy::Maxdist { weight } => *weight = args.maxdist_w.unwrap_or(*weight),
            Strategy::Topk => {}
        }
    }
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn write_manifest(out: &Path, cfg: &ExperimentConfig) -> Result<()> {
    write_json(
        &out.join("manifest.json"),
        &json!({ "version": VERSION, "config_hash": cfg.hash(), "config": cfg }),
    )
}

/// Writes the record and its timing file; returns the record path.
pub fn save_record(out: &Path, rec: &RunRecord) -> Result<PathBuf> {
    let stem = format!("{}_{}", rec.config_hash, rec.seed);
    let path = out.join(format!("run_{stem}.json"));
    fs::write(&path, rec.to_json())?;
    write_json(
        &out.join(format!("timing_{stem}.json")),
        &json!({ "seed": rec.seed, "elapsed_seconds": rec.timings() }),
    )?;
    Ok(path)
}

fn run_one(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<RunRecord> {
    let rec = run_experiment(cfg, seed)?;
    let path = save_record(out, &rec)?;
    eprintln!(
        "{} {} seed {}: final test NLL {:.4} -> {}",
        rec.benchmark,
        rec.method,
        seed,
        rec.final_nll(),
        path.display()
    );
    Ok(rec)
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(a) = &args.acquisition {
        cfg.acquisition = a.parse()?;
    }
    cfg.validate()?;
    let seed = args
        .seed
        .or_else(|| cfg.seeds.first().copied())
        .ok_or_else(|| Error::Config("no seed given".into()))?;
    fs::create_dir_all(&args.common.out)?;
    write_manifest(&args.common.out, &cfg)?;
    let rec = run_one(&cfg, seed, &args.common.out)?;
    write_curves_csv(&aggregate(&[rec])?, fs::File::create(args.common.out.join("curves.csv"))?)
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let base = load_config(&args.common)?;
    let kinds = if args.acquisitions.is_empty() {
        AcquisitionKind::ALL.to_vec()
    } else {
        args.acquisitions.iter().map(|a| a.parse()).collect::<Result<Vec<_>>>()?
    };
    let seeds = if args.seeds.is_empty() { base.seeds.clone() } else { args.seeds.clone() };
    let out = &args.common.out;
    fs::create_dir_all(out)?;
    let mut configs = Vec::new();
    for kind in kinds {
        let mut cfg = base.clone();
        cfg.acquisition = kind;
        if kind.is_set_valued() {
            cfg.strategy = Strategy::Topk;
        }
        cfg.seeds = seeds.clone();
        cfg.validate()?;
        configs.push(cfg);
    }
    write_json(
        &out.join("manifest.json"),
        &json!({
            "version": VERSION,
            "configs": configs.iter().map(|c| json!({ "config_hash": c.hash(), "config": c })).collect::<Vec<_>>(),
        }),
    )?;
    let jobs: Vec<(usize, u64)> = (0..configs.len())
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(c, s)| run_one(&configs[c], s, out))
        .collect::<Result<Vec<_>>>()?;
    write_grouped_curves(&records, fs::File::create(out.join("curves.csv"))?)?;
    print_final(&records)
}

fn print_final(records: &[RunRecord]) -> Result<()> {
    println!("benchmark,method,n_seeds,n_labeled,nll_mean,nll_std,nll_min,nll_max");
    for r in final_table(records)? {
        println!(
            "{},{},{},{},{:.4},{:.4},{:.4},{:.4}",
            r.benchmark, r.method, r.n_seeds, r.n_labeled, r.nll_mean, r.nll_std, r.nll_min, r.nll_max
        );
    }
    Ok(())
}

fn cmd_verify(seed: u64, quick: bool) -> Result<bool> {
    let reports = run_all(seed, quick)?;
    for r in &reports {
        println!(
            "{} {}: {} cases, {} violations, worst {:.3e} ({:.1}s)",
            if r.passed() { "PASS" } else { "FAIL" },
            r.name,
            r.cases,
            r.violations,
            r.worst,
            r.seconds
        );
    }
    Ok(reports.iter().all(|r| r.passed()))
}

fn cmd_bench(n: usize, n_ens: usize, k: usize, dim: usize) -> Result<()> {
    let mut rng = RngStream::new(0, 0);
    let preds = (0..n)
        .map(|_| {
            let members = (0..n_ens).map(|_| random_mixture(&mut rng, k, dim)).collect::<Result<Vec<_>>>()?;
            EnsemblePrediction::uniform(members)
        })
        .collect::<Result<Vec<_>>>()?;
    let t = Instant::now();
    let scores = score_milb(&preds)?;
    let secs = t.elapsed().as_secs_f64();
    println!(
        "milb: {n} candidates ({n_ens} members x {k} components, dim {dim}) in {:.3}s = {:.0}/s",
        secs,
        n as f64 / secs
    );
    let mixtures: Vec<_> = preds.iter().map(|p| p.marginal_mixture()).collect();
    let t = Instant::now();
    let total: f64 = mixtures.iter().map(|m| m.entropy_lower() + m.entropy_upper()).sum();
    let secs = t.elapsed().as_secs_f64();
    println!(
        "entropy bounds: {n} mixtures of {} components in {:.3}s = {:.0}/s",
        n_ens * k,
        secs,
        n as f64 / secs
    );
    std::hint::black_box((scores, total));
    Ok(())
}

fn cmd_report(dir: &Path, out: Option<PathBuf>) -> Result<()> {
    let records = load_records(dir)?;
    if records.is_empty() {
        return Err(Error::Config(format!("no run_*.json records in {}", dir.display())));
    }
    let out = out.unwrap_or_else(|| dir.join("curves.csv"));
    let single = records
        .iter()
        .all(|r| r.method == records[0].method && r.benchmark == records[0].benchmark);
    if single {
        write_curves_csv(&aggregate(&records)?, fs::File::create(&out)?)?;
    } else {
        write_grouped_curves(&records, fs::File::create(&out)?)?;
    }
    print_final(&records)
}

fn init_threads() {
    if let Some(n) = std::env::var("MILB_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        if n > 0 {
            // fails only if a pool already exists, which is fine
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Parses arguments (including the program name) and runs a subcommand.
/// Returns the process exit code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_threads();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a).map(|_| true),
        Command::Sweep(a) => cmd_sweep(a).map(|_| true),
        Command::Verify { seed, quick } => cmd_verify(seed, quick),
        Command::Bench {
            n,
            n_ens,
            components,
            dim,
        } => cmd_bench(n, n_ens, components, dim).map(|_| true),
        Command::Report { dir, out } => cmd_report(&dir, out).map(|_| true),
    };
    match result {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
