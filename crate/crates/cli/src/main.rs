//! Command-line front end: simulate crowd data, estimate worker quality,
//! predict, and run the Monte-Carlo experiments.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error. `ENN_THREADS` sets
//! the worker thread count.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use enn::config::{load_config, to_toml};
use enn::datagen::rng::{self, Purpose};
use enn::datagen::{partition_rows, partition_with_sizes, sample_ground_truth, QualitySetup, SimulationId, SimulationSpec};
use enn::enn::{
    estimate_quality_expert, estimate_quality_iterative, filter_adversarial, local_knn_weights,
    local_ownn_weights, CrowdData, EnnModel, IterativeOptions, WorkerQuality,
};
use enn::experiments::{
    cross_validate_global, default_count_grid, run_gamma_sweep, run_quality_estimation_eval,
    run_risk_comparison, run_weight_matching_check, setup_sizes, CvTarget, ExperimentConfig,
    WeightScheme,
};
use enn::io::{
    align_qualities, format_real, read_crowd_csv, read_points_csv, read_quality_csv, worker_ids,
    write_atomic, write_crowd_csv, write_predictions_csv, write_quality_csv, write_truth_csv,
    QualityRecord, TruthRecord, WorkerId,
};
use enn::weights::{knn_weights, optimal_m_star, ownn_weights, power_count, RegretConstants, WeightVector};
use enn::{Points, WnnModel};

#[derive(Parser)]
#[command(name = "enn", version, about = "Nearest-neighbor classification of crowdsourced binary labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample ground truth, split it across workers and corrupt their labels.
    Simulate(SimulateArgs),
    /// Estimate each worker's sensitivity and specificity.
    EstimateQuality(EstimateArgs),
    /// Fit a classifier on crowd data and score query points.
    Predict(PredictArgs),
    /// Run a Monte-Carlo experiment from a TOML config.
    Experiment(ExperimentArgs),
}

#[derive(clap::Args)]
struct SimulateArgs {
    /// Simulation design: 1, 2 or 3.
    #[arg(long, default_value_t = 1)]
    sim: u32,
    #[arg(long, default_value_t = 4)]
    d: usize,
    /// Worker quality setup, 1 to 10.
    #[arg(long, default_value_t = 1)]
    setup: usize,
    /// Total number of rows before scaling.
    #[arg(long, default_value_t = 20000)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Crowd CSV; `.truth.csv`, `.qualities.csv` and `.manifest.json` siblings are written too.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum EstimateMethod {
    Expert,
    Iterative,
}

#[derive(clap::Args)]
struct EstimateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum)]
    method: EstimateMethod,
    /// Stop threshold for the iterative method.
    #[arg(long, default_value_t = 0.02)]
    stop_c: f64,
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
    /// Global neighbor count for the iterative method; default ceil(N^0.7).
    #[arg(long)]
    k: Option<usize>,
    /// Leave each point out of its own worker's neighbors when relabeling.
    #[arg(long)]
    leave_one_out: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum PredictMethod {
    /// kNN on the pooled labels.
    Knn,
    /// Weighted NN on the pooled labels.
    Wnn,
    /// Enhanced nearest neighbor over the workers.
    Enn,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum WeightKind {
    Knn,
    Ownn,
}

#[derive(clap::Args)]
struct PredictArgs {
    #[arg(long)]
    train: PathBuf,
    /// Quality CSV; when absent, `enn` estimates qualities iteratively.
    #[arg(long)]
    qualities: Option<PathBuf>,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, value_enum, default_value_t = PredictMethod::Enn)]
    method: PredictMethod,
    #[arg(long, value_enum, default_value_t = WeightKind::Knn)]
    weights: WeightKind,
    /// Global kNN count; default ceil(N^0.7).
    #[arg(long, conflicts_with_all = ["mstar", "cv"])]
    k: Option<usize>,
    /// Global OWNN count; default from the closed form with B1/B2 = 1.
    #[arg(long, conflicts_with = "cv")]
    mstar: Option<usize>,
    /// Choose the global count by cross-validation.
    #[arg(long)]
    cv: bool,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ExperimentKind {
    Risk,
    Quality,
    Weights,
    Gamma,
}

#[derive(clap::Args)]
struct ExperimentArgs {
    #[arg(long, value_enum)]
    kind: ExperimentKind,
    /// TOML config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    version: &'static str,
    seed: Option<u64>,
    config: serde_json::Value,
    wall_clock_seconds: f64,
    outputs: Vec<OutputDigest>,
    metadata: serde_json::Value,
}

#[derive(Serialize)]
struct OutputDigest {
    file: String,
    sha256: String,
}

/// Files written by one command, with their digests for the manifest.
struct Outputs {
    written: Vec<OutputDigest>,
}

impl Outputs {
    fn new() -> Self {
        Self { written: Vec::new() }
    }

    fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))?;
        let digest: String = Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect();
        self.written.push(OutputDigest { file: path.display().to_string(), sha256: digest });
        Ok(())
    }

    fn manifest(
        self,
        path: &Path,
        command: &str,
        seed: Option<u64>,
        config: serde_json::Value,
        started: Instant,
        metadata: serde_json::Value,
    ) -> Result<()> {
        let m = RunManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config,
            wall_clock_seconds: started.elapsed().as_secs_f64(),
            outputs: self.written,
            metadata,
        };
        let text = serde_json::to_string_pretty(&m)? + "\n";
        write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s.into_bytes()
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let started = Instant::now();
    let sim = SimulationId::from_number(a.sim)?;
    let setup = QualitySetup::get(a.setup)?;
    if !(a.scale.is_finite() && a.scale > 0.0) {
        bail!("--scale must be positive");
    }
    let n = ((a.n as f64 * a.scale).round() as usize).max(1);
    let sizes = setup_sizes(setup, n)?;
    let spec = SimulationSpec::new(sim, a.d)?;
    let truth = sample_ground_truth::<f64, _>(&spec, n, &mut rng::stream(a.seed, 0, Purpose::Sample, 0))?;
    let part_seed = rng::derive(a.seed, setup.id as u64);
    let crowd = partition_with_sizes(&truth, &sizes, &setup.qualities(), setup.has_expert, part_seed, 0)?;
    let rows = partition_rows(n, &sizes, part_seed, 0)?;
    let ids = worker_ids(&crowd);

    let mut outputs = Outputs::new();
    let mut buf = Vec::new();
    write_crowd_csv(&mut buf, &crowd)?;
    outputs.write(&a.out, &buf)?;

    let truth_records: Vec<TruthRecord<f64>> = rows
        .iter()
        .zip(&ids)
        .flat_map(|(block, &id)| {
            block.iter().map(move |&r| (id, r))
        })
        .map(|(worker, r)| TruthRecord {
            worker,
            y_true: truth.labels()[r],
            eta0: spec.eta0(truth.points().row(r)),
        })
        .collect();
    let mut buf = Vec::new();
    write_truth_csv(&mut buf, &truth_records)?;
    outputs.write(&sibling(&a.out, ".truth.csv"), &buf)?;

    let known: Vec<WorkerQuality<f64>> = setup.qualities();
    let retained = filter_adversarial(&known)?.retained;
    let records: Vec<QualityRecord<f64>> = ids
        .iter()
        .zip(&known)
        .enumerate()
        .map(|(j, (&id, q))| QualityRecord { id, a: q.a, b: q.b, retained: retained.contains(&j) })
        .collect();
    let mut buf = Vec::new();
    write_quality_csv(&mut buf, &records)?;
    outputs.write(&sibling(&a.out, ".qualities.csv"), &buf)?;

    let config = serde_json::json!({
        "sim": a.sim, "d": a.d, "setup": a.setup, "n": a.n, "scale": a.scale, "seed": a.seed,
        "out": a.out.display().to_string(),
    });
    let meta = serde_json::json!({ "rows": n, "worker_sizes": sizes });
    outputs.manifest(&sibling(&a.out, ".manifest.json"), "simulate", Some(a.seed), config, started, meta)
}

fn read_crowd(path: &Path) -> Result<(Vec<WorkerId>, CrowdData<f64>)> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_crowd_csv(std::io::BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let started = Instant::now();
    let (ids, crowd) = read_crowd(&a.input)?;
    let mut meta = serde_json::Map::new();
    let qualities = match a.method {
        EstimateMethod::Expert => {
            let est = estimate_quality_expert(&crowd)?;
            for w in &est.warnings {
                eprintln!("warning: {w}");
            }
            meta.insert("k".into(), est.k.into());
            est.qualities
        }
        EstimateMethod::Iterative => {
            let k = a.k.unwrap_or_else(|| power_count(crowd.total_size(), 0.7));
            let weights = local_knn_weights(&crowd.sizes(), k)?;
            let opts = IterativeOptions { stop_c: a.stop_c, max_iters: a.max_iters, leave_one_out: a.leave_one_out };
            let est = estimate_quality_iterative(&crowd, &weights, &opts)?;
            for w in &est.warnings {
                eprintln!("warning: {w}");
            }
            if !est.converged {
                eprintln!("warning: stopped after {} iterations with change {:.4}", est.iterations, est.final_delta);
            }
            meta.insert("k".into(), k.into());
            meta.insert("iterations".into(), est.iterations.into());
            meta.insert("final_delta".into(), est.final_delta.into());
            meta.insert("converged".into(), est.converged.into());
            est.qualities
        }
    };
    let retained = filter_adversarial(&qualities)?.retained;
    let records: Vec<QualityRecord<f64>> = ids
        .iter()
        .zip(&qualities)
        .enumerate()
        .map(|(j, (&id, q))| QualityRecord { id, a: q.a, b: q.b, retained: retained.contains(&j) })
        .collect();
    let mut buf = Vec::new();
    write_quality_csv(&mut buf, &records)?;
    let mut outputs = Outputs::new();
    outputs.write(&a.out, &buf)?;
    let config = serde_json::json!({
        "in": a.input.display().to_string(), "method": a.method, "stop_c": a.stop_c,
        "max_iters": a.max_iters, "k": a.k, "leave_one_out": a.leave_one_out,
    });
    outputs.manifest(&sibling(&a.out, ".manifest.json"), "estimate-quality", None, config, started, meta.into())
}

fn scheme(kind: WeightKind) -> WeightScheme {
    match kind {
        WeightKind::Knn => WeightScheme::Knn,
        WeightKind::Ownn => WeightScheme::Ownn,
    }
}

fn predict(a: PredictArgs) -> Result<()> {
    let started = Instant::now();
    let (ids, crowd) = read_crowd(&a.train)?;
    let queries: Points<f64> = {
        let file = std::fs::File::open(&a.queries).with_context(|| format!("opening {}", a.queries.display()))?;
        read_points_csv(std::io::BufReader::new(file)).with_context(|| format!("reading {}", a.queries.display()))?
    };
    if queries.dim() != crowd.dim() {
        bail!("queries have {} columns but the training data has {}", queries.dim(), crowd.dim());
    }
    let kind = if a.method == PredictMethod::Knn { WeightKind::Knn } else { a.weights };
    if a.k.is_some() && kind != WeightKind::Knn {
        bail!("--k applies to kNN weights; use --mstar with --weights ownn");
    }
    if a.mstar.is_some() && kind != WeightKind::Ownn {
        bail!("--mstar applies to OWNN weights; use --k with kNN weights");
    }
    let n = crowd.total_size();
    let d = crowd.dim();
    let mut meta = serde_json::Map::new();

    let qualities = if a.method == PredictMethod::Enn {
        Some(match &a.qualities {
            Some(path) => {
                let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
                align_qualities(&ids, &read_quality_csv(std::io::BufReader::new(file))?)?
            }
            None => {
                eprintln!("notice: no quality file given; estimating qualities iteratively (stop_c = 0.02)");
                let k = power_count(n, 0.7);
                let est = estimate_quality_iterative(&crowd, &local_knn_weights(&crowd.sizes(), k)?, &IterativeOptions::default())?;
                meta.insert("iterations".into(), est.iterations.into());
                est.qualities
            }
        })
    } else {
        None
    };

    let count = if a.cv {
        let pooled = crowd.pooled();
        let target = match &qualities {
            Some(q) => CvTarget::Crowd(&crowd, q),
            None => CvTarget::Labeled(&pooled),
        };
        let out = cross_validate_global(&default_count_grid(n), target, a.folds, scheme(kind), a.seed)?;
        meta.insert("cv_grid".into(), serde_json::json!(out.grid));
        meta.insert("cv_losses".into(), serde_json::json!(out.losses));
        out.best
    } else {
        match kind {
            WeightKind::Knn => a.k.unwrap_or_else(|| power_count(n, 0.7)),
            WeightKind::Ownn => a.mstar.unwrap_or_else(|| optimal_m_star(n, d, &RegretConstants::<f64>::default())),
        }
    };
    meta.insert("global_count".into(), count.into());

    let scores = match qualities {
        Some(q) => {
            let weights = match kind {
                WeightKind::Knn => local_knn_weights(&crowd.sizes(), count)?,
                WeightKind::Ownn => local_ownn_weights(&crowd.sizes(), count, d)?,
            };
            let model = EnnModel::fit(&crowd, q, weights)?;
            let dropped: Vec<String> = model.filter_report().dropped.iter().map(|&j| ids[j].to_string()).collect();
            if !dropped.is_empty() {
                eprintln!("notice: dropped workers with a + b <= 1: {}", dropped.join(", "));
            }
            model.score_all(&queries)?
        }
        None => {
            let w: WeightVector<f64> = match kind {
                WeightKind::Knn => knn_weights(n, count)?,
                WeightKind::Ownn => ownn_weights(n, count, d)?,
            };
            WnnModel::new(crowd.pooled(), w)?.score_all(&queries)?
        }
    };
    let mut buf = Vec::new();
    write_predictions_csv(&mut buf, &scores)?;
    let mut outputs = Outputs::new();
    outputs.write(&a.out, &buf)?;
    let config = serde_json::json!({
        "train": a.train.display().to_string(),
        "qualities": a.qualities.as_ref().map(|p| p.display().to_string()),
        "queries": a.queries.display().to_string(),
        "method": a.method, "weights": kind, "k": a.k, "mstar": a.mstar, "cv": a.cv,
        "folds": a.folds, "seed": a.seed,
    });
    let seed = a.cv.then_some(a.seed);
    outputs.manifest(&sibling(&a.out, ".manifest.json"), "predict", seed, config, started, meta.into())
}

fn real(x: f64) -> String {
    format_real(x)
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = match &a.config {
        Some(p) => load_config(p).with_context(|| format!("loading {}", p.display()))?,
        None => {
            let cfg = ExperimentConfig::default();
            cfg.validate()?;
            cfg
        }
    };
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let dir = &a.out_dir;
    let mut outputs = Outputs::new();
    let mut seed = Some(cfg.seed);
    let meta = match a.kind {
        ExperimentKind::Risk => {
            let t = run_risk_comparison::<f64>(&cfg)?;
            let rows = t.rows.iter().map(|r| {
                vec![
                    r.method.to_string(),
                    r.setup_id.to_string(),
                    r.d.to_string(),
                    real(r.mean_risk),
                    real(r.stderr),
                    r.reps.to_string(),
                ]
            });
            outputs.write(&dir.join("risk.csv"), &csv_bytes(&["method", "setup_id", "d", "mean_risk", "stderr", "reps"], rows))?;
            let reps = t.rows.iter().flat_map(|r| {
                r.risks.iter().enumerate().map(move |(i, &x)| {
                    vec![r.method.to_string(), r.setup_id.to_string(), i.to_string(), real(x)]
                })
            });
            outputs.write(&dir.join("risk_reps.csv"), &csv_bytes(&["method", "setup_id", "rep", "risk"], reps))?;
            serde_json::json!({
                "n": t.n, "k": t.counts.k, "m_star": t.counts.m_star,
                "dominance_violations": t.dominance_violations,
            })
        }
        ExperimentKind::Quality => {
            let q = run_quality_estimation_eval::<f64>(&cfg)?;
            let rows = q.rows.iter().map(|r| {
                vec![
                    r.sim.to_string(),
                    r.d.to_string(),
                    r.setup_id.to_string(),
                    r.worker.to_string(),
                    r.method.to_string(),
                    real(r.true_a),
                    real(r.est_a),
                    real(r.true_b),
                    real(r.est_b),
                    r.reps.to_string(),
                ]
            });
            let header = ["sim", "d", "setup_id", "worker", "method", "true_a", "est_a", "true_b", "est_b", "reps"];
            outputs.write(&dir.join("quality.csv"), &csv_bytes(&header, rows))?;
            if !q.iterative_runs.is_empty() {
                let runs = q.iterative_runs.iter().map(|r| {
                    vec![
                        r.setup_id.to_string(),
                        r.rep.to_string(),
                        r.iterations.to_string(),
                        real(r.final_delta),
                        u8::from(r.converged).to_string(),
                    ]
                });
                let header = ["setup_id", "rep", "iterations", "final_delta", "converged"];
                outputs.write(&dir.join("iterations.csv"), &csv_bytes(&header, runs))?;
            }
            serde_json::json!({ "n": cfg.effective_n() })
        }
        ExperimentKind::Weights => {
            seed = None;
            let constants = cfg.constants()?;
            let rows = run_weight_matching_check::<f64>(cfg.d, &cfg.matching_sizes, cfg.matching_workers, &constants)?;
            let out = rows.iter().map(|r| {
                vec![
                    r.n.to_string(),
                    r.s.to_string(),
                    r.m_star.to_string(),
                    real(r.ratio_variance),
                    real(r.ratio_bias),
                ]
            });
            let header = ["n", "s", "m_star", "ratio_variance", "ratio_bias"];
            outputs.write(&dir.join("weights.csv"), &csv_bytes(&header, out))?;
            serde_json::json!({ "d": cfg.d })
        }
        ExperimentKind::Gamma => {
            let g = run_gamma_sweep::<f64>(&cfg)?;
            let rows = g.rows.iter().map(|r| {
                vec![
                    real(r.gamma),
                    r.s.to_string(),
                    real(r.mean_risk_enn),
                    real(r.mean_risk_ownn),
                    real(r.mean_risk_bayes),
                    real(r.mean_gap),
                    real(r.gap_stderr),
                    r.reps.to_string(),
                ]
            });
            let header = [
                "gamma", "s", "mean_risk_enn", "mean_risk_ownn", "mean_risk_bayes", "mean_gap", "gap_stderr", "reps",
            ];
            outputs.write(&dir.join("gamma.csv"), &csv_bytes(&header, rows))?;
            serde_json::json!({
                "n": g.n, "m_star": g.m_star, "gamma_threshold": g.gamma_threshold,
                "dominance_violations": g.dominance_violations,
            })
        }
    };
    let config = serde_json::json!({ "kind": a.kind, "toml": to_toml(&cfg) });
    outputs.manifest(&dir.join("manifest.json"), "experiment", seed, config, started, meta)
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("ENN_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("ENN_THREADS=`{v}` is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::EstimateQuality(a) => estimate(a),
        Command::Predict(a) => predict(a),
        Command::Experiment(a) => experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            log::debug!("{e:?}");
            ExitCode::from(2)
        }
    }
}
