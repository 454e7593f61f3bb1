//! Argument definitions and handlers for each subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use flowrecon_core::io::{read_frc1, read_sensors, write_frc1, write_sensors};
use flowrecon_core::metrics::relative_errors;
use flowrecon_core::synthetic::uniform_times;
use flowrecon_core::uq::{measurement_misfit, sample_fields, summarize};
use flowrecon_core::{
    compute_pod, compute_scaling, divergence_error, generate, relative_error, select_gpod_hyperparams, split,
    DivergenceOperator, FlowKind, FlowRecipe, FlowSeries, GpodPipeline, Grid, SamplingOperator, SensorLayout,
    SplitMode, SplitSpec,
};
use flowrecon_scvae::{train, LambdaMode, ScvaeArchitecture, ScvaeModel, TrainConfig};
use serde::Serialize;

use crate::experiment::{run_experiment, verify_run, write_csv, ExperimentPlan};
use crate::Failure;

#[derive(Debug, Parser)]
#[command(name = "flowrecon", version, about = "Sparse-sensor flow reconstruction with SCVAE and GPOD")]
pub struct Cli {
    /// Base seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for experiment cells.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Output file or directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic divergence-free snapshot series.
    Gen(GenArgs),
    /// Split a series into train, validation and test sets.
    Split(SplitArgs),
    /// Compute the scaling and a POD basis from training snapshots.
    Pod(PodArgs),
    /// Select GPOD hyperparameters on validation data and reconstruct.
    Gpod(GpodArgs),
    /// Train an SCVAE.
    Train(TrainArgs),
    /// Reconstruct snapshots from their sensor readings with a trained model.
    Predict(PredictArgs),
    /// Posterior predictive samples and summaries for one snapshot.
    Uq(UqArgs),
    /// Score predictions against truths.
    Eval(EvalArgs),
    /// Run a full experiment plan.
    Experiment(ExperimentArgs),
    /// Recompute the metrics of an experiment run from its artifacts.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value = "traveling_vortices")]
    pub kind: String,
    #[arg(long, default_value_t = 64)]
    pub nx: usize,
    #[arg(long, default_value_t = 32)]
    pub ny: usize,
    #[arg(long, default_value_t = 4.0)]
    pub lx: f64,
    #[arg(long, default_value_t = 2.0)]
    pub ly: f64,
    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 2)]
    pub kx: u32,
    #[arg(long, default_value_t = 1)]
    pub ky: u32,
    #[arg(long, default_value_t = 1.0)]
    pub phase_speed: f64,
    #[arg(long, default_value_t = 2000)]
    pub count: usize,
    /// Snapshot spacing; defaults to 1/73.7 of the flow period.
    #[arg(long)]
    pub dt: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// FRC1 series directory.
    pub input: PathBuf,
    #[arg(long, default_value = "sequential")]
    pub mode: String,
    #[arg(long, default_value_t = 0.15)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0.30)]
    pub validation_fraction: f64,
}

#[derive(Debug, Args)]
pub struct PodArgs {
    /// Training FRC1 directory.
    pub train: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub r: usize,
}

/// Where a command gets its sensor layout from.
#[derive(Debug, Args)]
pub struct SensorArgs {
    /// Sensor layout JSON.
    #[arg(long)]
    pub sensors: Option<PathBuf>,
    /// Draw this many sensors at random (seeded by --seed) instead.
    #[arg(long, conflicts_with = "sensors")]
    pub m: Option<usize>,
}

impl SensorArgs {
    fn resolve(&self, grid: &Grid, seed: u64) -> anyhow::Result<SensorLayout> {
        match (&self.sensors, self.m) {
            (Some(p), _) => Ok(read_sensors(p)?),
            (None, Some(m)) => Ok(SensorLayout::random(grid, m, seed)?),
            (None, None) => bail!("give --sensors FILE or --m COUNT"),
        }
    }
}

#[derive(Debug, Args)]
pub struct GpodArgs {
    /// Directory holding train/, validation/ and test/ as written by `split`.
    pub data: PathBuf,
    #[command(flatten)]
    pub sensors: SensorArgs,
    #[arg(long, default_value_t = 30)]
    pub r_max: usize,
    /// Candidate weights; include 0 for the unregularized variant.
    #[arg(long, value_delimiter = ',', default_value = "0,0.0001,0.001,0.01,0.1,1,10")]
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory holding train/ and validation/ as written by `split`.
    pub data: PathBuf,
    #[command(flatten)]
    pub sensors: SensorArgs,
    /// Preset name (cylinder, ocean, desk, tiny) or architecture JSON file.
    #[arg(long, default_value = "desk")]
    pub arch: String,
    /// Training configuration JSON; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// off or adaptive.
    #[arg(long)]
    pub lambda_mode: Option<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    pub model: PathBuf,
    /// FRC1 truths to measure at the model's sensors.
    #[arg(long, required_unless_present = "measurements")]
    pub input: Option<PathBuf>,
    /// CSV of raw readings, one row per snapshot: u at each sensor, then v.
    #[arg(long, conflicts_with = "input")]
    pub measurements: Option<PathBuf>,
    /// Latent draws averaged per prediction.
    #[arg(long, default_value_t = 16)]
    pub draws: usize,
}

#[derive(Debug, Args)]
pub struct UqArgs {
    pub model: PathBuf,
    /// FRC1 series holding the snapshot to condition on.
    #[arg(long)]
    pub input: PathBuf,
    /// Position of the snapshot within the series.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, default_value_t = 200)]
    pub n_mc: usize,
    /// Probability of the reported intervals.
    #[arg(long, default_value_t = 0.95)]
    pub p: f64,
    /// Samples written out as an FRC1 series.
    #[arg(long, default_value_t = 9)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// FRC1 predictions.
    pub predictions: PathBuf,
    /// FRC1 truths, in the same order.
    pub truths: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Plan JSON; without it the 64x32 traveling-vortex plan is used.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Write the effective plan to the output directory and stop.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Experiment output directory.
    pub run: PathBuf,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
}

fn invalid(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Invalid(e.into())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(invalid)?;
    }
    fs::write(path, serde_json::to_string_pretty(value).map_err(invalid)?).map_err(invalid)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(invalid)?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display())).map_err(invalid)
}

fn load_series(path: &Path) -> Result<FlowSeries, Failure> {
    read_frc1(path).with_context(|| format!("reading {}", path.display())).map_err(invalid)
}

#[derive(Debug, Serialize)]
struct Scores {
    count: usize,
    mean_relative_error: f64,
    divergence_error: f64,
    relative_errors: Vec<f64>,
}

fn scores(preds: &[Vec<f64>], truths: &[Vec<f64>], grid: Grid) -> Result<Scores, Failure> {
    let div = DivergenceOperator::new(grid).map_err(|e| Failure::classify(e.into()))?;
    let errs = relative_errors(preds, truths).map_err(|e| Failure::classify(e.into()))?;
    Ok(Scores {
        count: errs.len(),
        mean_relative_error: relative_error(preds, truths).map_err(|e| Failure::classify(e.into()))?,
        divergence_error: divergence_error(preds, &div).map_err(|e| Failure::classify(e.into()))?,
        relative_errors: errs,
    })
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    let out = cli.out.as_path();
    match cli.command {
        Command::Gen(a) => gen(&a, cli.seed, out),
        Command::Split(a) => split_cmd(&a, cli.seed, out),
        Command::Pod(a) => pod(&a, out),
        Command::Gpod(a) => gpod(&a, cli.seed, out),
        Command::Train(a) => train_cmd(&a, cli.seed, out),
        Command::Predict(a) => predict(&a, cli.seed, out),
        Command::Uq(a) => uq(&a, cli.seed, out),
        Command::Eval(a) => eval(&a, out),
        Command::Experiment(a) => experiment(&a, cli.seed, cli.threads, out),
        Command::Verify(a) => verify(&a),
    }
}

fn gen(a: &GenArgs, seed: u64, out: &Path) -> Result<(), Failure> {
    let kind: FlowKind = a.kind.parse().map_err(invalid)?;
    let recipe =
        FlowRecipe { kind, amplitude: a.amplitude, wavenumbers: (a.kx, a.ky), phase_speed: a.phase_speed, seed };
    recipe.validate().map_err(invalid)?;
    let grid = Grid::spanning(a.nx, a.ny, a.lx, a.ly).map_err(invalid)?;
    let dt = match a.dt {
        Some(dt) => dt,
        None => recipe.period(&grid).ok_or_else(|| invalid(anyhow::anyhow!("flow is steady; give --dt")))? / 73.7,
    };
    let series = generate(&recipe, grid, &uniform_times(a.count, dt)).map_err(invalid)?;
    write_frc1(out, &series).map_err(invalid)?;
    write_json(&out.join("recipe.json"), &recipe)?;
    println!("wrote {} snapshots on a {}x{} grid to {}", series.len(), a.nx, a.ny, out.display());
    Ok(())
}

fn split_cmd(a: &SplitArgs, seed: u64, out: &Path) -> Result<(), Failure> {
    let mode = match a.mode.as_str() {
        "sequential" => SplitMode::Sequential,
        "random" => SplitMode::Random,
        m => return Err(invalid(anyhow::anyhow!("split mode must be sequential or random, got {m:?}"))),
    };
    let spec = SplitSpec { mode, test_fraction: a.test_fraction, validation_fraction: a.validation_fraction, seed };
    let series = load_series(&a.input)?;
    let parts = split(&series, &spec).map_err(invalid)?;
    for (name, s) in [("train", &parts.train), ("validation", &parts.validation), ("test", &parts.test)] {
        write_frc1(&out.join(name), s).map_err(invalid)?;
    }
    write_json(&out.join("split.json"), &spec)?;
    println!("train {} / validation {} / test {}", parts.train.len(), parts.validation.len(), parts.test.len());
    Ok(())
}

fn pod(a: &PodArgs, out: &Path) -> Result<(), Failure> {
    let train = load_series(&a.train)?;
    let scaling = compute_scaling(&train).map_err(|e| Failure::classify(e.into()))?;
    let scaled = scaling.scale_series(&train).map_err(invalid)?;
    let basis = compute_pod(&scaled, a.r).map_err(|e| Failure::classify(e.into()))?;
    fs::create_dir_all(out).map_err(invalid)?;
    basis.save(&out.join("basis.pod")).map_err(invalid)?;
    write_json(&out.join("scaling.json"), &scaling)?;
    let total: f64 = basis.singular_values().iter().map(|s| s * s).sum();
    println!("POD rank {}; leading singular values {:?}", basis.r(), &basis.singular_values()[..basis.r().min(5)]);
    log::info!("captured energy (sum of squared singular values) {total:.6e}");
    Ok(())
}

#[derive(Debug, Serialize)]
struct GpodReport {
    r: usize,
    lambda: f64,
    validation_error: f64,
    test: Scores,
}

fn gpod(a: &GpodArgs, seed: u64, out: &Path) -> Result<(), Failure> {
    let train = load_series(&a.data.join("train"))?;
    let validation = load_series(&a.data.join("validation"))?;
    let test = load_series(&a.data.join("test"))?;
    let grid = train.grid();
    let layout = a.sensors.resolve(&grid, seed).map_err(invalid)?;
    let op = SamplingOperator::new(layout.clone(), &grid).map_err(invalid)?;
    let div = DivergenceOperator::new(grid).map_err(invalid)?;
    let scaling = compute_scaling(&train).map_err(|e| Failure::classify(e.into()))?;
    let scaled = scaling.scale_series(&train).map_err(invalid)?;
    let basis = compute_pod(&scaled, a.r_max.min(train.len())).map_err(|e| Failure::classify(e.into()))?;
    let pipe = GpodPipeline::new(&basis, &op, &div, scaling).map_err(invalid)?;
    let r_grid: Vec<usize> = (1..=basis.r()).collect();
    let sel = select_gpod_hyperparams(&pipe, &op, &validation, &r_grid, &a.lambdas)
        .map_err(|e| Failure::classify(e.into()))?;
    let preds = pipe.reconstruct_series(&op, &test, &sel.config).map_err(|e| Failure::classify(e.into()))?;
    let report = GpodReport {
        r: sel.config.r,
        lambda: sel.config.lambda,
        validation_error: sel.validation_error,
        test: scores(&preds, &test.states(), grid)?,
    };
    write_frc1(&out.join("predictions"), &FlowSeries::from_states(grid, &preds).map_err(invalid)?).map_err(invalid)?;
    write_sensors(&out.join("sensors.json"), &layout).map_err(invalid)?;
    write_json(&out.join("gpod.json"), &report)?;
    println!(
        "GPOD r={} lambda={}: validation {:.4}, test {:.4}, divergence {:.4}",
        report.r, report.lambda, report.validation_error, report.test.mean_relative_error, report.test.divergence_error
    );
    Ok(())
}

fn resolve_arch(spec: &str, grid: &Grid) -> Result<ScvaeArchitecture, Failure> {
    let path = Path::new(spec);
    if path.extension().is_some_and(|e| e == "json") {
        read_json(path)
    } else {
        ScvaeArchitecture::preset(spec, grid).map_err(invalid)
    }
}

fn train_cmd(a: &TrainArgs, seed: u64, out: &Path) -> Result<(), Failure> {
    let train_set = load_series(&a.data.join("train"))?;
    let validation = load_series(&a.data.join("validation"))?;
    let grid = train_set.grid();
    let layout = a.sensors.resolve(&grid, seed).map_err(invalid)?;
    let arch = resolve_arch(&a.arch, &grid)?;
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainConfig { max_epochs: 150, ..TrainConfig::default() },
    };
    cfg.seed = seed;
    if let Some(e) = a.epochs {
        cfg.max_epochs = e;
    }
    if let Some(p) = a.patience {
        cfg.patience = p;
    }
    if let Some(lr) = a.lr {
        cfg.adam.learning_rate = lr;
    }
    if let Some(m) = &a.lambda_mode {
        cfg.lambda_mode = m.parse::<LambdaMode>().map_err(invalid)?;
    }
    cfg.validate().map_err(invalid)?;
    let outcome = train(&train_set, &validation, &layout, &arch, &cfg).map_err(|e| Failure::classify(e.into()))?;
    fs::create_dir_all(out).map_err(invalid)?;
    outcome.model.save(&out.join("model.frcmodel")).map_err(invalid)?;
    write_csv(&out.join("training_log.csv"), &outcome.log).map_err(invalid)?;
    write_json(&out.join("train_config.json"), &cfg)?;
    println!(
        "trained {} epochs, best epoch {} (validation objective {:.6})",
        outcome.epochs_trained,
        outcome.best_epoch,
        outcome.log.get(outcome.best_epoch.saturating_sub(1)).map_or(f64::NAN, |r| r.val_objective)
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<ScvaeModel, Failure> {
    ScvaeModel::load(path).with_context(|| format!("loading {}", path.display())).map_err(invalid)
}

fn read_measurements(path: &Path, n: usize) -> Result<Vec<Vec<f64>>, Failure> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path).map_err(invalid)?;
    let mut rows = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(invalid)?;
        let row = rec.iter().map(|f| f.trim().parse::<f64>()).collect::<Result<Vec<_>, _>>().map_err(invalid)?;
        if row.len() != n {
            return Err(invalid(anyhow::anyhow!("row {k} has {} readings, model needs {n}", row.len())));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(invalid(anyhow::anyhow!("no measurements in {}", path.display())));
    }
    Ok(rows)
}

fn predict(a: &PredictArgs, seed: u64, out: &Path) -> Result<(), Failure> {
    let model = load_model(&a.model)?;
    let grid = model.grid();
    let (readings, truths) = match (&a.input, &a.measurements) {
        (Some(p), _) => {
            let s = load_series(p)?;
            let truths = s.states();
            let m = truths.iter().map(|x| model.measure(x)).collect::<Result<Vec<_>, _>>().map_err(invalid)?;
            (m, Some(truths))
        }
        (None, Some(p)) => (read_measurements(p, model.n_measurements())?, None),
        (None, None) => unreachable!("clap requires one input"),
    };
    let preds = readings
        .iter()
        .map(|m| {
            let c = model.condition(m)?;
            flowrecon_core::uq::predictive_mean(&c.predictor(), a.draws, seed).map_err(Into::into)
        })
        .collect::<flowrecon_scvae::Result<Vec<_>>>()
        .map_err(|e| Failure::classify(e.into()))?;
    write_frc1(&out.join("predictions"), &FlowSeries::from_states(grid, &preds).map_err(invalid)?).map_err(invalid)?;
    if let Some(t) = truths {
        let s = scores(&preds, &t, grid)?;
        println!(
            "{} predictions: relative error {:.4}, divergence {:.4}",
            s.count, s.mean_relative_error, s.divergence_error
        );
        write_json(&out.join("scores.json"), &s)?;
    } else {
        println!("{} predictions written to {}", preds.len(), out.join("predictions").display());
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct UqReport {
    index: usize,
    n_mc: usize,
    p: f64,
    dof: usize,
    radius2: f64,
    mean_std: f64,
    max_std: f64,
    top_eigenvalues: Vec<f64>,
    measurement_misfit: f64,
    relative_error_of_mean: f64,
    truth_in_region: bool,
}

fn uq(a: &UqArgs, seed: u64, out: &Path) -> Result<(), Failure> {
    let model = load_model(&a.model)?;
    let series = load_series(&a.input)?;
    let snap = series
        .snapshots()
        .get(a.index)
        .ok_or_else(|| invalid(anyhow::anyhow!("index {} outside a series of {}", a.index, series.len())))?;
    let truth = snap.to_state();
    let m = model.measure(&truth).map_err(invalid)?;
    let cond = model.condition(&m).map_err(invalid)?;
    let pred = cond.predictor();
    let num = |e: flowrecon_core::Error| Failure::classify(e.into());
    let summary = summarize(&pred, a.n_mc, seed).map_err(num)?;
    let stds: Vec<f64> = (0..summary.dim()).map(|n| summary.std(n)).collect();
    let samples = sample_fields(&pred, a.samples.max(1), seed ^ 0x5eed).map_err(num)?;
    let report = UqReport {
        index: a.index,
        n_mc: a.n_mc,
        p: a.p,
        dof: summary.dof,
        radius2: summary.radius2(a.p).map_err(invalid)?,
        mean_std: stds.iter().sum::<f64>() / stds.len() as f64,
        max_std: stds.iter().copied().fold(0.0, f64::max),
        top_eigenvalues: summary.s.iter().take(10).copied().collect(),
        measurement_misfit: measurement_misfit(&samples, model.sampling(), &m).map_err(num)?,
        relative_error_of_mean: relative_error(&[summary.mean.clone()], &[truth.clone()]).map_err(num)?,
        truth_in_region: summary.region_membership(&truth, a.p).map_err(num)?,
    };
    let grid = model.grid();
    let intervals = summary.intervals(a.p).map_err(invalid)?;
    fs::create_dir_all(out).map_err(invalid)?;
    let mut w = csv::Writer::from_path(out.join("intervals.csv")).map_err(invalid)?;
    w.write_record(["component", "mean", "lower", "upper"]).map_err(invalid)?;
    for (n, (lo, hi)) in intervals.iter().enumerate() {
        w.serialize((n, summary.mean[n], lo, hi)).map_err(invalid)?;
    }
    w.flush().map_err(invalid)?;
    write_frc1(&out.join("samples"), &FlowSeries::new(grid, samples).map_err(invalid)?).map_err(invalid)?;
    write_json(&out.join("uq.json"), &report)?;
    println!(
        "mean std {:.3e}, max std {:.3e}, misfit {:.3e}, truth inside {}% region: {}",
        report.mean_std,
        report.max_std,
        report.measurement_misfit,
        a.p * 100.0,
        report.truth_in_region
    );
    Ok(())
}

fn eval(a: &EvalArgs, out: &Path) -> Result<(), Failure> {
    let preds = load_series(&a.predictions)?;
    let truths = load_series(&a.truths)?;
    if preds.grid() != truths.grid() {
        return Err(invalid(anyhow::anyhow!("prediction and truth grids differ")));
    }
    let s = scores(&preds.states(), &truths.states(), truths.grid())?;
    write_json(&out.join("scores.json"), &s)?;
    println!(
        "relative error {:.6}, divergence {:.6} over {} pairs",
        s.mean_relative_error, s.divergence_error, s.count
    );
    Ok(())
}

fn experiment(a: &ExperimentArgs, seed: u64, threads: usize, out: &Path) -> Result<(), Failure> {
    let mut plan: ExperimentPlan = match &a.plan {
        Some(p) => read_json(p)?,
        None => ExperimentPlan { seed, ..ExperimentPlan::desk_default() },
    };
    if a.plan.is_some() && seed != 0 {
        plan.seed = seed;
    }
    plan.validate().map_err(Failure::Invalid)?;
    if a.dry_run {
        write_json(&out.join("plan.json"), &plan)?;
        println!("plan written to {}", out.join("plan.json").display());
        return Ok(());
    }
    let outcome = run_experiment(&plan, threads, Some(out))?;
    let failed = outcome.rows.iter().filter(|r| r.status != "ok").count();
    for s in outcome.summary.iter().filter(|s| s.aggregation == "best_on_validation" && s.metric == "relative_error") {
        println!("{:>10} M={:<3} E {:.4} ± {:.4} (n={})", s.method, s.m, s.mean, s.std, s.count);
    }
    println!("{} cells, {} failed; results in {}", outcome.rows.len(), failed, out.display());
    Ok(())
}

fn verify(a: &VerifyArgs) -> Result<(), Failure> {
    let report = verify_run(&a.run, a.tol).map_err(Failure::Invalid)?;
    println!("checked {} cells, max |diff| {:.3e}", report.checked, report.max_abs_diff);
    if !report.mismatches.is_empty() {
        for m in &report.mismatches {
            eprintln!("mismatch: {m}");
        }
        return Err(Failure::Numerical(anyhow::anyhow!("{} metric mismatches", report.mismatches.len())));
    }
    Ok(())
}
