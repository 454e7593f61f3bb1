//! Reconstruction experiments: every (method, layout, sensor count, repeat)
//! cell is trained or fitted on the training split, selected on the
//! validation split, and scored on the test split.

use std::fs;
use std::path::{Path, PathBuf};

use flowrecon_core::io::{read_frc1, write_frc1, write_sensors};
use flowrecon_core::metrics::{divergence_error, relative_error, relative_errors};
use flowrecon_core::synthetic::uniform_times;
use flowrecon_core::uq::predictive_mean;
use flowrecon_core::{
    compute_pod, compute_scaling, generate, select_gpod_hyperparams, split, DivergenceOperator, FlowRecipe, FlowSeries,
    GpodPipeline, PodBasis, SamplingOperator, ScalingParams, SensorLayout, SplitSeries, SplitSpec,
};
use flowrecon_nn::AdamConfig;
use flowrecon_scvae::{train, LambdaMode, ScvaeArchitecture, ScvaeModel, TrainConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::manifest::{AccessEntry, Manifest, Subset};
use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ScvaeL0,
    ScvaeLpos,
    GpodL0,
    GpodLpos,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::ScvaeL0 => "scvae_l0",
            Method::ScvaeLpos => "scvae_lpos",
            Method::GpodL0 => "gpod_l0",
            Method::GpodLpos => "gpod_lpos",
        }
    }

    pub fn is_scvae(self) -> bool {
        matches!(self, Method::ScvaeL0 | Method::ScvaeLpos)
    }

    /// `off` for the unregularized variants, `positive` otherwise.
    pub fn lambda_mode(self) -> &'static str {
        match self {
            Method::ScvaeL0 | Method::GpodL0 => "off",
            Method::ScvaeLpos | Method::GpodLpos => "positive",
        }
    }

    fn index(self) -> u64 {
        self as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Dataset {
    /// Generated on a grid spanning `lx x ly`; snapshots `dt` apart.
    Synthetic { recipe: FlowRecipe, nx: usize, ny: usize, lx: f64, ly: f64, count: usize, dt: f64 },
    /// An FRC1 directory.
    Path { dir: PathBuf },
}

impl Dataset {
    pub fn load(&self) -> anyhow::Result<FlowSeries> {
        match self {
            Dataset::Synthetic { recipe, nx, ny, lx, ly, count, dt } => {
                let grid = flowrecon_core::Grid::spanning(*nx, *ny, *lx, *ly)?;
                Ok(generate(recipe, grid, &uniform_times(*count, *dt))?)
            }
            Dataset::Path { dir } => Ok(read_frc1(dir)?),
        }
    }
}

/// Nested layouts: each draw picks `max(sensor_counts)` points at random
/// and smaller counts use its prefixes, so `Q_small` is inside `Q_large`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutPlan {
    pub sensor_counts: Vec<usize>,
    #[serde(default = "one")]
    pub draws: usize,
    #[serde(default)]
    pub seed: u64,
    /// Replaces the random draws when given; each entry is nested likewise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explicit: Option<Vec<Vec<(usize, usize)>>>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArchChoice {
    Preset(String),
    Custom(ScvaeArchitecture),
}

impl ArchChoice {
    pub fn resolve(&self, grid: &flowrecon_core::Grid) -> anyhow::Result<ScvaeArchitecture> {
        match self {
            ArchChoice::Preset(name) => Ok(ScvaeArchitecture::preset(name, grid)?),
            ArchChoice::Custom(a) => Ok(a.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScvaeSettings {
    pub arch: ArchChoice,
    pub train: TrainConfig,
    /// Latent draws averaged into each prediction.
    pub eval_draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpodSettings {
    /// Candidate ranks are `1..=r_max`.
    pub r_max: usize,
    /// Candidate regularization weights for `gpod_lpos`.
    pub lambda_grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub dataset: Dataset,
    pub split: SplitSpec,
    pub layouts: LayoutPlan,
    pub methods: Vec<Method>,
    /// Trainings per SCVAE cell; GPOD is deterministic and runs once.
    pub repeats: usize,
    pub seed: u64,
    pub scvae: ScvaeSettings,
    pub gpod: GpodSettings,
}

impl ExperimentPlan {
    /// 64x32 traveling vortex street, 2000 snapshots about 74 per period,
    /// sequential split, nested layouts with 2, 3 and 5 sensors, every
    /// method, 3 SCVAE repeats of at most 100 epochs.
    pub fn desk_default() -> Self {
        let recipe = FlowRecipe::traveling_vortices(1.0, 2, 1, 1.0);
        let (lx, ly) = (4.0, 2.0);
        let grid = flowrecon_core::Grid::spanning(64, 32, lx, ly).expect("valid grid");
        let dt = recipe.period(&grid).expect("traveling flows are periodic") / 73.7;
        Self {
            dataset: Dataset::Synthetic { recipe, nx: 64, ny: 32, lx, ly, count: 2000, dt },
            split: SplitSpec::default(),
            layouts: LayoutPlan { sensor_counts: vec![2, 3, 5], draws: 1, seed: 0, explicit: None },
            methods: vec![Method::ScvaeL0, Method::ScvaeLpos, Method::GpodL0, Method::GpodLpos],
            repeats: 3,
            seed: 0,
            scvae: ScvaeSettings {
                arch: ArchChoice::Preset("desk".into()),
                train: TrainConfig {
                    max_epochs: 100,
                    patience: 50,
                    adam: AdamConfig { learning_rate: 2e-3, ..AdamConfig::default() },
                    ..TrainConfig::default()
                },
                eval_draws: 16,
            },
            gpod: GpodSettings { r_max: 30, lambda_grid: vec![1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0] },
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        anyhow::ensure!(self.repeats >= 1, "repeats must be at least 1");
        anyhow::ensure!(!self.methods.is_empty(), "no methods");
        anyhow::ensure!(
            !self.layouts.sensor_counts.is_empty() && self.layouts.sensor_counts.iter().all(|&m| m >= 1),
            "sensor counts must be nonempty and positive"
        );
        anyhow::ensure!(self.layouts.draws >= 1, "layout draws must be at least 1");
        if let Some(ex) = &self.layouts.explicit {
            anyhow::ensure!(!ex.is_empty(), "explicit layouts must be nonempty");
        }
        anyhow::ensure!(self.gpod.r_max >= 1, "r_max must be at least 1");
        anyhow::ensure!(
            self.gpod.lambda_grid.iter().all(|l| *l > 0.0 && l.is_finite()),
            "gpod lambda_grid holds the positive weights"
        );
        anyhow::ensure!(self.scvae.eval_draws >= 1, "eval_draws must be at least 1");
        self.scvae.train.validate()?;
        Ok(())
    }
}

/// One result line. Error fields are empty when the cell failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub cell: String,
    pub method: String,
    pub lambda_mode: String,
    pub m: usize,
    pub layout: usize,
    pub repeat: usize,
    pub seed: u64,
    pub mean_relative_error: Option<f64>,
    pub divergence_error: Option<f64>,
    pub validation_error: Option<f64>,
    pub epochs_trained: Option<usize>,
    pub best_epoch: Option<usize>,
    pub gpod_r: Option<usize>,
    pub gpod_lambda: Option<f64>,
    pub status: String,
}

/// Long-format record for box plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub method: String,
    pub lambda_mode: String,
    pub m: usize,
    pub layout: usize,
    pub repeat: String,
    pub aggregation: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub m: usize,
    pub aggregation: String,
    pub metric: String,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub rows: Vec<MetricsRow>,
    /// One row per (method, layout, M): the repeat with the lowest
    /// validation error.
    pub best: Vec<MetricsRow>,
    /// Means over repeats, the other way to aggregate repeats.
    pub repeat_means: Vec<MetricsRow>,
    pub summary: Vec<SummaryRow>,
    pub access: Vec<AccessEntry>,
    pub layouts: Vec<SensorLayout>,
}

struct CellSpec {
    method: Method,
    layout: usize,
    m: usize,
    repeat: usize,
    seed: u64,
}

impl CellSpec {
    fn id(&self) -> String {
        format!("{}-q{}-m{}-r{}", self.method.name(), self.layout, self.m, self.repeat)
    }
}

struct CellResult {
    row: MetricsRow,
    predictions: Option<Vec<Vec<f64>>>,
    model: Option<ScvaeModel>,
    log: Vec<flowrecon_scvae::LogRow>,
    access: Vec<AccessEntry>,
}

/// SplitMix64 finalizer, for per-cell seeds.
pub fn mix_seed(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn cell_seed(plan_seed: u64, method: Method, layout: usize, m: usize, repeat: usize) -> u64 {
    let mut s = mix_seed(plan_seed);
    for v in [method.index(), layout as u64, m as u64, repeat as u64] {
        s = mix_seed(s ^ v);
    }
    s
}

/// Shared, read-only inputs of every cell.
struct Context<'a> {
    plan: &'a ExperimentPlan,
    parts: &'a SplitSeries,
    scaling: ScalingParams,
    basis: Option<PodBasis>,
    div: DivergenceOperator,
}

fn draw_layouts(plan: &ExperimentPlan, grid: &flowrecon_core::Grid) -> anyhow::Result<Vec<SensorLayout>> {
    let max_m = *plan.layouts.sensor_counts.iter().max().expect("validated");
    let layouts = match &plan.layouts.explicit {
        Some(ex) => ex.iter().map(|l| SensorLayout::new(l.clone())).collect::<Result<Vec<_>, _>>()?,
        None => (0..plan.layouts.draws)
            .map(|d| SensorLayout::random(grid, max_m, mix_seed(plan.layouts.seed ^ d as u64)))
            .collect::<Result<Vec<_>, _>>()?,
    };
    for (d, l) in layouts.iter().enumerate() {
        anyhow::ensure!(l.len() >= max_m, "layout {d} has {} sensors, plan needs {max_m}", l.len());
        for &(i, j) in l.locations() {
            anyhow::ensure!(grid.contains(i, j), "layout {d}: sensor ({i}, {j}) is off the grid");
        }
    }
    Ok(layouts)
}

/// POD with as many modes as the training data supports, up to `r_max`.
fn fit_basis(train: &FlowSeries, scaling: &ScalingParams, r_max: usize) -> anyhow::Result<PodBasis> {
    let scaled = scaling.scale_series(train)?;
    let mut r = r_max.min(train.len());
    loop {
        match compute_pod(&scaled, r) {
            Ok(b) => return Ok(b),
            Err(e) if e.is_numerical() && r > 1 => r -= 1,
            Err(e) => return Err(e.into()),
        }
    }
}

fn run_gpod(ctx: &Context, spec: &CellSpec, layout: &SensorLayout) -> anyhow::Result<CellResult> {
    let grid = ctx.parts.train.grid();
    let basis = ctx.basis.as_ref().expect("basis is fitted when a GPOD method is planned");
    let op = SamplingOperator::new(layout.clone(), &grid)?;
    let pipe = GpodPipeline::new(basis, &op, &ctx.div, ctx.scaling)?;
    let r_grid: Vec<usize> = (1..=basis.r()).collect();
    let lambdas = match spec.method {
        Method::GpodL0 => vec![0.0],
        _ => ctx.plan.gpod.lambda_grid.clone(),
    };
    let id = spec.id();
    let mut access = vec![AccessEntry::new(&id, Subset::Validation, "gpod hyperparameter selection")];
    let sel = select_gpod_hyperparams(&pipe, &op, &ctx.parts.validation, &r_grid, &lambdas)?;
    access.push(AccessEntry::new(&id, Subset::Test, "evaluation"));
    let preds = pipe.reconstruct_series(&op, &ctx.parts.test, &sel.config)?;
    let truths = ctx.parts.test.states();
    let mut row = base_row(spec);
    row.mean_relative_error = Some(relative_error(&preds, &truths)?);
    row.divergence_error = Some(divergence_error(&preds, &ctx.div)?);
    row.validation_error = Some(sel.validation_error);
    row.gpod_r = Some(sel.config.r);
    row.gpod_lambda = Some(sel.config.lambda);
    Ok(CellResult { row, predictions: Some(preds), model: None, log: Vec::new(), access })
}

fn predict_series(model: &ScvaeModel, series: &FlowSeries, draws: usize, seed: u64) -> anyhow::Result<Vec<Vec<f64>>> {
    series
        .iter()
        .map(|s| {
            let c = model.condition(&model.measure(&s.to_state())?)?;
            Ok(predictive_mean(&c.predictor(), draws, seed)?)
        })
        .collect()
}

fn run_scvae(ctx: &Context, spec: &CellSpec, layout: &SensorLayout) -> anyhow::Result<CellResult> {
    let grid = ctx.parts.train.grid();
    let arch = ctx.plan.scvae.arch.resolve(&grid)?;
    let cfg = TrainConfig {
        seed: spec.seed,
        lambda_mode: if spec.method == Method::ScvaeL0 { LambdaMode::Off } else { LambdaMode::Adaptive },
        ..ctx.plan.scvae.train.clone()
    };
    let id = spec.id();
    let mut access = vec![
        AccessEntry::new(&id, Subset::Train, "training"),
        AccessEntry::new(&id, Subset::Validation, "early stopping"),
    ];
    let out = train(&ctx.parts.train, &ctx.parts.validation, layout, &arch, &cfg)?;
    let draws = ctx.plan.scvae.eval_draws;
    access.push(AccessEntry::new(&id, Subset::Validation, "scvae repeat selection"));
    let val_preds = predict_series(&out.model, &ctx.parts.validation, draws, spec.seed)?;
    let val_err = relative_error(&val_preds, &ctx.parts.validation.states())?;
    access.push(AccessEntry::new(&id, Subset::Test, "evaluation"));
    let preds = predict_series(&out.model, &ctx.parts.test, draws, spec.seed)?;
    let truths = ctx.parts.test.states();
    let mut row = base_row(spec);
    row.mean_relative_error = Some(relative_error(&preds, &truths)?);
    row.divergence_error = Some(divergence_error(&preds, &ctx.div)?);
    row.validation_error = Some(val_err);
    row.epochs_trained = Some(out.epochs_trained);
    row.best_epoch = Some(out.best_epoch);
    Ok(CellResult { row, predictions: Some(preds), model: Some(out.model), log: out.log, access })
}

fn base_row(spec: &CellSpec) -> MetricsRow {
    MetricsRow {
        cell: spec.id(),
        method: spec.method.name().into(),
        lambda_mode: spec.method.lambda_mode().into(),
        m: spec.m,
        layout: spec.layout,
        repeat: spec.repeat,
        seed: spec.seed,
        mean_relative_error: None,
        divergence_error: None,
        validation_error: None,
        epochs_trained: None,
        best_epoch: None,
        gpod_r: None,
        gpod_lambda: None,
        status: "ok".into(),
    }
}

fn run_cell(ctx: &Context, spec: &CellSpec, layout: &SensorLayout) -> CellResult {
    let res = if spec.method.is_scvae() { run_scvae(ctx, spec, layout) } else { run_gpod(ctx, spec, layout) };
    res.unwrap_or_else(|e| {
        log::warn!("cell {} failed: {e:#}", spec.id());
        let mut row = base_row(spec);
        row.status = format!("failed: {e:#}");
        CellResult { row, predictions: None, model: None, log: Vec::new(), access: Vec::new() }
    })
}

fn group_key(r: &MetricsRow) -> (String, usize, usize) {
    (r.method.clone(), r.layout, r.m)
}

/// Lowest validation error per (method, layout, M); ties keep the earlier
/// repeat. Reads nothing but validation errors.
pub fn best_on_validation(rows: &[MetricsRow]) -> Vec<MetricsRow> {
    let mut best: Vec<MetricsRow> = Vec::new();
    for r in rows.iter().filter(|r| r.validation_error.is_some()) {
        match best.iter_mut().find(|b| group_key(b) == group_key(r)) {
            Some(b) if r.validation_error < b.validation_error => *b = r.clone(),
            Some(_) => {}
            None => best.push(r.clone()),
        }
    }
    best
}

fn repeat_means(rows: &[MetricsRow]) -> Vec<MetricsRow> {
    let mut out: Vec<(MetricsRow, usize)> = Vec::new();
    for r in rows.iter().filter(|r| r.mean_relative_error.is_some()) {
        match out.iter_mut().find(|(b, _)| group_key(b) == group_key(r)) {
            Some((b, n)) => {
                *n += 1;
                let add = |a: &mut Option<f64>, v: Option<f64>| *a = Some(a.unwrap_or(0.0) + v.unwrap_or(0.0));
                add(&mut b.mean_relative_error, r.mean_relative_error);
                add(&mut b.divergence_error, r.divergence_error);
                add(&mut b.validation_error, r.validation_error);
            }
            None => out.push((r.clone(), 1)),
        }
    }
    out.into_iter()
        .map(|(mut b, n)| {
            let div = |a: &mut Option<f64>| *a = a.map(|v| v / n as f64);
            div(&mut b.mean_relative_error);
            div(&mut b.divergence_error);
            div(&mut b.validation_error);
            b.cell = format!("{}-q{}-m{}-mean", b.method, b.layout, b.m);
            b.repeat = n;
            b.epochs_trained = None;
            b.best_epoch = None;
            b
        })
        .collect()
}

fn stats(values: &[f64]) -> (f64, f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean, var.sqrt(), min, max)
}

/// Statistics across layouts per (method, M) for each aggregation.
fn summarize_rows(sets: &[(&str, &[MetricsRow])]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for (agg, rows) in sets {
        let mut keys: Vec<(String, usize)> = Vec::new();
        for r in rows.iter() {
            if !keys.contains(&(r.method.clone(), r.m)) {
                keys.push((r.method.clone(), r.m));
            }
        }
        for (method, m) in keys {
            for metric in ["relative_error", "divergence_error"] {
                let vals: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.method == method && r.m == m)
                    .filter_map(|r| if metric == "relative_error" { r.mean_relative_error } else { r.divergence_error })
                    .collect();
                if vals.is_empty() {
                    continue;
                }
                let (mean, std, min, max) = stats(&vals);
                out.push(SummaryRow {
                    method: method.clone(),
                    m,
                    aggregation: agg.to_string(),
                    metric: metric.into(),
                    count: vals.len(),
                    mean,
                    std,
                    min,
                    max,
                });
            }
        }
    }
    out
}

fn long_rows(sets: &[(&str, &[MetricsRow])]) -> Vec<LongRow> {
    let mut out = Vec::new();
    for (agg, rows) in sets {
        for r in rows.iter() {
            for (metric, v) in [("relative_error", r.mean_relative_error), ("divergence_error", r.divergence_error)] {
                if let Some(value) = v {
                    out.push(LongRow {
                        method: r.method.clone(),
                        lambda_mode: r.lambda_mode.clone(),
                        m: r.m,
                        layout: r.layout,
                        repeat: if *agg == "per_repeat" { r.repeat.to_string() } else { agg.to_string() },
                        aggregation: agg.to_string(),
                        metric: metric.into(),
                        value,
                    });
                }
            }
        }
    }
    out
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<T>, _>>()?)
}

pub const METRICS_CSV: &str = "metrics.csv";
pub const BEST_CSV: &str = "best_on_validation.csv";
pub const REPEAT_MEAN_CSV: &str = "repeat_means.csv";
pub const LONG_CSV: &str = "boxplot_long.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const MANIFEST_JSON: &str = "manifest.json";
pub const TRUTH_DIR: &str = "test_truth";
pub const CELLS_DIR: &str = "cells";

/// Runs every cell of `plan` on `threads` workers, collecting results in
/// plan order. With `out`, persists tables and per-cell artifacts.
pub fn run_experiment(plan: &ExperimentPlan, threads: usize, out: Option<&Path>) -> Result<ExperimentOutcome, Failure> {
    plan.validate().map_err(Failure::Invalid)?;
    let series = plan.dataset.load().map_err(Failure::classify)?;
    let parts = split(&series, &plan.split).map_err(|e| Failure::classify(e.into()))?;
    let grid = series.grid();
    let layouts = draw_layouts(plan, &grid).map_err(Failure::Invalid)?;
    let scaling = compute_scaling(&parts.train).map_err(|e| Failure::classify(e.into()))?;
    let needs_basis = plan.methods.iter().any(|m| !m.is_scvae());
    let basis = if needs_basis {
        Some(fit_basis(&parts.train, &scaling, plan.gpod.r_max).map_err(Failure::classify)?)
    } else {
        None
    };
    let div = DivergenceOperator::new(grid).map_err(|e| Failure::classify(e.into()))?;
    let ctx = Context { plan, parts: &parts, scaling, basis, div };

    let mut specs = Vec::new();
    for layout in 0..layouts.len() {
        for &m in &plan.layouts.sensor_counts {
            for &method in &plan.methods {
                let repeats = if method.is_scvae() { plan.repeats } else { 1 };
                for repeat in 0..repeats {
                    specs.push(CellSpec {
                        method,
                        layout,
                        m,
                        repeat,
                        seed: cell_seed(plan.seed, method, layout, m, repeat),
                    });
                }
            }
        }
    }
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build().map_err(|e| Failure::Invalid(e.into()))?;
    let results: Vec<CellResult> = pool.install(|| {
        specs
            .par_iter()
            .map(|spec| match layouts[spec.layout].prefix(spec.m) {
                Ok(layout) => run_cell(&ctx, spec, &layout),
                Err(e) => {
                    let mut row = base_row(spec);
                    row.status = format!("failed: {e}");
                    CellResult { row, predictions: None, model: None, log: Vec::new(), access: Vec::new() }
                }
            })
            .collect()
    });

    let mut access = vec![AccessEntry::new("plan", Subset::Train, "scaling and POD basis")];
    access.extend(results.iter().flat_map(|r| r.access.iter().cloned()));
    let rows: Vec<MetricsRow> = results.iter().map(|r| r.row.clone()).collect();
    let best = best_on_validation(&rows);
    let means = repeat_means(&rows);
    let sets: [(&str, &[MetricsRow]); 3] =
        [("per_repeat", &rows), ("best_on_validation", &best), ("repeat_mean", &means)];
    let summary = summarize_rows(&sets);

    if let Some(dir) = out {
        let io = |e: anyhow::Error| Failure::Invalid(e);
        fs::create_dir_all(dir.join(CELLS_DIR)).map_err(|e| io(e.into()))?;
        write_csv(&dir.join(METRICS_CSV), &rows).map_err(io)?;
        write_csv(&dir.join(BEST_CSV), &best).map_err(io)?;
        write_csv(&dir.join(REPEAT_MEAN_CSV), &means).map_err(io)?;
        write_csv(&dir.join(LONG_CSV), &long_rows(&sets)).map_err(io)?;
        write_csv(&dir.join(SUMMARY_CSV), &summary).map_err(io)?;
        write_frc1(&dir.join(TRUTH_DIR), &parts.test).map_err(|e| io(e.into()))?;
        for (d, l) in layouts.iter().enumerate() {
            write_sensors(&dir.join(format!("layout_q{d}.json")), l).map_err(|e| io(e.into()))?;
        }
        Manifest::new(plan, &rows, &layouts, &access).save(&dir.join(MANIFEST_JSON)).map_err(io)?;
        for r in &results {
            let Some(preds) = &r.predictions else { continue };
            let cell = dir.join(CELLS_DIR).join(&r.row.cell);
            let frames = FlowSeries::from_states(grid, preds).map_err(|e| io(e.into()))?;
            write_frc1(&cell.join("predictions"), &frames).map_err(|e| io(e.into()))?;
            if let Some(model) = &r.model {
                model.save(&cell.join("model.frcmodel")).map_err(|e| io(e.into()))?;
                write_csv(&cell.join("training_log.csv"), &r.log).map_err(io)?;
            }
        }
    }
    Ok(ExperimentOutcome { rows, best, repeat_means: means, summary, access, layouts })
}

/// Differences between stored metrics and values recomputed from the
/// persisted predictions and test truths.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub checked: usize,
    pub max_abs_diff: f64,
    pub mismatches: Vec<String>,
}

pub fn verify_run(dir: &Path, tol: f64) -> anyhow::Result<VerifyReport> {
    let rows: Vec<MetricsRow> = read_csv(&dir.join(METRICS_CSV))?;
    let truth = read_frc1(&dir.join(TRUTH_DIR))?;
    let truths = truth.states();
    let div = DivergenceOperator::new(truth.grid())?;
    let mut report = VerifyReport { checked: 0, max_abs_diff: 0.0, mismatches: Vec::new() };
    for r in rows.iter().filter(|r| r.status == "ok") {
        let preds = read_frc1(&dir.join(CELLS_DIR).join(&r.cell).join("predictions"))?.states();
        anyhow::ensure!(
            preds.len() == truths.len(),
            "cell {}: {} predictions for {} truths",
            r.cell,
            preds.len(),
            truths.len()
        );
        // Recompute from scratch, pair by pair.
        let e = relative_errors(&preds, &truths)?;
        let e = e.iter().sum::<f64>() / e.len() as f64;
        let d = divergence_error(&preds, &div)?;
        for (name, stored, fresh) in
            [("relative_error", r.mean_relative_error, e), ("divergence_error", r.divergence_error, d)]
        {
            let stored = stored.ok_or_else(|| anyhow::anyhow!("cell {} has no {name}", r.cell))?;
            let diff = (stored - fresh).abs();
            report.max_abs_diff = report.max_abs_diff.max(diff);
            if diff > tol * stored.abs().max(1.0) {
                report.mismatches.push(format!("{} {name}: stored {stored}, recomputed {fresh}", r.cell));
            }
        }
        report.checked += 1;
    }
    Ok(report)
}
