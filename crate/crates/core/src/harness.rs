// SPDX-License-Identifier: MIT OR Apache-2.0

//! Penalty and regularisation sweeps, best-row selection, multi-signal
//! union and file-based experiment runs.

use std::fs;
use std::path::PathBuf;

use chrono::{SecondsFormat, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{bayes_detect, BayesConfig};
use crate::costs::{CostKind, CostModel};
use crate::error::Error;
use crate::metrics::{evaluate, MarginRule, MetricsError, MetricsReport};
use crate::search::{pelt, win, ChangePointSet, SearchConfig, SearchMethod, DEFAULT_HALF_WIDTH};
use crate::series::{load_change_points, load_csv, write_change_points, SignalBundle, TimeSeries};
use crate::simulate::{simulate, SimSpec};

pub const SELECTION_RULE: &str = "max f1, then min mt, then min ae, then max precision";

/// Regularisation grid used for ridge/lasso sweeps.
pub const GAMMA_GRID: [f64; 6] = [0.1, 1.0, 10.0, 100.0, 1000.0, 10000.0];

/// `{0}`, 25 log-spaced points over `1e-3..=1e5` and the integers `0..=50`,
/// sorted and deduplicated.
pub fn standard_penalty_grid() -> Vec<f64> {
    let mut grid = vec![0.0];
    for i in 0..25 {
        grid.push(10f64.powf(-3.0 + 8.0 * i as f64 / 24.0));
    }
    grid.extend((0..=50).map(f64::from));
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// One detection and its evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Penalty or regularisation weight, see [`SweepResult::parameter`].
    pub value: f64,
    pub change_points: ChangePointSet,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// `"penalty"`, `"gamma"` or `"threshold"`.
    pub parameter: String,
    pub rows: Vec<SweepRow>,
    pub best: usize,
    pub selection_rule: String,
}

impl SweepResult {
    pub fn from_rows(parameter: &str, rows: Vec<SweepRow>) -> Result<Self, Error> {
        let best = select_best(&rows).ok_or_else(|| Error::Config("empty sweep".into()))?;
        Ok(Self {
            parameter: parameter.into(),
            rows,
            best,
            selection_rule: SELECTION_RULE.into(),
        })
    }

    pub fn best_row(&self) -> &SweepRow {
        &self.rows[self.best]
    }
}

/// Index of the best row: highest F1, then lowest meantime, lowest
/// annotation error, highest precision. Earlier rows win exact ties.
pub fn select_best(rows: &[SweepRow]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, row) in rows.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => {
                let (m, o) = (&row.metrics, &rows[b].metrics);
                m.f1.total_cmp(&o.f1)
                    .then(o.mt.total_cmp(&m.mt))
                    .then(o.ae.cmp(&m.ae))
                    .then(m.precision.total_cmp(&o.precision))
                    .is_gt()
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Settings shared by every point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub method: SearchMethod,
    pub half_width: usize,
    pub margin: MarginRule,
    /// Radius for merging per-signal predictions; defaults to the margin.
    pub merge_radius: Option<usize>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            method: SearchMethod::Pelt,
            half_width: DEFAULT_HALF_WIDTH,
            margin: MarginRule::default(),
            merge_radius: None,
        }
    }
}

impl SweepOptions {
    pub fn with_method(mut self, method: SearchMethod) -> Self {
        self.method = method;
        self
    }

    pub fn with_half_width(mut self, half_width: usize) -> Self {
        self.half_width = half_width;
        self
    }

    pub fn with_margin(mut self, margin: MarginRule) -> Self {
        self.margin = margin;
        self
    }
}

/// Runs one search on one series.
pub fn detect(
    ts: &TimeSeries,
    model: &CostModel,
    method: SearchMethod,
    penalty: f64,
    half_width: usize,
) -> Result<ChangePointSet, Error> {
    let cfg = SearchConfig::new(penalty).with_half_width(half_width);
    Ok(match method {
        SearchMethod::Pelt => pelt(ts, model, &cfg)?.change_points,
        SearchMethod::Win => win(ts, model, &cfg)?,
    })
}

/// Detects on every signal of `bundle` and merges the results.
pub fn detect_bundle(
    bundle: &SignalBundle,
    model: &CostModel,
    method: SearchMethod,
    penalty: f64,
    half_width: usize,
    merge_radius: usize,
) -> Result<ChangePointSet, Error> {
    let per_signal = bundle
        .series
        .iter()
        .map(|ts| detect(ts, model, method, penalty, half_width))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(aggregate_union(&per_signal, merge_radius)?)
}

fn truth_of(bundle: &SignalBundle) -> Result<&ChangePointSet, Error> {
    bundle
        .truth
        .as_ref()
        .ok_or_else(|| Error::Config("scoring needs annotated change points".into()))
}

fn sweep<F>(
    bundle: &SignalBundle,
    values: &[f64],
    margin: MarginRule,
    run: F,
) -> Result<Vec<SweepRow>, Error>
where
    F: Fn(f64) -> Result<ChangePointSet, Error> + Sync,
{
    if values.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let truth = truth_of(bundle)?;
    let margin = margin.margin(bundle.len());
    values
        .par_iter()
        .map(|&value| {
            let change_points = run(value)?;
            let metrics = evaluate(&change_points, truth, margin, bundle.dt())?;
            Ok(SweepRow {
                value,
                change_points,
                metrics,
            })
        })
        .collect()
}

/// Detection and evaluation at every penalty in `grid`.
pub fn penalty_sweep(
    bundle: &SignalBundle,
    model: &CostModel,
    grid: &[f64],
    opts: &SweepOptions,
) -> Result<SweepResult, Error> {
    let radius = opts
        .merge_radius
        .unwrap_or_else(|| opts.margin.margin(bundle.len()));
    let rows = sweep(bundle, grid, opts.margin, |penalty| {
        detect_bundle(bundle, model, opts.method, penalty, opts.half_width, radius)
    })?;
    SweepResult::from_rows("penalty", rows)
}

/// Detection and evaluation at every regularisation weight in `gammas`
/// with a fixed penalty.
pub fn gamma_sweep(
    bundle: &SignalBundle,
    kind: CostKind,
    gammas: &[f64],
    penalty: f64,
    opts: &SweepOptions,
) -> Result<SweepResult, Error> {
    if !kind.is_regularised() {
        return Err(Error::Config(format!(
            "{kind} has no regularisation weight"
        )));
    }
    let radius = opts
        .merge_radius
        .unwrap_or_else(|| opts.margin.margin(bundle.len()));
    let rows = sweep(bundle, gammas, opts.margin, |gamma| {
        let model = CostModel::new(kind).with_gamma(gamma);
        detect_bundle(
            bundle,
            &model,
            opts.method,
            penalty,
            opts.half_width,
            radius,
        )
    })?;
    SweepResult::from_rows("gamma", rows)
}

/// Union of several predictions on the same grid. Sorted points closer
/// than or equal to `merge_radius` are chained into one cluster (two points
/// of the same prediction never share a cluster) and replaced by their
/// rounded mean.
pub fn aggregate_union(
    predictions: &[ChangePointSet],
    merge_radius: usize,
) -> Result<ChangePointSet, MetricsError> {
    let Some(first) = predictions.first() else {
        return Ok(ChangePointSet::empty(0));
    };
    let n = first.n();
    for p in predictions {
        if p.n() != n {
            return Err(MetricsError::MismatchedLength {
                pred: p.n(),
                truth: n,
            });
        }
    }
    let mut tagged: Vec<(usize, usize)> = predictions
        .iter()
        .enumerate()
        .flat_map(|(src, p)| p.intermediate().iter().map(move |&t| (t, src)))
        .collect();
    tagged.sort_unstable();

    let mut merged = Vec::new();
    let mut cluster: Vec<(usize, usize)> = Vec::new();
    let flush = |cluster: &mut Vec<(usize, usize)>, merged: &mut Vec<usize>| {
        if !cluster.is_empty() {
            let mean = cluster.iter().map(|&(t, _)| t as f64).sum::<f64>() / cluster.len() as f64;
            merged.push(mean.round() as usize);
            cluster.clear();
        }
    };
    for (t, src) in tagged {
        let joins = cluster.last().is_some_and(|&(prev, _)| {
            t - prev <= merge_radius && cluster.iter().all(|&(_, s)| s != src)
        });
        if !joins {
            flush(&mut cluster, &mut merged);
        }
        cluster.push((t, src));
    }
    flush(&mut cluster, &mut merged);
    Ok(ChangePointSet::from_unsorted(merged, n).expect("cluster means stay inside (0, n)"))
}

/// Where the signals of an experiment come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSource {
    Simulated(SimSpec),
    Csv {
        path: PathBuf,
        #[serde(default = "default_time_column")]
        time_column: String,
        #[serde(default)]
        value_columns: Vec<String>,
        /// Change point file with the annotated truth.
        truth: PathBuf,
    },
}

fn default_time_column() -> String {
    "time".into()
}

impl DatasetSource {
    pub fn load(&self) -> Result<SignalBundle, Error> {
        match self {
            DatasetSource::Simulated(spec) => Ok(simulate(spec)?),
            DatasetSource::Csv {
                path,
                time_column,
                value_columns,
                truth,
            } => {
                let loaded = load_csv(path, time_column, value_columns)?;
                let truth = load_change_points(truth)?;
                Ok(SignalBundle::new(loaded.bundle.series, Some(truth))?)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pelt,
    Win,
    Bayes,
}

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub method: Method,
    #[serde(default)]
    pub cost: Option<CostModel>,
    /// Penalties to sweep; the standard grid when absent.
    #[serde(default)]
    pub penalties: Option<Vec<f64>>,
    /// Regularisation weights to sweep at the first penalty instead of
    /// sweeping penalties.
    #[serde(default)]
    pub gammas: Option<Vec<f64>>,
    #[serde(default = "default_half_width")]
    pub half_width: usize,
    #[serde(default)]
    pub bayes: Option<BayesConfig>,
    #[serde(default)]
    pub margin: MarginRule,
    #[serde(default)]
    pub merge_radius: Option<usize>,
    /// Directory receiving `report.json` and `detections.csv`.
    pub output: PathBuf,
}

fn default_half_width() -> usize {
    DEFAULT_HALF_WIDTH
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), Error> {
        match self.method {
            Method::Bayes => {
                if self.cost.is_some() || self.penalties.is_some() || self.gammas.is_some() {
                    return Err(Error::Config(
                        "cost, penalties and gammas do not apply to bayes".into(),
                    ));
                }
            }
            Method::Pelt | Method::Win => {
                if self.bayes.is_some() {
                    return Err(Error::Config(
                        "bayes parameters only apply to the bayes method".into(),
                    ));
                }
                if let Some(model) = &self.cost {
                    model.validate()?;
                }
                if let Some(g) = &self.gammas {
                    let kind = self.cost.map_or(CostKind::L2, |m| m.kind);
                    if !kind.is_regularised() {
                        return Err(Error::Config(format!(
                            "gamma sweep needs ridge or lasso, got {kind}"
                        )));
                    }
                    if g.is_empty() {
                        return Err(Error::Config("gamma grid is empty".into()));
                    }
                    if self.penalties.as_ref().is_none_or(|p| p.len() != 1) {
                        return Err(Error::Config(
                            "a gamma sweep needs exactly one fixed penalty".into(),
                        ));
                    }
                }
                if self.penalties.as_ref().is_some_and(Vec::is_empty) {
                    return Err(Error::Config("penalty grid is empty".into()));
                }
            }
        }
        Ok(())
    }
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub generated_at: String,
    pub config: ExperimentConfig,
    pub n: usize,
    pub signals: Vec<String>,
    pub truth: ChangePointSet,
    pub sweep: SweepResult,
}

/// Runs the experiment and writes `report.json` and `detections.csv` (the
/// best prediction) into `cfg.output`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, Error> {
    cfg.validate()?;
    let bundle = cfg.dataset.load()?;
    let truth = truth_of(&bundle)?.clone();
    let sweep = match cfg.method {
        Method::Bayes => {
            let bayes = cfg.bayes.unwrap_or_default();
            let radius = cfg
                .merge_radius
                .unwrap_or_else(|| cfg.margin.margin(bundle.len()));
            let rows = sweep(&bundle, &[bayes.threshold], cfg.margin, |threshold| {
                let c = BayesConfig { threshold, ..bayes };
                let per_signal = bundle
                    .series
                    .iter()
                    .map(|ts| bayes_detect(ts, &c))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(aggregate_union(&per_signal, radius)?)
            })?;
            SweepResult::from_rows("threshold", rows)?
        }
        Method::Pelt | Method::Win => {
            let model = cfg.cost.unwrap_or_default();
            let opts = SweepOptions {
                method: if cfg.method == Method::Pelt {
                    SearchMethod::Pelt
                } else {
                    SearchMethod::Win
                },
                half_width: cfg.half_width,
                margin: cfg.margin,
                merge_radius: cfg.merge_radius,
            };
            let grid = cfg.penalties.clone().unwrap_or_else(standard_penalty_grid);
            match &cfg.gammas {
                // validate() guarantees a single penalty here
                Some(gammas) => gamma_sweep(&bundle, model.kind, gammas, grid[0], &opts)?,
                None => penalty_sweep(&bundle, &model, &grid, &opts)?,
            }
        }
    };
    let report = ExperimentReport {
        generated_at: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
        config: cfg.clone(),
        n: bundle.len(),
        signals: bundle
            .series
            .iter()
            .map(|s| s.label().to_string())
            .collect(),
        truth,
        sweep,
    };
    fs::create_dir_all(&cfg.output)?;
    fs::write(
        cfg.output.join("report.json"),
        serde_json::to_vec_pretty(&report)?,
    )?;
    let file = fs::File::create(cfg.output.join("detections.csv"))?;
    write_change_points(&report.sweep.best_row().change_points, file)?;
    Ok(report)
}
