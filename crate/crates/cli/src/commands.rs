// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fs::File;
use std::io::{self, Write};
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cpd_core::bayes::{write_cp_prob_csv, DEFAULT_DISTANCE, DEFAULT_EPSILON, DEFAULT_THRESHOLD};
use cpd_core::harness::detect_bundle;
use cpd_core::series::{load_change_points, load_csv, write_change_points, write_csv};
use cpd_core::{
    aggregate_union, evaluate, run_experiment, simulate, BayesConfig, ChangePointSet, CostKind,
    CostModel, DistancePrior, ExperimentConfig, Family, MarginRule, SearchMethod, SignalBundle,
    SimSpec,
};

use crate::api;

pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Parser)]
#[command(name = "cpd", version, about = "Offline change point detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic dataset.
    Simulate(SimulateArgs),
    /// Run PELT or the sliding window search on a CSV file.
    Detect(DetectArgs),
    /// Run a penalty, regularisation or threshold sweep from a JSON config.
    Sweep(SweepArgs),
    /// Bayesian change point posterior and peak detection.
    Bayes(BayesArgs),
    /// Score a prediction against annotated change points.
    Eval(EvalArgs),
    /// Serve the HTTP JSON API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// piecewise_constant (pc), piecewise_linear (pl), changing_variance (cv),
    /// autoregressive (ar), exponential_decay (ed) or oscillating (osc).
    #[arg(long)]
    pub family: Family,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = cpd_core::simulate::DEFAULT_N)]
    pub n: usize,
    #[arg(long)]
    pub segments: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    /// Linear drift per sample.
    #[arg(long, default_value_t = 0.0)]
    pub trend: f64,
    /// Series CSV; stdout when absent.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Where to write the true change points.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, default_value = "time")]
    pub time_column: String,
    /// Value columns, comma separated; all but the time column when absent.
    #[arg(long, value_delimiter = ',')]
    pub columns: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Annotated change points to score against.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Acceptance radius in samples.
    #[arg(long, conflicts_with = "margin_pct")]
    pub margin: Option<usize>,
    /// Acceptance radius as a percentage of the series length.
    #[arg(long, default_value_t = 1.0)]
    pub margin_pct: f64,
}

impl ScoreArgs {
    fn rule(&self) -> MarginRule {
        match self.margin {
            Some(m) => MarginRule::Samples(m),
            None => MarginRule::Percent(self.margin_pct),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Pelt,
    Win,
}

impl From<MethodArg> for SearchMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Pelt => SearchMethod::Pelt,
            MethodArg::Win => SearchMethod::Win,
        }
    }
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value = "pelt")]
    pub method: MethodArg,
    /// l2, l1, normal, linreg, ar, ridge or lasso.
    #[arg(long, default_value = "l2")]
    pub cost: CostKind,
    #[arg(long)]
    pub penalty: f64,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lags: Option<usize>,
    #[arg(long)]
    pub min_size: Option<usize>,
    #[arg(long, default_value_t = cpd_core::search::DEFAULT_HALF_WIDTH)]
    pub half_width: usize,
    /// Radius for merging per-signal predictions; the margin when absent.
    #[arg(long)]
    pub merge_radius: Option<usize>,
    #[command(flatten)]
    pub score: ScoreArgs,
    /// Change point CSV; stdout when absent.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Experiment config (JSON).
    #[arg(long, short)]
    pub config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PriorArg {
    Flat,
    Geometric,
    NegativeBinomial,
}

#[derive(Debug, Args)]
pub struct BayesArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value = "flat")]
    pub prior: PriorArg,
    /// Success probability of the geometric or negative binomial prior.
    #[arg(long)]
    pub p: Option<f64>,
    /// Number of successes of the negative binomial prior.
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = DEFAULT_DISTANCE)]
    pub distance: usize,
    #[arg(long, default_value_t = 1)]
    pub paa: usize,
    #[arg(long)]
    pub no_normalise: bool,
    #[arg(long)]
    pub merge_radius: Option<usize>,
    /// Writes `index,probability` of the first signal's posterior curve.
    #[arg(long)]
    pub probabilities: Option<PathBuf>,
    #[command(flatten)]
    pub score: ScoreArgs,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, conflicts_with = "margin_pct")]
    pub margin: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub margin_pct: f64,
    /// Seconds per sample, for the meantime.
    #[arg(long, default_value_t = 1.0)]
    pub dt: f64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
    pub host: IpAddr,
    #[arg(long, env = "CPD_PORT", default_value_t = DEFAULT_PORT)]
    pub port: u16,
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn load(input: &InputArgs) -> Result<SignalBundle> {
    let load = load_csv(&input.input, &input.time_column, &input.columns)
        .with_context(|| format!("reading {}", input.input.display()))?;
    if load.dropped_rows > 0 {
        tracing::warn!(rows = load.dropped_rows, "dropped rows with missing values");
    }
    Ok(load.bundle)
}

fn report_metrics(cps: &ChangePointSet, score: &ScoreArgs, dt: f64) -> Result<()> {
    let Some(path) = &score.truth else {
        return Ok(());
    };
    let truth = load_change_points(path).with_context(|| format!("reading {}", path.display()))?;
    let m = evaluate(cps, &truth, score.rule().margin(truth.n()), dt)?;
    eprintln!("{}", serde_json::to_string(&m)?);
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate_cmd(a),
        Command::Detect(a) => detect_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Bayes(a) => bayes_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Serve(a) => serve_cmd(a),
    }
}

fn simulate_cmd(a: SimulateArgs) -> Result<()> {
    let mut spec = SimSpec::new(a.family, a.seed)
        .with_n(a.n)
        .with_trend(a.trend);
    if let Some(s) = a.segments {
        spec = spec.with_segments(s);
    }
    if let Some(s) = a.noise {
        spec = spec.with_noise(s);
    }
    let bundle = simulate(&spec)?;
    write_csv(&bundle, sink(a.output.as_deref())?, "time")?;
    if let (Some(path), Some(truth)) = (&a.truth, &bundle.truth) {
        write_change_points(truth, File::create(path)?)?;
    }
    Ok(())
}

fn detect_cmd(a: DetectArgs) -> Result<()> {
    let bundle = load(&a.input)?;
    let mut model = CostModel::new(a.cost);
    if let Some(g) = a.gamma {
        model = model.with_gamma(g);
    }
    if let Some(p) = a.lags {
        model = model.with_lags(p);
    }
    if let Some(s) = a.min_size {
        model = model.with_min_size(s);
    }
    model.validate()?;
    let radius = a
        .merge_radius
        .unwrap_or_else(|| a.score.rule().margin(bundle.len()));
    let cps = detect_bundle(
        &bundle,
        &model,
        a.method.into(),
        a.penalty,
        a.half_width,
        radius,
    )?;
    write_change_points(&cps, sink(a.output.as_deref())?)?;
    report_metrics(&cps, &a.score, bundle.dt())
}

fn sweep_cmd(a: SweepArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.config)
        .with_context(|| format!("reading {}", a.config.display()))?;
    let mut cfg: ExperimentConfig =
        serde_json::from_str(&text).context("parsing experiment config")?;
    if let Some(out) = a.output {
        cfg.output = out;
    }
    let report = run_experiment(&cfg)?;
    let best = report.sweep.best_row();
    println!(
        "{}",
        serde_json::to_string(&serde_json::json!({
            "parameter": report.sweep.parameter,
            "value": best.value,
            "change_points": best.change_points,
            "metrics": best.metrics,
            "output": cfg.output,
        }))?
    );
    Ok(())
}

fn prior(a: &BayesArgs) -> Result<DistancePrior> {
    let need = |v: Option<f64>, name: &str| {
        v.with_context(|| format!("--{name} is required for this prior"))
    };
    let prior = match a.prior {
        PriorArg::Flat => DistancePrior::Flat,
        PriorArg::Geometric => DistancePrior::Geometric { p: need(a.p, "p")? },
        PriorArg::NegativeBinomial => DistancePrior::NegativeBinomial {
            r: need(a.r, "r")?,
            p: need(a.p, "p")?,
        },
    };
    prior.validate()?;
    Ok(prior)
}

fn bayes_cmd(a: BayesArgs) -> Result<()> {
    let bundle = load(&a.input)?;
    let cfg = BayesConfig {
        prior: prior(&a)?,
        k_max: a.k_max,
        epsilon: a.epsilon,
        threshold: a.threshold,
        distance: a.distance,
        paa_window: a.paa,
        normalise: !a.no_normalise,
        ..BayesConfig::default()
    };
    let mut per_signal = Vec::with_capacity(bundle.series.len());
    for (i, ts) in bundle.series.iter().enumerate() {
        let det = cpd_core::bayes::bayes_detect_full(ts, &cfg)?;
        if i == 0 {
            if let Some(path) = &a.probabilities {
                write_cp_prob_csv(&det.cp_prob, File::create(path)?)?;
            }
        }
        per_signal.push(det.change_points);
    }
    let radius = a
        .merge_radius
        .unwrap_or_else(|| a.score.rule().margin(bundle.len()));
    let cps = aggregate_union(&per_signal, radius)?;
    write_change_points(&cps, sink(a.output.as_deref())?)?;
    report_metrics(&cps, &a.score, bundle.dt())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let pred =
        load_change_points(&a.pred).with_context(|| format!("reading {}", a.pred.display()))?;
    let truth =
        load_change_points(&a.truth).with_context(|| format!("reading {}", a.truth.display()))?;
    if pred.n() != truth.n() {
        bail!(
            "prediction covers {} samples but the truth covers {}",
            pred.n(),
            truth.n()
        );
    }
    let rule = a
        .margin
        .map_or(MarginRule::Percent(a.margin_pct), MarginRule::Samples);
    let report = evaluate(&pred, &truth, rule.margin(truth.n()), a.dt)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> Result<()> {
    let addr = SocketAddr::new(a.host, a.port);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        tracing::info!(%addr, "listening");
        axum::serve(listener, api::router(api::AppState::new()))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
