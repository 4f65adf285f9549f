// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded generators for six synthetic signal families with known change
//! points.
//!
//! Each generator draws the segment structure (boundaries and per-segment
//! parameters) from one random stream and the observation noise from
//! another, so setting `noise = 0` yields exactly the deterministic skeleton
//! of the same seed.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::search::ChangePointSet;
use crate::series::{SignalBundle, TimeSeries};

pub const DEFAULT_N: usize = 1400;
/// Relative jitter applied to the near-equal segment boundaries.
pub const BOUNDARY_JITTER: f64 = 0.1;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    PiecewiseConstant,
    PiecewiseLinear,
    ChangingVariance,
    Autoregressive,
    ExponentialDecay,
    Oscillating,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::PiecewiseConstant,
        Family::PiecewiseLinear,
        Family::ChangingVariance,
        Family::Autoregressive,
        Family::ExponentialDecay,
        Family::Oscillating,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::PiecewiseConstant => "piecewise_constant",
            Family::PiecewiseLinear => "piecewise_linear",
            Family::ChangingVariance => "changing_variance",
            Family::Autoregressive => "autoregressive",
            Family::ExponentialDecay => "exponential_decay",
            Family::Oscillating => "oscillating",
        }
    }

    pub fn default_segments(self) -> usize {
        match self {
            Family::PiecewiseConstant | Family::ChangingVariance => 7,
            Family::PiecewiseLinear | Family::Autoregressive | Family::ExponentialDecay => 6,
            Family::Oscillating => 12,
        }
    }

    pub fn default_noise(self) -> f64 {
        match self {
            Family::PiecewiseConstant | Family::ChangingVariance | Family::Autoregressive => 1.0,
            Family::PiecewiseLinear | Family::ExponentialDecay | Family::Oscillating => 0.1,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        let family = match key.as_str() {
            "piecewise_constant" | "pc" | "constant" => Family::PiecewiseConstant,
            "piecewise_linear" | "pl" | "linear" => Family::PiecewiseLinear,
            "changing_variance" | "cv" | "variance" => Family::ChangingVariance,
            "autoregressive" | "ar" => Family::Autoregressive,
            "exponential_decay" | "ed" | "exponential" => Family::ExponentialDecay,
            "oscillating" | "osc" => Family::Oscillating,
            _ => return Err(SimError::InvalidSpec(format!("unknown family `{s}`"))),
        };
        Ok(family)
    }
}

/// What to generate. `segments` and `noise` fall back to the family
/// defaults when absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub family: Family,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub segments: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise: Option<f64>,
    /// Linear drift added to the whole series, per sample.
    #[serde(default)]
    pub trend: f64,
}

fn default_n() -> usize {
    DEFAULT_N
}

impl SimSpec {
    pub fn new(family: Family, seed: u64) -> Self {
        Self {
            family,
            n: DEFAULT_N,
            segments: None,
            seed,
            noise: None,
            trend: 0.0,
        }
    }

    #[must_use]
    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    #[must_use]
    pub fn with_segments(mut self, segments: usize) -> Self {
        self.segments = Some(segments);
        self
    }

    #[must_use]
    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = Some(noise);
        self
    }

    #[must_use]
    pub fn with_trend(mut self, trend: f64) -> Self {
        self.trend = trend;
        self
    }

    pub fn segment_count(&self) -> usize {
        self.segments
            .unwrap_or_else(|| self.family.default_segments())
    }

    pub fn noise_level(&self) -> f64 {
        self.noise.unwrap_or_else(|| self.family.default_noise())
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let segments = self.segment_count();
        if segments < 1 {
            return Err(SimError::InvalidSpec(
                "at least one segment required".into(),
            ));
        }
        if self.n < 10 * segments {
            return Err(SimError::InvalidSpec(format!(
                "n = {} is below 10 x {segments} segments",
                self.n
            )));
        }
        let noise = self.noise_level();
        if !(noise.is_finite() && noise >= 0.0) {
            return Err(SimError::InvalidSpec(format!(
                "noise {noise} must be finite and >= 0"
            )));
        }
        if !self.trend.is_finite() {
            return Err(SimError::InvalidSpec("trend must be finite".into()));
        }
        Ok(())
    }
}

/// The noise-free signal and its change points.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub values: Vec<f64>,
    pub truth: ChangePointSet,
}

fn structure_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn noise_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Near-equal split of `0..n` into `segments` parts with seeded jitter.
/// Returns the boundaries `0 = b_0 < b_1 < ... < b_S = n`.
fn boundaries(n: usize, segments: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let len = n as f64 / segments as f64;
    let mut b = Vec::with_capacity(segments + 1);
    b.push(0);
    for j in 1..segments {
        let jitter = rng.random_range(-BOUNDARY_JITTER..=BOUNDARY_JITTER) * len;
        b.push((j as f64 * len + jitter).round() as usize);
    }
    b.push(n);
    b
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn truth_of(b: &[usize], n: usize) -> ChangePointSet {
    ChangePointSet::new(b[1..b.len() - 1].to_vec(), n).expect("generated boundaries are valid")
}

/// Generates the bundle described by `spec`.
pub fn simulate(spec: &SimSpec) -> Result<SignalBundle, SimError> {
    spec.validate()?;
    let values = match spec.family {
        Family::PiecewiseConstant => gen_piecewise_constant(spec),
        Family::PiecewiseLinear => gen_piecewise_linear(spec),
        Family::ChangingVariance => gen_changing_variance(spec),
        Family::Autoregressive => gen_autoregressive(spec),
        Family::ExponentialDecay => gen_exponential_decay(spec),
        Family::Oscillating => gen_oscillating(spec),
    };
    let Skeleton { mut values, truth } = values;
    if spec.trend != 0.0 {
        for (i, v) in values.iter_mut().enumerate() {
            *v += spec.trend * i as f64;
        }
    }
    let label = format!("{}-{}", spec.family, spec.seed);
    let ts = TimeSeries::with_time(values, 0.0, 1.0, label)
        .map_err(|e| SimError::InvalidSpec(e.to_string()))?;
    SignalBundle::single(ts, Some(truth)).map_err(|e| SimError::InvalidSpec(e.to_string()))
}

/// The series `simulate` would produce with zero noise.
pub fn skeleton(spec: &SimSpec) -> Result<Skeleton, SimError> {
    let bundle = simulate(&spec.with_noise(0.0))?;
    Ok(Skeleton {
        values: bundle.series[0].values().to_vec(),
        truth: bundle.truth.expect("simulated bundles carry truth"),
    })
}

/// `y_t ~ N(mu_j, |sigma_j| * noise)` with `mu_j ~ U(-10, 10)`,
/// `sigma_j ~ U(-1, 1)`.
pub fn gen_piecewise_constant(spec: &SimSpec) -> Skeleton {
    let (n, s, noise) = (spec.n, spec.segment_count(), spec.noise_level());
    let mut rng = structure_rng(spec.seed);
    let mut eps = noise_rng(spec.seed);
    let b = boundaries(n, s, &mut rng);
    let mut values = Vec::with_capacity(n);
    for j in 0..s {
        let mu: f64 = rng.random_range(-10.0..10.0);
        let sigma = rng.random_range(-1.0f64..1.0).abs() * noise;
        for _ in b[j]..b[j + 1] {
            let e = standard_normal(&mut eps);
            values.push(if sigma == 0.0 { mu } else { mu + sigma * e });
        }
    }
    Skeleton {
        truth: truth_of(&b, n),
        values,
    }
}

/// Continuous piecewise-linear mean through knots of alternating sign,
/// scaled to `[-1, 1]`, plus white noise of standard deviation `noise`.
pub fn gen_piecewise_linear(spec: &SimSpec) -> Skeleton {
    let (n, s, noise) = (spec.n, spec.segment_count(), spec.noise_level());
    let mut rng = structure_rng(spec.seed);
    let mut eps = noise_rng(spec.seed);
    let b = boundaries(n, s, &mut rng);
    let start_up = rng.random_bool(0.5);
    let knots: Vec<f64> = (0..=s)
        .map(|j| {
            let mag: f64 = rng.random_range(0.3..1.0);
            if (j % 2 == 0) == start_up {
                mag
            } else {
                -mag
            }
        })
        .collect();
    let mut mean = Vec::with_capacity(n);
    for j in 0..s {
        let (a, e) = (b[j], b[j + 1]);
        let len = (e - a) as f64;
        for t in a..e {
            let x = (t - a) as f64 / len;
            mean.push(knots[j] + (knots[j + 1] - knots[j]) * x);
        }
    }
    let lo = mean.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let values = mean
        .iter()
        .map(|&m| {
            let scaled = 2.0 * (m - lo) / (hi - lo) - 1.0;
            let e = standard_normal(&mut eps);
            if noise == 0.0 {
                scaled
            } else {
                scaled + noise * e
            }
        })
        .collect();
    Skeleton {
        truth: truth_of(&b, n),
        values,
    }
}

/// Zero mean with a per-segment standard deviation; adjacent deviations
/// differ by at least a factor 1.5.
pub fn gen_changing_variance(spec: &SimSpec) -> Skeleton {
    let (n, s, noise) = (spec.n, spec.segment_count(), spec.noise_level());
    let mut rng = structure_rng(spec.seed);
    let mut eps = noise_rng(spec.seed);
    let b = boundaries(n, s, &mut rng);
    let (lo, hi) = (0.2f64.ln(), 3.0f64.ln());
    let mut sigmas: Vec<f64> = Vec::with_capacity(s);
    for _ in 0..s {
        let sigma = loop {
            let cand = rng.random_range(lo..hi).exp();
            match sigmas.last() {
                Some(&prev) if (cand / prev).max(prev / cand) < 1.5 => continue,
                _ => break cand,
            }
        };
        sigmas.push(sigma);
    }
    let mut values = Vec::with_capacity(n);
    for j in 0..s {
        for _ in b[j]..b[j + 1] {
            let e = standard_normal(&mut eps);
            values.push(if noise == 0.0 {
                0.0
            } else {
                sigmas[j] * noise * e
            });
        }
    }
    Skeleton {
        truth: truth_of(&b, n),
        values,
    }
}

/// `y_t = c_j + phi_j y_{t-1} + noise * e_t`. Two parameter sets, a
/// persistent one (`phi ~ U(0.6, 0.95)`) and a weakly dependent one
/// (`phi ~ U(-0.5, 0.2)`), alternate across segments. Stationary means are
/// drawn from `U(-1, 1)` so the change is mostly in the dynamics.
pub fn gen_autoregressive(spec: &SimSpec) -> Skeleton {
    let (n, s, noise) = (spec.n, spec.segment_count(), spec.noise_level());
    let mut rng = structure_rng(spec.seed);
    let mut eps = noise_rng(spec.seed);
    let b = boundaries(n, s, &mut rng);
    let phi_a: f64 = rng.random_range(0.6..0.95);
    let phi_b: f64 = rng.random_range(-0.5..0.2);
    let mean_a: f64 = rng.random_range(-1.0..1.0);
    let mean_b: f64 = rng.random_range(-1.0..1.0);
    let params = [
        (mean_a * (1.0 - phi_a), phi_a),
        (mean_b * (1.0 - phi_b), phi_b),
    ];
    let mut values = Vec::with_capacity(n);
    let mut prev = mean_a;
    for j in 0..s {
        let (c, phi) = params[j % 2];
        for _ in b[j]..b[j + 1] {
            let e = standard_normal(&mut eps);
            let y = if noise == 0.0 {
                c + phi * prev
            } else {
                c + phi * prev + noise * e
            };
            values.push(y);
            prev = y;
        }
    }
    Skeleton {
        truth: truth_of(&b, n),
        values,
    }
}

/// Alternating exponential decay from a high level towards a low one and a
/// linear climb back, continuous at every boundary.
pub fn gen_exponential_decay(spec: &SimSpec) -> Skeleton {
    let (n, s, noise) = (spec.n, spec.segment_count(), spec.noise_level());
    let mut rng = structure_rng(spec.seed);
    let mut eps = noise_rng(spec.seed);
    let b = boundaries(n, s, &mut rng);
    let mut values = Vec::with_capacity(n);
    let mut level: f64 = rng.random_range(0.8..1.0);
    for j in 0..s {
        let (a, e) = (b[j], b[j + 1]);
        let len = (e - a) as f64;
        if j % 2 == 0 {
            let floor: f64 = rng.random_range(-1.0..-0.8);
            let rate = rng.random_range(3.0..6.0) / len;
            for t in a..e {
                values.push(floor + (level - floor) * (-rate * (t - a) as f64).exp());
            }
            level = floor + (level - floor) * (-rate * len).exp();
        } else {
            let target: f64 = rng.random_range(0.8..1.0);
            for t in a..e {
                values.push(level + (target - level) * (t - a) as f64 / len);
            }
            level = target;
        }
    }
    add_noise(&mut values, noise, &mut eps);
    Skeleton {
        truth: truth_of(&b, n),
        values,
    }
}

/// Repeated motif of four phases: sigmoid rise to a plateau, damped
/// oscillation `e^{-d tau} sin(omega tau)` around it, a stable period and a
/// linear decay back down.
pub fn gen_oscillating(spec: &SimSpec) -> Skeleton {
    let (n, s, noise) = (spec.n, spec.segment_count(), spec.noise_level());
    let mut rng = structure_rng(spec.seed);
    let mut eps = noise_rng(spec.seed);
    let b = boundaries(n, s, &mut rng);
    let low = -1.0;
    let mut plateau = 0.0;
    let mut values = Vec::with_capacity(n);
    for j in 0..s {
        let (a, e) = (b[j], b[j + 1]);
        let len = (e - a) as f64;
        match j % 4 {
            0 => {
                plateau = rng.random_range(0.5..1.0);
                for t in a..e {
                    let x = (t - a) as f64 / len;
                    values.push(low + (plateau - low) / (1.0 + (-12.0 * (x - 0.5)).exp()));
                }
                // land exactly on the asymptote for the next phase
                plateau = *values.last().expect("segment is non-empty");
            }
            1 => {
                let amp: f64 = rng.random_range(0.5..0.8);
                let damping = rng.random_range(3.0..5.0) / len;
                let omega = std::f64::consts::TAU * rng.random_range(4.0..8.0) / len;
                for t in a..e {
                    let tau = (t - a) as f64;
                    values.push(plateau + amp * (-damping * tau).exp() * (omega * tau).sin());
                }
            }
            2 => values.extend(std::iter::repeat_n(plateau, e - a)),
            _ => {
                for t in a..e {
                    values.push(plateau + (low - plateau) * (t - a) as f64 / len);
                }
            }
        }
    }
    add_noise(&mut values, noise, &mut eps);
    Skeleton {
        truth: truth_of(&b, n),
        values,
    }
}

fn add_noise(values: &mut [f64], noise: f64, rng: &mut ChaCha8Rng) {
    if noise == 0.0 {
        return;
    }
    for v in values {
        *v += noise * standard_normal(rng);
    }
}
