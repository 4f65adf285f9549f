// SPDX-License-Identifier: MIT OR Apache-2.0

//! Segment cost functions.
//!
//! A segment is the half-open index range `a..b` of the series. Every cost
//! is a minimum over per-segment parameters of a fitting criterion, so
//! splitting a segment never increases the total cost; [`crate::search::pelt`]
//! relies on that for its pruning rule.
//!
//! [`SegmentCost`] precomputes prefix sums once per series so that every cost
//! except `L1` evaluates in time independent of the segment length.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::solve_spd;
use crate::search::ChangePointSet;
use crate::series::TimeSeries;

/// Lower bound applied to the empirical variance inside the Normal cost.
pub const VARIANCE_FLOOR: f64 = 1e-12;
/// Lasso coordinate descent stops once no coefficient moves more than this.
pub const LASSO_TOLERANCE: f64 = 1e-8;
pub const LASSO_MAX_SWEEPS: usize = 1000;
pub const DEFAULT_GAMMA: f64 = 1.0;
pub const DEFAULT_LAGS: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostError {
    #[error("segment {a}..{b} has {len} samples, cost needs at least {min}")]
    SegmentTooShort {
        a: usize,
        b: usize,
        len: usize,
        min: usize,
    },
    #[error("segment {a}..{b} is out of bounds for {n} samples")]
    OutOfBounds { a: usize, b: usize, n: usize },
    #[error("segment {a}..{b} has zero variance")]
    DegenerateSegment { a: usize, b: usize },
    #[error("lasso did not converge in {sweeps} sweeps (best objective {objective})")]
    NoConvergence { objective: f64, sweeps: usize },
    #[error("invalid cost model: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostKind {
    L2,
    L1,
    Normal,
    #[serde(rename = "linreg")]
    LinReg,
    Ar,
    Ridge,
    Lasso,
}

impl CostKind {
    pub const ALL: [CostKind; 7] = [
        CostKind::L2,
        CostKind::L1,
        CostKind::Normal,
        CostKind::LinReg,
        CostKind::Ar,
        CostKind::Ridge,
        CostKind::Lasso,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CostKind::L2 => "l2",
            CostKind::L1 => "l1",
            CostKind::Normal => "normal",
            CostKind::LinReg => "linreg",
            CostKind::Ar => "ar",
            CostKind::Ridge => "ridge",
            CostKind::Lasso => "lasso",
        }
    }

    pub fn is_regularised(self) -> bool {
        matches!(self, CostKind::Ridge | CostKind::Lasso)
    }
}

impl fmt::Display for CostKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CostKind {
    type Err = CostError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CostKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| CostError::InvalidModel(format!("unknown cost `{s}`")))
    }
}

/// Which segment cost to use and its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub kind: CostKind,
    /// Regularisation weight, only read by ridge and lasso.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Autoregressive order, only read by the AR cost.
    #[serde(default = "default_lags")]
    pub lags: usize,
    /// Shortest admissible segment.
    #[serde(default)]
    pub min_size: Option<usize>,
}

fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}

fn default_lags() -> usize {
    DEFAULT_LAGS
}

impl CostModel {
    pub fn new(kind: CostKind) -> Self {
        Self {
            kind,
            gamma: DEFAULT_GAMMA,
            lags: DEFAULT_LAGS,
            min_size: None,
        }
    }

    #[must_use]
    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    #[must_use]
    pub fn with_lags(mut self, lags: usize) -> Self {
        self.lags = lags;
        self
    }

    #[must_use]
    pub fn with_min_size(mut self, min_size: usize) -> Self {
        self.min_size = Some(min_size);
        self
    }

    /// Smallest segment length on which the cost is well defined.
    pub fn required_min_size(&self) -> usize {
        match self.kind {
            CostKind::L2 | CostKind::L1 | CostKind::Normal => 2,
            CostKind::LinReg | CostKind::Ridge | CostKind::Lasso => 3,
            CostKind::Ar => self.lags + 2,
        }
    }

    pub fn min_size(&self) -> usize {
        self.min_size.unwrap_or_else(|| self.required_min_size())
    }

    pub fn validate(&self) -> Result<(), CostError> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(CostError::InvalidModel(format!(
                "gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        if self.kind == CostKind::Ar && self.lags == 0 {
            return Err(CostError::InvalidModel(
                "AR cost needs at least one lag".into(),
            ));
        }
        if self.min_size() < self.required_min_size() {
            return Err(CostError::InvalidModel(format!(
                "min_size {} below {} required by {}",
                self.min_size(),
                self.required_min_size(),
                self.kind
            )));
        }
        Ok(())
    }
}

impl Default for CostModel {
    fn default() -> Self {
        Self::new(CostKind::L2)
    }
}

/// Prefix sums shared by all cost evaluations on one series.
#[derive(Debug, Clone)]
pub struct StatsCache {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    /// Prefix of `(i + 1) * y[i]`.
    sum_iy: Vec<f64>,
    ar: Option<ArGram>,
}

/// Prefix sums of `z z'` with `z_i = [1, y[i-1], ..., y[i-p], y[i]]`, for
/// responses `i >= p`.
#[derive(Debug, Clone)]
struct ArGram {
    lags: usize,
    dim: usize,
    prefix: Vec<f64>,
}

impl StatsCache {
    pub fn new(values: &[f64], ar_lags: Option<usize>) -> Self {
        let n = values.len();
        let mut sum = Vec::with_capacity(n + 1);
        let mut sum_sq = Vec::with_capacity(n + 1);
        let mut sum_iy = Vec::with_capacity(n + 1);
        let (mut s, mut s2, mut siy) = (0.0, 0.0, 0.0);
        sum.push(0.0);
        sum_sq.push(0.0);
        sum_iy.push(0.0);
        for (i, &y) in values.iter().enumerate() {
            s += y;
            s2 += y * y;
            siy += (i + 1) as f64 * y;
            sum.push(s);
            sum_sq.push(s2);
            sum_iy.push(siy);
        }
        let ar = ar_lags.map(|p| ArGram::new(values, p));
        Self {
            sum,
            sum_sq,
            sum_iy,
            ar,
        }
    }

    fn sums(&self, a: usize, b: usize) -> (f64, f64) {
        (self.sum[b] - self.sum[a], self.sum_sq[b] - self.sum_sq[a])
    }
}

impl ArGram {
    fn new(values: &[f64], lags: usize) -> Self {
        let n = values.len();
        let dim = lags + 2;
        let mut prefix = vec![0.0; (n + 1) * dim * dim];
        let mut z = vec![0.0; dim];
        for i in 0..n {
            let base_prev = i * dim * dim;
            let base_next = (i + 1) * dim * dim;
            prefix.copy_within(base_prev..base_next, base_next);
            if i >= lags {
                z[0] = 1.0;
                for k in 1..=lags {
                    z[k] = values[i - k];
                }
                z[dim - 1] = values[i];
                for r in 0..dim {
                    for c in 0..dim {
                        prefix[base_next + r * dim + c] += z[r] * z[c];
                    }
                }
            }
        }
        Self { lags, dim, prefix }
    }

    /// Gram matrix over responses `from..to`.
    fn gram(&self, from: usize, to: usize) -> Vec<f64> {
        let d2 = self.dim * self.dim;
        let hi = &self.prefix[to * d2..(to + 1) * d2];
        let lo = &self.prefix[from * d2..(from + 1) * d2];
        hi.iter().zip(lo).map(|(h, l)| h - l).collect()
    }
}

/// Centered sufficient statistics for the single-covariate regression with
/// covariate `x_t = (t - a) / (b - a)`, `t = a+1..=b`.
#[derive(Debug, Clone, Copy)]
struct RegressionStats {
    x_mean: f64,
    y_mean: f64,
    sxx: f64,
    sxy: f64,
    syy: f64,
}

impl RegressionStats {
    fn from_cache(cache: &StatsCache, a: usize, b: usize) -> Self {
        let m = (b - a) as f64;
        let (sy, syy_raw) = cache.sums(a, b);
        let sxy_raw = ((cache.sum_iy[b] - cache.sum_iy[a]) - a as f64 * sy) / m;
        let x_mean = (m + 1.0) / (2.0 * m);
        Self {
            x_mean,
            y_mean: sy / m,
            sxx: (m * m - 1.0) / (12.0 * m),
            sxy: sxy_raw - x_mean * sy,
            syy: (syy_raw - sy * sy / m).max(0.0),
        }
    }

    fn ridge(&self, gamma: f64) -> f64 {
        let denom = self.sxx + gamma;
        if denom <= 0.0 {
            return self.syy;
        }
        (self.syy - self.sxy * self.sxy / denom).max(0.0)
    }
}

/// Lasso solution for one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// Residual sum of squares plus `gamma * sum |beta_j|`.
    pub objective: f64,
    pub sweeps: usize,
}

/// Cyclic coordinate descent for `min ||y_c - X_c b||^2 + gamma |b|_1` on
/// centered Gram statistics; the unpenalised intercept is recovered from
/// the means afterwards.
fn lasso_coordinate_descent(
    sxx: &[f64],
    sxy: &[f64],
    syy: f64,
    x_mean: &[f64],
    y_mean: f64,
    gamma: f64,
) -> Result<LassoFit, CostError> {
    let p = sxy.len();
    let mut beta = vec![0.0; p];
    let half = gamma / 2.0;
    let objective = |beta: &[f64]| {
        let mut quad = 0.0;
        for j in 0..p {
            for k in 0..p {
                quad += beta[j] * sxx[j * p + k] * beta[k];
            }
        }
        let lin: f64 = beta.iter().zip(sxy).map(|(b, s)| b * s).sum();
        let l1: f64 = beta.iter().map(|b| b.abs()).sum();
        (syy - 2.0 * lin + quad).max(0.0) + gamma * l1
    };
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < LASSO_MAX_SWEEPS {
        sweeps += 1;
        let mut max_step: f64 = 0.0;
        for j in 0..p {
            let diag = sxx[j * p + j];
            let new = if diag > 0.0 {
                let partial: f64 = (0..p)
                    .filter(|&k| k != j)
                    .map(|k| sxx[j * p + k] * beta[k])
                    .sum();
                let rho = sxy[j] - partial;
                soft_threshold(rho, half) / diag
            } else {
                0.0
            };
            max_step = max_step.max((new - beta[j]).abs());
            beta[j] = new;
        }
        if max_step < LASSO_TOLERANCE {
            converged = true;
            break;
        }
    }
    let obj = objective(&beta);
    if !converged {
        return Err(CostError::NoConvergence {
            objective: obj,
            sweeps,
        });
    }
    let intercept = y_mean - beta.iter().zip(x_mean).map(|(b, x)| b * x).sum::<f64>();
    Ok(LassoFit {
        intercept,
        coefficients: beta,
        objective: obj,
        sweeps,
    })
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// A cost model bound to one series, with its prefix statistics.
#[derive(Debug, Clone)]
pub struct SegmentCost<'a> {
    model: CostModel,
    values: &'a [f64],
    cache: StatsCache,
}

impl<'a> SegmentCost<'a> {
    pub fn new(model: CostModel, values: &'a [f64]) -> Result<Self, CostError> {
        model.validate()?;
        let ar_lags = (model.kind == CostKind::Ar).then_some(model.lags);
        Ok(Self {
            model,
            values,
            cache: StatsCache::new(values, ar_lags),
        })
    }

    pub fn model(&self) -> &CostModel {
        &self.model
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn min_size(&self) -> usize {
        self.model.min_size()
    }

    /// Cost of `a..b` as used by the searches. The caller guarantees the
    /// segment is in bounds and at least `min_size` long. Near-constant
    /// segments use the floored variance under the Normal cost.
    pub fn cost(&self, a: usize, b: usize) -> f64 {
        debug_assert!(a < b && b <= self.values.len());
        match self.model.kind {
            CostKind::L2 => self.l2(a, b),
            CostKind::L1 => self.l1(a, b),
            CostKind::Normal => {
                // m log(var) + rss / var, with the variance floored
                let m = (b - a) as f64;
                let rss = self.l2(a, b);
                let var = (rss / m).max(VARIANCE_FLOOR);
                m * var.ln() + rss / var
            }
            CostKind::LinReg => RegressionStats::from_cache(&self.cache, a, b).ridge(0.0),
            CostKind::Ridge => {
                RegressionStats::from_cache(&self.cache, a, b).ridge(self.model.gamma)
            }
            CostKind::Lasso => match self.lasso_fit(a, b) {
                Ok(fit) => fit.objective,
                Err(CostError::NoConvergence { objective, .. }) => objective,
                Err(_) => unreachable!("lasso only fails to converge"),
            },
            CostKind::Ar => self.ar(a, b),
        }
    }

    /// Bounds- and size-checked cost. Under the Normal cost a segment whose
    /// samples are all equal is rejected instead of floored.
    pub fn checked(&self, a: usize, b: usize) -> Result<f64, CostError> {
        let n = self.values.len();
        if a >= b || b > n {
            return Err(CostError::OutOfBounds { a, b, n });
        }
        let min = self.min_size();
        if b - a < min {
            return Err(CostError::SegmentTooShort {
                a,
                b,
                len: b - a,
                min,
            });
        }
        match self.model.kind {
            CostKind::Normal => {
                let seg = &self.values[a..b];
                if seg.iter().all(|&v| v == seg[0]) {
                    return Err(CostError::DegenerateSegment { a, b });
                }
                Ok(self.cost(a, b))
            }
            CostKind::Lasso => self.lasso_fit(a, b).map(|f| f.objective),
            _ => Ok(self.cost(a, b)),
        }
    }

    fn l2(&self, a: usize, b: usize) -> f64 {
        let (s, s2) = self.cache.sums(a, b);
        (s2 - s * s / (b - a) as f64).max(0.0)
    }

    fn l1(&self, a: usize, b: usize) -> f64 {
        let mut buf = self.values[a..b].to_vec();
        let mid = (buf.len() - 1) / 2;
        let (_, median, _) = buf.select_nth_unstable_by(mid, f64::total_cmp);
        let median = *median;
        self.values[a..b].iter().map(|v| (v - median).abs()).sum()
    }

    fn ar(&self, a: usize, b: usize) -> f64 {
        let gram = self
            .cache
            .ar
            .as_ref()
            .expect("AR statistics present for AR model");
        let p = gram.lags;
        let d = gram.dim;
        if b < a + p + 1 {
            return 0.0;
        }
        let g = gram.gram(a + p, b);
        let q = p + 1;
        let mut xtx = vec![0.0; q * q];
        let mut xty = vec![0.0; q];
        for r in 0..q {
            for c in 0..q {
                xtx[r * q + c] = g[r * d + c];
            }
            xty[r] = g[r * d + d - 1];
        }
        let yty = g[d * d - 1];
        let beta = solve_spd(&xtx, &xty);
        let mut quad = 0.0;
        for r in 0..q {
            for c in 0..q {
                quad += beta[r] * xtx[r * q + c] * beta[c];
            }
        }
        let lin: f64 = beta.iter().zip(&xty).map(|(b, v)| b * v).sum();
        (yty - 2.0 * lin + quad).max(0.0)
    }

    /// Lasso fit of the single-covariate regression on `a..b`.
    pub fn lasso_fit(&self, a: usize, b: usize) -> Result<LassoFit, CostError> {
        let st = RegressionStats::from_cache(&self.cache, a, b);
        lasso_coordinate_descent(
            &[st.sxx],
            &[st.sxy],
            st.syy,
            &[st.x_mean],
            st.y_mean,
            self.model.gamma,
        )
    }
}

/// Checked cost of `ts[a..b]` under `model`.
pub fn segment_cost(
    model: &CostModel,
    ts: &TimeSeries,
    a: usize,
    b: usize,
) -> Result<f64, CostError> {
    SegmentCost::new(*model, ts.values())?.checked(a, b)
}

pub fn cost_l2(ts: &TimeSeries, a: usize, b: usize) -> Result<f64, CostError> {
    segment_cost(&CostModel::new(CostKind::L2), ts, a, b)
}

pub fn cost_l1(ts: &TimeSeries, a: usize, b: usize) -> Result<f64, CostError> {
    segment_cost(&CostModel::new(CostKind::L1), ts, a, b)
}

pub fn cost_normal(ts: &TimeSeries, a: usize, b: usize) -> Result<f64, CostError> {
    segment_cost(&CostModel::new(CostKind::Normal), ts, a, b)
}

pub fn cost_linreg(ts: &TimeSeries, a: usize, b: usize) -> Result<f64, CostError> {
    segment_cost(&CostModel::new(CostKind::LinReg), ts, a, b)
}

pub fn cost_ar(ts: &TimeSeries, a: usize, b: usize, lags: usize) -> Result<f64, CostError> {
    segment_cost(&CostModel::new(CostKind::Ar).with_lags(lags), ts, a, b)
}

pub fn cost_ridge(ts: &TimeSeries, a: usize, b: usize, gamma: f64) -> Result<f64, CostError> {
    segment_cost(&CostModel::new(CostKind::Ridge).with_gamma(gamma), ts, a, b)
}

pub fn cost_lasso(ts: &TimeSeries, a: usize, b: usize, gamma: f64) -> Result<f64, CostError> {
    segment_cost(&CostModel::new(CostKind::Lasso).with_gamma(gamma), ts, a, b)
}

/// Sum of checked segment costs over the segmentation `cps`.
pub fn sum_of_costs(
    model: &CostModel,
    ts: &TimeSeries,
    cps: &ChangePointSet,
) -> Result<f64, CostError> {
    let cost = SegmentCost::new(*model, ts.values())?;
    cps.segments().map(|(a, b)| cost.checked(a, b)).sum()
}
