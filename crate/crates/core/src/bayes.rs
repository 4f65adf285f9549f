// SPDX-License-Identifier: MIT OR Apache-2.0

//! Exact Bayesian offline change point inference.
//!
//! Segments are modelled as i.i.d. Gaussian with unknown mean and variance
//! under a conjugate Normal-Inverse-Gamma prior, which makes the segment
//! marginal likelihood `P(a, b)` closed form. Change point positions follow a
//! point process given by a [`DistancePrior`] on the gap between
//! consecutive change points.
//!
//! With `k` change points `0 < t_1 < ... < t_k < n`, the backward quantity
//!
//! ```text
//! Q_m(i) = sum_{s=i+1}^{n-m} P(i, s) g(s - i) Q_{m-1}(s),    Q_0(i) = P(i, n)
//! ```
//!
//! is the likelihood of `y[i..]` given a change point at `i` followed by `m`
//! more (in the per-`k` notation, `Q_j^(k) = Q_{k-j}`). The evidence for `k`
//! change points is `sum_s P(0, s) g(s) Q_{k-1}(s)`. A matching forward pass
//! gives per-position change point probabilities. Everything is accumulated
//! in log space. With `epsilon > 0` a sum stops once a falling term
//! contributes less than `epsilon` relative to the running total.
//!
//! All indices are 0-based: a change point at `t` starts a new segment at
//! sample `t`, and `P(a, b)` covers samples `a..b`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::search::{find_peaks, ChangePointSet, SearchError};
use crate::series::{normalise, paa, SeriesError, TimeSeries};

/// Truncation threshold used in the literature. The ratio test can stop a
/// fixed-`k` sum before its dominant terms arrive, so it is opt-in.
pub const TRUNCATION_EPSILON: f64 = 1e-10;
/// Exact sums by default.
pub const DEFAULT_EPSILON: f64 = 0.0;
pub const DEFAULT_THRESHOLD: f64 = 0.2;
pub const DEFAULT_DISTANCE: usize = 10;
pub const DEFAULT_K_MAX_CAP: usize = 30;

#[derive(Debug, Error)]
pub enum BayesError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Search(#[from] SearchError),
}

/// Normal-Inverse-Gamma prior on a segment's `(mean, variance)`:
/// `variance ~ InvGamma(alpha0, beta0)`, `mean | variance ~ N(mu0, variance / kappa0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NigPrior {
    pub mu0: f64,
    pub kappa0: f64,
    pub alpha0: f64,
    pub beta0: f64,
}

impl Default for NigPrior {
    fn default() -> Self {
        Self {
            mu0: 0.0,
            kappa0: 0.1,
            alpha0: 1.0,
            beta0: 1.0,
        }
    }
}

impl NigPrior {
    pub fn validate(&self) -> Result<(), BayesError> {
        let ok = self.mu0.is_finite()
            && self.kappa0 > 0.0
            && self.alpha0 > 0.0
            && self.beta0 > 0.0
            && self.kappa0.is_finite()
            && self.alpha0.is_finite()
            && self.beta0.is_finite();
        if ok {
            Ok(())
        } else {
            Err(BayesError::InvalidParameter(format!("{self:?}")))
        }
    }
}

/// Prior on the gap `d >= 1` between consecutive change points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistancePrior {
    /// Constant `1/n` for every gap.
    #[default]
    Flat,
    /// `p (1-p)^(d-1)`.
    Geometric { p: f64 },
    /// `d - 1 ~ NegativeBinomial(r, p)`.
    NegativeBinomial { r: f64, p: f64 },
}

impl DistancePrior {
    pub fn validate(&self) -> Result<(), BayesError> {
        let ok = match *self {
            DistancePrior::Flat => true,
            DistancePrior::Geometric { p } => p > 0.0 && p < 1.0,
            DistancePrior::NegativeBinomial { r, p } => {
                r > 0.0 && r.is_finite() && p > 0.0 && p < 1.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(BayesError::InvalidParameter(format!("{self:?}")))
        }
    }

    /// `log g(gap)` for a series of length `n`.
    pub fn log_pmf(&self, gap: usize, n: usize) -> f64 {
        if gap == 0 {
            return f64::NEG_INFINITY;
        }
        let d = (gap - 1) as f64;
        match *self {
            DistancePrior::Flat => -(n as f64).ln(),
            DistancePrior::Geometric { p } => p.ln() + d * (1.0 - p).ln(),
            DistancePrior::NegativeBinomial { r, p } => {
                ln_gamma(d + r) - ln_gamma(r) - ln_gamma(d + 1.0) + r * p.ln() + d * (1.0 - p).ln()
            }
        }
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Truncated log-sum-exp over a stream of log terms: stops at the first
/// term that is smaller than its predecessor and whose share of the running
/// total is below `epsilon`. Terms that are still growing never trigger the
/// stop, so a slowly rising head of the sum is not cut off.
fn truncated_log_sum(terms: impl Iterator<Item = f64>, log_epsilon: Option<f64>) -> f64 {
    let mut acc = f64::NEG_INFINITY;
    let mut prev = f64::NEG_INFINITY;
    for term in terms {
        if term == f64::NEG_INFINITY {
            prev = term;
            continue;
        }
        acc = log_add_exp(acc, term);
        if let Some(le) = log_epsilon {
            if term < prev && term - acc < le {
                break;
            }
        }
        prev = term;
    }
    acc
}

/// Closed-form log marginal likelihood of segments under a [`NigPrior`].
#[derive(Debug, Clone)]
pub struct SegmentMarginal {
    prior: NigPrior,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    /// `ln Γ(alpha0 + m/2)` for `m = 0..=n`.
    lgamma_alpha: Vec<f64>,
}

impl SegmentMarginal {
    pub fn new(values: &[f64], prior: NigPrior) -> Result<Self, BayesError> {
        prior.validate()?;
        let n = values.len();
        let mut sum = Vec::with_capacity(n + 1);
        let mut sum_sq = Vec::with_capacity(n + 1);
        sum.push(0.0);
        sum_sq.push(0.0);
        // prefix sums of the deviation from mu0 keep the closed form stable
        let (mut s, mut s2) = (0.0, 0.0);
        for &y in values {
            let d = y - prior.mu0;
            s += d;
            s2 += d * d;
            sum.push(s);
            sum_sq.push(s2);
        }
        let lgamma_alpha = (0..=n)
            .map(|m| ln_gamma(prior.alpha0 + m as f64 / 2.0))
            .collect();
        Ok(Self {
            prior,
            sum,
            sum_sq,
            lgamma_alpha,
        })
    }

    /// `log P(a, b)` for samples `a..b`.
    pub fn log_marginal(&self, a: usize, b: usize) -> f64 {
        let pr = &self.prior;
        let m = (b - a) as f64;
        let s = self.sum[b] - self.sum[a];
        let s2 = self.sum_sq[b] - self.sum_sq[a];
        let mean_dev = s / m;
        let scatter = (s2 - s * mean_dev).max(0.0);
        let kappa_n = pr.kappa0 + m;
        let alpha_n = pr.alpha0 + m / 2.0;
        let beta_n =
            pr.beta0 + 0.5 * scatter + pr.kappa0 * m * mean_dev * mean_dev / (2.0 * kappa_n);
        self.lgamma_alpha[b - a] - self.lgamma_alpha[0] + pr.alpha0 * pr.beta0.ln()
            - alpha_n * beta_n.ln()
            + 0.5 * (pr.kappa0 / kappa_n).ln()
            - 0.5 * m * (2.0 * std::f64::consts::PI).ln()
    }
}

/// `log P(a, b)`: log marginal likelihood of `ts[a..b]` as one segment.
pub fn seg_marginal(
    ts: &TimeSeries,
    a: usize,
    b: usize,
    prior: &NigPrior,
) -> Result<f64, BayesError> {
    if a >= b || b > ts.len() {
        return Err(BayesError::InvalidParameter(format!(
            "segment {a}..{b} outside series of length {}",
            ts.len()
        )));
    }
    Ok(SegmentMarginal::new(ts.values(), *prior)?.log_marginal(a, b))
}

/// Packed upper-triangular table of `log P(a, b)`, `0 <= a < b <= n`.
#[derive(Debug, Clone)]
pub struct LogPTable {
    n: usize,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

impl LogPTable {
    pub fn new(marginal: &SegmentMarginal, n: usize) -> Self {
        let mut offsets = Vec::with_capacity(n + 1);
        let mut total = 0;
        for a in 0..=n {
            offsets.push(total);
            total += n - a;
        }
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|a| (a + 1..=n).map(|b| marginal.log_marginal(a, b)).collect())
            .collect();
        let mut data = Vec::with_capacity(total);
        for r in rows {
            data.extend(r);
        }
        Self { n, offsets, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        debug_assert!(a < b && b <= self.n);
        self.data[self.offsets[a] + (b - a - 1)]
    }
}

/// Parameters of the Bayesian detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesConfig {
    #[serde(default)]
    pub prior: DistancePrior,
    #[serde(default)]
    pub nig: NigPrior,
    /// Largest number of change points considered; defaults to
    /// `min(30, n / 10)`.
    #[serde(default)]
    pub k_max: Option<usize>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_distance")]
    pub distance: usize,
    #[serde(default = "default_paa_window")]
    pub paa_window: usize,
    /// Z-score the (reduced) series before inference.
    #[serde(default = "default_true")]
    pub normalise: bool,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}
fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}
fn default_distance() -> usize {
    DEFAULT_DISTANCE
}
fn default_paa_window() -> usize {
    1
}
fn default_true() -> bool {
    true
}

impl Default for BayesConfig {
    fn default() -> Self {
        Self {
            prior: DistancePrior::Flat,
            nig: NigPrior::default(),
            k_max: None,
            epsilon: DEFAULT_EPSILON,
            threshold: DEFAULT_THRESHOLD,
            distance: DEFAULT_DISTANCE,
            paa_window: 1,
            normalise: true,
        }
    }
}

impl BayesConfig {
    pub fn k_max_for(&self, n: usize) -> usize {
        self.k_max
            .unwrap_or_else(|| DEFAULT_K_MAX_CAP.min(n / 10))
            .clamp(1, n.saturating_sub(1).max(1))
    }
}

/// Output of [`cp_posterior`].
#[derive(Debug, Clone)]
pub struct PosteriorResult {
    n: usize,
    k_max: usize,
    epsilon: f64,
    prior: DistancePrior,
    log_p: LogPTable,
    log_gap: Vec<f64>,
    /// `log_tail[m][i] = log Q_m(i)`, `m = 0..k_max`, `i = 0..=n`.
    log_tail: Vec<Vec<f64>>,
    /// `log_forward[j-1][s]`: log-likelihood of `y[..s]` jointly with the
    /// prior of `j` change points, the last at `s`.
    log_forward: Vec<Vec<f64>>,
    /// `log_evidence[k-1] = log Q^(k)(1)`.
    log_evidence: Vec<f64>,
    /// Per-position change point probability averaged over `k`.
    pub cp_prob: Vec<f64>,
}

fn check_epsilon(epsilon: f64) -> Result<Option<f64>, BayesError> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(BayesError::InvalidParameter(format!(
            "epsilon {epsilon} outside [0, 1)"
        )));
    }
    Ok((epsilon > 0.0).then(|| epsilon.ln()))
}

fn gap_table(prior: &DistancePrior, n: usize) -> Vec<f64> {
    (0..=n).map(|d| prior.log_pmf(d, n)).collect()
}

/// Backward pass: `Q_m` for `m = 0..count`.
fn tail_recursion(
    log_p: &LogPTable,
    log_gap: &[f64],
    count: usize,
    log_eps: Option<f64>,
) -> Vec<Vec<f64>> {
    let n = log_p.n();
    let mut tails: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut q0 = vec![f64::NEG_INFINITY; n + 1];
    for (i, q) in q0.iter_mut().enumerate().take(n).skip(1) {
        *q = log_p.get(i, n);
    }
    tails.push(q0);
    for m in 1..count {
        let prev = &tails[m - 1];
        let next: Vec<f64> = (0..=n)
            .into_par_iter()
            .map(|i| {
                if i == 0 || i + m >= n {
                    return f64::NEG_INFINITY;
                }
                truncated_log_sum(
                    (i + 1..=n - m).map(|s| log_p.get(i, s) + log_gap[s - i] + prev[s]),
                    log_eps,
                )
            })
            .collect();
        tails.push(next);
    }
    tails
}

/// Forward pass: `F_j(s)` for `j = 1..=count`.
fn forward_recursion(
    log_p: &LogPTable,
    log_gap: &[f64],
    count: usize,
    log_eps: Option<f64>,
) -> Vec<Vec<f64>> {
    let n = log_p.n();
    let mut fwd: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut f1 = vec![f64::NEG_INFINITY; n + 1];
    for (s, f) in f1.iter_mut().enumerate().take(n).skip(1) {
        *f = log_p.get(0, s) + log_gap[s];
    }
    fwd.push(f1);
    for j in 2..=count {
        let prev = &fwd[j - 2];
        let next: Vec<f64> = (0..=n)
            .into_par_iter()
            .map(|s| {
                if s < j || s >= n {
                    return f64::NEG_INFINITY;
                }
                // most recent previous change point first
                truncated_log_sum(
                    (j - 1..s)
                        .rev()
                        .map(|r| prev[r] + log_p.get(r, s) + log_gap[s - r]),
                    log_eps,
                )
            })
            .collect();
        fwd.push(next);
    }
    fwd
}

/// Per-`k` backward arrays as written in the usual `Q_j^(k)` notation.
#[derive(Debug, Clone)]
pub struct QArrays {
    /// `log_q[j-1][i] = log Q_j^(k)(i)` for `j = 1..=k`: the likelihood of
    /// `y[i..]` given that the `j`-th change point is at `i`.
    pub log_q: Vec<Vec<f64>>,
    /// `log Q^(k)(1)`, the log-likelihood of the whole series given `k`
    /// change points (including the position prior).
    pub log_evidence: f64,
}

/// Backward recursion for a fixed number `k` of change points.
pub fn q_recursion(
    ts: &TimeSeries,
    prior: &DistancePrior,
    nig: &NigPrior,
    k: usize,
    epsilon: f64,
) -> Result<QArrays, BayesError> {
    prior.validate()?;
    let log_eps = check_epsilon(epsilon)?;
    let n = ts.len();
    if k == 0 || k >= n {
        return Err(BayesError::InvalidParameter(format!(
            "k = {k} outside 1..{n}"
        )));
    }
    let marginal = SegmentMarginal::new(ts.values(), *nig)?;
    let log_p = LogPTable::new(&marginal, n);
    let log_gap = gap_table(prior, n);
    let tails = tail_recursion(&log_p, &log_gap, k, log_eps);
    let log_evidence = truncated_log_sum(
        (1..=n - k).map(|s| log_p.get(0, s) + log_gap[s] + tails[k - 1][s]),
        log_eps,
    );
    let log_q = (1..=k).map(|j| tails[k - j].clone()).collect();
    Ok(QArrays {
        log_q,
        log_evidence,
    })
}

/// Change point posterior for `ts` with `k = 1..=k_max` change points,
/// averaged over `k` with a uniform prior on `k`.
pub fn cp_posterior(ts: &TimeSeries, cfg: &BayesConfig) -> Result<PosteriorResult, BayesError> {
    cp_posterior_values(ts.values(), cfg)
}

pub fn cp_posterior_values(
    values: &[f64],
    cfg: &BayesConfig,
) -> Result<PosteriorResult, BayesError> {
    cfg.prior.validate()?;
    let log_eps = check_epsilon(cfg.epsilon)?;
    let n = values.len();
    if n < 2 {
        return Err(BayesError::InvalidParameter(format!(
            "series of length {n}"
        )));
    }
    if let Some(k) = cfg.k_max {
        if k == 0 || k >= n {
            return Err(BayesError::InvalidParameter(format!(
                "k_max = {k} outside 1..{n}"
            )));
        }
    }
    let k_max = cfg.k_max_for(n);
    let marginal = SegmentMarginal::new(values, cfg.nig)?;
    let log_p = LogPTable::new(&marginal, n);
    let log_gap = gap_table(&cfg.prior, n);
    let log_tail = tail_recursion(&log_p, &log_gap, k_max, log_eps);
    let log_forward = forward_recursion(&log_p, &log_gap, k_max, log_eps);

    let log_evidence: Vec<f64> = (1..=k_max)
        .map(|k| {
            truncated_log_sum(
                (1..=n - k).map(|s| log_forward[0][s] + log_tail[k - 1][s]),
                log_eps,
            )
        })
        .collect();
    let log_z = log_evidence
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| log_add_exp(a, b));

    // cumulative[m][s] = log sum_{m' <= m} Q_m'(s)
    let mut cumulative = log_tail.clone();
    for m in 1..k_max {
        for s in 0..=n {
            cumulative[m][s] = log_add_exp(cumulative[m - 1][s], log_tail[m][s]);
        }
    }
    let cp_prob = (0..n)
        .map(|s| {
            if s == 0 {
                return 0.0;
            }
            let lp = (1..=k_max)
                .map(|j| log_forward[j - 1][s] + cumulative[k_max - j][s])
                .fold(f64::NEG_INFINITY, log_add_exp);
            (lp - log_z).exp().clamp(0.0, 1.0)
        })
        .collect();

    Ok(PosteriorResult {
        n,
        k_max,
        epsilon: cfg.epsilon,
        prior: cfg.prior,
        log_p,
        log_gap,
        log_tail,
        log_forward,
        log_evidence,
        cp_prob,
    })
}

impl PosteriorResult {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn prior(&self) -> &DistancePrior {
        &self.prior
    }

    pub fn log_p(&self) -> &LogPTable {
        &self.log_p
    }

    /// `log Q_j^(k)(i)`; `j = k` is the last change point.
    pub fn log_q(&self, k: usize, j: usize, i: usize) -> f64 {
        assert!(1 <= j && j <= k && k <= self.k_max);
        self.log_tail[k - j][i]
    }

    /// `log Q^(k)(1)` for `k = 1..=k_max`.
    pub fn log_evidence(&self, k: usize) -> f64 {
        self.log_evidence[k - 1]
    }

    /// Posterior of the first change point given `k`, indexed by position.
    pub fn first_change_posterior(&self, k: usize) -> Vec<f64> {
        assert!(1 <= k && k <= self.k_max);
        let ev = self.log_evidence(k);
        (0..self.n)
            .map(|s| {
                if s == 0 || s + k > self.n {
                    return 0.0;
                }
                (self.log_p.get(0, s) + self.log_gap[s] + self.log_tail[k - 1][s] - ev).exp()
            })
            .collect()
    }

    /// Posterior of the `j`-th change point (`j >= 2`) given that the
    /// previous one sits at `prev` and there are `k` in total.
    pub fn next_change_posterior(&self, k: usize, j: usize, prev: usize) -> Vec<f64> {
        assert!(2 <= j && j <= k && k <= self.k_max);
        let denom = self.log_tail[k - j + 1][prev];
        (0..self.n)
            .map(|s| {
                if s <= prev || s + (k - j) >= self.n || denom == f64::NEG_INFINITY {
                    return 0.0;
                }
                (self.log_p.get(prev, s) + self.log_gap[s - prev] + self.log_tail[k - j][s] - denom)
                    .exp()
            })
            .collect()
    }

    /// Log posterior of a complete configuration given `k = points.len()`,
    /// as the chain product of the conditional posteriors.
    pub fn log_joint_posterior(&self, points: &[usize]) -> f64 {
        let k = points.len();
        if k == 0 || k > self.k_max || points.windows(2).any(|w| w[0] >= w[1]) {
            return f64::NEG_INFINITY;
        }
        if points[0] == 0 || points[k - 1] >= self.n {
            return f64::NEG_INFINITY;
        }
        let mut total = self.log_p.get(0, points[0])
            + self.log_gap[points[0]]
            + self.log_tail[k - 1][points[0]]
            - self.log_evidence(k);
        for j in 2..=k {
            let (prev, s) = (points[j - 2], points[j - 1]);
            total += self.log_p.get(prev, s) + self.log_gap[s - prev] + self.log_tail[k - j][s]
                - self.log_tail[k - j + 1][prev];
        }
        total
    }

    /// Probability that position `s` is a change point given exactly `k`.
    pub fn change_probability_given_k(&self, k: usize) -> Vec<f64> {
        assert!(1 <= k && k <= self.k_max);
        let ev = self.log_evidence(k);
        (0..self.n)
            .map(|s| {
                if s == 0 {
                    return 0.0;
                }
                let lp = (1..=k)
                    .map(|j| self.log_forward[j - 1][s] + self.log_tail[k - j][s])
                    .fold(f64::NEG_INFINITY, log_add_exp);
                (lp - ev).exp().clamp(0.0, 1.0)
            })
            .collect()
    }
}

/// Peaks of a probability curve: strict local maxima above `threshold`, at
/// least `distance` apart.
pub fn detect_peaks(
    cp_prob: &[f64],
    threshold: f64,
    distance: usize,
) -> Result<ChangePointSet, BayesError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(BayesError::InvalidParameter(format!(
            "threshold {threshold} outside [0, 1]"
        )));
    }
    if distance == 0 {
        return Err(BayesError::InvalidParameter("distance must be >= 1".into()));
    }
    let peaks = find_peaks(cp_prob, threshold, distance);
    Ok(ChangePointSet::new(peaks, cp_prob.len())?)
}

/// Result of combining the posterior with a user belief curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedBelief {
    pub cp_prob: Vec<f64>,
    /// Positions where posterior and belief were certain and contradictory
    /// (one 0, the other 1); the fused value there is 0.
    pub degenerate: Vec<usize>,
}

/// Log-odds fusion `p u / (p u + (1-p)(1-u))`. A belief of 0.5 leaves the
/// posterior unchanged.
pub fn fuse_user_belief(cp_prob: &[f64], user_belief: &[f64]) -> Result<FusedBelief, BayesError> {
    if cp_prob.len() != user_belief.len() {
        return Err(BayesError::LengthMismatch {
            left: cp_prob.len(),
            right: user_belief.len(),
        });
    }
    if let Some(bad) = cp_prob
        .iter()
        .chain(user_belief)
        .find(|v| !(0.0..=1.0).contains(*v))
    {
        return Err(BayesError::InvalidParameter(format!(
            "probability {bad} outside [0, 1]"
        )));
    }
    let mut degenerate = Vec::new();
    let fused = cp_prob
        .iter()
        .zip(user_belief)
        .enumerate()
        .map(|(i, (&p, &u))| {
            let num = p * u;
            let den = num + (1.0 - p) * (1.0 - u);
            if den == 0.0 {
                degenerate.push(i);
                0.0
            } else {
                (num / den).clamp(0.0, 1.0)
            }
        })
        .collect();
    Ok(FusedBelief {
        cp_prob: fused,
        degenerate,
    })
}

/// Bayesian detection result with the curve it was read from.
#[derive(Debug, Clone)]
pub struct BayesDetection {
    pub change_points: ChangePointSet,
    /// Change point probability on the reduced grid.
    pub cp_prob: Vec<f64>,
    pub paa_window: usize,
}

/// Maps a change point on the reduced grid back to the original one: a
/// change at reduced index `t` is the boundary between blocks `t - 1` and
/// `t`, i.e. original sample `t * window`.
pub fn map_to_original(
    points: &[usize],
    window: usize,
    n: usize,
) -> Result<ChangePointSet, BayesError> {
    let mapped = points
        .iter()
        .map(|&p| (p * window).clamp(1, n.saturating_sub(1)))
        .collect();
    Ok(ChangePointSet::from_unsorted(mapped, n)?)
}

/// PAA reduction, optional normalisation, posterior and peak extraction.
pub fn bayes_detect_full(ts: &TimeSeries, cfg: &BayesConfig) -> Result<BayesDetection, BayesError> {
    let reduced = paa(ts, cfg.paa_window)?;
    let prepared = if cfg.normalise {
        match normalise(&reduced) {
            Ok(z) => z,
            Err(SeriesError::ZeroVariance) => {
                return Ok(BayesDetection {
                    change_points: ChangePointSet::empty(ts.len()),
                    cp_prob: vec![0.0; reduced.len()],
                    paa_window: cfg.paa_window,
                })
            }
            Err(e) => return Err(e.into()),
        }
    } else {
        reduced
    };
    let posterior = cp_posterior(&prepared, cfg)?;
    let peaks = detect_peaks(&posterior.cp_prob, cfg.threshold, cfg.distance)?;
    let change_points = map_to_original(peaks.intermediate(), cfg.paa_window, ts.len())?;
    Ok(BayesDetection {
        change_points,
        cp_prob: posterior.cp_prob,
        paa_window: cfg.paa_window,
    })
}

pub fn bayes_detect(ts: &TimeSeries, cfg: &BayesConfig) -> Result<ChangePointSet, BayesError> {
    bayes_detect_full(ts, cfg).map(|d| d.change_points)
}

/// Writes `index,probability` rows.
pub fn write_cp_prob_csv<W: Write>(cp_prob: &[f64], writer: W) -> Result<(), SeriesError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["index", "probability"])?;
    for (i, p) in cp_prob.iter().enumerate() {
        wtr.write_record([i.to_string(), p.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}
