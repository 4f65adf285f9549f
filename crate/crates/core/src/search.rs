// SPDX-License-Identifier: MIT OR Apache-2.0

//! Search strategies for the penalised segmentation problem
//! `min_T sum_j c(segment_j) + penalty * |T|`.
//!
//! - [`pelt`]: exact optimal partitioning with pruning.
//! - [`win`]: sliding-window discrepancy peaks (approximate).
//! - [`dp_oracle`]: unpruned optimal partitioning, quadratic in `n`, used to
//!   check [`pelt`].
//!
//! Both exact searches break ties towards the smaller last change point, so
//! they return identical sets, not merely identical objectives.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costs::{CostError, CostModel, SegmentCost};
use crate::series::TimeSeries;

/// Largest series [`dp_oracle`] accepts.
pub const DP_ORACLE_MAX_LEN: usize = 2000;
pub const DEFAULT_HALF_WIDTH: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SearchError {
    #[error("series of length {n} is too short, need at least {required}")]
    SeriesTooShort { n: usize, required: usize },
    #[error("series of length {n} exceeds the oracle limit of {max}")]
    SeriesTooLong { n: usize, max: usize },
    #[error("penalty must be finite and >= 0, got {0}")]
    InvalidPenalty(f64),
    #[error("half width {half_width} must be at least the minimum segment size {min_size}")]
    InvalidHalfWidth { half_width: usize, min_size: usize },
    #[error("invalid change points: {0}")]
    InvalidChangePoints(String),
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// Sorted intermediate change points `0 < t_1 < ... < t_K < n`.
///
/// The final point `n` is implicit. Segment `j` covers the half-open range
/// `t_j..t_{j+1}` with `t_0 = 0` and `t_{K+1} = n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawChangePoints", into = "RawChangePoints")]
pub struct ChangePointSet {
    intermediate: Vec<usize>,
    n: usize,
}

#[derive(Serialize, Deserialize)]
struct RawChangePoints {
    n: usize,
    change_points: Vec<usize>,
}

impl TryFrom<RawChangePoints> for ChangePointSet {
    type Error = SearchError;

    fn try_from(raw: RawChangePoints) -> Result<Self, Self::Error> {
        ChangePointSet::new(raw.change_points, raw.n)
    }
}

impl From<ChangePointSet> for RawChangePoints {
    fn from(c: ChangePointSet) -> Self {
        RawChangePoints {
            n: c.n,
            change_points: c.intermediate,
        }
    }
}

impl ChangePointSet {
    pub fn new(intermediate: Vec<usize>, n: usize) -> Result<Self, SearchError> {
        if let Some(w) = intermediate.windows(2).find(|w| w[0] >= w[1]) {
            return Err(SearchError::InvalidChangePoints(format!(
                "not strictly increasing: {} then {}",
                w[0], w[1]
            )));
        }
        if let Some(&bad) = intermediate.iter().find(|&&c| c == 0 || c >= n) {
            return Err(SearchError::InvalidChangePoints(format!(
                "{bad} outside (0, {n})"
            )));
        }
        Ok(Self { intermediate, n })
    }

    /// Sorts and deduplicates before validating.
    pub fn from_unsorted(mut points: Vec<usize>, n: usize) -> Result<Self, SearchError> {
        points.sort_unstable();
        points.dedup();
        Self::new(points, n)
    }

    pub fn empty(n: usize) -> Self {
        Self {
            intermediate: Vec::new(),
            n,
        }
    }

    pub fn intermediate(&self) -> &[usize] {
        &self.intermediate
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of change points counting the final artificial one.
    pub fn k(&self) -> usize {
        self.intermediate.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        self.intermediate.is_empty()
    }

    /// `0, t_1, ..., t_K, n`.
    pub fn boundaries(&self) -> Vec<usize> {
        let mut b = Vec::with_capacity(self.intermediate.len() + 2);
        b.push(0);
        b.extend_from_slice(&self.intermediate);
        b.push(self.n);
        b
    }

    /// Half-open `(start, end)` ranges of every segment.
    pub fn segments(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let starts = std::iter::once(0).chain(self.intermediate.iter().copied());
        let ends = self
            .intermediate
            .iter()
            .copied()
            .chain(std::iter::once(self.n));
        starts.zip(ends)
    }

    /// Shortest segment length.
    pub fn min_segment_len(&self) -> usize {
        self.segments().map(|(a, b)| b - a).min().unwrap_or(self.n)
    }

    pub fn contains(&self, point: usize) -> bool {
        self.intermediate.binary_search(&point).is_ok()
    }

    /// Adds a change point, returning false when it was already present.
    pub fn insert(&mut self, point: usize) -> Result<bool, SearchError> {
        if point == 0 || point >= self.n {
            return Err(SearchError::InvalidChangePoints(format!(
                "{point} outside (0, {})",
                self.n
            )));
        }
        match self.intermediate.binary_search(&point) {
            Ok(_) => Ok(false),
            Err(pos) => {
                self.intermediate.insert(pos, point);
                Ok(true)
            }
        }
    }

    /// Removes a change point, returning false when it was absent.
    pub fn remove(&mut self, point: usize) -> bool {
        match self.intermediate.binary_search(&point) {
            Ok(pos) => {
                self.intermediate.remove(pos);
                true
            }
            Err(_) => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMethod {
    Pelt,
    Win,
}

impl fmt::Display for SearchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SearchMethod::Pelt => "pelt",
            SearchMethod::Win => "win",
        })
    }
}

impl FromStr for SearchMethod {
    type Err = SearchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pelt" => Ok(SearchMethod::Pelt),
            "win" | "window" => Ok(SearchMethod::Win),
            _ => Err(SearchError::InvalidChangePoints(format!(
                "unknown search method `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub penalty: f64,
    /// Half window width `w` for [`win`].
    #[serde(default = "default_half_width")]
    pub half_width: usize,
}

fn default_half_width() -> usize {
    DEFAULT_HALF_WIDTH
}

impl SearchConfig {
    pub fn new(penalty: f64) -> Self {
        Self {
            penalty,
            half_width: DEFAULT_HALF_WIDTH,
        }
    }

    #[must_use]
    pub fn with_half_width(mut self, half_width: usize) -> Self {
        self.half_width = half_width;
        self
    }
}

/// Optimal segmentation and its penalised objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub change_points: ChangePointSet,
    /// Sum of segment costs plus penalty times the number of intermediate
    /// change points.
    pub objective: f64,
}

fn check_penalty(penalty: f64) -> Result<(), SearchError> {
    if penalty.is_finite() && penalty >= 0.0 {
        Ok(())
    } else {
        Err(SearchError::InvalidPenalty(penalty))
    }
}

fn backtrack(last: &[usize], n: usize) -> Vec<usize> {
    let mut points = Vec::new();
    let mut t = n;
    while t > 0 {
        let s = last[t];
        if s > 0 {
            points.push(s);
        }
        t = s;
    }
    points.reverse();
    points
}

/// Exact penalised segmentation with PELT pruning.
pub fn pelt(
    ts: &TimeSeries,
    model: &CostModel,
    cfg: &SearchConfig,
) -> Result<Segmentation, SearchError> {
    pelt_values(ts.values(), model, cfg.penalty)
}

pub fn pelt_values(
    values: &[f64],
    model: &CostModel,
    penalty: f64,
) -> Result<Segmentation, SearchError> {
    check_penalty(penalty)?;
    let cost = SegmentCost::new(*model, values)?;
    let n = values.len();
    let min_size = cost.min_size();
    if n < 2 * min_size {
        return Err(SearchError::SeriesTooShort {
            n,
            required: 2 * min_size,
        });
    }

    // best[t]: optimal penalised cost of values[..t] with the convention
    // best[0] = -penalty, so a segmentation with K intermediate points scores
    // sum(costs) + K * penalty.
    let mut best = vec![f64::INFINITY; n + 1];
    let mut last = vec![0usize; n + 1];
    best[0] = -penalty;

    // Candidates with the time at which they were found dominated. A
    // dominated candidate stays usable until `min_size` steps later because
    // the dominating point cannot close a segment before then.
    let mut candidates: Vec<(usize, Option<usize>)> = vec![(0, None)];
    let mut scored: Vec<f64> = Vec::new();

    for t in min_size..=n {
        scored.clear();
        let mut best_t = f64::INFINITY;
        let mut arg = 0;
        for &(s, _) in &candidates {
            if t - s < min_size {
                scored.push(f64::NAN);
                continue;
            }
            let v = best[s] + cost.cost(s, t) + penalty;
            scored.push(v);
            // candidates are kept in increasing order, so strict < keeps the
            // smallest index among ties
            if v < best_t {
                best_t = v;
                arg = s;
            }
        }
        best[t] = best_t;
        last[t] = arg;

        let slack = 1e-9 * (1.0 + best_t.abs());
        let mut kept = Vec::with_capacity(candidates.len() + 1);
        for (&(s, dominated_at), &v) in candidates.iter().zip(&scored) {
            let dominated_at = match dominated_at {
                Some(at) => Some(at),
                // v - penalty = best[s] + c(s, t)
                None if !v.is_nan() && v - penalty > best_t + slack => Some(t),
                None => None,
            };
            match dominated_at {
                Some(at) if t + 1 >= at + min_size => {}
                _ => kept.push((s, dominated_at)),
            }
        }
        if t + min_size <= n && best_t.is_finite() {
            kept.push((t, None));
        }
        candidates = kept;
    }

    let change_points = ChangePointSet::new(backtrack(&last, n), n)?;
    Ok(Segmentation {
        change_points,
        objective: best[n],
    })
}

/// Unpruned optimal partitioning. Quadratic in `n`; meant as a reference for
/// [`pelt`].
pub fn dp_oracle(
    ts: &TimeSeries,
    model: &CostModel,
    penalty: f64,
) -> Result<Segmentation, SearchError> {
    dp_oracle_values(ts.values(), model, penalty)
}

pub fn dp_oracle_values(
    values: &[f64],
    model: &CostModel,
    penalty: f64,
) -> Result<Segmentation, SearchError> {
    check_penalty(penalty)?;
    let n = values.len();
    if n > DP_ORACLE_MAX_LEN {
        return Err(SearchError::SeriesTooLong {
            n,
            max: DP_ORACLE_MAX_LEN,
        });
    }
    let cost = SegmentCost::new(*model, values)?;
    let min_size = cost.min_size();
    if n < min_size {
        return Err(SearchError::SeriesTooShort {
            n,
            required: min_size,
        });
    }
    let mut best = vec![f64::INFINITY; n + 1];
    let mut last = vec![0usize; n + 1];
    best[0] = -penalty;
    for t in min_size..=n {
        for s in std::iter::once(0).chain(min_size..=t - min_size) {
            if t - s < min_size || !best[s].is_finite() {
                continue;
            }
            let v = best[s] + cost.cost(s, t) + penalty;
            if v < best[t] {
                best[t] = v;
                last[t] = s;
            }
        }
    }
    let change_points = ChangePointSet::new(backtrack(&last, n), n)?;
    Ok(Segmentation {
        change_points,
        objective: best[n],
    })
}

/// Discrepancy `c(t-w..t+w) - c(t-w..t) - c(t..t+w)` for `t = w..=n-w`.
/// Entry `i` of the result belongs to `t = w + i`.
pub fn discrepancy(
    values: &[f64],
    model: &CostModel,
    half_width: usize,
) -> Result<Vec<f64>, SearchError> {
    let cost = SegmentCost::new(*model, values)?;
    let n = values.len();
    let w = half_width;
    if w < cost.min_size() {
        return Err(SearchError::InvalidHalfWidth {
            half_width: w,
            min_size: cost.min_size(),
        });
    }
    if n < 2 * w {
        return Err(SearchError::SeriesTooShort { n, required: 2 * w });
    }
    Ok((w..=n - w)
        .map(|t| cost.cost(t - w, t + w) - cost.cost(t - w, t) - cost.cost(t, t + w))
        .collect())
}

/// Sliding-window search: peaks of the discrepancy curve above
/// `cfg.penalty`, at least `cfg.half_width` apart.
pub fn win(
    ts: &TimeSeries,
    model: &CostModel,
    cfg: &SearchConfig,
) -> Result<ChangePointSet, SearchError> {
    win_values(ts.values(), model, cfg)
}

pub fn win_values(
    values: &[f64],
    model: &CostModel,
    cfg: &SearchConfig,
) -> Result<ChangePointSet, SearchError> {
    check_penalty(cfg.penalty)?;
    let disc = discrepancy(values, model, cfg.half_width)?;
    let peaks = find_peaks(&disc, cfg.penalty, cfg.half_width);
    ChangePointSet::new(
        peaks.into_iter().map(|i| i + cfg.half_width).collect(),
        values.len(),
    )
}

/// Local maxima strictly above `threshold`, kept greedily from the tallest
/// down so that no two are closer than `distance`. Flat peaks resolve to
/// their middle sample; the first and last samples are never peaks.
/// Returned indices are sorted.
pub fn find_peaks(values: &[f64], threshold: f64, distance: usize) -> Vec<usize> {
    let n = values.len();
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if values[i] > values[i - 1] {
            let mut ahead = i + 1;
            while ahead + 1 < n && values[ahead] == values[i] {
                ahead += 1;
            }
            if values[ahead] < values[i] {
                let mid = (i + ahead - 1) / 2;
                if values[mid] > threshold {
                    peaks.push(mid);
                }
                i = ahead;
                continue;
            }
        }
        i += 1;
    }
    if distance > 1 && peaks.len() > 1 {
        let mut order: Vec<usize> = (0..peaks.len()).collect();
        order.sort_by(|&x, &y| {
            values[peaks[y]]
                .total_cmp(&values[peaks[x]])
                .then(peaks[x].cmp(&peaks[y]))
        });
        let mut keep = vec![true; peaks.len()];
        for &p in &order {
            if !keep[p] {
                continue;
            }
            let centre = peaks[p];
            for (q, k) in keep.iter_mut().enumerate() {
                if q != p && *k && peaks[q].abs_diff(centre) < distance {
                    *k = false;
                }
            }
        }
        peaks = peaks
            .into_iter()
            .zip(keep)
            .filter_map(|(p, k)| k.then_some(p))
            .collect();
    }
    peaks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::CostKind;

    fn step(n_low: usize, n_high: usize, high: f64) -> Vec<f64> {
        let mut v = vec![0.0; n_low];
        v.extend(std::iter::repeat_n(high, n_high));
        v
    }

    #[test]
    fn change_point_set_validation() {
        assert!(ChangePointSet::new(vec![3, 2], 10).is_err());
        assert!(ChangePointSet::new(vec![0], 10).is_err());
        assert!(ChangePointSet::new(vec![10], 10).is_err());
        let c = ChangePointSet::new(vec![3, 7], 10).unwrap();
        assert_eq!(c.k(), 3);
        assert_eq!(
            c.segments().collect::<Vec<_>>(),
            vec![(0, 3), (3, 7), (7, 10)]
        );
        assert_eq!(c.boundaries(), vec![0, 3, 7, 10]);
    }

    #[test]
    fn serde_shape() {
        let c = ChangePointSet::new(vec![3, 7], 10).unwrap();
        let j = serde_json::to_string(&c).unwrap();
        assert_eq!(j, r#"{"n":10,"change_points":[3,7]}"#);
        assert!(
            serde_json::from_str::<ChangePointSet>(r#"{"n":10,"change_points":[7,3]}"#).is_err()
        );
    }

    #[test]
    fn pelt_finds_noiseless_step() {
        let v = step(100, 100, 10.0);
        let seg = pelt_values(&v, &CostModel::new(CostKind::L2), 1.0).unwrap();
        assert_eq!(seg.change_points.intermediate(), &[100]);
        assert!((seg.objective - 1.0).abs() < 1e-9);
    }

    #[test]
    fn huge_penalty_gives_no_change() {
        let v: Vec<f64> = (0..200).map(|i| ((i * 37) % 11) as f64).collect();
        let seg = pelt_values(&v, &CostModel::new(CostKind::L2), 1e12).unwrap();
        assert!(seg.change_points.is_empty());
    }

    #[test]
    fn pelt_too_short() {
        let err = pelt_values(&[1.0, 2.0, 3.0], &CostModel::new(CostKind::L2), 1.0).unwrap_err();
        assert!(matches!(
            err,
            SearchError::SeriesTooShort { n: 3, required: 4 }
        ));
    }

    #[test]
    fn oracle_two_candidates() {
        let v = [0.0, 0.1, 5.0, 5.2];
        let seg = dp_oracle_values(&v, &CostModel::new(CostKind::L2), 0.0).unwrap();
        assert_eq!(seg.change_points.intermediate(), &[2]);
        let v = [1.0; 4];
        let seg = dp_oracle_values(&v, &CostModel::new(CostKind::L2), 0.5).unwrap();
        assert!(seg.change_points.is_empty());
    }

    #[test]
    fn oracle_rejects_long_series() {
        let v = vec![0.0; DP_ORACLE_MAX_LEN + 1];
        assert!(matches!(
            dp_oracle_values(&v, &CostModel::new(CostKind::L2), 1.0),
            Err(SearchError::SeriesTooLong { .. })
        ));
    }

    #[test]
    fn win_finds_noiseless_step() {
        let v = step(100, 100, 1.0);
        let cfg = SearchConfig::new(1.0).with_half_width(50);
        let cps = win_values(&v, &CostModel::new(CostKind::L2), &cfg).unwrap();
        assert_eq!(cps.intermediate(), &[100]);
    }

    #[test]
    fn peak_examples() {
        let mut v = vec![0.0; 100];
        v[50] = 0.9;
        assert_eq!(find_peaks(&v, 0.2, 10), vec![50]);

        let mut v = vec![0.0; 100];
        v[40] = 0.5;
        v[45] = 0.7;
        assert_eq!(find_peaks(&v, 0.2, 10), vec![45]);

        let v = vec![0.1; 30];
        assert!(find_peaks(&v, 0.2, 10).is_empty());

        let v = [0.0, 1.0, 1.0, 1.0, 0.0];
        assert_eq!(find_peaks(&v, 0.2, 1), vec![2]);
    }
}
