// SPDX-License-Identifier: MIT OR Apache-2.0

//! Equidistant univariate time series, CSV ingestion and the preprocessing
//! steps applied before detection (z-score normalisation, piecewise
//! aggregate approximation).

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::search::ChangePointSet;

/// Relative tolerance on the sampling step when checking equidistance.
pub const EQUIDISTANCE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("series needs at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("sample {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("column `{0}` not found in CSV header")]
    MissingColumn(String),
    #[error("timestamps are not equidistant/increasing at data row {row}")]
    NonEquidistantTimestamps { row: usize },
    #[error("no rows left after dropping {dropped} rows with missing values")]
    EmptyAfterCleaning { dropped: usize },
    #[error("cannot parse `{value}` in column `{column}` at data row {row}")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("index {index} out of range for series of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("PAA window must be at least 1")]
    InvalidWindow,
    #[error("bundle members disagree: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Uniformly sampled signal. Sample `i` sits at time `t0 + i * dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    values: Vec<f64>,
    dt: f64,
    t0: f64,
    label: String,
}

impl TimeSeries {
    /// Series starting at time 0 with the given step.
    pub fn new(values: Vec<f64>, dt: f64) -> Result<Self, SeriesError> {
        Self::with_time(values, 0.0, dt, String::new())
    }

    pub fn with_time(
        values: Vec<f64>,
        t0: f64,
        dt: f64,
        label: impl Into<String>,
    ) -> Result<Self, SeriesError> {
        if values.len() < 2 {
            return Err(SeriesError::TooShort(values.len()));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(SeriesError::InvalidStep(dt));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(SeriesError::NonFinite { index, value });
        }
        Ok(Self {
            values,
            dt,
            t0,
            label: label.into(),
        })
    }

    #[must_use]
    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// Always false: a valid series has at least two samples.
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn time_at(&self, index: usize) -> f64 {
        self.t0 + index as f64 * self.dt
    }
}

/// Several signals on a shared index grid, optionally with annotated change
/// points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalBundle {
    pub series: Vec<TimeSeries>,
    pub truth: Option<ChangePointSet>,
}

impl SignalBundle {
    pub fn new(
        series: Vec<TimeSeries>,
        truth: Option<ChangePointSet>,
    ) -> Result<Self, SeriesError> {
        let first = series
            .first()
            .ok_or_else(|| SeriesError::Mismatch("bundle has no series".into()))?;
        for s in &series[1..] {
            if s.len() != first.len() {
                return Err(SeriesError::Mismatch(format!(
                    "length {} vs {}",
                    s.len(),
                    first.len()
                )));
            }
            if (s.dt() - first.dt()).abs() > EQUIDISTANCE_TOLERANCE * first.dt() {
                return Err(SeriesError::Mismatch(format!(
                    "dt {} vs {}",
                    s.dt(),
                    first.dt()
                )));
            }
        }
        if let Some(t) = &truth {
            if t.n() != first.len() {
                return Err(SeriesError::Mismatch(format!(
                    "truth is for n={} but series has {} samples",
                    t.n(),
                    first.len()
                )));
            }
        }
        Ok(Self { series, truth })
    }

    pub fn single(series: TimeSeries, truth: Option<ChangePointSet>) -> Result<Self, SeriesError> {
        Self::new(vec![series], truth)
    }

    /// Common series length.
    pub fn len(&self) -> usize {
        self.series[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.series[0].dt()
    }
}

/// Result of reading a CSV file.
#[derive(Debug, Clone)]
pub struct CsvLoad {
    pub bundle: SignalBundle,
    /// Rows discarded because at least one requested value was missing.
    pub dropped_rows: usize,
}

/// Reads `value_columns` from the CSV at `path`. An empty `value_columns`
/// selects every column except the time column.
pub fn load_csv(
    path: impl AsRef<Path>,
    time_column: &str,
    value_columns: &[String],
) -> Result<CsvLoad, SeriesError> {
    read_csv(File::open(path)?, time_column, value_columns)
}

pub fn read_csv<R: Read>(
    reader: R,
    time_column: &str,
    value_columns: &[String],
) -> Result<CsvLoad, SeriesError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let position = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| SeriesError::MissingColumn(name.to_string()))
    };
    let time_idx = position(time_column)?;
    let columns: Vec<String> = if value_columns.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != time_idx)
            .map(|(_, h)| h.to_string())
            .collect()
    } else {
        value_columns.to_vec()
    };
    if columns.is_empty() {
        return Err(SeriesError::MissingColumn("<any value column>".into()));
    }
    let value_idx = columns
        .iter()
        .map(|c| position(c))
        .collect::<Result<Vec<_>, _>>()?;

    let mut times = Vec::new();
    let mut rows: Vec<Option<Vec<f64>>> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let raw_time = record.get(time_idx).unwrap_or("");
        let time = parse_time(raw_time).ok_or_else(|| SeriesError::Parse {
            row,
            column: time_column.to_string(),
            value: raw_time.to_string(),
        })?;
        times.push(time);
        let mut values = Vec::with_capacity(value_idx.len());
        let mut complete = true;
        for (&idx, name) in value_idx.iter().zip(&columns) {
            let raw = record.get(idx).unwrap_or("");
            match parse_value(raw) {
                Ok(Some(v)) => values.push(v),
                Ok(None) => complete = false,
                Err(()) => {
                    return Err(SeriesError::Parse {
                        row,
                        column: name.clone(),
                        value: raw.to_string(),
                    })
                }
            }
        }
        rows.push(complete.then_some(values));
    }

    check_equidistant(&times)?;
    let dropped = rows.iter().filter(|r| r.is_none()).count();
    let kept: Vec<(f64, Vec<f64>)> = times
        .iter()
        .zip(rows)
        .filter_map(|(&t, r)| r.map(|v| (t, v)))
        .collect();
    if kept.len() < 2 {
        return Err(SeriesError::EmptyAfterCleaning { dropped });
    }
    let dt = if times.len() >= 2 {
        times[1] - times[0]
    } else {
        1.0
    };
    let t0 = kept[0].0;
    let series = columns
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let values = kept.iter().map(|(_, v)| v[c]).collect();
            TimeSeries::with_time(values, t0, dt, name.clone())
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CsvLoad {
        bundle: SignalBundle::new(series, None)?,
        dropped_rows: dropped,
    })
}

fn check_equidistant(times: &[f64]) -> Result<(), SeriesError> {
    if times.len() < 2 {
        return Ok(());
    }
    let dt = times[1] - times[0];
    if dt.is_nan() || dt <= 0.0 {
        return Err(SeriesError::NonEquidistantTimestamps { row: 2 });
    }
    for (i, w) in times.windows(2).enumerate() {
        let step = w[1] - w[0];
        if step.is_nan() || step <= 0.0 || (step - dt).abs() > EQUIDISTANCE_TOLERANCE * dt {
            // data rows are 1-based; w[1] is row i + 2
            return Err(SeriesError::NonEquidistantTimestamps { row: i + 2 });
        }
    }
    Ok(())
}

fn parse_value(raw: &str) -> Result<Option<f64>, ()> {
    if raw.is_empty() || raw.eq_ignore_ascii_case("nan") || raw.eq_ignore_ascii_case("na") {
        return Ok(None);
    }
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        Ok(_) => Ok(None),
        Err(_) => Err(()),
    }
}

/// Plain seconds, RFC 3339, or a naive ISO-8601 datetime read as UTC.
fn parse_time(raw: &str) -> Option<f64> {
    if let Ok(v) = raw.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    let to_secs = |dt: chrono::DateTime<chrono::Utc>| {
        dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_nanos()) * 1e-9
    };
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(raw) {
        return Some(to_secs(dt.with_timezone(&chrono::Utc)));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(naive) = chrono::NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(to_secs(naive.and_utc()));
        }
    }
    None
}

/// Writes the bundle in the same dialect [`read_csv`] accepts, with the time
/// column as plain seconds. Values use the shortest round-trip formatting.
pub fn write_csv<W: Write>(
    bundle: &SignalBundle,
    writer: W,
    time_column: &str,
) -> Result<(), SeriesError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec![time_column.to_string()];
    header.extend(bundle.series.iter().enumerate().map(|(i, s)| {
        if s.label().is_empty() {
            format!("y{i}")
        } else {
            s.label().to_string()
        }
    }));
    wtr.write_record(&header)?;
    let first = &bundle.series[0];
    for i in 0..bundle.len() {
        let mut record = Vec::with_capacity(header.len());
        record.push(first.time_at(i).to_string());
        record.extend(bundle.series.iter().map(|s| s.values()[i].to_string()));
        wtr.write_record(&record)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_csv(
    bundle: &SignalBundle,
    path: impl AsRef<Path>,
    time_column: &str,
) -> Result<(), SeriesError> {
    write_csv(bundle, File::create(path)?, time_column)
}

/// Change point files hold one `index` column: the intermediate change
/// points followed by the series length as the final (artificial) point.
pub fn write_change_points<W: Write>(cps: &ChangePointSet, writer: W) -> Result<(), SeriesError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["index"])?;
    for &c in cps.intermediate() {
        wtr.write_record([c.to_string()])?;
    }
    wtr.write_record([cps.n().to_string()])?;
    wtr.flush()?;
    Ok(())
}

pub fn read_change_points<R: Read>(reader: R) -> Result<ChangePointSet, SeriesError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut points = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let raw = record.get(0).unwrap_or("");
        let v = raw.parse::<usize>().map_err(|_| SeriesError::Parse {
            row: i + 1,
            column: "index".into(),
            value: raw.to_string(),
        })?;
        points.push(v);
    }
    let n = points
        .pop()
        .ok_or(SeriesError::EmptyAfterCleaning { dropped: 0 })?;
    ChangePointSet::new(points, n).map_err(|e| SeriesError::Mismatch(e.to_string()))
}

pub fn load_change_points(path: impl AsRef<Path>) -> Result<ChangePointSet, SeriesError> {
    read_change_points(File::open(path)?)
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Z-score normalisation with the sample (n - 1) standard deviation.
pub fn normalise(ts: &TimeSeries) -> Result<TimeSeries, SeriesError> {
    let (mean, std) = mean_and_std(ts.values());
    let first = ts.values()[0];
    if ts.values().iter().all(|&v| v == first) || std.is_nan() || std <= 0.0 {
        return Err(SeriesError::ZeroVariance);
    }
    let values = ts.values().iter().map(|v| (v - mean) / std).collect();
    TimeSeries::with_time(values, ts.t0(), ts.dt(), ts.label())
}

/// Piecewise aggregate approximation: the mean of each block of `window`
/// samples. A ragged final block is averaged over the samples it has.
pub fn paa(ts: &TimeSeries, window: usize) -> Result<TimeSeries, SeriesError> {
    if window == 0 {
        return Err(SeriesError::InvalidWindow);
    }
    if window == 1 {
        return Ok(ts.clone());
    }
    let values: Vec<f64> = ts
        .values()
        .chunks(window)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    TimeSeries::with_time(values, ts.t0(), ts.dt() * window as f64, ts.label())
}

/// Discrete jump at sample `i`: `y[i+1] - y[i-1]`, falling back to a
/// one-sided difference at either end of the series.
pub fn jump(ts: &TimeSeries, i: usize) -> Result<f64, SeriesError> {
    let y = ts.values();
    let len = y.len();
    if i >= len {
        return Err(SeriesError::IndexOutOfRange { index: i, len });
    }
    Ok(if i == 0 {
        y[1] - y[0]
    } else if i == len - 1 {
        y[i] - y[i - 1]
    } else {
        y[i + 1] - y[i - 1]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(values: &[f64]) -> TimeSeries {
        TimeSeries::new(values.to_vec(), 1.0).unwrap()
    }

    #[test]
    fn rejects_short_and_non_finite() {
        assert!(matches!(
            TimeSeries::new(vec![1.0], 1.0),
            Err(SeriesError::TooShort(1))
        ));
        assert!(matches!(
            TimeSeries::new(vec![1.0, f64::NAN], 1.0),
            Err(SeriesError::NonFinite { index: 1, .. })
        ));
        assert!(TimeSeries::new(vec![1.0, 2.0], 0.0).is_err());
    }

    #[test]
    fn three_row_csv_is_read_verbatim() {
        let csv = "t,a\n0,1\n1,2\n2,3\n";
        let load = read_csv(csv.as_bytes(), "t", &["a".into()]).unwrap();
        let s = &load.bundle.series[0];
        assert_eq!(s.values(), &[1.0, 2.0, 3.0]);
        assert_eq!(s.dt(), 1.0);
        assert_eq!(s.label(), "a");
        assert_eq!(load.dropped_rows, 0);
    }

    #[test]
    fn uneven_timestamps_report_the_offending_row() {
        let csv = "t,a\n0,1\n1,2\n5,3\n";
        let err = read_csv(csv.as_bytes(), "t", &["a".into()]).unwrap_err();
        assert!(matches!(
            err,
            SeriesError::NonEquidistantTimestamps { row: 3 }
        ));
    }

    #[test]
    fn missing_column_is_reported() {
        let csv = "t,a\n0,1\n1,2\n";
        let err = read_csv(csv.as_bytes(), "t", &["b".into()]).unwrap_err();
        assert!(matches!(err, SeriesError::MissingColumn(c) if c == "b"));
    }

    #[test]
    fn missing_values_drop_rows() {
        let csv = "t,a,b\n0,1,2\n1,,3\n2,4,NaN\n3,5,6\n4,7,8\n";
        let load = read_csv(csv.as_bytes(), "t", &[]).unwrap();
        assert_eq!(load.dropped_rows, 2);
        assert_eq!(load.bundle.series.len(), 2);
        assert_eq!(load.bundle.series[0].values(), &[1.0, 5.0, 7.0]);
        assert_eq!(load.bundle.series[1].values(), &[2.0, 6.0, 8.0]);

        let csv = "t,a\n0,\n1,\n2,1\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), "t", &[]),
            Err(SeriesError::EmptyAfterCleaning { dropped: 2 })
        ));
    }

    #[test]
    fn iso_timestamps_are_accepted() {
        let csv = "time,x\n2020-01-01T00:00:00Z,1\n2020-01-01T00:00:02Z,2\n2020-01-01 00:00:04,3\n";
        let load = read_csv(csv.as_bytes(), "time", &[]).unwrap();
        assert_eq!(load.bundle.dt(), 2.0);
    }

    #[test]
    fn z_score_of_one_two_three() {
        let n = normalise(&series(&[1.0, 2.0, 3.0])).unwrap();
        for (a, b) in n.values().iter().zip([-1.0, 0.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(
            normalise(&series(&[5.0, 5.0, 5.0])),
            Err(SeriesError::ZeroVariance)
        ));
    }

    #[test]
    fn normalise_is_idempotent() {
        let x = series(&[0.3, -2.0, 7.5, 1.25, 4.0]);
        let once = normalise(&x).unwrap();
        let twice = normalise(&once).unwrap();
        for (a, b) in once.values().iter().zip(twice.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn paa_means() {
        let p = paa(&series(&[1.0, 1.0, 3.0, 3.0]), 2).unwrap();
        assert_eq!(p.values(), &[1.0, 3.0]);
        assert_eq!(p.dt(), 2.0);

        let x = series(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(paa(&x, 1).unwrap(), x);
        let p = paa(&x, 2).unwrap();
        assert_eq!(p.values(), &[1.5, 3.5, 5.0]);
        assert!(matches!(paa(&x, 0), Err(SeriesError::InvalidWindow)));
    }

    #[test]
    fn jump_examples() {
        let c = series(&[2.0; 6]);
        for i in 0..6 {
            assert_eq!(jump(&c, i).unwrap(), 0.0);
        }
        let step = series(&[0.0, 0.0, 10.0, 10.0]);
        assert_eq!(jump(&step, 2).unwrap(), 10.0);
        let scaled = series(&[0.0, 0.0, 30.0, 30.0]);
        assert_eq!(jump(&scaled, 2).unwrap(), 3.0 * jump(&step, 2).unwrap());
        assert!(matches!(
            jump(&step, 4),
            Err(SeriesError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn change_point_file_round_trip() {
        let cps = ChangePointSet::new(vec![3, 9], 20).unwrap();
        let mut buf = Vec::new();
        write_change_points(&cps, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "index\n3\n9\n20\n");
        assert_eq!(read_change_points(buf.as_slice()).unwrap(), cps);
    }
}
