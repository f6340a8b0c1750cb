//! Activation times and the error statistics reported on them.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Site {
    Septum,
    Vein,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Group {
    /// Septal points driving the applied current.
    Input,
    /// Earliest vein points, used for calibration.
    I,
    /// Latest vein points, held out.
    II,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::Input => "INPUT",
            Group::I => "I",
            Group::II => "II",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationSample {
    /// cm
    pub location: Vec3,
    /// ms
    pub tau: f64,
    pub site: Site,
    pub group: Group,
    /// Mesh node the sample was projected to.
    pub node: usize,
}

/// Streaming `argmax_n |u^n − u^{n−1}| / Δt` per node; the earliest step wins
/// ties.
#[derive(Debug, Clone)]
pub struct ActivationTracker {
    dt: f64,
    best_rate: Vec<f64>,
    best_time: Vec<f64>,
    peak: Vec<f64>,
}

impl ActivationTracker {
    pub fn new(n: usize, dt: f64) -> Self {
        ActivationTracker {
            dt,
            best_rate: vec![0.0; n],
            best_time: vec![0.0; n],
            peak: vec![f64::NEG_INFINITY; n],
        }
    }

    /// Records the step ending at `t^{step}` with potentials `prev → cur`.
    pub fn observe(&mut self, step: usize, prev: &[f64], cur: &[f64]) {
        let t = step as f64 * self.dt;
        for i in 0..cur.len() {
            let rate = (cur[i] - prev[i]).abs() / self.dt;
            if rate > self.best_rate[i] {
                self.best_rate[i] = rate;
                self.best_time[i] = t;
            }
            if cur[i] > self.peak[i] {
                self.peak[i] = cur[i];
            }
        }
    }

    pub fn activated_count(&self, threshold: f64) -> usize {
        self.peak.iter().filter(|&&p| p >= threshold).count()
    }

    /// `(activation, peak)`; nodes whose peak stays below `threshold` get
    /// `None`.
    pub fn finish(self, threshold: f64) -> (Vec<Option<f64>>, Vec<f64>) {
        let act = (0..self.peak.len())
            .map(|i| (self.peak[i] >= threshold && self.best_rate[i] > 0.0).then_some(self.best_time[i]))
            .collect();
        (act, self.peak)
    }
}

/// Activation of a single sampled trace `u[0..]` at spacing `dt`.
pub fn activation_from_trace(u: &[f64], dt: f64, threshold: f64) -> Option<f64> {
    let mut tr = ActivationTracker::new(1, dt);
    for n in 1..u.len() {
        tr.observe(n, &u[n - 1..n], &u[n..n + 1]);
    }
    tr.finish(threshold).0[0]
}

/// Activation at the given nodes.
pub fn extract_activation_at(activation: &[Option<f64>], nodes: &[usize]) -> Result<Vec<Option<f64>>> {
    nodes
        .iter()
        .map(|&i| {
            activation
                .get(i)
                .copied()
                .ok_or_else(|| Error::invalid(format!("node {i} outside an activation field of {}", activation.len())))
        })
        .collect()
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("{a} computed values for {b} measurements")));
    }
    Ok(())
}

/// `Σ ½ (τ^h_j − τ_j)²` in ms².
pub fn misfit(computed: &[f64], measured: &[f64]) -> Result<f64> {
    check_lengths(computed.len(), measured.len())?;
    Ok(computed.iter().zip(measured).map(|(c, m)| 0.5 * (c - m).powi(2)).sum())
}

/// Linear interpolation between order statistics (type 7).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl FiveNumber {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InsufficientData("five-number summary of no values".into()));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Ok(FiveNumber {
            min: v[0],
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation.
fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares of `computed` on `measured`, with intercept.
pub fn regression_stats(computed: &[f64], measured: &[f64]) -> Result<Regression> {
    check_lengths(computed.len(), measured.len())?;
    if measured.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "regression needs at least 3 points, got {}",
            measured.len()
        )));
    }
    let mx = mean(measured);
    let my = mean(computed);
    let sxx: f64 = measured.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("measured values have zero variance".into()));
    }
    let sxy: f64 = measured.iter().zip(computed).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = measured
        .iter()
        .zip(computed)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let ss_tot: f64 = computed.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(Regression { slope, intercept, r2 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub group: Group,
    /// Points used (activated).
    pub count: usize,
    /// Points whose node never activated; excluded from every statistic.
    pub not_activated: usize,
    /// `|τ_j − τ^h_j|` (ms).
    pub abs_errors: Vec<f64>,
    /// Mean of `e_j / max τ` (fraction).
    pub mean_rel_max: f64,
    /// Mean of `e_j / τ_j` (fraction).
    pub mean_rel_point: f64,
    pub std_rel_max: f64,
    pub std_rel_point: f64,
    /// Summary of the absolute errors (ms).
    pub summary: FiveNumber,
    /// Absent with fewer than 3 points or constant measurements.
    pub regression: Option<Regression>,
}

/// Error statistics of one group. `None` entries in `computed` are counted
/// and dropped.
pub fn error_stats(computed: &[Option<f64>], measured: &[f64], group: Group) -> Result<ErrorReport> {
    check_lengths(computed.len(), measured.len())?;
    if measured.is_empty() {
        return Err(Error::invalid(format!("group {group} is empty")));
    }
    let pairs: Vec<(f64, f64)> = computed
        .iter()
        .zip(measured)
        .filter_map(|(c, m)| c.map(|c| (c, *m)))
        .collect();
    let not_activated = measured.len() - pairs.len();
    if pairs.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no activated points in group {group} ({not_activated} not activated)"
        )));
    }
    let meas: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let comp: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let tau_max = meas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let abs_errors: Vec<f64> = pairs.iter().map(|(c, m)| (m - c).abs()).collect();
    let rel_max: Vec<f64> = abs_errors.iter().map(|e| e / tau_max).collect();
    let rel_point: Vec<f64> = abs_errors.iter().zip(&meas).map(|(e, m)| e / m).collect();
    let regression = match regression_stats(&comp, &meas) {
        Ok(r) => Some(r),
        Err(Error::InsufficientData(_)) | Err(Error::Degenerate(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(ErrorReport {
        group,
        count: pairs.len(),
        not_activated,
        summary: FiveNumber::of(&abs_errors)?,
        mean_rel_max: mean(&rel_max),
        mean_rel_point: mean(&rel_point),
        std_rel_max: std_dev(&rel_max),
        std_rel_point: std_dev(&rel_point),
        abs_errors,
        regression,
    })
}

impl ErrorReport {
    /// `(metric, value)` rows; relative errors as fractions.
    pub fn metrics(&self) -> Vec<(&'static str, f64)> {
        let mut rows = vec![
            ("count", self.count as f64),
            ("not_activated", self.not_activated as f64),
            ("mean_rel_max", self.mean_rel_max),
            ("mean_rel_point", self.mean_rel_point),
            ("std_rel_max", self.std_rel_max),
            ("std_rel_point", self.std_rel_point),
            ("abs_min_ms", self.summary.min),
            ("abs_q1_ms", self.summary.q1),
            ("abs_median_ms", self.summary.median),
            ("abs_q3_ms", self.summary.q3),
            ("abs_max_ms", self.summary.max),
        ];
        if let Some(r) = self.regression {
            rows.extend([("slope", r.slope), ("intercept_ms", r.intercept), ("r2", r.r2)]);
        }
        rows
    }
}

/// `group,metric,value` rows for several reports.
pub fn write_report_csv(path: &Path, reports: &[(String, &ErrorReport)]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::invalid(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["group", "metric", "value"]).map_err(csv_err)?;
    for (label, r) in reports {
        for (metric, value) in r.metrics() {
            w.write_record([label.as_str(), metric, &format!("{value:.10e}")])
                .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `measured_ms,computed_ms` pairs, activated points only.
pub fn write_correlation_csv(path: &Path, computed: &[Option<f64>], measured: &[f64]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::invalid(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["measured_ms", "computed_ms"]).map_err(csv_err)?;
    for (c, m) in computed.iter().zip(measured) {
        if let Some(c) = c {
            w.write_record([format!("{m:.6}"), format!("{c:.6}")]).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
