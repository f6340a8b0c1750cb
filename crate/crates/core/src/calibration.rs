//! Direct-search estimation of the three conductivities from activation
//! times.
//!
//! Each iteration simulates at the current `σ`, compares the computed
//! activation at the calibration points with the measured one and moves all
//! three components along the fixed direction `β` by the signed error sum
//! (in seconds), projected back onto the admissible box.

use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::activation::{error_stats, misfit, regression_stats, ActivationSample, ErrorReport, Group, Regression};
use crate::error::{Error, Result};
use crate::fibers::FiberField;
use crate::geometry::Mesh;
use crate::solver::{
    tissue_tensors, Conductivities, SimulationOutput, Simulator, SolverParams, StimulusPlan, StimulusSite,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConductivityBox {
    pub lo: Conductivities,
    pub hi: Conductivities,
}

impl Default for ConductivityBox {
    fn default() -> Self {
        ConductivityBox {
            lo: Conductivities { f: 0.70, s: 0.16, n: 0.03 },
            hi: Conductivities { f: 2.20, s: 0.48, n: 0.10 },
        }
    }
}

impl ConductivityBox {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = (self.lo.to_array(), self.hi.to_array());
        for k in 0..3 {
            if !(lo[k] > 0.0 && hi[k] > lo[k] && hi[k].is_finite()) {
                return Err(Error::invalid(format!(
                    "conductivity bounds need 0 < lo < hi, got [{}, {}] for component {k}",
                    lo[k], hi[k]
                )));
            }
        }
        Ok(())
    }

    pub fn midpoint(&self) -> Conductivities {
        let (lo, hi) = (self.lo.to_array(), self.hi.to_array());
        Conductivities::from_array([0, 1, 2].map(|k| 0.5 * (lo[k] + hi[k])))
    }

    pub fn contains(&self, s: &Conductivities) -> bool {
        let (lo, hi, v) = (self.lo.to_array(), self.hi.to_array(), s.to_array());
        (0..3).all(|k| v[k] >= lo[k] && v[k] <= hi[k])
    }

    /// Projection onto the box, with a flag per clamped component.
    pub fn clamp(&self, s: Conductivities) -> (Conductivities, [bool; 3]) {
        let (lo, hi, mut v) = (self.lo.to_array(), self.hi.to_array(), s.to_array());
        let mut hit = [false; 3];
        for k in 0..3 {
            if v[k] < lo[k] {
                v[k] = lo[k];
                hit[k] = true;
            } else if v[k] > hi[k] {
                v[k] = hi[k];
                hit[k] = true;
            }
        }
        (Conductivities::from_array(v), hit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Box midpoint when absent.
    pub initial: Option<Conductivities>,
    pub bounds: ConductivityBox,
    /// Acceleration per component, in mS/cm per second of summed error.
    pub beta: Conductivities,
    /// Stop once the mean signed error per point is below this (ms).
    pub tol_ms: f64,
    pub max_iters: usize,
    /// Relative change of the misfit below which two consecutive iterations
    /// count as stagnation.
    pub stagnation: f64,
    /// Extra simulated time after the last calibration point activates (ms).
    pub settle_ms: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            initial: None,
            bounds: ConductivityBox::default(),
            beta: Conductivities { f: 0.45, s: 0.1, n: 0.05 },
            tol_ms: 1.0,
            max_iters: 20,
            stagnation: 1e-3,
            settle_ms: 5.0,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if let Some(s) = self.initial {
            if !self.bounds.contains(&s) {
                return Err(Error::invalid(format!("initial conductivities {s:?} outside the box")));
            }
        }
        if !(self.tol_ms > 0.0) || self.max_iters == 0 {
            return Err(Error::invalid("tol_ms must be positive and max_iters at least 1"));
        }
        if !self.beta.to_array().iter().all(|b| b.is_finite() && *b >= 0.0) {
            return Err(Error::invalid("beta must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn start(&self) -> Conductivities {
        self.initial.unwrap_or_else(|| self.bounds.midpoint())
    }
}

/// `Σ_j (τ^h_j − τ_j)` and the per-point mean, both in ms.
pub fn mean_signed_error(computed: &[f64], measured: &[f64]) -> Result<(f64, f64)> {
    if computed.len() != measured.len() || measured.is_empty() {
        return Err(Error::invalid(format!(
            "{} computed values for {} measurements",
            computed.len(),
            measured.len()
        )));
    }
    let sum: f64 = computed.iter().zip(measured).map(|(c, m)| c - m).sum();
    Ok((sum, sum / measured.len() as f64))
}

/// `σ + β E` with `E` converted from ms to s, then clamped.
pub fn update_sigma(
    sigma: Conductivities,
    e_sum_ms: f64,
    beta: Conductivities,
    bounds: &ConductivityBox,
) -> (Conductivities, [bool; 3]) {
    let e = e_sum_ms / 1000.0;
    let (s, b) = (sigma.to_array(), beta.to_array());
    bounds.clamp(Conductivities::from_array([0, 1, 2].map(|k| s[k] + b[k] * e)))
}

/// Activation field for given conductivities.
pub trait ForwardModel {
    /// Activation per node; only the nodes in `watch` are guaranteed to be
    /// complete.
    fn activation(&mut self, sigma: Conductivities, watch: &[usize], settle_ms: f64) -> Result<SimulationOutput>;

    /// Simulation horizon (ms); points that never activate are censored here.
    fn horizon(&self) -> f64;
}

/// The monodomain model on a mesh, with or without fibers.
pub struct TissueModel<'a> {
    pub mesh: &'a Mesh,
    pub fibers: Option<&'a FiberField>,
    pub params: SolverParams,
    pub plan: StimulusPlan,
}

impl ForwardModel for TissueModel<'_> {
    fn activation(&mut self, sigma: Conductivities, watch: &[usize], settle_ms: f64) -> Result<SimulationOutput> {
        let params = SolverParams {
            sigma,
            ..self.params.clone()
        };
        let tensors = tissue_tensors(self.mesh, self.fibers, sigma)?;
        Simulator::new(self.mesh, &tensors, &params, &self.plan)?.run_watching(watch, settle_ms)
    }

    fn horizon(&self) -> f64 {
        self.params.t_end
    }
}

/// One measured point as the calibration sees it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub node: usize,
    /// ms
    pub tau: f64,
}

/// Stimulus plan and the two point groups from registered samples.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationInputs {
    pub plan: StimulusPlan,
    pub cal: Vec<Target>,
    pub val: Vec<Target>,
}

/// Septal samples become stimulus sites at their activation time. With
/// `keep_cal`, only the earliest `keep_cal` calibration points are used.
pub fn inputs_from_samples(samples: &[ActivationSample], keep_cal: Option<usize>) -> Result<CalibrationInputs> {
    let plan = StimulusPlan::new(
        samples
            .iter()
            .filter(|s| s.group == Group::Input)
            .map(|s| StimulusSite {
                location: s.location.into(),
                onset: s.tau,
            })
            .collect(),
    );
    if plan.sites.is_empty() {
        return Err(Error::invalid("no septal samples to stimulate from"));
    }
    let group = |g: Group| {
        let mut v: Vec<Target> = samples
            .iter()
            .filter(|s| s.group == g)
            .map(|s| Target { node: s.node, tau: s.tau })
            .collect();
        v.sort_by(|a, b| a.tau.total_cmp(&b.tau));
        v
    };
    let mut cal = group(Group::I);
    if let Some(k) = keep_cal {
        if k == 0 || k > cal.len() {
            return Err(Error::invalid(format!(
                "cannot keep {k} of {} calibration points",
                cal.len()
            )));
        }
        cal.truncate(k);
    }
    Ok(CalibrationInputs {
        plan,
        cal,
        val: group(Group::II),
    })
}

/// Regression of computed on measured over both vein groups.
pub fn pooled_regression(result: &CalibrationResult, cal: &[Target], val: &[Target]) -> Option<Regression> {
    let (mut c, mut m) = (Vec::new(), Vec::new());
    for (computed, targets) in [(&result.computed_cal, cal), (&result.computed_val, val)] {
        for (x, t) in computed.iter().zip(targets) {
            if let Some(x) = x {
                c.push(*x);
                m.push(t.tau);
            }
        }
    }
    regression_stats(&c, &m).ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iteration {
    pub iter: usize,
    pub sigma: Conductivities,
    /// Signed error sum (ms).
    pub e_sum_ms: f64,
    /// Signed error mean per point (ms).
    pub e_mean_ms: f64,
    /// Misfit (ms²).
    pub f_ms2: f64,
    /// Mean relative error on the calibration group (fraction).
    pub e_cal: f64,
    /// Calibration points that did not activate within the horizon.
    pub censored: usize,
    /// Components clamped by the update that followed this iterate.
    pub clamped: [bool; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub sigma_hat: Conductivities,
    pub iterations: Vec<Iteration>,
    pub converged: bool,
    /// Errors on the calibration points at `sigma_hat`.
    pub calibration: ErrorReport,
    /// Errors on the held-out points at `sigma_hat`.
    pub validation: ErrorReport,
    /// Computed activation at the calibration and validation points.
    pub computed_cal: Vec<Option<f64>>,
    pub computed_val: Vec<Option<f64>>,
    /// Full activation field at `sigma_hat`.
    pub activation: Vec<Option<f64>>,
}

impl CalibrationResult {
    /// Index of `sigma_hat` in `iterations`.
    pub fn chosen(&self) -> usize {
        self.iterations
            .iter()
            .position(|it| it.sigma == self.sigma_hat)
            .unwrap_or(self.iterations.len() - 1)
    }
}

fn at(act: &[Option<f64>], targets: &[Target]) -> Vec<Option<f64>> {
    targets.iter().map(|t| act[t.node]).collect()
}

/// Runs the direct search on `cal` and reports on `val` at the estimate.
pub fn calibrate<M: ForwardModel>(
    model: &mut M,
    cal: &[Target],
    val: &[Target],
    config: &CalibrationConfig,
) -> Result<CalibrationResult> {
    config.validate()?;
    if cal.is_empty() || val.is_empty() {
        return Err(Error::invalid(format!(
            "calibration needs points in both groups, got {} and {}",
            cal.len(),
            val.len()
        )));
    }
    let measured: Vec<f64> = cal.iter().map(|t| t.tau).collect();
    let watch: Vec<usize> = cal.iter().chain(val).map(|t| t.node).collect();
    let horizon = model.horizon();

    let mut sigma = config.start();
    let mut iterations: Vec<Iteration> = Vec::new();
    let mut best: Option<(f64, Conductivities, Vec<Option<f64>>)> = None;
    let mut converged = false;
    for k in 0..config.max_iters {
        let out = model
            .activation(sigma, &watch, config.settle_ms)
            .map_err(|e| Error::Calibration {
                iteration: k,
                source: Box::new(e),
            })?;
        let raw = at(&out.activation, cal);
        let censored = raw.iter().filter(|c| c.is_none()).count();
        if censored > 0 {
            warn!("iteration {k}: {censored} calibration points not activated by {horizon} ms; censored there");
        }
        let computed: Vec<f64> = raw.iter().map(|c| c.unwrap_or(horizon)).collect();
        let (e_sum, e_mean) = mean_signed_error(&computed, &measured)?;
        let f = misfit(&computed, &measured)?;
        let e_cal = error_stats(&raw, &measured, Group::I).map(|r| r.mean_rel_max).unwrap_or(f64::NAN);
        info!(
            "iteration {k}: σ = ({:.4}, {:.4}, {:.4}), E = {e_sum:.3} ms (mean {e_mean:.3}), F = {f:.3} ms²",
            sigma.f, sigma.s, sigma.n
        );
        if best.as_ref().is_none_or(|b| f < b.0) {
            best = Some((f, sigma, out.activation));
        }
        iterations.push(Iteration {
            iter: k,
            sigma,
            e_sum_ms: e_sum,
            e_mean_ms: e_mean,
            f_ms2: f,
            e_cal,
            censored,
            clamped: [false; 3],
        });
        if e_mean.abs() < config.tol_ms && censored == 0 {
            converged = true;
            break;
        }
        let n = iterations.len();
        if n >= 3 {
            let rel = |a: f64, b: f64| if b == 0.0 { 0.0 } else { ((a - b) / b).abs() };
            let fs: Vec<f64> = iterations[n - 3..].iter().map(|it| it.f_ms2).collect();
            if rel(fs[2], fs[1]) < config.stagnation && rel(fs[1], fs[0]) < config.stagnation {
                info!("misfit stagnated at iteration {k}");
                break;
            }
        }
        let (next, clamped) = update_sigma(sigma, e_sum, config.beta, &config.bounds);
        iterations[n - 1].clamped = clamped;
        if next == sigma {
            info!("update left σ unchanged at iteration {k}");
            break;
        }
        sigma = next;
    }

    let last = iterations.last().expect("at least one iteration").sigma;
    let (sigma_hat, activation) = match best {
        Some((_, s, act)) if !converged => (s, act),
        Some((_, s, act)) if s == last => (s, act),
        _ => {
            // Converged, but an earlier iterate had a smaller misfit: report
            // the converged one and rerun it for its field.
            let out = model.activation(last, &watch, config.settle_ms)?;
            (last, out.activation)
        }
    };
    let computed_cal = at(&activation, cal);
    let computed_val = at(&activation, val);
    let val_measured: Vec<f64> = val.iter().map(|t| t.tau).collect();
    Ok(CalibrationResult {
        sigma_hat,
        converged,
        calibration: error_stats(&computed_cal, &measured, Group::I)?,
        validation: error_stats(&computed_val, &val_measured, Group::II)?,
        computed_cal,
        computed_val,
        activation,
        iterations,
    })
}

/// `iter,sigma_f,sigma_s,sigma_n,E_ms,F_ms2,eI_pct`
pub fn write_trace_csv(path: &Path, iterations: &[Iteration]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::invalid(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["iter", "sigma_f", "sigma_s", "sigma_n", "E_ms", "F_ms2", "eI_pct"])
        .map_err(csv_err)?;
    for it in iterations {
        w.write_record([
            it.iter.to_string(),
            format!("{:.10}", it.sigma.f),
            format!("{:.10}", it.sigma.s),
            format!("{:.10}", it.sigma.n),
            format!("{:.6}", it.e_sum_ms),
            format!("{:.6}", it.f_ms2),
            format!("{:.6}", 100.0 * it.e_cal),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a trace back; only the columns of [`write_trace_csv`].
pub fn read_trace_csv(path: &Path) -> Result<Vec<Iteration>> {
    let parse = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => parse(1, format!("{other:?}")),
    })?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse(line, e.to_string()))?;
        if rec.len() != 7 {
            return Err(parse(line, format!("expected 7 fields, found {}", rec.len())));
        }
        let num = |k: usize| -> Result<f64> {
            rec[k]
                .trim()
                .parse()
                .map_err(|_| parse(line, format!("field {} is not a number: `{}`", k + 1, &rec[k])))
        };
        out.push(Iteration {
            iter: num(0)? as usize,
            sigma: Conductivities::from_array([num(1)?, num(2)?, num(3)?]),
            e_sum_ms: num(4)?,
            e_mean_ms: f64::NAN,
            f_ms2: num(5)?,
            e_cal: num(6)? / 100.0,
            censored: 0,
            clamped: [false; 3],
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Activation `τ_j = d_j / √σ_f` ahead of a fixed delay; cheap enough
    /// to exercise the search without a mesh.
    struct Analytic {
        distances: Vec<f64>,
        calls: usize,
    }

    impl ForwardModel for Analytic {
        fn activation(&mut self, s: Conductivities, _: &[usize], _: f64) -> Result<SimulationOutput> {
            self.calls += 1;
            Ok(SimulationOutput {
                activation: self.distances.iter().map(|d| Some(10.0 + d / s.f.sqrt())).collect(),
                peak: vec![1.0; self.distances.len()],
                snapshots: Vec::new(),
                solves: Vec::new(),
                dt: 0.025,
                end_time: 500.0,
            })
        }

        fn horizon(&self) -> f64 {
            500.0
        }
    }

    fn analytic_targets(truth: f64) -> (Analytic, Vec<Target>, Vec<Target>) {
        let distances: Vec<f64> = (0..40).map(|k| 60.0 + 4.0 * k as f64).collect();
        let tau: Vec<f64> = distances.iter().map(|d| 10.0 + d / truth.sqrt()).collect();
        let targets: Vec<Target> = (0..40).map(|k| Target { node: k, tau: tau[k] }).collect();
        let (cal, val) = targets.split_at(20);
        (
            Analytic {
                distances,
                calls: 0,
            },
            cal.to_vec(),
            val.to_vec(),
        )
    }

    #[test]
    fn signed_error_examples() {
        assert_eq!(mean_signed_error(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), (0.0, 0.0));
        assert_eq!(mean_signed_error(&[110.0, 90.0], &[100.0, 100.0]).unwrap().0, 0.0);
        assert_eq!(mean_signed_error(&[110.0, 120.0], &[100.0, 100.0]).unwrap(), (30.0, 15.0));
        assert!(mean_signed_error(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn update_examples() {
        let b = ConductivityBox::default();
        let beta = CalibrationConfig::default().beta;
        let s = Conductivities { f: 1.0, s: 0.3, n: 0.05 };
        assert_eq!(update_sigma(s, 0.0, beta, &b).0, s);
        let (u, hit) = update_sigma(s, 10.0, beta, &b);
        assert!((u.f - 1.0045).abs() < 1e-15);
        assert!((u.s - 0.301).abs() < 1e-15 && (u.n - 0.0505).abs() < 1e-15);
        assert_eq!(hit, [false; 3]);
        let (u, hit) = update_sigma(s, 1e4, beta, &b);
        assert_eq!(u, b.hi);
        assert_eq!(hit, [true; 3]);
    }

    #[test]
    fn midpoint_and_validation() {
        let b = ConductivityBox::default();
        let m = b.midpoint();
        assert!((m.f - 1.45).abs() < 1e-15 && (m.s - 0.32).abs() < 1e-15 && (m.n - 0.065).abs() < 1e-15);
        let bad = ConductivityBox {
            lo: b.hi,
            hi: b.lo,
        };
        assert!(bad.validate().is_err());
        let cfg = CalibrationConfig {
            initial: Some(Conductivities { f: 5.0, s: 0.3, n: 0.05 }),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn data_at_the_start_converges_immediately() {
        let (mut model, cal, val) = analytic_targets(1.45);
        let r = calibrate(&mut model, &cal, &val, &CalibrationConfig::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations.len(), 1);
        assert!(r.iterations[0].e_sum_ms.abs() < 1e-9);
        assert_eq!(r.validation.mean_rel_max, 0.0);
    }

    #[test]
    fn recovers_the_fiber_conductivity() {
        let (mut model, cal, val) = analytic_targets(1.23);
        let r = calibrate(&mut model, &cal, &val, &CalibrationConfig::default()).unwrap();
        assert!(r.converged, "{:?}", r.iterations);
        // 1 ms of mean error is worth about 2 % of σ_f here.
        assert!((r.sigma_hat.f - 1.23).abs() / 1.23 < 0.05, "{:?}", r.sigma_hat);
        assert!(r.iterations.len() <= 10);
        let b = ConductivityBox::default();
        assert!(r.iterations.iter().all(|it| b.contains(&it.sigma)));
        assert!(r.validation.mean_rel_max < 0.01);
    }

    #[test]
    fn traces_are_reproducible_and_round_trip() {
        let (mut m1, cal, val) = analytic_targets(1.9);
        let (mut m2, _, _) = analytic_targets(1.9);
        let cfg = CalibrationConfig::default();
        let a = calibrate(&mut m1, &cal, &val, &cfg).unwrap();
        let b = calibrate(&mut m2, &cal, &val, &cfg).unwrap();
        assert_eq!(a.iterations, b.iterations);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.csv");
        write_trace_csv(&p, &a.iterations).unwrap();
        let back = read_trace_csv(&p).unwrap();
        assert_eq!(back.len(), a.iterations.len());
        assert!((back[0].sigma.f - a.iterations[0].sigma.f).abs() < 1e-9);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("iter,sigma_f,sigma_s,sigma_n,E_ms,F_ms2,eI_pct\n"));
    }

    #[test]
    fn stops_at_the_iteration_cap() {
        let (mut model, cal, val) = analytic_targets(0.8);
        let cfg = CalibrationConfig {
            max_iters: 2,
            ..Default::default()
        };
        let r = calibrate(&mut model, &cal, &val, &cfg).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations.len(), 2);
        let best = r.iterations.iter().map(|it| it.f_ms2).fold(f64::INFINITY, f64::min);
        assert_eq!(r.iterations[r.chosen()].f_ms2, best);
    }
}
