//! Bueno-Orovio minimal ventricular model: three currents, three gates,
//! forward-Euler gating and the linearized potential update shared with the
//! tissue solver.
//!
//! The potential `u` is dimensionless; times are in ms and the currents are
//! rates in `1/ms`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// mV per unit of the dimensionless potential (`V = 85.7 u − 84 mV`).
pub const POTENTIAL_SCALE_MV: f64 = 85.7;

/// Which algebraic form the outward current takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutwardForm {
    /// `u(1 − H(u−V2))/τ_o(u) + H(u−V2)/τ_so(u)` with the sigmoidal `τ_so`.
    #[default]
    Original,
    /// Numerator `1 − H(u−V2)(u−V_o)` and a step-valued `τ_so`. Not excitable
    /// from rest; kept for inspection only.
    Printed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IonicParams {
    pub v_o: f64,
    pub v_1: f64,
    pub v_2: f64,
    pub v_tilde: f64,
    pub tau_1: f64,
    pub tau_3: f64,
    pub tau_o1: f64,
    pub tau_o2: f64,
    pub tau_21: f64,
    pub tau_22: f64,
    pub k_so: f64,
    pub u_so: f64,
    pub theta_v_minus: f64,
    pub tau_v1_minus: f64,
    pub tau_v2_minus: f64,
    pub tau_v_plus: f64,
    pub tau_w1_minus: f64,
    pub tau_w2_minus: f64,
    pub k_w_minus: f64,
    pub u_w_minus: f64,
    pub tau_w_plus: f64,
    pub tau_winf: f64,
    pub w_inf_star: f64,
    pub tau_s1: f64,
    pub tau_s2: f64,
    pub k_s: f64,
    pub u_s: f64,
    #[serde(default)]
    pub outward: OutwardForm,
}

impl Default for IonicParams {
    fn default() -> Self {
        IonicParams {
            v_o: 0.006,
            v_1: 0.3,
            v_2: 0.015,
            v_tilde: 1.58,
            tau_1: 0.11,
            tau_3: 2.8723,
            tau_o1: 6.0,
            tau_o2: 6.0,
            tau_21: 43.0,
            tau_22: 0.2,
            k_so: 2.0,
            u_so: 0.65,
            theta_v_minus: 0.015,
            tau_v1_minus: 60.0,
            tau_v2_minus: 1150.0,
            tau_v_plus: 1.4506,
            tau_w1_minus: 70.0,
            tau_w2_minus: 20.0,
            k_w_minus: 65.0,
            u_w_minus: 0.03,
            tau_w_plus: 280.0,
            tau_winf: 0.07,
            w_inf_star: 0.94,
            tau_s1: 2.7342,
            tau_s2: 3.0,
            k_s: 2.0994,
            u_s: 0.9087,
            outward: OutwardForm::Original,
        }
    }
}

impl IonicParams {
    /// Table values taken at face value, including `τ_1 = 11 ms`.
    pub fn as_tabulated() -> Self {
        IonicParams {
            tau_1: 11.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let taus = [
            ("tau_1", self.tau_1),
            ("tau_3", self.tau_3),
            ("tau_o1", self.tau_o1),
            ("tau_o2", self.tau_o2),
            ("tau_21", self.tau_21),
            ("tau_22", self.tau_22),
            ("tau_v1_minus", self.tau_v1_minus),
            ("tau_v2_minus", self.tau_v2_minus),
            ("tau_v_plus", self.tau_v_plus),
            ("tau_w1_minus", self.tau_w1_minus),
            ("tau_w2_minus", self.tau_w2_minus),
            ("tau_w_plus", self.tau_w_plus),
            ("tau_winf", self.tau_winf),
            ("tau_s1", self.tau_s1),
            ("tau_s2", self.tau_s2),
        ];
        for (name, t) in taus {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {t}")));
            }
        }
        for (name, v) in [("v_o", self.v_o), ("v_1", self.v_1), ("v_2", self.v_2)] {
            if !(0.0..=self.v_tilde).contains(&v) {
                return Err(Error::invalid(format!("threshold {name} = {v} outside [0, {}]", self.v_tilde)));
            }
        }
        Ok(())
    }

    fn tau_o(&self, u: f64) -> f64 {
        if heaviside(u - self.v_o) > 0.0 {
            self.tau_o2
        } else {
            self.tau_o1
        }
    }

    fn tau_so(&self, u: f64) -> f64 {
        match self.outward {
            OutwardForm::Original => {
                self.tau_21 + (self.tau_22 - self.tau_21) * (1.0 + (self.k_so * (u - self.u_so)).tanh()) / 2.0
            }
            OutwardForm::Printed => {
                let h = heaviside(u - self.v_2);
                h * (self.tau_22 - self.tau_21) + self.tau_21
            }
        }
    }

    /// Writes every constant as TOML.
    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::invalid(format!("parameter manifest: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[inline]
pub fn heaviside(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellState {
    pub u: f64,
    pub w: [f64; 3],
}

impl CellState {
    pub const REST: CellState = CellState {
        u: 0.0,
        w: [1.0, 1.0, 0.0],
    };

    /// Guard band used by the drivers to detect blow-up.
    pub fn is_physical(&self) -> bool {
        (-0.2..=1.7).contains(&self.u) && self.w.iter().all(|g| (0.0..=1.05).contains(g))
    }
}

/// `(I1, I2, I3)`; the total ionic current is their sum.
pub fn ionic_currents(u: f64, w: [f64; 3], p: &IonicParams) -> [f64; 3] {
    let h1 = heaviside(u - p.v_1);
    let h2 = heaviside(u - p.v_2);
    let i1 = -h1 * (u - p.v_1) * (p.v_tilde - u) * w[0] / p.tau_1;
    let i2 = match p.outward {
        OutwardForm::Original => u * (1.0 - h2) / p.tau_o(u) + h2 / p.tau_so(u),
        OutwardForm::Printed => (1.0 - h2 * (u - p.v_o)) / p.tau_o(u) + h2 / p.tau_so(u),
    };
    let i3 = -h2 * w[1] * w[2] / p.tau_3;
    [i1, i2, i3]
}

/// Gate derivatives `(dw1, dw2, dw3)` per ms.
pub fn gating_rhs(u: f64, w: [f64; 3], p: &IonicParams) -> [f64; 3] {
    let hv = heaviside(u - p.v_1);
    let hw = heaviside(u - p.v_2);
    let ho = heaviside(u - p.v_o);
    let v_inf = if u < p.theta_v_minus { 1.0 } else { 0.0 };
    let tau_v_minus = if heaviside(u - p.theta_v_minus) > 0.0 {
        p.tau_v2_minus
    } else {
        p.tau_v1_minus
    };
    let dv = (1.0 - hv) * (v_inf - w[0]) / tau_v_minus - hv * w[0] / p.tau_v_plus;

    let tau_w_minus =
        p.tau_w1_minus + (p.tau_w2_minus - p.tau_w1_minus) * (1.0 + (p.k_w_minus * (u - p.u_w_minus)).tanh()) / 2.0;
    let w_inf = (1.0 - ho) * (1.0 - u / p.tau_winf) + ho * p.w_inf_star;
    let dw = (1.0 - hw) * (w_inf - w[1]) / tau_w_minus - hw * w[1] / p.tau_w_plus;

    let tau_s = (1.0 - hw) * p.tau_s1 + hw * p.tau_s2;
    let s_inf = (1.0 + (p.k_s * (u - p.u_s)).tanh()) / 2.0;
    let ds = (s_inf - w[2]) / tau_s;
    [dv, dw, ds]
}

/// Forward Euler: `w + dt R(u_prev, w)`.
pub fn step_gating(w: [f64; 3], u_prev: f64, dt: f64, p: &IonicParams) -> [f64; 3] {
    let r = gating_rhs(u_prev, w, p);
    [w[0] + dt * r[0], w[1] + dt * r[1], w[2] + dt * r[2]]
}

/// Split of the semi-implicit ionic current `J^{n+1} = a u^{n+1} + r`,
/// with switches and coefficients frozen at `u^n` and the updated gates.
#[inline]
pub fn linearized_current(u_n: f64, w: [f64; 3], p: &IonicParams) -> (f64, f64) {
    let h1 = heaviside(u_n - p.v_1);
    let h2 = heaviside(u_n - p.v_2);
    let g1 = h1 * (p.v_tilde - u_n) * w[0] / p.tau_1;
    let tau_o = p.tau_o(u_n);
    let so = h2 / p.tau_so(u_n);
    let i3 = -h2 * w[1] * w[2] / p.tau_3;
    match p.outward {
        OutwardForm::Original => (-g1 + (1.0 - h2) / tau_o, g1 * p.v_1 + so + i3),
        OutwardForm::Printed => (-g1 - h2 / tau_o, g1 * p.v_1 + (1.0 + h2 * p.v_o) / tau_o + so + i3),
    }
}

/// Single-cell semi-implicit update with stimulus rate `stim` (1/ms).
#[inline]
pub fn implicit_potential(u_n: f64, w: [f64; 3], dt: f64, stim: f64, p: &IonicParams) -> f64 {
    let (a, r) = linearized_current(u_n, w, p);
    (u_n / dt - r + stim) / (1.0 / dt + a)
}

/// Stimulus current density (µA/cm³) as a potential rate (1/ms).
pub fn stimulus_rate(amplitude: f64, chi: f64, c_m: f64) -> f64 {
    amplitude / (chi * c_m) / POTENTIAL_SCALE_MV
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacingProtocol {
    /// Stimulus onsets (ms).
    pub onsets: Vec<f64>,
    /// Stimulus rate in 1/ms of dimensionless potential.
    pub amplitude: f64,
    pub duration: f64,
}

impl PacingProtocol {
    pub fn stimulus_at(&self, t: f64) -> f64 {
        if self.onsets.iter().any(|&o| t >= o && t < o + self.duration) {
            self.amplitude
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellTrace {
    pub dt: f64,
    /// State at `t = n dt`, `n = 0..=steps`.
    pub states: Vec<CellState>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionPotential {
    pub peak: f64,
    pub peak_time: f64,
    /// Time of maximal `|Δu/Δt|`, first maximizer.
    pub upstroke_time: f64,
    /// Duration above 10% of the peak, if repolarization happens in the window.
    pub apd90: Option<f64>,
}

impl CellTrace {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.states.len()).map(|n| n as f64 * self.dt)
    }

    /// AP metrics within `[from, to)` ms.
    pub fn action_potential(&self, from: f64, to: f64) -> ActionPotential {
        let lo = (from / self.dt).round().max(1.0) as usize;
        let hi = ((to / self.dt).round() as usize).min(self.states.len());
        let mut peak = (f64::NEG_INFINITY, 0);
        let mut slope = (f64::NEG_INFINITY, lo);
        for n in lo..hi {
            let u = self.states[n].u;
            if u > peak.0 {
                peak = (u, n);
            }
            let d = (u - self.states[n - 1].u).abs() / self.dt;
            if d > slope.0 {
                slope = (d, n);
            }
        }
        let level = 0.1 * peak.0;
        let rise = (lo..=peak.1).find(|&n| self.states[n].u >= level);
        let fall = (peak.1..hi).find(|&n| self.states[n].u < level);
        let apd90 = match (rise, fall) {
            (Some(r), Some(f)) => Some((f - r) as f64 * self.dt),
            _ => None,
        };
        ActionPotential {
            peak: peak.0,
            peak_time: peak.1 as f64 * self.dt,
            upstroke_time: slope.1 as f64 * self.dt,
            apd90,
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        let csv_err = |e: csv::Error| Error::invalid(format!("{}: {e}", path.display()));
        w.write_record(["t_ms", "u", "w1", "w2", "w3"]).map_err(csv_err)?;
        for (t, s) in self.times().zip(&self.states) {
            w.write_record([t, s.u, s.w[0], s.w[1], s.w[2]].map(|v| format!("{v:.10e}")))
                .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Paces a single cell from rest over `[0, t_end]`.
pub fn run_single_cell(protocol: &PacingProtocol, dt: f64, t_end: f64, p: &IonicParams) -> Result<CellTrace> {
    if !(dt > 0.0) || !(t_end > dt) {
        return Err(Error::invalid(format!("need 0 < dt < T, got dt = {dt}, T = {t_end}")));
    }
    if protocol.onsets.iter().any(|&o| !(0.0..=t_end).contains(&o)) {
        return Err(Error::invalid("stimulus onsets must lie within [0, T]"));
    }
    p.validate()?;
    let steps = (t_end / dt).round() as usize;
    let mut states = Vec::with_capacity(steps + 1);
    let mut s = CellState::REST;
    states.push(s);
    for n in 0..steps {
        let t_next = (n + 1) as f64 * dt;
        let w = step_gating(s.w, s.u, dt, p);
        let u = implicit_potential(s.u, w, dt, protocol.stimulus_at(t_next), p);
        s = CellState { u, w };
        if !s.is_physical() {
            return Err(Error::Diverged {
                step: n + 1,
                time: t_next,
                message: format!("cell state left the physical band: u = {u}, w = {w:?}"),
            });
        }
        states.push(s);
    }
    Ok(CellTrace { dt, states })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stim(onsets: Vec<f64>) -> PacingProtocol {
        PacingProtocol {
            onsets,
            amplitude: stimulus_rate(112_500.0, 1000.0, 1.0),
            duration: 1.0,
        }
    }

    #[test]
    fn rest_currents_vanish() {
        let p = IonicParams::default();
        assert_eq!(ionic_currents(0.0, [1.0, 1.0, 0.0], &p), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn fast_inward_current_from_tabulated_constants() {
        let i = ionic_currents(0.5, [1.0, 1.0, 0.0], &IonicParams::as_tabulated());
        assert!((i[0] + 0.2 * 1.08 / 11.0).abs() < 1e-15);
        assert!((i[0] + 0.019636).abs() < 5e-7);
    }

    #[test]
    fn fast_current_switches_at_threshold() {
        let p = IonicParams::default();
        assert_eq!(ionic_currents(0.3 - 1e-9, [1.0, 1.0, 0.0], &p)[0], 0.0);
        assert!(ionic_currents(0.3 + 1e-6, [1.0, 1.0, 0.0], &p)[0] < 0.0);
    }

    #[test]
    fn printed_outward_form_breaks_rest() {
        let p = IonicParams {
            outward: OutwardForm::Printed,
            ..Default::default()
        };
        assert!((ionic_currents(0.0, [1.0, 1.0, 0.0], &p)[1] - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn rest_gates_only_s_relaxes() {
        let p = IonicParams::default();
        let d = gating_rhs(0.0, [1.0, 1.0, 0.0], &p);
        let s_inf = (1.0 + (p.k_s * -p.u_s).tanh()) / 2.0;
        assert_eq!(d[0], 0.0);
        assert_eq!(d[1], 0.0);
        assert!((d[2] - s_inf / p.tau_s1).abs() < 1e-15);
        assert!((s_inf - 0.021553).abs() < 1e-6);
    }

    #[test]
    fn above_threshold_v_gate_decays() {
        let p = IonicParams::default();
        let d = gating_rhs(0.8, [0.7, 1.0, 0.2], &p);
        assert!((d[0] + 0.7 / p.tau_v_plus).abs() < 1e-15);
    }

    #[test]
    fn euler_step_is_linear_in_dt() {
        let p = IonicParams::default();
        let w = [0.9, 0.8, 0.3];
        let a = step_gating(w, 0.4, 0.02, &p);
        let b = step_gating(w, 0.4, 0.01, &p);
        for k in 0..3 {
            assert!(((a[k] - w[k]) - 2.0 * (b[k] - w[k])).abs() < 1e-15);
        }
    }

    #[test]
    fn linearization_reproduces_currents() {
        let p = IonicParams::default();
        for &u in &[0.0, 0.01, 0.2, 0.5, 1.2] {
            let w = [0.6, 0.9, 0.4];
            let (a, r) = linearized_current(u, w, &p);
            let direct: f64 = ionic_currents(u, w, &p).iter().sum();
            assert!((a * u + r - direct).abs() < 1e-13, "u = {u}");
        }
    }

    #[test]
    fn quiescent_cell_stays_at_rest() {
        let p = IonicParams::default();
        let tr = run_single_cell(&stim(vec![]), 0.025, 200.0, &p).unwrap();
        assert!(tr.states.iter().all(|s| s.u.abs() <= 1e-12));
    }

    #[test]
    fn paced_action_potential_shape() {
        let p = IonicParams::default();
        let tr = run_single_cell(&stim(vec![10.0]), 0.025, 600.0, &p).unwrap();
        let ap = tr.action_potential(0.0, 600.0);
        assert!(ap.peak > 0.9 * 1.0, "peak {}", ap.peak);
        assert!(ap.upstroke_time > 10.0 && ap.upstroke_time < 13.0);
        let late = tr.states.iter().skip((510.0 / 0.025) as usize);
        assert!(late.clone().all(|s| s.u < 0.01));
        let apd = ap.apd90.unwrap();
        assert!(apd > 150.0 && apd < 450.0, "APD90 {apd}");
    }

    #[test]
    fn paced_twice_gives_matching_peaks() {
        let p = IonicParams::default();
        let tr = run_single_cell(&stim(vec![10.0, 1010.0]), 0.025, 1600.0, &p).unwrap();
        let a = tr.action_potential(0.0, 1000.0);
        let b = tr.action_potential(1000.0, 1600.0);
        assert!((a.peak - b.peak).abs() / a.peak < 0.02);
    }

    #[test]
    fn gating_self_convergence() {
        let p = IonicParams::default();
        let a = run_single_cell(&stim(vec![5.0]), 0.025, 400.0, &p).unwrap();
        let b = run_single_cell(&stim(vec![5.0]), 0.0125, 400.0, &p).unwrap();
        let mut worst: f64 = 0.0;
        for (n, s) in a.states.iter().enumerate() {
            let f = b.states[2 * n];
            for k in 0..3 {
                worst = worst.max((s.w[k] - f.w[k]).abs());
            }
        }
        assert!(worst < 0.01, "max gating difference {worst}");
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ionic.toml");
        IonicParams::default().write_manifest(&path).unwrap();
        let back: IonicParams = toml::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back, IonicParams::default());
    }
}
