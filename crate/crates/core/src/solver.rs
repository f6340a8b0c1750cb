//! Semi-implicit monodomain stepping.
//!
//! Per step: forward-Euler gates from `(u^n, w^n)`, then one linear solve
//!
//! ```text
//! (M/Δt + K/(χC_m) + M·diag(a)) u^{n+1} = M (u^n/Δt − r + s)
//! ```
//!
//! where `J = a u^{n+1} + r` is the linearized ionic current evaluated at the
//! nodes and carried to the quadrature points through the mass matrix, and
//! `s` is the applied current as a potential rate.

use log::{debug, warn};
use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationTracker;
use crate::error::{Error, Result};
use crate::fem::{Gmres, GmresConfig, MeshPattern, SolveReport, SparseMatrix};
use crate::fibers::FiberField;
use crate::geometry::{Mesh, Vec3};
use crate::ionic::{self, CellState, IonicParams};

/// Conductivities along fiber, sheet-normal and normal directions (mS/cm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conductivities {
    pub f: f64,
    pub s: f64,
    pub n: f64,
}

impl Conductivities {
    pub const fn new(f: f64, s: f64, n: f64) -> Self {
        Conductivities { f, s, n }
    }

    pub fn isotropic(sigma: f64) -> Self {
        Conductivities::new(sigma, sigma, sigma)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.f, self.s, self.n]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Conductivities::new(a[0], a[1], a[2])
    }
}

impl Default for Conductivities {
    /// Mean of the four calibrated patients.
    fn default() -> Self {
        Conductivities::new(1.325, 0.293, 0.0675)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ReactionMode {
    /// `a u^{n+1}` enters the system matrix, rebuilt every step.
    #[default]
    SemiImplicit,
    /// Whole current on the right-hand side; the matrix is frozen.
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    /// Surface-to-volume ratio (1/cm).
    pub chi: f64,
    /// Membrane capacitance (µF/cm²).
    pub c_m: f64,
    /// Time step (ms).
    pub dt: f64,
    /// Final time (ms).
    pub t_end: f64,
    pub sigma: Conductivities,
    /// Applied current density (µA/cm³).
    pub stimulus_amplitude: f64,
    /// Ball radius around each stimulus location (cm).
    pub stimulus_radius: f64,
    /// Stimulus window length (ms).
    pub stimulus_duration: f64,
    pub lumped_mass: bool,
    pub reaction: ReactionMode,
    /// Nodes whose potential never reaches this value are reported as not
    /// activated.
    pub activation_threshold: f64,
    /// |u| beyond this aborts the run.
    pub divergence_bound: f64,
    /// Instants (ms) at which the potential is stored.
    pub snapshot_times: Vec<f64>,
    pub workers: usize,
    pub gmres: GmresConfig,
    pub ionic: IonicParams,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            chi: 1000.0,
            c_m: 1.0,
            dt: 0.025,
            t_end: 200.0,
            sigma: Conductivities::default(),
            stimulus_amplitude: 112_500.0,
            stimulus_radius: 0.15,
            stimulus_duration: 2.0,
            lumped_mass: true,
            reaction: ReactionMode::SemiImplicit,
            activation_threshold: 0.3,
            divergence_bound: 5.0,
            snapshot_times: Vec::new(),
            workers: 1,
            gmres: GmresConfig::default(),
            ionic: IonicParams::default(),
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end > self.dt) {
            return Err(Error::invalid(format!("T = {} must exceed dt = {}", self.t_end, self.dt)));
        }
        if !(self.chi > 0.0 && self.c_m > 0.0) {
            return Err(Error::invalid("chi and c_m must be positive"));
        }
        let s = self.sigma;
        if !(s.f > 0.0 && s.s > 0.0 && s.n > 0.0) {
            return Err(Error::invalid(format!("conductivities must be positive, got {s:?}")));
        }
        if !(s.f >= s.s && s.s >= s.n) {
            warn!("conductivities {s:?} break the usual ordering f >= s >= n");
        }
        if !(self.stimulus_radius >= 0.0 && self.stimulus_duration > 0.0) {
            return Err(Error::invalid("stimulus radius must be >= 0 and duration > 0"));
        }
        self.ionic.validate()
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StimulusSite {
    pub location: [f64; 3],
    /// ms
    pub onset: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StimulusPlan {
    pub sites: Vec<StimulusSite>,
}

impl StimulusPlan {
    pub fn new(sites: Vec<StimulusSite>) -> Self {
        StimulusPlan { sites }
    }

    /// One site per listed node, all with the same onset.
    pub fn at_nodes(mesh: &Mesh, nodes: &[usize], onset: f64) -> Self {
        StimulusPlan::new(
            nodes
                .iter()
                .map(|&i| {
                    let p = mesh.nodes()[i];
                    StimulusSite {
                        location: [p.x, p.y, p.z],
                        onset,
                    }
                })
                .collect(),
        )
    }

    pub fn validate(&self, t_end: f64) -> Result<()> {
        for (k, s) in self.sites.iter().enumerate() {
            if !(0.0..=t_end).contains(&s.onset) {
                return Err(Error::invalid(format!("stimulus {k} onset {} outside [0, {t_end}]", s.onset)));
            }
            if !s.location.iter().all(|c| c.is_finite()) {
                return Err(Error::invalid(format!("stimulus {k} location is not finite")));
            }
        }
        Ok(())
    }
}

/// Nodes covered by each stimulus site.
#[derive(Debug, Clone)]
pub struct StimulusMap {
    sites: Vec<(f64, Vec<usize>)>,
    duration: f64,
    amplitude: f64,
    n: usize,
}

impl StimulusMap {
    /// Ball of `radius` around each site; a ball that holds no node falls
    /// back to the nearest node.
    pub fn new(mesh: &Mesh, plan: &StimulusPlan, radius: f64, duration: f64, amplitude: f64) -> Self {
        let h = mesh.characteristic_size();
        let sites = plan
            .sites
            .iter()
            .map(|site| {
                let c = Vec3::from(site.location);
                let mut nodes: Vec<usize> = mesh
                    .nodes()
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| (*p - c).norm() <= radius)
                    .map(|(i, _)| i)
                    .collect();
                if nodes.is_empty() {
                    let i = mesh.nearest_node(&c);
                    let d = (mesh.nodes()[i] - c).norm();
                    if d > 2.0 * h {
                        warn!("stimulus at {c:?} is {d:.3} cm from the nearest node; it may miss the tissue");
                    }
                    nodes.push(i);
                }
                (site.onset, nodes)
            })
            .collect();
        StimulusMap {
            sites,
            duration,
            amplitude,
            n: mesh.node_count(),
        }
    }

    pub fn covered_nodes(&self, site: usize) -> &[usize] {
        &self.sites[site].1
    }

    /// Nodal applied current (µA/cm³) at time `t`. Overlapping balls do not add.
    pub fn current_at(&self, t: f64, out: &mut [f64]) {
        out.fill(0.0);
        for (onset, nodes) in &self.sites {
            if t >= *onset && t < onset + self.duration {
                for &i in nodes {
                    out[i] = self.amplitude;
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

/// Nodal applied current at `t` for a plan.
pub fn apply_stimulus(mesh: &Mesh, t: f64, plan: &StimulusPlan, params: &SolverParams) -> Vec<f64> {
    let map = StimulusMap::new(
        mesh,
        plan,
        params.stimulus_radius,
        params.stimulus_duration,
        params.stimulus_amplitude,
    );
    let mut out = vec![0.0; mesh.node_count()];
    map.current_at(t, &mut out);
    out
}

/// `σ_s I + (σ_f − σ_s) f⊗f + (σ_n − σ_s) n⊗n`
pub fn conductivity_tensor(f: &Vec3, n: &Vec3, sigma: Conductivities) -> Matrix3<f64> {
    Matrix3::identity() * sigma.s + f * f.transpose() * (sigma.f - sigma.s) + n * n.transpose() * (sigma.n - sigma.s)
}

/// Per-element tensors from node triples: sign-aligned to the first corner,
/// averaged, and re-orthonormalized at the centroid.
pub fn build_conductivity_tensors(
    mesh: &Mesh,
    fibers: &FiberField,
    sigma: Conductivities,
) -> Result<Vec<Matrix3<f64>>> {
    if fibers.len() != mesh.node_count() {
        return Err(Error::invalid(format!(
            "fiber field has {} nodes, mesh has {}",
            fibers.len(),
            mesh.node_count()
        )));
    }
    for i in 0..fibers.len() {
        let (f, n) = (fibers.f[i], fibers.n[i]);
        if (f.norm() - 1.0).abs() > 1e-6 || (n.norm() - 1.0).abs() > 1e-6 || f.dot(&n).abs() > 1e-6 {
            return Err(Error::invalid(format!("fiber triple at node {i} is not orthonormal")));
        }
    }
    mesh.elements()
        .iter()
        .enumerate()
        .map(|(e, nodes)| {
            let (f0, n0) = (fibers.f[nodes[0]], fibers.n[nodes[0]]);
            let mut f = Vec3::zeros();
            let mut n = Vec3::zeros();
            for &i in nodes {
                let fi = fibers.f[i];
                let ni = fibers.n[i];
                f += if fi.dot(&f0) < 0.0 { -fi } else { fi };
                n += if ni.dot(&n0) < 0.0 { -ni } else { ni };
            }
            let f = f.try_normalize(1e-12).ok_or(Error::Assembly {
                element: e,
                message: "fiber directions cancel at the centroid".into(),
            })?;
            let n = (n - f * n.dot(&f)).try_normalize(1e-12).ok_or(Error::Assembly {
                element: e,
                message: "normal direction degenerates at the centroid".into(),
            })?;
            Ok(conductivity_tensor(&f, &n, sigma))
        })
        .collect()
}

/// Tensors for `fibers`, or `σ_f I` in every element when there are none.
pub fn tissue_tensors(mesh: &Mesh, fibers: Option<&FiberField>, sigma: Conductivities) -> Result<Vec<Matrix3<f64>>> {
    match fibers {
        Some(f) => build_conductivity_tensors(mesh, f, sigma),
        None => Ok(vec![Matrix3::identity() * sigma.f; mesh.element_count()]),
    }
}

/// Potential and gates at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct TissueState {
    pub u: Vec<f64>,
    pub w: Vec<[f64; 3]>,
}

impl TissueState {
    pub fn rest(n: usize) -> Self {
        TissueState {
            u: vec![CellState::REST.u; n],
            w: vec![CellState::REST.w; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput {
    /// Time of the steepest potential change per node; `None` when the node
    /// never activated.
    pub activation: Vec<Option<f64>>,
    /// Largest potential reached per node.
    pub peak: Vec<f64>,
    pub snapshots: Vec<(f64, Vec<f64>)>,
    pub solves: Vec<SolveReport>,
    pub dt: f64,
    /// Last simulated instant (ms); earlier than `t_end` after an early stop.
    pub end_time: f64,
}

impl SimulationOutput {
    pub fn not_activated(&self) -> usize {
        self.activation.iter().filter(|a| a.is_none()).count()
    }

    /// Activation with `-1` for inactive nodes, for file output.
    pub fn activation_or_marker(&self) -> Vec<f64> {
        self.activation.iter().map(|a| a.unwrap_or(-1.0)).collect()
    }

    pub fn max_solver_iterations(&self) -> usize {
        self.solves.iter().map(|s| s.iterations).max().unwrap_or(0)
    }
}

/// Assembled operators and workspaces for one mesh, conductivity field and
/// parameter set.
pub struct Simulator<'m> {
    mesh: &'m Mesh,
    params: SolverParams,
    pattern: MeshPattern,
    mass: Vec<f64>,
    diag_mass: Option<Vec<f64>>,
    base: Vec<f64>,
    system: SparseMatrix,
    stimulus: StimulusMap,
    gmres: Gmres,
    stim_rate: f64,
    a: Vec<f64>,
    load: Vec<f64>,
    rhs: Vec<f64>,
    applied: Vec<f64>,
    /// `u^{n-1}` for the extrapolated initial guess.
    previous: Option<Vec<f64>>,
}

impl<'m> Simulator<'m> {
    pub fn new(mesh: &'m Mesh, tensors: &[Matrix3<f64>], params: &SolverParams, plan: &StimulusPlan) -> Result<Self> {
        params.validate()?;
        plan.validate(params.t_end)?;
        let n = mesh.node_count();
        let pattern = MeshPattern::new(mesh);
        let mass = pattern.mass_values(mesh, params.lumped_mass, params.workers)?;
        let stiff = pattern.stiffness_values(mesh, tensors, params.workers)?;
        let scale = 1.0 / (params.chi * params.c_m);
        let base: Vec<f64> = mass
            .iter()
            .zip(&stiff)
            .map(|(m, k)| m / params.dt + k * scale)
            .collect();
        let diag_mass = params
            .lumped_mass
            .then(|| pattern.diag_slots().iter().map(|&k| mass[k]).collect());
        let system = pattern.matrix(base.clone());
        let stimulus = StimulusMap::new(
            mesh,
            plan,
            params.stimulus_radius,
            params.stimulus_duration,
            params.stimulus_amplitude,
        );
        Ok(Simulator {
            mesh,
            params: params.clone(),
            pattern,
            mass,
            diag_mass,
            base,
            system,
            stimulus,
            gmres: Gmres::new(params.gmres)?,
            stim_rate: ionic::stimulus_rate(1.0, params.chi, params.c_m),
            a: vec![0.0; n],
            load: vec![0.0; n],
            rhs: vec![0.0; n],
            applied: vec![0.0; n],
            previous: None,
        })
    }

    pub fn params(&self) -> &SolverParams {
        &self.params
    }

    pub fn stimulus(&self) -> &StimulusMap {
        &self.stimulus
    }

    /// `b = M x`
    fn mass_apply(&self, x: &[f64], b: &mut [f64]) {
        match &self.diag_mass {
            Some(d) => {
                for ((bi, di), xi) in b.iter_mut().zip(d).zip(x) {
                    *bi = di * xi;
                }
            }
            None => {
                let rp = self.pattern.row_ptr();
                let ci = self.pattern.col_idx();
                for (i, bi) in b.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for k in rp[i]..rp[i + 1] {
                        s += self.mass[k] * x[ci[k]];
                    }
                    *bi = s;
                }
            }
        }
    }

    /// Advances `state` from step `n` to `n + 1`.
    pub fn step(&mut self, state: &mut TissueState, n: usize) -> Result<SolveReport> {
        let p = &self.params;
        let dt = p.dt;
        let t_next = (n + 1) as f64 * dt;
        let ion = &p.ionic;
        for (w, &u) in state.w.iter_mut().zip(&state.u) {
            *w = ionic::step_gating(*w, u, dt, ion);
        }
        self.stimulus.current_at(t_next, &mut self.applied);
        let semi = p.reaction == ReactionMode::SemiImplicit;
        for i in 0..state.u.len() {
            let (a, r) = ionic::linearized_current(state.u[i], state.w[i], ion);
            let s = self.applied[i] * self.stim_rate;
            if semi {
                self.a[i] = a;
                self.load[i] = state.u[i] / dt - r + s;
            } else {
                self.load[i] = state.u[i] / dt - (a * state.u[i] + r) + s;
            }
        }
        let mut rhs = std::mem::take(&mut self.rhs);
        self.mass_apply(&self.load, &mut rhs);
        self.rhs = rhs;

        if semi {
            let values = self.system.values_mut();
            values.copy_from_slice(&self.base);
            match &self.diag_mass {
                Some(d) => {
                    for (i, &k) in self.pattern.diag_slots().iter().enumerate() {
                        values[k] += d[i] * self.a[i];
                    }
                }
                None => {
                    let ci = self.pattern.col_idx();
                    for (k, v) in values.iter_mut().enumerate() {
                        *v += self.mass[k] * self.a[ci[k]];
                    }
                }
            }
        }
        // Linear extrapolation in time; only the starting point of the solve.
        let u_n = state.u.clone();
        if let Some(prev) = &self.previous {
            if prev.len() == u_n.len() {
                for (u, p) in state.u.iter_mut().zip(prev) {
                    *u = 2.0 * *u - p;
                }
            }
        }
        self.previous = Some(u_n);
        let report = self
            .gmres
            .solve(&self.system, &self.rhs, &mut state.u)
            .map_err(|e| Error::Step {
                step: n + 1,
                source: Box::new(e),
            })?;
        if let Some((i, u)) = state
            .u
            .iter()
            .enumerate()
            .find(|(_, u)| !(u.abs() <= self.params.divergence_bound))
        {
            return Err(Error::Diverged {
                step: n + 1,
                time: t_next,
                message: format!("u = {u} at node {i}"),
            });
        }
        Ok(report)
    }

    /// Runs `[0, T]` from rest.
    pub fn run(&mut self) -> Result<SimulationOutput> {
        self.run_watching(&[], 0.0)
    }

    /// Like [`run`](Self::run) but stops early once every node in `watch`
    /// has stayed above the activation threshold for `settle` ms. Nodes
    /// outside `watch` may then be reported inactive.
    pub fn run_watching(&mut self, watch: &[usize], settle: f64) -> Result<SimulationOutput> {
        let n = self.mesh.node_count();
        if let Some(&i) = watch.iter().find(|&&i| i >= n) {
            return Err(Error::invalid(format!("watched node {i} outside a mesh of {n}")));
        }
        let mut crossed: Vec<Option<usize>> = vec![None; watch.len()];
        let settle_steps = (settle / self.params.dt).ceil() as usize;
        let steps = self.params.steps();
        let dt = self.params.dt;
        let mut state = TissueState::rest(n);
        let mut prev = state.u.clone();
        let mut tracker = ActivationTracker::new(n, dt);
        let mut snapshots = Vec::new();
        let mut pending: Vec<(usize, f64)> = self
            .params
            .snapshot_times
            .iter()
            .map(|&t| ((t / dt).round() as usize, t))
            .collect();
        pending.sort_by_key(|&(k, _)| k);
        let mut pending = pending.into_iter().peekable();
        while let Some(&(0, t)) = pending.peek() {
            snapshots.push((t, state.u.clone()));
            pending.next();
        }
        let mut solves = Vec::with_capacity(steps);
        for step in 0..steps {
            let report = self.step(&mut state, step)?;
            solves.push(report);
            tracker.observe(step + 1, &prev, &state.u);
            prev.copy_from_slice(&state.u);
            let mut settled = !watch.is_empty();
            for (c, &i) in crossed.iter_mut().zip(watch) {
                if c.is_none() && state.u[i] >= self.params.activation_threshold {
                    *c = Some(step + 1);
                }
                settled &= c.is_some_and(|k| step + 1 >= k + settle_steps);
            }
            while let Some(&(k, ts)) = pending.peek() {
                if k != step + 1 {
                    break;
                }
                snapshots.push((ts, state.u.clone()));
                pending.next();
            }
            if (step + 1) % 100 == 0 {
                let active = tracker.activated_count(self.params.activation_threshold);
                debug!(
                    "t = {:.3} ms: {active}/{n} nodes activated, GMRES {} iterations (residual {:.1e})",
                    (step + 1) as f64 * dt,
                    report.iterations, report.residual
                );
            }
            if settled {
                debug!("watched nodes settled at t = {:.3} ms", (step + 1) as f64 * dt);
                break;
            }
        }
        let end_time = solves.len() as f64 * dt;
        let (activation, peak) = tracker.finish(self.params.activation_threshold);
        Ok(SimulationOutput {
            activation,
            peak,
            snapshots,
            solves,
            dt,
            end_time,
        })
    }
}

/// Full run on `mesh`. Without fibers the tissue is isotropic with `σ_f`.
pub fn simulate(
    mesh: &Mesh,
    fibers: Option<&FiberField>,
    params: &SolverParams,
    plan: &StimulusPlan,
) -> Result<SimulationOutput> {
    let tensors = tissue_tensors(mesh, fibers, params.sigma)?;
    Simulator::new(mesh, &tensors, params, plan)?.run()
}

/// Planar front speed (m/s) along `axis` from node activation times in the
/// coordinate window `[lo, hi]` (cm). A line `x = c τ + b` is fitted through
/// the mean activation time of each node plane.
pub fn measure_planar_cv(mesh: &Mesh, activation: &[Option<f64>], axis: usize, window: (f64, f64)) -> Result<f64> {
    if axis > 2 {
        return Err(Error::invalid(format!("axis {axis} is not 0, 1 or 2")));
    }
    let tol = 1e-6 * mesh.characteristic_size();
    let mut planes: Vec<(f64, f64, usize)> = Vec::new();
    let mut order: Vec<usize> = (0..mesh.node_count()).collect();
    order.sort_by(|&a, &b| mesh.nodes()[a][axis].total_cmp(&mesh.nodes()[b][axis]));
    for i in order {
        let x = mesh.nodes()[i][axis];
        if x < window.0 - tol || x > window.1 + tol {
            continue;
        }
        let Some(t) = activation[i] else { continue };
        match planes.last_mut() {
            Some(pl) if (pl.0 - x).abs() <= tol => {
                pl.1 += t;
                pl.2 += 1;
            }
            _ => planes.push((x, t, 1)),
        }
    }
    if planes.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} activated node planes in [{}, {}] along axis {axis}; need at least 4",
            planes.len(),
            window.0,
            window.1
        )));
    }
    let pts: Vec<(f64, f64)> = planes.iter().map(|&(x, t, c)| (t / c as f64, x)).collect();
    let k = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let mx = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if stt == 0.0 {
        return Err(Error::Degenerate("all sample planes activate simultaneously".into()));
    }
    let stx: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - mx)).sum();
    // cm/ms to m/s
    Ok(stx / stt * 10.0)
}
