use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use cardiac_core::activation::{write_correlation_csv, write_report_csv};
use cardiac_core::calibration::{
    calibrate, inputs_from_samples, pooled_regression, read_trace_csv, write_trace_csv, TissueModel,
};
use cardiac_core::fibers::fibers_for_mesh;
use cardiac_core::geometry::vtk::{self, FieldData};
use cardiac_core::registration::{read_measurements, read_reference_pairs, register, write_grouped, Registration};
use cardiac_core::solver::simulate;
use cardiac_core::twin::build_twin;
use cardiac_core::{Conductivities, FiberField, Group, Mesh, SolverParams, StimulusPlan};
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::{FiberMode, MeshSpec, RegistrationFiles, RunConfig};
use crate::error::CliError;
use crate::output::Outputs;

/// Options shared by every subcommand after flag overrides.
pub struct Context {
    pub config: RunConfig,
    pub mesh_path: Option<PathBuf>,
    pub out: PathBuf,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
}

impl Context {
    fn mesh(&self) -> Result<Mesh, CliError> {
        let mesh = match (&self.mesh_path, &self.config.mesh) {
            (Some(p), _) => vtk::read_mesh(p)?,
            (None, Some(spec)) => spec.build()?,
            (None, None) => return Err(CliError::Usage("no mesh: pass --mesh or add a [mesh] section".into())),
        };
        info!("mesh: {} nodes, {} elements", mesh.node_count(), mesh.element_count());
        Ok(mesh)
    }

    fn solver(&self) -> SolverParams {
        let mut p = self.config.solver.clone();
        if let Some(w) = self.workers {
            p.workers = w;
        }
        p
    }

    fn fibers(&self, mesh: &Mesh) -> Result<Option<FiberField>, CliError> {
        let spec = &self.config.fibers;
        Ok(match spec.mode {
            FiberMode::None => None,
            FiberMode::Rule => Some(fibers_for_mesh(mesh, &spec.angles())?),
            FiberMode::File => {
                let path = spec.path.as_ref().expect("validated");
                let f = FiberField::read_vtk(path)?;
                if f.len() != mesh.node_count() {
                    return Err(CliError::Usage(format!(
                        "{}: {} fiber vectors for a mesh of {} nodes",
                        path.display(),
                        f.len(),
                        mesh.node_count()
                    )));
                }
                Some(f)
            }
        })
    }

    fn registration_files(&self) -> Result<&RegistrationFiles, CliError> {
        self.config
            .registration
            .as_ref()
            .ok_or_else(|| CliError::Usage("this subcommand needs a [registration] section".into()))
    }

    fn register(&self, mesh: &Mesh) -> Result<Registration, CliError> {
        let files = self.registration_files()?;
        let cloud = read_measurements(&files.measurements)?;
        let (src, tgt) = read_reference_pairs(&files.reference_pairs)?;
        let reg = register(&cloud, &src, &tgt, mesh)?;
        info!(
            "registered {} points; vein projection max {:.4} cm, mean {:.4} cm",
            reg.samples.len(),
            reg.vein_projection.max_displacement(),
            reg.vein_projection.mean_displacement()
        );
        Ok(reg)
    }
}

fn to_toml<T: Serialize>(value: &T) -> Result<String, CliError> {
    toml::to_string(value).map_err(|e| CliError::Usage(format!("cannot serialize output: {e}")))
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

#[derive(Serialize)]
struct Manifest<'a> {
    created_unix: u64,
    elapsed_s: f64,
    version: &'static str,
    config: &'a RunConfig,
}

fn write_manifest(out: &mut Outputs, ctx: &Context, started: Instant) -> Result<(), CliError> {
    let m = Manifest {
        created_unix: unix_now(),
        elapsed_s: started.elapsed().as_secs_f64(),
        version: env!("CARGO_PKG_VERSION"),
        config: &ctx.config,
    };
    out.write_text("manifest.toml", &to_toml(&m)?)?;
    Ok(())
}

pub fn gen_mesh(ctx: &Context) -> Result<(), CliError> {
    match &ctx.config.mesh {
        Some(MeshSpec::File { .. }) | None => {
            return Err(CliError::Usage("gen-mesh needs a [mesh] section of kind slab or lv".into()))
        }
        Some(_) => {}
    }
    let mesh = ctx.config.mesh.as_ref().expect("checked").build()?;
    mesh.audit()?;
    let mut out = Outputs::new(&ctx.out)?;
    let path = out.mesh_file("mesh.vtk");
    vtk::write_mesh(&path, &mesh)?;
    println!(
        "{}: {} nodes, {} elements, {} boundary faces",
        path.display(),
        mesh.node_count(),
        mesh.element_count(),
        mesh.boundary().len()
    );
    out.commit();
    Ok(())
}

pub fn gen_fibers(ctx: &Context) -> Result<(), CliError> {
    if ctx.config.fibers.mode != FiberMode::Rule {
        return Err(CliError::Usage("gen-fibers needs fibers.mode = \"rule\"".into()));
    }
    let mesh = ctx.mesh()?;
    let fibers = fibers_for_mesh(&mesh, &ctx.config.fibers.angles())?;
    let singular = fibers.singular.iter().filter(|s| **s).count();
    let mut out = Outputs::new(&ctx.out)?;
    let path = out.file("fibers.vtk");
    fibers.write_vtk(&path, &mesh)?;
    println!(
        "{}: {} nodes, {singular} singular, orthonormality defect {:.2e}",
        path.display(),
        fibers.len(),
        fibers.orthonormality_defect()
    );
    out.commit();
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct RegistrationSummary {
    rotation: [[f64; 3]; 3],
    /// cm
    translation: [f64; 3],
    septal_points: usize,
    group_i: usize,
    group_ii: usize,
    septum_max_displacement_cm: f64,
    septum_mean_displacement_cm: f64,
    vein_max_displacement_cm: f64,
    vein_mean_displacement_cm: f64,
}

fn registration_summary(reg: &Registration) -> RegistrationSummary {
    let r = reg.transform.rotation;
    RegistrationSummary {
        rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
        translation: reg.transform.translation.into(),
        septal_points: reg.group(Group::Input).count(),
        group_i: reg.group(Group::I).count(),
        group_ii: reg.group(Group::II).count(),
        septum_max_displacement_cm: reg.septum_projection.max_displacement(),
        septum_mean_displacement_cm: reg.septum_projection.mean_displacement(),
        vein_max_displacement_cm: reg.vein_projection.max_displacement(),
        vein_mean_displacement_cm: reg.vein_projection.mean_displacement(),
    }
}

pub fn register_cmd(ctx: &Context) -> Result<(), CliError> {
    let mesh = ctx.mesh()?;
    let reg = ctx.register(&mesh)?;
    let summary = registration_summary(&reg);
    let mut out = Outputs::new(&ctx.out)?;
    write_grouped(&out.file("registered.csv"), &mesh, &reg.samples)?;
    out.write_text("registration.toml", &to_toml(&summary)?)?;
    println!(
        "{} septal, {} group I, {} group II points; vein displacement max {:.3} mm, mean {:.3} mm",
        summary.septal_points,
        summary.group_i,
        summary.group_ii,
        10.0 * summary.vein_max_displacement_cm,
        10.0 * summary.vein_mean_displacement_cm
    );
    out.commit();
    Ok(())
}

pub fn simulate_cmd(ctx: &Context) -> Result<(), CliError> {
    let started = Instant::now();
    let mesh = ctx.mesh()?;
    let fibers = ctx.fibers(&mesh)?;
    let params = ctx.solver();
    let plan = if !ctx.config.stimulus.is_empty() {
        StimulusPlan::new(ctx.config.stimulus.clone())
    } else if ctx.config.registration.is_some() {
        let reg = ctx.register(&mesh)?;
        inputs_from_samples(&reg.samples, None)?.plan
    } else {
        return Err(CliError::Usage("no stimulus: add [[stimulus]] entries or a [registration] section".into()));
    };
    let output = simulate(&mesh, fibers.as_ref(), &params, &plan)?;

    let mut out = Outputs::new(&ctx.out)?;
    vtk::write_fields(
        &out.file("activation.vtk"),
        &mesh,
        &[
            ("activation", FieldData::Scalar(output.activation_or_marker())),
            ("peak", FieldData::Scalar(output.peak.clone())),
        ],
    )?;
    for (k, (t, u)) in output.snapshots.iter().enumerate() {
        let name = format!("snapshot_{k:03}.vtk");
        vtk::write_fields(&out.file(&name), &mesh, &[("u", FieldData::Scalar(u.clone()))])?;
        info!("{name}: t = {t} ms");
    }
    params.ionic.write_manifest(&out.file("ionic.toml"))?;
    write_manifest(&mut out, ctx, started)?;
    let latest = output.activation.iter().flatten().cloned().fold(f64::NAN, f64::max);
    println!(
        "{} nodes, {} not activated, latest activation {latest:.3} ms, at most {} GMRES iterations per step",
        mesh.node_count(),
        output.not_activated(),
        output.max_solver_iterations()
    );
    out.commit();
    Ok(())
}

/// Contents of `result.toml`, also read back by `report`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ResultSummary {
    pub sigma_hat: Conductivities,
    pub converged: bool,
    pub iterations: usize,
    pub chosen_iteration: usize,
    pub calibration_points: usize,
    pub validation_points: usize,
    pub vein_max_displacement_cm: f64,
}

pub fn calibrate_cmd(ctx: &Context) -> Result<(), CliError> {
    let started = Instant::now();
    let mesh = ctx.mesh()?;
    let fibers = ctx.fibers(&mesh)?;
    let reg = ctx.register(&mesh)?;
    let inputs = inputs_from_samples(&reg.samples, ctx.registration_files()?.keep_group_i)?;
    let mut model = TissueModel {
        mesh: &mesh,
        fibers: fibers.as_ref(),
        params: ctx.solver(),
        plan: inputs.plan.clone(),
    };
    let result = calibrate(&mut model, &inputs.cal, &inputs.val, &ctx.config.calibration)?;

    let mut out = Outputs::new(&ctx.out)?;
    write_grouped(&out.file("registered.csv"), &mesh, &reg.samples)?;
    write_trace_csv(&out.file("trace.csv"), &result.iterations)?;
    write_report_csv(
        &out.file("report.csv"),
        &[("I".into(), &result.calibration), ("II".into(), &result.validation)],
    )?;
    if let Some(p) = pooled_regression(&result, &inputs.cal, &inputs.val) {
        // Appended rows for the regression over both groups.
        let path = ctx.out.join("report.csv");
        let mut text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        for (m, v) in [("slope", p.slope), ("intercept_ms", p.intercept), ("r2", p.r2)] {
            let _ = writeln!(text, "I+II,{m},{v:.10e}");
        }
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    }
    let computed: Vec<Option<f64>> = result.computed_cal.iter().chain(&result.computed_val).copied().collect();
    let measured: Vec<f64> = inputs.cal.iter().chain(&inputs.val).map(|t| t.tau).collect();
    write_correlation_csv(&out.file("correlation.csv"), &computed, &measured)?;
    let marker: Vec<f64> = result.activation.iter().map(|a| a.unwrap_or(-1.0)).collect();
    vtk::write_fields(&out.file("activation.vtk"), &mesh, &[("activation", FieldData::Scalar(marker))])?;
    let summary = ResultSummary {
        sigma_hat: result.sigma_hat,
        converged: result.converged,
        iterations: result.iterations.len(),
        chosen_iteration: result.chosen(),
        calibration_points: inputs.cal.len(),
        validation_points: inputs.val.len(),
        vein_max_displacement_cm: reg.vein_projection.max_displacement(),
    };
    out.write_text("result.toml", &to_toml(&summary)?)?;
    write_manifest(&mut out, ctx, started)?;
    let s = result.sigma_hat;
    println!(
        "sigma = ({:.4}, {:.4}, {:.4}) mS/cm after {} iterations ({}); e_I {:.2} %, e_II {:.2} %",
        s.f,
        s.s,
        s.n,
        summary.iterations,
        if result.converged { "converged" } else { "not converged" },
        100.0 * result.calibration.mean_rel_max,
        100.0 * result.validation.mean_rel_max
    );
    out.commit();
    Ok(())
}

fn read_report_rows(path: &Path) -> Result<BTreeMap<(String, String), f64>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut rows = BTreeMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let parts: Vec<&str> = line.trim_end_matches('\r').split(',').collect();
        let bad = || CliError::Config {
            path: path.to_path_buf(),
            message: format!("line {}: expected group,metric,value", i + 1),
        };
        if parts.len() != 3 {
            return Err(bad());
        }
        let v: f64 = parts[2].parse().map_err(|_| bad())?;
        rows.insert((parts[0].to_string(), parts[1].to_string()), v);
    }
    Ok(rows)
}

pub fn report(dir: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let need = |name: &str| {
        let p = dir.join(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(CliError::Usage(format!("missing {} in {}", name, dir.display())))
        }
    };
    let trace = read_trace_csv(&need("trace.csv")?)?;
    let rows = read_report_rows(&need("report.csv")?)?;
    let result_path = need("result.toml")?;
    let text = std::fs::read_to_string(&result_path).map_err(|e| CliError::io(&result_path, e))?;
    let result: ResultSummary = toml::from_str(&text).map_err(|e| CliError::Config {
        path: result_path.clone(),
        message: e.to_string(),
    })?;
    let get = |g: &str, m: &str| rows.get(&(g.to_string(), m.to_string())).copied();
    let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.2}", 100.0 * v));
    let num = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));

    let mut s = String::new();
    let _ = writeln!(
        s,
        "Conductivities (mS/cm), {} after {} iterations (estimate from iteration {})",
        if result.converged { "converged" } else { "not converged" },
        result.iterations,
        result.chosen_iteration
    );
    let _ = writeln!(s, "  sigma_f {:.4}  sigma_s {:.4}  sigma_n {:.4}", result.sigma_hat.f, result.sigma_hat.s, result.sigma_hat.n);
    let _ = writeln!(s, "  vein projection: max displacement {:.3} mm", 10.0 * result.vein_max_displacement_cm);
    let _ = writeln!(s);
    let _ = writeln!(s, "Relative errors (%)");
    let _ = writeln!(s, "  group  points  missing  e_max   sd     e_point  sd     slope  R2");
    for g in ["I", "II", "I+II"] {
        let _ = writeln!(
            s,
            "  {g:<5}  {:>6}  {:>7}  {:>6}  {:>5}  {:>7}  {:>5}  {:>5}  {:>5}",
            get(g, "count").map_or("-".into(), |v| format!("{v:.0}")),
            get(g, "not_activated").map_or("-".into(), |v| format!("{v:.0}")),
            pct(get(g, "mean_rel_max")),
            pct(get(g, "std_rel_max")),
            pct(get(g, "mean_rel_point")),
            pct(get(g, "std_rel_point")),
            num(get(g, "slope")),
            num(get(g, "r2")),
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "Absolute errors (ms): min / Q1 / median / Q3 / max");
    for g in ["I", "II"] {
        let f = ["abs_min_ms", "abs_q1_ms", "abs_median_ms", "abs_q3_ms", "abs_max_ms"].map(|m| num(get(g, m)));
        let _ = writeln!(s, "  {g:<3} {}", f.join(" / "));
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "Iterations");
    let _ = writeln!(s, "  iter  sigma_f  sigma_s  sigma_n  E (ms)     F (ms2)    e_I (%)");
    for it in &trace {
        let _ = writeln!(
            s,
            "  {:>4}  {:.4}   {:.4}   {:.4}   {:>9.3}  {:>9.3}  {:>6.2}",
            it.iter,
            it.sigma.f,
            it.sigma.s,
            it.sigma.n,
            it.e_sum_ms,
            it.f_ms2,
            100.0 * it.e_cal
        );
    }
    print!("{s}");
    if let Some(dir) = out {
        let mut o = Outputs::new(dir)?;
        o.write_text("report.txt", &s)?;
        o.commit();
    }
    Ok(())
}

pub fn gen_twin(ctx: &Context) -> Result<(), CliError> {
    let mut cfg = ctx.config.twin.clone().unwrap_or_default();
    if let Some(seed) = ctx.seed {
        cfg.seed = seed;
    }
    if let Some(w) = ctx.workers {
        cfg.solver.workers = w;
    }
    let twin = build_twin(&cfg)?;
    let mut out = Outputs::new(&ctx.out)?;
    for f in ["measurements.csv", "reference_pairs.csv", "reference_pairs_perturbed.csv", "truth.toml"] {
        out.file(f);
    }
    twin.write(&ctx.out)?;
    println!(
        "{} septal and {} vein points on a mesh of {} nodes",
        twin.septal_nodes.len(),
        twin.vein_nodes.len(),
        twin.mesh.node_count()
    );
    out.commit();
    Ok(())
}
