use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cardiac_core::geometry::vtk;

fn cardiac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cardiac"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn single_cube_mesh_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[mesh]\nkind = \"slab\"\nlengths = [0.1, 0.1, 0.1]\nh = 0.1\n");
    let out = dir.path().join("out");
    let o = cardiac(&["--config", &cfg, "--out", out.to_str().unwrap(), "gen-mesh"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mesh = vtk::read_mesh(&out.join("mesh.vtk")).unwrap();
    assert_eq!(mesh.node_count(), 8);
    assert_eq!(mesh.element_count(), 1);
    assert_eq!(mesh.boundary().len(), 6);
    assert!((mesh.volume() - 1e-3).abs() < 1e-15);
}

#[test]
fn report_names_the_missing_trace() {
    let dir = tempfile::tempdir().unwrap();
    let o = cardiac(&["report", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("trace.csv"), "{}", stderr(&o));
}

#[test]
fn unknown_configuration_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[solver]\ndtt = 0.01\n");
    let o = cardiac(&["--config", &cfg, "gen-mesh"]);
    assert!(!o.status.success());
    let e = stderr(&o);
    assert!(e.contains("run.toml") && e.contains("dtt"), "{e}");
}

#[test]
fn zero_workers_is_a_usage_error() {
    let o = cardiac(&["--workers", "0", "gen-mesh"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--workers"));
}

#[test]
fn failed_run_leaves_no_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[mesh]\nkind = \"slab\"\nlengths = [0.2, 0.2, 0.2]\nh = 0.1\n");
    let out = dir.path().join("sim");
    // No stimulus and no registration section.
    let o = cardiac(&["--config", &cfg, "--out", out.to_str().unwrap(), "simulate"]);
    assert!(!o.status.success());
    assert!(!out.exists());
}

#[test]
fn slab_simulation_writes_fields_and_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[mesh]\nkind = \"slab\"\nlengths = [0.3, 0.2, 0.1]\nh = 0.05\n\n[fibers]\nmode = \"none\"\n\n\
         [solver]\nt_end = 15.0\nsnapshot_times = [5.0]\n\n[[stimulus]]\nlocation = [0.0, 0.0, 0.0]\nonset = 0.0\n",
    );
    let out = dir.path().join("sim");
    let o = cardiac(&["--config", &cfg, "--out", out.to_str().unwrap(), "simulate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["activation.vtk", "snapshot_000.vtk", "manifest.toml", "ionic.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let act = vtk::read_scalar_field(&out.join("activation.vtk"), "activation").unwrap();
    assert_eq!(act.len(), 7 * 5 * 3);
    assert!(act.iter().all(|&a| a == -1.0 || (0.0..15.0).contains(&a)));
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("created_unix") && manifest.contains("[config.solver]"));
}

#[test]
fn twin_fixture_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenarios().join("twin/twin.toml");
    let o = cardiac(&["--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "gen-twin"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["measurements.csv", "reference_pairs.csv", "reference_pairs_perturbed.csv"] {
        let a = fs::read(dir.path().join(f)).unwrap();
        let b = fs::read(scenarios().join("twin/data").join(f)).unwrap();
        assert!(a == b, "{f} differs from the bundled fixture");
    }
}

#[test]
fn calibration_on_the_twin_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a");
    let cfg = scenarios().join("test_a_standard.toml");
    let o = cardiac(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "calibrate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let result = fs::read_to_string(out.join("result.toml")).unwrap();
    assert!(result.contains("converged = true"), "{result}");
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    let e_ii: f64 = report
        .lines()
        .find(|l| l.starts_with("II,mean_rel_max,"))
        .and_then(|l| l.rsplit(',').next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(e_ii < 0.02, "e_II {e_ii}");
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.starts_with("iter,sigma_f,sigma_s,sigma_n,E_ms,F_ms2,eI_pct"));
    let text = cardiac(&["report", out.to_str().unwrap()]);
    assert!(text.status.success(), "{}", stderr(&text));
    let text = String::from_utf8_lossy(&text.stdout);
    assert!(text.contains("sigma_f") && text.contains("Iterations"));
}
