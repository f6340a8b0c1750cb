//! Measured point clouds: ingest, rigid alignment and projection onto the
//! mesh surface.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Matrix3;

use crate::activation::{ActivationSample, Group, Site};
use crate::error::{Error, Result};
use crate::geometry::{Mesh, SurfaceTag, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasuredPoint {
    /// cm
    pub location: Vec3,
    /// ms
    pub tau: f64,
    pub site: Site,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawCloud {
    pub points: Vec<MeasuredPoint>,
}

impl RawCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, t: &RigidTransform) -> RawCloud {
        RawCloud {
            points: self
                .points
                .iter()
                .map(|p| MeasuredPoint {
                    location: t.apply(&p.location),
                    ..*p
                })
                .collect(),
        }
    }
}

fn parse_site(s: &str) -> Option<Site> {
    match s.trim().to_ascii_lowercase().as_str() {
        "septum" => Some(Site::Septum),
        "vein" => Some(Site::Vein),
        _ => None,
    }
}

fn site_name(s: Site) -> &'static str {
    match s {
        Site::Septum => "septum",
        Site::Vein => "vein",
    }
}

/// Column lookup over a headered CSV; row numbers count the header as line 1.
struct Table {
    path: std::path::PathBuf,
    columns: Vec<usize>,
    rows: Vec<(usize, csv::StringRecord)>,
}

impl Table {
    fn read(path: &Path, required: &[&str]) -> Result<Table> {
        let parse = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(path, io),
                other => parse(1, format!("{other:?}")),
            })?;
        let header = rdr.headers().map_err(|e| parse(1, e.to_string()))?.clone();
        let mut columns = Vec::with_capacity(required.len());
        for name in required {
            let idx = header
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| parse(1, format!("missing column `{name}`")))?;
            columns.push(idx);
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| parse(line, e.to_string()))?;
            if rec.iter().all(|f| f.is_empty()) {
                continue;
            }
            rows.push((line, rec));
        }
        Ok(Table {
            path: path.to_path_buf(),
            columns,
            rows,
        })
    }

    fn field<'a>(&self, rec: &'a csv::StringRecord, line: usize, col: usize) -> Result<&'a str> {
        rec.get(self.columns[col]).ok_or_else(|| Error::Parse {
            path: self.path.clone(),
            line,
            message: "row has too few fields".into(),
        })
    }

    fn number(&self, rec: &csv::StringRecord, line: usize, col: usize, name: &str) -> Result<f64> {
        let raw = self.field(rec, line, col)?;
        let v: f64 = raw.parse().map_err(|_| Error::Parse {
            path: self.path.clone(),
            line,
            message: format!("`{name}` is not a number: `{raw}`"),
        })?;
        if !v.is_finite() {
            return Err(self.invalid(line, format!("`{name}` is not finite")));
        }
        Ok(v)
    }

    fn invalid(&self, row: usize, message: String) -> Error {
        Error::Validation {
            path: self.path.clone(),
            row,
            message,
        }
    }
}

const MEASUREMENT_COLUMNS: [&str; 5] = ["x_mm", "y_mm", "z_mm", "t_ms", "site"];

fn read_points(table: &Table) -> Result<Vec<(usize, MeasuredPoint)>> {
    let mut out = Vec::with_capacity(table.rows.len());
    for (line, rec) in &table.rows {
        let line = *line;
        let mut mm = [0.0; 3];
        for (k, v) in mm.iter_mut().enumerate() {
            *v = table.number(rec, line, k, MEASUREMENT_COLUMNS[k])?;
        }
        let tau = table.number(rec, line, 3, "t_ms")?;
        if tau < 0.0 {
            return Err(table.invalid(line, format!("negative activation time {tau} ms")));
        }
        let raw = table.field(rec, line, 4)?;
        let site = parse_site(raw).ok_or_else(|| table.invalid(line, format!("unknown site `{raw}`")))?;
        out.push((
            line,
            MeasuredPoint {
                location: Vec3::new(mm[0], mm[1], mm[2]) / 10.0,
                tau,
                site,
            },
        ));
    }
    Ok(out)
}

/// Reads `x_mm,y_mm,z_mm,t_ms,site`; coordinates come back in cm.
pub fn read_measurements(path: &Path) -> Result<RawCloud> {
    let table = Table::read(path, &MEASUREMENT_COLUMNS)?;
    Ok(RawCloud {
        points: read_points(&table)?.into_iter().map(|(_, p)| p).collect(),
    })
}

pub fn write_measurements(path: &Path, cloud: &RawCloud) -> Result<()> {
    let csv_err = |e: csv::Error| Error::invalid(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(MEASUREMENT_COLUMNS).map_err(csv_err)?;
    for p in &cloud.points {
        let mm = p.location * 10.0;
        w.write_record([
            format!("{:.9}", mm.x),
            format!("{:.9}", mm.y),
            format!("{:.9}", mm.z),
            format!("{:.6}", p.tau),
            site_name(p.site).to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Projected samples in the measurement schema plus `group` and `node`.
pub fn write_grouped(path: &Path, mesh: &Mesh, samples: &[ActivationSample]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::invalid(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["x_mm", "y_mm", "z_mm", "t_ms", "site", "group", "node"])
        .map_err(csv_err)?;
    for s in samples {
        let mm = mesh.nodes()[s.node] * 10.0;
        w.write_record([
            format!("{:.9}", mm.x),
            format!("{:.9}", mm.y),
            format!("{:.9}", mm.z),
            format!("{:.6}", s.tau),
            site_name(s.site).to_string(),
            s.group.to_string(),
            s.node.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a file from [`write_grouped`]. Node indices are checked against
/// `node_count`.
pub fn read_grouped(path: &Path, node_count: usize) -> Result<Vec<ActivationSample>> {
    let table = Table::read(path, &["x_mm", "y_mm", "z_mm", "t_ms", "site", "group", "node"])?;
    let points = read_points(&table)?;
    let mut out = Vec::with_capacity(points.len());
    for ((line, p), (_, rec)) in points.into_iter().zip(&table.rows) {
        let g = table.field(rec, line, 5)?;
        let group = match g {
            "INPUT" => Group::Input,
            "I" => Group::I,
            "II" => Group::II,
            _ => return Err(table.invalid(line, format!("unknown group `{g}`"))),
        };
        if (group == Group::Input) != (p.site == Site::Septum) {
            return Err(table.invalid(line, format!("group {group} does not match site {}", site_name(p.site))));
        }
        let raw = table.field(rec, line, 6)?;
        let node: usize = raw.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("`node` is not an index: `{raw}`"),
        })?;
        if node >= node_count {
            return Err(table.invalid(line, format!("node {node} outside a mesh of {node_count}")));
        }
        out.push(ActivationSample {
            location: p.location,
            tau: p.tau,
            site: p.site,
            group,
            node,
        });
    }
    Ok(out)
}

/// Three labelled source/target pairs from `label,frame,x_mm,y_mm,z_mm` with
/// `frame` in {source, target}. Pairs are ordered by first appearance.
pub fn read_reference_pairs(path: &Path) -> Result<([Vec3; 3], [Vec3; 3])> {
    let table = Table::read(path, &["label", "frame", "x_mm", "y_mm", "z_mm"])?;
    let mut order: Vec<String> = Vec::new();
    let mut found: BTreeMap<(String, bool), Vec3> = BTreeMap::new();
    for (line, rec) in &table.rows {
        let line = *line;
        let label = table.field(rec, line, 0)?.to_string();
        let is_source = match table.field(rec, line, 1)?.to_ascii_lowercase().as_str() {
            "source" => true,
            "target" => false,
            other => return Err(table.invalid(line, format!("frame must be source or target, got `{other}`"))),
        };
        let mut mm = [0.0; 3];
        for (k, v) in mm.iter_mut().enumerate() {
            *v = table.number(rec, line, k + 2, ["x_mm", "y_mm", "z_mm"][k])?;
        }
        if !order.contains(&label) {
            order.push(label.clone());
        }
        if found
            .insert((label.clone(), is_source), Vec3::new(mm[0], mm[1], mm[2]) / 10.0)
            .is_some()
        {
            return Err(table.invalid(line, format!("duplicate {} point for `{label}`", if is_source { "source" } else { "target" })));
        }
    }
    if order.len() != 3 {
        return Err(Error::invalid(format!(
            "{}: expected 3 reference labels, found {}",
            path.display(),
            order.len()
        )));
    }
    let mut src = [Vec3::zeros(); 3];
    let mut tgt = [Vec3::zeros(); 3];
    for (k, label) in order.iter().enumerate() {
        let get = |s: bool| {
            found.get(&(label.clone(), s)).copied().ok_or_else(|| {
                Error::invalid(format!(
                    "{}: `{label}` has no {} point",
                    path.display(),
                    if s { "source" } else { "target" }
                ))
            })
        };
        src[k] = get(true)?;
        tgt[k] = get(false)?;
    }
    Ok((src, tgt))
}

pub fn write_reference_pairs(path: &Path, src: &[Vec3; 3], tgt: &[Vec3; 3]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::invalid(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["label", "frame", "x_mm", "y_mm", "z_mm"]).map_err(csv_err)?;
    for (k, (s, t)) in src.iter().zip(tgt).enumerate() {
        for (frame, p) in [("source", s), ("target", t)] {
            let mm = p * 10.0;
            w.write_record([
                format!("R{}", k + 1),
                frame.to_string(),
                format!("{:.9}", mm.x),
                format!("{:.9}", mm.y),
                format!("{:.9}", mm.z),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    /// cm
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Rotation by `angle` (rad) about `axis`, then translation.
    pub fn from_axis_angle(axis: Vec3, angle: f64, translation: Vec3) -> Self {
        let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        RigidTransform {
            rotation: *rot.matrix(),
            translation,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Largest deviation of `RᵀR` from the identity and of `det R` from 1.
    pub fn orthonormality_defect(&self) -> f64 {
        let e = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        e.max((self.rotation.determinant() - 1.0).abs())
    }
}

fn triangle_area(p: &[Vec3; 3]) -> f64 {
    0.5 * (p[1] - p[0]).cross(&(p[2] - p[0])).norm()
}

/// Least-squares rotation and translation taking `source[i]` to `target[i]`,
/// exact when the triangles are congruent.
pub fn rigid_from_three_pairs(source: &[Vec3; 3], target: &[Vec3; 3]) -> Result<RigidTransform> {
    for (name, tri) in [("source", source), ("target", target)] {
        let area = triangle_area(tri);
        if !(area > 1e-8) {
            return Err(Error::Degenerate(format!(
                "{name} reference points are collinear (triangle area {area:.3e} cm²)"
            )));
        }
    }
    let cs = (source[0] + source[1] + source[2]) / 3.0;
    let ct = (target[0] + target[1] + target[2]) / 3.0;
    let mut h = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        h += (s - cs) * (t - ct).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    Ok(RigidTransform {
        rotation,
        translation: ct - rotation * cs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub nodes: Vec<usize>,
    /// cm, one per point
    pub displacements: Vec<f64>,
}

impl Projection {
    pub fn max_displacement(&self) -> f64 {
        self.displacements.iter().cloned().fold(0.0, f64::max)
    }

    pub fn mean_displacement(&self) -> f64 {
        if self.displacements.is_empty() {
            return 0.0;
        }
        self.displacements.iter().sum::<f64>() / self.displacements.len() as f64
    }
}

/// Snaps each point to its nearest node on the surfaces carrying `tags`;
/// equal distances go to the lowest node index.
pub fn nns_project(points: &[Vec3], mesh: &Mesh, tags: &[SurfaceTag]) -> Result<Projection> {
    let candidates = mesh.surface_nodes(tags);
    if candidates.is_empty() {
        return Err(Error::invalid(format!("no boundary nodes carry tags {tags:?}")));
    }
    let nodes = mesh.nodes();
    let mut out = Projection {
        nodes: Vec::with_capacity(points.len()),
        displacements: Vec::with_capacity(points.len()),
    };
    for p in points {
        // `surface_nodes` is sorted, so the strict comparison keeps the
        // lowest index among equals.
        let mut best = (f64::INFINITY, usize::MAX);
        for &i in &candidates {
            let d2 = (nodes[i] - p).norm_squared();
            if d2 < best.0 {
                best = (d2, i);
            }
        }
        out.nodes.push(best.1);
        out.displacements.push(best.0.sqrt());
    }
    Ok(out)
}

/// Indices of the earliest `⌈N/2⌉` samples (group I) and the rest (group II),
/// each in ascending activation order. Equal times keep acquisition order.
pub fn split_groups(taus: &[f64]) -> Result<(Vec<usize>, Vec<usize>)> {
    if taus.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 vein samples, got {}", taus.len())));
    }
    let mut order: Vec<usize> = (0..taus.len()).collect();
    order.sort_by(|&a, &b| taus[a].total_cmp(&taus[b]));
    let n_i = taus.len().div_ceil(2);
    let ii = order.split_off(n_i);
    Ok((order, ii))
}

#[derive(Debug, Clone)]
pub struct Registration {
    pub transform: RigidTransform,
    /// Septum points first, then group I, then group II.
    pub samples: Vec<ActivationSample>,
    pub septum_projection: Projection,
    pub vein_projection: Projection,
}

impl Registration {
    pub fn group(&self, g: Group) -> impl Iterator<Item = &ActivationSample> {
        self.samples.iter().filter(move |s| s.group == g)
    }
}

/// Full alignment: rigid transform from the reference pairs, septal points
/// onto `ENDO`, vein points onto `EPI`, then the vein split.
pub fn register(cloud: &RawCloud, source: &[Vec3; 3], target: &[Vec3; 3], mesh: &Mesh) -> Result<Registration> {
    let transform = rigid_from_three_pairs(source, target)?;
    let moved = cloud.transformed(&transform);
    let (septum, vein): (Vec<MeasuredPoint>, Vec<MeasuredPoint>) =
        moved.points.iter().partition(|p| p.site == Site::Septum);
    if septum.is_empty() {
        return Err(Error::invalid("no septal points to drive the stimulus"));
    }
    let loc = |v: &[MeasuredPoint]| v.iter().map(|p| p.location).collect::<Vec<_>>();
    let septum_projection = nns_project(&loc(&septum), mesh, &[SurfaceTag::Endo])?;
    let vein_projection = nns_project(&loc(&vein), mesh, &[SurfaceTag::Epi])?;
    let taus: Vec<f64> = vein.iter().map(|p| p.tau).collect();
    let (gi, gii) = split_groups(&taus)?;
    let mut samples = Vec::with_capacity(cloud.len());
    for (p, &node) in septum.iter().zip(&septum_projection.nodes) {
        samples.push(ActivationSample {
            location: mesh.nodes()[node],
            tau: p.tau,
            site: Site::Septum,
            group: Group::Input,
            node,
        });
    }
    for (idx, group) in [(&gi, Group::I), (&gii, Group::II)] {
        for &k in idx {
            let node = vein_projection.nodes[k];
            samples.push(ActivationSample {
                location: mesh.nodes()[node],
                tau: vein[k].tau,
                site: Site::Vein,
                group,
                node,
            });
        }
    }
    Ok(Registration {
        transform,
        samples,
        septum_projection,
        vein_projection,
    })
}
