//! On-disk formats: TOML configuration files (`.cfg`) and CSV outputs.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::case_study::{CaseStudy, ManeuverParams, TrackingBaseline};
use crate::error::{Error, Result};
use crate::executor::{Piece, RunSummary, Scenario, TargetSet, TrajectoryLog};
use crate::geometry::{FacetRole, HalfSpace, Point, SimplexId, Triangulation, VertexLabel};
use crate::synthesis::{AffineDynamics, ControlBounds, FacetRoles, HybridController, ModeController, Objective, SimplexController};

pub const BUNDLE_FORMAT: &str = "reachctl-bundle/1";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io { path: path.to_path_buf(), source: e },
    })
}

/// Parsed document plus the SHA-256 of the raw bytes.
pub fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<(T, String)> {
    let bytes = read_bytes(path)?;
    let hash = sha256_hex(&bytes);
    let text = String::from_utf8(bytes).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
    let value = toml::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
    Ok((value, hash))
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Serialize(e.to_string()))
}

pub fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
    }
    std::fs::write(path, contents).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VertexEntry {
    pub label: VertexLabel,
    pub coords: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimplexEntry {
    pub id: u32,
    pub vertices: Vec<VertexLabel>,
    /// Role of the facet opposite each listed vertex.
    pub roles: Vec<FacetRole>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsFile {
    /// Row-major n×n.
    pub a: Vec<Vec<f64>>,
    /// Row-major n×n_u.
    pub b: Vec<Vec<f64>>,
    pub drift: Vec<f64>,
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map(Vec::len).unwrap_or(0);
    if rows.iter().any(|x| x.len() != c) {
        return Err(Error::Dimension(format!("{what}: rows have different lengths")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl DynamicsFile {
    pub fn to_dynamics(&self) -> Result<AffineDynamics> {
        AffineDynamics::new(matrix(&self.a, "A")?, matrix(&self.b, "B")?, DVector::from_vec(self.drift.clone()))
    }

    pub fn from_dynamics(d: &AffineDynamics) -> Self {
        DynamicsFile { a: rows_of(&d.a), b: rows_of(&d.b), drift: d.drift.iter().copied().collect() }
    }
}

/// Mode naming and target for a triangulation whose roles describe one mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    pub mode: String,
    /// Name of the odd-reflected mode; absent for a single-mode design.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mirror_mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mirror_target: Option<String>,
    #[serde(default)]
    pub discontinuity: Vec<VertexLabel>,
    pub target: TargetSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriangulationFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ManeuverParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamics: Option<DynamicsFile>,
    pub vertices: Vec<VertexEntry>,
    pub simplices: Vec<SimplexEntry>,
    #[serde(default)]
    pub region: Vec<HalfSpace>,
}

impl TriangulationFile {
    pub fn triangulation(&self) -> Result<Triangulation> {
        let mut verts = BTreeMap::new();
        for v in &self.vertices {
            if verts.insert(v.label, Point::from_vec(v.coords.clone())).is_some() {
                return Err(Error::Duplicate { what: "vertex label", value: v.label });
            }
        }
        Triangulation::new(verts, self.simplices.iter().map(|s| (SimplexId(s.id), s.vertices.clone())).collect())
    }

    pub fn roles(&self) -> Result<FacetRoles> {
        let mut out = BTreeMap::new();
        for s in &self.simplices {
            if s.roles.len() != s.vertices.len() {
                return Err(Error::Dimension(format!("simplex {} lists {} roles for {} vertices", s.id, s.roles.len(), s.vertices.len())));
            }
            out.insert(SimplexId(s.id), s.roles.clone());
        }
        Ok(out)
    }

    pub fn from_parts(tri: &Triangulation, roles: &FacetRoles, region: &[HalfSpace]) -> Self {
        TriangulationFile {
            design: None,
            params: None,
            dynamics: None,
            vertices: tri.vertices().iter().map(|(l, p)| VertexEntry { label: *l, coords: p.iter().copied().collect() }).collect(),
            simplices: tri
                .simplices()
                .iter()
                .map(|s| SimplexEntry {
                    id: s.id().0,
                    vertices: tri.labels(s.id()).to_vec(),
                    roles: roles.get(&s.id()).cloned().unwrap_or_default(),
                })
                .collect(),
            region: region.to_vec(),
        }
    }

    pub fn from_case_study(cs: &CaseStudy) -> Self {
        let mut f = Self::from_parts(&cs.triangulation, &cs.roles, &cs.region.safe);
        f.design = Some(DesignSection {
            mode: crate::case_study::MODE_L2R.into(),
            mirror_mode: Some(crate::case_study::MODE_R2L.into()),
            mirror_target: Some(cs.b_left.name.clone()),
            discontinuity: cs.discontinuity.iter().copied().collect(),
            target: cs.b_right.clone(),
        });
        f.params = Some(cs.params.clone());
        f
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsEntry {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerEntry {
    pub id: u32,
    pub roles: Vec<FacetRole>,
    pub vertex_controls: Vec<Vec<f64>>,
    /// Row-major n_u×n.
    pub gain: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeEntry {
    pub name: String,
    pub successor: String,
    pub target: TargetSet,
    #[serde(default)]
    pub discontinuity: Vec<VertexLabel>,
    pub simplices: Vec<ControllerEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleFile {
    pub format: String,
    pub tool_version: String,
    /// Strictness used on invariance rows with control authority.
    pub margin: f64,
    pub objective: Objective,
    pub bounds: BoundsEntry,
    pub discontinuity: Vec<VertexLabel>,
    /// Input name → SHA-256 of the file it was read from.
    pub provenance: BTreeMap<String, String>,
    pub dynamics: DynamicsFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ManeuverParams>,
    pub triangulation: TriangulationFile,
    pub modes: Vec<ModeEntry>,
}

impl BundleFile {
    pub fn from_controller(hc: &HybridController, provenance: BTreeMap<String, String>, params: Option<ManeuverParams>, region: &[HalfSpace]) -> Self {
        let roles = hc.modes.first().map(|m| m.roles.clone()).unwrap_or_default();
        BundleFile {
            format: BUNDLE_FORMAT.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            margin: hc.margin,
            objective: hc.objective,
            bounds: BoundsEntry { lower: hc.bounds.lower.iter().copied().collect(), upper: hc.bounds.upper.iter().copied().collect() },
            discontinuity: hc.discontinuity.iter().copied().collect(),
            provenance,
            dynamics: DynamicsFile::from_dynamics(&hc.dynamics),
            params,
            triangulation: TriangulationFile::from_parts(&hc.triangulation, &roles, region),
            modes: hc
                .modes
                .iter()
                .map(|m| ModeEntry {
                    name: m.name.clone(),
                    successor: m.successor.clone(),
                    target: m.target.clone(),
                    discontinuity: m.discontinuity.iter().copied().collect(),
                    simplices: m
                        .controllers
                        .values()
                        .map(|c| ControllerEntry {
                            id: c.simplex.0,
                            roles: m.roles.get(&c.simplex).cloned().unwrap_or_default(),
                            vertex_controls: c.vertex_controls.iter().map(|u| u.iter().copied().collect()).collect(),
                            gain: rows_of(&c.gain),
                            offset: c.offset.iter().copied().collect(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn to_controller(&self) -> Result<HybridController> {
        if self.format != BUNDLE_FORMAT {
            return Err(Error::InvalidParams(format!("unsupported bundle format '{}'", self.format)));
        }
        let tri = self.triangulation.triangulation()?;
        let dynamics = self.dynamics.to_dynamics()?;
        let bounds = ControlBounds::new(DVector::from_vec(self.bounds.lower.clone()), DVector::from_vec(self.bounds.upper.clone()))?;
        if bounds.len() != dynamics.n_u() || dynamics.n() != tri.dim() {
            return Err(Error::Dimension("bundle dynamics, bounds and triangulation disagree in dimension".into()));
        }
        let names: BTreeSet<&str> = self.modes.iter().map(|m| m.name.as_str()).collect();
        let mut modes = Vec::new();
        for m in &self.modes {
            if !names.contains(m.successor.as_str()) {
                return Err(Error::UnknownMode(m.successor.clone()));
            }
            let mut controllers = BTreeMap::new();
            let mut roles = BTreeMap::new();
            for c in &m.simplices {
                let id = SimplexId(c.id);
                if tri.simplex(id).is_none() {
                    return Err(Error::InvalidParams(format!("mode {} has a controller for unknown simplex {id}", m.name)));
                }
                let gain = matrix(&c.gain, "gain")?;
                if gain.nrows() != dynamics.n_u() || gain.ncols() != tri.dim() || c.offset.len() != dynamics.n_u() {
                    return Err(Error::Dimension(format!("controller for {id} in mode {} has wrong shape", m.name)));
                }
                controllers.insert(id, SimplexController {
                    simplex: id,
                    vertex_controls: c.vertex_controls.iter().map(|u| DVector::from_vec(u.clone())).collect(),
                    gain,
                    offset: DVector::from_vec(c.offset.clone()),
                });
                roles.insert(id, c.roles.clone());
            }
            if let Some(missing) = tri.ids().find(|id| !controllers.contains_key(id)) {
                return Err(Error::InvalidParams(format!("mode {} has no controller for {missing}", m.name)));
            }
            modes.push(ModeController {
                name: m.name.clone(),
                successor: m.successor.clone(),
                target: m.target.clone(),
                roles,
                discontinuity: m.discontinuity.iter().copied().collect(),
                controllers,
            });
        }
        if modes.is_empty() {
            return Err(Error::InvalidParams("bundle defines no modes".into()));
        }
        Ok(HybridController {
            triangulation: tri,
            dynamics,
            bounds,
            discontinuity: self.discontinuity.iter().copied().collect(),
            margin: self.margin,
            objective: self.objective,
            modes,
        })
    }
}

pub fn load_bundle(path: &Path) -> Result<(HybridController, BundleFile, String)> {
    let (file, hash): (BundleFile, String) = load_toml(path)?;
    let hc = file.to_controller().map_err(|e| match e {
        Error::Parse { .. } | Error::FileNotFound(_) | Error::Io { .. } => e,
        other => Error::Parse { path: path.to_path_buf(), message: other.to_string() },
    })?;
    Ok((hc, file, hash))
}

pub fn load_scenario(path: &Path) -> Result<(Scenario, String)> {
    load_toml(path)
}

pub fn load_baseline(path: &Path) -> Result<(TrackingBaseline, String)> {
    let (b, hash): (TrackingBaseline, String) = load_toml(path)?;
    b.validate()?;
    Ok((b, hash))
}

fn piece_label(p: Piece) -> String {
    match p {
        Piece::Simplex(id) => id.0.to_string(),
        Piece::Outside => "outside".into(),
        Piece::Global => "none".into(),
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Serialize(e.to_string())
}

pub const TRAJECTORY_HEADER: [&str; 13] = ["t", "x", "xdot", "u", "theta_d", "simplex", "mode", "S1", "S2", "S3", "L1", "L2", "L3"];

pub fn write_trajectory_csv<W: Write>(log: &TrajectoryLog, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRAJECTORY_HEADER).map_err(csv_err)?;
    for s in &log.samples {
        let mut row = vec![
            s.t.to_string(),
            s.state[0].to_string(),
            s.state[1].to_string(),
            s.u[0].to_string(),
            s.theta_d.to_string(),
            piece_label(s.piece),
            log.mode_name(s.mode).to_string(),
        ];
        row.extend(s.flags.as_array().iter().map(|b| if *b { "1" } else { "0" }.to_string()));
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::Serialize(e.to_string()))
}

pub fn write_events_csv<W: Write>(log: &TrajectoryLog, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "kind", "detail"]).map_err(csv_err)?;
    for e in &log.events {
        out.write_record([e.t.to_string(), e.kind.as_str().to_string(), e.detail.clone()]).map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::Serialize(e.to_string()))
}

pub fn write_phase_plane_csv<W: Write>(log: &TrajectoryLog, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["x", "xdot"]).map_err(csv_err)?;
    for s in &log.samples {
        out.write_record([s.state[0].to_string(), s.state[1].to_string()]).map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::Serialize(e.to_string()))
}

pub fn write_x_vs_t_csv<W: Write>(log: &TrajectoryLog, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "x"]).map_err(csv_err)?;
    for s in &log.samples {
        out.write_record([s.t.to_string(), s.state[0].to_string()]).map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::Serialize(e.to_string()))
}

/// Spec-summary document of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub samples: usize,
    pub lost: bool,
    pub violations: BTreeMap<String, usize>,
    pub unsafe_samples: usize,
    pub unlive_samples: usize,
    pub fallback_samples: usize,
    pub crossing_sequence: String,
    pub crossings: usize,
    pub t1_ok: bool,
    pub max_crossing_gap: f64,
    pub max_abs_x: f64,
    pub max_abs_xdot: f64,
}

impl SummaryFile {
    pub fn new(log: &TrajectoryLog, s: &RunSummary) -> Self {
        SummaryFile {
            samples: log.samples.len(),
            lost: s.lost,
            violations: crate::executor::SpecFlags::NAMES.iter().zip(s.violations).map(|(n, c)| (n.to_string(), c)).collect(),
            unsafe_samples: s.unsafe_samples,
            unlive_samples: s.unlive_samples,
            fallback_samples: s.fallback_samples,
            crossing_sequence: s.crossing_sequence.join(","),
            crossings: s.crossing_sequence.len(),
            t1_ok: s.t1_ok,
            max_crossing_gap: s.max_crossing_gap,
            max_abs_x: s.max_abs_x,
            max_abs_xdot: s.max_abs_xdot,
        }
    }
}

/// Output paths for one simulation, derived from a prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutputs {
    pub trajectory: PathBuf,
    pub events: PathBuf,
    pub summary: PathBuf,
    pub phase_plane: PathBuf,
    pub x_vs_t: PathBuf,
}

impl RunOutputs {
    pub fn from_prefix(prefix: &str) -> Self {
        let p = |suffix: &str| PathBuf::from(format!("{prefix}{suffix}"));
        RunOutputs {
            trajectory: p("trajectory.csv"),
            events: p("events.csv"),
            summary: p("summary.cfg"),
            phase_plane: p("phase_plane.csv"),
            x_vs_t: p("x_vs_t.csv"),
        }
    }

    pub fn all(&self) -> [&PathBuf; 5] {
        [&self.trajectory, &self.events, &self.summary, &self.phase_plane, &self.x_vs_t]
    }

    pub fn write(&self, log: &TrajectoryLog) -> Result<()> {
        let mut buf = Vec::new();
        write_trajectory_csv(log, &mut buf)?;
        write_file(&self.trajectory, &buf)?;
        buf.clear();
        write_events_csv(log, &mut buf)?;
        write_file(&self.events, &buf)?;
        buf.clear();
        write_phase_plane_csv(log, &mut buf)?;
        write_file(&self.phase_plane, &buf)?;
        buf.clear();
        write_x_vs_t_csv(log, &mut buf)?;
        write_file(&self.x_vs_t, &buf)?;
        let summary = SummaryFile::new(log, &log.summary());
        write_file(&self.summary, to_toml(&summary)?.as_bytes())
    }
}
