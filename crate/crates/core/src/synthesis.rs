//! Per-simplex reach control synthesis and assembly of piecewise affine
//! mode controllers.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::executor::TargetSet;
use crate::geometry::{FacetRole, Neighbor, Point, Simplex, SimplexId, Triangulation, VertexLabel, CONTAINMENT_TOL};
use crate::lp::{Cmp, LinearProgram, LpOutcome};

/// Default strictness of the invariance rows.
pub const DEFAULT_MARGIN: f64 = 1e-6;
/// Below this, a row's control coefficient counts as zero.
pub const AUTHORITY_TOL: f64 = 1e-12;
/// Minimum closed-loop speed for a simplex to count as equilibrium-free.
pub const FLOW_FLOOR: f64 = 1e-9;
/// Tolerance used when re-checking a synthesized controller.
pub const CHECK_TOL: f64 = 1e-9;
/// Weight of the Σ|u| tie-break under the max-slack objective.
const SLACK_TIE_BREAK: f64 = 1e-3;

/// ṡ = A s + B u + a on a simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub drift: DVector<f64>,
}

impl AffineDynamics {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, drift: DVector<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || drift.len() != n || b.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "A is {}x{}, B is {}x{}, a has length {}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                drift.len()
            )));
        }
        Ok(AffineDynamics { a, b, drift })
    }

    /// ẍ = u written as a first-order system in (x, ẋ).
    pub fn double_integrator() -> Self {
        AffineDynamics {
            a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            b: DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            drift: DVector::zeros(2),
        }
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    pub fn field(&self, s: &Point, u: &DVector<f64>) -> Point {
        &self.a * s + &self.b * u + &self.drift
    }
}

/// Axis-aligned box of admissible inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlBounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl ControlBounds {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension("control bound vectors differ in length".into()));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidParams("control lower bound exceeds upper bound".into()));
        }
        Ok(ControlBounds { lower, upper })
    }

    /// |u_k| ≤ limit for every input.
    pub fn symmetric(n_u: usize, limit: f64) -> Result<Self> {
        if !(limit >= 0.0) || !limit.is_finite() {
            return Err(Error::InvalidParams(format!("control bound must be finite and non-negative, got {limit}")));
        }
        Self::new(DVector::from_element(n_u, -limit), DVector::from_element(n_u, limit))
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn contains(&self, u: &DVector<f64>, tol: f64) -> bool {
        u.iter().enumerate().all(|(k, &x)| x >= self.lower[k] - tol && x <= self.upper[k] + tol)
    }

    pub fn clamp(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(u.len(), |k, _| u[k].clamp(self.lower[k], self.upper[k]))
    }
}

/// Selection rule among feasible vertex controls.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Push every invariance row as deep as the bounds allow; ties broken by small Σ|u|.
    #[default]
    MaxSlack,
    /// Minimise Σ|u_i|.
    MinEffort,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::MaxSlack => "max-slack",
            Objective::MinEffort => "min-effort",
        })
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max-slack" => Ok(Objective::MaxSlack),
            "min-effort" => Ok(Objective::MinEffort),
            other => Err(Error::InvalidParams(format!("unknown objective '{other}' (expected max-slack or min-effort)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisOptions {
    pub bounds: ControlBounds,
    pub margin: f64,
    pub objective: Objective,
}

impl SynthesisOptions {
    pub fn new(bounds: ControlBounds) -> Self {
        SynthesisOptions { bounds, margin: DEFAULT_MARGIN, objective: Objective::default() }
    }
}

/// Affine law u = K s + g on one simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexController {
    pub simplex: SimplexId,
    pub vertex_controls: Vec<DVector<f64>>,
    pub gain: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl SimplexController {
    pub fn from_vertex_controls(simplex: &Simplex, vertex_controls: Vec<DVector<f64>>) -> Result<Self> {
        let (gain, offset) = affine_feedback(simplex, &vertex_controls)?;
        Ok(SimplexController { simplex: simplex.id(), vertex_controls, gain, offset })
    }

    pub fn eval(&self, s: &Point) -> DVector<f64> {
        &self.gain * s + &self.offset
    }

    /// (A + B K, a + B g).
    pub fn closed_loop(&self, dyn_: &AffineDynamics) -> (DMatrix<f64>, DVector<f64>) {
        (&dyn_.a + &dyn_.b * &self.gain, &dyn_.drift + &dyn_.b * &self.offset)
    }

    pub fn field(&self, dyn_: &AffineDynamics, s: &Point) -> Point {
        dyn_.field(s, &self.eval(s))
    }
}

/// Solve [v_i^T 1] [K^T; g^T] = [u_i^T] for the unique affine interpolant.
pub fn affine_feedback(simplex: &Simplex, vertex_controls: &[DVector<f64>]) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = simplex.dim();
    if vertex_controls.len() != n + 1 {
        return Err(Error::Dimension(format!(
            "simplex {} needs {} vertex controls, got {}",
            simplex.id(),
            n + 1,
            vertex_controls.len()
        )));
    }
    let n_u = vertex_controls[0].len();
    if vertex_controls.iter().any(|u| u.len() != n_u) {
        return Err(Error::Dimension("vertex controls differ in length".into()));
    }
    let homog = DMatrix::from_fn(n + 1, n + 1, |r, c| if c < n { simplex.vertex(r)[c] } else { 1.0 });
    let rhs = DMatrix::from_fn(n + 1, n_u, |r, c| vertex_controls[r][c]);
    let sol = homog.lu().solve(&rhs).ok_or_else(|| Error::DegenerateSimplex {
        id: simplex.id(),
        detail: "vertex matrix is singular".into(),
    })?;
    let gain = sol.rows(0, n).transpose();
    let offset = sol.row(n).transpose();
    Ok((gain, offset))
}

/// A point of the simplex where the closed-loop field vanishes (to the flow floor), if any.
pub fn find_equilibrium(dyn_: &AffineDynamics, ctrl: &SimplexController, simplex: &Simplex) -> Option<Point> {
    let (acl, bcl) = ctrl.closed_loop(dyn_);
    let n = simplex.dim();
    let scale = acl.amax().max(1.0);
    let lu = acl.clone().lu();
    if lu.determinant().abs() > 1e-10 * scale.powi(n as i32) {
        let s = lu.solve(&(-&bcl))?;
        return simplex.contains(&s, CONTAINMENT_TOL).then_some(s);
    }
    // Singular: f is affine, so min ‖f‖∞ over the simplex is an LP in barycentric weights.
    let flows: Vec<Point> = simplex.vertices().iter().map(|v| &acl * v + &bcl).collect();
    let mut lp = LinearProgram::new();
    let lam: Vec<_> = (0..=n).map(|_| lp.add_var(0.0, 0.0, f64::INFINITY)).collect();
    let t = lp.add_var(1.0, 0.0, f64::INFINITY);
    lp.add_row(lam.iter().map(|&v| (v, 1.0)).collect(), Cmp::Eq, 1.0);
    for k in 0..n {
        let mut upper: Vec<_> = lam.iter().zip(&flows).map(|(&v, f)| (v, f[k])).collect();
        upper.push((t, -1.0));
        lp.add_row(upper, Cmp::Le, 0.0);
        let mut lower: Vec<_> = lam.iter().zip(&flows).map(|(&v, f)| (v, f[k])).collect();
        lower.push((t, 1.0));
        lp.add_row(lower, Cmp::Ge, 0.0);
    }
    match lp.solve() {
        LpOutcome::Optimal { values, objective } if objective <= FLOW_FLOOR => {
            let mut p = Point::zeros(n);
            for (w, v) in values.iter().zip(simplex.vertices()) {
                p += v * *w;
            }
            Some(p)
        }
        _ => None,
    }
}

/// True iff the closed loop has no equilibrium in the simplex.
pub fn equilibrium_check(dyn_: &AffineDynamics, ctrl: &SimplexController, simplex: &Simplex) -> bool {
    find_equilibrium(dyn_, ctrl, simplex).is_none()
}

/// One linear row h_j·B u_i ≤ rhs of the invariance conditions.
#[derive(Clone, Debug, PartialEq)]
pub struct InvarianceRow {
    pub facet: usize,
    pub vertex: usize,
    pub coeffs: DVector<f64>,
    pub rhs: f64,
}

impl InvarianceRow {
    pub fn has_authority(&self) -> bool {
        self.coeffs.amax() > AUTHORITY_TOL
    }

    pub fn satisfied_by(&self, u: &DVector<f64>) -> bool {
        if self.has_authority() {
            self.coeffs.dot(u) <= self.rhs
        } else {
            self.rhs >= -AUTHORITY_TOL
        }
    }
}

impl fmt::Display for InvarianceRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c: Vec<String> = self.coeffs.iter().map(|x| format!("{x:.6}")).collect();
        write!(f, "facet {} at vertex {}: [{}]·u_{} <= {:.6}", self.facet, self.vertex, c.join(", "), self.vertex, self.rhs)
    }
}

/// Rows of h_j·(A v_i + B u_i + a) ≤ −ε for j ∈ restricted, i ≠ j.
///
/// Rows with no control authority keep ε = 0.
pub fn invariance_rows(simplex: &Simplex, dyn_: &AffineDynamics, restricted: &[usize], margin: f64) -> Result<Vec<InvarianceRow>> {
    let n = simplex.dim();
    if dyn_.n() != n {
        return Err(Error::Dimension(format!("dynamics are {}-dimensional, simplex {} is {n}-dimensional", dyn_.n(), simplex.id())));
    }
    let mut rows = Vec::new();
    for &j in restricted {
        let h = simplex.facet_normal(j)?;
        let hb: DVector<f64> = (h.transpose() * &dyn_.b).transpose();
        let authority = hb.amax() > AUTHORITY_TOL;
        for i in (0..=n).filter(|&i| i != j) {
            let drift = h.dot(&(&dyn_.a * simplex.vertex(i) + &dyn_.drift));
            let eps = if authority { margin } else { 0.0 };
            rows.push(InvarianceRow { facet: j, vertex: i, coeffs: hb.clone(), rhs: -eps - drift });
        }
    }
    Ok(rows)
}

struct Cell<'a> {
    simplex: &'a Simplex,
    labels: Option<&'a [VertexLabel]>,
    rows: Vec<InvarianceRow>,
}

struct Assembled {
    lp: LinearProgram,
    // [cell][vertex][input]
    vars: Vec<Vec<Vec<usize>>>,
    // cell index of the first u-independent row that fails outright
    dead_row: Option<usize>,
}

fn assemble(cells: &[Cell<'_>], opts: &SynthesisOptions, continuity: Option<&BTreeSet<VertexLabel>>) -> Assembled {
    let n_u = opts.bounds.len();
    let abs_weight = match opts.objective {
        Objective::MaxSlack => SLACK_TIE_BREAK,
        Objective::MinEffort => 1.0,
    };
    let mut lp = LinearProgram::new();
    let mut vars = Vec::with_capacity(cells.len());
    let mut dead_row = None;
    for (ci, cell) in cells.iter().enumerate() {
        let cv: Vec<Vec<usize>> = (0..=cell.simplex.dim())
            .map(|_| (0..n_u).map(|k| lp.add_var(0.0, opts.bounds.lower[k], opts.bounds.upper[k])).collect())
            .collect();
        for uv in cv.iter().flatten() {
            let t = lp.add_var(abs_weight, 0.0, f64::INFINITY);
            lp.add_row(vec![(*uv, 1.0), (t, -1.0)], Cmp::Le, 0.0);
            lp.add_row(vec![(*uv, -1.0), (t, -1.0)], Cmp::Le, 0.0);
        }
        for row in &cell.rows {
            if !row.has_authority() {
                if row.rhs < -AUTHORITY_TOL && dead_row.is_none() {
                    dead_row = Some(ci);
                }
                continue;
            }
            let terms: Vec<_> = (0..n_u).map(|k| (cv[row.vertex][k], row.coeffs[k])).collect();
            if opts.objective == Objective::MaxSlack {
                for &(v, c) in &terms {
                    lp.add_cost(v, c);
                }
            }
            lp.add_row(terms, Cmp::Le, row.rhs);
        }
        vars.push(cv);
    }
    if let Some(exempt) = continuity {
        let mut first: BTreeMap<VertexLabel, &Vec<usize>> = BTreeMap::new();
        for (cell, cv) in cells.iter().zip(&vars) {
            let Some(labels) = cell.labels else { continue };
            for (i, l) in labels.iter().enumerate() {
                if exempt.contains(l) {
                    continue;
                }
                match first.get(l) {
                    Some(prev) => {
                        for k in 0..n_u {
                            lp.add_row(vec![(prev[k], 1.0), (cv[i][k], -1.0)], Cmp::Eq, 0.0);
                        }
                    }
                    None => {
                        first.insert(*l, &cv[i]);
                    }
                }
            }
        }
    }
    Assembled { lp, vars, dead_row }
}

fn extract(values: &[f64], cv: &[Vec<usize>], bounds: &ControlBounds) -> Vec<DVector<f64>> {
    cv.iter()
        .map(|vs| bounds.clamp(&DVector::from_iterator(vs.len(), vs.iter().map(|&v| values[v]))))
        .collect()
}

fn restricted_indices(id: SimplexId, roles: &[FacetRole], dim: usize) -> Result<Vec<usize>> {
    if roles.len() != dim + 1 {
        return Err(Error::Dimension(format!("simplex {id} has {} facet roles, expected {}", roles.len(), dim + 1)));
    }
    let r: Vec<usize> = roles.iter().enumerate().filter(|(_, r)| **r == FacetRole::Restricted).map(|(i, _)| i).collect();
    if r.is_empty() {
        return Err(Error::NoRestrictedFacet(id));
    }
    Ok(r)
}

/// Feasible vertex controls for the invariance conditions on one simplex, or
/// `None` when none exist within the bounds.
pub fn invariance_lp(
    simplex: &Simplex,
    dyn_: &AffineDynamics,
    restricted: &[usize],
    opts: &SynthesisOptions,
) -> Result<Option<Vec<DVector<f64>>>> {
    if restricted.is_empty() {
        return Err(Error::NoRestrictedFacet(simplex.id()));
    }
    if dyn_.n_u() != opts.bounds.len() {
        return Err(Error::Dimension(format!("{} inputs but {} control bounds", dyn_.n_u(), opts.bounds.len())));
    }
    let cell = Cell { simplex, labels: None, rows: invariance_rows(simplex, dyn_, restricted, opts.margin)? };
    let asm = assemble(std::slice::from_ref(&cell), opts, None);
    if asm.dead_row.is_some() {
        return Ok(None);
    }
    Ok(asm.lp.solve().values().map(|v| extract(v, &asm.vars[0], &opts.bounds)))
}

/// Facet roles per simplex, indexed by local facet (= opposite vertex) index.
pub type FacetRoles = BTreeMap<SimplexId, Vec<FacetRole>>;

/// One discrete mode: a controller on every simplex plus its target and successor.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeController {
    pub name: String,
    pub successor: String,
    pub target: TargetSet,
    pub roles: FacetRoles,
    /// Vertices where neighbouring controllers of this mode may disagree.
    pub discontinuity: BTreeSet<VertexLabel>,
    pub controllers: BTreeMap<SimplexId, SimplexController>,
}

impl ModeController {
    pub fn controller(&self, id: SimplexId) -> Option<&SimplexController> {
        self.controllers.get(&id)
    }
}

/// Feasible interval of each input at one vertex, as seen from a single simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexWindow {
    pub simplex: SimplexId,
    pub ranges: Vec<(f64, f64)>,
    pub constraints: Vec<String>,
}

impl fmt::Display for VertexWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r: Vec<String> = self.ranges.iter().map(|(lo, hi)| format!("[{lo:.6}, {hi:.6}]")).collect();
        write!(f, "{} allows u in {}", self.simplex, r.join(" x "))?;
        for c in &self.constraints {
            write!(f, "\n      {c}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SynthesisFailure {
    #[error("invariance conditions infeasible on simplex {simplex}:\n    {}", constraints.join("\n    "))]
    Infeasible { simplex: SimplexId, constraints: Vec<String> },

    #[error("continuity conflict at vertex {vertex}:\n    {first}\n    {second}")]
    ContinuityConflict { vertex: VertexLabel, first: VertexWindow, second: VertexWindow },

    #[error("joint synthesis infeasible: {0}")]
    JointInfeasible(String),

    #[error("closed loop on simplex {simplex} has an equilibrium at {location:?}")]
    Equilibrium { simplex: SimplexId, location: Vec<f64> },

    #[error("{0}")]
    Invalid(String),
}

impl From<Error> for SynthesisFailure {
    fn from(e: Error) -> Self {
        SynthesisFailure::Invalid(e.to_string())
    }
}

/// Everything a mode synthesis needs besides the triangulation.
#[derive(Clone, Debug)]
pub struct ModeSpec<'a> {
    pub name: &'a str,
    pub successor: &'a str,
    pub target: TargetSet,
    pub roles: &'a FacetRoles,
    pub discontinuity: &'a BTreeSet<VertexLabel>,
}

/// Joint LP over every vertex control of the mode, then affine gains and
/// equilibrium checks per simplex.
pub fn synthesize_mode(
    tri: &Triangulation,
    dyn_: &AffineDynamics,
    spec: &ModeSpec<'_>,
    opts: &SynthesisOptions,
) -> Result<ModeController, SynthesisFailure> {
    if dyn_.n_u() != opts.bounds.len() {
        return Err(Error::Dimension(format!("{} inputs but {} control bounds", dyn_.n_u(), opts.bounds.len())).into());
    }
    let mut cells = Vec::with_capacity(tri.len());
    for s in tri.simplices() {
        let roles = spec
            .roles
            .get(&s.id())
            .ok_or_else(|| SynthesisFailure::Invalid(format!("no facet roles for simplex {}", s.id())))?;
        let restricted = restricted_indices(s.id(), roles, s.dim())?;
        cells.push(Cell { simplex: s, labels: Some(tri.labels(s.id())), rows: invariance_rows(s, dyn_, &restricted, opts.margin)? });
    }

    let asm = assemble(&cells, opts, Some(spec.discontinuity));
    let values = match (asm.dead_row, asm.lp.solve()) {
        (None, LpOutcome::Optimal { values, .. }) => values,
        _ => return Err(diagnose(tri, &cells, opts, spec.discontinuity)),
    };

    let mut controllers = BTreeMap::new();
    for (cell, cv) in cells.iter().zip(&asm.vars) {
        let ctrl = SimplexController::from_vertex_controls(cell.simplex, extract(&values, cv, &opts.bounds))?;
        if let Some(p) = find_equilibrium(dyn_, &ctrl, cell.simplex) {
            return Err(SynthesisFailure::Equilibrium { simplex: cell.simplex.id(), location: p.iter().copied().collect() });
        }
        controllers.insert(cell.simplex.id(), ctrl);
    }
    Ok(ModeController {
        name: spec.name.to_string(),
        successor: spec.successor.to_string(),
        target: spec.target.clone(),
        roles: spec.roles.clone(),
        discontinuity: spec.discontinuity.clone(),
        controllers,
    })
}

fn diagnose(tri: &Triangulation, cells: &[Cell<'_>], opts: &SynthesisOptions, exempt: &BTreeSet<VertexLabel>) -> SynthesisFailure {
    let describe = |cell: &Cell<'_>| cell.rows.iter().map(|r| r.to_string()).collect::<Vec<_>>();
    for cell in cells {
        let single = assemble(std::slice::from_ref(cell), opts, None);
        if single.dead_row.is_some() || matches!(single.lp.solve(), LpOutcome::Infeasible) {
            return SynthesisFailure::Infeasible { simplex: cell.simplex.id(), constraints: describe(cell) };
        }
    }
    let by_id: BTreeMap<SimplexId, &Cell<'_>> = cells.iter().map(|c| (c.simplex.id(), c)).collect();
    for label in tri.vertices().keys().filter(|l| !exempt.contains(l)) {
        let incident = tri.incident(*label);
        for (a, (ia, _)) in incident.iter().enumerate() {
            for (ib, _) in &incident[a + 1..] {
                let (ca, cb) = (by_id[ia], by_id[ib]);
                let pair = [Cell { simplex: ca.simplex, labels: ca.labels, rows: ca.rows.clone() }, Cell {
                    simplex: cb.simplex,
                    labels: cb.labels,
                    rows: cb.rows.clone(),
                }];
                let only_this: BTreeSet<VertexLabel> = tri.vertices().keys().filter(|l| *l != label).copied().collect();
                if matches!(assemble(&pair, opts, Some(&only_this)).lp.solve(), LpOutcome::Infeasible) {
                    return SynthesisFailure::ContinuityConflict {
                        vertex: *label,
                        first: vertex_window(ca, *label, opts),
                        second: vertex_window(cb, *label, opts),
                    };
                }
            }
        }
    }
    SynthesisFailure::JointInfeasible(
        "every simplex and every shared vertex pair is feasible on its own; the conflict spans a chain of shared vertices".into(),
    )
}

fn vertex_window(cell: &Cell<'_>, label: VertexLabel, opts: &SynthesisOptions) -> VertexWindow {
    let local = cell.labels.and_then(|ls| ls.iter().position(|l| *l == label)).unwrap_or(0);
    let base = assemble(std::slice::from_ref(cell), opts, None);
    let mut ranges = Vec::new();
    for k in 0..opts.bounds.len() {
        let var = base.vars[0][local][k];
        let mut ends = [f64::NAN; 2];
        for (e, sign) in [1.0, -1.0].into_iter().enumerate() {
            let mut lp = base.lp.clone();
            for v in 0..lp.num_vars() {
                lp.set_cost(v, 0.0);
            }
            lp.set_cost(var, sign);
            if let LpOutcome::Optimal { values, .. } = lp.solve() {
                ends[e] = values[var];
            }
        }
        ranges.push((ends[0], ends[1]));
    }
    let constraints = cell.rows.iter().filter(|r| r.vertex == local).map(|r| r.to_string()).collect();
    VertexWindow { simplex: cell.simplex.id(), ranges, constraints }
}

/// Odd reflection s ↦ −s, u ↦ −u of a mode onto the mirrored simplices.
pub fn reflect_mode(tri: &Triangulation, mode: &ModeController, name: &str, successor: &str, target_name: &str) -> Result<ModeController> {
    let mirror = tri.mirror_map()?;
    let mut controllers = BTreeMap::new();
    let mut roles = BTreeMap::new();
    for (id, ctrl) in &mode.controllers {
        let m = mirror[id];
        let src = tri.labels(*id);
        let dst = tri.labels(m);
        // local index in the source simplex of the mirror of each destination vertex
        let perm = dst
            .iter()
            .map(|l| {
                let back = tri.mirror_vertex(*l, 1e-9).ok_or_else(|| Error::Asymmetric(format!("vertex {l} has no mirror image")))?;
                src.iter().position(|x| *x == back).ok_or_else(|| Error::Asymmetric(format!("simplex {m} does not mirror {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        controllers.insert(m, SimplexController {
            simplex: m,
            vertex_controls: perm.iter().map(|&i| -&ctrl.vertex_controls[i]).collect(),
            gain: ctrl.gain.clone(),
            offset: -&ctrl.offset,
        });
        if let Some(r) = mode.roles.get(id) {
            roles.insert(m, perm.iter().map(|&i| r[i]).collect());
        }
    }
    let discontinuity = mode
        .discontinuity
        .iter()
        .map(|l| tri.mirror_vertex(*l, 1e-9).ok_or_else(|| Error::Asymmetric(format!("vertex {l} has no mirror image"))))
        .collect::<Result<_>>()?;
    Ok(ModeController {
        name: name.to_string(),
        successor: successor.to_string(),
        target: mode.target.mirrored(target_name),
        roles,
        discontinuity,
        controllers,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReachabilityReport {
    /// Simplices with an exit facet meeting the target.
    pub terminal: Vec<SimplexId>,
    /// A shortest exit-facet path from each reachable simplex to a terminal one.
    pub paths: BTreeMap<SimplexId, Vec<SimplexId>>,
    pub unreachable: Vec<SimplexId>,
}

impl ReachabilityReport {
    pub fn ok(&self) -> bool {
        self.unreachable.is_empty()
    }
}

/// Graph search over exit facets toward the target set.
pub fn reachability_check(tri: &Triangulation, roles: &FacetRoles, target: &TargetSet) -> ReachabilityReport {
    let mut succ: BTreeMap<SimplexId, Vec<SimplexId>> = BTreeMap::new();
    let mut terminal = Vec::new();
    for s in tri.simplices() {
        let Some(r) = roles.get(&s.id()) else { continue };
        for (i, role) in r.iter().enumerate() {
            if *role != FacetRole::Exit {
                continue;
            }
            if let Neighbor::Simplex(o) = tri.neighbor(s.id(), i) {
                succ.entry(s.id()).or_default().push(o);
            }
            let facet: Vec<&Point> = s.vertices().iter().enumerate().filter(|(k, _)| *k != i).map(|(_, v)| v).collect();
            if target.meets_hull(&facet) && !terminal.contains(&s.id()) {
                terminal.push(s.id());
            }
        }
    }
    // Reverse BFS from the terminal simplices.
    let mut pred: BTreeMap<SimplexId, Vec<SimplexId>> = BTreeMap::new();
    for (a, bs) in &succ {
        for b in bs {
            pred.entry(*b).or_default().push(*a);
        }
    }
    let mut next_hop: BTreeMap<SimplexId, Option<SimplexId>> = terminal.iter().map(|t| (*t, None)).collect();
    let mut queue: VecDeque<SimplexId> = terminal.iter().copied().collect();
    while let Some(b) = queue.pop_front() {
        for a in pred.get(&b).into_iter().flatten() {
            if !next_hop.contains_key(a) {
                next_hop.insert(*a, Some(b));
                queue.push_back(*a);
            }
        }
    }
    let mut paths = BTreeMap::new();
    let mut unreachable = Vec::new();
    for id in tri.ids() {
        if !next_hop.contains_key(&id) {
            unreachable.push(id);
            continue;
        }
        let mut path = vec![id];
        let mut cur = id;
        while let Some(Some(n)) = next_hop.get(&cur) {
            path.push(*n);
            cur = *n;
        }
        paths.insert(id, path);
    }
    ReachabilityReport { terminal, paths, unreachable }
}

/// Re-check results for one simplex of one mode.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexCheck {
    pub mode: String,
    pub simplex: SimplexId,
    /// max over restricted rows of max(0, h_j·f(v_i)).
    pub invariance_residual: f64,
    /// max |K v_i + g − u_i|.
    pub interpolation_error: f64,
    /// max |u_a(v) − u_b(v)| over shared non-exempt vertices.
    pub continuity_mismatch: f64,
    pub within_bounds: bool,
    pub equilibrium: Option<Vec<f64>>,
}

impl SimplexCheck {
    pub fn pass(&self) -> bool {
        self.invariance_residual <= CHECK_TOL
            && self.interpolation_error <= CHECK_TOL
            && self.continuity_mismatch <= CHECK_TOL
            && self.within_bounds
            && self.equilibrium.is_none()
    }
}

/// Independent re-check of a synthesized mode.
pub fn verify_mode(tri: &Triangulation, dyn_: &AffineDynamics, mode: &ModeController, bounds: &ControlBounds) -> Result<Vec<SimplexCheck>> {
    let mut out = Vec::new();
    for s in tri.simplices() {
        let ctrl = mode.controller(s.id()).ok_or_else(|| Error::InvalidParams(format!("mode {} has no controller for {}", mode.name, s.id())))?;
        let roles = mode.roles.get(&s.id()).ok_or_else(|| Error::Dimension(format!("no roles for {}", s.id())))?;
        let restricted = restricted_indices(s.id(), roles, s.dim())?;
        let mut residual: f64 = 0.0;
        for &j in &restricted {
            let h = s.facet_normal(j)?;
            for i in (0..=s.dim()).filter(|&i| i != j) {
                residual = residual.max(h.dot(&ctrl.field(dyn_, s.vertex(i))));
            }
        }
        let mut interp: f64 = 0.0;
        let mut within = ctrl.vertex_controls.len() == s.dim() + 1;
        for (v, u) in s.vertices().iter().zip(&ctrl.vertex_controls) {
            interp = interp.max((ctrl.eval(v) - u).amax());
            within &= bounds.contains(&ctrl.eval(v), CHECK_TOL);
        }
        let mut mismatch: f64 = 0.0;
        for (i, l) in tri.labels(s.id()).iter().enumerate() {
            if mode.discontinuity.contains(l) {
                continue;
            }
            let here = ctrl.eval(s.vertex(i));
            for (other, k) in tri.incident(*l) {
                if other == s.id() {
                    continue;
                }
                if let (Some(oc), Some(os)) = (mode.controller(other), tri.simplex(other)) {
                    mismatch = mismatch.max((oc.eval(os.vertex(k)) - &here).amax());
                }
            }
        }
        out.push(SimplexCheck {
            mode: mode.name.clone(),
            simplex: s.id(),
            invariance_residual: residual,
            interpolation_error: interp,
            continuity_mismatch: mismatch,
            within_bounds: within,
            equilibrium: find_equilibrium(dyn_, ctrl, s).map(|p| p.iter().copied().collect()),
        });
    }
    Ok(out)
}

/// A synthesized multi-mode piecewise affine controller.
#[derive(Clone, Debug)]
pub struct HybridController {
    pub triangulation: Triangulation,
    pub dynamics: AffineDynamics,
    pub bounds: ControlBounds,
    /// Declared discontinuity vertices of the design (each mode keeps its own copy, mirrored as needed).
    pub discontinuity: BTreeSet<VertexLabel>,
    pub margin: f64,
    pub objective: Objective,
    pub modes: Vec<ModeController>,
}

impl HybridController {
    pub fn mode(&self, name: &str) -> Result<&ModeController> {
        self.modes.iter().find(|m| m.name == name).ok_or_else(|| Error::UnknownMode(name.to_string()))
    }

    pub fn mode_index(&self, name: &str) -> Result<usize> {
        self.modes.iter().position(|m| m.name == name).ok_or_else(|| Error::UnknownMode(name.to_string()))
    }

    pub fn verify(&self) -> Result<Vec<SimplexCheck>> {
        let mut all = Vec::new();
        for m in &self.modes {
            all.extend(verify_mode(&self.triangulation, &self.dynamics, m, &self.bounds)?);
        }
        Ok(all)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pt(x: f64, y: f64) -> Point {
        Point::from_vec(vec![x, y])
    }

    fn unit() -> Simplex {
        Simplex::new(SimplexId(1), vec![pt(0.0, 0.0), pt(1.0, 0.0), pt(0.0, 1.0)]).unwrap()
    }

    fn opts(limit: f64) -> SynthesisOptions {
        SynthesisOptions::new(ControlBounds::symmetric(1, limit).unwrap())
    }

    fn u1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn target() -> TargetSet {
        TargetSet::new("T", 0.0, 1.0, 0.0).unwrap()
    }

    #[test]
    fn invariance_rows_by_hand() {
        // h_1 = (−1,0): rows −ẋ_i ≤ −ε, i.e. no u dependence; h_2 = (0,−1): −u_i ≤ −ε.
        let rows = invariance_rows(&unit(), &AffineDynamics::double_integrator(), &[1, 2], 0.0).unwrap();
        assert_eq!(rows.len(), 4);
        let on_h1: Vec<_> = rows.iter().filter(|r| r.facet == 1).collect();
        assert!(on_h1.iter().all(|r| !r.has_authority()));
        // A v_2 = (1,0) and h_1·(1,0) = −1, so the row reads 0 ≤ 1.
        assert_abs_diff_eq!(on_h1.iter().find(|r| r.vertex == 2).unwrap().rhs, 1.0, epsilon = 1e-15);
        for r in rows.iter().filter(|r| r.facet == 2) {
            assert_abs_diff_eq!(r.coeffs[0], -1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn invariance_lp_double_integrator() {
        let s = unit();
        let u = invariance_lp(&s, &AffineDynamics::double_integrator(), &[1, 2], &opts(3.2)).unwrap().unwrap();
        assert!(u[0][0] >= 0.0 && u[1][0] >= 0.0);
        assert!(u.iter().all(|x| x[0].abs() <= 3.2 + 1e-12));
    }

    #[test]
    fn invariance_lp_all_restricted() {
        // Facet 0 (normal (1,1)/√2) constrains v_1 and v_2 only. At v_1 = (1,0)
        // it gives u_1 ≤ 0 while facet 2 gives u_1 ≥ 0; at v_2 = (0,1) it gives u_2 ≤ −1.
        let s = unit();
        let di = AffineDynamics::double_integrator();
        let mut o = opts(3.2);
        o.margin = 0.0;
        let u = invariance_lp(&s, &di, &[0, 1, 2], &o).unwrap().unwrap();
        assert!(u[0][0] >= -1e-12);
        assert_abs_diff_eq!(u[1][0], 0.0, epsilon = 1e-12);
        assert!(u[2][0] <= -1.0 + 1e-12);
        // zero flow at v_1 is an equilibrium
        let ctrl = SimplexController::from_vertex_controls(&s, u).unwrap();
        assert!(!equilibrium_check(&di, &ctrl, &s));
        // any strict margin makes u_1 impossible
        assert!(invariance_lp(&s, &di, &[0, 1, 2], &opts(3.2)).unwrap().is_none());
    }

    #[test]
    fn invariance_lp_without_authority_is_infeasible() {
        let dyn_ = AffineDynamics::new(DMatrix::zeros(2, 2), DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), DVector::from_vec(vec![0.0, 1.0]))
            .unwrap();
        let got = invariance_lp(&unit(), &dyn_, &[0], &opts(0.0)).unwrap();
        assert!(got.is_none());
        assert!(invariance_lp(&unit(), &dyn_, &[0], &opts(3.2)).unwrap().is_some());
    }

    #[test]
    fn invariance_lp_needs_restricted_facet() {
        assert!(matches!(
            invariance_lp(&unit(), &AffineDynamics::double_integrator(), &[], &opts(1.0)),
            Err(Error::NoRestrictedFacet(_))
        ));
    }

    #[test]
    fn affine_feedback_examples() {
        let s = unit();
        let (k, g) = affine_feedback(&s, &[u1(1.0), u1(1.0), u1(1.0)]).unwrap();
        assert_abs_diff_eq!(k, DMatrix::zeros(1, 2), epsilon = 1e-14);
        assert_abs_diff_eq!(g[0], 1.0, epsilon = 1e-14);
        let (k, g) = affine_feedback(&s, &[u1(0.0), u1(1.0), u1(2.0)]).unwrap();
        assert_abs_diff_eq!(k, DMatrix::from_row_slice(1, 2, &[1.0, 2.0]), epsilon = 1e-14);
        assert_abs_diff_eq!(g[0], 0.0, epsilon = 1e-14);
    }

    fn fixed(gain: DMatrix<f64>, offset: f64) -> SimplexController {
        SimplexController { simplex: SimplexId(1), vertex_controls: vec![], gain, offset: u1(offset) }
    }

    #[test]
    fn equilibrium_examples() {
        let di = AffineDynamics::double_integrator();
        // ẋ₁ = x₂, ẋ₂ = 1: A + BK singular, second component constant.
        assert!(equilibrium_check(&di, &fixed(DMatrix::zeros(1, 2), 1.0), &unit()));

        let stable = AffineDynamics::new(-DMatrix::identity(2, 2), DMatrix::zeros(2, 1), DVector::zeros(2)).unwrap();
        let zero = fixed(DMatrix::zeros(1, 2), 0.0);
        let around = Simplex::new(SimplexId(2), vec![pt(-1.0, -1.0), pt(1.0, -1.0), pt(0.0, 1.0)]).unwrap();
        assert!(!equilibrium_check(&stable, &zero, &around));
        let far = Simplex::new(SimplexId(3), vec![pt(5.0, 5.0), pt(6.0, 5.0), pt(5.0, 6.0)]).unwrap();
        assert!(equilibrium_check(&stable, &zero, &far));
    }

    #[test]
    fn singular_field_vanishing_on_a_segment() {
        // u = −x₂: f = (x₂, −x₂) vanishes on x₂ = 0, which the unit simplex touches.
        let di = AffineDynamics::double_integrator();
        let ctrl = fixed(DMatrix::from_row_slice(1, 2, &[0.0, -1.0]), 0.0);
        let p = find_equilibrium(&di, &ctrl, &unit()).unwrap();
        assert_abs_diff_eq!(p[1], 0.0, epsilon = 1e-12);
        let lifted = Simplex::new(SimplexId(4), vec![pt(0.0, 1.0), pt(1.0, 1.0), pt(0.0, 2.0)]).unwrap();
        assert!(equilibrium_check(&di, &ctrl, &lifted));
    }

    fn two_triangles(roles_a: Vec<FacetRole>, roles_b: Vec<FacetRole>) -> (Triangulation, FacetRoles) {
        let vs = BTreeMap::from([(1, pt(0.0, 0.0)), (2, pt(1.0, 0.0)), (3, pt(0.0, 1.0)), (4, pt(0.0, -1.0))]);
        let t = Triangulation::new(vs, vec![(SimplexId(1), vec![1, 2, 3]), (SimplexId(2), vec![1, 2, 4])]).unwrap();
        (t, BTreeMap::from([(SimplexId(1), roles_a), (SimplexId(2), roles_b)]))
    }

    #[test]
    fn continuity_conflict_is_reported() {
        use FacetRole::*;
        // B = (0,1), no drift: S1's bottom edge (normal (0,−1)) demands u ≥ ε at
        // vertices 1,2; S2's top edge (normal (0,1)) demands u ≤ −ε there.
        let dyn_ = AffineDynamics::new(DMatrix::zeros(2, 2), DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), DVector::zeros(2)).unwrap();
        let (t, roles) = two_triangles(vec![Exit, Exit, Restricted], vec![Exit, Exit, Restricted]);
        let exempt = BTreeSet::new();
        let spec = ModeSpec { name: "m", successor: "m", target: target(), roles: &roles, discontinuity: &exempt };
        let err = synthesize_mode(&t, &dyn_, &spec, &opts(3.2)).unwrap_err();
        let SynthesisFailure::ContinuityConflict { vertex, first, second } = &err else { panic!("{err}") };
        assert_eq!(*vertex, 1);
        assert_eq!(first.simplex, SimplexId(1));
        assert_eq!(second.simplex, SimplexId(2));
        assert!(first.ranges[0].0 >= 1e-6 - 1e-12);
        assert!(second.ranges[0].1 <= -1e-6 + 1e-12);
        assert!(err.to_string().contains("continuity conflict at vertex 1"));

        // Exempting both shared vertices removes the conflict.
        let exempt = BTreeSet::from([1, 2]);
        let spec = ModeSpec { discontinuity: &exempt, ..spec };
        let res = synthesize_mode(&t, &dyn_, &spec, &opts(3.2));
        assert!(!matches!(res, Err(SynthesisFailure::ContinuityConflict { .. })));
    }

    #[test]
    fn single_simplex_mode_is_the_composition() {
        use FacetRole::*;
        let vs = BTreeMap::from([(1, pt(0.0, 0.0)), (2, pt(1.0, 0.0)), (3, pt(0.0, 1.0))]);
        let t = Triangulation::new(vs, vec![(SimplexId(1), vec![1, 2, 3])]).unwrap();
        let roles = BTreeMap::from([(SimplexId(1), vec![Exit, Exit, Restricted])]);
        let exempt = BTreeSet::new();
        let spec = ModeSpec { name: "m", successor: "m", target: target(), roles: &roles, discontinuity: &exempt };
        let di = AffineDynamics::double_integrator();
        let mode = synthesize_mode(&t, &di, &spec, &opts(3.2)).unwrap();
        let ctrl = &mode.controllers[&SimplexId(1)];
        let direct = invariance_lp(t.simplex(SimplexId(1)).unwrap(), &di, &[2], &opts(3.2)).unwrap().unwrap();
        for (a, b) in ctrl.vertex_controls.iter().zip(&direct) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        assert!(equilibrium_check(&di, ctrl, t.simplex(SimplexId(1)).unwrap()));
        let checks = verify_mode(&t, &di, &mode, &opts(3.2).bounds).unwrap();
        assert!(checks.iter().all(|c| c.pass()), "{checks:?}");
    }

    #[test]
    fn infeasible_simplex_is_named() {
        use FacetRole::*;
        let dyn_ = AffineDynamics::new(DMatrix::zeros(2, 2), DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), DVector::from_vec(vec![0.0, 1.0]))
            .unwrap();
        let (t, roles) = two_triangles(vec![Exit, Exit, Restricted], vec![Exit, Exit, Restricted]);
        let exempt = BTreeSet::new();
        let spec = ModeSpec { name: "m", successor: "m", target: target(), roles: &roles, discontinuity: &exempt };
        // S2's top edge needs 1 + u ≤ −ε, impossible with |u| ≤ 0.5.
        let err = synthesize_mode(&t, &dyn_, &spec, &opts(0.5)).unwrap_err();
        assert!(matches!(err, SynthesisFailure::Infeasible { simplex: SimplexId(2), .. }), "{err}");
    }

    #[test]
    fn reflection_of_constant_controller() {
        let vs = BTreeMap::from([(1, pt(0.0, 0.0)), (2, pt(1.0, 0.0)), (3, pt(0.0, 1.0)), (4, pt(-1.0, 0.0)), (5, pt(0.0, -1.0))]);
        let t = Triangulation::new(vs, vec![(SimplexId(1), vec![1, 2, 3]), (SimplexId(2), vec![1, 4, 5])]).unwrap();
        let s1 = t.simplex(SimplexId(1)).unwrap();
        let s2 = t.simplex(SimplexId(2)).unwrap();
        let mk = |s: &Simplex, u: [f64; 3]| SimplexController::from_vertex_controls(s, u.iter().map(|&x| u1(x)).collect()).unwrap();
        let mode = ModeController {
            name: "a".into(),
            successor: "b".into(),
            target: target(),
            roles: BTreeMap::new(),
            discontinuity: BTreeSet::new(),
            controllers: BTreeMap::from([(SimplexId(1), mk(s1, [0.7; 3])), (SimplexId(2), mk(s2, [0.0, 1.0, 2.0]))]),
        };
        let r = reflect_mode(&t, &mode, "b", "a", "T'").unwrap();
        assert_abs_diff_eq!(r.controllers[&SimplexId(2)].offset[0], -0.7, epsilon = 1e-12);
        let s0 = pt(0.3, 0.2);
        assert_abs_diff_eq!(r.controllers[&SimplexId(2)].eval(&-&s0), -mode.controllers[&SimplexId(1)].eval(&s0), epsilon = 1e-12);
        let rr = reflect_mode(&t, &r, "a", "b", "T").unwrap();
        for (id, c) in &mode.controllers {
            assert_abs_diff_eq!(rr.controllers[id].gain, c.gain, epsilon = 1e-12);
            assert_abs_diff_eq!(rr.controllers[id].offset, c.offset, epsilon = 1e-12);
            for (a, b) in rr.controllers[id].vertex_controls.iter().zip(&c.vertex_controls) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
        assert_eq!(r.target.x_lo, -1.0);
    }

    #[test]
    fn reachability_examples() {
        use FacetRole::*;
        // S1 = [1,2,3] above the axis, S2 = [1,2,4] below; shared facet 1-2 is
        // opposite local vertex 2 in both.
        let goal = TargetSet::new("goal", -2.0, 2.0, -1.0).unwrap();
        let (t, roles) = two_triangles(vec![Restricted, Restricted, Exit], vec![Restricted, Exit, Restricted]);
        // S2's facet opposite vertex 2 (label 2) is 1-4, touching ẋ = −1 at (0,−1) only.
        let rep = reachability_check(&t, &roles, &goal);
        assert!(rep.ok(), "{rep:?}");
        assert_eq!(rep.paths[&SimplexId(1)], vec![SimplexId(1), SimplexId(2)]);

        let (t, roles) = two_triangles(vec![Exit, Restricted, Restricted], vec![Restricted, Exit, Restricted]);
        let rep = reachability_check(&t, &roles, &goal);
        assert_eq!(rep.unreachable, vec![SimplexId(1)]);
    }
}
