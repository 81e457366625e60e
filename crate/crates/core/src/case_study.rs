//! The side-to-side maneuver: envelope, triangulation, exit facets, target
//! sets and the trajectory-tracking baseline.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::executor::{Piece, Policy, TargetSet};
use crate::geometry::{FacetRole, HalfSpace, Point, SimplexId, Triangulation, VertexLabel};
use crate::synthesis::{
    reachability_check, reflect_mode, synthesize_mode, AffineDynamics, FacetRoles, HybridController, ModeSpec, SynthesisFailure,
    SynthesisOptions,
};

pub const MODE_L2R: &str = "L2R";
pub const MODE_R2L: &str = "R2L";
pub const TARGET_RIGHT: &str = "B_right";
pub const TARGET_LEFT: &str = "B_left";
/// The vertex (d_thres, 0), where the L2R law is allowed to jump.
pub const DISCONTINUITY_VERTEX: VertexLabel = 14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManeuverParams {
    pub d_max: f64,
    pub d_thres: f64,
    pub d_accel: f64,
    pub v_max: f64,
    pub v_min: f64,
}

impl Default for ManeuverParams {
    fn default() -> Self {
        Self::side_to_side()
    }
}

impl ManeuverParams {
    /// d_max = 2.5 m, d_thres = 1.5 m, d_accel = 0.3 m, v_max = 2 m/s, v_min = 0.6 m/s.
    pub fn side_to_side() -> Self {
        ManeuverParams { d_max: 2.5, d_thres: 1.5, d_accel: 0.3, v_max: 2.0, v_min: 0.6 }
    }

    /// Deceleration that stops from v_max within the turnaround zone.
    pub fn a_saf(&self) -> f64 {
        -self.v_max / (self.d_max - self.d_thres + self.d_accel)
    }

    pub fn a_liv(&self) -> f64 {
        -self.v_min / self.d_accel
    }

    pub fn validate(&self) -> Result<()> {
        let p = self;
        let all_finite = [p.d_max, p.d_thres, p.d_accel, p.v_max, p.v_min].iter().all(|x| x.is_finite());
        if !all_finite {
            return Err(Error::InvalidParams("parameters must be finite".into()));
        }
        if !(p.d_accel > 0.0) {
            return Err(Error::InvalidParams(format!("d_accel = {} must be positive", p.d_accel)));
        }
        if !(p.d_thres > 0.0 && p.d_thres < p.d_max) {
            return Err(Error::InvalidParams(format!("need 0 < d_thres < d_max, got d_thres = {}, d_max = {}", p.d_thres, p.d_max)));
        }
        if !(p.v_min > 0.0 && p.v_min < p.v_max) {
            return Err(Error::InvalidParams(format!("need 0 < v_min < v_max, got v_min = {}, v_max = {}", p.v_min, p.v_max)));
        }
        Ok(())
    }
}

/// Linear-inequality description of the maneuver envelope.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    /// S1 ∧ S2 ∧ S3 (a convex hexagon).
    pub safe: Vec<HalfSpace>,
    /// Convex pieces whose union is the live part of the safe set.
    pub live_pieces: Vec<Vec<HalfSpace>>,
    /// Closure of the safe-but-not-live set.
    pub non_liveness: Vec<HalfSpace>,
}

fn inside(hs: &[HalfSpace], s: &Point, tol: f64) -> bool {
    hs.iter().all(|h| h.contains(s, tol))
}

impl Region {
    pub fn in_safe(&self, s: &Point, tol: f64) -> bool {
        inside(&self.safe, s, tol)
    }

    pub fn in_envelope(&self, s: &Point, tol: f64) -> bool {
        self.live_pieces.iter().any(|p| inside(p, s, tol))
    }

    pub fn in_non_liveness(&self, s: &Point, tol: f64) -> bool {
        inside(&self.non_liveness, s, tol)
    }
}

fn hs(cx: f64, cv: f64, d: f64) -> HalfSpace {
    HalfSpace::new(vec![cx, cv], d)
}

pub fn build_region(p: &ManeuverParams) -> Result<Region> {
    p.validate()?;
    let (ks, kl) = (1.0 / p.a_saf(), 1.0 / p.a_liv());
    // S3: |x − ẋ/a_saf| ≤ d_max
    let safe = vec![
        hs(1.0, 0.0, p.d_max),
        hs(-1.0, 0.0, p.d_max),
        hs(0.0, 1.0, p.v_max),
        hs(0.0, -1.0, p.v_max),
        hs(1.0, -ks, p.d_max),
        hs(-1.0, ks, p.d_max),
    ];
    let with = |extra: Vec<HalfSpace>| -> Vec<HalfSpace> { safe.iter().cloned().chain(extra).collect() };
    let live_pieces = vec![
        with(vec![hs(0.0, -1.0, -p.v_min)]),
        with(vec![hs(0.0, 1.0, -p.v_min)]),
        // |x − ẋ/a_liv| ≥ d_thres and |x + ẋ/a_liv| ≥ d_thres, split by sign
        with(vec![hs(-1.0, kl, -p.d_thres)]),
        with(vec![hs(1.0, -kl, -p.d_thres)]),
        with(vec![hs(-1.0, -kl, -p.d_thres)]),
        with(vec![hs(1.0, kl, -p.d_thres)]),
    ];
    let non_liveness = vec![
        hs(0.0, 1.0, p.v_min),
        hs(0.0, -1.0, p.v_min),
        hs(1.0, -kl, p.d_thres),
        hs(-1.0, kl, p.d_thres),
        hs(1.0, kl, p.d_thres),
        hs(-1.0, -kl, p.d_thres),
    ];
    Ok(Region { safe, live_pieces, non_liveness })
}

/// Simplices covering the non-liveness region.
pub const NON_LIVENESS_SIMPLICES: [u32; 4] = [17, 18, 19, 20];

// (id, vertex labels, exit facets as label pairs); every other facet is restricted.
const LAYOUT: [(u32, [VertexLabel; 3], &[(VertexLabel, VertexLabel)]); 20] = [
    (1, [1, 2, 11], &[(2, 11)]),
    (2, [2, 12, 11], &[(2, 12)]),
    (3, [2, 12, 3], &[(12, 3)]),
    (4, [12, 13, 3], &[(13, 3)]),
    (5, [13, 4, 3], &[(13, 4)]),
    (6, [13, 5, 4], &[(13, 5)]),
    (7, [13, 5, 14], &[(13, 5), (5, 14)]),
    (8, [14, 5, 6], &[(6, 14)]),
    (9, [6, 7, 14], &[(7, 14)]),
    (10, [7, 15, 14], &[(14, 15)]),
    (11, [7, 15, 8], &[(7, 15), (15, 8)]),
    (12, [15, 16, 8], &[(15, 16), (16, 8)]),
    (13, [16, 9, 8], &[(16, 9), (8, 16)]),
    (14, [16, 10, 9], &[(16, 10)]),
    (15, [16, 10, 11], &[(10, 11), (11, 16)]),
    (16, [11, 10, 1], &[(1, 11)]),
    (17, [11, 12, 16], &[(11, 12), (12, 16)]),
    (18, [12, 13, 16], &[(12, 13), (12, 16)]),
    (19, [13, 15, 16], &[(13, 16), (13, 15)]),
    (20, [13, 14, 15], &[(13, 14), (13, 15)]),
];

/// Corner points of the envelope and of the non-liveness hexagon.
///
/// Labels 1-10 run around the safe set, 11-16 around the non-liveness region.
pub fn case_study_vertices(p: &ManeuverParams) -> BTreeMap<VertexLabel, Point> {
    let pt = |x: f64, v: f64| Point::from_vec(vec![x, v]);
    let inner = p.d_thres - p.d_accel;
    let p5x = p.d_max + p.v_min / p.a_saf();
    let half = [
        (1, pt(-p.d_max, 0.0)),
        (2, pt(-p.d_max, p.v_min)),
        (3, pt(-p.d_max, p.v_max)),
        (4, pt(inner, p.v_max)),
        (5, pt(p5x, p.v_min)),
        (11, pt(-p.d_thres, 0.0)),
        (12, pt(-inner, p.v_min)),
        (13, pt(inner, p.v_min)),
    ];
    let mut out = BTreeMap::new();
    for (l, q) in half {
        out.insert(l, q);
    }
    // point-symmetric partners
    for (l, m) in [(6, 1), (7, 2), (8, 3), (9, 4), (10, 5), (14, 11), (15, 12), (16, 13)] {
        let q = -&out[&m];
        out.insert(l, q);
    }
    out
}

/// Everything needed to synthesize and run the maneuver.
#[derive(Clone, Debug)]
pub struct CaseStudy {
    pub params: ManeuverParams,
    pub region: Region,
    pub triangulation: Triangulation,
    /// Facet roles of the L2R design.
    pub roles: FacetRoles,
    pub b_right: TargetSet,
    pub b_left: TargetSet,
    pub discontinuity: BTreeSet<VertexLabel>,
}

pub fn roles_from_exit_pairs(tri: &Triangulation, exits: &BTreeMap<SimplexId, Vec<(VertexLabel, VertexLabel)>>) -> Result<FacetRoles> {
    let mut roles = BTreeMap::new();
    for id in tri.ids() {
        let labels = tri.labels(id);
        let pairs = exits.get(&id).map(Vec::as_slice).unwrap_or(&[]);
        let mut r = vec![FacetRole::Restricted; labels.len()];
        for &(a, b) in pairs {
            let (Some(ia), Some(ib)) = (labels.iter().position(|l| *l == a), labels.iter().position(|l| *l == b)) else {
                return Err(Error::UnknownVertex { id, label: if labels.contains(&a) { b } else { a } });
            };
            let opposite = (0..labels.len()).find(|k| *k != ia && *k != ib).expect("triangle");
            r[opposite] = FacetRole::Exit;
        }
        roles.insert(id, r);
    }
    Ok(roles)
}

pub fn build_case_study(params: &ManeuverParams) -> Result<CaseStudy> {
    params.validate()?;
    let region = build_region(params)?;
    let vertices = case_study_vertices(params);
    let simplices = LAYOUT.iter().map(|(id, ls, _)| (SimplexId(*id), ls.to_vec())).collect();
    let triangulation = Triangulation::new(vertices, simplices)?;
    let exits = LAYOUT.iter().map(|(id, _, ex)| (SimplexId(*id), ex.to_vec())).collect();
    let roles = roles_from_exit_pairs(&triangulation, &exits)?;
    let b_right = TargetSet::new(TARGET_RIGHT, params.d_thres, params.d_max, 0.0)?;
    let b_left = b_right.mirrored(TARGET_LEFT);
    Ok(CaseStudy {
        params: params.clone(),
        region,
        triangulation,
        roles,
        b_right,
        b_left,
        discontinuity: BTreeSet::from([DISCONTINUITY_VERTEX]),
    })
}

/// L2R by joint synthesis, R2L by odd reflection.
pub fn synthesize_hybrid(
    tri: &Triangulation,
    dyn_: &AffineDynamics,
    roles: &FacetRoles,
    target: &TargetSet,
    discontinuity: &BTreeSet<VertexLabel>,
    opts: &SynthesisOptions,
) -> Result<HybridController, SynthesisFailure> {
    let reach = reachability_check(tri, roles, target);
    if !reach.ok() {
        let ids: Vec<String> = reach.unreachable.iter().map(|i| i.to_string()).collect();
        return Err(SynthesisFailure::Invalid(format!("no exit-facet path to {} from {}", target.name, ids.join(", "))));
    }
    let spec = ModeSpec { name: MODE_L2R, successor: MODE_R2L, target: target.clone(), roles, discontinuity };
    let l2r = synthesize_mode(tri, dyn_, &spec, opts)?;
    let r2l = reflect_mode(tri, &l2r, MODE_R2L, MODE_L2R, TARGET_LEFT)?;
    Ok(HybridController {
        triangulation: tri.clone(),
        dynamics: dyn_.clone(),
        bounds: opts.bounds.clone(),
        discontinuity: discontinuity.clone(),
        margin: opts.margin,
        objective: opts.objective,
        modes: vec![l2r, r2l],
    })
}

impl CaseStudy {
    pub fn synthesize(&self, opts: &SynthesisOptions) -> Result<HybridController, SynthesisFailure> {
        synthesize_hybrid(
            &self.triangulation,
            &AffineDynamics::double_integrator(),
            &self.roles,
            &self.b_right,
            &self.discontinuity,
            opts,
        )
    }
}

/// Timed side-to-side reference plus PD tracking.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingBaseline {
    /// Cruise segments run between ±amplitude, m.
    pub amplitude: f64,
    pub cruise_speed: f64,
    /// Duration of each cosine-blended turnaround, s.
    pub turnaround: f64,
    pub kp: f64,
    pub kd: f64,
    pub control_bound: f64,
}

impl Default for TrackingBaseline {
    fn default() -> Self {
        TrackingBaseline { amplitude: 1.75, cruise_speed: 1.0, turnaround: 0.8, kp: 6.0, kd: 4.0, control_bound: 6.0 }
    }
}

/// Reference position, velocity and acceleration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reference {
    pub x: f64,
    pub v: f64,
    pub a: f64,
}

impl TrackingBaseline {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude > 0.0 && self.cruise_speed > 0.0 && self.turnaround > 0.0) {
            return Err(Error::InvalidParams("amplitude, cruise_speed and turnaround must be positive".into()));
        }
        if !(self.kp >= 0.0 && self.kd >= 0.0 && self.control_bound > 0.0) {
            return Err(Error::InvalidParams("gains must be non-negative and control_bound positive".into()));
        }
        Ok(())
    }

    fn cruise_time(&self) -> f64 {
        2.0 * self.amplitude / self.cruise_speed
    }

    pub fn period(&self) -> f64 {
        2.0 * (self.cruise_time() + self.turnaround)
    }

    /// Furthest excursion of the reference, reached mid-turnaround.
    pub fn apex(&self) -> f64 {
        self.amplitude + self.cruise_speed * self.turnaround / PI
    }

    /// Reference at time t; t = 0 is the left apex, heading right next.
    pub fn reference(&self, t: f64) -> Reference {
        let (c, tau, d) = (self.cruise_speed, self.turnaround, self.cruise_time());
        let w = PI / tau;
        let r = c * tau / PI;
        let mut s = t.rem_euclid(self.period());
        // left turnaround, second half
        if s < tau / 2.0 {
            let p = s + tau / 2.0;
            return Reference { x: -self.amplitude - r * (w * p).sin(), v: -c * (w * p).cos(), a: c * w * (w * p).sin() };
        }
        s -= tau / 2.0;
        if s < d {
            return Reference { x: -self.amplitude + c * s, v: c, a: 0.0 };
        }
        s -= d;
        if s < tau {
            return Reference { x: self.amplitude + r * (w * s).sin(), v: c * (w * s).cos(), a: -c * w * (w * s).sin() };
        }
        s -= tau;
        if s < d {
            return Reference { x: self.amplitude - c * s, v: -c, a: 0.0 };
        }
        let p = s - d;
        Reference { x: -self.amplitude - r * (w * p).sin(), v: -c * (w * p).cos(), a: c * w * (w * p).sin() }
    }

    /// u = ẍ_ref + k_p (x_ref − x) + k_d (ẋ_ref − ẋ), clamped.
    pub fn control(&self, t: f64, s: &Point) -> f64 {
        let r = self.reference(t);
        let u = r.a + self.kp * (r.x - s[0]) + self.kd * (r.v - s[1]);
        u.clamp(-self.control_bound, self.control_bound)
    }
}

impl Policy for TrackingBaseline {
    fn control(&self, t: f64, s: &Point, _mode: usize, _piece: Piece) -> DVector<f64> {
        DVector::from_element(1, TrackingBaseline::control(self, t, s))
    }

    fn locate(&self, _s: &Point, _hint: Option<Piece>) -> Piece {
        Piece::Global
    }

    fn inside(&self, _s: &Point, _piece: Piece) -> bool {
        true
    }

    fn enter(&self, _s: &Point, _probe: &Point, _from: Piece) -> Piece {
        Piece::Global
    }
}
