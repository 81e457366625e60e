//! Hybrid closed-loop simulation with event location, disturbances and
//! safety and liveness monitoring.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::case_study::ManeuverParams;
use crate::error::{Error, Result};
use crate::geometry::{Point, SimplexId, Triangulation, CONTAINMENT_TOL};
use crate::lp::{Cmp, LinearProgram, LpOutcome};
use crate::synthesis::{ControlBounds, HybridController};

/// Standard gravity used by the pitch mapping, m/s².
pub const GRAVITY: f64 = 9.81;
/// Bisection iterations when locating an event inside a step.
const BISECTION_ITERS: usize = 60;
/// Distance along the flow used to decide which simplex is entered.
const PROBE_STEP: f64 = 1e-7;
/// Cap on located events inside one integration step.
const MAX_EVENTS_PER_STEP: usize = 64;
/// Longest stretch without a target crossing before the sequence counts as stalled, s.
pub const T1_PROGRESS_WINDOW: f64 = 10.0;

/// {x ∈ [x_lo, x_hi], ẋ = velocity} in (position, velocity) coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSet {
    pub name: String,
    pub x_lo: f64,
    pub x_hi: f64,
    pub velocity: f64,
}

impl TargetSet {
    pub fn new(name: &str, x_lo: f64, x_hi: f64, velocity: f64) -> Result<Self> {
        if !(x_lo < x_hi) {
            return Err(Error::InvalidParams(format!("target {name}: x_lo = {x_lo} must be below x_hi = {x_hi}")));
        }
        Ok(TargetSet { name: name.to_string(), x_lo, x_hi, velocity })
    }

    pub fn contains(&self, s: &Point, tol: f64) -> bool {
        (s[1] - self.velocity).abs() <= tol && s[0] >= self.x_lo - tol && s[0] <= self.x_hi + tol
    }

    /// Image under s ↦ −s.
    pub fn mirrored(&self, name: &str) -> TargetSet {
        TargetSet { name: name.to_string(), x_lo: -self.x_hi, x_hi: -self.x_lo, velocity: -self.velocity }
    }

    /// Whether the convex hull of `points` meets the target at a point with x
    /// strictly inside (x_lo, x_hi); touching only at an end does not count.
    pub fn meets_hull(&self, points: &[&Point]) -> bool {
        let mut lp = LinearProgram::new();
        let lam: Vec<_> = points.iter().map(|_| lp.add_var(0.0, 0.0, f64::INFINITY)).collect();
        let slack = lp.add_var(-1.0, f64::NEG_INFINITY, self.x_hi - self.x_lo);
        lp.add_row(lam.iter().map(|&v| (v, 1.0)).collect(), Cmp::Eq, 1.0);
        lp.add_row(lam.iter().zip(points).map(|(&v, p)| (v, p[1])).collect(), Cmp::Eq, self.velocity);
        let mut lo: Vec<_> = lam.iter().zip(points).map(|(&v, p)| (v, p[0])).collect();
        lo.push((slack, -1.0));
        lp.add_row(lo, Cmp::Ge, self.x_lo);
        let mut hi: Vec<_> = lam.iter().zip(points).map(|(&v, p)| (v, p[0])).collect();
        hi.push((slack, 1.0));
        lp.add_row(hi, Cmp::Le, self.x_hi);
        matches!(lp.solve(), LpOutcome::Optimal { objective, .. } if -objective > 1e-9)
    }
}

/// A located target crossing between two states.
#[derive(Clone, Debug, PartialEq)]
pub struct Crossing {
    pub point: Point,
    /// Position of the crossing between the two states, in [0, 1].
    pub fraction: f64,
}

/// Crossing of the target's velocity level between `prev` and `next`, with the
/// linearly interpolated position inside the target interval.
pub fn detect_target_crossing(prev: &Point, next: &Point, target: &TargetSet) -> Option<Crossing> {
    let a = prev[1] - target.velocity;
    let b = next[1] - target.velocity;
    let crosses = a * b < 0.0 || (b == 0.0 && a != 0.0);
    if !crosses {
        return None;
    }
    let fraction = a / (a - b);
    let x = prev[0] + fraction * (next[0] - prev[0]);
    (x >= target.x_lo && x <= target.x_hi).then(|| Crossing { point: Point::from_vec(vec![x, target.velocity]), fraction })
}

/// Truth values of the safety and liveness inequalities at one state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpecFlags {
    pub s1: bool,
    pub s2: bool,
    pub s3: bool,
    pub l1: bool,
    pub l2: bool,
    pub l3: bool,
}

impl SpecFlags {
    pub const NAMES: [&'static str; 6] = ["S1", "S2", "S3", "L1", "L2", "L3"];

    pub fn safe(&self) -> bool {
        self.s1 && self.s2 && self.s3
    }

    pub fn live(&self) -> bool {
        self.l1 || self.l2 || self.l3
    }

    pub fn as_array(&self) -> [bool; 6] {
        [self.s1, self.s2, self.s3, self.l1, self.l2, self.l3]
    }
}

pub fn check_specs(params: &ManeuverParams, s: &Point) -> SpecFlags {
    let (x, v) = (s[0], s[1]);
    let a_saf = params.a_saf();
    let a_liv = params.a_liv();
    SpecFlags {
        s1: x.abs() <= params.d_max,
        s2: v.abs() <= params.v_max,
        s3: (x - v / a_saf).abs() <= params.d_max,
        l1: v.abs() >= params.v_min,
        l2: (x - v / a_liv).abs() >= params.d_thres,
        l3: (x + v / a_liv).abs() >= params.d_thres,
    }
}

/// Desired pitch angle for a commanded horizontal acceleration.
pub fn pitch_command(u: f64) -> f64 {
    (u / GRAVITY).atan()
}

/// One classical RK4 step of ṡ = f(s).
pub fn rk4(f: impl Fn(&DVector<f64>) -> DVector<f64>, s: &DVector<f64>, h: f64) -> DVector<f64> {
    let k1 = f(s);
    let k2 = f(&(s + &k1 * (h / 2.0)));
    let k3 = f(&(s + &k2 * (h / 2.0)));
    let k4 = f(&(s + &k3 * h));
    s + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Double-integrator step under constant input.
pub fn step(state: &Point, u: f64, dt: f64) -> Point {
    rk4(|z| Point::from_vec(vec![z[1], u]), state, dt)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DisturbanceKind {
    /// State frozen for `duration` seconds.
    Hold { duration: f64 },
    /// Instantaneous velocity change.
    Impulse { delta_v: f64 },
    /// State replaced.
    Teleport { state: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub time: f64,
    #[serde(flatten)]
    pub kind: DisturbanceKind,
}

impl Disturbance {
    pub fn describe(&self) -> String {
        match &self.kind {
            DisturbanceKind::Hold { duration } => format!("hold for {duration} s"),
            DisturbanceKind::Impulse { delta_v } => format!("impulse delta_v={delta_v:+}"),
            DisturbanceKind::Teleport { state } => {
                let s: Vec<String> = state.iter().map(|x| format!("{x}")).collect();
                format!("teleport to ({})", s.join(";"))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub initial_state: Vec<f64>,
    pub initial_mode: String,
    pub duration: f64,
    pub dt: f64,
    /// Time constant of an optional first-order lag between commanded and
    /// realised acceleration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pitch_lag: Option<f64>,
    #[serde(default)]
    pub disturbances: Vec<Disturbance>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            return bad(format!("duration must be non-negative, got {}", self.duration));
        }
        if self.initial_state.len() != 2 || self.initial_state.iter().any(|x| !x.is_finite()) {
            return bad("initial_state must be two finite numbers (x, xdot)".into());
        }
        if let Some(tau) = self.pitch_lag {
            if !(tau > 0.0) {
                return bad(format!("pitch_lag must be positive, got {tau}"));
            }
        }
        let mut last = f64::NEG_INFINITY;
        for d in &self.disturbances {
            if !(d.time >= 0.0) || d.time < last {
                return bad(format!("disturbance times must be non-negative and ordered (at t = {})", d.time));
            }
            last = d.time;
            match &d.kind {
                DisturbanceKind::Hold { duration } if !(*duration >= 0.0) => return bad("hold duration must be non-negative".into()),
                DisturbanceKind::Teleport { state } if state.len() != 2 => return bad("teleport state must have two entries".into()),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }
}

/// Where a state sits from the policy's point of view.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Piece {
    Simplex(SimplexId),
    /// Outside every simplex: fallback control.
    Outside,
    /// Policies without spatial pieces.
    Global,
}

impl Piece {
    pub fn simplex(&self) -> Option<SimplexId> {
        match self {
            Piece::Simplex(id) => Some(*id),
            _ => None,
        }
    }
}

/// A feedback law the executor can integrate.
pub trait Policy {
    fn control(&self, t: f64, s: &Point, mode: usize, piece: Piece) -> DVector<f64>;
    /// Piece holding `s`, preferring `hint`.
    fn locate(&self, s: &Point, hint: Option<Piece>) -> Piece;
    /// Whether `s` still belongs to `piece` (with hysteresis tolerance).
    fn inside(&self, s: &Point, piece: Piece) -> bool;
    /// Piece entered when leaving `from` at `s` and heading to `probe`.
    fn enter(&self, s: &Point, probe: &Point, from: Piece) -> Piece;
    /// Whether `s` has escaped every region the policy can handle.
    fn lost(&self, _s: &Point) -> bool {
        false
    }
}

/// Saturated PD pull toward the nearest point of the triangulated set.
#[derive(Clone, Debug, PartialEq)]
pub struct Fallback {
    pub kp: f64,
    pub kd: f64,
    /// Margin added around the triangulation's bounding box before a run counts as lost.
    pub lost_margin: f64,
}

impl Default for Fallback {
    fn default() -> Self {
        Fallback { kp: 4.0, kd: 4.0, lost_margin: 1.0 }
    }
}

/// The synthesized piecewise affine law, mode by mode.
pub struct RcpPolicy<'a> {
    ctrl: &'a HybridController,
    fallback: Fallback,
    lost_lo: Point,
    lost_hi: Point,
}

impl<'a> RcpPolicy<'a> {
    pub fn new(ctrl: &'a HybridController, fallback: Fallback) -> Self {
        let (lo, hi) = ctrl.triangulation.bounding_box();
        let m = fallback.lost_margin;
        RcpPolicy { ctrl, lost_lo: lo.add_scalar(-m), lost_hi: hi.add_scalar(m), fallback }
    }

    fn tri(&self) -> &Triangulation {
        &self.ctrl.triangulation
    }
}

/// u = K_c s + g_c of the simplex found by hinted point location.
pub fn eval_control(ctrl: &HybridController, mode: usize, s: &Point, hint: Option<SimplexId>) -> Option<(DVector<f64>, SimplexId)> {
    let id = ctrl.triangulation.locate(s, hint)?;
    Some((ctrl.modes[mode].controllers[&id].eval(s), id))
}

fn fallback_control(tri: &Triangulation, fb: &Fallback, bounds: &ControlBounds, s: &Point) -> DVector<f64> {
    let q = tri.closest_point(s);
    let u = fb.kp * (q[0] - s[0]) + fb.kd * (q[1] - s[1]);
    bounds.clamp(&DVector::from_element(bounds.len(), u))
}

impl Policy for RcpPolicy<'_> {
    fn control(&self, _t: f64, s: &Point, mode: usize, piece: Piece) -> DVector<f64> {
        match piece {
            Piece::Simplex(id) => self.ctrl.modes[mode].controllers[&id].eval(s),
            _ => fallback_control(self.tri(), &self.fallback, &self.ctrl.bounds, s),
        }
    }

    fn locate(&self, s: &Point, hint: Option<Piece>) -> Piece {
        self.tri().locate(s, hint.and_then(|p| p.simplex())).map(Piece::Simplex).unwrap_or(Piece::Outside)
    }

    fn inside(&self, s: &Point, piece: Piece) -> bool {
        match piece {
            Piece::Simplex(id) => self.tri().simplex(id).is_some_and(|x| x.contains(s, CONTAINMENT_TOL)),
            _ => self.tri().locate(s, None).is_none(),
        }
    }

    fn enter(&self, s: &Point, probe: &Point, from: Piece) -> Piece {
        let found = self
            .tri()
            .simplices()
            .iter()
            .find(|x| Piece::Simplex(x.id()) != from && x.contains(probe, CONTAINMENT_TOL))
            .map(|x| Piece::Simplex(x.id()));
        match (found, from) {
            (Some(p), _) => p,
            (None, Piece::Outside) => self.locate(s, None),
            (None, _) => Piece::Outside,
        }
    }

    fn lost(&self, s: &Point) -> bool {
        (0..s.len()).any(|k| s[k] < self.lost_lo[k] || s[k] > self.lost_hi[k])
    }
}

/// How the feedback is applied between samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlUpdate {
    /// The law is evaluated along the flow, with simplex exits and target
    /// crossings located inside each step.
    #[default]
    Continuous,
    /// The law is sampled once per step and held.
    ZeroOrderHold,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunOptions {
    pub update: ControlUpdate,
}

/// Name, target and successor of one mode, as the executor sees it.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeInfo {
    pub name: String,
    pub target: TargetSet,
    pub successor: usize,
}

pub fn schedule_of(ctrl: &HybridController) -> Result<Vec<ModeInfo>> {
    ctrl.modes
        .iter()
        .map(|m| Ok(ModeInfo { name: m.name.clone(), target: m.target.clone(), successor: ctrl.mode_index(&m.successor)? }))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    ModeSwitch,
    FacetCross,
    SpecViolation,
    Disturbance,
    TargetCross,
    Lost,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::ModeSwitch => "mode-switch",
            EventKind::FacetCross => "facet-cross",
            EventKind::SpecViolation => "spec-violation",
            EventKind::Disturbance => "disturbance",
            EventKind::TargetCross => "target-cross",
            EventKind::Lost => "lost",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub state: Point,
    pub u: DVector<f64>,
    pub theta_d: f64,
    pub piece: Piece,
    pub mode: usize,
    pub flags: SpecFlags,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossingRecord {
    pub t: f64,
    pub x: f64,
    pub target: String,
    /// Whether the crossed target belonged to the active mode.
    pub expected: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunStatus {
    Completed,
    Lost { t: f64, state: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryLog {
    pub modes: Vec<String>,
    pub samples: Vec<Sample>,
    pub events: Vec<Event>,
    pub crossings: Vec<CrossingRecord>,
    pub status: RunStatus,
}

/// Aggregate figures of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    /// Violating samples per spec, in `SpecFlags::NAMES` order.
    pub violations: [usize; 6],
    pub unsafe_samples: usize,
    pub unlive_samples: usize,
    pub crossing_sequence: Vec<String>,
    /// Only active-mode targets were crossed, they alternate, and no gap
    /// between crossings (or before the first, or after the last) exceeds
    /// `T1_PROGRESS_WINDOW`.
    pub t1_ok: bool,
    /// Longest such gap, s.
    pub max_crossing_gap: f64,
    pub max_abs_x: f64,
    pub max_abs_xdot: f64,
    pub fallback_samples: usize,
    pub lost: bool,
}

impl TrajectoryLog {
    pub fn summary(&self) -> RunSummary {
        let mut violations = [0usize; 6];
        let (mut unsafe_samples, mut unlive_samples, mut fallback_samples) = (0, 0, 0);
        let (mut max_x, mut max_v): (f64, f64) = (0.0, 0.0);
        for s in &self.samples {
            for (k, ok) in s.flags.as_array().iter().enumerate() {
                if !ok {
                    violations[k] += 1;
                }
            }
            unsafe_samples += usize::from(!s.flags.safe());
            unlive_samples += usize::from(!s.flags.live());
            fallback_samples += usize::from(s.piece == Piece::Outside);
            max_x = max_x.max(s.state[0].abs());
            max_v = max_v.max(s.state[1].abs());
        }
        let seq: Vec<String> = self.crossings.iter().map(|c| c.target.clone()).collect();
        let alternating = seq.windows(2).all(|w| w[0] != w[1]);
        let (t0, t1) = (self.samples.first().map_or(0.0, |s| s.t), self.samples.last().map_or(0.0, |s| s.t));
        let times: Vec<f64> = std::iter::once(t0).chain(self.crossings.iter().map(|c| c.t)).chain(std::iter::once(t1)).collect();
        let max_gap = times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        RunSummary {
            violations,
            unsafe_samples,
            unlive_samples,
            crossing_sequence: seq,
            t1_ok: alternating && self.crossings.iter().all(|c| c.expected) && max_gap <= T1_PROGRESS_WINDOW,
            max_crossing_gap: max_gap,
            max_abs_x: max_x,
            max_abs_xdot: max_v,
            fallback_samples,
            lost: matches!(self.status, RunStatus::Lost { .. }),
        }
    }

    pub fn mode_name(&self, mode: usize) -> &str {
        &self.modes[mode]
    }
}

struct Runner<'a, P: Policy> {
    policy: &'a P,
    schedule: &'a [ModeInfo],
    specs: &'a ManeuverParams,
    lag: Option<f64>,
    log: TrajectoryLog,
    mode: usize,
    piece: Piece,
    prev_flags: Option<SpecFlags>,
}

impl<P: Policy> Runner<'_, P> {
    fn event(&mut self, t: f64, kind: EventKind, detail: String) {
        self.log.events.push(Event { t, kind, detail });
    }

    // Extended state: (x, ẋ) followed by the realised acceleration when lagged.
    fn field(&self, t: f64, z: &DVector<f64>, mode: usize, piece: Piece) -> DVector<f64> {
        let s = z.rows(0, 2).into_owned();
        let u = self.policy.control(t, &s, mode, piece)[0];
        match self.lag {
            None => DVector::from_vec(vec![z[1], u]),
            Some(tau) => DVector::from_vec(vec![z[1], z[2], (u - z[2]) / tau]),
        }
    }

    fn record(&mut self, t: f64, z: &DVector<f64>) {
        let s: Point = z.rows(0, 2).into_owned();
        let u = self.policy.control(t, &s, self.mode, self.piece);
        let flags = check_specs(self.specs, &s);
        if self.piece == Piece::Outside {
            self.event(t, EventKind::SpecViolation, "outside triangulation: fallback control".into());
        }
        let before = self.prev_flags.map(|f| f.as_array()).unwrap_or([true; 6]);
        for (k, (now, was)) in flags.as_array().iter().zip(before).enumerate() {
            if !now && was {
                self.event(t, EventKind::SpecViolation, format!("{} violated", SpecFlags::NAMES[k]));
            }
        }
        self.prev_flags = Some(flags);
        self.log.samples.push(Sample { t, theta_d: pitch_command(u[0]), state: s, u, piece: self.piece, mode: self.mode, flags });
    }

    fn set_piece(&mut self, t: f64, piece: Piece) {
        if piece != self.piece {
            let name = |p: Piece| match p {
                Piece::Simplex(id) => id.to_string(),
                Piece::Outside => "outside".to_string(),
                Piece::Global => "global".to_string(),
            };
            let detail = format!("{} -> {}", name(self.piece), name(piece));
            self.event(t, EventKind::FacetCross, detail);
            self.piece = piece;
        }
    }

    /// Handle a velocity-level crossing between `a` and `b` (first two coordinates).
    fn crossing(&mut self, t0: f64, h: f64, a: &DVector<f64>, b: &DVector<f64>) {
        let pa: Point = a.rows(0, 2).into_owned();
        let pb: Point = b.rows(0, 2).into_owned();
        let active = &self.schedule[self.mode];
        if let Some(c) = detect_target_crossing(&pa, &pb, &active.target) {
            let t = t0 + c.fraction * h;
            let (name, x) = (active.target.name.clone(), c.point[0]);
            let next = active.successor;
            self.event(t, EventKind::TargetCross, format!("{name} at x={x:.6}"));
            self.log.crossings.push(CrossingRecord { t, x, target: name, expected: true });
            let detail = format!("{} -> {}", self.schedule[self.mode].name, self.schedule[next].name);
            self.event(t, EventKind::ModeSwitch, detail);
            self.mode = next;
            return;
        }
        for (k, other) in self.schedule.iter().enumerate() {
            if k == self.mode || other.target == active.target {
                continue;
            }
            if let Some(c) = detect_target_crossing(&pa, &pb, &other.target) {
                let t = t0 + c.fraction * h;
                let (name, x) = (other.target.name.clone(), c.point[0]);
                self.event(t, EventKind::TargetCross, format!("{name} at x={x:.6}"));
                self.event(t, EventKind::SpecViolation, format!("T1: crossed {name} while in mode {}", active.name));
                self.log.crossings.push(CrossingRecord { t, x, target: name, expected: false });
                break;
            }
        }
    }

    fn velocity_event(&self, a: &DVector<f64>, b: &DVector<f64>) -> bool {
        self.schedule.iter().any(|m| {
            let (p, q) = (a[1] - m.target.velocity, b[1] - m.target.velocity);
            p * q < 0.0 || (q == 0.0 && p != 0.0)
        })
    }

    fn advance_continuous(&mut self, t0: f64, z: &mut DVector<f64>, dt: f64) {
        let mut elapsed = 0.0;
        let mut events = 0;
        while dt - elapsed > 1e-15 {
            let (mode, piece) = (self.mode, self.piece);
            let h_left = dt - elapsed;
            let t = t0 + elapsed;
            let flow = |zz: &DVector<f64>| self.field(t, zz, mode, piece);
            let start = z.clone();
            let trial = |h: f64| rk4(&flow, &start, h);
            let hit = |y: &DVector<f64>| {
                !self.policy.inside(&y.rows(0, 2).into_owned(), piece) || self.velocity_event(&start, y)
            };
            let full = trial(h_left);
            if events >= MAX_EVENTS_PER_STEP || !hit(&full) {
                *z = full;
                return;
            }
            events += 1;
            let (mut lo, mut hi) = (0.0, h_left);
            for _ in 0..BISECTION_ITERS {
                let mid = 0.5 * (lo + hi);
                if hit(&trial(mid)) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let zl = trial(lo);
            let zh = trial(hi);
            if self.velocity_event(&start, &zh) {
                self.crossing(t + lo, hi - lo, &zl, &zh);
            }
            *z = zh;
            elapsed += hi;
            let s: Point = z.rows(0, 2).into_owned();
            if !self.policy.inside(&s, piece) {
                let f = self.field(t0 + elapsed, z, self.mode, piece);
                let probe: Point = &s + f.rows(0, 2) * PROBE_STEP;
                let next = self.policy.enter(&s, &probe, piece);
                self.set_piece(t0 + elapsed, next);
            }
        }
    }

    fn advance_zoh(&mut self, t0: f64, z: &mut DVector<f64>, dt: f64) {
        let s: Point = z.rows(0, 2).into_owned();
        let u = self.policy.control(t0, &s, self.mode, self.piece)[0];
        let lag = self.lag;
        let next = rk4(
            |zz| match lag {
                None => DVector::from_vec(vec![zz[1], u]),
                Some(tau) => DVector::from_vec(vec![zz[1], zz[2], (u - zz[2]) / tau]),
            },
            z,
            dt,
        );
        if self.velocity_event(z, &next) {
            self.crossing(t0, dt, &z.clone(), &next);
        }
        *z = next;
        let s: Point = z.rows(0, 2).into_owned();
        if !self.policy.inside(&s, self.piece) {
            let p = self.policy.locate(&s, Some(self.piece));
            self.set_piece(t0 + dt, p);
        }
    }
}

/// Integrate the closed loop over the scenario.
///
/// `mode` indices refer to `schedule`; the log's mode names come from it too.
pub fn run<P: Policy>(
    scenario: &Scenario,
    policy: &P,
    schedule: &[ModeInfo],
    specs: &ManeuverParams,
    opts: &RunOptions,
) -> Result<TrajectoryLog> {
    scenario.validate()?;
    let mode = schedule
        .iter()
        .position(|m| m.name == scenario.initial_mode)
        .ok_or_else(|| Error::UnknownMode(scenario.initial_mode.clone()))?;
    let s0 = Point::from_vec(scenario.initial_state.clone());
    let mut z = match scenario.pitch_lag {
        None => s0.clone(),
        Some(_) => DVector::from_vec(vec![s0[0], s0[1], 0.0]),
    };
    let mut runner = Runner {
        policy,
        schedule,
        specs,
        lag: scenario.pitch_lag,
        log: TrajectoryLog {
            modes: schedule.iter().map(|m| m.name.clone()).collect(),
            samples: Vec::new(),
            events: Vec::new(),
            crossings: Vec::new(),
            status: RunStatus::Completed,
        },
        mode,
        piece: policy.locate(&s0, None),
        prev_flags: None,
    };
    if scenario.pitch_lag.is_some() {
        // start with the lag settled on the commanded input
        z[2] = policy.control(0.0, &s0, mode, runner.piece)[0];
    }

    let dt = scenario.dt;
    let steps = scenario.steps();
    let mut pending = scenario.disturbances.iter().peekable();
    let mut hold_until = f64::NEG_INFINITY;
    for k in 0..=steps {
        let t = k as f64 * dt;
        while let Some(d) = pending.next_if(|d| d.time <= t + 0.5 * dt) {
            match &d.kind {
                DisturbanceKind::Hold { duration } => hold_until = t + duration,
                DisturbanceKind::Impulse { delta_v } => z[1] += delta_v,
                DisturbanceKind::Teleport { state } => {
                    z[0] = state[0];
                    z[1] = state[1];
                }
            }
            runner.event(t, EventKind::Disturbance, d.describe());
            let s: Point = z.rows(0, 2).into_owned();
            if !policy.inside(&s, runner.piece) {
                let p = policy.locate(&s, Some(runner.piece));
                runner.set_piece(t, p);
            }
        }
        runner.record(t, &z);
        let s: Point = z.rows(0, 2).into_owned();
        if policy.lost(&s) {
            runner.event(t, EventKind::Lost, format!("state ({:.6}, {:.6}) left the fallback region", s[0], s[1]));
            runner.log.status = RunStatus::Lost { t, state: s.iter().copied().collect() };
            break;
        }
        if k == steps {
            break;
        }
        if t + 0.5 * dt < hold_until {
            continue;
        }
        match opts.update {
            ControlUpdate::Continuous => runner.advance_continuous(t, &mut z, dt),
            ControlUpdate::ZeroOrderHold => runner.advance_zoh(t, &mut z, dt),
        }
    }
    Ok(runner.log)
}
