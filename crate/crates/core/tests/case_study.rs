use std::collections::BTreeSet;

use reachctl::case_study::{build_case_study, ManeuverParams, TrackingBaseline, MODE_L2R, NON_LIVENESS_SIMPLICES};
use reachctl::executor::{check_specs, run, schedule_of, ControlUpdate, Disturbance, DisturbanceKind, Fallback, RcpPolicy, RunOptions, Scenario};
use reachctl::geometry::{validate_triangulation, FacetRole, Point, SimplexId, DEFAULT_COVER_SAMPLES};
use reachctl::synthesis::{equilibrium_check, reachability_check, AffineDynamics, ControlBounds, HybridController, SynthesisOptions};

fn synthesized() -> (reachctl::case_study::CaseStudy, HybridController) {
    let cs = build_case_study(&ManeuverParams::side_to_side()).unwrap();
    let hc = cs.synthesize(&SynthesisOptions::new(ControlBounds::symmetric(1, 3.2).unwrap())).unwrap();
    (cs, hc)
}

fn scenario(disturbances: Vec<Disturbance>) -> Scenario {
    Scenario { initial_state: vec![-2.0, 0.0], initial_mode: MODE_L2R.into(), duration: 30.0, dt: 0.01, pitch_lag: None, disturbances }
}

#[test]
fn triangulation_is_valid_and_symmetric() {
    let cs = build_case_study(&ManeuverParams::side_to_side()).unwrap();
    assert_eq!(cs.triangulation.vertices().len(), 16);
    assert_eq!(cs.triangulation.len(), 20);
    let rep = validate_triangulation(&cs.triangulation, &cs.region.safe, DEFAULT_COVER_SAMPLES, 7);
    assert!(rep.is_valid(), "{:?}", rep.violations);
    let mirror = cs.triangulation.mirror_map().unwrap();
    assert_eq!(mirror.len(), 20);
    for (a, b) in &mirror {
        assert_eq!(mirror[b], *a);
    }
}

#[test]
fn vertices_are_safe_and_p_centroids_live() {
    let cs = build_case_study(&ManeuverParams::side_to_side()).unwrap();
    let p = &cs.params;
    for v in cs.triangulation.vertices().values() {
        let (x, xd) = (v[0], v[1]);
        assert!(x.abs() <= p.d_max + 1e-9 && xd.abs() <= p.v_max + 1e-9);
        assert!((x - xd / p.a_saf()).abs() <= p.d_max + 1e-9, "{v}");
    }
    for s in cs.triangulation.simplices() {
        let flags = check_specs(p, &s.centroid());
        if NON_LIVENESS_SIMPLICES.contains(&s.id().0) {
            assert!(!flags.live());
        } else {
            assert!(flags.live(), "{} centroid {}", s.id(), s.centroid());
        }
    }
}

#[test]
fn outward_normals_on_case_study() {
    let cs = build_case_study(&ManeuverParams::side_to_side()).unwrap();
    for s in cs.triangulation.simplices() {
        for i in 0..3 {
            let h = s.facet_normal(i).unwrap();
            assert!((h.norm() - 1.0).abs() <= 1e-12);
            for j in (0..3).filter(|&j| j != i) {
                assert!(h.dot(&(s.vertex(j) - s.vertex(i))) > 0.0);
            }
        }
    }
}

#[test]
fn minimum_angle_at_least_fifteen_degrees() {
    let cs = build_case_study(&ManeuverParams::side_to_side()).unwrap();
    let mut min = f64::INFINITY;
    for s in cs.triangulation.simplices() {
        for i in 0..3 {
            let a = s.vertex((i + 1) % 3) - s.vertex(i);
            let b = s.vertex((i + 2) % 3) - s.vertex(i);
            min = min.min((a.dot(&b) / (a.norm() * b.norm())).acos().to_degrees());
        }
    }
    assert!(min >= 15.0, "{min}");
}

#[test]
fn reachability_to_b_right() {
    let cs = build_case_study(&ManeuverParams::side_to_side()).unwrap();
    let rep = reachability_check(&cs.triangulation, &cs.roles, &cs.b_right);
    assert!(rep.ok(), "{:?}", rep.unreachable);
    assert_eq!(rep.terminal, vec![SimplexId(8)]);
    for r in cs.roles.values() {
        assert!(r.contains(&FacetRole::Restricted));
    }
}

#[test]
fn synthesis_succeeds_and_verifies() {
    let (cs, hc) = synthesized();
    assert_eq!(hc.modes.len(), 2);
    let checks = hc.verify().unwrap();
    assert_eq!(checks.len(), 40);
    for c in &checks {
        assert!(c.pass(), "{c:?}");
    }
    let di = AffineDynamics::double_integrator();
    for m in &hc.modes {
        for s in cs.triangulation.simplices() {
            assert!(equilibrium_check(&di, &m.controllers[&s.id()], s));
        }
    }
    // the discontinuity vertex really carries different values
    let l2r = &hc.modes[0];
    let q4 = cs.triangulation.vertices()[&14].clone();
    let vals: BTreeSet<i64> = cs.triangulation.incident(14).iter().map(|(id, _)| (l2r.controllers[id].eval(&q4)[0] * 1e6).round() as i64).collect();
    assert!(vals.len() > 1, "{vals:?}");
}

#[test]
fn left_turnaround_corner_pushes_right() {
    let (_, hc) = synthesized();
    let (u, _) = reachctl::executor::eval_control(&hc, 0, &Point::from_vec(vec![-2.5, 0.0]), None).unwrap();
    assert!(u[0] > 0.0);
}

#[test]
fn nominal_run_alternates_cleanly() {
    let (cs, hc) = synthesized();
    let policy = RcpPolicy::new(&hc, Fallback::default());
    let sched = schedule_of(&hc).unwrap();
    let log = run(&scenario(vec![]), &policy, &sched, &cs.params, &RunOptions::default()).unwrap();
    let sum = log.summary();
    assert!(sum.crossing_sequence.len() >= 3, "{sum:?}");
    assert!(sum.t1_ok);
    assert_eq!(sum.unsafe_samples, 0);
    assert!(log.samples.iter().filter(|s| s.t >= 1.0).all(|s| s.flags.live()));
    assert_eq!(log.samples.len(), 3001);

    // every mode switch directly follows a target crossing
    for (i, e) in log.events.iter().enumerate() {
        if e.kind == reachctl::executor::EventKind::ModeSwitch {
            assert_eq!(log.events[i - 1].kind, reachctl::executor::EventKind::TargetCross);
        }
    }
}

#[test]
fn zero_duration_logs_initial_sample_only() {
    let (cs, hc) = synthesized();
    let policy = RcpPolicy::new(&hc, Fallback::default());
    let mut sc = scenario(vec![]);
    sc.duration = 0.0;
    let log = run(&sc, &policy, &schedule_of(&hc).unwrap(), &cs.params, &RunOptions::default()).unwrap();
    assert_eq!(log.samples.len(), 1);
    assert_eq!(log.samples[0].t, 0.0);
}

#[test]
fn teleport_into_non_liveness_recovers() {
    let (cs, hc) = synthesized();
    let policy = RcpPolicy::new(&hc, Fallback::default());
    // t = 7 falls in the second L2R leg of the nominal run
    let sc = scenario(vec![Disturbance { time: 7.0, kind: DisturbanceKind::Teleport { state: vec![0.0, 0.1] } }]);
    let log = run(&sc, &policy, &schedule_of(&hc).unwrap(), &cs.params, &RunOptions::default()).unwrap();
    let sum = log.summary();
    let at = log.samples.iter().find(|s| s.t >= 7.0 - 1e-9).unwrap();
    assert_eq!(log.mode_name(at.mode), MODE_L2R);
    assert_eq!(at.state.as_slice(), &[0.0, 0.1]);
    assert!(sum.unlive_samples > 0);
    assert_eq!(sum.unsafe_samples, 0);
    assert!(sum.t1_ok, "{sum:?}");
    let after: Vec<_> = log.crossings.iter().filter(|c| c.t > 7.0).collect();
    assert!(after.len() >= 2);
    assert_eq!(after[0].target, "B_right");
}

#[test]
fn zoh_update_also_runs() {
    let (cs, hc) = synthesized();
    let policy = RcpPolicy::new(&hc, Fallback::default());
    let opts = RunOptions { update: ControlUpdate::ZeroOrderHold };
    let log = run(&scenario(vec![]), &policy, &schedule_of(&hc).unwrap(), &cs.params, &opts).unwrap();
    let sum = log.summary();
    assert!(sum.crossing_sequence.len() >= 3 && sum.t1_ok && sum.unsafe_samples == 0, "{sum:?}");
}

#[test]
fn nominal_run_with_pitch_lag() {
    let (cs, hc) = synthesized();
    let policy = RcpPolicy::new(&hc, Fallback::default());
    let mut sc = scenario(vec![]);
    sc.pitch_lag = Some(0.05);
    let log = run(&sc, &policy, &schedule_of(&hc).unwrap(), &cs.params, &RunOptions::default()).unwrap();
    assert!(log.summary().crossing_sequence.len() >= 3);
}

#[test]
fn baseline_nominal_tracks() {
    let cs = build_case_study(&ManeuverParams::side_to_side()).unwrap();
    let (_, hc) = synthesized();
    let b = TrackingBaseline::default();
    let mut sc = scenario(vec![]);
    sc.initial_state = vec![-b.apex(), 0.0];
    let log = run(&sc, &b, &schedule_of(&hc).unwrap(), &cs.params, &RunOptions::default()).unwrap();
    let sum = log.summary();
    assert!(sum.t1_ok && sum.crossing_sequence.len() >= 3 && sum.unsafe_samples == 0, "{sum:?}");
}

#[test]
fn feedforward_baseline_stalls_the_sequence_after_an_impulse() {
    let (cs, hc) = synthesized();
    let b = TrackingBaseline { kp: 0.0, kd: 0.0, ..TrackingBaseline::default() };
    let sc = scenario(vec![Disturbance { time: 4.5, kind: DisturbanceKind::Impulse { delta_v: 1.0 } }]);
    let log = run(&sc, &b, &schedule_of(&hc).unwrap(), &cs.params, &RunOptions::default()).unwrap();
    let sum = log.summary();
    // the crossings it did make are in order, but the sequence stops
    assert!(sum.crossing_sequence.windows(2).all(|w| w[0] != w[1]));
    assert!(sum.max_crossing_gap > reachctl::executor::T1_PROGRESS_WINDOW);
    assert!(!sum.t1_ok);
}
