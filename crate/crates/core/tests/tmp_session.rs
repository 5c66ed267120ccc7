//! End-to-end planning sessions: plan structure, optimality against
//! exhaustive enumeration, pass-through of motion costs, and session
//! reports.

mod common;

use common::{brute_force_cost, four_room_gap, four_room_instance};
use mrtamp::rng;
use mrtamp::scenario::{corridor, Scenario};
use mrtamp::sim::{aggregate, executed_nodes, monte_carlo, plan_session, run_session, scaling_study, ScaleMode, SessionReport};
use mrtamp::taskplan::SearchOptions;
use mrtamp::tmp::{Motion, TmpOracle};

fn oracle_for<'a>(s: &'a Scenario, seed: u64, planned: &'a mrtamp::sim::PlannedSession, mutual: bool) -> TmpOracle<'a> {
    TmpOracle::new(
        &planned.task,
        &planned.roadmap,
        &s.map,
        s.noise_model(),
        s.weights,
        s.prm.motion_settings(mutual),
        rng::derive_seed(seed, &[rng::tag("plan")]),
        s.robots.iter().map(|r| r.id.clone()).collect(),
        s.robots.iter().map(|r| r.covariance()).collect(),
        planned.roadmap.anchors.clone(),
    )
}

/// Timing fields differ between otherwise identical runs.
fn untimed(mut r: SessionReport) -> SessionReport {
    r.planning_time = 0.0;
    r.roadmap_time = 0.0;
    r
}

#[test]
fn planner_matches_exhaustive_enumeration_on_four_rooms() {
    let per_action = 0.999 * 2.0 * four_room_gap() * corridor().weights.control;
    for seed in 0..4 {
        let s = four_room_instance(seed);
        let planned = plan_session(&s, seed, true, SearchOptions::default()).unwrap();
        let plan = planned.plan.as_ref().unwrap();
        let mut fresh = oracle_for(&s, seed, &planned, true);
        let best = brute_force_cost(&planned.task, &mut fresh, per_action, 8).unwrap();
        assert_eq!(plan.total_cost, best, "instance {seed}");
    }
}

#[test]
fn plan_costs_are_additive_continuous_and_passed_through() {
    for seed in 10..13 {
        let s = four_room_instance(seed);
        let planned = plan_session(&s, seed, true, SearchOptions::default()).unwrap();
        let plan = planned.plan.as_ref().unwrap();
        let sum = plan.steps.iter().fold(0.0, |acc, st| acc + st.cost);
        assert_eq!(plan.total_cost, sum);

        // Replay each step through a fresh oracle from the pinned nodes.
        let oracle = oracle_for(&s, seed, &planned, true);
        let mut pinned = planned.roadmap.anchors.clone();
        for step in &plan.steps {
            let motions: Vec<Motion> = step
                .robots
                .iter()
                .zip(&step.paths)
                .map(|(&robot, path)| Motion {
                    robot,
                    from: s.map.region_containing(planned.roadmap.pose(path[0]).x, planned.roadmap.pose(path[0]).y).unwrap(),
                    to: planned.roadmap.nodes[*path.last().unwrap()].region.unwrap(),
                })
                .collect();
            let starts: Vec<usize> = step.robots.iter().map(|&r| pinned[r]).collect();
            for (path, &start) in step.paths.iter().zip(&starts) {
                assert_eq!(path[0], start);
            }
            let direct = oracle.evaluate(&motions, &starts, oracle.tuple_seed(&motions), false).unwrap();
            assert_eq!(direct.total, step.cost);
            assert_eq!(&direct.paths, &step.paths);
            for (&r, path) in step.robots.iter().zip(&step.paths) {
                pinned[r] = *path.last().unwrap();
            }
        }
    }
}

#[test]
fn corridor_needs_a_single_joint_action() {
    let s = corridor();
    let report = run_session(&s, 0, true).unwrap();
    assert!(report.success, "{:?}", report.failure);
    let plan = report.plan.as_ref().unwrap();
    assert_eq!(plan.steps.len(), 1);
    assert_eq!(plan.steps[0].robots, vec![0, 1]);
    assert!(plan.steps[0].action.starts_with("(goto_room"));
    assert!(report.mutual_updates > 0);
    assert!(report.max_cross_entry > 0.0);
    assert!(report.max_trace_increase <= 1e-12);
}

#[test]
fn sessions_are_deterministic_and_serialize_losslessly() {
    let s = corridor();
    let a = run_session(&s, 3, true).unwrap();
    let b = run_session(&s, 3, true).unwrap();
    assert_eq!(untimed(a.clone()), untimed(b));
    let text = serde_json::to_string(&a).unwrap();
    let back: SessionReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, a);
}

#[test]
fn disabling_mutual_observations_keeps_robots_uncorrelated() {
    let report = run_session(&corridor(), 1, false).unwrap();
    assert!(report.success);
    assert_eq!(report.mutual_updates, 0);
    assert_eq!(report.max_cross_entry, 0.0);
    for row in &report.trajectory {
        assert!(row.cov.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn paired_sessions_share_roadmap_and_ground_truth() {
    let s = corridor();
    let on = plan_session(&s, 6, true, SearchOptions::default()).unwrap();
    let off = plan_session(&s, 6, false, SearchOptions::default()).unwrap();
    assert_eq!(on.roadmap.nodes, off.roadmap.nodes);
    assert_eq!(on.roadmap.adjacency, off.roadmap.adjacency);
    let (a, b) = (run_session(&s, 6, true).unwrap(), run_session(&s, 6, false).unwrap());
    let first = |r: &SessionReport| r.trajectory.iter().filter(|t| t.tick == 0).map(|t| t.truth).collect::<Vec<_>>();
    assert_eq!(first(&a), first(&b));
}

#[test]
fn error_series_follow_the_executed_nodes() {
    let s = four_room_instance(21);
    let report = run_session(&s, 21, true).unwrap();
    assert!(report.success);
    assert!(report.planning_time > 0.0);
    assert!(report.roadmap_time <= report.planning_time);
    let nodes = executed_nodes(report.plan.as_ref().unwrap(), s.robots.len());
    for (r, series) in report.errors.iter().enumerate() {
        // the initial belief plus one entry per node reached afterwards
        let moves: usize = report
            .plan
            .as_ref()
            .unwrap()
            .steps
            .iter()
            .filter_map(|st| st.robots.iter().position(|&x| x == r).map(|k| st.paths[k].len() - 1))
            .sum();
        assert_eq!(series.len(), 1 + moves);
        assert!(nodes[r].len() <= series.len());
        assert!(series.iter().all(|e| *e >= 0.0 && e.is_finite()));
    }
}

#[test]
fn single_session_aggregate_equals_its_report() {
    let s = corridor();
    let agg = monte_carlo(&s, 1, true, 4).unwrap();
    let single = run_session(&s, 4, true).unwrap();
    assert_eq!(agg.sessions, 1);
    assert_eq!(agg.mean_errors, single.errors);
    assert_eq!(agg.worst_case_errors[1], single.worst_error(1));
    let again = aggregate(agg.reports.clone(), true, 4).unwrap();
    assert_eq!(again.mean_errors, agg.mean_errors);
}

#[test]
fn aggregate_rejects_empty_input() {
    assert!(aggregate(Vec::new(), true, 0).is_err());
}

#[test]
fn single_size_study_gives_one_row() {
    let rows = scaling_study(&corridor(), ScaleMode::Rooms, &[2], 1, 0).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].size, 2);
    assert_eq!(rows[0].succeeded, 1);
    assert!(rows[0].mean_planning_time > 0.0);
}

#[test]
fn memoization_does_not_change_the_plan() {
    let s = four_room_instance(30);
    let with = plan_session(&s, 30, true, SearchOptions { memoize: true, max_expansions: None }).unwrap();
    let without = plan_session(&s, 30, true, SearchOptions { memoize: false, max_expansions: None }).unwrap();
    assert_eq!(with.plan, without.plan);
}
