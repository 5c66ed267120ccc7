//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit status
//! when any criterion fails. Runs as part of `cargo test`; on its own with
//! `cargo test -p mrtamp --test acceptance`.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::{brute_force_cost, dense_oracle_gap, four_room_gap, four_room_instance, jacobian_errors};
use mrtamp::belief::{nominal_mutual, JointBelief};
use mrtamp::rng;
use mrtamp::roadmap::{build_roadmap, path_controls, propagate_pair, NodeId};
use mrtamp::scenario::{corridor, Scenario};
use mrtamp::sim::{monte_carlo, plan_session, random_task, run_session, scaling_study, ScaleMode};
use mrtamp::taskplan::ground::ground;
use mrtamp::taskplan::{parse_domain, parse_problem, search_optimal_plan, SearchOptions, Task};
use mrtamp::tmp::{TmpOracle, ROOM_DOMAIN};
use mrtamp::worldmodel::Pose;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn oracle_for<'a>(s: &'a Scenario, seed: u64, task: &Task, roadmap: &'a mrtamp::roadmap::Roadmap) -> TmpOracle<'a> {
    TmpOracle::new(
        task,
        roadmap,
        &s.map,
        s.noise_model(),
        s.weights,
        s.prm.motion_settings(true),
        rng::derive_seed(seed, &[rng::tag("plan")]),
        s.robots.iter().map(|r| r.id.clone()).collect(),
        s.robots.iter().map(|r| r.covariance()).collect(),
        roadmap.anchors.clone(),
    )
}

fn non_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] <= w[1])
}

/// Analytic Jacobians against central differences on 1000 random inputs.
fn jacobians() -> Outcome {
    let start = Instant::now();
    let errs = jacobian_errors(1000, 1);
    let secs = start.elapsed().as_secs_f64();
    let worst = errs.iter().copied().fold(0.0, f64::max);
    outcome(
        worst < 1e-6 && secs < 5.0,
        format!("max |analytic - fd| F {:.1e} V {:.1e} H_l {:.1e} H_m {:.1e} (< 1e-6), {secs:.2}s (< 5s)", errs[0], errs[1], errs[2], errs[3]),
    )
}

/// Back-and-forth node sequence from `from` between the instantiations
/// `a` and `b`, long enough for at least `ticks` control steps.
fn shuttle(roadmap: &mrtamp::roadmap::Roadmap, from: NodeId, a: NodeId, b: NodeId, ticks: usize, step: f64) -> Vec<NodeId> {
    let mut path = roadmap.path_tree(from).path_to(a).unwrap();
    let mut target = b;
    while path_controls(roadmap, &path, step).len() < ticks {
        let here = *path.last().unwrap();
        path.extend_from_slice(&roadmap.path_tree(here).path_to(target).unwrap()[1..]);
        target = if target == b { a } else { b };
    }
    path
}

/// A long propagation without mutual observations never correlates robots.
fn closure() -> Outcome {
    let start = Instant::now();
    let s = corridor();
    let anchors: Vec<Pose> = s.robots.iter().map(|r| r.pose()).collect();
    let roadmap = build_roadmap(&s.map, &s.prm.roadmap_config(), &anchors, &mut rng::stream(0, &[rng::tag("roadmap")])).unwrap();
    // the L1 instantiation nearest the landmarks, so updates do happen
    let near = |n: &NodeId| s.map.landmarks.iter().map(|l| roadmap.pose(*n).distance_to_point(l.x, l.y)).fold(f64::INFINITY, f64::min);
    let l1 = *roadmap.instantiations(0).iter().min_by(|a, b| near(a).total_cmp(&near(b))).unwrap();
    let l10 = roadmap.instantiations(9)[0];
    let settings = s.prm.motion_settings(false);
    let paths = vec![
        shuttle(&roadmap, roadmap.anchors[0], l10, l1, 500, settings.step),
        shuttle(&roadmap, roadmap.anchors[1], l1, l10, 500, settings.step),
    ];
    let initial = JointBelief::from_beliefs(&s.initial_beliefs());
    let result = propagate_pair(
        &roadmap,
        &s.map,
        &paths,
        &initial,
        &initial.means,
        &s.noise_model(),
        &settings,
        &s.weights,
        true,
        &mut rng::stream(0, &[rng::tag("closure")]),
    )
    .unwrap();
    let tr = result.trajectory.unwrap();
    let worst = tr.beliefs.iter().map(JointBelief::max_cross_entry).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        result.ticks >= 500 && result.stats.landmark_updates > 0 && worst < 1e-300 && secs < 5.0,
        format!(
            "{} ticks (>= 500), {} landmark updates (> 0), max |cross entry| {worst:e} (< 1e-300), {secs:.2}s (< 5s)",
            result.ticks, result.stats.landmark_updates
        ),
    )
}

/// The first mutual update on independent beliefs correlates them.
fn onset() -> Outcome {
    let s = corridor();
    let mut beliefs = s.initial_beliefs();
    beliefs[1].mean = Pose::new(beliefs[0].mean.x + 2.5, beliefs[0].mean.y + 1.5, beliefs[1].mean.theta);
    let jb = JointBelief::from_beliefs(&beliefs);
    let before = jb.block(0, 1).norm();
    let z = nominal_mutual(&jb.means[0], &jb.means[1], (0, 1)).unwrap();
    let after = jb.update_mutual((0, 1), &z, &s.noise_model().mutual).unwrap();
    let norm = after.block(0, 1).norm();
    outcome(before == 0.0 && norm > 1e-8, format!("cross block Frobenius norm {before:e} -> {norm:.3e} (> 1e-8)"))
}

/// No EKF update in a corridor session increases the covariance trace.
fn contraction() -> Outcome {
    let report = run_session(&corridor(), 0, true).unwrap();
    let updates = report.landmark_updates + report.mutual_updates;
    outcome(
        report.success && report.max_trace_increase <= 1e-12,
        format!(
            "{updates} replayed updates (plus every planning update), max trace increase {:e} (<= 1e-12)",
            report.max_trace_increase
        ),
    )
}

/// Joint predict/update against a dense textbook Kalman filter.
fn dense_oracle() -> Outcome {
    let gap = dense_oracle_gap(200, 3);
    outcome(gap <= 1e-9, format!("max-abs gap over 200 steps {gap:.2e} (<= 1e-9)"))
}

/// Planner cost equals exhaustive enumeration on 20 four-room instances.
fn optimality() -> Outcome {
    let start = Instant::now();
    let per_action = 0.999 * 2.0 * four_room_gap() * corridor().weights.control;
    let mut mismatches = Vec::new();
    let mut steps = 0;
    for seed in 0..20 {
        let s = four_room_instance(seed);
        let planned = plan_session(&s, seed, true, SearchOptions::default()).unwrap();
        let mut fresh = oracle_for(&s, seed, &planned.task, &planned.roadmap);
        let best = brute_force_cost(&planned.task, &mut fresh, per_action, 8);
        let found = planned.plan.as_ref().ok().map(|p| p.total_cost);
        steps += planned.plan.as_ref().map(|p| p.steps.len()).unwrap_or(0);
        if found != best || found.is_none() {
            mismatches.push(format!("seed {seed}: planner {found:?} vs enumeration {best:?}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        mismatches.is_empty() && secs < 120.0,
        format!(
            "20 instances ({steps} plan steps), {} exact mismatches {mismatches:?}, {secs:.1}s (< 120s)",
            mismatches.len()
        ),
    )
}

/// Mutual observations cut the worst-case error of r' by at least half.
fn localization() -> Outcome {
    let start = Instant::now();
    let s = corridor();
    let on = monte_carlo(&s, 25, true, 0).unwrap();
    let off = monte_carlo(&s, 25, false, 0).unwrap();
    let (e_on, e_off) = (on.worst_case_errors[1], off.worst_case_errors[1]);
    let reduction = 1.0 - e_on / e_off;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        on.succeeded == 25 && off.succeeded == 25 && reduction >= 0.5 && secs < 300.0,
        format!(
            "worst-case mean error of rp {e_off:.3} m -> {e_on:.3} m, reduction {:.1}% (>= 50%), r {:.3} m -> {:.3} m, {secs:.1}s (< 300s)",
            100.0 * reduction,
            off.worst_case_errors[0],
            on.worst_case_errors[0]
        ),
    )
}

/// Planning time grows with rooms and robots; 10 rooms stays under 60 s.
fn planning_time() -> Outcome {
    let s = corridor();
    let rooms: Vec<usize> = (2..=10).collect();
    let by_rooms = scaling_study(&s, ScaleMode::Rooms, &rooms, 25, 0).unwrap();
    let by_robots = scaling_study(&s, ScaleMode::Robots, &[2, 4, 6], 10, 0).unwrap();
    let room_means: Vec<f64> = by_rooms.iter().map(|r| r.mean_planning_time).collect();
    let robot_means: Vec<f64> = by_robots.iter().map(|r| r.mean_planning_time).collect();
    let all_ok = by_rooms.iter().chain(&by_robots).all(|r| r.succeeded == r.sessions);
    let ten = by_rooms.last().unwrap().max_planning_time;
    let fmt = |v: &[f64]| v.iter().map(|t| format!("{t:.3}")).collect::<Vec<_>>().join(", ");
    outcome(
        all_ok && non_decreasing(&room_means) && non_decreasing(&robot_means) && ten < 60.0,
        format!(
            "mean s by rooms 2..10 [{}], by robots 2/4/6 [{}], slowest 10-room run {ten:.2}s (< 60s), all sessions planned: {all_ok}",
            fmt(&room_means),
            fmt(&robot_means)
        ),
    )
}

/// More samples per region never lowers the plan-found rate; 5 always works.
fn completeness() -> Outcome {
    let base = corridor();
    let mut rates = Vec::new();
    for samples in [1, 3, 5] {
        let mut s = base.clone();
        s.prm.samples_per_region = samples;
        let found = (0..25u64)
            .filter(|&seed| plan_session(&s, seed, true, SearchOptions::default()).unwrap().plan.is_ok())
            .count();
        rates.push(found as f64 / 25.0);
    }
    outcome(
        non_decreasing(&rates) && rates[2] == 1.0,
        format!("plan-found rate at 1/3/5 samples per region {rates:?} (non-decreasing, 1.0 at 5)"),
    )
}

/// The room domain parses, grounds to the expected count, and every plan
/// replays to the goal.
fn parser() -> Outcome {
    let domain = match parse_domain(ROOM_DOMAIN) {
        Ok(d) => d,
        Err(e) => return outcome(false, format!("room domain does not parse: {e}")),
    };
    let rooms: Vec<String> = (1..=10).map(|i| format!("L{i}")).collect();
    let problem = parse_problem(
        &format!(
            "(define (problem ten) (:domain rooms) (:objects {} - room r1 r2 - robot) (:init (robot_in r1 L1) (robot_in r2 L2)) (:goal (and (visited L3))))",
            rooms.join(" ")
        ),
        &domain,
    )
    .unwrap();
    let raw = ground(&domain, &problem).raw_bindings;

    let mut instances: Vec<(Scenario, u64)> = (0..20).map(|seed| (four_room_instance(seed), seed)).collect();
    for seed in 0..10 {
        instances.push((random_task(&corridor(), 2, 2 + (seed as usize % 4), seed).unwrap(), seed));
    }
    let mut replayed = 0;
    let mut failures = Vec::new();
    for (s, seed) in &instances {
        let planned = plan_session(s, *seed, true, SearchOptions::default()).unwrap();
        let task = &planned.task;
        let mut oracle = oracle_for(s, *seed, task, &planned.roadmap);
        match search_optimal_plan(task, &mut oracle, SearchOptions::default()) {
            Ok((plan, _)) => {
                let mut state = task.initial.clone();
                let ok = plan.steps.iter().all(|st| match task.apply(&state, &task.actions[st.action]) {
                    Ok(next) => {
                        state = next;
                        true
                    }
                    Err(_) => false,
                });
                if ok && task.is_goal(&state) {
                    replayed += 1;
                } else {
                    failures.push(s.name.clone());
                }
            }
            Err(e) => failures.push(format!("{}: {e}", s.name)),
        }
    }
    outcome(
        raw == 40_000 && failures.is_empty(),
        format!(
            "raw bindings for 10 rooms / 2 robots {raw} (== 40000), {replayed}/{} plans replay to the goal {failures:?}",
            instances.len()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("jacobian correctness", jacobians),
        ("block-diagonal closure", closure),
        ("cross-correlation onset", onset),
        ("update contraction", contraction),
        ("dense-oracle equivalence", dense_oracle),
        ("task-level optimality", optimality),
        ("localization improvement", localization),
        ("planning-time shape", planning_time),
        ("completeness smoke", completeness),
        ("parser fidelity", parser),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        println!(
            "criterion {:>2} {} — {name}: {} [{:.1}s]",
            i + 1,
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed().as_secs_f64()
        );
        failed += usize::from(!result.pass);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
