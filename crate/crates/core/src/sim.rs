//! End-to-end planning sessions, Monte-Carlo studies and their reports.
//!
//! A session builds the roadmap, plans with the motion oracle, and then
//! executes the plan against a ground truth drawn from the initial beliefs.
//! All randomness comes from streams derived from the session seed with
//! fixed labels, and none of them depends on whether mutual observations
//! are enabled, so sessions with the same seed are paired.

use std::collections::HashMap;
use std::io::{self, Write};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{sample_pose, Belief, JointBelief};
use crate::rng;
use crate::roadmap::{build_roadmap, edge_controls, propagate_pair, MotionSettings, NodeId, Roadmap};
use crate::scenario::{Scenario, ScenarioError};
use crate::taskplan::search::{search_optimal_plan, SearchOptions, SearchStats};
use crate::taskplan::{ground::ground, parse_domain, parse_problem, Task};
use crate::tmp::{assemble_plan, OracleCounters, TmpOracle, TmpPlan, ROOM_DOMAIN};
use crate::worldmodel::Pose;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("every session failed")]
    AllSessionsFailed,
    #[error("session count must be at least 1")]
    NoSessions,
}

/// One row of the executed trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub tick: usize,
    pub robot: usize,
    pub truth: Pose,
    pub mean: Pose,
    /// Marginal covariance of the robot, row-major.
    pub cov: [f64; 9],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub seed: u64,
    pub mutual: bool,
    pub success: bool,
    /// Why the session produced no plan, when it did not.
    pub failure: Option<String>,
    pub robots: Vec<String>,
    pub plan: Option<TmpPlan>,
    /// Position error `|truth - mean|` per robot at each roadmap node it
    /// reached, in order (starting with the initial belief).
    pub errors: Vec<Vec<f64>>,
    /// Roadmap construction alone, in seconds; part of `planning_time`.
    pub roadmap_time: f64,
    /// Roadmap construction, parsing, grounding, search and motion-cost
    /// evaluation, in seconds.
    pub planning_time: f64,
    pub search: SearchStats,
    pub oracle: OracleCounters,
    pub landmark_updates: usize,
    pub mutual_updates: usize,
    /// Largest trace increase over every EKF update, planning and replay.
    pub max_trace_increase: f64,
    /// Largest absolute cross-robot covariance entry during replay.
    pub max_cross_entry: f64,
    #[serde(default)]
    pub trajectory: Vec<TrajectoryRow>,
}

impl SessionReport {
    /// Worst position error of `robot` over the executed plan.
    pub fn worst_error(&self, robot: usize) -> f64 {
        self.errors[robot].iter().copied().fold(0.0, f64::max)
    }
}

/// Planning result of one session, before execution.
pub struct PlannedSession {
    pub roadmap: Roadmap,
    pub task: Task,
    pub plan: Result<TmpPlan, String>,
    pub search: SearchStats,
    pub oracle: OracleCounters,
    pub max_trace_increase: f64,
    /// Roadmap construction alone, in seconds; part of `planning_time`.
    pub roadmap_time: f64,
    /// Everything from roadmap construction to the finished search, in seconds.
    pub planning_time: f64,
}

fn settings(scenario: &Scenario, mutual: bool) -> MotionSettings {
    scenario.prm.motion_settings(mutual)
}

/// Builds the roadmap and plans; failures are reported in `plan`.
pub fn plan_session(scenario: &Scenario, seed: u64, mutual: bool, options: SearchOptions) -> Result<PlannedSession, ScenarioError> {
    scenario.validate()?;
    let built = Instant::now();
    let anchors: Vec<Pose> = scenario.robots.iter().map(|r| r.pose()).collect();
    let roadmap = build_roadmap(
        &scenario.map,
        &scenario.prm.roadmap_config(),
        &anchors,
        &mut rng::stream(seed, &[rng::tag("roadmap")]),
    );
    let roadmap_time = built.elapsed().as_secs_f64();
    let domain = parse_domain(ROOM_DOMAIN).expect("shipped room domain parses");
    let problem = parse_problem(&scenario.problem_text()?, &domain)
        .expect("generated problem matches the room domain");
    let task = ground(&domain, &problem);
    let roadmap = match roadmap {
        Ok(r) => r,
        Err(e) => {
            return Ok(PlannedSession {
                roadmap: Roadmap::empty(),
                task,
                plan: Err(format!("roadmap construction failed: {e}")),
                search: SearchStats::default(),
                oracle: OracleCounters::default(),
                max_trace_increase: 0.0,
                roadmap_time,
                planning_time: built.elapsed().as_secs_f64(),
            })
        }
    };
    let (plan, search, oracle, max_trace_increase) = {
        let mut oracle = TmpOracle::new(
            &task,
            &roadmap,
            &scenario.map,
            scenario.noise_model(),
            scenario.weights,
            settings(scenario, mutual),
            rng::derive_seed(seed, &[rng::tag("plan")]),
            scenario.robots.iter().map(|r| r.id.clone()).collect(),
            scenario.robots.iter().map(|r| r.covariance()).collect(),
            roadmap.anchors.clone(),
        );
        let (plan, search) = match search_optimal_plan(&task, &mut oracle, options) {
            Ok((p, stats)) => (
                assemble_plan(&task, &p, &oracle).map_err(|e| e.to_string()),
                stats,
            ),
            Err(e) => (Err(e.to_string()), SearchStats::default()),
        };
        (plan, search, oracle.counters, oracle.max_trace_increase)
    };
    Ok(PlannedSession {
        roadmap,
        task,
        plan,
        search,
        oracle,
        max_trace_increase,
        roadmap_time,
        planning_time: built.elapsed().as_secs_f64(),
    })
}

/// Plans and executes one session.
pub fn run_session(scenario: &Scenario, seed: u64, mutual: bool) -> Result<SessionReport, ScenarioError> {
    let planned = plan_session(scenario, seed, mutual, SearchOptions::default())?;
    let robots: Vec<String> = scenario.robots.iter().map(|r| r.id.clone()).collect();
    let mut report = SessionReport {
        seed,
        mutual,
        success: false,
        failure: None,
        robots,
        plan: None,
        errors: Vec::new(),
        roadmap_time: planned.roadmap_time,
        planning_time: planned.planning_time,
        search: planned.search,
        oracle: planned.oracle,
        landmark_updates: 0,
        mutual_updates: 0,
        max_trace_increase: planned.max_trace_increase,
        max_cross_entry: 0.0,
        trajectory: Vec::new(),
    };
    let mut plan = match planned.plan {
        Ok(p) => p,
        Err(why) => {
            report.failure = Some(why);
            return Ok(report);
        }
    };
    match execute(scenario, &planned.roadmap, &plan, seed, mutual, &mut report) {
        Ok(()) => report.success = true,
        Err(why) => report.failure = Some(why),
    }
    for step in &mut plan.steps {
        step.trajectory = None;
    }
    report.plan = Some(plan);
    Ok(report)
}

fn cov_row_major(jb: &JointBelief, robot: usize) -> [f64; 9] {
    let b = jb.block(robot, robot);
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[3 * r + c] = b[(r, c)];
        }
    }
    out
}

/// Tick after which the robot following `path` stands on each node past
/// the first.
fn node_ticks(roadmap: &Roadmap, path: &[NodeId], step: f64) -> Vec<usize> {
    path.windows(2)
        .scan(0, |tick, w| {
            *tick += edge_controls(roadmap.pose(w[0]), roadmap.pose(w[1]), step).len();
            Some(*tick)
        })
        .collect()
}

/// Runs the plan against a ground truth sampled from the initial beliefs.
/// A pair keeps its joint belief between actions as long as neither robot
/// moved with another partner in the meantime.
fn execute(
    scenario: &Scenario,
    roadmap: &Roadmap,
    plan: &TmpPlan,
    seed: u64,
    mutual: bool,
    report: &mut SessionReport,
) -> Result<(), String> {
    let n = scenario.robots.len();
    let mut beliefs: Vec<Belief> = scenario.initial_beliefs();
    let mut truth_rng = rng::stream(seed, &[rng::tag("truth")]);
    let mut truth: Vec<Pose> = beliefs.iter().map(|b| sample_pose(b, &mut truth_rng)).collect();
    let mut joint: HashMap<Vec<usize>, JointBelief> = HashMap::new();
    let mut last_group: Vec<Option<Vec<usize>>> = vec![None; n];
    let settings = settings(scenario, mutual);
    let noise = scenario.noise_model();

    report.errors = (0..n).map(|i| vec![truth[i].distance(&beliefs[i].mean)]).collect();
    for i in 0..n {
        report.trajectory.push(TrajectoryRow {
            tick: 0,
            robot: i,
            truth: truth[i],
            mean: beliefs[i].mean,
            cov: {
                let mut out = [0.0; 9];
                out.copy_from_slice(beliefs[i].cov.transpose().as_slice());
                out
            },
        });
    }
    let mut tick = 0usize;
    for (k, step) in plan.steps.iter().enumerate() {
        let group = step.robots.clone();
        let reuse = group.iter().all(|&r| last_group[r].as_ref() == Some(&group));
        let initial = match joint.get(&group) {
            Some(jb) if reuse => jb.clone(),
            _ => JointBelief::from_beliefs(&group.iter().map(|&r| beliefs[r].clone()).collect::<Vec<_>>()),
        };
        let start_truth: Vec<Pose> = group.iter().map(|&r| truth[r]).collect();
        let result = propagate_pair(
            roadmap,
            &scenario.map,
            &step.paths,
            &initial,
            &start_truth,
            &noise,
            &settings,
            &scenario.weights,
            true,
            &mut rng::stream(seed, &[rng::tag("replay"), k as u64]),
        )
        .map_err(|e| format!("execution of step {k} failed: {e}"))?;
        report.landmark_updates += result.stats.landmark_updates;
        report.mutual_updates += result.stats.mutual_updates;
        report.max_trace_increase = report.max_trace_increase.max(result.stats.max_trace_increase);
        let tr = result.trajectory.expect("recorded propagation has a trajectory");
        for (slot, &r) in group.iter().enumerate() {
            for t in node_ticks(roadmap, &step.paths[slot], settings.step) {
                report.errors[r].push(tr.truths[t][slot].distance(&tr.beliefs[t].means[slot]));
            }
        }
        for (t, (jb, truths)) in tr.beliefs.iter().zip(&tr.truths).enumerate().skip(1) {
            report.max_cross_entry = report.max_cross_entry.max(jb.max_cross_entry());
            for (slot, &r) in group.iter().enumerate() {
                report.trajectory.push(TrajectoryRow {
                    tick: tick + t,
                    robot: r,
                    truth: truths[slot],
                    mean: jb.means[slot],
                    cov: cov_row_major(jb, slot),
                });
            }
        }
        tick += tr.beliefs.len() - 1;
        for (slot, &r) in group.iter().enumerate() {
            beliefs[r] = result.final_belief.marginal(slot);
            truth[r] = result.final_truth[slot];
            last_group[r] = Some(group.clone());
        }
        joint.insert(group, result.final_belief);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub sessions: usize,
    pub succeeded: usize,
    pub mutual: bool,
    pub base_seed: u64,
    pub robots: Vec<String>,
    /// Mean over successful sessions of the position error at each index,
    /// per robot. Shorter series are padded with their final value.
    pub mean_errors: Vec<Vec<f64>>,
    /// Maximum over indices of `mean_errors`, per robot.
    pub worst_case_errors: Vec<f64>,
    pub mean_planning_time: f64,
    pub max_planning_time: f64,
    pub reports: Vec<SessionReport>,
}

/// Folds session reports (in the given order) into an aggregate.
pub fn aggregate(reports: Vec<SessionReport>, mutual: bool, base_seed: u64) -> Result<AggregateReport, SimError> {
    if reports.is_empty() {
        return Err(SimError::NoSessions);
    }
    let ok: Vec<&SessionReport> = reports.iter().filter(|r| r.success).collect();
    if ok.is_empty() {
        return Err(SimError::AllSessionsFailed);
    }
    let robots = ok[0].robots.clone();
    let mut mean_errors = Vec::with_capacity(robots.len());
    for r in 0..robots.len() {
        let len = ok.iter().map(|s| s.errors[r].len()).max().unwrap_or(0);
        let mut mean = vec![0.0; len];
        for s in &ok {
            let series = &s.errors[r];
            for (k, m) in mean.iter_mut().enumerate() {
                *m += series.get(k).or(series.last()).copied().unwrap_or(0.0);
            }
        }
        mean.iter_mut().for_each(|m| *m /= ok.len() as f64);
        mean_errors.push(mean);
    }
    let worst_case_errors = mean_errors
        .iter()
        .map(|m| m.iter().copied().fold(0.0, f64::max))
        .collect();
    let times: Vec<f64> = ok.iter().map(|s| s.planning_time).collect();
    Ok(AggregateReport {
        sessions: reports.len(),
        succeeded: ok.len(),
        mutual,
        base_seed,
        robots,
        mean_errors,
        worst_case_errors,
        mean_planning_time: times.iter().sum::<f64>() / times.len() as f64,
        max_planning_time: times.iter().copied().fold(0.0, f64::max),
        reports,
    })
}

/// Runs sessions with seeds `base_seed..base_seed + sessions` in parallel.
/// Per-session trajectories are dropped from the aggregate.
pub fn monte_carlo(scenario: &Scenario, sessions: usize, mutual: bool, base_seed: u64) -> Result<AggregateReport, SimError> {
    if sessions == 0 {
        return Err(SimError::NoSessions);
    }
    scenario.validate()?;
    let reports: Vec<SessionReport> = (0..sessions as u64)
        .into_par_iter()
        .map(|i| {
            run_session(scenario, base_seed + i, mutual).map(|mut r| {
                r.trajectory.clear();
                r
            })
        })
        .collect::<Result<_, _>>()?;
    aggregate(reports, mutual, base_seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScaleMode {
    /// Two robots visiting a varying number of random rooms.
    Rooms,
    /// A varying number of robots visiting a fixed number of random rooms.
    Robots,
}

/// Rooms visited in the robot-scaling study.
pub const ROBOT_STUDY_ROOMS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub size: usize,
    pub sessions: usize,
    pub succeeded: usize,
    pub mean_planning_time: f64,
    pub max_planning_time: f64,
}

/// `template` with `robots` robots and `rooms` rooms to visit, drawn
/// uniformly for the given seed. The rooms are a prefix of one random
/// ordering per seed, so for a fixed seed larger tasks extend smaller ones.
pub fn random_task(template: &Scenario, robots: usize, rooms: usize, seed: u64) -> Result<Scenario, ScenarioError> {
    let mut s = template.with_robots(robots)?;
    let regions = &template.map.regions;
    let mut order: Vec<usize> = (0..regions.len()).collect();
    order.shuffle(&mut rng::stream(seed, &[rng::tag("rooms")]));
    let mut picked: Vec<usize> = order.into_iter().take(rooms).collect();
    picked.sort_unstable();
    s.task.visit = picked.into_iter().map(|i| regions[i].id.clone()).collect();
    s.task.destinations.clear();
    Ok(s)
}

/// Mean planning time per size, with mutual observations enabled. Sessions
/// run one after another so that timings do not compete for cores.
pub fn scaling_study(
    template: &Scenario,
    mode: ScaleMode,
    sizes: &[usize],
    sessions: usize,
    base_seed: u64,
) -> Result<Vec<ScalingRow>, SimError> {
    if sessions == 0 {
        return Err(SimError::NoSessions);
    }
    let instance = |size: usize, seed: u64| match mode {
        ScaleMode::Rooms => random_task(template, 2, size, seed),
        ScaleMode::Robots => random_task(template, size, ROBOT_STUDY_ROOMS, seed),
    };
    // One untimed run first, so the smallest size does not pay for cold
    // caches and allocator growth.
    if let Some(&size) = sizes.first() {
        plan_session(&instance(size, base_seed)?, base_seed, true, SearchOptions::default())?;
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let mut times = Vec::new();
        for i in 0..sessions as u64 {
            let seed = base_seed + i;
            let planned = plan_session(&instance(size, seed)?, seed, true, SearchOptions::default())?;
            if planned.plan.is_ok() {
                times.push(planned.planning_time);
            }
        }
        rows.push(ScalingRow {
            size,
            sessions,
            succeeded: times.len(),
            mean_planning_time: if times.is_empty() {
                f64::NAN
            } else {
                times.iter().sum::<f64>() / times.len() as f64
            },
            max_planning_time: times.iter().copied().fold(0.0, f64::max),
        });
    }
    Ok(rows)
}

pub fn write_trajectory_csv<W: Write>(report: &SessionReport, out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "tick", "robot", "true_x", "true_y", "true_theta", "mean_x", "mean_y", "mean_theta",
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>();
    header.extend((1..=3).flat_map(|r| (1..=3).map(move |c| format!("sigma_{r}{c}"))));
    w.write_record(&header)?;
    for row in &report.trajectory {
        let mut rec = vec![row.tick.to_string(), report.robots[row.robot].clone()];
        rec.extend(
            [row.truth.x, row.truth.y, row.truth.theta, row.mean.x, row.mean.y, row.mean.theta]
                .iter()
                .chain(&row.cov)
                .map(f64::to_string),
        );
        w.write_record(&rec)?;
    }
    w.flush()
}

/// Per-index error table: one column per robot.
pub fn write_metrics_csv<W: Write>(robots: &[String], errors: &[Vec<f64>], out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["node".to_string()];
    header.extend(robots.iter().map(|r| format!("error_{r}")));
    w.write_record(&header)?;
    let len = errors.iter().map(Vec::len).max().unwrap_or(0);
    for k in 0..len {
        let mut rec = vec![k.to_string()];
        rec.extend(errors.iter().map(|e| e.get(k).map(f64::to_string).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush()
}

pub fn write_scaling_csv<W: Write>(rows: &[ScalingRow], out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()
}

/// Node ids of each robot's executed path, concatenated over the plan.
pub fn executed_nodes(plan: &TmpPlan, robots: usize) -> Vec<Vec<NodeId>> {
    let mut out = vec![Vec::new(); robots];
    for step in &plan.steps {
        for (&r, path) in step.robots.iter().zip(&step.paths) {
            if out[r].last() == path.first() {
                out[r].extend_from_slice(&path[1..]);
            } else {
                out[r].extend_from_slice(path);
            }
        }
    }
    out
}
