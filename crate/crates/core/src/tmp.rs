//! Glue between the task planner and the belief-space motion layer.
//!
//! Every robot is pinned to one roadmap node: at first the anchor node at
//! its initial mean, later the goal instantiation chosen by the motion
//! query of the last action that moved it. A `goto_room` action is costed
//! by simulating both robots from their pinned nodes to every combination
//! of instantiations of their target rooms and keeping the cheapest.

use std::collections::{BTreeMap, HashMap};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{Belief, JointBelief, NoiseModel};
use crate::cost::CostWeights;
use crate::rng;
use crate::roadmap::{
    evaluate_goto_cost, MotionError, MotionResult, MotionSettings, NodeId, PathQuery, Roadmap,
    Trajectory,
};
use crate::taskplan::pddl::{Domain, NumericValue};
use crate::taskplan::search::{CostOracle, TaskPlan};
use crate::taskplan::{GroundAction, Proposition, Task, TaskState};
use crate::worldmodel::WorldMap;

pub use crate::cost::total_cost;

/// The room domain shipped with the crate.
pub const ROOM_DOMAIN: &str = include_str!("../data/room_domain.pddl");

/// Slack applied to distance bounds so that rounding differences between
/// graph distances and summed control steps never overestimate a cost.
const BOUND_SLACK: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainModelError {
    #[error("robot {0} has no robot_in fact")]
    MissingRobotIn(String),
    #[error("robot {0} has more than one robot_in fact")]
    MultipleRobotIn(String),
    #[error("unknown robot {0}")]
    UnknownRobot(String),
    #[error("room {0} is not a map region")]
    UnknownRoom(String),
    #[error("plan step {0} has no cached motion result")]
    MissingCache(usize),
    #[error("plan step {step}: path of robot {robot} does not start at its pinned node")]
    Discontinuous { step: usize, robot: usize },
    #[error("indirect variable {0} has no producing module")]
    UnproducedIndirect(String),
    #[error(transparent)]
    Motion(#[from] MotionError),
}

/// Current roadmap node of every robot, indexed like the scenario robots.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateMapping {
    pub pinned: Vec<NodeId>,
}

/// Room each robot occupies according to its single `robot_in` fact.
pub fn robot_rooms<'a>(
    task: &'a Task,
    state: &'a TaskState,
    robots: &[String],
) -> Result<Vec<&'a str>, DomainModelError> {
    let mut rooms: Vec<Option<&str>> = vec![None; robots.len()];
    for p in task.propositions(state).filter(|p| p.predicate == "robot_in") {
        let Some(i) = robots.iter().position(|r| *r == p.args[0]) else {
            return Err(DomainModelError::UnknownRobot(p.args[0].clone()));
        };
        if rooms[i].replace(&p.args[1]).is_some() {
            return Err(DomainModelError::MultipleRobotIn(robots[i].clone()));
        }
    }
    rooms
        .into_iter()
        .zip(robots)
        .map(|(r, name)| r.ok_or_else(|| DomainModelError::MissingRobotIn(name.clone())))
        .collect()
}

/// Configuration-space image of a task state: for each robot, the single
/// pinned node when it lies in the room the state names (or is the
/// robot's start anchor there), otherwise every instantiation of that room.
pub fn phi(
    task: &Task,
    state: &TaskState,
    mapping: &StateMapping,
    robots: &[String],
    roadmap: &Roadmap,
    map: &WorldMap,
) -> Result<Vec<Vec<NodeId>>, DomainModelError> {
    let rooms = robot_rooms(task, state, robots)?;
    rooms
        .iter()
        .zip(&mapping.pinned)
        .map(|(room, &node)| {
            let region = map
                .region_index(room)
                .ok_or_else(|| DomainModelError::UnknownRoom(room.to_string()))?;
            let pose = roadmap.pose(node);
            let pinned_here = roadmap.nodes[node].region == Some(region)
                || (roadmap.nodes[node].region.is_none() && map.region_containing(pose.x, pose.y) == Some(region));
            Ok(if pinned_here {
                vec![node]
            } else {
                roadmap.instantiations(region).to_vec()
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VariableClass {
    /// Written by action effects.
    Direct,
    /// Supplied by an external module.
    Indirect,
    /// Neither written nor externally supplied.
    Free,
}

/// Classification of the domain's numeric functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalVariableLedger {
    pub classes: BTreeMap<String, VariableClass>,
    /// Module producing each indirect variable.
    pub producers: BTreeMap<String, String>,
}

pub const MOTION_MODULE: &str = "motion";

impl ExternalVariableLedger {
    pub fn from_domain(domain: &Domain) -> Result<Self, DomainModelError> {
        let written = domain.written_functions();
        let mut indirect = Vec::new();
        for a in &domain.actions {
            for n in &a.numeric {
                if let NumericValue::Function(f) = &n.value {
                    if !written.contains(f.name.as_str()) {
                        indirect.push(f.name.clone());
                    }
                }
            }
        }
        let mut classes = BTreeMap::new();
        let mut producers = BTreeMap::new();
        for f in &domain.functions {
            let class = if written.contains(f.name.as_str()) {
                VariableClass::Direct
            } else if indirect.contains(&f.name) {
                producers.insert(f.name.clone(), MOTION_MODULE.to_string());
                VariableClass::Indirect
            } else {
                VariableClass::Free
            };
            classes.insert(f.name.clone(), class);
        }
        if let Some(missing) = indirect.iter().find(|f| !producers.contains_key(*f)) {
            return Err(DomainModelError::UnproducedIndirect(missing.clone()));
        }
        Ok(ExternalVariableLedger { classes, producers })
    }

    pub fn class(&self, f: &str) -> Option<VariableClass> {
        self.classes.get(f).copied()
    }
}

/// Robots that may share a `goto_room` action: (0,1), (2,3), ... and, for
/// an odd count, the last robot with robot 0.
pub fn static_pairs(robots: usize) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = (0..robots / 2).map(|k| (2 * k, 2 * k + 1)).collect();
    if robots % 2 == 1 {
        pairs.push(if robots == 1 { (0, 0) } else { (0, robots - 1) });
    }
    pairs
}

/// One robot's part of a triggered tuple, as indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Motion {
    pub robot: usize,
    pub from: usize,
    pub to: usize,
}

/// Motion cost of one action from fixed start nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalCost {
    pub motions: Vec<Motion>,
    pub starts: Vec<NodeId>,
    pub seed: u64,
    pub result: MotionResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OracleCounters {
    /// Cost requests answered.
    pub calls: usize,
    pub memo_hits: usize,
    /// Requests that ran the motion simulation.
    pub evaluations: usize,
    pub infeasible: usize,
    pub numerical_failures: usize,
}

type MemoKey = (Vec<Motion>, Vec<NodeId>);

/// The semantic attachment: answers `external` for `goto_room` actions.
pub struct TmpOracle<'a> {
    pub roadmap: &'a Roadmap,
    pub map: &'a WorldMap,
    pub noise: NoiseModel,
    pub weights: CostWeights,
    pub settings: MotionSettings,
    pub session_seed: u64,
    robots: Vec<String>,
    initial_cov: Vec<Matrix3<f64>>,
    start_nodes: Vec<NodeId>,
    room_region: HashMap<String, usize>,
    pairs: Vec<(usize, usize)>,
    goal_rooms: Vec<(crate::taskplan::AtomId, usize)>,
    /// (robot, destination region) for every `robot_in` goal.
    destinations: Vec<(usize, usize)>,
    room_entry: Vec<f64>,
    /// `room_distance[a][b]`: shortest roadmap distance from a node a robot
    /// can be pinned to in region `a` to an instantiation of region `b`.
    room_distance: Vec<Vec<f64>>,
    min_entry: f64,
    memo: HashMap<MemoKey, Option<ExternalCost>>,
    pub counters: OracleCounters,
    /// Largest trace increase seen over every update simulated so far.
    pub max_trace_increase: f64,
}

impl<'a> TmpOracle<'a> {
    /// `start_nodes[i]` is the anchor node of robot `i`; `initial_cov[i]`
    /// its initial covariance, used as the starting uncertainty of every
    /// motion query (motion costs are local to one action).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        task: &Task,
        roadmap: &'a Roadmap,
        map: &'a WorldMap,
        noise: NoiseModel,
        weights: CostWeights,
        settings: MotionSettings,
        session_seed: u64,
        robots: Vec<String>,
        initial_cov: Vec<Matrix3<f64>>,
        start_nodes: Vec<NodeId>,
    ) -> Self {
        let room_region: HashMap<String, usize> = map
            .regions
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.clone(), i))
            .collect();
        let goal_rooms = task
            .goal
            .iter()
            .flatten()
            .filter_map(|&a| {
                let p = task.atom(a);
                (p.predicate == "visited")
                    .then(|| room_region.get(&p.args[0]).map(|&r| (a, r)))
                    .flatten()
            })
            .collect();
        let destinations = task
            .goal
            .iter()
            .flatten()
            .filter_map(|&a| {
                let p = task.atom(a);
                if p.predicate != "robot_in" {
                    return None;
                }
                let robot = robots.iter().position(|r| *r == p.args[0])?;
                Some((robot, *room_region.get(&p.args[1])?))
            })
            .collect();
        let room_entry = entry_distances(roadmap, map, task);
        let room_distance = room_distances(roadmap, map);
        let min_entry = room_entry.iter().copied().fold(f64::INFINITY, f64::min);
        TmpOracle {
            roadmap,
            map,
            noise,
            weights,
            settings,
            session_seed,
            pairs: static_pairs(robots.len()),
            robots,
            initial_cov,
            start_nodes,
            room_region,
            goal_rooms,
            destinations,
            room_entry,
            room_distance,
            min_entry: if min_entry.is_finite() { min_entry } else { 0.0 },
            memo: HashMap::new(),
            counters: OracleCounters::default(),
            max_trace_increase: 0.0,
        }
    }

    pub fn robots(&self) -> &[String] {
        &self.robots
    }

    pub fn initial_mapping(&self) -> StateMapping {
        StateMapping {
            pinned: self.start_nodes.clone(),
        }
    }

    /// The action's triggered tuple as index motions, one per distinct
    /// robot, ordered by robot; `None` when the robots are not a static pair
    /// or the tuple names one robot going two places.
    pub fn motions(&self, action: &GroundAction) -> Option<Vec<Motion>> {
        let mut out: Vec<Motion> = Vec::new();
        for (r, from, to) in action.motions() {
            let m = Motion {
                robot: self.robots.iter().position(|x| x == r)?,
                from: *self.room_region.get(from)?,
                to: *self.room_region.get(to)?,
            };
            match out.iter().find(|o| o.robot == m.robot) {
                Some(o) if *o == m => {}
                Some(_) => return None,
                None => out.push(m),
            }
        }
        out.sort();
        let pair = match out.as_slice() {
            [a] => (a.robot, a.robot),
            [a, b] => (a.robot, b.robot),
            _ => return None,
        };
        self.pairs.contains(&pair).then_some(out)
    }

    /// Motion cost of `action` with the robots at `mapping`. `None` when
    /// the action cannot be executed by the motion layer.
    pub fn external_cost(&mut self, action: &GroundAction, mapping: &StateMapping) -> Option<ExternalCost> {
        self.counters.calls += 1;
        let motions = self.motions(action)?;
        let starts: Vec<NodeId> = motions.iter().map(|m| mapping.pinned[m.robot]).collect();
        let key = (motions.clone(), starts.clone());
        if let Some(hit) = self.memo.get(&key) {
            self.counters.memo_hits += 1;
            return hit.clone();
        }
        self.counters.evaluations += 1;
        let seed = self.tuple_seed(&motions);
        let answer = match self.evaluate(&motions, &starts, seed, false) {
            Ok(result) => {
                self.max_trace_increase = self.max_trace_increase.max(result.stats.max_trace_increase);
                Some(ExternalCost {
                    motions,
                    starts,
                    seed,
                    result,
                })
            }
            Err(MotionError::NumericalFailure(_)) => {
                self.counters.numerical_failures += 1;
                None
            }
            Err(_) => {
                self.counters.infeasible += 1;
                None
            }
        };
        self.memo.insert(key, answer.clone());
        answer
    }

    /// Stream seed for a triggered tuple; independent of search order.
    pub fn tuple_seed(&self, motions: &[Motion]) -> u64 {
        let labels: Vec<u64> = motions
            .iter()
            .flat_map(|m| [m.robot as u64, m.from as u64, m.to as u64])
            .collect();
        rng::derive_seed(self.session_seed, &labels)
    }

    /// Runs the motion query for `motions` from `starts`.
    pub fn evaluate(
        &self,
        motions: &[Motion],
        starts: &[NodeId],
        seed: u64,
        record: bool,
    ) -> Result<MotionResult, MotionError> {
        let beliefs: Vec<Belief> = motions
            .iter()
            .zip(starts)
            .map(|(m, &n)| Belief::new(*self.roadmap.pose(n), self.initial_cov[m.robot]))
            .collect();
        let truth: Vec<_> = starts.iter().map(|&n| *self.roadmap.pose(n)).collect();
        let query = PathQuery {
            starts: starts.to_vec(),
            goal_regions: motions.iter().map(|m| m.to).collect(),
            seed,
            settings: self.settings,
        };
        evaluate_goto_cost(
            self.roadmap,
            self.map,
            &query,
            &JointBelief::from_beliefs(&beliefs),
            &truth,
            &self.noise,
            &self.weights,
            record,
        )
    }

    pub fn cached(&self, motions: &[Motion], starts: &[NodeId]) -> Option<&ExternalCost> {
        self.memo
            .get(&(motions.to_vec(), starts.to_vec()))
            .and_then(Option::as_ref)
    }

    fn graph_distance_to_region(&self, from: NodeId, region: usize) -> f64 {
        let tree = self.roadmap.path_tree(from);
        self.roadmap
            .instantiations(region)
            .iter()
            .map(|&g| tree.dist[g])
            .fold(f64::INFINITY, f64::min)
    }
}

/// For each region, the shortest roadmap distance from any node a robot
/// can be pinned to outside the region (another region's instantiation or
/// an anchor lying elsewhere) to one of the region's instantiations. Zero when the task
/// allows moving from the region to itself.
fn entry_distances(roadmap: &Roadmap, map: &WorldMap, task: &Task) -> Vec<f64> {
    (0..map.regions.len())
        .map(|g| {
            let id = &map.regions[g].id;
            if task.static_facts.contains(&Proposition::new("connected", &[id, id])) {
                return 0.0;
            }
            let inside = roadmap.instantiations(g);
            let outside = roadmap
                .region_index
                .iter()
                .enumerate()
                .filter(|(r, _)| *r != g)
                .flat_map(|(_, ids)| ids.iter())
                .chain(
                    roadmap
                        .anchors
                        .iter()
                        .filter(|&&a| map.region_containing(roadmap.pose(a).x, roadmap.pose(a).y) != Some(g)),
                );
            let mut best = f64::INFINITY;
            for &i in inside {
                let tree = roadmap.path_tree(i);
                for &o in outside.clone() {
                    best = best.min(tree.dist[o]);
                }
            }
            best
        })
        .collect()
}

/// Shortest roadmap distance between every ordered pair of regions, from
/// the nodes a robot can be pinned to in the first (its instantiations and
/// any anchor inside it) to the instantiations of the second.
fn room_distances(roadmap: &Roadmap, map: &WorldMap) -> Vec<Vec<f64>> {
    let n = map.regions.len();
    let mut sources: Vec<Vec<NodeId>> = roadmap.region_index.clone();
    sources.resize(n, Vec::new());
    for &a in &roadmap.anchors {
        let p = roadmap.pose(a);
        if let Some(r) = map.region_containing(p.x, p.y) {
            sources[r].push(a);
        }
    }
    (0..n)
        .map(|from| {
            let trees: Vec<_> = sources[from].iter().map(|&s| roadmap.path_tree(s)).collect();
            (0..n)
                .map(|to| {
                    if to == from {
                        return 0.0;
                    }
                    let mut best = f64::INFINITY;
                    for tree in &trees {
                        for &g in roadmap.instantiations(to) {
                            best = best.min(tree.dist[g]);
                        }
                    }
                    best
                })
                .collect()
        })
        .collect()
}

impl CostOracle for TmpOracle<'_> {
    type Context = StateMapping;

    fn initial_context(&self) -> StateMapping {
        self.initial_mapping()
    }

    fn cost(
        &mut self,
        _task: &Task,
        action: &GroundAction,
        _state: &TaskState,
        ctx: &StateMapping,
    ) -> Option<(f64, StateMapping)> {
        let ext = self.external_cost(action, ctx)?;
        let mut next = ctx.clone();
        for (m, &g) in ext.motions.iter().zip(&ext.result.goal_nodes) {
            next.pinned[m.robot] = g;
        }
        Some((ext.result.total, next))
    }

    /// Control cost of driving each robot along the shortest roadmap
    /// route into its target room.
    /// Infinite when the motion layer is certain to reject the action.
    fn lower_bound(&mut self, _task: &Task, action: &GroundAction, ctx: &StateMapping) -> f64 {
        let Some(motions) = self.motions(action) else {
            return f64::INFINITY;
        };
        let d: f64 = motions
            .iter()
            .map(|m| self.graph_distance_to_region(ctx.pinned[m.robot], m.to))
            .sum();
        if d.is_finite() {
            self.weights.control * d * BOUND_SLACK
        } else {
            f64::INFINITY
        }
    }

    /// The larger of two control-cost estimates. Visiting: entering every
    /// unvisited goal room, plus one more room entry when an odd number
    /// remains, since every action moves two robots and one of them must
    /// then go somewhere already visited. Destinations: each robot driving
    /// from its current room to the room it must end in.
    fn heuristic(&mut self, task: &Task, state: &TaskState) -> f64 {
        let visiting = self.visiting_estimate(state);
        let travel = self.destination_estimate(task, state);
        let h = visiting.max(travel);
        if h.is_finite() {
            self.weights.control * h * BOUND_SLACK
        } else {
            0.0
        }
    }
}

impl TmpOracle<'_> {
    fn visiting_estimate(&self, state: &TaskState) -> f64 {
        let (mut sum, mut left) = (0.0, 0usize);
        for &(atom, region) in &self.goal_rooms {
            if !state.contains(atom) {
                sum += self.room_entry[region];
                left += 1;
            }
        }
        let paired = self.pairs.iter().all(|(a, b)| a != b);
        if paired && left % 2 == 1 {
            sum += self.min_entry;
        }
        sum
    }

    fn destination_estimate(&self, task: &Task, state: &TaskState) -> f64 {
        if self.destinations.is_empty() {
            return 0.0;
        }
        let Ok(rooms) = robot_rooms(task, state, &self.robots) else {
            return 0.0;
        };
        self.destinations
            .iter()
            .map(|&(robot, dest)| match self.room_region.get(rooms[robot]) {
                Some(&here) => self.room_distance[here][dest],
                None => 0.0,
            })
            .sum()
    }
}

/// One action of the final plan with its simulated motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmpStep {
    pub action: String,
    pub robots: Vec<usize>,
    pub paths: Vec<Vec<NodeId>>,
    pub cost: f64,
    pub costs: crate::cost::CostBreakdown,
    #[serde(skip)]
    pub trajectory: Option<Trajectory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmpPlan {
    pub steps: Vec<TmpStep>,
    pub total_cost: f64,
}

/// Attaches the cached motion of every plan step, re-simulated with the
/// same stream to record its belief trajectory, and checks that each
/// robot's path starts where its previous one ended.
pub fn assemble_plan(
    task: &Task,
    plan: &TaskPlan<StateMapping>,
    oracle: &TmpOracle<'_>,
) -> Result<TmpPlan, DomainModelError> {
    let mut pinned = oracle.initial_mapping();
    let mut steps = Vec::with_capacity(plan.steps.len());
    for (k, step) in plan.steps.iter().enumerate() {
        let action = &task.actions[step.action];
        let motions = oracle.motions(action).ok_or(DomainModelError::MissingCache(k))?;
        let starts: Vec<NodeId> = motions.iter().map(|m| pinned.pinned[m.robot]).collect();
        let cached = oracle
            .cached(&motions, &starts)
            .ok_or(DomainModelError::MissingCache(k))?;
        let recorded = oracle.evaluate(&motions, &starts, cached.seed, true)?;
        for (m, path) in motions.iter().zip(&recorded.paths) {
            if path.first() != Some(&pinned.pinned[m.robot]) {
                return Err(DomainModelError::Discontinuous { step: k, robot: m.robot });
            }
            pinned.pinned[m.robot] = *path.last().unwrap();
        }
        steps.push(TmpStep {
            action: action.to_string(),
            robots: motions.iter().map(|m| m.robot).collect(),
            paths: recorded.paths.clone(),
            cost: step.cost,
            costs: recorded.costs,
            trajectory: recorded.trajectory,
        });
    }
    let total_cost = steps.iter().fold(0.0, |acc, s| acc + s.cost);
    Ok(TmpPlan { steps, total_cost })
}
