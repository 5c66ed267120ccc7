//! Probabilistic roadmap with per-region pose instantiations, and the
//! belief-space cost of moving robots along it.
//!
//! Robots are simulated in lockstep ticks. Each tick every robot that still
//! has controls left executes one (robots that are done hold still and
//! accrue no process noise), then every robot observes the landmarks within
//! sensor range of its true pose, and finally robots whose true poses are
//! within `mutual_range` of each other each take a range-bearing
//! measurement of the other.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{self, Write};
use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{
    landmark_model, motion_mean, nominal_mutual, sample_noisy_control, simulate_noisy_observation,
    BeliefError, Control, JointBelief, NoiseModel,
};
use crate::cost::{total_cost, CostBreakdown, CostWeights};
use crate::rng;
use crate::worldmodel::{wrap_angle, Pose, SamplingError, WorldMap};

pub type NodeId = usize;

/// Minimum eigenvalue tolerated before a covariance is declared broken.
pub const PSD_TOLERANCE: f64 = -1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoadmapError {
    #[error("samples_per_region, free_samples and k must all be at least 1")]
    BadCounts,
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error("free-space sampling exhausted after {0} attempts")]
    FreeSpaceExhausted(usize),
    #[error("anchor pose ({0}, {1}) is in collision")]
    AnchorInCollision(f64, f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MotionError {
    #[error("no roadmap path reaches any goal instantiation")]
    Infeasible,
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("region index {0} has no instantiations")]
    EmptyRegion(usize),
    #[error("expected {expected} entries, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("covariance lost positive semidefiniteness (min eigenvalue {0:e})")]
    NumericalFailure(f64),
    #[error(transparent)]
    Belief(#[from] BeliefError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadmapConfig {
    pub samples_per_region: usize,
    pub free_samples: usize,
    pub k_nearest: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub pose: Pose,
    /// Region this node instantiates; `None` for free samples and anchors.
    pub region: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub to: NodeId,
    pub length: f64,
}

/// Single-source shortest paths by Euclidean edge length.
#[derive(Debug, Clone)]
pub struct PathTree {
    pub source: NodeId,
    pub dist: Vec<f64>,
    prev: Vec<Option<NodeId>>,
}

impl PathTree {
    pub fn reachable(&self, target: NodeId) -> bool {
        self.dist.get(target).is_some_and(|d| d.is_finite())
    }

    /// Node sequence from the source to `target`, both included.
    pub fn path_to(&self, target: NodeId) -> Option<Vec<NodeId>> {
        if !self.reachable(target) {
            return None;
        }
        let mut path = vec![target];
        let mut cur = target;
        while let Some(p) = self.prev[cur] {
            path.push(p);
            cur = p;
        }
        path.reverse();
        Some(path)
    }
}

#[derive(Debug)]
pub struct Roadmap {
    pub nodes: Vec<Node>,
    pub adjacency: Vec<Vec<Edge>>,
    /// Instantiation node ids per map region, in map region order.
    pub region_index: Vec<Vec<NodeId>>,
    /// Nodes added for fixed poses such as robot start poses.
    pub anchors: Vec<NodeId>,
    /// Connectivity problems noticed while building.
    pub warnings: Vec<String>,
    trees: Vec<OnceLock<PathTree>>,
}

#[derive(PartialEq)]
struct QueueEntry(f64, NodeId);

impl Eq for QueueEntry {}

impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, then node id
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Roadmap {
    /// A roadmap without nodes.
    pub fn empty() -> Self {
        Roadmap {
            nodes: Vec::new(),
            adjacency: Vec::new(),
            region_index: Vec::new(),
            anchors: Vec::new(),
            warnings: Vec::new(),
            trees: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn pose(&self, id: NodeId) -> &Pose {
        &self.nodes[id].pose
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn instantiations(&self, region: usize) -> &[NodeId] {
        self.region_index.get(region).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Shortest-path tree rooted at `source`, computed once and cached.
    pub fn path_tree(&self, source: NodeId) -> &PathTree {
        self.trees[source].get_or_init(|| self.dijkstra(source))
    }

    fn dijkstra(&self, source: NodeId) -> PathTree {
        let n = self.nodes.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![None; n];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(QueueEntry(0.0, source));
        while let Some(QueueEntry(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for e in &self.adjacency[u] {
                let nd = d + e.length;
                if nd < dist[e.to] {
                    dist[e.to] = nd;
                    prev[e.to] = Some(u);
                    heap.push(QueueEntry(nd, e.to));
                }
            }
        }
        PathTree { source, dist, prev }
    }

    /// Connected components as a label per node (union-find).
    pub fn components(&self) -> Vec<usize> {
        let n = self.nodes.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for (u, edges) in self.adjacency.iter().enumerate() {
            for e in edges {
                let (a, b) = (find(&mut parent, u), find(&mut parent, e.to));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        (0..n).map(|i| find(&mut parent, i)).collect()
    }

    /// Writes `node,x,y,theta,region` rows.
    pub fn write_nodes_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "node,x,y,theta,region")?;
        for n in &self.nodes {
            let region = n.region.map(|r| r.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{},{}", n.id, n.pose.x, n.pose.y, n.pose.theta, region)?;
        }
        Ok(())
    }
}

/// Samples region instantiations, free-space nodes and the given anchor
/// poses, then links every node to its `k` nearest neighbours wherever the
/// straight segment is collision-free.
pub fn build_roadmap<R: Rng + ?Sized>(
    map: &WorldMap,
    config: &RoadmapConfig,
    anchors: &[Pose],
    rng: &mut R,
) -> Result<Roadmap, RoadmapError> {
    if config.samples_per_region == 0 || config.free_samples == 0 || config.k_nearest == 0 {
        return Err(RoadmapError::BadCounts);
    }
    // Each region draws from its own stream and free space from `rng`, so
    // raising `samples_per_region` only adds nodes: the smaller roadmap's
    // samples are a subset of the larger one's.
    let region_seed: u64 = rng.random();
    let mut nodes = Vec::new();
    let mut region_index = Vec::with_capacity(map.regions.len());
    for (ri, region) in map.regions.iter().enumerate() {
        let mut region_rng = rng::stream(region_seed, &[ri as u64]);
        let poses = map.sample_region_poses(region, config.samples_per_region, &mut region_rng)?;
        let mut ids = Vec::with_capacity(poses.len());
        for pose in poses {
            ids.push(nodes.len());
            nodes.push(Node {
                id: nodes.len(),
                pose,
                region: Some(ri),
            });
        }
        region_index.push(ids);
    }
    let b = &map.bounds;
    let budget = 1000 * config.free_samples;
    let mut attempts = 0;
    let mut free = 0;
    while free < config.free_samples {
        if attempts >= budget {
            return Err(RoadmapError::FreeSpaceExhausted(attempts));
        }
        attempts += 1;
        let p = Pose::new(
            rng.random_range(b.min_x..b.max_x),
            rng.random_range(b.min_y..b.max_y),
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        );
        if map.collision_free_pose(&p) {
            nodes.push(Node {
                id: nodes.len(),
                pose: p,
                region: None,
            });
            free += 1;
        }
    }
    let mut anchor_ids = Vec::with_capacity(anchors.len());
    for a in anchors {
        if !map.collision_free_pose(a) {
            return Err(RoadmapError::AnchorInCollision(a.x, a.y));
        }
        anchor_ids.push(nodes.len());
        nodes.push(Node {
            id: nodes.len(),
            pose: *a,
            region: None,
        });
    }

    let n = nodes.len();
    let mut adjacency: Vec<Vec<Edge>> = vec![Vec::new(); n];
    for i in 0..n {
        let mut near: Vec<(f64, NodeId)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (nodes[i].pose.distance(&nodes[j].pose), j))
            .collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(d, j) in near.iter().take(config.k_nearest) {
            if adjacency[i].iter().any(|e| e.to == j) {
                continue;
            }
            if map.collision_free_segment(&nodes[i].pose, &nodes[j].pose) {
                adjacency[i].push(Edge { to: j, length: d });
                adjacency[j].push(Edge { to: i, length: d });
            }
        }
    }
    for edges in &mut adjacency {
        edges.sort_by_key(|e| e.to);
    }

    let mut roadmap = Roadmap {
        trees: (0..n).map(|_| OnceLock::new()).collect(),
        nodes,
        adjacency,
        region_index,
        anchors: anchor_ids,
        warnings: Vec::new(),
    };
    let comp = roadmap.components();
    let tagged: Vec<NodeId> = roadmap.region_index.iter().flatten().copied().collect();
    for &t in &tagged {
        if !tagged.iter().any(|&o| o != t && comp[o] == comp[t]) {
            roadmap
                .warnings
                .push(format!("instantiation node {t} is disconnected from all other instantiations"));
        }
    }
    for &a in &roadmap.anchors {
        if !tagged.iter().any(|&o| comp[o] == comp[a]) {
            roadmap
                .warnings
                .push(format!("anchor node {a} cannot reach any region instantiation"));
        }
    }
    Ok(roadmap)
}

/// Controls that drive a pose from `a` to `b` in steps of at most `step`
/// metres: each step translates along the straight line (expressed in the
/// current robot frame) and turns to face along it; the last step turns to
/// the heading of `b`.
pub fn edge_controls(a: &Pose, b: &Pose, step: f64) -> Vec<Control> {
    assert!(step > 0.0, "step must be positive");
    let d = a.distance(b);
    if d == 0.0 {
        let turn = wrap_angle(b.theta - a.theta);
        return if turn == 0.0 {
            Vec::new()
        } else {
            vec![Control::new(0.0, 0.0, turn)]
        };
    }
    let n = (d / step).ceil() as usize;
    let psi = (b.y - a.y).atan2(b.x - a.x);
    let waypoint = |k: usize| -> (f64, f64) {
        if k == n {
            (b.x, b.y)
        } else {
            let t = (k as f64 * step) / d;
            (a.x + t * (b.x - a.x), a.y + t * (b.y - a.y))
        }
    };
    let mut heading = a.theta;
    let mut prev = (a.x, a.y);
    let mut out = Vec::with_capacity(n);
    for k in 1..=n {
        let w = waypoint(k);
        let (gx, gy) = (w.0 - prev.0, w.1 - prev.1);
        let (s, c) = heading.sin_cos();
        let target = if k == n { b.theta } else { psi };
        let turn = wrap_angle(target - heading);
        out.push(Control::new(c * gx + s * gy, -s * gx + c * gy, turn));
        heading = wrap_angle(heading + turn);
        prev = w;
    }
    out
}

/// Concatenated controls along a node path.
pub fn path_controls(roadmap: &Roadmap, path: &[NodeId], step: f64) -> Vec<Control> {
    path.windows(2)
        .flat_map(|w| edge_controls(roadmap.pose(w[0]), roadmap.pose(w[1]), step))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionSettings {
    /// Control step length in metres.
    pub step: f64,
    /// Mutual observations fire when true robots are at most this far apart;
    /// zero disables them.
    pub mutual_range: f64,
}

impl Default for MotionSettings {
    fn default() -> Self {
        MotionSettings {
            step: 0.5,
            mutual_range: 4.0,
        }
    }
}

/// Per-tick record of one propagation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub beliefs: Vec<JointBelief>,
    pub truths: Vec<Vec<Pose>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub landmark_updates: usize,
    pub mutual_updates: usize,
    /// Largest `trace(posterior) - trace(prior)` over all updates.
    pub max_trace_increase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionResult {
    pub paths: Vec<Vec<NodeId>>,
    pub goal_nodes: Vec<NodeId>,
    pub costs: CostBreakdown,
    pub total: f64,
    pub final_belief: JointBelief,
    pub final_truth: Vec<Pose>,
    pub ticks: usize,
    pub stats: UpdateStats,
    pub trajectory: Option<Trajectory>,
}

/// Simulates the robots of `initial` along their node paths. `truth` holds
/// the true starting poses used to generate process noise and observations.
#[allow(clippy::too_many_arguments)]
pub fn propagate_pair<R: Rng + ?Sized>(
    roadmap: &Roadmap,
    map: &WorldMap,
    paths: &[Vec<NodeId>],
    initial: &JointBelief,
    truth: &[Pose],
    noise: &NoiseModel,
    settings: &MotionSettings,
    weights: &CostWeights,
    record: bool,
    rng: &mut R,
) -> Result<MotionResult, MotionError> {
    let robots = initial.robots();
    for len in [paths.len(), truth.len()] {
        if len != robots {
            return Err(MotionError::DimensionMismatch {
                expected: robots,
                got: len,
            });
        }
    }
    for path in paths {
        if path.is_empty() {
            return Err(MotionError::DimensionMismatch { expected: 1, got: 0 });
        }
        if let Some(&bad) = path.iter().find(|&&n| n >= roadmap.len()) {
            return Err(MotionError::UnknownNode(bad));
        }
    }
    let controls: Vec<Vec<Control>> = paths
        .iter()
        .map(|p| path_controls(roadmap, p, settings.step))
        .collect();
    let ticks = controls.iter().map(Vec::len).max().unwrap_or(0);

    let mut jb = initial.clone();
    let mut truth = truth.to_vec();
    let mut stats = UpdateStats::default();
    let mut control_usage = 0.0;
    let mut trajectory = record.then(|| Trajectory {
        beliefs: vec![jb.clone()],
        truths: vec![truth.clone()],
    });
    let zero3 = nalgebra::Matrix3::zeros();

    for t in 0..ticks {
        let mut step_controls = Vec::with_capacity(robots);
        let mut process = Vec::with_capacity(robots);
        for (i, seq) in controls.iter().enumerate() {
            match seq.get(t) {
                Some(u) => {
                    control_usage += u.magnitude();
                    let noisy = sample_noisy_control(u, &noise.process, rng);
                    truth[i] = motion_mean(&truth[i], &noisy);
                    step_controls.push(*u);
                    process.push(noise.process);
                }
                None => {
                    step_controls.push(Control::default());
                    process.push(zero3);
                }
            }
        }
        jb = jb.predict(&step_controls, &process)?;

        for i in 0..robots {
            for lm in map.visible_landmarks(&truth[i]) {
                let Ok((nominal, _)) = landmark_model(&truth[i], lm) else {
                    continue;
                };
                let z = simulate_noisy_observation(&nominal, &noise.landmark, rng);
                let prior = jb.trace();
                jb = jb.update_landmark(i, &z, lm, &noise.landmark)?;
                stats.landmark_updates += 1;
                stats.max_trace_increase = stats.max_trace_increase.max(jb.trace() - prior);
            }
        }
        if settings.mutual_range > 0.0 {
            for i in 0..robots {
                for j in i + 1..robots {
                    if truth[i].distance(&truth[j]) > settings.mutual_range {
                        continue;
                    }
                    // Each robot measures the other in the same tick.
                    for (a, b) in [(i, j), (j, i)] {
                        let Ok(nominal) = nominal_mutual(&truth[a], &truth[b], (a, b)) else {
                            continue;
                        };
                        let z = simulate_noisy_observation(&nominal, &noise.mutual, rng);
                        let prior = jb.trace();
                        jb = jb.update_mutual((a, b), &z, &noise.mutual)?;
                        stats.mutual_updates += 1;
                        stats.max_trace_increase = stats.max_trace_increase.max(jb.trace() - prior);
                    }
                }
            }
        }
        if let Some(bad) = jb.cov.diagonal().iter().find(|v| **v < PSD_TOLERANCE || !v.is_finite()) {
            return Err(MotionError::NumericalFailure(*bad));
        }
        if let Some(tr) = trajectory.as_mut() {
            tr.beliefs.push(jb.clone());
            tr.truths.push(truth.clone());
        }
    }
    if ticks > 0 {
        let min_eig = jb.min_eigenvalue();
        if min_eig < PSD_TOLERANCE {
            return Err(MotionError::NumericalFailure(min_eig));
        }
    }

    let goal_nodes: Vec<NodeId> = paths.iter().map(|p| *p.last().unwrap()).collect();
    let goal_distance = goal_nodes
        .iter()
        .zip(&jb.means)
        .map(|(&g, m)| m.distance(roadmap.pose(g)))
        .sum();
    let costs = CostBreakdown {
        control_usage,
        goal_distance,
        uncertainty: jb.trace(),
    };
    Ok(MotionResult {
        paths: paths.to_vec(),
        goal_nodes,
        total: total_cost(&costs, weights),
        costs,
        final_belief: jb,
        final_truth: truth,
        ticks,
        stats,
        trajectory,
    })
}

/// Motion query for a group of robots travelling simultaneously.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathQuery {
    pub starts: Vec<NodeId>,
    /// Map region index each robot must reach.
    pub goal_regions: Vec<usize>,
    pub seed: u64,
    pub settings: MotionSettings,
}

/// Advances an odometer over the candidate product, last robot fastest.
fn next_combination(idx: &mut [usize], options: &[Vec<NodeId>]) -> bool {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < options[k].len() {
            return true;
        }
        idx[k] = 0;
    }
    false
}

/// Enumerates every combination of distinct goal instantiations, simulates
/// the graph-shortest paths to each, and keeps the cheapest. Ties go to the
/// lexicographically smallest goal-node tuple.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_goto_cost(
    roadmap: &Roadmap,
    map: &WorldMap,
    query: &PathQuery,
    initial: &JointBelief,
    truth: &[Pose],
    noise: &NoiseModel,
    weights: &CostWeights,
    record: bool,
) -> Result<MotionResult, MotionError> {
    let robots = query.starts.len();
    if query.goal_regions.len() != robots || initial.robots() != robots {
        return Err(MotionError::DimensionMismatch {
            expected: robots,
            got: query.goal_regions.len().min(initial.robots()),
        });
    }
    if let Some(&bad) = query.starts.iter().find(|&&n| n >= roadmap.len()) {
        return Err(MotionError::UnknownNode(bad));
    }
    let mut options: Vec<Vec<NodeId>> = Vec::with_capacity(robots);
    for (i, &region) in query.goal_regions.iter().enumerate() {
        let inst = roadmap.instantiations(region);
        if inst.is_empty() {
            return Err(MotionError::EmptyRegion(region));
        }
        let tree = roadmap.path_tree(query.starts[i]);
        let mut reachable: Vec<NodeId> = inst.iter().copied().filter(|&g| tree.reachable(g)).collect();
        reachable.sort_unstable();
        if reachable.is_empty() {
            return Err(MotionError::Infeasible);
        }
        options.push(reachable);
    }

    let mut best: Option<(Vec<NodeId>, MotionResult)> = None;
    let mut idx = vec![0usize; robots];
    loop {
        let goals: Vec<NodeId> = idx.iter().zip(&options).map(|(&k, o)| o[k]).collect();
        // Two robots cannot park on the same node.
        if (1..robots).any(|i| goals[..i].contains(&goals[i])) {
            if !next_combination(&mut idx, &options) {
                break;
            }
            continue;
        }
        let paths: Vec<Vec<NodeId>> = goals
            .iter()
            .enumerate()
            .map(|(i, &g)| roadmap.path_tree(query.starts[i]).path_to(g).unwrap())
            .collect();
        let labels: Vec<u64> = goals.iter().map(|&g| g as u64).collect();
        let mut stream = rng::stream(query.seed, &labels);
        let result = propagate_pair(
            roadmap,
            map,
            &paths,
            initial,
            truth,
            noise,
            &query.settings,
            weights,
            false,
            &mut stream,
        )?;
        if best.as_ref().is_none_or(|(_, b)| result.total < b.total) {
            best = Some((goals, result));
        }
        if !next_combination(&mut idx, &options) {
            break;
        }
    }
    let (goals, result) = best.ok_or(MotionError::Infeasible)?;
    if !record {
        return Ok(result);
    }
    let labels: Vec<u64> = goals.iter().map(|&g| g as u64).collect();
    propagate_pair(
        roadmap,
        map,
        &result.paths,
        initial,
        truth,
        noise,
        &query.settings,
        weights,
        true,
        &mut rng::stream(query.seed, &labels),
    )
}
