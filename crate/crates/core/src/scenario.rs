//! Scenario files: map, noise, cost weights, roadmap settings, robots and
//! the rooms to visit, read from JSON.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{Belief, NoiseModel};
use crate::cost::{CostWeights, WeightError};
use crate::roadmap::{MotionSettings, RoadmapConfig};
use crate::worldmodel::{MapError, Pose, WorldMap};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scenario: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Weights(#[from] WeightError),
    #[error("noise standard deviations must be finite and nonnegative")]
    BadNoise,
    #[error("roadmap settings are invalid: {0}")]
    BadRoadmap(&'static str),
    #[error("scenario has no robots")]
    NoRobots,
    #[error("duplicate robot id {0}")]
    DuplicateRobot(String),
    #[error("robot {0} has an invalid initial covariance")]
    BadCovariance(String),
    #[error("robot {0} does not start inside any region")]
    RobotOutsideRegions(String),
    #[error("robot {0} starts in collision")]
    RobotInCollision(String),
    #[error("task refers to unknown room {0}")]
    UnknownRoom(String),
    #[error("task refers to unknown robot {0}")]
    UnknownRobot(String),
    #[error("cannot synthesize {0} robots")]
    TooManyRobots(usize),
}

/// Sideways spacing between an added robot and the robot it copies, in meters.
pub const TEAM_SPACING: f64 = 1.5;

/// Standard deviations of the process and measurement noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Per control step, on (dx, dy, dtheta).
    pub process_sigma: [f64; 3],
    /// On (range, bearing) of landmark observations.
    pub landmark_sigma: [f64; 2],
    /// On (range, bearing) of robot-to-robot observations.
    pub mutual_sigma: [f64; 2],
}

impl NoiseSpec {
    pub fn model(&self) -> NoiseModel {
        let sq = |v: &[f64]| v.iter().map(|s| s * s).collect::<Vec<_>>();
        let p = sq(&self.process_sigma);
        let l = sq(&self.landmark_sigma);
        let m = sq(&self.mutual_sigma);
        NoiseModel::from_diagonals([p[0], p[1], p[2]], [l[0], l[1]], [m[0], m[1]])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrmSpec {
    pub samples_per_region: usize,
    pub free_samples: usize,
    pub k_nearest: usize,
    pub step: f64,
    pub mutual_range: f64,
}

impl PrmSpec {
    pub fn roadmap_config(&self) -> RoadmapConfig {
        RoadmapConfig {
            samples_per_region: self.samples_per_region,
            free_samples: self.free_samples,
            k_nearest: self.k_nearest,
        }
    }

    pub fn motion_settings(&self, mutual: bool) -> MotionSettings {
        MotionSettings {
            step: self.step,
            mutual_range: if mutual { self.mutual_range } else { 0.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotSpec {
    pub id: String,
    /// Initial mean `[x, y, theta]`.
    pub mean: [f64; 3],
    /// Diagonal of the initial covariance.
    pub cov_diag: [f64; 3],
}

impl RobotSpec {
    pub fn pose(&self) -> Pose {
        Pose::new(self.mean[0], self.mean[1], self.mean[2])
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&self.cov_diag.into())
    }

    pub fn belief(&self) -> Belief {
        Belief::new(self.pose(), self.covariance())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    /// Rooms that must all be visited, by any robot.
    pub visit: Vec<String>,
    /// Rooms particular robots must end in, by robot id.
    #[serde(default)]
    pub destinations: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub map: WorldMap,
    pub noise: NoiseSpec,
    pub weights: CostWeights,
    pub prm: PrmSpec,
    pub robots: Vec<RobotSpec>,
    pub task: TaskSpec,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.map.validate()?;
        self.weights.validate()?;
        let n = &self.noise;
        if n.process_sigma
            .iter()
            .chain(&n.landmark_sigma)
            .chain(&n.mutual_sigma)
            .any(|s| !s.is_finite() || *s < 0.0)
        {
            return Err(ScenarioError::BadNoise);
        }
        let p = &self.prm;
        if p.samples_per_region == 0 || p.free_samples == 0 || p.k_nearest == 0 {
            return Err(ScenarioError::BadRoadmap("sample counts and k must be at least 1"));
        }
        if !(p.step.is_finite() && p.step > 0.0) {
            return Err(ScenarioError::BadRoadmap("step must be positive"));
        }
        if !(p.mutual_range.is_finite() && p.mutual_range >= 0.0) {
            return Err(ScenarioError::BadRoadmap("mutual_range must be nonnegative"));
        }
        if self.robots.is_empty() {
            return Err(ScenarioError::NoRobots);
        }
        let mut ids = HashSet::new();
        for r in &self.robots {
            if !ids.insert(r.id.as_str()) {
                return Err(ScenarioError::DuplicateRobot(r.id.clone()));
            }
            if r.cov_diag.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(ScenarioError::BadCovariance(r.id.clone()));
            }
            if !self.map.collision_free_pose(&r.pose()) {
                return Err(ScenarioError::RobotInCollision(r.id.clone()));
            }
            self.start_region(r)?;
        }
        let rooms = self.task.visit.iter().chain(self.task.destinations.values());
        if let Some(room) = rooms.into_iter().find(|v| self.map.region(v).is_none()) {
            return Err(ScenarioError::UnknownRoom(room.clone()));
        }
        if let Some(robot) = self.task.destinations.keys().find(|r| !ids.contains(r.as_str())) {
            return Err(ScenarioError::UnknownRobot(robot.clone()));
        }
        Ok(())
    }

    /// Index of the region containing the robot's initial mean.
    pub fn start_region(&self, robot: &RobotSpec) -> Result<usize, ScenarioError> {
        self.map
            .region_containing(robot.mean[0], robot.mean[1])
            .ok_or_else(|| ScenarioError::RobotOutsideRegions(robot.id.clone()))
    }

    pub fn initial_beliefs(&self) -> Vec<Belief> {
        self.robots.iter().map(RobotSpec::belief).collect()
    }

    pub fn noise_model(&self) -> NoiseModel {
        self.noise.model()
    }

    /// The same scenario with exactly `n` robots. Extra robots copy the
    /// existing ones in turn (start room, heading and covariance), shifted
    /// sideways by multiples of [`TEAM_SPACING`] so that a larger team
    /// repeats the starting layout of the original one.
    pub fn with_robots(&self, n: usize) -> Result<Scenario, ScenarioError> {
        let mut s = self.clone();
        s.robots.truncate(n);
        s.task.destinations.retain(|r, _| s.robots.iter().any(|x| x.id == *r));
        let m = self.robots.len();
        while s.robots.len() < n {
            let k = s.robots.len();
            let source = &self.robots[k % m];
            // copies 1, 2, 3, ... sit at +1, -1, +2, ... spacings
            let copy = k / m;
            let step = copy.div_ceil(2) as f64 * TEAM_SPACING;
            let dx = if copy % 2 == 1 { step } else { -step };
            let mut robot = source.clone();
            robot.id = format!("r{}", k + 1);
            robot.mean[0] += dx;
            if self.map.region_containing(robot.mean[0], robot.mean[1]) != Some(self.start_region(source)?)
                || !self.map.collision_free_pose(&robot.pose())
            {
                return Err(ScenarioError::TooManyRobots(n));
            }
            s.robots.push(robot);
        }
        s.validate()?;
        Ok(s)
    }

    /// The task as a PDDL problem over the room domain: one room object per
    /// region, `connected` facts from the region connectivity, each robot
    /// in its start room, and a goal of visiting every room in the task
    /// with the listed robots ending in their destination rooms.
    pub fn problem_text(&self) -> Result<String, ScenarioError> {
        let rooms: Vec<&str> = self.map.regions.iter().map(|r| r.id.as_str()).collect();
        let robots: Vec<&str> = self.robots.iter().map(|r| r.id.as_str()).collect();
        let mut init = Vec::new();
        for r in &self.robots {
            let room = &self.map.regions[self.start_region(r)?].id;
            init.push(format!("(robot_in {} {})", r.id, room));
        }
        for region in &self.map.regions {
            for to in &region.connected_to {
                init.push(format!("(connected {} {})", region.id, to));
            }
        }
        let mut goal: Vec<String> = self.task.visit.iter().map(|v| format!("(visited {v})")).collect();
        goal.extend(
            self.task
                .destinations
                .iter()
                .map(|(robot, room)| format!("(robot_in {robot} {room})")),
        );
        Ok(format!(
            "(define (problem {})\n  (:domain rooms)\n  (:objects {} - room {} - robot)\n  (:init {})\n  (:goal (and {})))\n",
            self.name,
            rooms.join(" "),
            robots.join(" "),
            init.join("\n         "),
            goal.join(" ")
        ))
    }
}

/// The corridor scenario shipped with the crate.
pub const CORRIDOR_JSON: &str = include_str!("../data/corridor.json");

pub fn corridor() -> Scenario {
    Scenario::from_json(CORRIDOR_JSON).expect("shipped corridor scenario is valid")
}
