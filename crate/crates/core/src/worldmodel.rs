//! Known 2-D environment: rooms, obstacles, landmarks, and the geometric
//! queries the planners need.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sample spacing used by [`WorldMap::collision_free_segment`].
pub const SEGMENT_CHECK_SPACING: f64 = 0.1;

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Planar robot pose. `theta` is kept wrapped to (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn distance(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn distance_to_point(&self, x: f64, y: f64) -> f64 {
        (self.x - x).hypot(self.y - y)
    }
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Rect {
            min_x,
            min_y,
            max_x,
            max_y,
        }
    }

    pub fn area(&self) -> f64 {
        (self.max_x - self.min_x) * (self.max_y - self.min_y)
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.max_x > self.min_x && self.max_y > self.min_y) || !self.area().is_finite()
    }

    /// Closed containment: boundary points count as inside.
    pub fn contains_closed(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }

    /// Open containment: boundary points count as outside.
    pub fn contains_open(&self, x: f64, y: f64) -> bool {
        x > self.min_x && x < self.max_x && y > self.min_y && y < self.max_y
    }

    /// True when the interiors intersect. Touching edges do not overlap.
    pub fn overlaps(&self, other: &Rect) -> bool {
        self.min_x < other.max_x
            && other.min_x < self.max_x
            && self.min_y < other.max_y
            && other.min_y < self.max_y
    }

    pub fn centroid(&self) -> (f64, f64) {
        (
            0.5 * (self.min_x + self.max_x),
            0.5 * (self.min_y + self.max_y),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: String,
    pub rect: Rect,
    #[serde(default)]
    pub connected_to: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

fn default_sensor_range() -> f64 {
    4.0
}

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("map has no regions")]
    NoRegions,
    #[error("map bounds are degenerate")]
    DegenerateBounds,
    #[error("region {0} has non-positive area")]
    DegenerateRegion(String),
    #[error("duplicate region id {0}")]
    DuplicateRegion(String),
    #[error("regions {0} and {1} overlap")]
    OverlappingRegions(String, String),
    #[error("region {0} lies outside the map bounds")]
    RegionOutOfBounds(String),
    #[error("region {0} is connected to unknown region {1}")]
    UnknownConnection(String, String),
    #[error("connectivity is not symmetric: {0} -> {1} has no reverse entry")]
    AsymmetricConnection(String, String),
    #[error("region {0} is not reachable from region {1} through declared connectivity")]
    Unreachable(String, String),
    #[error("duplicate landmark id {0}")]
    DuplicateLandmark(String),
    #[error("landmark {id} at ({x}, {y}) lies outside the map bounds")]
    LandmarkOutOfBounds { id: String, x: f64, y: f64 },
    #[error("obstacle {0} is degenerate")]
    DegenerateObstacle(usize),
    #[error("sensor range must be positive and finite, got {0}")]
    BadSensorRange(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("sample count must be at least 1")]
    ZeroSamples,
    #[error("region {region} exhausted after {attempts} rejection attempts")]
    Exhausted { region: String, attempts: usize },
}

/// The environment. Immutable once validated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldMap {
    pub bounds: Rect,
    #[serde(default)]
    pub obstacles: Vec<Rect>,
    pub regions: Vec<Region>,
    #[serde(default)]
    pub landmarks: Vec<Landmark>,
    #[serde(default = "default_sensor_range")]
    pub sensor_range: f64,
}

impl WorldMap {
    /// Checks every structural invariant of the map.
    pub fn validate(&self) -> Result<(), MapError> {
        if self.bounds.is_degenerate() {
            return Err(MapError::DegenerateBounds);
        }
        if !(self.sensor_range > 0.0 && self.sensor_range.is_finite()) {
            return Err(MapError::BadSensorRange(self.sensor_range));
        }
        if self.regions.is_empty() {
            return Err(MapError::NoRegions);
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if o.is_degenerate() {
                return Err(MapError::DegenerateObstacle(i));
            }
        }
        let mut index = HashMap::new();
        for (i, r) in self.regions.iter().enumerate() {
            if r.rect.is_degenerate() {
                return Err(MapError::DegenerateRegion(r.id.clone()));
            }
            if !self.bounds.contains_closed(r.rect.min_x, r.rect.min_y)
                || !self.bounds.contains_closed(r.rect.max_x, r.rect.max_y)
            {
                return Err(MapError::RegionOutOfBounds(r.id.clone()));
            }
            if index.insert(r.id.as_str(), i).is_some() {
                return Err(MapError::DuplicateRegion(r.id.clone()));
            }
        }
        for (i, a) in self.regions.iter().enumerate() {
            for b in &self.regions[i + 1..] {
                if a.rect.overlaps(&b.rect) {
                    return Err(MapError::OverlappingRegions(a.id.clone(), b.id.clone()));
                }
            }
        }
        for r in &self.regions {
            for c in &r.connected_to {
                let Some(&j) = index.get(c.as_str()) else {
                    return Err(MapError::UnknownConnection(r.id.clone(), c.clone()));
                };
                if !self.regions[j].connected_to.iter().any(|b| b == &r.id) {
                    return Err(MapError::AsymmetricConnection(r.id.clone(), c.clone()));
                }
            }
        }
        // reachability from the first region
        let mut seen = vec![false; self.regions.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for c in &self.regions[i].connected_to {
                let j = index[c.as_str()];
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(MapError::Unreachable(
                self.regions[j].id.clone(),
                self.regions[0].id.clone(),
            ));
        }
        let mut ids = BTreeSet::new();
        for lm in &self.landmarks {
            if !ids.insert(lm.id.as_str()) {
                return Err(MapError::DuplicateLandmark(lm.id.clone()));
            }
            if !self.bounds.contains_closed(lm.x, lm.y) {
                return Err(MapError::LandmarkOutOfBounds {
                    id: lm.id.clone(),
                    x: lm.x,
                    y: lm.y,
                });
            }
        }
        Ok(())
    }

    pub fn region(&self, id: &str) -> Option<&Region> {
        self.regions.iter().find(|r| r.id == id)
    }

    pub fn region_index(&self, id: &str) -> Option<usize> {
        self.regions.iter().position(|r| r.id == id)
    }

    /// Index of the region whose rectangle contains the point, if any.
    pub fn region_containing(&self, x: f64, y: f64) -> Option<usize> {
        self.regions.iter().position(|r| r.rect.contains_closed(x, y))
    }

    fn point_free(&self, x: f64, y: f64) -> bool {
        self.bounds.contains_open(x, y) && !self.obstacles.iter().any(|o| o.contains_closed(x, y))
    }

    /// True iff the position is strictly inside the bounds and outside every
    /// obstacle. Obstacle boundaries count as collision.
    pub fn collision_free_pose(&self, p: &Pose) -> bool {
        self.point_free(p.x, p.y)
    }

    /// Checks points spaced at most [`SEGMENT_CHECK_SPACING`] apart along
    /// the segment, endpoints included. Symmetric in its arguments.
    pub fn collision_free_segment(&self, a: &Pose, b: &Pose) -> bool {
        self.collision_free_segment_with_spacing(a, b, SEGMENT_CHECK_SPACING)
    }

    pub fn collision_free_segment_with_spacing(&self, a: &Pose, b: &Pose, spacing: f64) -> bool {
        // canonical endpoint order makes the sample set independent of direction
        let (a, b) = if (a.x, a.y) <= (b.x, b.y) { (a, b) } else { (b, a) };
        let len = a.distance(b);
        let n = (len / spacing).ceil().max(1.0) as usize;
        (0..=n).all(|i| {
            let t = i as f64 / n as f64;
            self.point_free(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y))
        })
    }

    /// Draws `n` collision-free poses uniformly inside the region, headings
    /// uniform. The stream is consumed in a fixed order, so a given seed gives
    /// the same instantiations for every robot.
    pub fn sample_region_poses<R: Rng + ?Sized>(
        &self,
        region: &Region,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<Pose>, SamplingError> {
        if n == 0 {
            return Err(SamplingError::ZeroSamples);
        }
        let budget = 1000 * n;
        let r = &region.rect;
        let mut out = Vec::with_capacity(n);
        let mut attempts = 0;
        while out.len() < n {
            if attempts >= budget {
                return Err(SamplingError::Exhausted {
                    region: region.id.clone(),
                    attempts,
                });
            }
            attempts += 1;
            let x = rng.random_range(r.min_x..r.max_x);
            let y = rng.random_range(r.min_y..r.max_y);
            let theta = rng.random_range(-PI..PI);
            let p = Pose::new(x, y, theta);
            if r.contains_closed(x, y) && self.collision_free_pose(&p) {
                out.push(p);
            }
        }
        Ok(out)
    }

    /// Landmarks within `sensor_range` of the position, sorted by id.
    pub fn visible_landmarks(&self, p: &Pose) -> Vec<&Landmark> {
        let mut v: Vec<&Landmark> = self
            .landmarks
            .iter()
            .filter(|lm| p.distance_to_point(lm.x, lm.y) <= self.sensor_range)
            .collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    }
}
