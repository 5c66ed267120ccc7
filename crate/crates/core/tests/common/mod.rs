//! Independent test-side oracles: central finite differences and a dense,
//! full-matrix Kalman filter written from the textbook equations without
//! any of the library's block structure.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn wrap(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// Central-difference Jacobian of `f` at `x`. Outputs listed in `angular`
/// are differenced through `wrap` so that a branch cut does not pollute
/// the estimate.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64, angular: &[usize]) -> DMatrix<f64> {
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, x.len());
    for j in 0..x.len() {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let (fp, fm) = (f(&xp), f(&xm));
        for i in 0..m {
            let diff = if angular.contains(&i) { wrap(fp[i] - fm[i]) } else { fp[i] - fm[i] };
            jac[(i, j)] = diff / (2.0 * h);
        }
    }
    jac
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    (a - b).abs().max()
}

/// Odometry motion written out longhand.
pub fn compose(x: f64, y: f64, th: f64, dx: f64, dy: f64, dth: f64) -> [f64; 3] {
    [x + dx * th.cos() - dy * th.sin(), y + dx * th.sin() + dy * th.cos(), th + dth]
}

/// Range and bearing of point (px, py) seen from pose (x, y, th).
pub fn range_bearing(x: f64, y: f64, th: f64, px: f64, py: f64) -> [f64; 2] {
    [((px - x).powi(2) + (py - y).powi(2)).sqrt(), wrap((py - y).atan2(px - x) - th)]
}

/// Dense joint Gaussian over `n` stacked poses.
#[derive(Clone, Debug)]
pub struct DenseKf {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl DenseKf {
    pub fn robots(&self) -> usize {
        self.mean.len() / 3
    }

    /// Builds the full 3n x 3n F and V matrices and applies
    /// `F S F^T + V W V^T` in one dense product.
    pub fn predict(&self, controls: &[[f64; 3]], process: &[Matrix3<f64>]) -> DenseKf {
        let n = self.robots();
        let dim = 3 * n;
        let mut f = DMatrix::identity(dim, dim);
        let mut v = DMatrix::zeros(dim, dim);
        let mut w = DMatrix::zeros(dim, dim);
        let mut mean = self.mean.clone();
        for i in 0..n {
            let (x, y, th) = (self.mean[3 * i], self.mean[3 * i + 1], self.mean[3 * i + 2]);
            let [dx, dy, dth] = controls[i];
            let next = compose(x, y, th, dx, dy, dth);
            mean[3 * i] = next[0];
            mean[3 * i + 1] = next[1];
            mean[3 * i + 2] = wrap(next[2]);
            f[(3 * i, 3 * i + 2)] = -dx * th.sin() - dy * th.cos();
            f[(3 * i + 1, 3 * i + 2)] = dx * th.cos() - dy * th.sin();
            v[(3 * i, 3 * i)] = th.cos();
            v[(3 * i, 3 * i + 1)] = -th.sin();
            v[(3 * i + 1, 3 * i)] = th.sin();
            v[(3 * i + 1, 3 * i + 1)] = th.cos();
            v[(3 * i + 2, 3 * i + 2)] = 1.0;
            for r in 0..3 {
                for c in 0..3 {
                    w[(3 * i + r, 3 * i + c)] = process[i][(r, c)];
                }
            }
        }
        let cov = &f * &self.cov * f.transpose() + &v * w * v.transpose();
        DenseKf { mean, cov }
    }

    /// One-shot Kalman update with a 2-row measurement `h` and innovation.
    fn update(&self, innovation: [f64; 2], h: DMatrix<f64>, q: &DMatrix<f64>) -> DenseKf {
        let s = &h * &self.cov * h.transpose() + q;
        let k = &self.cov * h.transpose() * s.try_inverse().expect("invertible innovation covariance");
        let nu = DVector::from_column_slice(&innovation);
        let mut mean = &self.mean + &k * nu;
        for i in 0..self.robots() {
            mean[3 * i + 2] = wrap(mean[3 * i + 2]);
        }
        let dim = self.cov.nrows();
        let cov = (DMatrix::identity(dim, dim) - &k * &h) * &self.cov;
        DenseKf { mean, cov }
    }

    /// Landmark at (lx, ly) observed by `robot` as measurement `z`.
    pub fn update_landmark(&self, robot: usize, lx: f64, ly: f64, z: [f64; 2], q: &DMatrix<f64>) -> DenseKf {
        let b = 3 * robot;
        let (x, y, th) = (self.mean[b], self.mean[b + 1], self.mean[b + 2]);
        let pred = range_bearing(x, y, th, lx, ly);
        let (dx, dy) = (lx - x, ly - y);
        let d2 = dx * dx + dy * dy;
        let d = d2.sqrt();
        let mut h = DMatrix::zeros(2, self.mean.len());
        h[(0, b)] = -dx / d;
        h[(0, b + 1)] = -dy / d;
        h[(1, b)] = dy / d2;
        h[(1, b + 1)] = -dx / d2;
        h[(1, b + 2)] = -1.0;
        self.update([z[0] - pred[0], wrap(z[1] - pred[1])], h, q)
    }

    /// Robot `a` measures range and bearing of robot `b`.
    pub fn update_mutual(&self, a: usize, b: usize, z: [f64; 2], q: &DMatrix<f64>) -> DenseKf {
        let (ia, ib) = (3 * a, 3 * b);
        let (x, y, th) = (self.mean[ia], self.mean[ia + 1], self.mean[ia + 2]);
        let (px, py) = (self.mean[ib], self.mean[ib + 1]);
        let pred = range_bearing(x, y, th, px, py);
        let (dx, dy) = (px - x, py - y);
        let d2 = dx * dx + dy * dy;
        let d = d2.sqrt();
        let mut h = DMatrix::zeros(2, self.mean.len());
        h[(0, ia)] = -dx / d;
        h[(0, ia + 1)] = -dy / d;
        h[(0, ib)] = dx / d;
        h[(0, ib + 1)] = dy / d;
        h[(1, ia)] = dy / d2;
        h[(1, ia + 1)] = -dx / d2;
        h[(1, ia + 2)] = -1.0;
        h[(1, ib)] = -dy / d2;
        h[(1, ib + 1)] = dx / d2;
        self.update([z[0] - pred[0], wrap(z[1] - pred[1])], h, q)
    }
}

/// Random symmetric positive-definite matrix of size `n`.
pub fn random_spd<R: Rng>(rng: &mut R, n: usize, scale: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    (&a * a.transpose() + DMatrix::identity(n, n) * 0.1) * scale
}

use mrtamp::belief::{landmark_model, motion_jacobians, mutual_model, Control, JointBelief, Measurement, MeasurementSource};
use mrtamp::worldmodel::{Landmark, Pose};

fn random_pose<R: Rng>(rng: &mut R) -> Pose {
    Pose::new(
        rng.random_range(-10.0..10.0),
        rng.random_range(-10.0..10.0),
        rng.random_range(-3.1..3.1),
    )
}

/// Largest deviation between each analytic Jacobian (F, V, landmark H,
/// mutual H) and central finite differences over `samples` random inputs
/// with at least half a metre between the observer and the observed point.
pub fn jacobian_errors(samples: usize, seed: u64) -> [f64; 4] {
    let mut r = rng(seed);
    let h = 1e-6;
    let mut worst = [0.0f64; 4];
    for _ in 0..samples {
        let p = random_pose(&mut r);
        let u = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-0.5..0.5)];
        let (f, v) = motion_jacobians(&p, &Control::new(u[0], u[1], u[2]));
        let f_fd = fd_jacobian(|x| compose(x[0], x[1], x[2], u[0], u[1], u[2]).to_vec(), &[p.x, p.y, p.theta], h, &[2]);
        let v_fd = fd_jacobian(|c| compose(p.x, p.y, p.theta, c[0], c[1], c[2]).to_vec(), &u, h, &[2]);
        worst[0] = worst[0].max(max_abs_diff(&DMatrix::from_column_slice(3, 3, f.as_slice()), &f_fd));
        worst[1] = worst[1].max(max_abs_diff(&DMatrix::from_column_slice(3, 3, v.as_slice()), &v_fd));

        let (lx, ly) = loop {
            let c = (r.random_range(-10.0..10.0), r.random_range(-10.0..10.0));
            if (c.0 - p.x).hypot(c.1 - p.y) > 0.5 {
                break c;
            }
        };
        let lm = Landmark { id: "l".into(), x: lx, y: ly };
        let (_, hl) = landmark_model(&p, &lm).unwrap();
        let hl_fd = fd_jacobian(|x| range_bearing(x[0], x[1], x[2], lx, ly).to_vec(), &[p.x, p.y, p.theta], h, &[1]);
        worst[2] = worst[2].max(max_abs_diff(&DMatrix::from_column_slice(2, 3, hl.as_slice()), &hl_fd));

        let q = loop {
            let q = random_pose(&mut r);
            if q.distance(&p) > 0.5 {
                break q;
            }
        };
        let (_, hm) = mutual_model(&p, &q).unwrap();
        let hm_fd = fd_jacobian(
            |x| range_bearing(x[0], x[1], x[2], x[3], x[4]).to_vec(),
            &[p.x, p.y, p.theta, q.x, q.y, q.theta],
            h,
            &[1],
        );
        worst[3] = worst[3].max(max_abs_diff(&DMatrix::from_column_slice(2, 6, hm.as_slice()), &hm_fd));
    }
    worst
}

pub fn to_dense(jb: &JointBelief) -> DenseKf {
    let mean = DVector::from_iterator(3 * jb.robots(), jb.means.iter().flat_map(|p| [p.x, p.y, p.theta]));
    DenseKf { mean, cov: jb.cov.clone() }
}

/// Max-abs difference between a joint belief and a dense one, with the
/// heading components compared modulo a full turn.
pub fn belief_gap(jb: &JointBelief, d: &DenseKf) -> f64 {
    let mine = to_dense(jb);
    let mut gap = max_abs_diff(&mine.cov, &d.cov);
    for i in 0..mine.mean.len() {
        let e = mine.mean[i] - d.mean[i];
        gap = gap.max(if i % 3 == 2 { wrap(e).abs() } else { e.abs() });
    }
    gap
}

/// Runs `steps` random joint predictions, landmark updates and mutual
/// updates on three robots. Each step is applied to the library belief
/// and, from the same input, to the dense oracle; returns the largest gap
/// between the two outputs over all steps.
pub fn dense_oracle_gap(steps: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = 3;
    let means: Vec<Pose> = (0..n)
        .map(|i| Pose::new(3.0 * i as f64, r.random_range(-1.0..1.0), r.random_range(-3.0..3.0)))
        .collect();
    let mut jb = JointBelief {
        means,
        cov: random_spd(&mut r, 3 * n, 0.05),
    };
    let q_lm = nalgebra::Matrix2::new(0.02, 0.0, 0.0, 0.003);
    let q_mu = nalgebra::Matrix2::new(0.05, 0.0, 0.0, 0.004);
    let dq = |m: &nalgebra::Matrix2<f64>| DMatrix::from_column_slice(2, 2, m.as_slice());
    let mut worst = 0.0f64;
    for _ in 0..steps {
        let dense = to_dense(&jb);
        let next = match r.random_range(0..3) {
            0 => {
                let controls: Vec<[f64; 3]> = (0..n)
                    .map(|_| [r.random_range(-0.5..0.5), r.random_range(-0.2..0.2), r.random_range(-0.3..0.3)])
                    .collect();
                let process: Vec<Matrix3<f64>> = (0..n)
                    .map(|_| {
                        Matrix3::from_diagonal(&nalgebra::Vector3::new(
                            r.random_range(0.0..1e-3),
                            r.random_range(0.0..1e-3),
                            r.random_range(0.0..1e-4),
                        ))
                    })
                    .collect();
                let cs: Vec<Control> = controls.iter().map(|c| Control::new(c[0], c[1], c[2])).collect();
                let lib = jb.predict(&cs, &process).unwrap();
                worst = worst.max(belief_gap(&lib, &dense.predict(&controls, &process)));
                lib
            }
            1 => {
                let robot = r.random_range(0..n);
                let p = jb.means[robot];
                let lm = Landmark {
                    id: "l".into(),
                    x: p.x + r.random_range(1.0..4.0),
                    y: p.y + r.random_range(-3.0..3.0),
                };
                let truth = range_bearing(p.x, p.y, p.theta, lm.x, lm.y);
                let z = [truth[0] + r.random_range(-0.2..0.2), truth[1] + r.random_range(-0.1..0.1)];
                let meas = Measurement::new(z[0], z[1], MeasurementSource::Landmark("l".into()));
                let lib = jb.update_landmark(robot, &meas, &lm, &q_lm).unwrap();
                worst = worst.max(belief_gap(&lib, &dense.update_landmark(robot, lm.x, lm.y, z, &dq(&q_lm))));
                lib
            }
            _ => {
                let a = r.random_range(0..n);
                let b = (a + r.random_range(1..n)) % n;
                let (pa, pb) = (jb.means[a], jb.means[b]);
                let truth = range_bearing(pa.x, pa.y, pa.theta, pb.x, pb.y);
                let z = [truth[0] + r.random_range(-0.2..0.2), truth[1] + r.random_range(-0.1..0.1)];
                let meas = Measurement::new(z[0], z[1], MeasurementSource::Robots(a, b));
                let lib = jb.update_mutual((a, b), &meas, &q_mu).unwrap();
                worst = worst.max(belief_gap(&lib, &dense.update_mutual(a, b, z, &dq(&q_mu))));
                lib
            }
        };
        jb = next;
        // keep the robots apart so that every geometry stays regular
        for i in 0..n {
            jb.means[i].x = 3.0 * i as f64 + (jb.means[i].x - 3.0 * i as f64).clamp(-1.0, 1.0);
            jb.means[i].y = jb.means[i].y.clamp(-1.0, 1.0);
        }
    }
    worst
}

use mrtamp::scenario::{corridor, RobotSpec, Scenario, TaskSpec};
use mrtamp::taskplan::search::CostOracle;
use mrtamp::taskplan::{Task, TaskState};
use mrtamp::tmp::TmpOracle;
use mrtamp::worldmodel::{Rect, Region, WorldMap};

/// Room rectangles of the four-room map; neighbours are 4 m apart.
pub const FOUR_ROOMS: [(&str, [f64; 4]); 4] = [
    ("A", [1.0, 1.0, 8.0, 8.0]),
    ("B", [12.0, 1.0, 19.0, 8.0]),
    ("C", [1.0, 12.0, 8.0, 19.0]),
    ("D", [12.0, 12.0, 19.0, 19.0]),
];

/// A 20 m square split into four fully connected rooms by a cross-shaped
/// wall that is open in the middle.
pub fn four_room_map() -> WorldMap {
    let ids: Vec<&str> = FOUR_ROOMS.iter().map(|r| r.0).collect();
    WorldMap {
        bounds: Rect::new(0.0, 0.0, 20.0, 20.0),
        obstacles: vec![
            Rect::new(9.8, 0.0, 10.2, 7.0),
            Rect::new(9.8, 13.0, 10.2, 20.0),
            Rect::new(0.0, 9.8, 7.0, 10.2),
            Rect::new(13.0, 9.8, 20.0, 10.2),
        ],
        regions: FOUR_ROOMS
            .iter()
            .map(|(id, r)| Region {
                id: id.to_string(),
                rect: Rect::new(r[0], r[1], r[2], r[3]),
                connected_to: ids.iter().filter(|o| *o != id).map(|o| o.to_string()).collect(),
            })
            .collect(),
        landmarks: FOUR_ROOMS
            .iter()
            .map(|(id, r)| Landmark {
                id: format!("m{id}"),
                x: (r[0] + r[2]) / 2.0,
                y: (r[1] + r[3]) / 2.0,
            })
            .collect(),
        sensor_range: 4.0,
    }
}

/// Smallest distance between two distinct rooms of the four-room map.
pub fn four_room_gap() -> f64 {
    let mut gap = f64::INFINITY;
    for (i, (_, a)) in FOUR_ROOMS.iter().enumerate() {
        for (_, b) in &FOUR_ROOMS[i + 1..] {
            let dx = (b[0] - a[2]).max(a[0] - b[2]).max(0.0);
            let dy = (b[1] - a[3]).max(a[1] - b[3]).max(0.0);
            gap = gap.min(dx.hypot(dy));
        }
    }
    gap
}

/// Random two-robot instance on the four-room map: random start poses,
/// a random nonempty set of rooms to visit and sometimes a destination.
pub fn four_room_instance(seed: u64) -> Scenario {
    let mut r = rng(seed);
    let mut s = corridor();
    s.name = format!("four-rooms-{seed}");
    s.map = four_room_map();
    s.prm.samples_per_region = 2;
    s.prm.free_samples = 150;
    s.prm.k_nearest = 12;
    let template = s.robots.clone();
    s.robots = template
        .iter()
        .map(|t| {
            let (_, rect) = FOUR_ROOMS[r.random_range(0..4)];
            RobotSpec {
                id: t.id.clone(),
                mean: [
                    r.random_range(rect[0] + 0.5..rect[2] - 0.5),
                    r.random_range(rect[1] + 0.5..rect[3] - 0.5),
                    r.random_range(-3.0..3.0),
                ],
                cov_diag: t.cov_diag,
            }
        })
        .collect();
    let mut visit: Vec<String> = FOUR_ROOMS.iter().filter(|_| r.random_bool(0.5)).map(|x| x.0.to_string()).collect();
    if visit.is_empty() {
        visit.push(FOUR_ROOMS[r.random_range(0..4)].0.to_string());
    }
    let mut destinations = std::collections::BTreeMap::new();
    if r.random_bool(0.3) {
        destinations.insert(s.robots[0].id.clone(), FOUR_ROOMS[r.random_range(0..4)].0.to_string());
    }
    s.task = TaskSpec { visit, destinations };
    s.validate().expect("four-room instance is valid");
    s
}

/// Minimum plan cost by exhaustive depth-first enumeration of action
/// sequences, each costed by `oracle`. Branches are cut once their cost
/// plus `per_action` for every action still needed reaches the best plan
/// found; `per_action` must be positive and not exceed the cost of any
/// feasible action. Depth-limited passes of growing depth supply the first
/// incumbent; the final pass has no depth limit, and terminates because
/// every action adds at least `per_action`.
pub fn brute_force_cost(task: &Task, oracle: &mut TmpOracle<'_>, per_action: f64, max_depth: usize) -> Option<f64> {
    assert!(per_action > 0.0);
    let visits: Vec<mrtamp::taskplan::AtomId> = task
        .goal
        .iter()
        .flatten()
        .copied()
        .filter(|&a| task.atom(a).predicate == "visited")
        .collect();
    let mut best = f64::INFINITY;
    let ctx = oracle.initial_context();
    for depth in 0..=max_depth {
        dfs(task, oracle, &visits, per_action, &task.initial, &ctx, 0.0, Some(depth), &mut best);
        if best.is_finite() {
            dfs(task, oracle, &visits, per_action, &task.initial, &ctx, 0.0, None, &mut best);
            return Some(best);
        }
    }
    None
}

#[allow(clippy::too_many_arguments)]
fn dfs(
    task: &Task,
    oracle: &mut TmpOracle<'_>,
    visits: &[mrtamp::taskplan::AtomId],
    per_action: f64,
    state: &TaskState,
    ctx: &mrtamp::tmp::StateMapping,
    g: f64,
    depth: Option<usize>,
    best: &mut f64,
) {
    if task.is_goal(state) {
        *best = best.min(g);
        return;
    }
    // each action marks at most two rooms visited
    let missing = visits.iter().filter(|&&a| !state.contains(a)).count();
    let needed = missing.div_ceil(2).max(1);
    if g + needed as f64 * per_action >= *best || depth == Some(0) {
        return;
    }
    for i in task.applicable_actions(state) {
        let action = &task.actions[i];
        if let Some((c, next_ctx)) = oracle.cost(task, action, state, ctx) {
            let next = task.apply(state, action).expect("applicable action applies");
            dfs(task, oracle, visits, per_action, &next, &next_ctx, g + c, depth.map(|d| d - 1), best);
        }
    }
}
