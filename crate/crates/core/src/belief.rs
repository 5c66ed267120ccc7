//! Gaussian beliefs and the EKF machinery for single robots and joint
//! multi-robot states, including relative range-bearing observations
//! between robots.
//!
//! The motion model is odometry-style rigid-body composition: a control
//! `(dx, dy, dtheta)` is a displacement expressed in the robot's current
//! frame, and process noise is additive on that control.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x3, Matrix3, SMatrix, SymmetricEigen, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::worldmodel::{wrap_angle, Landmark, Pose};

/// Robots closer than this are treated as coincident.
pub const SINGULAR_DISTANCE: f64 = 1e-9;

pub type Matrix2x6 = SMatrix<f64, 2, 6>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BeliefError {
    #[error("measurement geometry is singular (distance {0:e})")]
    SingularGeometry(f64),
    #[error("innovation covariance is not invertible")]
    SingularInnovation,
    #[error("expected {expected} entries, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("robot index {index} out of range for {robots} robots")]
    BadRobotIndex { index: usize, robots: usize },
    #[error("mutual observation needs two distinct robots, got ({0}, {0})")]
    SameRobot(usize),
    #[error("covariance is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),
}

/// Displacement in the robot's current frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Control {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
}

impl Control {
    pub fn new(dx: f64, dy: f64, dtheta: f64) -> Self {
        Control { dx, dy, dtheta }
    }

    /// Translation length; rotation does not count toward control usage.
    pub fn magnitude(&self) -> f64 {
        self.dx.hypot(self.dy)
    }

    pub fn is_zero(&self) -> bool {
        self.dx == 0.0 && self.dy == 0.0 && self.dtheta == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MeasurementSource {
    Landmark(String),
    /// Observer and observed robot indices.
    Robots(usize, usize),
}

/// Range-bearing measurement, bearing relative to the observer heading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub range: f64,
    pub bearing: f64,
    pub source: MeasurementSource,
}

impl Measurement {
    pub fn new(range: f64, bearing: f64, source: MeasurementSource) -> Self {
        Measurement {
            range,
            bearing: wrap_angle(bearing),
            source,
        }
    }

    /// `self - predicted`, bearing component wrapped.
    pub fn innovation(&self, predicted: &Measurement) -> Vector2<f64> {
        Vector2::new(
            self.range - predicted.range,
            wrap_angle(self.bearing - predicted.bearing),
        )
    }
}

/// Process and measurement noise covariances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub process: Matrix3<f64>,
    pub landmark: Matrix2<f64>,
    pub mutual: Matrix2<f64>,
}

impl NoiseModel {
    pub fn from_diagonals(process: [f64; 3], landmark: [f64; 2], mutual: [f64; 2]) -> Self {
        NoiseModel {
            process: Matrix3::from_diagonal(&process.into()),
            landmark: Matrix2::from_diagonal(&landmark.into()),
            mutual: Matrix2::from_diagonal(&mutual.into()),
        }
    }

    pub fn zero() -> Self {
        Self::from_diagonals([0.0; 3], [0.0; 2], [0.0; 2])
    }
}

/// Single-robot Gaussian belief.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    pub mean: Pose,
    pub cov: Matrix3<f64>,
}

impl Belief {
    pub fn new(mean: Pose, cov: Matrix3<f64>) -> Self {
        Belief {
            mean,
            cov: symmetrize3(&cov),
        }
    }
}

fn symmetrize3(m: &Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn motion_mean(p: &Pose, u: &Control) -> Pose {
    let (s, c) = p.theta.sin_cos();
    Pose::new(
        p.x + u.dx * c - u.dy * s,
        p.y + u.dx * s + u.dy * c,
        p.theta + u.dtheta,
    )
}

/// Jacobians of [`motion_mean`] with respect to the pose (F) and the
/// control (V).
pub fn motion_jacobians(p: &Pose, u: &Control) -> (Matrix3<f64>, Matrix3<f64>) {
    let (s, c) = p.theta.sin_cos();
    let f = Matrix3::new(
        1.0, 0.0, -u.dx * s - u.dy * c, //
        0.0, 1.0, u.dx * c - u.dy * s, //
        0.0, 0.0, 1.0,
    );
    let v = Matrix3::new(
        c, -s, 0.0, //
        s, c, 0.0, //
        0.0, 0.0, 1.0,
    );
    (f, v)
}

pub fn ekf_predict(b: &Belief, u: &Control, process: &Matrix3<f64>) -> Belief {
    let (f, v) = motion_jacobians(&b.mean, u);
    Belief {
        mean: motion_mean(&b.mean, u),
        cov: symmetrize3(&(f * b.cov * f.transpose() + v * process * v.transpose())),
    }
}

/// Predicted range-bearing observation of a landmark and its Jacobian with
/// respect to the robot pose.
pub fn landmark_model(p: &Pose, lm: &Landmark) -> Result<(Measurement, Matrix2x3<f64>), BeliefError> {
    let dx = lm.x - p.x;
    let dy = lm.y - p.y;
    let q = dx * dx + dy * dy;
    let d = q.sqrt();
    if d <= SINGULAR_DISTANCE {
        return Err(BeliefError::SingularGeometry(d));
    }
    let z = Measurement::new(
        d,
        dy.atan2(dx) - p.theta,
        MeasurementSource::Landmark(lm.id.clone()),
    );
    let h = Matrix2x3::new(
        -dx / d, -dy / d, 0.0, //
        dy / q, -dx / q, -1.0,
    );
    Ok((z, h))
}

fn relative_geometry(p_r: &Pose, p_rp: &Pose) -> Result<(f64, f64, f64, f64), BeliefError> {
    let dx = p_rp.x - p_r.x;
    let dy = p_rp.y - p_r.y;
    let q = dx * dx + dy * dy;
    let d = q.sqrt();
    if d <= SINGULAR_DISTANCE {
        return Err(BeliefError::SingularGeometry(d));
    }
    Ok((dx, dy, q, d))
}

/// Range and bearing of robot `p_rp` as seen from robot `p_r`, with the
/// 2x6 Jacobian over the stacked state `[p_r, p_rp]`.
pub fn mutual_model(p_r: &Pose, p_rp: &Pose) -> Result<(Measurement, Matrix2x6), BeliefError> {
    let (dx, dy, q, d) = relative_geometry(p_r, p_rp)?;
    let z = Measurement::new(d, dy.atan2(dx) - p_r.theta, MeasurementSource::Robots(0, 1));
    #[rustfmt::skip]
    let h = Matrix2x6::from_row_slice(&[
        -dx / d, -dy / d,  0.0, dx / d,  dy / d, 0.0,
         dy / q, -dx / q, -1.0, -dy / q, dx / q, 0.0,
    ]);
    Ok((z, h))
}

fn invert2(s: &Matrix2<f64>) -> Result<Matrix2<f64>, BeliefError> {
    let det = s.determinant();
    let scale = s.abs().max();
    if !det.is_finite() || det.abs() <= 1e-300 || det.abs() <= 1e-15 * scale * scale {
        return Err(BeliefError::SingularInnovation);
    }
    s.try_inverse().ok_or(BeliefError::SingularInnovation)
}

pub fn ekf_update(
    b: &Belief,
    z: &Measurement,
    lm: &Landmark,
    q: &Matrix2<f64>,
) -> Result<Belief, BeliefError> {
    let (pred, h) = landmark_model(&b.mean, lm)?;
    let s = h * b.cov * h.transpose() + q;
    let k = b.cov * h.transpose() * invert2(&s)?;
    let dmu = k * z.innovation(&pred);
    let mean = Pose::new(b.mean.x + dmu[0], b.mean.y + dmu[1], b.mean.theta + dmu[2]);
    let cov = (Matrix3::identity() - k * h) * b.cov;
    Ok(Belief {
        mean,
        cov: symmetrize3(&cov),
    })
}

/// Adds zero-mean Gaussian noise with covariance `q` to a nominal
/// measurement.
pub fn simulate_noisy_observation<R: Rng + ?Sized>(
    nominal: &Measurement,
    q: &Matrix2<f64>,
    rng: &mut R,
) -> Measurement {
    let n = sample_gaussian2(q, rng);
    Measurement::new(nominal.range + n[0], nominal.bearing + n[1], nominal.source.clone())
}

/// Symmetric square root of a PSD matrix; negative eigenvalues clamp to 0.
fn sqrt_psd(m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if (0..n).all(|i| (0..n).all(|j| i == j || m[(i, j)] == 0.0)) {
        return DMatrix::from_diagonal(&m.diagonal().map(|v| v.max(0.0).sqrt()));
    }
    let eig = SymmetricEigen::new(m);
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

fn sample_gaussian<R: Rng + ?Sized>(cov: DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let w = DVector::from_fn(cov.nrows(), |_, _| rng.sample(StandardNormal));
    sqrt_psd(cov) * w
}

fn sample_gaussian2<R: Rng + ?Sized>(q: &Matrix2<f64>, rng: &mut R) -> Vector2<f64> {
    let n = sample_gaussian(DMatrix::from_column_slice(2, 2, q.as_slice()), rng);
    Vector2::new(n[0], n[1])
}

/// Draws a noisy version of a commanded control, `u + w` with
/// `w ~ N(0, process)`.
pub fn sample_noisy_control<R: Rng + ?Sized>(
    u: &Control,
    process: &Matrix3<f64>,
    rng: &mut R,
) -> Control {
    let n = sample_gaussian(DMatrix::from_column_slice(3, 3, process.as_slice()), rng);
    Control::new(u.dx + n[0], u.dy + n[1], u.dtheta + n[2])
}

/// Draws a pose from a belief.
pub fn sample_pose<R: Rng + ?Sized>(b: &Belief, rng: &mut R) -> Pose {
    let n = sample_gaussian(DMatrix::from_column_slice(3, 3, b.cov.as_slice()), rng);
    Pose::new(b.mean.x + n[0], b.mean.y + n[1], b.mean.theta + n[2])
}

/// Joint Gaussian over the stacked poses of several robots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointBelief {
    pub means: Vec<Pose>,
    pub cov: DMatrix<f64>,
}

impl JointBelief {
    /// Block-diagonal joint belief from independent marginals.
    pub fn from_beliefs(beliefs: &[Belief]) -> Self {
        let n = beliefs.len();
        let mut cov = DMatrix::zeros(3 * n, 3 * n);
        for (i, b) in beliefs.iter().enumerate() {
            cov.fixed_view_mut::<3, 3>(3 * i, 3 * i).copy_from(&b.cov);
        }
        JointBelief {
            means: beliefs.iter().map(|b| b.mean).collect(),
            cov,
        }
    }

    pub fn robots(&self) -> usize {
        self.means.len()
    }

    pub fn block(&self, i: usize, j: usize) -> Matrix3<f64> {
        self.cov.fixed_view::<3, 3>(3 * i, 3 * j).into_owned()
    }

    pub fn marginal(&self, i: usize) -> Belief {
        Belief {
            mean: self.means[i],
            cov: self.block(i, i),
        }
    }

    /// Largest absolute entry over all off-diagonal blocks.
    pub fn max_cross_entry(&self) -> f64 {
        let n = self.robots();
        let mut m: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    m = m.max(self.block(i, j).abs().max());
                }
            }
        }
        m
    }

    pub fn trace(&self) -> f64 {
        self.cov.trace()
    }

    fn check_index(&self, index: usize) -> Result<(), BeliefError> {
        if index >= self.robots() {
            Err(BeliefError::BadRobotIndex {
                index,
                robots: self.robots(),
            })
        } else {
            Ok(())
        }
    }

    /// Minimum eigenvalue of the covariance.
    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.cov.clone())
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    /// Block-wise EKF prediction: each robot moves by its own control, and
    /// cross-covariance blocks are carried as `F_i S_ij F_j^T`.
    pub fn predict(&self, controls: &[Control], process: &[Matrix3<f64>]) -> Result<JointBelief, BeliefError> {
        let n = self.robots();
        if controls.len() != n {
            return Err(BeliefError::DimensionMismatch {
                expected: n,
                got: controls.len(),
            });
        }
        if process.len() != n {
            return Err(BeliefError::DimensionMismatch {
                expected: n,
                got: process.len(),
            });
        }
        let jac: Vec<_> = self
            .means
            .iter()
            .zip(controls)
            .map(|(p, u)| motion_jacobians(p, u))
            .collect();
        let mut cov = DMatrix::zeros(3 * n, 3 * n);
        for i in 0..n {
            for j in 0..n {
                let mut b = jac[i].0 * self.block(i, j) * jac[j].0.transpose();
                if i == j {
                    b += jac[i].1 * process[i] * jac[i].1.transpose();
                }
                cov.fixed_view_mut::<3, 3>(3 * i, 3 * j).copy_from(&b);
            }
        }
        Ok(JointBelief {
            means: self
                .means
                .iter()
                .zip(controls)
                .map(|(p, u)| motion_mean(p, u))
                .collect(),
            cov: symmetrize(&cov),
        })
    }

    /// Generic EKF update with a measurement Jacobian over the full state.
    fn update_with(&self, innovation: Vector2<f64>, h: &DMatrix<f64>, q: &Matrix2<f64>) -> Result<JointBelief, BeliefError> {
        let ph = &self.cov * h.transpose();
        let s2 = h * &ph;
        let s = Matrix2::new(s2[(0, 0)], s2[(0, 1)], s2[(1, 0)], s2[(1, 1)]) + q;
        let s_inv = invert2(&s)?;
        let s_inv = DMatrix::from_column_slice(2, 2, s_inv.as_slice());
        let k = ph * s_inv;
        let dmu: DVector<f64> = &k * DVector::from_column_slice(innovation.as_slice());
        let means = self
            .means
            .iter()
            .enumerate()
            .map(|(i, p)| {
                Pose::new(
                    p.x + dmu[3 * i],
                    p.y + dmu[3 * i + 1],
                    p.theta + dmu[3 * i + 2],
                )
            })
            .collect();
        let dim = self.cov.nrows();
        let cov = (DMatrix::identity(dim, dim) - &k * h) * &self.cov;
        Ok(JointBelief {
            means,
            cov: symmetrize(&cov),
        })
    }

    /// Landmark observation by one robot; the Jacobian is zero outside that
    /// robot's block.
    pub fn update_landmark(
        &self,
        robot: usize,
        z: &Measurement,
        lm: &Landmark,
        q: &Matrix2<f64>,
    ) -> Result<JointBelief, BeliefError> {
        self.check_index(robot)?;
        let (pred, h_r) = landmark_model(&self.means[robot], lm)?;
        let mut h = DMatrix::zeros(2, 3 * self.robots());
        h.fixed_view_mut::<2, 3>(0, 3 * robot).copy_from(&h_r);
        self.update_with(z.innovation(&pred), &h, q)
    }

    /// Robot `pair.0` measures range and bearing of robot `pair.1`.
    pub fn update_mutual(
        &self,
        pair: (usize, usize),
        z: &Measurement,
        q: &Matrix2<f64>,
    ) -> Result<JointBelief, BeliefError> {
        let (r, rp) = pair;
        if r == rp {
            return Err(BeliefError::SameRobot(r));
        }
        self.check_index(r)?;
        self.check_index(rp)?;
        let (pred, h6) = mutual_model(&self.means[r], &self.means[rp])?;
        let mut h = DMatrix::zeros(2, 3 * self.robots());
        h.fixed_view_mut::<2, 3>(0, 3 * r)
            .copy_from(&h6.fixed_view::<2, 3>(0, 0));
        h.fixed_view_mut::<2, 3>(0, 3 * rp)
            .copy_from(&h6.fixed_view::<2, 3>(0, 3));
        self.update_with(z.innovation(&pred), &h, q)
    }
}

/// Noise-free mutual measurement between two true poses, tagged with the
/// robot indices.
pub fn nominal_mutual(p_r: &Pose, p_rp: &Pose, pair: (usize, usize)) -> Result<Measurement, BeliefError> {
    let (mut z, _) = mutual_model(p_r, p_rp)?;
    z.source = MeasurementSource::Robots(pair.0, pair.1);
    Ok(z)
}
