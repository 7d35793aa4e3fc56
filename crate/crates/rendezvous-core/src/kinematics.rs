//! Unicycle state, planar rotations, and the open-loop model.
//!
//! Each vehicle carries a position in the inertial frame and a heading angle.
//! The attitude is stored as an unwrapped scalar and turned into a rotation
//! matrix on demand; SO(2) is one-dimensional so this is exact and drift-free.
//! The open loop is `ẋ = u·(cos θ, sin θ)`, `θ̇ = ω`: the velocity is pinned
//! to the heading axis, which is the whole difficulty of the problem.

use nalgebra::{Matrix2, Vector2};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StateError {
    #[error("agent {agent} out of range 1..={n}")]
    IndexOutOfRange { agent: usize, n: usize },
}

/// Rotation matrix for a heading angle.
pub fn rotation(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Skew matrix of a scalar turn rate, `[[0, -ω], [ω, 0]]`.
pub fn omega_cross(omega: f64) -> Matrix2<f64> {
    Matrix2::new(0.0, -omega, omega, 0.0)
}

/// Express an inertial-frame vector in the body frame of heading `theta`.
pub fn to_body_frame(v: Vector2<f64>, theta: f64) -> Vector2<f64> {
    let (s, c) = theta.sin_cos();
    Vector2::new(c * v.x + s * v.y, -s * v.x + c * v.y)
}

/// Wrap an angle to `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    t
}

/// Speed and turn-rate pair applied to one unicycle.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInput {
    /// Linear speed along the heading axis, m/s. May be negative.
    pub linear: f64,
    /// Turn rate, rad/s.
    pub angular: f64,
}

/// Pose of a single unicycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnicycleState {
    /// Position in the inertial frame, meters.
    pub position: Vector2<f64>,
    /// Heading angle, radians, unwrapped.
    pub heading: f64,
}

impl UnicycleState {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            position: Vector2::new(x, y),
            heading,
        }
    }

    pub fn rotation(&self) -> Matrix2<f64> {
        rotation(self.heading)
    }
}

/// Time derivative of one unicycle under a control input.
pub fn unicycle_derivative(state: &UnicycleState, input: &ControlInput) -> (Vector2<f64>, f64) {
    let (s, c) = state.heading.sin_cos();
    (Vector2::new(input.linear * c, input.linear * s), input.angular)
}

/// Poses of the whole group, ordered by agent label.
#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState {
    pub agents: Vec<UnicycleState>,
}

impl SwarmState {
    pub fn new(agents: Vec<UnicycleState>) -> Self {
        Self { agents }
    }

    pub fn n(&self) -> usize {
        self.agents.len()
    }

    /// Agent by 1-based label.
    pub fn agent(&self, i: usize) -> &UnicycleState {
        &self.agents[i - 1]
    }

    /// Displacement of agent `j` relative to agent `i`, `x_j - x_i`.
    pub fn relative_displacement(&self, i: usize, j: usize) -> Result<Vector2<f64>, StateError> {
        let n = self.n();
        for agent in [i, j] {
            if agent == 0 || agent > n {
                return Err(StateError::IndexOutOfRange { agent, n });
            }
        }
        Ok(self.agents[j - 1].position - self.agents[i - 1].position)
    }

    pub fn positions(&self) -> Vec<Vector2<f64>> {
        self.agents.iter().map(|a| a.position).collect()
    }

    /// Rotate every position by `angle` about the origin, translate by
    /// `translation`, and advance every heading by `angle`.
    pub fn rigid_motion(&self, angle: f64, translation: Vector2<f64>) -> SwarmState {
        let q = rotation(angle);
        SwarmState::new(
            self.agents
                .iter()
                .map(|a| UnicycleState {
                    position: q * a.position + translation,
                    heading: a.heading + angle,
                })
                .collect(),
        )
    }
}
