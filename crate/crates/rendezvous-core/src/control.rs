//! The consensus field and the two-loop rendezvous feedback.
//!
//! The outer loop is the standard linear consensus field
//! `f_i = Σ_{j∈N_i} a_ij (x_j − x_i)`, which would solve the problem if the
//! vehicles were single integrators. The inner loop turns that reference into
//! unicycle inputs using only its body-frame representation:
//!
//! ```text
//! u_i = ‖f_i‖ (f_i · b_x)        (project the degree-two reference on the heading)
//! ω_i = -k₁ (f_i · b_y)          (steer the heading toward the field)
//! ```
//!
//! Both inputs are smooth and vanish together on the rendezvous set. Because
//! the speed is homogeneous of degree two while the turn rate is degree one,
//! steering authority survives the approach to consensus.
//!
//! [`ccp_feedback_local`] is the actual law: it accepts nothing but weighted
//! body-frame displacements, so the locality requirement is enforced by
//! construction rather than by convention. [`ccp_feedback`] is the
//! simulation-side wrapper that assembles those measurements for an agent.

use nalgebra::Vector2;
use thiserror::Error;

use crate::digraph::{DiGraph, NodeId};
use crate::kinematics::{to_body_frame, ControlInput, SwarmState};

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("turn-rate gain k1 must be positive, got {0}")]
    NonPositiveGain(f64),
}

/// Validated feedback gains: `k1` plus the per-agent weight sums.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerParams {
    k1: f64,
    weight_sums: Vec<f64>,
}

impl ControllerParams {
    pub fn new(graph: &DiGraph, k1: f64) -> Result<Self, ControlError> {
        if !(k1 > 0.0) {
            return Err(ControlError::NonPositiveGain(k1));
        }
        let weight_sums = (1..=graph.node_count()).map(|i| graph.weight_sum(i)).collect();
        Ok(Self { k1, weight_sums })
    }

    pub fn k1(&self) -> f64 {
        self.k1
    }

    /// Sum of outgoing weights of agent `i`; zero for a sensorless agent.
    pub fn weight_sum(&self, i: NodeId) -> f64 {
        self.weight_sums[i - 1]
    }
}

/// Linear consensus field `f_i = Σ_{j∈N_i} a_ij (x_j − x_i)`, inertial frame.
pub fn consensus_field(i: NodeId, state: &SwarmState, graph: &DiGraph) -> Vector2<f64> {
    let xi = state.agent(i).position;
    graph
        .neighbors(i)
        .iter()
        .map(|&(j, a)| a * (state.agent(j).position - xi))
        .sum()
}

/// Degree-two reference `g_i = ‖f_i‖ f_i`, inertial frame.
pub fn g_field(i: NodeId, state: &SwarmState, graph: &DiGraph) -> Vector2<f64> {
    let f = consensus_field(i, state, graph);
    f.norm() * f
}

/// Weighted displacements of agent `i`'s neighbors in its own body frame.
///
/// This is exactly what the onboard sensor provides: `(a_ij, R_iᵀ(x_j − x_i))`
/// per sensed robot. Inertial positions and the heading never leave here.
pub fn body_frame_displacements(
    i: NodeId,
    state: &SwarmState,
    graph: &DiGraph,
) -> Vec<(f64, Vector2<f64>)> {
    let me = state.agent(i);
    graph
        .neighbors(i)
        .iter()
        .map(|&(j, a)| {
            (
                a,
                to_body_frame(state.agent(j).position - me.position, me.heading),
            )
        })
        .collect()
}

/// The rendezvous law, computed from body-frame measurements only.
///
/// An agent that senses nobody holds still: the field is the empty sum.
pub fn ccp_feedback_local(measurements: &[(f64, Vector2<f64>)], k1: f64) -> ControlInput {
    let field: Vector2<f64> = measurements.iter().map(|&(a, d)| a * d).sum();
    ControlInput {
        linear: field.norm() * field.x,
        angular: -k1 * field.y,
    }
}

/// Assemble agent `i`'s measurements and apply [`ccp_feedback_local`].
pub fn ccp_feedback(
    i: NodeId,
    state: &SwarmState,
    graph: &DiGraph,
    params: &ControllerParams,
) -> ControlInput {
    ccp_feedback_local(&body_frame_displacements(i, state, graph), params.k1())
}

/// Outer-loop reference model: velocity `ẋ_i = f_i` per agent.
pub fn single_integrator_field(positions: &[Vector2<f64>], graph: &DiGraph) -> Vec<Vector2<f64>> {
    (1..=graph.node_count())
        .map(|i| {
            graph
                .neighbors(i)
                .iter()
                .map(|&(j, a)| a * (positions[j - 1] - positions[i - 1]))
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::UnicycleState;
    use crate::presets::{five_robot_graph, table_initial_conditions};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn consensus_field_vanishes_at_a_common_point() {
        let g = five_robot_graph();
        let s = SwarmState::new(vec![UnicycleState::new(2.0, -3.0, 0.3); 5]);
        for i in 1..=5 {
            assert_eq!(consensus_field(i, &s, &g), Vector2::zeros());
        }
    }

    #[test]
    fn consensus_field_agent_five() {
        let g = five_robot_graph();
        let s = table_initial_conditions();
        let f5 = consensus_field(5, &s, &g);
        assert_abs_diff_eq!(f5, Vector2::new(-1.0, -0.5), epsilon = 1e-15);
    }

    #[test]
    fn feedback_vanishes_with_the_field() {
        let c = ccp_feedback_local(&[], 1.0);
        assert_eq!(c, ControlInput::default());
        // Two canceling measurements.
        let c = ccp_feedback_local(
            &[
                (1.0, Vector2::new(3.0, -2.0)),
                (1.0, Vector2::new(-3.0, 2.0)),
            ],
            5.0,
        );
        assert_eq!(c, ControlInput::default());
    }

    #[test]
    fn field_aligned_with_heading_gives_pure_thrust() {
        let c = ccp_feedback_local(&[(1.0, Vector2::new(0.7, 0.0))], 2.0);
        assert_abs_diff_eq!(c.linear, 0.49, epsilon = 1e-15);
        assert_eq!(c.angular, 0.0);
    }

    #[test]
    fn feedback_agent_five_at_start() {
        // Independent 20-digit evaluation of R(8π/5)ᵀ(-1, -0.5):
        //   body field = (0.16651126377262936, -1.1055650134826273)
        //   u = ‖f‖·(f·e₁) = 0.18616525240749867, ω = -k₁·(f·e₂) = 1.1055650134826273
        let g = five_robot_graph();
        let p = ControllerParams::new(&g, 1.0).unwrap();
        let s = table_initial_conditions();
        let c = ccp_feedback(5, &s, &g, &p);
        assert_abs_diff_eq!(c.linear, 0.18616525240749867, epsilon = 1e-15);
        assert_abs_diff_eq!(c.angular, 1.1055650134826273, epsilon = 1e-15);
    }

    #[test]
    fn g_field_examples() {
        let g = five_robot_graph();
        let mut s = table_initial_conditions();
        // Place agent 5 so that f_5 = 0.05·(x_2 - x_5) = (3, 4) scaled: pick x_5 = x_2 - (60, 80).
        s.agents[4].position = s.agents[1].position - Vector2::new(60.0, 80.0);
        let gf = g_field(5, &s, &g);
        assert_abs_diff_eq!(gf, Vector2::new(15.0, 20.0), epsilon = 1e-12);
    }

    #[test]
    fn single_integrator_matches_consensus_field() {
        let g = five_robot_graph();
        let s = table_initial_conditions();
        let v = single_integrator_field(&s.positions(), &g);
        for i in 1..=5 {
            assert_eq!(v[i - 1], consensus_field(i, &s, &g));
        }
    }

    #[test]
    fn balanced_graph_preserves_centroid_velocity() {
        // Weight-symmetric graph: 1<->2 with equal weights. 1ᵀL = 0.
        let g = DiGraph::new(2, &[(1, 2, 0.7), (2, 1, 0.7)]).unwrap();
        let positions = vec![Vector2::new(0.0, 0.0), Vector2::new(4.0, -2.0)];
        let v = single_integrator_field(&positions, &g);
        assert_abs_diff_eq!(v[0] + v[1], Vector2::zeros(), epsilon = 1e-15);
    }

    #[test]
    fn params_reject_bad_gain() {
        let g = five_robot_graph();
        assert_eq!(
            ControllerParams::new(&g, 0.0),
            Err(ControlError::NonPositiveGain(0.0))
        );
        let p = ControllerParams::new(&g, 1.0).unwrap();
        assert_abs_diff_eq!(p.weight_sum(1), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(p.weight_sum(5), 0.05, epsilon = 1e-15);
    }

    proptest! {
        /// Homogeneity: scaling every position scales the field linearly.
        #[test]
        fn consensus_field_is_linear_in_positions(
            xs in proptest::collection::vec((-50.0..50.0f64, -50.0..50.0f64), 5),
            lambda in 0.01..100.0f64,
        ) {
            let g = five_robot_graph();
            let base = SwarmState::new(
                xs.iter().map(|&(x, y)| UnicycleState::new(x, y, 0.0)).collect());
            let scaled = SwarmState::new(
                xs.iter().map(|&(x, y)| UnicycleState::new(lambda * x, lambda * y, 0.0)).collect());
            for i in 1..=5 {
                let a = consensus_field(i, &scaled, &g);
                let b = lambda * consensus_field(i, &base, &g);
                prop_assert!((a - b).norm() <= 1e-10 * b.norm().max(1.0));
            }
        }

        /// ω = -k₁‖f‖ sin φ, with φ the angle from the heading to the field.
        #[test]
        fn turn_rate_matches_sine_form(
            fx in -10.0..10.0f64, fy in -10.0..10.0f64, theta in -7.0..7.0f64, k1 in 0.01..10.0f64
        ) {
            let f = Vector2::new(fx, fy);
            prop_assume!(f.norm() > 1e-6);
            let measurement = to_body_frame(f, theta);
            let c = ccp_feedback_local(&[(1.0, measurement)], k1);
            let phi = f.y.atan2(f.x) - theta;
            let expected = -k1 * f.norm() * phi.sin();
            prop_assert!((c.angular - expected).abs() < 1e-9 * f.norm().max(1.0));
        }

        /// The feedback reads only body-frame quantities, so a rigid motion
        /// applied to every position and heading leaves it unchanged.
        #[test]
        fn feedback_is_rigid_motion_invariant(
            xs in proptest::collection::vec((-20.0..20.0f64, -20.0..20.0f64, -3.0..3.0f64), 5),
            rot in -3.0..3.0f64, tx in -40.0..40.0f64, ty in -40.0..40.0f64,
        ) {
            let g = five_robot_graph();
            let p = ControllerParams::new(&g, 1.0).unwrap();
            let base = SwarmState::new(
                xs.iter().map(|&(x, y, h)| UnicycleState::new(x, y, h)).collect());
            let q = crate::kinematics::rotation(rot);
            let t = Vector2::new(tx, ty);
            let moved = SwarmState::new(
                base.agents.iter()
                    .map(|a| UnicycleState {
                        position: q * a.position + t,
                        heading: a.heading + rot,
                    })
                    .collect());
            for i in 1..=5 {
                let a = ccp_feedback(i, &base, &g, &p);
                let b = ccp_feedback(i, &moved, &g, &p);
                prop_assert!((a.linear - b.linear).abs() < 1e-9);
                prop_assert!((a.angular - b.angular).abs() < 1e-9);
            }
        }
    }
}
