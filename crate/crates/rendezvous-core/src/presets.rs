//! Reference graphs and initial conditions shared by scenarios, tests, and
//! benches.

use crate::digraph::DiGraph;
use crate::kinematics::{SwarmState, UnicycleState};
use std::f64::consts::PI;

/// Five-robot sensing digraph used by the bundled demo scenario.
///
/// Edges (sensing direction): 1→2, 1→3, 2→4, 3→2, 4→3, 5→2; every gain 0.05.
/// The root component is the cycle {2,3,4}; robots 1 and 5 hang off it.
pub fn five_robot_graph() -> DiGraph {
    let w = 0.05;
    DiGraph::new(
        5,
        &[
            (1, 2, w),
            (1, 3, w),
            (2, 4, w),
            (3, 2, w),
            (4, 3, w),
            (5, 2, w),
        ],
    )
    .expect("static edge list is valid")
}

/// Initial poses for the five-robot demo: positions in meters, headings at
/// multiples of 2π/5.
pub fn table_initial_conditions() -> SwarmState {
    SwarmState::new(vec![
        UnicycleState::new(0.0, 10.0, 0.0),
        UnicycleState::new(-10.0, -10.0, 2.0 * PI / 5.0),
        UnicycleState::new(-50.0, 10.0, 4.0 * PI / 5.0),
        UnicycleState::new(-10.0, 0.0, 6.0 * PI / 5.0),
        UnicycleState::new(10.0, 0.0, 8.0 * PI / 5.0),
    ])
}

/// Eleven-node layered digraph with four strongly connected components.
///
/// Components: {1..5} (the root), {6,7,8}, {9}, {10,11}. Layer sets:
/// L₀ = {1..5}, L₁ = {9,10,11}, L₂ = {6,7,8}. Weights are 1/|N_i| so every
/// agent's weight sum is one.
pub fn layered_graph_11() -> DiGraph {
    let edges: [(usize, usize); 19] = [
        (1, 2),
        (2, 1),
        (1, 4),
        (4, 3),
        (3, 1),
        (4, 5),
        (5, 2),
        (6, 1),
        (7, 1),
        (7, 6),
        (6, 8),
        (8, 6),
        (8, 7),
        (6, 9),
        (8, 9),
        (9, 2),
        (10, 11),
        (11, 10),
        (10, 5),
    ];
    let mut deg = [0usize; 12];
    for &(i, _) in &edges {
        deg[i] += 1;
    }
    let weighted: Vec<(usize, usize, f64)> = edges
        .iter()
        .map(|&(i, j)| (i, j, 1.0 / deg[i] as f64))
        .collect();
    DiGraph::new(11, &weighted).expect("static edge list is valid")
}

/// Directed 3-cycle (1→3, 2→1, 3→2) with uniform gain, the root component of
/// [`five_robot_graph`] relabeled to 1..3.
pub fn three_cycle_graph(weight: f64) -> DiGraph {
    DiGraph::new(3, &[(1, 3, weight), (2, 1, weight), (3, 2, weight)])
        .expect("static edge list is valid")
}
