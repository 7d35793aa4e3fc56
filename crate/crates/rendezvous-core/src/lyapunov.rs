//! Consensus-error coordinates and numerical decrease certificates.
//!
//! The change of coordinates maps positions to per-agent errors
//! `X_i = f_i / A_i` (the weight-normalized consensus field) plus the total
//! position, which splits consensus from the group's location: the errors
//! vanish exactly on the meeting set when the graph contains a reverse
//! spanning tree. In these coordinates the certificate for a node set `B`
//! (one layer of the condensation) is
//!
//! ```text
//! V     = Σ_{i∈B} γ_i ‖X_i‖²          (weighted squared error)
//! W     = α √V + Σ_{i∈B} f̂_i·b_x      (adds the heading/field agreement)
//! ```
//!
//! with `γ` a positive left null vector of the rescaled-weight Laplacian on
//! `B` and `α` above twice the saturation constant `α★`. Along closed-loop
//! trajectories `W` must decrease at rate proportional to `V` once the turn
//! gain is large enough; this module computes `γ`, `α★`, the degree-three
//! decay bound `r`, the four-term split of `Ẋ`, and finite-differenced `Ẇ`
//! along recorded trajectories, so all of that can be checked numerically.

use nalgebra::{DMatrix, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::control;
use crate::digraph::{DiGraph, NodeId};
use crate::kinematics::{to_body_frame, SwarmState};
use crate::sim::Trajectory;

#[derive(Debug, Error, PartialEq)]
pub enum LyapunovError {
    #[error("node set admits no positive left null vector: {0}")]
    NoPositiveLeftNullVector(String),
    #[error("node sets are not a valid layer pair: {0}")]
    LayerMismatch(String),
    #[error("empty node set")]
    EmptyNodeSet,
}

/// Consensus-error coordinates of the whole ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusCoords {
    /// Per-agent error `X_i = f_i / A_i`; zero for an agent that senses nobody.
    pub error: Vec<Vector2<f64>>,
    /// Sum of all positions (the coordinate dropped from the stability story).
    pub position_sum: Vector2<f64>,
}

/// Map a swarm state to consensus-error coordinates.
pub fn consensus_coords(state: &SwarmState, graph: &DiGraph) -> ConsensusCoords {
    let error = (1..=graph.node_count())
        .map(|i| {
            let a = graph.weight_sum(i);
            if a > 0.0 {
                control::consensus_field(i, state, graph) / a
            } else {
                Vector2::zeros()
            }
        })
        .collect();
    let position_sum = state.agents.iter().map(|a| a.position).sum();
    ConsensusCoords {
        error,
        position_sum,
    }
}

/// Consensus field and speed reference of one agent, expressed from its error
/// coordinate, in both frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HattedFields {
    /// Consensus field `A_i X_i` (homogeneous of degree one in the error).
    pub field: Vector2<f64>,
    /// Speed reference `A_i² ‖X_i‖ X_i` (degree two).
    pub reference: Vector2<f64>,
    /// `field` in the agent's body frame.
    pub field_body: Vector2<f64>,
    /// `reference` in the agent's body frame.
    pub reference_body: Vector2<f64>,
}

/// Evaluate the lifted fields for one agent.
pub fn hatted_fields(error: Vector2<f64>, heading: f64, weight_sum: f64) -> HattedFields {
    let field = weight_sum * error;
    let reference = weight_sum * weight_sum * error.norm() * error;
    HattedFields {
        field,
        reference,
        field_body: to_body_frame(field, heading),
        reference_body: to_body_frame(reference, heading),
    }
}

/// Certificate constants for a node set `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateGains {
    /// The node set, sorted.
    pub nodes: Vec<NodeId>,
    /// Positive weights aligned with `nodes`, min-normalized to one per block.
    pub gamma: Vec<f64>,
    /// Saturation constant: supremum of the heading-aligned field sum on the
    /// unit level set of `V`.
    pub alpha_star: f64,
    /// Mixing parameter; the certificate needs `alpha > 2 * alpha_star`.
    pub alpha: f64,
}

impl CertificateGains {
    /// Compute gains for a node set, defaulting to `alpha = 3 α★`.
    pub fn for_node_set(graph: &DiGraph, nodes: &[NodeId]) -> Result<Self, LyapunovError> {
        let mut nodes = nodes.to_vec();
        nodes.sort_unstable();
        nodes.dedup();
        let gamma = gamma_vector(graph, &nodes)?;
        let alpha_star = alpha_star(graph, &nodes, &gamma);
        Ok(Self {
            alpha: 3.0 * alpha_star,
            nodes,
            gamma,
            alpha_star,
        })
    }

    /// Override the mixing parameter (must stay above `2 α★`).
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        debug_assert!(alpha > 2.0 * self.alpha_star);
        self.alpha = alpha;
        self
    }
}

/// Positive left null vector of the rescaled-weight matrix on `nodes`.
///
/// Edge weights are rescaled to `b_ij = a_ij / A_i²` and collected into the
/// negated Laplacian `M` of the subgraph induced on `nodes` (`M_ij = b_ij`,
/// `M_ii = -Σ_k b_ik`). The returned `γ > 0` satisfies `γᵀM = 0`. The node
/// set must split into strongly connected components with no edges between
/// them (true for every layer of a condensation); `γ` is then assembled one
/// block at a time, each block min-normalized to one.
pub fn gamma_vector(graph: &DiGraph, nodes: &[NodeId]) -> Result<Vec<f64>, LyapunovError> {
    if nodes.is_empty() {
        return Err(LyapunovError::EmptyNodeSet);
    }
    let index_of = |v: NodeId| nodes.binary_search(&v).ok();

    // Strongly connected components of the induced subgraph.
    let relabeled: Vec<(usize, usize, f64)> = nodes
        .iter()
        .enumerate()
        .flat_map(|(bi, &i)| {
            graph.neighbors(i).iter().filter_map(move |&(j, w)| {
                index_of(j).map(|bj| (bi + 1, bj + 1, w))
            })
        })
        .collect();
    let induced =
        DiGraph::new(nodes.len(), &relabeled).expect("induced subgraph inherits validity");
    let condensation = induced.condensation();

    // No edges may cross between components of the induced subgraph.
    if let Some(&(ci, cj)) = condensation.dag_edges.first() {
        let pick = |c: usize| nodes[condensation.components[c][0] - 1];
        return Err(LyapunovError::NoPositiveLeftNullVector(format!(
            "edge between strongly connected blocks containing nodes {} and {}",
            pick(ci),
            pick(cj)
        )));
    }

    let mut gamma = vec![0.0; nodes.len()];
    for block in &condensation.components {
        if block.len() == 1 {
            gamma[block[0] - 1] = 1.0;
            continue;
        }
        // Negated b-weight Laplacian restricted to the block.
        let m = block.len();
        let mut mat = DMatrix::zeros(m, m);
        for (r, &bi) in block.iter().enumerate() {
            let i = nodes[bi - 1];
            let a_i = graph.weight_sum(i);
            for &(j, w) in graph.neighbors(i) {
                if let Some(bj) = index_of(j) {
                    let c = block
                        .iter()
                        .position(|&b| b == bj + 1)
                        .expect("neighbor stays inside its block");
                    let b_ij = w / (a_i * a_i);
                    mat[(r, c)] += b_ij;
                    mat[(r, r)] -= b_ij;
                }
            }
        }
        let left_null = positive_left_null_vector(&mat)?;
        for (r, &bi) in block.iter().enumerate() {
            gamma[bi - 1] = left_null[r];
        }
    }
    Ok(gamma)
}

fn positive_left_null_vector(m: &DMatrix<f64>) -> Result<Vec<f64>, LyapunovError> {
    let svd = m.transpose().svd(true, true);
    let sigma = &svd.singular_values;
    let smax = sigma.iter().cloned().fold(0.0f64, f64::max).max(1e-300);
    let mut zero_count = 0;
    let mut zero_idx = 0;
    for (k, &s) in sigma.iter().enumerate() {
        if s < 1e-10 * smax {
            zero_count += 1;
            zero_idx = k;
        }
    }
    if zero_count != 1 {
        return Err(LyapunovError::NoPositiveLeftNullVector(format!(
            "null space has dimension {zero_count}, expected 1"
        )));
    }
    let v_t = svd.v_t.as_ref().expect("svd computed with vectors");
    let mut vec: Vec<f64> = v_t.row(zero_idx).iter().cloned().collect();
    let dominant = vec
        .iter()
        .cloned()
        .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
    if dominant < 0.0 {
        for x in &mut vec {
            *x = -*x;
        }
    }
    let max = vec.iter().cloned().fold(0.0f64, f64::max);
    let min = vec.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 1e-9 * max) {
        return Err(LyapunovError::NoPositiveLeftNullVector(format!(
            "left null vector is not strictly positive (min {min:.3e}, max {max:.3e})"
        )));
    }
    // Min-normalize to one.
    Ok(vec.iter().map(|x| x / min).collect())
}

/// Closed-form saturation constant `√(Σ_{i∈B} A_i² / γ_i)`.
///
/// The heading-aligned body field of agent `i` projects onto the forward axis
/// with value `A_i ‖X_i‖` at best; maximizing the sum subject to `V = 1` is a
/// Cauchy–Schwarz problem whose optimum is this square root.
pub fn alpha_star(graph: &DiGraph, nodes: &[NodeId], gamma: &[f64]) -> f64 {
    nodes
        .iter()
        .zip(gamma)
        .map(|(&i, &g)| {
            let a = graph.weight_sum(i);
            a * a / g
        })
        .sum::<f64>()
        .sqrt()
}

fn alpha_star_chunk(
    graph: &DiGraph,
    nodes: &[NodeId],
    gamma: &[f64],
    seed: u64,
    stream: u64,
    count: usize,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let weights: Vec<f64> = nodes.iter().map(|&i| graph.weight_sum(i)).collect();
    let mut best = 0.0f64;
    for _ in 0..count {
        let mut v = 0.0f64;
        let mut sum = 0.0f64;
        for (&a, &g) in weights.iter().zip(gamma) {
            let x = Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            v += g * x.norm_squared();
            sum += a * x.norm();
        }
        if v > 1e-300 {
            best = best.max(sum / v.sqrt());
        }
    }
    best
}

const ALPHA_STAR_CHUNK: usize = 8192;

/// Monte Carlo probe of the saturation supremum with headings aligned to the
/// per-agent errors. Never exceeds [`alpha_star`] and approaches it from
/// below as the sample count grows. Sequential.
pub fn alpha_star_sampled_seq(
    graph: &DiGraph,
    nodes: &[NodeId],
    gamma: &[f64],
    samples: usize,
    seed: u64,
) -> f64 {
    let chunks = samples.div_ceil(ALPHA_STAR_CHUNK);
    (0..chunks)
        .map(|c| {
            let count = ALPHA_STAR_CHUNK.min(samples - c * ALPHA_STAR_CHUNK);
            alpha_star_chunk(graph, nodes, gamma, seed, c as u64, count)
        })
        .fold(0.0, f64::max)
}

/// Monte Carlo probe of the saturation supremum; parallel over chunks when
/// the `parallel` feature is on, bit-identical to the sequential version.
pub fn alpha_star_sampled(
    graph: &DiGraph,
    nodes: &[NodeId],
    gamma: &[f64],
    samples: usize,
    seed: u64,
) -> f64 {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let chunks = samples.div_ceil(ALPHA_STAR_CHUNK);
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let count = ALPHA_STAR_CHUNK.min(samples - c * ALPHA_STAR_CHUNK);
                alpha_star_chunk(graph, nodes, gamma, seed, c as u64, count)
            })
            .reduce(|| 0.0, f64::max)
    }
    #[cfg(not(feature = "parallel"))]
    {
        alpha_star_sampled_seq(graph, nodes, gamma, samples, seed)
    }
}

/// One evaluation of the certificate functions.
#[derive(Debug, Clone)]
pub struct LyapunovSample {
    /// Weighted squared error `Σ γ_i ‖X_i‖²`.
    pub v: f64,
    /// `√V`.
    pub w_tran: f64,
    /// Heading/field agreement `Σ f̂_i·b_x`.
    pub w_rot: f64,
    /// `α·√V + W_rot`.
    pub w: f64,
    /// Lifted fields per node of the certificate set, in `nodes` order.
    pub agent_fields: Vec<HattedFields>,
}

/// Evaluate the certificate at explicit error coordinates and headings
/// (both indexed by agent, full length).
pub fn sample_certificate(
    errors: &[Vector2<f64>],
    headings: &[f64],
    graph: &DiGraph,
    gains: &CertificateGains,
) -> LyapunovSample {
    let mut v = 0.0;
    let mut w_rot = 0.0;
    let mut agent_fields = Vec::with_capacity(gains.nodes.len());
    for (&i, &g) in gains.nodes.iter().zip(&gains.gamma) {
        let x = errors[i - 1];
        let fields = hatted_fields(x, headings[i - 1], graph.weight_sum(i));
        v += g * x.norm_squared();
        w_rot += fields.field_body.x;
        agent_fields.push(fields);
    }
    let w_tran = v.sqrt();
    LyapunovSample {
        v,
        w_tran,
        w_rot,
        w: gains.alpha * w_tran + w_rot,
        agent_fields,
    }
}

/// Evaluate the certificate on a swarm state.
pub fn sample_certificate_state(
    state: &SwarmState,
    graph: &DiGraph,
    gains: &CertificateGains,
) -> LyapunovSample {
    let coords = consensus_coords(state, graph);
    let headings: Vec<f64> = state.agents.iter().map(|a| a.heading).collect();
    sample_certificate(&coords.error, &headings, graph, gains)
}

/// Scale-free errors `X_i / √V`, aligned with `gains.nodes`. Homogeneous of
/// degree zero: invariant under positive scaling of the errors.
pub fn normalized_errors(errors: &[Vector2<f64>], gains: &CertificateGains) -> Vec<Vector2<f64>> {
    let v: f64 = gains
        .nodes
        .iter()
        .zip(&gains.gamma)
        .map(|(&i, &g)| g * errors[i - 1].norm_squared())
        .sum();
    let scale = v.sqrt();
    gains
        .nodes
        .iter()
        .map(|&i| {
            if scale > 0.0 {
                errors[i - 1] / scale
            } else {
                Vector2::zeros()
            }
        })
        .collect()
}

/// The four-term split of one agent's error derivative.
///
/// `total()` reproduces the closed-loop `Ẋ_i`. `field` depends only on the
/// errors of the certificate set; `upstream` only on the states of the
/// already-converged set and vanishes with it; the two misalignment terms
/// vanish when every heading agrees with its own speed reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XdotTerms {
    /// Reference differences along sensing edges inside the set.
    pub field: Vector2<f64>,
    /// Heading/reference disagreement of the agent and its in-set neighbors.
    pub misalignment: Vector2<f64>,
    /// Own disagreement weighted by edges into the converged set.
    pub boundary_misalignment: Vector2<f64>,
    /// Forcing from the converged set's motion.
    pub upstream: Vector2<f64>,
}

impl XdotTerms {
    pub fn total(&self) -> Vector2<f64> {
        self.field + self.misalignment + self.boundary_misalignment + self.upstream
    }
}

/// Split `Ẋ_i` for every `i` in `b_nodes`, given the converged set `a_nodes`.
///
/// `a_nodes ∪ b_nodes` must be isolated (a cumulative layer set).
pub fn xdot_decomposition(
    state: &SwarmState,
    graph: &DiGraph,
    a_nodes: &[NodeId],
    b_nodes: &[NodeId],
) -> Result<Vec<XdotTerms>, LyapunovError> {
    let mut union: Vec<NodeId> = a_nodes.iter().chain(b_nodes).cloned().collect();
    union.sort_unstable();
    let dedup_len = {
        let mut u = union.clone();
        u.dedup();
        u.len()
    };
    if dedup_len != union.len() {
        return Err(LyapunovError::LayerMismatch(
            "converged and certificate sets overlap".into(),
        ));
    }
    if !graph.is_isolated(&union) {
        return Err(LyapunovError::LayerMismatch(format!(
            "union of node sets {union:?} has outgoing edges"
        )));
    }

    let coords = consensus_coords(state, graph);
    let n = graph.node_count();
    let mut fields: Vec<Option<HattedFields>> = vec![None; n];
    for &i in union.iter() {
        fields[i - 1] = Some(hatted_fields(
            coords.error[i - 1],
            state.agents[i - 1].heading,
            graph.weight_sum(i),
        ));
    }
    let in_a = membership(n, a_nodes);

    let heading_axis = |i: NodeId| {
        let (s, c) = state.agents[i - 1].heading.sin_cos();
        Vector2::new(c, s)
    };

    Ok(b_nodes
        .iter()
        .map(|&i| {
            let a_i = graph.weight_sum(i);
            if graph.neighbors(i).is_empty() {
                return XdotTerms {
                    field: Vector2::zeros(),
                    misalignment: Vector2::zeros(),
                    boundary_misalignment: Vector2::zeros(),
                    upstream: Vector2::zeros(),
                };
            }
            let fi = fields[i - 1].expect("members of B have fields");
            let hi = heading_axis(i);
            let mut field = Vector2::zeros();
            let mut misalignment = Vector2::zeros();
            let mut boundary = Vector2::zeros();
            let mut upstream = Vector2::zeros();
            for &(j, w) in graph.neighbors(i) {
                let fj = fields[j - 1].expect("neighbors stay inside the union");
                if in_a[j] {
                    field -= w * fi.reference;
                    boundary += w * (fi.reference - fi.reference_body.x * hi);
                    upstream += w * fj.reference_body.x * heading_axis(j);
                } else {
                    field += w * (fj.reference - fi.reference);
                    misalignment += w * ((fj.reference_body.x * heading_axis(j) - fj.reference)
                        - (fi.reference_body.x * hi - fi.reference));
                }
            }
            XdotTerms {
                field: field / a_i,
                misalignment: misalignment / a_i,
                boundary_misalignment: boundary / a_i,
                upstream: upstream / a_i,
            }
        })
        .collect())
}

fn membership(n: usize, nodes: &[NodeId]) -> Vec<bool> {
    let mut m = vec![false; n + 1];
    for &v in nodes {
        m[v] = true;
    }
    m
}

/// Degree-three decay bound `r(X_B)` from the certificate derivation.
///
/// Nonpositive everywhere once `γ` comes from [`gamma_vector`]; strictly
/// negative unless every lifted field in `B` agrees, which for valid layer
/// pairs forces them all to zero. Requires `a_nodes ∪ b_nodes` isolated.
pub fn decay_bound(
    errors: &[Vector2<f64>],
    graph: &DiGraph,
    a_nodes: &[NodeId],
    b_nodes: &[NodeId],
    gamma: &[f64],
) -> f64 {
    let n = graph.node_count();
    let in_a = membership(n, a_nodes);
    let in_b = membership(n, b_nodes);
    debug_assert!({
        let union: Vec<NodeId> = (1..=n).filter(|&v| in_a[v] || in_b[v]).collect();
        graph.is_isolated(&union)
    });

    let field = |i: NodeId| graph.weight_sum(i) * errors[i - 1];
    let mut r = 0.0;
    for (&i, &g) in b_nodes.iter().zip(gamma) {
        let a_i = graph.weight_sum(i);
        if a_i == 0.0 {
            continue;
        }
        let fi = field(i);
        let ni = fi.norm();
        for &(j, w) in graph.neighbors(i) {
            let b_ij = w / (a_i * a_i);
            if in_b[j] {
                let fj = field(j);
                let nj = fj.norm();
                r += g
                    * b_ij
                    * (-(2.0 / 3.0) * ni.powi(3) + 2.0 * nj * fj.dot(&fi)
                        - (4.0 / 3.0) * nj.powi(3));
            } else if in_a[j] {
                r -= 2.0 * g * b_ij * ni.powi(3);
            }
        }
    }
    r
}

/// Finite-differenced certificate derivative sample along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeSample {
    pub t: f64,
    pub v: f64,
    pub w: f64,
    /// Central difference of `W` over the recorded grid.
    pub dwdt: f64,
}

/// Difference `W` along a recorded trajectory (central, second order in the
/// recording stride). Returns one sample per interior recorded point.
pub fn wdot_along(
    traj: &Trajectory,
    graph: &DiGraph,
    gains: &CertificateGains,
) -> Vec<DerivativeSample> {
    let w: Vec<(f64, f64)> = traj
        .states
        .iter()
        .map(|s| {
            let sample = sample_certificate_state(s, graph, gains);
            (sample.w, sample.v)
        })
        .collect();
    (1..w.len().saturating_sub(1))
        .map(|k| DerivativeSample {
            t: traj.times[k],
            v: w[k].1,
            w: w[k].0,
            dwdt: (w[k + 1].0 - w[k - 1].0) / (traj.times[k + 1] - traj.times[k - 1]),
        })
        .collect()
}
