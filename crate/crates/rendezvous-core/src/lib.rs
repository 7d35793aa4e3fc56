//! Distributed rendezvous of kinematic unicycles over a directed sensing graph.
//!
//! A group of planar unicycles must meet at a common point using only onboard
//! measurements: each robot sees the relative displacement of the robots it
//! senses, expressed in its own body frame. The feedback implemented here is
//! smooth, time-independent, and needs no global frame and no orientation
//! exchange. Meeting from arbitrary initial conditions is possible exactly
//! when the sensing digraph contains a reverse directed spanning tree.
//!
//! The crate is organized around that story:
//!
//! - [`digraph`] — the sensing graph, its weighted Laplacian, strongly
//!   connected components, condensation DAG, and layer decomposition.
//! - [`kinematics`] — unicycle state, SO(2) handling, and the open-loop model.
//! - [`control`] — the linear consensus field and the two-loop rendezvous
//!   feedback built from body-frame measurements only.
//! - [`lyapunov`] — the coordinate change to consensus-error coordinates and
//!   numerical checks of the decrease certificates (gain vector, saturation
//!   constant, decay bound, derivative decomposition).
//! - [`sim`] — deterministic fixed-step RK4 integration of the closed loop,
//!   rendezvous metrics, and seeded gain sweeps.
//! - [`presets`] — the graphs and initial conditions used by the bundled
//!   scenarios, tests, and benches.
//!
//! Gain sweeps and Monte Carlo certificate sampling parallelize across runs
//! via rayon when the default `parallel` feature is enabled; results are
//! bit-identical to the sequential fallback because every trial derives its
//! own seeded stream.

pub mod control;
pub mod digraph;
pub mod kinematics;
pub mod lyapunov;
pub mod presets;
pub mod sim;

pub use control::{ccp_feedback, consensus_field, ControllerParams};
pub use digraph::{Condensation, DiGraph, GraphError, LayerDecomposition, NodeId};
pub use kinematics::{ControlInput, SwarmState, UnicycleState};
pub use lyapunov::CertificateGains;
pub use sim::{Controller, Scenario, Trajectory};
