//! Deterministic fixed-step integration of the closed-loop ensemble.
//!
//! A scenario couples a graph, initial poses, gains, and integration settings.
//! The stepper is classic RK4 at a fixed `dt`: the closed-loop field is smooth
//! and a fixed grid keeps runs bit-reproducible, which adaptive steppers would
//! not. Control inputs are re-evaluated at every RK4 stage from body-frame
//! displacements only.
//!
//! Runs stream samples to an observer; [`run`] records a decimated
//! [`Trajectory`], and the certificate machinery hooks the same stream to
//! difference Lyapunov values without storing long trajectories. A run stops
//! early once the ensemble diameter stays below the rendezvous tolerance for
//! 100 consecutive steps, so a transient crossing never counts as arrival.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::control::{ccp_feedback_local, ControlError, ControllerParams};
use crate::digraph::DiGraph;
use crate::kinematics::{ControlInput, SwarmState, UnicycleState};

/// Steps the rendezvous tolerance must hold before a run counts as arrived.
pub const SETTLE_WINDOW: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("time step must be positive, got {0}")]
    BadTimeStep(f64),
    #[error("horizon t_end = {t_end} shorter than one step dt = {dt}")]
    BadHorizon { t_end: f64, dt: f64 },
    #[error("rendezvous tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("record_every must be at least 1")]
    BadRecordStride,
    #[error("scenario has {agents} agents but the graph has {nodes} nodes")]
    AgentCountMismatch { agents: usize, nodes: usize },
    #[error("non-finite state for agent {agent} at t = {t}")]
    NonFiniteState { t: f64, agent: usize },
}

/// Which feedback drives the ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Controller {
    /// Two-loop rendezvous feedback on unicycle dynamics.
    Ccp,
    /// Outer-loop reference model: `ẋ_i = f_i`, headings frozen.
    SingleIntegrator,
}

/// Immutable description of one simulation run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub graph: DiGraph,
    pub initial: SwarmState,
    pub params: ControllerParams,
    pub controller: Controller,
    /// Step size, seconds.
    pub dt: f64,
    /// Horizon, seconds.
    pub t_end: f64,
    /// Ensemble diameter below which the group counts as met, meters.
    pub rendezvous_tol: f64,
    /// Keep every k-th sample in the recorded trajectory (every step still
    /// runs and feeds the arrival detector).
    pub record_every: usize,
}

impl Scenario {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        graph: DiGraph,
        initial: SwarmState,
        params: ControllerParams,
        controller: Controller,
        dt: f64,
        t_end: f64,
        rendezvous_tol: f64,
        record_every: usize,
    ) -> Result<Self, SimError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(SimError::BadTimeStep(dt));
        }
        if !(t_end >= dt) || !t_end.is_finite() {
            return Err(SimError::BadHorizon { t_end, dt });
        }
        if !(rendezvous_tol > 0.0) {
            return Err(SimError::BadTolerance(rendezvous_tol));
        }
        if record_every == 0 {
            return Err(SimError::BadRecordStride);
        }
        if initial.n() != graph.node_count() {
            return Err(SimError::AgentCountMismatch {
                agents: initial.n(),
                nodes: graph.node_count(),
            });
        }
        Ok(Self {
            graph,
            initial,
            params,
            controller,
            dt,
            t_end,
            rendezvous_tol,
            record_every,
        })
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round().max(1.0) as usize
    }

    /// Same scenario with a different turn-rate gain.
    pub fn with_k1(&self, k1: f64) -> Result<Self, ControlError> {
        let params = ControllerParams::new(&self.graph, k1)?;
        Ok(Self {
            params,
            ..self.clone()
        })
    }

    /// Same scenario with different initial poses.
    pub fn with_initial(&self, initial: SwarmState) -> Result<Self, SimError> {
        if initial.n() != self.graph.node_count() {
            return Err(SimError::AgentCountMismatch {
                agents: initial.n(),
                nodes: self.graph.node_count(),
            });
        }
        Ok(Self {
            initial,
            ..self.clone()
        })
    }
}

/// Largest pairwise distance in the ensemble; zero exactly on the meeting set.
pub fn diameter(state: &SwarmState) -> f64 {
    let mut max_sq: f64 = 0.0;
    for i in 0..state.agents.len() {
        for j in (i + 1)..state.agents.len() {
            let d = state.agents[j].position - state.agents[i].position;
            max_sq = max_sq.max(d.norm_squared());
        }
    }
    max_sq.sqrt()
}

/// Outcome of a run, independent of how densely it was recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    /// Whether the diameter stayed below tolerance for the full settle window.
    pub converged: bool,
    /// Start of the sustained in-tolerance window, seconds.
    pub settle_time: Option<f64>,
    pub final_diameter: f64,
    pub max_diameter: f64,
    /// Steps actually taken (early stop can cut the horizon short).
    pub steps_taken: usize,
}

/// Recorded run: decimated samples plus the run summary.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SwarmState>,
    pub inputs: Vec<Vec<ControlInput>>,
    pub diameters: Vec<f64>,
    pub summary: RunSummary,
}

struct Buffers {
    dx: [Vec<Vector2<f64>>; 4],
    dth: [Vec<f64>; 4],
    stage: SwarmState,
    measurements: Vec<(f64, Vector2<f64>)>,
    inputs: Vec<ControlInput>,
}

impl Buffers {
    fn new(n: usize, initial: &SwarmState) -> Self {
        Self {
            dx: std::array::from_fn(|_| vec![Vector2::zeros(); n]),
            dth: std::array::from_fn(|_| vec![0.0; n]),
            stage: initial.clone(),
            measurements: Vec::new(),
            inputs: vec![ControlInput::default(); n],
        }
    }
}

/// Closed-loop derivative at `state`; fills `dx`/`dth` and, when asked, the
/// per-agent inputs. Feedback sees body-frame displacements only.
fn eval_derivative(
    sc: &Scenario,
    state: &SwarmState,
    dx: &mut [Vector2<f64>],
    dth: &mut [f64],
    measurements: &mut Vec<(f64, Vector2<f64>)>,
    mut inputs: Option<&mut [ControlInput]>,
) {
    let n = state.n();
    match sc.controller {
        Controller::Ccp => {
            for i in 1..=n {
                let me = &state.agents[i - 1];
                measurements.clear();
                let (sin_h, cos_h) = me.heading.sin_cos();
                for &(j, a) in sc.graph.neighbors(i) {
                    let d = state.agents[j - 1].position - me.position;
                    // Body frame without building a matrix.
                    measurements.push((
                        a,
                        Vector2::new(cos_h * d.x + sin_h * d.y, -sin_h * d.x + cos_h * d.y),
                    ));
                }
                let input = ccp_feedback_local(measurements, sc.params.k1());
                dx[i - 1] = Vector2::new(input.linear * cos_h, input.linear * sin_h);
                dth[i - 1] = input.angular;
                if let Some(out) = inputs.as_deref_mut() {
                    out[i - 1] = input;
                }
            }
        }
        Controller::SingleIntegrator => {
            for i in 1..=n {
                let xi = state.agents[i - 1].position;
                let mut f = Vector2::zeros();
                for &(j, a) in sc.graph.neighbors(i) {
                    f += a * (state.agents[j - 1].position - xi);
                }
                dx[i - 1] = f;
                dth[i - 1] = 0.0;
                if let Some(out) = inputs.as_deref_mut() {
                    out[i - 1] = ControlInput {
                        linear: f.norm(),
                        angular: 0.0,
                    };
                }
            }
        }
    }
}

fn write_stage(base: &SwarmState, dx: &[Vector2<f64>], dth: &[f64], h: f64, out: &mut SwarmState) {
    for (k, agent) in out.agents.iter_mut().enumerate() {
        agent.position = base.agents[k].position + h * dx[k];
        agent.heading = base.agents[k].heading + h * dth[k];
    }
}

fn rk4_advance(sc: &Scenario, state: &mut SwarmState, bufs: &mut Buffers) {
    let dt = sc.dt;
    let (d1x, rest) = bufs.dx.split_at_mut(1);
    let (d2x, rest2) = rest.split_at_mut(1);
    let (d3x, d4x) = rest2.split_at_mut(1);
    let (d1t, restt) = bufs.dth.split_at_mut(1);
    let (d2t, restt2) = restt.split_at_mut(1);
    let (d3t, d4t) = restt2.split_at_mut(1);

    // Stage 1 was already evaluated into d1 by the caller.
    write_stage(state, &d1x[0], &d1t[0], dt / 2.0, &mut bufs.stage);
    eval_derivative(sc, &bufs.stage, &mut d2x[0], &mut d2t[0], &mut bufs.measurements, None);
    write_stage(state, &d2x[0], &d2t[0], dt / 2.0, &mut bufs.stage);
    eval_derivative(sc, &bufs.stage, &mut d3x[0], &mut d3t[0], &mut bufs.measurements, None);
    write_stage(state, &d3x[0], &d3t[0], dt, &mut bufs.stage);
    eval_derivative(sc, &bufs.stage, &mut d4x[0], &mut d4t[0], &mut bufs.measurements, None);

    for (k, agent) in state.agents.iter_mut().enumerate() {
        agent.position +=
            dt / 6.0 * (d1x[0][k] + 2.0 * d2x[0][k] + 2.0 * d3x[0][k] + d4x[0][k]);
        agent.heading += dt / 6.0 * (d1t[0][k] + 2.0 * d2t[0][k] + 2.0 * d3t[0][k] + d4t[0][k]);
    }
}

fn check_finite(state: &SwarmState, t: f64) -> Result<(), SimError> {
    for (k, a) in state.agents.iter().enumerate() {
        if !(a.position.x.is_finite() && a.position.y.is_finite() && a.heading.is_finite()) {
            return Err(SimError::NonFiniteState { t, agent: k + 1 });
        }
    }
    Ok(())
}

/// One RK4 step of the coupled ensemble ODE.
pub fn step(state: &SwarmState, scenario: &Scenario) -> Result<SwarmState, SimError> {
    let mut bufs = Buffers::new(state.n(), state);
    let mut next = state.clone();
    {
        let (d1x, d1t) = (&mut bufs.dx[0], &mut bufs.dth[0]);
        eval_derivative(scenario, state, d1x, d1t, &mut bufs.measurements, None);
    }
    rk4_advance(scenario, &mut next, &mut bufs);
    check_finite(&next, scenario.dt)?;
    Ok(next)
}

/// Run the scenario, streaming every sample `(t, state, inputs, diameter)` to
/// the observer. Samples include `t = 0` and the final state.
pub fn run_observed<F>(scenario: &Scenario, mut observe: F) -> Result<RunSummary, SimError>
where
    F: FnMut(f64, &SwarmState, &[ControlInput], f64),
{
    if !scenario.graph.has_reverse_spanning_tree() {
        log::warn!(
            "sensing graph has no reverse directed spanning tree: no convergence guarantee"
        );
    }
    let n_steps = scenario.steps();
    let tol_sq = scenario.rendezvous_tol * scenario.rendezvous_tol;
    let mut state = scenario.initial.clone();
    let mut bufs = Buffers::new(state.n(), &state);

    let mut consec = 0usize;
    let mut converged = false;
    let mut settle_time = None;
    let mut max_diameter: f64 = 0.0;
    let mut k = 0usize;
    let mut final_diameter;

    loop {
        let t = k as f64 * scenario.dt;
        // Stage-1 derivative doubles as the recorded inputs for this sample.
        {
            let (d1x, d1t) = (&mut bufs.dx[0], &mut bufs.dth[0]);
            let inputs = &mut bufs.inputs;
            eval_derivative(scenario, &state, d1x, d1t, &mut bufs.measurements, Some(inputs));
        }
        let diam = diameter(&state);
        max_diameter = max_diameter.max(diam);
        final_diameter = diam;
        observe(t, &state, &bufs.inputs, diam);

        if diam * diam < tol_sq {
            consec += 1;
            if consec >= SETTLE_WINDOW {
                converged = true;
                settle_time = Some((k + 1 - SETTLE_WINDOW) as f64 * scenario.dt);
                break;
            }
        } else {
            consec = 0;
        }
        if k == n_steps {
            break;
        }

        rk4_advance(scenario, &mut state, &mut bufs);
        k += 1;
        check_finite(&state, k as f64 * scenario.dt)?;
    }

    Ok(RunSummary {
        converged,
        settle_time,
        final_diameter,
        max_diameter,
        steps_taken: k,
    })
}

/// Run the scenario and record a decimated trajectory.
///
/// Every step still runs and feeds the arrival detector; only the recording
/// is decimated. The final sample is always kept.
pub fn run(scenario: &Scenario) -> Result<Trajectory, SimError> {
    let stride = scenario.record_every;
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut inputs = Vec::new();
    let mut diameters = Vec::new();
    let mut sample_index = 0usize;
    // Off-stride samples land here so the final one survives.
    let mut tail: Option<(f64, SwarmState, Vec<ControlInput>, f64)> = None;

    let summary = run_observed(scenario, |t, state, input, diam| {
        if sample_index % stride == 0 {
            times.push(t);
            states.push(state.clone());
            inputs.push(input.to_vec());
            diameters.push(diam);
            tail = None;
        } else {
            match &mut tail {
                Some((tt, ts, ti, td)) => {
                    *tt = t;
                    ts.clone_from(state);
                    ti.clone_from_slice(input);
                    *td = diam;
                }
                None => tail = Some((t, state.clone(), input.to_vec(), diam)),
            }
        }
        sample_index += 1;
    })?;

    if let Some((t, s, i, d)) = tail {
        times.push(t);
        states.push(s);
        inputs.push(i);
        diameters.push(d);
    }
    Ok(Trajectory {
        times,
        states,
        inputs,
        diameters,
        summary,
    })
}

/// Seeded uniform initial poses: positions in `[-half_width, half_width]²`,
/// headings in `[-π, π)`.
pub fn random_swarm<R: Rng>(n: usize, half_width: f64, rng: &mut R) -> SwarmState {
    let agents = (0..n)
        .map(|_| {
            let x = rng.gen_range(-half_width..half_width);
            let y = rng.gen_range(-half_width..half_width);
            let heading = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            UnicycleState::new(x, y, heading)
        })
        .collect();
    SwarmState::new(agents)
}

/// Settings for a turn-rate gain sweep.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub k1_values: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    /// Half-width of the initial-position box, meters.
    pub ic_half_width: f64,
}

/// One row of the sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k1: f64,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_settle_time: Option<f64>,
}

/// Smallest swept gain that succeeded on every trial.
pub fn sweep_threshold(rows: &[SweepRow]) -> Option<f64> {
    rows.iter()
        .find(|r| r.successes == r.trials)
        .map(|r| r.k1)
}

fn sweep_trial(template: &Scenario, cfg: &SweepConfig, k1: f64, trial: usize) -> (bool, Option<f64>) {
    // Per-trial stream: identical initial poses across the whole grid, and
    // bit-identical results no matter how trials are scheduled.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(trial as u64 + 1);
    let initial = random_swarm(template.graph.node_count(), cfg.ic_half_width, &mut rng);
    let scenario = template
        .with_k1(k1)
        .expect("sweep grid validated positive")
        .with_initial(initial)
        .expect("swarm size matches template graph");
    match run_observed(&scenario, |_, _, _, _| {}) {
        Ok(summary) => (summary.converged, summary.settle_time),
        // A diverging trial counts as a failure, not a panic.
        Err(SimError::NonFiniteState { .. }) => (false, None),
        Err(e) => unreachable!("validated scenario cannot fail to start: {e}"),
    }
}

fn collect_rows(cfg: &SweepConfig, outcomes: Vec<(bool, Option<f64>)>) -> Vec<SweepRow> {
    cfg.k1_values
        .iter()
        .enumerate()
        .map(|(gi, &k1)| {
            let slice = &outcomes[gi * cfg.trials..(gi + 1) * cfg.trials];
            let successes = slice.iter().filter(|(ok, _)| *ok).count();
            let settles: Vec<f64> = slice.iter().filter_map(|(_, s)| *s).collect();
            SweepRow {
                k1,
                trials: cfg.trials,
                successes,
                success_rate: successes as f64 / cfg.trials as f64,
                mean_settle_time: (!settles.is_empty())
                    .then(|| settles.iter().sum::<f64>() / settles.len() as f64),
            }
        })
        .collect()
}

fn validate_grid(cfg: &SweepConfig) -> Result<(), ControlError> {
    for &k1 in &cfg.k1_values {
        if !(k1 > 0.0) {
            return Err(ControlError::NonPositiveGain(k1));
        }
    }
    Ok(())
}

/// Gain sweep over seeded random initial conditions, sequential.
pub fn k1_sweep_seq(template: &Scenario, cfg: &SweepConfig) -> Result<Vec<SweepRow>, ControlError> {
    validate_grid(cfg)?;
    let outcomes: Vec<_> = job_grid(cfg)
        .into_iter()
        .map(|(gi, trial)| sweep_trial(template, cfg, cfg.k1_values[gi], trial))
        .collect();
    Ok(collect_rows(cfg, outcomes))
}

/// Gain sweep over seeded random initial conditions; trials run in parallel
/// when the `parallel` feature is enabled, with identical output either way.
pub fn k1_sweep(template: &Scenario, cfg: &SweepConfig) -> Result<Vec<SweepRow>, ControlError> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        validate_grid(cfg)?;
        let outcomes: Vec<_> = job_grid(cfg)
            .into_par_iter()
            .map(|(gi, trial)| sweep_trial(template, cfg, cfg.k1_values[gi], trial))
            .collect();
        Ok(collect_rows(cfg, outcomes))
    }
    #[cfg(not(feature = "parallel"))]
    {
        k1_sweep_seq(template, cfg)
    }
}

fn job_grid(cfg: &SweepConfig) -> Vec<(usize, usize)> {
    (0..cfg.k1_values.len())
        .flat_map(|gi| (0..cfg.trials).map(move |t| (gi, t)))
        .collect()
}
