//! The multiround estimation protocol.
//!
//! Round `k` repeats the basic measurement with `M = 2^k` controlled-gate
//! applications (capped at `min_j ⌊1/Γ_j⌋` under dephasing), drawing fresh
//! uniform control phases for every measurement, until the posterior mass
//! inside the half-width hypercube exceeds `1 - ε`; the domain is then cut
//! and the next round begins. Each run owns a counter-seeded RNG stream, so
//! identical configurations reproduce bit-identical records.

pub mod records;

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bayes::{CovarianceMatrix, PosteriorGrid};
use crate::circuit::{noisy_outcome_probabilities, CircuitSpec, NoiseModel};
use crate::phase::{wrap_to_pi, PhasePoint};
use crate::{Error, Result};

/// Upper bound on rounds; keeps `2^k` comfortably inside `u64`.
pub const MAX_ROUNDS: usize = 40;

/// How the true phase vector is chosen for a simulated run.
#[derive(Debug, Clone, PartialEq)]
pub enum ThetaChoice {
    /// Draw uniformly from `[0, 2π)^d` with the run's RNG stream.
    Random,
    /// Use a fixed vector (wrapped to `[0, 2π)` at run start).
    Fixed(PhasePoint),
}

/// Full configuration of one estimation run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub d: usize,
    /// Decision parameter ε: a round ends once `P_half > 1 - ε`.
    pub epsilon: f64,
    pub k_max: usize,
    pub grid_points: usize,
    pub noise: NoiseModel,
    pub seed: u64,
    /// RNG stream index; campaigns give each run its own stream.
    pub stream: u64,
    /// Per-round measurement cap; reaching it marks the round stalled.
    pub m_max: usize,
    pub theta: ThetaChoice,
}

impl RunConfig {
    pub fn new(d: usize) -> Self {
        RunConfig {
            d,
            epsilon: 1e-3,
            k_max: 10,
            grid_points: Self::default_grid_points(d),
            noise: NoiseModel::noiseless(d),
            seed: 0,
            stream: 0,
            m_max: 1000,
            theta: ThetaChoice::Random,
        }
    }

    /// 64 points per axis up to d = 2, 32 beyond (memory grows as G^d).
    pub fn default_grid_points(d: usize) -> usize {
        if d >= 3 {
            32
        } else {
            64
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 1 {
            return Err(Error::InvalidDimension { got: self.d, min: 1 });
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "decision parameter must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        if self.k_max < 1 || self.k_max > MAX_ROUNDS {
            return Err(Error::InvalidConfig(format!(
                "k_max must lie in 1..={MAX_ROUNDS}, got {}",
                self.k_max
            )));
        }
        if self.grid_points < crate::bayes::MIN_GRID_POINTS {
            return Err(Error::Resolution {
                got: self.grid_points,
                min: crate::bayes::MIN_GRID_POINTS,
            });
        }
        if self.m_max < 1 {
            return Err(Error::InvalidConfig(
                "per-round measurement cap must be at least 1".into(),
            ));
        }
        if self.noise.dim() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: self.noise.dim(),
            });
        }
        if let ThetaChoice::Fixed(theta) = &self.theta {
            if theta.dim() != self.d {
                return Err(Error::DimensionMismatch {
                    expected: self.d,
                    got: theta.dim(),
                });
            }
        }
        Ok(())
    }
}

/// One measurement: the control phases used and the observed outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub control_phases: Vec<f64>,
    pub outcome: usize,
}

/// Everything observed in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub k: usize,
    /// Controlled-gate applications per measurement this round.
    pub gate_reps: u64,
    /// Measurements performed this round.
    pub measurements: usize,
    pub outcomes: Vec<Measurement>,
    /// Estimate at round end (domain center if the mean never resolved).
    pub estimate: PhasePoint,
    pub covariance: CovarianceMatrix,
    pub p_half_final: f64,
    /// Total resources `Σ m_k · M_k` through this round.
    pub cumulative_resources: u64,
    /// Diagnostic: does the hidden truth lie in the cut hypercube?
    pub truth_in_cube: bool,
    /// The measurement cap was reached before `P_half` cleared `1 - ε`.
    pub stalled: bool,
}

/// Why a run was aborted.
#[derive(Debug, Clone, PartialEq)]
pub enum RunFlag {
    DegenerateUpdate { round: usize },
    DegenerateCut { round: usize },
}

/// Numerical health counters accumulated over a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunDiagnostics {
    /// Largest deviation of the posterior mass from 1 seen after any
    /// update or cut.
    pub max_mass_error: f64,
    /// Smallest covariance eigenvalue seen at any round end.
    pub min_covariance_eigenvalue: f64,
}

impl Default for RunDiagnostics {
    fn default() -> Self {
        RunDiagnostics {
            max_mass_error: 0.0,
            min_covariance_eigenvalue: f64::INFINITY,
        }
    }
}

impl RunDiagnostics {
    fn record_mass(&mut self, mass: f64) {
        self.max_mass_error = self.max_mass_error.max((mass - 1.0).abs());
    }

    fn record_eigenvalue(&mut self, eigen: f64) {
        self.min_covariance_eigenvalue = self.min_covariance_eigenvalue.min(eigen);
    }
}

/// The result of one estimation run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub records: Vec<RoundRecord>,
    /// The hidden truth the run measured against.
    pub theta_true: PhasePoint,
    pub flag: Option<RunFlag>,
    pub diagnostics: RunDiagnostics,
}

impl RunOutcome {
    /// Aborted or contains stalled rounds; such runs are excluded from fits.
    pub fn is_flagged(&self) -> bool {
        self.flag.is_some() || self.records.iter().any(|r| r.stalled)
    }

    pub fn final_estimate(&self) -> Option<&PhasePoint> {
        self.records.last().map(|r| &r.estimate)
    }
}

/// Mutable state threaded through the rounds of one run.
#[derive(Debug, Clone)]
pub struct ProtocolState {
    pub grid: PosteriorGrid,
    pub rng: ChaCha8Rng,
    pub round: usize,
    pub resources: u64,
    pub theta_true: PhasePoint,
    /// Unwrapped image of the truth, fixed by the first cut's frame.
    pub truth_lift: Option<Vec<f64>>,
    pub diagnostics: RunDiagnostics,
}

impl ProtocolState {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(config.stream);
        let theta_true = match &config.theta {
            ThetaChoice::Random => PhasePoint::new(
                (0..config.d)
                    .map(|_| rng.random_range(0.0..TAU))
                    .collect(),
            ),
            ThetaChoice::Fixed(theta) => PhasePoint::wrapped(theta.as_slice().to_vec()),
        };
        Ok(ProtocolState {
            grid: PosteriorGrid::uniform(config.d, config.grid_points)?,
            rng,
            round: 0,
            resources: 0,
            theta_true,
            truth_lift: None,
            diagnostics: RunDiagnostics::default(),
        })
    }

    /// Containment of the hidden truth in the hypercube of half-width
    /// `π/2^{k+1}` around `center`: nearest-image distance in the first
    /// round, plain interval containment in the fixed lifted frame after.
    fn truth_in_cube(&self, center: &PhasePoint, round: usize) -> bool {
        let half = PI * 0.5f64.powi(round as i32 + 1);
        match &self.truth_lift {
            None => self
                .theta_true
                .iter()
                .zip(center.iter())
                .all(|(t, c)| wrap_to_pi(t - c).abs() <= half),
            Some(lift) => lift
                .iter()
                .zip(center.iter())
                .all(|(t, c)| (t - c).abs() <= half),
        }
    }
}

/// Controlled-gate applications used in round `k`: `2^k`, capped at
/// `min_j ⌊1/Γ_j⌋` (never below 1) when dephasing is present.
pub fn gate_reps_for_round(round: usize, noise: &NoiseModel) -> u64 {
    let ideal = 1u64 << round.min(MAX_ROUNDS);
    match noise.gate_rep_cap() {
        Some(cap) => ideal.min(cap),
        None => ideal,
    }
}

/// Draw one measurement outcome from the (possibly dephased) circuit
/// distribution at the true phases. Deterministic given the RNG state.
///
/// Panics if the inputs have mismatched dimensions; callers validate via
/// [`RunConfig::validate`].
pub fn sample_outcome<R: Rng>(
    rng: &mut R,
    theta_true: &PhasePoint,
    phi: &[f64],
    gate_reps: u64,
    noise: &NoiseModel,
) -> usize {
    let spec = CircuitSpec::new(theta_true.clone(), phi.to_vec(), gate_reps)
        .expect("valid sampling spec");
    let probs = noisy_outcome_probabilities(&spec, noise).expect("matching noise dimension");
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (o, &p) in probs.iter().enumerate() {
        acc += p.max(0.0);
        if u < acc {
            return o;
        }
    }
    probs.len() - 1
}

/// Execute one round: measure until `P_half > 1 - ε` (or the cap), then cut
/// the domain around the estimate.
pub fn run_round(state: &mut ProtocolState, config: &RunConfig) -> Result<RoundRecord> {
    let k = state.round;
    let gate_reps = gate_reps_for_round(k, &config.noise);
    let threshold = 1.0 - config.epsilon;
    let mut outcomes: Vec<Measurement> = Vec::new();
    let mut p_half = 0.0;
    let mut estimate: Option<PhasePoint> = None;
    let mut stalled = false;

    loop {
        if outcomes.len() >= config.m_max {
            stalled = true;
            break;
        }
        let phi: Vec<f64> = (0..=config.d)
            .map(|_| state.rng.random_range(0.0..TAU))
            .collect();
        let outcome = sample_outcome(&mut state.rng, &state.theta_true, &phi, gate_reps, &config.noise);
        state.grid.bayes_update(outcome, &phi, gate_reps, &config.noise)?;
        state.diagnostics.record_mass(state.grid.mass());
        outcomes.push(Measurement {
            control_phases: phi,
            outcome,
        });
        match state.grid.circular_mean() {
            Ok(mean) => {
                p_half = state.grid.p_half(&mean, k);
                estimate = Some(mean);
                if p_half > threshold {
                    break;
                }
            }
            // a posterior still flat along some axis has no mean yet;
            // keep measuring
            Err(Error::UndefinedMean { .. }) => {}
            Err(e) => return Err(e),
        }
    }

    let center = estimate.unwrap_or_else(|| state.grid.domain_center());
    let covariance = state.grid.covariance(&center);
    state
        .diagnostics
        .record_eigenvalue(covariance.min_eigenvalue());
    let truth_in_cube = state.truth_in_cube(&center, k);
    state.grid.cut_and_regrid(&center, k)?;
    state.diagnostics.record_mass(state.grid.mass());
    if state.truth_lift.is_none() {
        state.truth_lift = Some(
            state
                .theta_true
                .iter()
                .zip(center.iter())
                .map(|(t, c)| c + wrap_to_pi(t - c))
                .collect(),
        );
    }
    state.resources += outcomes.len() as u64 * gate_reps;
    state.round += 1;

    Ok(RoundRecord {
        k,
        gate_reps,
        measurements: outcomes.len(),
        outcomes,
        estimate: center,
        covariance,
        p_half_final: p_half,
        cumulative_resources: state.resources,
        truth_in_cube,
        stalled,
    })
}

/// Run the full protocol from the uniform prior for `k_max` rounds.
///
/// Degenerate updates or cuts abort the run and flag the outcome; other
/// errors (invalid configuration) are returned as `Err`.
pub fn run_estimation(config: &RunConfig) -> Result<RunOutcome> {
    run_estimation_with_grid(config).map(|(outcome, _)| outcome)
}

/// Like [`run_estimation`], additionally returning the posterior grid as it
/// stood when the run ended (after the final cut, or at the abort point).
pub fn run_estimation_with_grid(config: &RunConfig) -> Result<(RunOutcome, PosteriorGrid)> {
    let mut state = ProtocolState::new(config)?;
    let mut records = Vec::with_capacity(config.k_max);
    let mut flag = None;
    for _ in 0..config.k_max {
        match run_round(&mut state, config) {
            Ok(record) => records.push(record),
            Err(Error::DegenerateUpdate { .. }) => {
                flag = Some(RunFlag::DegenerateUpdate { round: state.round });
                break;
            }
            Err(Error::DegenerateCut) => {
                flag = Some(RunFlag::DegenerateCut { round: state.round });
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let outcome = RunOutcome {
        records,
        theta_true: state.theta_true,
        flag,
        diagnostics: state.diagnostics,
    };
    Ok((outcome, state.grid))
}

/// Total resources `Σ_k m_k · M_k` over the recorded rounds.
pub fn total_resources(records: &[RoundRecord]) -> u64 {
    records
        .iter()
        .map(|r| r.measurements as u64 * r.gate_reps)
        .sum()
}
