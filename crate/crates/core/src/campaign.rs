//! Seeded Monte Carlo campaigns and statistical post-processing.
//!
//! A campaign repeats independent estimation runs (each on its own RNG
//! stream of the campaign seed), aggregates per-round covariance and
//! resource samples, counts containment failures, and feeds the plateau,
//! correlation, error-rate and noise-crossover analyses. Flagged runs
//! (stalled or degenerate) are excluded from fits but reported.

use std::io::Write;

use rayon::prelude::*;

use crate::bayes::CovarianceMatrix;
use crate::protocol::{run_estimation, RunConfig, RunOutcome};
use crate::{Error, Result};

/// Per-round samples across the unflagged runs of a campaign.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoundSamples {
    /// Cumulative resources at round end, one entry per run.
    pub resources: Vec<u64>,
    /// Covariance at round end, one entry per run.
    pub covariances: Vec<CovarianceMatrix>,
    /// Measurements spent in the round, one entry per run.
    pub measurements: Vec<usize>,
    /// Runs whose truth fell outside the cut hypercube this round.
    pub containment_failures: usize,
}

/// Aggregates over the repeated runs of one campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignStats {
    pub d: usize,
    pub epsilon: f64,
    pub k_max: usize,
    pub gammas: Vec<f64>,
    /// Runs requested.
    pub repetitions: usize,
    /// Unflagged runs entering the statistics.
    pub n_sim: usize,
    /// Stalled or degenerate runs, excluded from fits.
    pub n_flagged: usize,
    /// Unflagged runs with at least one containment failure.
    pub n_err: usize,
    pub rounds: Vec<RoundSamples>,
}

impl CampaignStats {
    /// Aggregate statistics from already-executed runs in run order, e.g.
    /// outcomes re-read from persisted records files.
    pub fn from_outcomes<'a>(
        config: &RunConfig,
        outcomes: impl IntoIterator<Item = &'a RunOutcome>,
    ) -> crate::Result<CampaignStats> {
        config.validate()?;
        let mut stats = CampaignStats {
            d: config.d,
            epsilon: config.epsilon,
            k_max: config.k_max,
            gammas: config.noise.gammas().to_vec(),
            repetitions: 0,
            n_sim: 0,
            n_flagged: 0,
            n_err: 0,
            rounds: vec![RoundSamples::default(); config.k_max],
        };
        for outcome in outcomes {
            stats.absorb(outcome);
            stats.repetitions += 1;
        }
        Ok(stats)
    }

    /// Fold one run into the aggregates (in run-index order).
    fn absorb(&mut self, outcome: &RunOutcome) {
        if outcome.is_flagged() {
            self.n_flagged += 1;
            return;
        }
        self.n_sim += 1;
        if outcome.records.iter().any(|r| !r.truth_in_cube) {
            self.n_err += 1;
        }
        for (k, record) in outcome.records.iter().enumerate() {
            let slot = &mut self.rounds[k];
            slot.resources.push(record.cumulative_resources);
            slot.covariances.push(record.covariance.clone());
            slot.measurements.push(record.measurements);
            if !record.truth_in_cube {
                slot.containment_failures += 1;
            }
        }
    }
}

/// Run `repetitions` independent estimations and aggregate their samples.
///
/// Run `i` uses RNG stream `i` of `campaign_seed`, so results are
/// reproducible regardless of thread count and schedule.
pub fn run_campaign(
    config: &RunConfig,
    repetitions: usize,
    campaign_seed: u64,
) -> Result<CampaignStats> {
    if repetitions < 1 {
        return Err(Error::InvalidConfig(
            "campaign needs at least one repetition".into(),
        ));
    }
    config.validate()?;
    let outcomes: Vec<RunOutcome> = (0..repetitions)
        .into_par_iter()
        .map(|i| {
            let mut run_config = config.clone();
            run_config.seed = campaign_seed;
            run_config.stream = i as u64;
            run_estimation(&run_config)
        })
        .collect::<Result<Vec<_>>>()?;
    CampaignStats::from_outcomes(config, &outcomes)
}

/// A sample mean with dispersion, as reported by the plateau fits.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauFit {
    pub value: f64,
    pub std_dev: f64,
    pub samples: usize,
}

fn summarize(samples: &[f64]) -> Result<PlateauFit> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no samples to summarize".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok(PlateauFit {
        value: mean,
        std_dev: var.sqrt(),
        samples: samples.len(),
    })
}

fn tail_rounds_range(stats: &CampaignStats, tail_rounds: usize) -> Result<std::ops::Range<usize>> {
    if tail_rounds == 0 {
        return Err(Error::InvalidConfig("tail window must be nonempty".into()));
    }
    if stats.rounds.len() < tail_rounds {
        return Err(Error::InsufficientData(format!(
            "campaign has {} rounds, tail window needs {tail_rounds}",
            stats.rounds.len()
        )));
    }
    Ok(stats.rounds.len() - tail_rounds..stats.rounds.len())
}

/// The Heisenberg plateau constant: mean of `V_jj · N_T²` over the last
/// `tail_rounds` rounds, all unflagged runs, and all diagonal entries.
pub fn fit_heisenberg_constant(stats: &CampaignStats, tail_rounds: usize) -> Result<PlateauFit> {
    let range = tail_rounds_range(stats, tail_rounds)?;
    let mut samples = Vec::new();
    for k in range {
        let slot = &stats.rounds[k];
        for (n_t, cov) in slot.resources.iter().zip(slot.covariances.iter()) {
            let nt2 = (*n_t as f64).powi(2);
            for j in 0..stats.d {
                samples.push(cov.get(j, j) * nt2);
            }
        }
    }
    summarize(&samples)
}

/// Mean of `V_ij / √(V_ii V_jj)` over off-diagonal pairs, tail rounds, runs.
pub fn correlation_ratio(stats: &CampaignStats, tail_rounds: usize) -> Result<PlateauFit> {
    if stats.d < 2 {
        return Err(Error::NotApplicable(
            "correlation ratio is undefined for a single phase".into(),
        ));
    }
    let range = tail_rounds_range(stats, tail_rounds)?;
    let mut samples = Vec::new();
    for k in range {
        for cov in &stats.rounds[k].covariances {
            for i in 0..stats.d {
                for j in (i + 1)..stats.d {
                    let denom = (cov.get(i, i) * cov.get(j, j)).sqrt();
                    if denom > 0.0 {
                        samples.push(cov.get(i, j) / denom);
                    }
                }
            }
        }
    }
    summarize(&samples)
}

/// Mean of `nᵀ V n · N_T²` over the tail window — the plateau constant for
/// estimating the linear combination `n · θ`.
pub fn fit_combination_plateau(
    stats: &CampaignStats,
    tail_rounds: usize,
    n: &[f64],
) -> Result<PlateauFit> {
    let range = tail_rounds_range(stats, tail_rounds)?;
    let mut samples = Vec::new();
    for k in range {
        let slot = &stats.rounds[k];
        for (n_t, cov) in slot.resources.iter().zip(slot.covariances.iter()) {
            let combo = cov.linear_combination_variance(n)?;
            samples.push(combo * (*n_t as f64).powi(2));
        }
    }
    summarize(&samples)
}

/// Fraction of tail samples where the correlation strictly helps the
/// difference estimate: `(e_i - e_j)ᵀ V (e_i - e_j) < V_ii + V_jj`.
pub fn correlation_advantage_fraction(
    stats: &CampaignStats,
    tail_rounds: usize,
    i: usize,
    j: usize,
) -> Result<f64> {
    if i >= stats.d || j >= stats.d || i == j {
        return Err(Error::InvalidConfig(format!(
            "invalid pair ({i}, {j}) for d = {}",
            stats.d
        )));
    }
    let range = tail_rounds_range(stats, tail_rounds)?;
    let mut total = 0usize;
    let mut helped = 0usize;
    let mut n = vec![0.0; stats.d];
    n[i] = 1.0;
    n[j] = -1.0;
    for k in range {
        for cov in &stats.rounds[k].covariances {
            let combo = cov.linear_combination_variance(&n)?;
            total += 1;
            if combo < cov.get(i, i) + cov.get(j, j) {
                helped += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::InsufficientData("no tail samples".into()));
    }
    Ok(helped as f64 / total as f64)
}

/// Per-round error rate inferred from the run-level failure count.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRateEstimate {
    pub per_round: f64,
    pub delta: f64,
    /// Every run failed; the per-round rate saturates at 1.
    pub degenerate: bool,
}

/// Invert `1 - P_err,T = (1 - P_err)^k` for the per-round error rate, with
/// the uncertainty propagated from `ΔP_err,T = √N_err / N_sim`.
pub fn estimate_error_rate(n_err: usize, n_sim: usize, k: usize) -> Result<ErrorRateEstimate> {
    if n_sim < 1 {
        return Err(Error::InvalidConfig("need at least one run".into()));
    }
    if k < 1 {
        return Err(Error::InvalidConfig("need at least one round".into()));
    }
    if n_err > n_sim {
        return Err(Error::InvalidConfig(format!(
            "error count {n_err} exceeds run count {n_sim}"
        )));
    }
    let p_total = n_err as f64 / n_sim as f64;
    let delta_total = (n_err as f64).sqrt() / n_sim as f64;
    if n_err == n_sim {
        return Ok(ErrorRateEstimate {
            per_round: 1.0,
            delta: f64::INFINITY,
            degenerate: true,
        });
    }
    let inv_k = 1.0 / k as f64;
    let per_round = 1.0 - (1.0 - p_total).powf(inv_k);
    let derivative = inv_k * (1.0 - p_total).powf(inv_k - 1.0);
    Ok(ErrorRateEstimate {
        per_round,
        delta: derivative * delta_total,
        degenerate: false,
    })
}

/// Power-law fit of the error rate against the decision parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorModelFit {
    /// Prefactor of `c1 · ε^{c2}`.
    pub c1: f64,
    /// Exponent of `c1 · ε^{c2}`.
    pub c2: f64,
    /// Prefactor of the simpler linear model `c · ε`.
    pub linear_coefficient: f64,
}

/// Least-squares fit of `log P = log c1 + c2 log ε` over points with
/// positive rate, plus the through-origin linear coefficient.
pub fn fit_error_model(points: &[(f64, f64)]) -> Result<ErrorModelFit> {
    let positive: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(eps, p)| eps > 0.0 && p > 0.0)
        .collect();
    if positive.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "power-law fit needs at least 3 positive error rates, got {}",
            positive.len()
        )));
    }
    let n = positive.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(eps, p) in &positive {
        let x = eps.ln();
        let y = p.ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let c2 = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let c1 = ((sy - c2 * sx) / n).exp();

    let num: f64 = points.iter().map(|&(eps, p)| eps * p).sum();
    let den: f64 = points.iter().map(|&(eps, _)| eps * eps).sum();
    if den == 0.0 {
        return Err(Error::InsufficientData("all ε are zero".into()));
    }
    Ok(ErrorModelFit {
        c1,
        c2,
        linear_coefficient: num / den,
    })
}

/// Fitted single-phase Heisenberg constant as a function of the decision
/// parameter: `C_H = 3.13 + 2.50 ln(1/ε)`.
pub fn single_phase_heisenberg_constant(epsilon: f64) -> f64 {
    3.13 + 2.50 * (1.0 / epsilon).ln()
}

/// Fitted Heisenberg plateau constants `C_H^(d)(ε)` for `d = 1..3`.
pub fn heisenberg_reference_constant(d: usize, epsilon: f64) -> Result<f64> {
    let log = (1.0 / epsilon).ln();
    match d {
        1 => Ok(3.13 + 2.50 * log),
        2 => Ok(10.8 + 13.8 * log),
        3 => Ok(40.1 + 26.2 * log),
        _ => Err(Error::NotApplicable(format!(
            "no reference constant fitted for d = {d}"
        ))),
    }
}

/// Fitted linear prefactors of `P_err^(d)(ε) ≈ c · ε` for `d = 1..3`.
pub fn error_rate_reference_prefactor(d: usize) -> Result<f64> {
    match d {
        1 => Ok(0.94),
        2 => Ok(0.78),
        3 => Ok(0.58),
        _ => Err(Error::NotApplicable(format!(
            "no reference error prefactor fitted for d = {d}"
        ))),
    }
}

/// Plateau constants reported by earlier single-phase protocols, quoted for
/// comparison reports.
pub fn single_phase_reference_constants() -> [(&'static str, f64); 3] {
    [
        ("adaptive backward", 23.0),
        ("Gaussian forward", 22.0),
        ("nonadaptive forward", 40.5),
    ]
}

/// Variance of the sequential (one-phase-at-a-time) baseline for the linear
/// combination `n · θ` at a matched per-round error rate and equal resource
/// split: `V = C_H^(1)(P_err) d² Σ n_j² / N_T²` with
/// `C_H^(1)(P_err) = 3.13 + 2.50 ln(0.94 / P_err)`.
pub fn sequential_baseline_variance(
    d: usize,
    n: &[f64],
    p_err: f64,
    n_t: f64,
) -> Result<f64> {
    if d < 1 {
        return Err(Error::InvalidDimension { got: d, min: 1 });
    }
    if n.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: n.len(),
        });
    }
    if !(p_err > 0.0 && p_err < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "per-round error rate must lie in (0, 1), got {p_err}"
        )));
    }
    if n_t.is_nan() || n_t <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "total resources must be positive, got {n_t}"
        )));
    }
    let c1 = single_phase_heisenberg_constant(p_err / 0.94);
    let norm2: f64 = n.iter().map(|x| x * x).sum();
    Ok(c1 * (d * d) as f64 * norm2 / (n_t * n_t))
}

/// Piecewise scaling report of the covariance against resources under noise.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossoverReport {
    /// Resource scale `1/max_j Γ_j²` separating the two regimes.
    pub crossover_scale: f64,
    /// Log-log slope of `V_jj` vs `N_T` before the crossover (about -2 at
    /// the Heisenberg limit).
    pub early_slope: f64,
    /// Slope after the crossover (about -1 at shot noise).
    pub late_slope: f64,
    pub early_points: usize,
    pub late_points: usize,
    /// Largest `N_T · V_jj` sample in the late regime.
    pub max_late_nt_v: f64,
    /// True when the late regime still beats the shot-noise limit
    /// `V = 1/N_T`.
    pub sub_shot_noise: bool,
}

/// Fit the two scaling regimes of a noisy campaign: the per-round mean of
/// `V_jj` against the per-round mean of `N_T`, split at the crossover scale.
pub fn noise_crossover_analysis(stats: &CampaignStats) -> Result<CrossoverReport> {
    let max_gamma = stats.gammas.iter().fold(0.0f64, |a, &b| a.max(b));
    if max_gamma == 0.0 {
        return Err(Error::NotApplicable(
            "crossover analysis needs a campaign with dephasing".into(),
        ));
    }
    let crossover_scale = 1.0 / (max_gamma * max_gamma);

    let mut points = Vec::new(); // (mean N_T, mean V_jj) per round
    for slot in &stats.rounds {
        if slot.resources.is_empty() {
            continue;
        }
        let mean_nt = slot.resources.iter().map(|&n| n as f64).sum::<f64>()
            / slot.resources.len() as f64;
        let mut v_sum = 0.0;
        let mut v_count = 0usize;
        for cov in &slot.covariances {
            for j in 0..stats.d {
                v_sum += cov.get(j, j);
                v_count += 1;
            }
        }
        points.push((mean_nt, v_sum / v_count as f64));
    }

    let early: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(nt, _)| nt <= crossover_scale / 2.0)
        .collect();
    let late: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(nt, _)| nt >= 2.0 * crossover_scale)
        .collect();
    if early.len() < 2 || late.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 rounds on each side of the crossover, got {} early / {} late",
            early.len(),
            late.len()
        )));
    }
    let slope = |pts: &[(f64, f64)]| -> f64 {
        let n = pts.len() as f64;
        let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
        for &(nt, v) in pts {
            let x = nt.ln();
            let y = v.ln();
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    };

    let mut max_late_nt_v = 0.0f64;
    for slot in &stats.rounds {
        for (n_t, cov) in slot.resources.iter().zip(slot.covariances.iter()) {
            let nt = *n_t as f64;
            if nt < 2.0 * crossover_scale {
                continue;
            }
            for j in 0..stats.d {
                max_late_nt_v = max_late_nt_v.max(nt * cov.get(j, j));
            }
        }
    }

    Ok(CrossoverReport {
        crossover_scale,
        early_slope: slope(&early),
        late_slope: slope(&late),
        early_points: early.len(),
        late_points: late.len(),
        max_late_nt_v,
        sub_shot_noise: max_late_nt_v < 1.0,
    })
}

/// Emit the per-run, per-round samples as a plot-ready table:
/// `round n_t` followed by `V_ij·N_T²` for every pair `i <= j`.
pub fn write_samples_table<W: Write>(mut w: W, stats: &CampaignStats) -> Result<()> {
    let mut header = String::from("#columns round n_t");
    for i in 0..stats.d {
        for j in i..stats.d {
            header.push_str(&format!(" v{}{}_nt2", i + 1, j + 1));
        }
    }
    writeln!(w, "{header}")?;
    for (k, slot) in stats.rounds.iter().enumerate() {
        for (n_t, cov) in slot.resources.iter().zip(slot.covariances.iter()) {
            let nt2 = (*n_t as f64).powi(2);
            let mut line = format!("{k} {n_t}");
            for i in 0..stats.d {
                for j in i..stats.d {
                    line.push_str(&format!(" {}", cov.get(i, j) * nt2));
                }
            }
            writeln!(w, "{line}")?;
        }
    }
    Ok(())
}
