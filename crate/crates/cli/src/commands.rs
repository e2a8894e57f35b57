//! Subcommand implementations and artifact emission.
//!
//! Every artifact starts with `#`-prefixed metadata (tool version, the full
//! resolved configuration, seeds), enough to re-run the producing command
//! exactly. Campaign sample files additionally carry a config digest and a
//! summary line so an interrupted sweep can be resumed without recomputing
//! finished points.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use qmpe_core::campaign::{
    correlation_advantage_fraction, correlation_ratio, error_rate_reference_prefactor,
    estimate_error_rate, fit_combination_plateau, fit_error_model, fit_heisenberg_constant,
    run_campaign, sequential_baseline_variance, single_phase_reference_constants,
    write_samples_table, CampaignStats,
};
use qmpe_core::circuit::{
    hadamard_matrix, multiport_bs_matrix, noisy_outcome_probabilities,
    noon_outcome_probabilities, outcome_probabilities, simulate_circuit_probabilities,
    simulate_noisy_probabilities, CircuitSpec, NoiseModel, RegisterMode,
};
use qmpe_core::phase::wrap_to_pi;
use qmpe_core::protocol::{records, run_estimation_with_grid, RunConfig, ThetaChoice};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{self, CampaignPlan, FileConfig};
use crate::{CampaignArgs, CompareArgs, FitArgs, RunArgs, VerifyArgs};

const VERSION: &str = env!("CARGO_PKG_VERSION");

fn canonical_config(config: &RunConfig) -> String {
    let gammas = config
        .noise
        .gammas()
        .iter()
        .map(|g| g.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let theta = match &config.theta {
        ThetaChoice::Random => "random".to_string(),
        ThetaChoice::Fixed(p) => p
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(","),
    };
    format!(
        "d={} epsilon={} k_max={} grid_points={} m_max={} seed={} stream={} gammas={} theta={}",
        config.d,
        config.epsilon,
        config.k_max,
        config.grid_points,
        config.m_max,
        config.seed,
        config.stream,
        gammas,
        theta
    )
}

fn fnv_digest(text: &str) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in text.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}

pub fn run(out_dir: &Path, file: &FileConfig, args: &RunArgs) -> anyhow::Result<u8> {
    let config = config::resolve_run_config(file, args)?;
    let (outcome, grid) = run_estimation_with_grid(&config)?;

    let records_path = out_dir.join(format!("{}.records", args.label));
    let mut buf = Vec::new();
    {
        use std::io::Write;
        writeln!(buf, "#qmpe v{VERSION}")?;
        writeln!(buf, "#command run label={}", args.label)?;
    }
    records::write_records(&mut buf, &config, &outcome)?;
    fs::write(&records_path, &buf)
        .with_context(|| format!("cannot write {}", records_path.display()))?;

    if args.dump_grid {
        let grid_path = out_dir.join(format!("{}.grid.tsv", args.label));
        let mut buf = Vec::new();
        {
            use std::io::Write;
            writeln!(buf, "#qmpe v{VERSION}")?;
            writeln!(buf, "#command run label={} (final posterior)", args.label)?;
            writeln!(buf, "#config {}", canonical_config(&config))?;
            writeln!(buf, "#columns theta[d] density")?;
        }
        grid.write_table(&mut buf)?;
        fs::write(&grid_path, &buf)
            .with_context(|| format!("cannot write {}", grid_path.display()))?;
        println!("posterior grid written to {}", grid_path.display());
    }

    println!("run '{}': {}", args.label, canonical_config(&config));
    for record in &outcome.records {
        println!(
            "  round {:>2}: M={:<6} m_k={:<5} p_half={:<10.6} N_T={:<10} truth_in_C={}{}",
            record.k,
            record.gate_reps,
            record.measurements,
            record.p_half_final,
            record.cumulative_resources,
            record.truth_in_cube,
            if record.stalled { " STALLED" } else { "" }
        );
    }
    if let Some(last) = outcome.records.last() {
        let estimate = &last.estimate;
        println!("  final estimate:");
        for j in 0..config.d {
            let err = wrap_to_pi(estimate[j] - outcome.theta_true[j]).abs();
            println!(
                "    theta_{}: estimate {:.9} truth {:.9} |error| {:.3e}",
                j + 1,
                estimate[j],
                outcome.theta_true[j],
                err
            );
        }
        let diag: Vec<String> = last
            .covariance
            .diagonal()
            .iter()
            .map(|v| format!("{v:.3e}"))
            .collect();
        println!(
            "  covariance diagonal: [{}], total resources N_T = {}",
            diag.join(", "),
            last.cumulative_resources
        );
    }
    println!(
        "  diagnostics: max posterior-mass error {:.3e}, min covariance eigenvalue {:.3e}",
        outcome.diagnostics.max_mass_error, outcome.diagnostics.min_covariance_eigenvalue
    );
    if let Some(flag) = &outcome.flag {
        println!("  run aborted: {flag:?}");
    }
    println!("records written to {}", records_path.display());

    Ok(if outcome.is_flagged() { 1 } else { 0 })
}

struct CampaignSummary {
    epsilon: f64,
    n_sim: usize,
    n_flagged: usize,
    n_err: usize,
    c_h: f64,
    c_h_std: f64,
    corr: f64,
    corr_std: f64,
    p_err: f64,
    p_err_delta: f64,
}

fn summarize_stats(stats: &CampaignStats, tail_rounds: usize) -> CampaignSummary {
    let (c_h, c_h_std) = match fit_heisenberg_constant(stats, tail_rounds) {
        Ok(fit) => (fit.value, fit.std_dev),
        Err(_) => (f64::NAN, f64::NAN),
    };
    let (corr, corr_std) = match correlation_ratio(stats, tail_rounds) {
        Ok(fit) => (fit.value, fit.std_dev),
        Err(_) => (f64::NAN, f64::NAN),
    };
    let (p_err, p_err_delta) = match estimate_error_rate(stats.n_err, stats.n_sim, stats.k_max) {
        Ok(est) => (est.per_round, est.delta),
        Err(_) => (f64::NAN, f64::NAN),
    };
    CampaignSummary {
        epsilon: stats.epsilon,
        n_sim: stats.n_sim,
        n_flagged: stats.n_flagged,
        n_err: stats.n_err,
        c_h,
        c_h_std,
        corr,
        corr_std,
        p_err,
        p_err_delta,

    }
}

fn summary_line(s: &CampaignSummary) -> String {
    format!(
        "#summary epsilon={} n_sim={} n_flagged={} n_err={} c_h={} c_h_std={} corr={} \
         corr_std={} p_err={} p_err_delta={}",
        s.epsilon,
        s.n_sim,
        s.n_flagged,
        s.n_err,
        s.c_h,
        s.c_h_std,
        s.corr,
        s.corr_std,
        s.p_err,
        s.p_err_delta
    )
}

fn try_resume(path: &Path, digest: &str) -> Option<CampaignSummary> {
    let text = fs::read_to_string(path).ok()?;
    let mut digest_ok = false;
    let mut summary: Option<CampaignSummary> = None;
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        if let Some(found) = line.strip_prefix("#digest ") {
            digest_ok = found.trim() == digest;
        } else if let Some(kvs) = line.strip_prefix("#summary ") {
            let mut s = CampaignSummary {
                epsilon: f64::NAN,
                n_sim: 0,
                n_flagged: 0,
                n_err: 0,
                c_h: f64::NAN,
                c_h_std: f64::NAN,
                corr: f64::NAN,
                corr_std: f64::NAN,
                p_err: f64::NAN,
                p_err_delta: f64::NAN,

            };
            for kv in kvs.split_whitespace() {
                let (key, value) = kv.split_once('=')?;
                match key {
                    "epsilon" => s.epsilon = value.parse().ok()?,
                    "n_sim" => s.n_sim = value.parse().ok()?,
                    "n_flagged" => s.n_flagged = value.parse().ok()?,
                    "n_err" => s.n_err = value.parse().ok()?,
                    "c_h" => s.c_h = value.parse().ok()?,
                    "c_h_std" => s.c_h_std = value.parse().ok()?,
                    "corr" => s.corr = value.parse().ok()?,
                    "corr_std" => s.corr_std = value.parse().ok()?,
                    "p_err" => s.p_err = value.parse().ok()?,
                    "p_err_delta" => s.p_err_delta = value.parse().ok()?,
                    _ => return None,
                }
            }
            summary = Some(s);
        }
    }
    if digest_ok {
        summary
    } else {
        None
    }
}

pub fn campaign(out_dir: &Path, file: &FileConfig, args: &CampaignArgs) -> anyhow::Result<u8> {
    let plan: CampaignPlan = config::resolve_campaign(file, args)?;
    let mut summaries: Vec<CampaignSummary> = Vec::new();

    for &epsilon in &plan.epsilons {
        let mut cfg = plan.base.clone();
        cfg.epsilon = epsilon;
        cfg.validate()?;
        let samples_path = out_dir.join(format!("{}_eps{:e}.samples.tsv", plan.label, epsilon));
        let meta = format!(
            "{} repetitions={} tail_rounds={} campaign_seed={}",
            canonical_config(&cfg),
            plan.repetitions,
            plan.tail_rounds,
            plan.campaign_seed
        );
        let digest = fnv_digest(&meta);

        if let Some(summary) = try_resume(&samples_path, &digest) {
            println!(
                "epsilon={epsilon:e}: reusing completed point from {}",
                samples_path.display()
            );
            summaries.push(summary);
            continue;
        }

        let stats = run_campaign(&cfg, plan.repetitions, plan.campaign_seed)?;
        let summary = summarize_stats(&stats, plan.tail_rounds);

        let mut buf = Vec::new();
        {
            use std::io::Write;
            writeln!(buf, "#qmpe v{VERSION}")?;
            writeln!(buf, "#command campaign label={}", plan.label)?;
            writeln!(buf, "#config {meta}")?;
            writeln!(buf, "#digest {digest}")?;
            writeln!(buf, "{}", summary_line(&summary))?;
        }
        write_samples_table(&mut buf, &stats)?;
        fs::write(&samples_path, &buf)
            .with_context(|| format!("cannot write {}", samples_path.display()))?;

        println!(
            "epsilon={epsilon:e}: {} runs ({} flagged, {} with containment errors)",
            summary.n_sim, summary.n_flagged, summary.n_err
        );
        println!(
            "  plateau V*N_T^2 = {:.4} +- {:.4}, correlation ratio = {:.4} +- {:.4}",
            summary.c_h, summary.c_h_std, summary.corr, summary.corr_std
        );
        println!(
            "  per-round P_err = {:.6} +- {:.6}; samples in {}",
            summary.p_err,
            summary.p_err_delta,
            samples_path.display()
        );
        summaries.push(summary);
    }

    let heisenberg_path = out_dir.join(format!("{}.heisenberg.tsv", plan.label));
    let error_path = out_dir.join(format!("{}.error_rate.tsv", plan.label));
    let base_meta = format!(
        "{} repetitions={} tail_rounds={} campaign_seed={}",
        canonical_config(&plan.base),
        plan.repetitions,
        plan.tail_rounds,
        plan.campaign_seed
    );
    let mut heisenberg = String::new();
    let mut error_rate = String::new();
    for text in [&mut heisenberg, &mut error_rate] {
        writeln!(text, "#qmpe v{VERSION}").unwrap();
        writeln!(text, "#command campaign label={}", plan.label).unwrap();
        writeln!(text, "#config {base_meta} (epsilon swept)").unwrap();
    }
    writeln!(heisenberg, "#columns epsilon c_h c_h_std").unwrap();
    writeln!(error_rate, "#columns epsilon p_err p_err_delta").unwrap();
    for s in &summaries {
        writeln!(heisenberg, "{} {} {}", s.epsilon, s.c_h, s.c_h_std).unwrap();
        writeln!(error_rate, "{} {} {}", s.epsilon, s.p_err, s.p_err_delta).unwrap();
    }
    fs::write(&heisenberg_path, heisenberg)
        .with_context(|| format!("cannot write {}", heisenberg_path.display()))?;
    fs::write(&error_path, error_rate)
        .with_context(|| format!("cannot write {}", error_path.display()))?;
    println!(
        "summary tables: {} and {}",
        heisenberg_path.display(),
        error_path.display()
    );

    Ok(if summaries.iter().all(|s| s.n_sim == 0) {
        1
    } else {
        0
    })
}

fn read_table(path: &Path) -> anyhow::Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read table {}", path.display()))?;
    let mut points = Vec::new();
    for (number, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let parse = |token: Option<&str>| -> anyhow::Result<f64> {
            token
                .ok_or_else(|| anyhow::anyhow!("line {} has fewer than 2 columns", number + 1))?
                .parse()
                .with_context(|| format!("bad number on line {}", number + 1))
        };
        let x = parse(fields.next())?;
        let y = parse(fields.next())?;
        if x.is_finite() && y.is_finite() {
            points.push((x, y));
        }
    }
    Ok(points)
}

pub fn fit(args: &FitArgs) -> anyhow::Result<u8> {
    let points = read_table(&args.input)?;
    match args.model.as_str() {
        "error" => {
            let fit = fit_error_model(&points)?;
            println!(
                "power-law model: c1 = {:.6}, c2 = {:.6} (y = c1 * x^c2)",
                fit.c1, fit.c2
            );
            println!(
                "linear model:    c  = {:.6} (y = c * x)",
                fit.linear_coefficient
            );
        }
        "heisenberg" => {
            let usable: Vec<(f64, f64)> = points
                .iter()
                .copied()
                .filter(|&(x, _)| x > 0.0)
                .collect();
            if usable.len() < 2 {
                bail!("log model needs at least 2 points with positive x");
            }
            let n = usable.len() as f64;
            let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
            for &(eps, c) in &usable {
                let x = (1.0 / eps).ln();
                sx += x;
                sy += c;
                sxx += x * x;
                sxy += x * c;
            }
            let b = (n * sxy - sx * sy) / (n * sxx - sx * sx);
            let a = (sy - b * sx) / n;
            println!("log model: a = {a:.4}, b = {b:.4} (y = a + b ln(1/x))");
        }
        other => bail!("unknown model {other}"),
    }
    Ok(0)
}

pub fn compare(args: &CompareArgs) -> anyhow::Result<u8> {
    let combination = match &args.n {
        Some(n) => n.clone(),
        None => {
            if args.d < 2 {
                vec![1.0]
            } else {
                let mut n = vec![0.0; args.d];
                n[0] = 1.0;
                n[1] = -1.0;
                n
            }
        }
    };
    if combination.len() != args.d {
        bail!(
            "combination has {} coefficients but d = {}",
            combination.len(),
            args.d
        );
    }
    let prefactor = error_rate_reference_prefactor(args.d)?;
    let epsilon = args.p_err / prefactor;
    let mut cfg = RunConfig::new(args.d);
    cfg.epsilon = epsilon;
    cfg.k_max = args.k_max;
    cfg.seed = args.seed;
    cfg.validate()?;

    println!(
        "parallel vs sequential at matched per-round error rate {:e} (epsilon = {:e})",
        args.p_err, epsilon
    );
    let stats = run_campaign(&cfg, args.reps, args.seed)?;
    if stats.n_sim == 0 {
        println!("all {} runs flagged; no statistics", args.reps);
        return Ok(1);
    }
    let combo = fit_combination_plateau(&stats, args.tail, &combination)?;
    let sequential = sequential_baseline_variance(args.d, &combination, args.p_err, 1.0)?;
    let measured = estimate_error_rate(stats.n_err, stats.n_sim, stats.k_max)?;

    println!(
        "  combination n = {:?}, {} runs ({} flagged), measured P_err = {:.2e}",
        combination, stats.n_sim, stats.n_flagged, measured.per_round
    );
    println!(
        "  parallel   V_n * N_T^2 = {:.2} +- {:.2}  (measured plateau, tail {} rounds)",
        combo.value, combo.std_dev, args.tail
    );
    println!("  sequential V_n * N_T^2 = {sequential:.2}  (analytic baseline, equal split)");
    println!(
        "  advantage factor: {:.2}x",
        sequential / combo.value
    );
    if args.d >= 2 {
        let fraction = correlation_advantage_fraction(&stats, args.tail, 0, 1)?;
        println!(
            "  correlation inequality (1,-1)V(1,-1)^T < V_11 + V_22 holds in {:.1}% of tail samples",
            fraction * 100.0
        );
    }
    println!("  single-phase reference constants for context:");
    for (name, c_s) in single_phase_reference_constants() {
        println!("    {name:<20} C_s = {c_s}");
    }
    Ok(0)
}

struct Battery {
    name: &'static str,
    tolerance: f64,
    cases: usize,
    max_dev: f64,
    failing: Vec<u64>,
}

fn run_battery(
    name: &'static str,
    cases: usize,
    tolerance: f64,
    base_seed: u64,
    deviation: impl Fn(u64) -> f64,
) -> Battery {
    let mut max_dev = 0.0f64;
    let mut failing = Vec::new();
    for i in 0..cases {
        let case_seed = base_seed.wrapping_add(i as u64);
        let dev = deviation(case_seed);
        if !dev.is_finite() || dev > tolerance {
            failing.push(case_seed);
        }
        if dev.is_finite() {
            max_dev = max_dev.max(dev);
        } else {
            max_dev = f64::INFINITY;
        }
    }
    Battery {
        name,
        tolerance,
        cases,
        max_dev,
        failing,
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn verify(args: &VerifyArgs) -> anyhow::Result<u8> {
    if args.max_d < 1 {
        bail!("--max-d must be at least 1");
    }
    let max_d = args.max_d;
    let secondary = (args.cases / 5).max(20);

    let mut batteries = vec![
        run_battery(
            "closed form vs state-vector oracle",
            args.cases,
            1e-12,
            args.seed,
            |case_seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
                let d = rng.random_range(1..=max_d);
                let spec = CircuitSpec::random(&mut rng, d, 1 << 10);
                let closed = outcome_probabilities(&spec);
                let oracle =
                    simulate_circuit_probabilities(&spec, RegisterMode::Diagonal).unwrap();
                max_abs_diff(&closed, &oracle)
            },
        ),
        run_battery(
            "basis independence (conjugated oracle)",
            secondary,
            1e-10,
            args.seed.wrapping_add(1 << 32),
            |case_seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
                let d = rng.random_range(1..=max_d);
                let spec = CircuitSpec::random(&mut rng, d, 1 << 8);
                let diag =
                    simulate_circuit_probabilities(&spec, RegisterMode::Diagonal).unwrap();
                let conj = simulate_circuit_probabilities(
                    &spec,
                    RegisterMode::Conjugated { seed: case_seed },
                )
                .unwrap();
                max_abs_diff(&diag, &conj)
            },
        ),
        run_battery(
            "noisy closed form vs dephasing channel",
            secondary,
            1e-10,
            args.seed.wrapping_add(2 << 32),
            |case_seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
                let d = rng.random_range(1..=max_d);
                let spec = CircuitSpec::random(&mut rng, d, 64);
                let gammas: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..0.2)).collect();
                let noise = NoiseModel::new(gammas).unwrap();
                let closed = noisy_outcome_probabilities(&spec, &noise).unwrap();
                let oracle = simulate_noisy_probabilities(&spec, &noise).unwrap();
                max_abs_diff(&closed, &oracle)
            },
        ),
        run_battery(
            "NOON control-phase rescaling",
            secondary,
            1e-12,
            args.seed.wrapping_add(3 << 32),
            |case_seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
                let d = rng.random_range(1..=max_d);
                let spec = CircuitSpec::random(&mut rng, d, 1 << 10);
                let scaled: Vec<f64> = spec
                    .phi
                    .iter()
                    .map(|p| p / spec.gate_reps as f64)
                    .collect();
                let noon =
                    noon_outcome_probabilities(&spec.theta, &scaled, spec.gate_reps).unwrap();
                let circuit = outcome_probabilities(&spec);
                max_abs_diff(&noon, &circuit)
            },
        ),
        run_battery(
            "gate unitarity",
            32,
            1e-12,
            args.seed.wrapping_add(4 << 32),
            |case_seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
                let d = rng.random_range(1..=6);
                let gate = if rng.random::<bool>() {
                    hadamard_matrix(d).unwrap()
                } else {
                    multiport_bs_matrix(
                        d.min(3),
                        rng.random_range(0.0..std::f64::consts::TAU),
                    )
                    .unwrap()
                };
                gate.unitarity_deviation()
            },
        ),
    ];

    if args.inject_failure {
        batteries[0].max_dev = 1.0;
        batteries[0].failing.push(args.seed);
    }

    let mut failed = false;
    println!("{:<42} {:>7} {:>12} {:>8}  status", "battery", "cases", "max |dev|", "tol");
    for b in &batteries {
        let ok = b.failing.is_empty();
        failed |= !ok;
        println!(
            "{:<42} {:>7} {:>12.3e} {:>8.0e}  {}",
            b.name,
            b.cases,
            b.max_dev,
            b.tolerance,
            if ok { "ok" } else { "FAIL" }
        );
    }
    for b in &batteries {
        if !b.failing.is_empty() {
            let shown: Vec<String> = b.failing.iter().take(10).map(|s| s.to_string()).collect();
            println!(
                "failing case seeds for '{}': {}{}",
                b.name,
                shown.join(", "),
                if b.failing.len() > 10 { ", ..." } else { "" }
            );
        }
    }
    Ok(if failed { 3 } else { 0 })
}
