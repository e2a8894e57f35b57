//! Line-delimited text persistence for run records.
//!
//! A records file starts with `#`-prefixed header lines (format version,
//! the full resolved configuration, the resolved truth, run flag and
//! diagnostics), followed by one whitespace-separated line per round:
//!
//! ```text
//! k gate_reps m_k p_half n_t stalled truth_in_c theta_bar[d] cov[d*d] {phi[d+1] o}*m_k
//! ```
//!
//! Floats are printed in shortest round-trip form, so reading a file back
//! reproduces the records bit for bit.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::bayes::CovarianceMatrix;
use crate::circuit::NoiseModel;
use crate::phase::PhasePoint;
use crate::protocol::{
    Measurement, RoundRecord, RunConfig, RunDiagnostics, RunFlag, RunOutcome, ThetaChoice,
};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Write a run (configuration plus outcome) as a records file.
pub fn write_records<W: Write>(mut w: W, config: &RunConfig, outcome: &RunOutcome) -> Result<()> {
    writeln!(w, "#qmpe-records v{FORMAT_VERSION}")?;
    let gammas = config
        .noise
        .gammas()
        .iter()
        .map(|g| g.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let theta = match &config.theta {
        ThetaChoice::Random => "random".to_string(),
        ThetaChoice::Fixed(p) => join_floats(p.as_slice(), ","),
    };
    writeln!(
        w,
        "#config d={} epsilon={} k_max={} grid_points={} m_max={} seed={} stream={} gammas={} theta={}",
        config.d,
        config.epsilon,
        config.k_max,
        config.grid_points,
        config.m_max,
        config.seed,
        config.stream,
        gammas,
        theta
    )?;
    writeln!(w, "#theta_true {}", join_floats(outcome.theta_true.as_slice(), " "))?;
    let flag = match &outcome.flag {
        None => "none".to_string(),
        Some(RunFlag::DegenerateUpdate { round }) => format!("degenerate-update:{round}"),
        Some(RunFlag::DegenerateCut { round }) => format!("degenerate-cut:{round}"),
    };
    writeln!(w, "#flag {flag}")?;
    writeln!(
        w,
        "#diagnostics max_mass_error={} min_cov_eigenvalue={}",
        outcome.diagnostics.max_mass_error, outcome.diagnostics.min_covariance_eigenvalue
    )?;
    writeln!(
        w,
        "#columns k gate_reps m_k p_half n_t stalled truth_in_c theta_bar[d] cov[d*d] {{phi[d+1] o}}*m_k"
    )?;
    for record in &outcome.records {
        let mut line = String::new();
        write!(
            line,
            "{} {} {} {} {} {} {}",
            record.k,
            record.gate_reps,
            record.measurements,
            record.p_half_final,
            record.cumulative_resources,
            u8::from(record.stalled),
            u8::from(record.truth_in_cube)
        )
        .expect("write to string");
        for v in record.estimate.iter() {
            write!(line, " {v}").expect("write to string");
        }
        for v in record.covariance.entries() {
            write!(line, " {v}").expect("write to string");
        }
        for m in &record.outcomes {
            for p in &m.control_phases {
                write!(line, " {p}").expect("write to string");
            }
            write!(line, " {}", m.outcome).expect("write to string");
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Read a records file back into the configuration and outcome.
pub fn read_records<R: BufRead>(r: R) -> Result<(RunConfig, RunOutcome)> {
    let mut version_seen = false;
    let mut config: Option<RunConfig> = None;
    let mut theta_true: Option<PhasePoint> = None;
    let mut flag: Option<Option<RunFlag>> = None;
    let mut diagnostics = RunDiagnostics::default();
    let mut records = Vec::new();

    for line in r.lines() {
        let line = line?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(v) = rest.strip_prefix("qmpe-records v") {
                let v: u32 = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::ParseRecords(format!("bad version line: {line}")))?;
                if v != FORMAT_VERSION {
                    return Err(Error::ParseRecords(format!(
                        "unsupported records version {v}"
                    )));
                }
                version_seen = true;
            } else if let Some(kvs) = rest.strip_prefix("config ") {
                config = Some(parse_config(kvs)?);
            } else if let Some(vals) = rest.strip_prefix("theta_true ") {
                theta_true = Some(PhasePoint::new(parse_floats(vals)?));
            } else if let Some(f) = rest.strip_prefix("flag ") {
                flag = Some(parse_flag(f.trim())?);
            } else if let Some(kvs) = rest.strip_prefix("diagnostics ") {
                for kv in kvs.split_whitespace() {
                    let (key, value) = kv
                        .split_once('=')
                        .ok_or_else(|| Error::ParseRecords(format!("bad diagnostics: {kv}")))?;
                    let value: f64 = value
                        .parse()
                        .map_err(|_| Error::ParseRecords(format!("bad diagnostics: {kv}")))?;
                    match key {
                        "max_mass_error" => diagnostics.max_mass_error = value,
                        "min_cov_eigenvalue" => diagnostics.min_covariance_eigenvalue = value,
                        _ => return Err(Error::ParseRecords(format!("unknown diagnostic {key}"))),
                    }
                }
            }
            // other comment lines (e.g. #columns) are informational
            continue;
        }
        let config = config
            .as_ref()
            .ok_or_else(|| Error::ParseRecords("record line before #config header".into()))?;
        records.push(parse_record(line, config.d)?);
    }

    if !version_seen {
        return Err(Error::ParseRecords("missing version header".into()));
    }
    let config = config.ok_or_else(|| Error::ParseRecords("missing #config header".into()))?;
    let theta_true =
        theta_true.ok_or_else(|| Error::ParseRecords("missing #theta_true header".into()))?;
    let flag = flag.ok_or_else(|| Error::ParseRecords("missing #flag header".into()))?;
    Ok((
        config,
        RunOutcome {
            records,
            theta_true,
            flag,
            diagnostics,
        },
    ))
}

fn join_floats(values: &[f64], sep: &str) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(sep)
}

fn parse_floats(text: &str) -> Result<Vec<f64>> {
    text.split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| Error::ParseRecords(format!("bad float: {t}")))
        })
        .collect()
}

fn parse_config(kvs: &str) -> Result<RunConfig> {
    let mut d = None;
    let mut epsilon = None;
    let mut k_max = None;
    let mut grid_points = None;
    let mut m_max = None;
    let mut seed = None;
    let mut stream = None;
    let mut gammas = None;
    let mut theta = None;
    for kv in kvs.split_whitespace() {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::ParseRecords(format!("bad config field: {kv}")))?;
        let bad = || Error::ParseRecords(format!("bad config value: {kv}"));
        match key {
            "d" => d = Some(value.parse().map_err(|_| bad())?),
            "epsilon" => epsilon = Some(value.parse().map_err(|_| bad())?),
            "k_max" => k_max = Some(value.parse().map_err(|_| bad())?),
            "grid_points" => grid_points = Some(value.parse().map_err(|_| bad())?),
            "m_max" => m_max = Some(value.parse().map_err(|_| bad())?),
            "seed" => seed = Some(value.parse().map_err(|_| bad())?),
            "stream" => stream = Some(value.parse().map_err(|_| bad())?),
            "gammas" => {
                let rates: std::result::Result<Vec<f64>, _> =
                    value.split(',').map(|t| t.parse()).collect();
                gammas = Some(rates.map_err(|_| bad())?);
            }
            "theta" => {
                theta = Some(if value == "random" {
                    ThetaChoice::Random
                } else {
                    let vals: std::result::Result<Vec<f64>, _> =
                        value.split(',').map(|t| t.parse()).collect();
                    ThetaChoice::Fixed(PhasePoint::new(vals.map_err(|_| bad())?))
                });
            }
            _ => return Err(Error::ParseRecords(format!("unknown config key {key}"))),
        }
    }
    let missing = |name: &str| Error::ParseRecords(format!("missing config key {name}"));
    Ok(RunConfig {
        d: d.ok_or_else(|| missing("d"))?,
        epsilon: epsilon.ok_or_else(|| missing("epsilon"))?,
        k_max: k_max.ok_or_else(|| missing("k_max"))?,
        grid_points: grid_points.ok_or_else(|| missing("grid_points"))?,
        noise: NoiseModel::new(gammas.ok_or_else(|| missing("gammas"))?)?,
        seed: seed.ok_or_else(|| missing("seed"))?,
        stream: stream.ok_or_else(|| missing("stream"))?,
        m_max: m_max.ok_or_else(|| missing("m_max"))?,
        theta: theta.ok_or_else(|| missing("theta"))?,
    })
}

fn parse_flag(text: &str) -> Result<Option<RunFlag>> {
    if text == "none" {
        return Ok(None);
    }
    let (kind, round) = text
        .split_once(':')
        .ok_or_else(|| Error::ParseRecords(format!("bad flag: {text}")))?;
    let round: usize = round
        .parse()
        .map_err(|_| Error::ParseRecords(format!("bad flag round: {text}")))?;
    match kind {
        "degenerate-update" => Ok(Some(RunFlag::DegenerateUpdate { round })),
        "degenerate-cut" => Ok(Some(RunFlag::DegenerateCut { round })),
        _ => Err(Error::ParseRecords(format!("unknown flag kind {kind}"))),
    }
}

fn parse_record(line: &str, d: usize) -> Result<RoundRecord> {
    let mut tokens = line.split_whitespace();
    let mut next = |what: &str| {
        tokens
            .next()
            .ok_or_else(|| Error::ParseRecords(format!("record line ended before {what}")))
    };
    let parse_usize = |t: &str| -> Result<usize> {
        t.parse()
            .map_err(|_| Error::ParseRecords(format!("bad integer: {t}")))
    };
    let parse_u64 = |t: &str| -> Result<u64> {
        t.parse()
            .map_err(|_| Error::ParseRecords(format!("bad integer: {t}")))
    };
    let parse_f64 = |t: &str| -> Result<f64> {
        t.parse()
            .map_err(|_| Error::ParseRecords(format!("bad float: {t}")))
    };
    let parse_bool = |t: &str| -> Result<bool> {
        match t {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(Error::ParseRecords(format!("bad boolean: {t}"))),
        }
    };

    let k = parse_usize(next("k")?)?;
    let gate_reps = parse_u64(next("gate_reps")?)?;
    let measurements = parse_usize(next("m_k")?)?;
    let p_half_final = parse_f64(next("p_half")?)?;
    let cumulative_resources = parse_u64(next("n_t")?)?;
    let stalled = parse_bool(next("stalled")?)?;
    let truth_in_cube = parse_bool(next("truth_in_c")?)?;
    let mut estimate = Vec::with_capacity(d);
    for _ in 0..d {
        estimate.push(parse_f64(next("theta_bar")?)?);
    }
    let mut cov = Vec::with_capacity(d * d);
    for _ in 0..d * d {
        cov.push(parse_f64(next("cov")?)?);
    }
    let mut outcomes = Vec::with_capacity(measurements);
    for _ in 0..measurements {
        let mut control_phases = Vec::with_capacity(d + 1);
        for _ in 0..=d {
            control_phases.push(parse_f64(next("phi")?)?);
        }
        let outcome = parse_usize(next("outcome")?)?;
        outcomes.push(Measurement {
            control_phases,
            outcome,
        });
    }
    if tokens.next().is_some() {
        return Err(Error::ParseRecords("trailing fields on record line".into()));
    }
    Ok(RoundRecord {
        k,
        gate_reps,
        measurements,
        outcomes,
        estimate: PhasePoint::new(estimate),
        covariance: CovarianceMatrix::from_entries(d, cov)?,
        p_half_final,
        cumulative_resources,
        truth_in_cube,
        stalled,
    })
}
