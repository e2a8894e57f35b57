//! TOML configuration files and flag merging.
//!
//! Precedence: built-in defaults < configuration file < command-line flags.
//! Unknown keys in the file are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use qmpe_core::circuit::NoiseModel;
use qmpe_core::phase::PhasePoint;
use qmpe_core::protocol::{RunConfig, ThetaChoice};
use serde::Deserialize;

use crate::{CampaignArgs, RunArgs};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub campaign: CampaignSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub d: Option<usize>,
    pub epsilon: Option<f64>,
    pub k_max: Option<usize>,
    pub grid_points: Option<usize>,
    pub gammas: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub stream: Option<u64>,
    pub m_max: Option<usize>,
    pub theta: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSection {
    pub repetitions: Option<usize>,
    pub epsilons: Option<Vec<f64>>,
    pub tail_rounds: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub directory: Option<PathBuf>,
}

pub fn load(path: Option<&Path>) -> anyhow::Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("invalid config file {}", path.display()))
}

pub fn output_directory(flag: Option<&Path>, file: &FileConfig) -> anyhow::Result<PathBuf> {
    let dir = flag
        .map(Path::to_path_buf)
        .or_else(|| file.output.directory.clone())
        .or_else(|| std::env::var_os("QMPE_OUTPUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(dir)
}

/// Merge defaults, file values and flags into a validated run configuration.
pub fn resolve_run_config(file: &FileConfig, args: &RunArgs) -> anyhow::Result<RunConfig> {
    let Some(d) = args.d.or(file.run.d) else {
        bail!("the number of phases must be given (--d or [run].d)");
    };
    let mut config = RunConfig::new(d);
    if let Some(epsilon) = args.epsilon.or(file.run.epsilon) {
        config.epsilon = epsilon;
    }
    if let Some(k_max) = args.k_max.or(file.run.k_max) {
        config.k_max = k_max;
    }
    if let Some(grid_points) = args.grid_points.or(file.run.grid_points) {
        config.grid_points = grid_points;
    }
    if let Some(gammas) = args.gamma.clone().or_else(|| file.run.gammas.clone()) {
        config.noise = NoiseModel::new(gammas)?;
    }
    if let Some(seed) = args.seed.or(file.run.seed) {
        config.seed = seed;
    }
    if let Some(stream) = args.stream.or(file.run.stream) {
        config.stream = stream;
    }
    if let Some(m_max) = args.m_max.or(file.run.m_max) {
        config.m_max = m_max;
    }
    if let Some(theta) = args.theta.clone().or_else(|| file.run.theta.clone()) {
        config.theta = ThetaChoice::Fixed(PhasePoint::new(theta));
    }
    config.validate()?;
    Ok(config)
}

pub struct CampaignPlan {
    pub base: RunConfig,
    pub repetitions: usize,
    pub epsilons: Vec<f64>,
    pub tail_rounds: usize,
    pub campaign_seed: u64,
    pub label: String,
}

pub fn resolve_campaign(file: &FileConfig, args: &CampaignArgs) -> anyhow::Result<CampaignPlan> {
    let base = resolve_run_config(file, &args.run)?;
    let repetitions = args.reps.or(file.campaign.repetitions).unwrap_or(100);
    if repetitions == 0 {
        bail!("campaign needs at least one repetition");
    }
    let epsilons = args
        .eps_list
        .clone()
        .or_else(|| file.campaign.epsilons.clone())
        .unwrap_or_else(|| vec![base.epsilon]);
    if epsilons.is_empty() {
        bail!("the decision-parameter list is empty");
    }
    let tail_rounds = args.tail.or(file.campaign.tail_rounds).unwrap_or(3);
    if tail_rounds == 0 || tail_rounds > base.k_max {
        bail!("tail window must lie in 1..=k_max");
    }
    Ok(CampaignPlan {
        campaign_seed: base.seed,
        base,
        repetitions,
        epsilons,
        tail_rounds,
        label: args.run.label.clone(),
    })
}
