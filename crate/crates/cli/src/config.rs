//! TOML run configuration. Every section is optional; absent keys take the
//! same defaults as the corresponding flags.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use zdcgan_core::data::SynthProfile;
use zdcgan_core::evaluation::{ChannelMap, DEFAULT_BINS};
use zdcgan_core::training::{Grid, TrainConfig};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthSection,
    pub stats: StatsSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub gridsearch: GridSection,
    pub plot: PlotSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub seed: u64,
    pub groups: usize,
    pub per_group: usize,
    pub out: Option<PathBuf>,
    pub profile: SynthProfile,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            seed: 0,
            groups: 64,
            per_group: 8,
            out: None,
            profile: SynthProfile::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSection {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Also the base configuration of grid searches.
    pub config: TrainConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub samples_per_condition: usize,
    pub seed: u64,
    pub bins: usize,
    pub channel_map: ChannelMap,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            checkpoint: None,
            data: None,
            out: None,
            samples_per_condition: 8,
            seed: 0,
            bins: DEFAULT_BINS,
            channel_map: ChannelMap::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub runs_per_cell: usize,
    pub grid_div: Vec<f64>,
    pub grid_in: Vec<f64>,
    pub grid_aux: Vec<f64>,
    pub jobs: usize,
    pub split_ratio: f64,
    pub samples_per_condition: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        let g = Grid::reference();
        Self {
            data: None,
            out: None,
            runs_per_cell: 5,
            grid_div: g.lambda_div,
            grid_in: g.lambda_in,
            grid_aux: g.lambda_aux,
            jobs: 0,
            split_ratio: 0.8,
            samples_per_condition: 8,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotSection {
    pub report: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub channels: Vec<usize>,
    pub samples: usize,
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub seed: u64,
}

impl Default for PlotSection {
    fn default() -> Self {
        Self {
            report: None,
            out: None,
            channels: vec![4, 5],
            samples: 8,
            checkpoint: None,
            data: None,
            seed: 0,
        }
    }
}

pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
    toml::from_str(&text).map_err(|e| anyhow::anyhow!("invalid config {}: {e}", path.display()))
}
