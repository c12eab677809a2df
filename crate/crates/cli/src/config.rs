//! Settings shared by the subcommands. Command-line flags override values
//! from a `--config` TOML file, which override the defaults below.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use trainscope::monitor::{PlateauConfig, SpikeConfig};
use trainscope::trajectory::FrechetMode;
use trainscope::weight_stats::Metric;

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_CONVERGENCE_WINDOW: usize = 3;
pub const DEFAULT_LAYER_SCALE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    #[default]
    Value,
    Planar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    #[default]
    Std,
    Rms,
}

impl From<MetricName> for Metric {
    fn from(m: MetricName) -> Self {
        match m {
            MetricName::Std => Metric::Std,
            MetricName::Rms => Metric::Rms,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceSection {
    pub epsilon: Option<f64>,
    pub window: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpikeSection {
    pub window: Option<usize>,
    pub threshold: Option<f64>,
    pub mad_floor: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlateauSection {
    pub window_b: Option<f64>,
    pub slope_eps: Option<f64>,
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub mapping: Option<PathBuf>,
    pub strict: Option<bool>,
    pub lenient_non_finite: Option<bool>,
    pub jobs: Option<usize>,
    pub metric: Option<MetricName>,
    pub frechet_mode: Option<ModeName>,
    pub layer_scale: Option<f64>,
    pub convergence: ConvergenceSection,
    pub spikes: SpikeSection,
    pub plateaus: PlateauSection,
}

impl FileConfig {
    pub fn read(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let cfg: FileConfig = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        // Relative mapping paths are relative to the config file.
        Ok(FileConfig {
            mapping: cfg.mapping.map(|m| match path.parent() {
                Some(dir) if m.is_relative() => dir.join(m),
                _ => m,
            }),
            ..cfg
        })
    }

    pub fn frechet_mode(&self, mode: Option<ModeName>, layer_scale: Option<f64>) -> FrechetMode {
        match mode.or(self.frechet_mode).unwrap_or_default() {
            ModeName::Value => FrechetMode::ValueOnly,
            ModeName::Planar => FrechetMode::Planar {
                layer_axis_scale: layer_scale.or(self.layer_scale).unwrap_or(DEFAULT_LAYER_SCALE),
            },
        }
    }

    pub fn spike_config(&self, window: Option<usize>, threshold: Option<f64>, mad_floor: Option<f64>) -> SpikeConfig {
        let d = SpikeConfig::default();
        SpikeConfig {
            window: window.or(self.spikes.window).unwrap_or(d.window),
            threshold: threshold.or(self.spikes.threshold).unwrap_or(d.threshold),
            mad_floor: mad_floor.or(self.spikes.mad_floor).unwrap_or(d.mad_floor),
        }
    }

    pub fn plateau_config(&self, window_b: Option<f64>, slope_eps: Option<f64>) -> PlateauConfig {
        let d = PlateauConfig::default();
        PlateauConfig {
            window_b: window_b.or(self.plateaus.window_b).unwrap_or(d.window_b),
            slope_eps: slope_eps.or(self.plateaus.slope_eps).unwrap_or(d.slope_eps),
        }
    }
}
