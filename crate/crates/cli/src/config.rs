use std::path::Path;

use serde::{Deserialize, Serialize};
use ttperc_core::calib::{BaSettings, WandGeometry};
use ttperc_core::snn::{NetworkConfig, TrainSettings};

use crate::error::CliError;

/// One run's configuration. Every section is optional; a subcommand fails
/// with a config error when it needs a section that is absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub simulate: Option<SimulateSection>,
    pub events: Option<EventsSection>,
    pub calibrate: Option<CalibrateSection>,
    pub spin: Option<SpinSection>,
    pub snn: Option<SnnSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub trajectories: usize,
    pub duration_s: Option<f64>,
    pub dt_s: Option<f64>,
    pub speed_min: Option<f64>,
    pub speed_max: Option<f64>,
    pub spin_max_rps: Option<f64>,
    /// Ball images rendered per trajectory at `image_fps`.
    pub images: Option<usize>,
    pub image_fps: Option<f64>,
    pub image_resolution: Option<usize>,
    /// Length of the simulated event recording from launch, µs.
    pub event_window_us: Option<u32>,
    pub event_threshold: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventsSection {
    pub samples: usize,
    pub camera: Option<usize>,
    pub window_us: Option<u32>,
    pub speed_min: Option<f64>,
    pub speed_max: Option<f64>,
    pub max_spin_rps: Option<f64>,
    pub noise_rate_hz: Option<f64>,
    pub threshold: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateSection {
    pub poses: usize,
    pub noise_px: Option<f64>,
    pub gauge: Option<usize>,
    pub wand: Option<WandGeometry>,
    pub ba: Option<BaSettings>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinSection {
    /// Spin rates of the sweep, rps.
    pub rates: Vec<f64>,
    pub axes: Option<usize>,
    pub fps: Option<f64>,
    pub frames: Option<usize>,
    pub resolution: Option<usize>,
    pub k: Option<f64>,
    pub orientation_noise_deg: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnnSection {
    pub network: Option<NetworkConfig>,
    pub train: Option<TrainSettings>,
    /// Fraction of the dataset held out for evaluation (taken from the end).
    pub holdout: Option<f64>,
    pub seed: Option<u64>,
}

impl Config {
    pub fn parse(text: &str, origin: &str) -> Result<Config, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))
    }

    pub fn load(path: Option<&Path>) -> Result<Config, CliError> {
        match path {
            None => Ok(Config::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                Config::parse(&text, &p.display().to_string())
            }
        }
    }

    /// Seed for a module: the command-line seed, then the top-level seed,
    /// then the section's own seed.
    pub fn seed_for(&self, cli: Option<u64>, section: Option<u64>) -> u64 {
        cli.or(self.seed).or(section).unwrap_or(0)
    }
}

/// The section a subcommand needs, or a config error naming it.
pub fn require<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    section.as_ref().ok_or_else(|| CliError::Config(format!("missing section [{name}]")))
}
