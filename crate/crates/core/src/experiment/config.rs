//! Experiment configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpc::MpcConfig;
use crate::multimodel::SyncMode;
use crate::plant::{make_default_fccu, PlantConfig};
use crate::signals::PrbsSpec;
use crate::subspace::{Detrend, GainEstimate, N4sidConfig, OrderSelection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlantSource {
    #[default]
    Surrogate,
    /// Identification data replayed from a CSV file.
    ExternalCsv,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    #[serde(default)]
    pub source: PlantSource,
    /// Dataset for `external-csv`, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    /// Overrides the surrogate's measurement noise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_std: Option<Vec<f64>>,
    /// Full surrogate parameter set; the built-in surrogate when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surrogate: Option<PlantConfig>,
}

impl PlantSection {
    pub fn resolve(&self) -> Result<PlantConfig> {
        let mut cfg = self.surrogate.clone().unwrap_or_else(make_default_fccu);
        if let Some(noise) = &self.noise_std {
            cfg.noise_std = noise.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationSection {
    pub register_length: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taps: Option<Vec<u32>>,
    #[serde(default = "one")]
    pub clock_period: usize,
    pub samples: usize,
    /// Half peak-to-peak amplitude per input around the plant's `u_ss`.
    pub amplitude: Vec<f64>,
    #[serde(default = "one_u32")]
    pub seed: u32,
}

fn one() -> usize {
    1
}
fn one_u32() -> u32 {
    1
}

impl ExcitationSection {
    pub fn prbs_spec(&self) -> Result<PrbsSpec> {
        let mut spec = PrbsSpec::new(self.register_length, (-1.0, 1.0), self.samples)?
            .with_clock_period(self.clock_period)
            .with_seed(self.seed);
        if let Some(taps) = &self.taps {
            spec.taps = taps.clone();
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn levels(&self, u_ss: &[f64]) -> Result<Vec<(f64, f64)>> {
        if self.amplitude.len() != u_ss.len() {
            return Err(Error::Config(format!(
                "[excitation] amplitude needs {} entries, has {}",
                u_ss.len(),
                self.amplitude.len()
            )));
        }
        if self.amplitude.iter().any(|a| !(*a > 0.0)) {
            return Err(Error::Config("[excitation] amplitudes must be positive".into()));
        }
        Ok(u_ss.iter().zip(&self.amplitude).map(|(u, a)| (u - a, u + a)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub id: String,
    pub future: usize,
    pub past: usize,
    pub order: OrderSelection,
    #[serde(default)]
    pub detrend: Detrend,
    #[serde(default)]
    pub gain: GainEstimate,
}

impl ModelSpec {
    pub fn n4sid(&self) -> N4sidConfig {
        N4sidConfig {
            future: self.future,
            past: self.past,
            order: self.order,
            detrend: self.detrend,
            gain: self.gain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentificationSection {
    #[serde(default = "half")]
    pub train_fraction: f64,
    pub models: Vec<ModelSpec>,
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiModelSection {
    /// Bank composition, by model id, in selection-priority order.
    pub models: Vec<String>,
    #[serde(default)]
    pub sync_mode: SyncMode,
    #[serde(default)]
    pub hysteresis: f64,
    /// Model used by `--mode single`; the first bank model when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub single_model: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub t: f64,
    pub values: Vec<f64>,
}

/// Operating point the controllers linearize around.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Anchor {
    /// The plant's `(u_ss, y_ss)`, where every run starts.
    #[default]
    Equilibrium,
    /// The identification data means stored with each model.
    Identification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub anchor: Anchor,
    /// Setpoint before the first schedule entry; the plant's `y_ss` when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_setpoint: Option<Vec<f64>>,
    #[serde(default)]
    pub setpoints: Vec<ScheduleEntry>,
    #[serde(default)]
    pub disturbances: Vec<ScheduleEntry>,
}

impl RunSection {
    pub fn n_steps(&self, ts: f64) -> Result<usize> {
        let steps = self.duration / ts;
        if !(self.duration > 0.0) || (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::Config(format!(
                "[run] duration {} is not a positive multiple of ts = {ts}",
                self.duration
            )));
        }
        Ok(steps.round() as usize)
    }

    /// Piecewise-constant value of a schedule at `t`.
    pub fn value_at(schedule: &[ScheduleEntry], initial: &[f64], t: f64) -> Vec<f64> {
        schedule
            .iter()
            .rfind(|e| e.t <= t + 1e-9)
            .map_or_else(|| initial.to_vec(), |e| e.values.clone())
    }

    pub fn first_disturbance(&self) -> Option<f64> {
        self.disturbances.iter().map(|e| e.t).reduce(f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub directory: PathBuf,
    #[serde(default)]
    pub svg: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub plant: PlantSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excitation: Option<ExcitationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identification: Option<IdentificationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<MpcConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multimodel: Option<MultiModelSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunSection>,
    pub output: OutputSection,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn missing(section: &str) -> Error {
    Error::Config(format!("missing [{section}] section"))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {}", e.message())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn excitation(&self) -> Result<&ExcitationSection> {
        self.excitation.as_ref().ok_or_else(|| missing("excitation"))
    }
    pub fn identification(&self) -> Result<&IdentificationSection> {
        self.identification.as_ref().ok_or_else(|| missing("identification"))
    }
    pub fn controller(&self) -> Result<&MpcConfig> {
        self.controller.as_ref().ok_or_else(|| missing("controller"))
    }
    pub fn multimodel(&self) -> Result<&MultiModelSection> {
        self.multimodel.as_ref().ok_or_else(|| missing("multimodel"))
    }
    pub fn run(&self) -> Result<&RunSection> {
        self.run.as_ref().ok_or_else(|| missing("run"))
    }

    /// Output directory; relative paths resolve against `MMPC_OUTPUT_ROOT`
    /// when set, else the working directory.
    pub fn output_dir(&self) -> PathBuf {
        let dir = &self.output.directory;
        if dir.is_absolute() {
            return dir.clone();
        }
        match std::env::var_os(super::OUTPUT_ROOT_ENV) {
            Some(root) => PathBuf::from(root).join(dir),
            None => dir.clone(),
        }
    }

    /// Ids for single and multi-model runs.
    pub fn single_model_id(&self) -> Result<String> {
        let mm = self.multimodel()?;
        mm.single_model
            .clone()
            .or_else(|| mm.models.first().cloned())
            .ok_or_else(|| Error::Config("[multimodel] models is empty".into()))
    }
}
