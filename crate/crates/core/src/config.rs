//! Run configuration file.
//!
//! TOML with one section per module. Only `[system]` and its three
//! dimensions are required; everything else has defaults. Powers accept a
//! plain linear value or a string with a `dB`, `dBW` or `dBm` suffix.
//!
//! ```toml
//! [system]
//! num_bs_antennas = 4
//! num_ris_elements = 36
//! num_users = 3
//! transmit_power = "10 dBW"
//! noise_power = "-90 dBm"
//! rng_seed = 1
//!
//! [optimizer]
//! threshold = 1e-3
//! csi = "perfect"
//!
//! [estimation]
//! pilot_length = 72
//!
//! [scenario]
//! trials = 200
//! algorithms = ["fp_perfect", "mmse_random_phase"]
//! sweep = { variable = "num_ris_elements", values = [20, 30, 40] }
//!
//! [bench]
//! ris_elements = [64, 128, 256]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::DEFAULT_RANDOM_DRAWS;
use crate::channel::SystemConfig;
use crate::experiments::{
    Algorithm, EstimationSettings, InitKind, ScenarioSpec, Sweep, SweepVariable, DEFAULT_GRID_LEVELS,
    DEFAULT_TRIALS,
};
use crate::optimizer::FpSettings;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Csi {
    #[default]
    Perfect,
    Estimated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub threshold: f64,
    pub max_iterations: usize,
    pub phase_sweeps: usize,
    pub init: InitKind,
    /// Which CSI single runs design on.
    pub csi: Csi,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let s = FpSettings::default();
        Self {
            threshold: s.threshold,
            max_iterations: s.max_iterations,
            phase_sweeps: s.phase_sweeps,
            init: InitKind::default(),
            csi: Csi::default(),
        }
    }
}

impl OptimizerSection {
    pub fn settings(&self) -> FpSettings {
        FpSettings {
            threshold: self.threshold,
            max_iterations: self.max_iterations,
            phase_sweeps: self.phase_sweeps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub trials: usize,
    pub algorithms: Vec<Algorithm>,
    pub sweep: Option<Sweep>,
    pub grid_levels: usize,
    pub random_phase_draws: usize,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            trials: DEFAULT_TRIALS,
            algorithms: vec![Algorithm::FpPerfect],
            sweep: None,
            grid_levels: DEFAULT_GRID_LEVELS,
            random_phase_draws: DEFAULT_RANDOM_DRAWS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    /// RIS sizes to time; required by the bench command.
    pub ris_elements: Vec<usize>,
    /// Outer iterations accumulated per size.
    pub min_iterations: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            ris_elements: Vec::new(),
            min_iterations: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub estimation: EstimationSettings,
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub bench: BenchSection,
}

impl RunConfig {
    pub fn new(system: SystemConfig) -> Self {
        Self {
            system,
            optimizer: OptimizerSection::default(),
            estimation: EstimationSettings::default(),
            scenario: ScenarioSection::default(),
            bench: BenchSection::default(),
        }
    }

    /// Parses and validates. Errors carry the offending field name and,
    /// for syntax errors, the line.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.optimizer.settings().validate()?;
        if self.optimizer.csi == Csi::Estimated {
            let n = self.system.num_ris_elements;
            let l = self.estimation.pilot_length.unwrap_or(n);
            if l < n {
                return Err(Error::config(
                    "estimation.pilot_length",
                    format!("{l} is shorter than the {n} RIS elements"),
                ));
            }
        }
        if self.bench.min_iterations == 0 {
            return Err(Error::config("bench.min_iterations", "must be at least 1"));
        }
        self.scenario_spec().validate()
    }

    pub fn seed(&self) -> u64 {
        self.system.rng_seed
    }

    pub fn scenario_spec(&self) -> ScenarioSpec {
        let sweep = self.scenario.sweep.clone().unwrap_or(Sweep {
            variable: SweepVariable::NumRisElements,
            values: vec![self.system.num_ris_elements as f64],
        });
        ScenarioSpec {
            system: self.system.clone(),
            optimizer: self.optimizer.settings(),
            init: self.optimizer.init,
            estimation: self.estimation.clone(),
            sweep,
            trials: self.scenario.trials,
            algorithms: self.scenario.algorithms.clone(),
            grid_levels: self.scenario.grid_levels,
            random_phase_draws: self.scenario.random_phase_draws,
            seed: self.system.rng_seed,
            record_timing: false,
        }
    }
}
