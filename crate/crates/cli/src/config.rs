//! Pipeline configuration: one TOML file, one root seed.

use std::path::{Path, PathBuf};

use ews_core::cohort::ScenarioConfig;
use ews_core::features::FeatureConfig;
use ews_core::labeler::LabelerConfig;
use ews_core::oxy::{AbgaSynthConfig, HyperparamPoint, TrainConfig};
use ews_core::pf::{EstimatorKind, Fio2Table};
use ews_core::pipeline::ExperimentConfig;
use ews_core::rng::derive_seed;
use ews_core::{Seconds, DEFAULT_GRID_STEP};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEMO_CONFIG: &str = include_str!("../configs/demo.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Relative paths resolve against the config file's directory.
    pub run_dir: PathBuf,
    pub seed: u64,
    pub grid_step: Seconds,
    pub synth: ScenarioConfig,
    pub pao2: Pao2Section,
    pub label: LabelSection,
    pub features: FeaturesSection,
    pub experiment: ExperimentConfig,
    pub serve: ServeSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Pao2Section {
    /// Network trained by `train-pao2`.
    pub network: EstimatorKind,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub abga: AbgaSynthConfig,
    pub hyperparams: HyperparamPoint,
    pub training: TrainConfig,
}

impl Default for Pao2Section {
    fn default() -> Self {
        Pao2Section {
            network: EstimatorKind::Spo2nn,
            n_train: 20_000,
            n_valid: 4_000,
            n_test: 10_000,
            abga: AbgaSynthConfig::default(),
            hyperparams: HyperparamPoint { batch_size: 50, hidden_layers: vec![32, 32], gamma: None, learning_rate: 1e-3, dropout_rate: 0.0 },
            training: TrainConfig { epochs: 40, ..Default::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelSection {
    pub estimator: EstimatorKind,
    /// Oxygen-flow to FiO2 table; the bundled table when absent.
    pub fio2_table: Option<PathBuf>,
    pub labeler: LabelerConfig,
}

impl Default for LabelSection {
    fn default() -> Self {
        LabelSection { estimator: EstimatorKind::Pnl, fio2_table: None, labeler: LabelerConfig::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesSection {
    /// Variable configuration TOML; the bundled one when absent.
    pub variables: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub host: String,
    pub port: u16,
    /// RFC 3339 instant of grid time zero.
    pub epoch: String,
}

impl Default for ServeSection {
    fn default() -> Self {
        ServeSection { host: "127.0.0.1".into(), port: 8080, epoch: "2100-01-01T00:00:00Z".into() }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            run_dir: PathBuf::from("run"),
            seed: 1,
            grid_step: DEFAULT_GRID_STEP,
            synth: ScenarioConfig::default(),
            pao2: Pao2Section::default(),
            label: LabelSection::default(),
            features: FeaturesSection::default(),
            experiment: ExperimentConfig::default(),
            serve: ServeSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut c: PipelineConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        for p in [Some(&mut c.run_dir), c.label.fio2_table.as_mut(), c.features.variables.as_mut()].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(c)
    }

    /// The file at `path`, or the bundled demo configuration.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                let base = p.parent().unwrap_or(Path::new("."));
                PipelineConfig::parse(&text, base).map_err(|e| match e {
                    CliError::Config(m) => CliError::Config(format!("{}: {m}", p.display())),
                    other => other,
                })
            }
            None => PipelineConfig::parse(DEMO_CONFIG, Path::new(".")),
        }
    }

    /// Overwrites every stage seed with one derived from the root seed and
    /// propagates the grid step.
    pub fn resolve(&mut self) {
        self.synth.grid_step_s = self.grid_step;
        self.synth.seed = derive_seed(self.seed, "synth", 0);
        self.experiment.seed = derive_seed(self.seed, "splits", 0);
        self.experiment.gbdt.seed = derive_seed(self.seed, "gbdt", 0);
    }

    pub fn pao2_seed(&self, part: u64) -> u64 {
        derive_seed(self.seed, "pao2", part)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: ews_core::EwsError| CliError::Config(e.to_string());
        if self.grid_step <= 0 {
            return Err(CliError::Config(format!("grid_step must be positive, got {}", self.grid_step)));
        }
        self.synth.validate().map_err(cfg)?;
        self.label.labeler.validate(self.grid_step).map_err(cfg)?;
        self.pao2.hyperparams.validate().map_err(cfg)?;
        self.experiment.gbdt.validate().map_err(cfg)?;
        if self.pao2.network == EstimatorKind::Pnl {
            return Err(CliError::Config("pao2.network must be spo2nn or fullnn".into()));
        }
        if self.pao2.n_train == 0 || self.pao2.n_test == 0 || self.pao2.training.epochs == 0 {
            return Err(CliError::Config("pao2 sample counts and epochs must be positive".into()));
        }
        if self.experiment.n_splits == 0 {
            return Err(CliError::Config("experiment.n_splits must be positive".into()));
        }
        for p in [&self.label.fio2_table, &self.features.variables].into_iter().flatten() {
            if !p.is_file() {
                return Err(CliError::Config(format!("referenced file {} does not exist", p.display())));
            }
        }
        chrono::DateTime::parse_from_rfc3339(&self.serve.epoch)
            .map_err(|e| CliError::Config(format!("serve.epoch {:?}: {e}", self.serve.epoch)))?;
        self.feature_config()?;
        self.fio2_table()?;
        Ok(())
    }

    pub fn feature_config(&self) -> Result<FeatureConfig, CliError> {
        match &self.features.variables {
            Some(p) => FeatureConfig::load(p).map_err(|e| CliError::Config(e.to_string())),
            None => Ok(FeatureConfig::default()),
        }
    }

    pub fn fio2_table(&self) -> Result<Fio2Table, CliError> {
        match &self.label.fio2_table {
            Some(p) => Fio2Table::load(p).map_err(|e| CliError::Config(e.to_string())),
            None => Ok(Fio2Table::default()),
        }
    }
}
