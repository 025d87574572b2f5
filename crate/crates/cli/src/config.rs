//! Run configuration: one TOML document drives every subcommand.

use std::path::{Path, PathBuf};

use mpdpd::energy::Precision;
use mpdpd::metrics::ChannelPlan;
use mpdpd::pa::DEFAULT_DRIVE;
use mpdpd::signal::OfdmConfig;
use mpdpd::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Overrides every stage seed when set.
    pub seed: Option<u64>,
    pub sample_rate_hz: f64,
    pub output_dir: PathBuf,
    pub signal: SignalSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    /// PA-model stage; falls back to `train` when absent.
    pub train_pa: Option<TrainConfig>,
    pub quant: QuantSection,
    pub channel_plan: Option<ChannelPlan>,
    pub energy: EnergySection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalSection {
    /// Paired dataset CSV; when absent the OFDM block is generated and passed
    /// through the simulated PA.
    pub dataset: Option<PathBuf>,
    /// Reference symbols JSON for EVM; needed with an external dataset.
    pub reference: Option<PathBuf>,
    pub ofdm: OfdmConfig,
    pub drive: f64,
    pub pa_coefficients: Option<PathBuf>,
    /// Output noise in dBc, used by `simulate`.
    pub noise_dbc: Option<f64>,
    pub split: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden_dim: usize,
    /// Trained PA model; `train-dpd` and `sweep` train one inline otherwise.
    pub pa_checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantSection {
    /// `fp32` or `W<w>A<a>`.
    pub precision: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergySection {
    /// Per-op energy CSV; the shipped table otherwise.
    pub table: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            sample_rate_hz: 640e6,
            output_dir: PathBuf::from("run"),
            signal: SignalSection::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            train_pa: None,
            quant: QuantSection::default(),
            channel_plan: None,
            energy: EnergySection::default(),
        }
    }
}

impl Default for SignalSection {
    fn default() -> Self {
        Self {
            dataset: None,
            reference: None,
            ofdm: OfdmConfig::default(),
            drive: DEFAULT_DRIVE,
            pa_coefficients: None,
            noise_dbc: None,
            split: [0.6, 0.2, 0.2],
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden_dim: 10,
            pa_checkpoint: None,
        }
    }
}

impl Default for QuantSection {
    fn default() -> Self {
        Self { precision: "fp32".into() }
    }
}

impl RunConfig {
    /// Parses a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn parse(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for p in [
            &mut self.signal.dataset,
            &mut self.signal.reference,
            &mut self.signal.pa_coefficients,
            &mut self.model.pa_checkpoint,
            &mut self.energy.table,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// Pushes the top-level seed into the stage configs.
    pub fn apply_seed(&mut self) {
        if let Some(s) = self.seed {
            self.train.seed = s;
            if let Some(t) = self.train_pa.as_mut() {
                t.seed = s;
            }
        }
    }

    pub fn pa_train(&self) -> &TrainConfig {
        self.train_pa.as_ref().unwrap_or(&self.train)
    }

    pub fn precision(&self) -> Result<Precision> {
        Precision::parse(&self.quant.precision)
            .ok_or_else(|| config(format!("quant.precision: expected fp32 or W<w>A<a>, got {:?}", self.quant.precision)))
    }

    /// Checks values and referenced paths; messages carry the key path.
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(config(format!("sample_rate_hz: must be positive, got {}", self.sample_rate_hz)));
        }
        if self.model.hidden_dim == 0 {
            return Err(config("model.hidden_dim: must be >= 1"));
        }
        if !(self.signal.drive > 0.0 && self.signal.drive <= 1.0) {
            return Err(config(format!("signal.drive: must be in (0, 1], got {}", self.signal.drive)));
        }
        if self.signal.dataset.is_none() {
            self.signal
                .ofdm
                .validate(self.sample_rate_hz)
                .map_err(|e| config(format!("signal.ofdm: {e}")))?;
        }
        self.train.validate().map_err(|e| config(format!("train: {e}")))?;
        if let Some(t) = &self.train_pa {
            t.validate().map_err(|e| config(format!("train_pa: {e}")))?;
        }
        self.precision()?;
        if let Some(plan) = &self.channel_plan {
            plan.validate(self.sample_rate_hz)
                .map_err(|e| config(format!("channel_plan: {e}")))?;
        }
        let paths = [
            ("signal.dataset", &self.signal.dataset),
            ("signal.reference", &self.signal.reference),
            ("signal.pa_coefficients", &self.signal.pa_coefficients),
            ("model.pa_checkpoint", &self.model.pa_checkpoint),
            ("energy.table", &self.energy.table),
        ];
        for (key, p) in paths {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(config(format!("{key}: {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    /// Resolved TOML snapshot written next to every output.
    /// Paths are made absolute so the snapshot can be rerun from anywhere.
    pub fn snapshot(&self) -> String {
        let mut c = self.clone();
        let cwd = std::env::current_dir().unwrap_or_default();
        c.resolve_paths(&cwd);
        toml::to_string_pretty(&c).expect("run config serializes")
    }
}
