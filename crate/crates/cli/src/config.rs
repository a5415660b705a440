use std::path::Path;

use movt_core::saliency::Attribution;
use movt_core::synthgen::GenConfig;
use movt_core::train::{ProbeConfig, TrainConfig};
use movt_core::{Error, ModelConfig, MovTConfig, PixTConfig, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Movt,
    Pixt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub fractions: Vec<f64>,
    pub crops: Vec<usize>,
    pub tracks: Vec<usize>,
    pub models: Vec<ModelKind>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            fractions: vec![1.0, 0.6, 0.4, 0.2, 0.1],
            crops: vec![32, 24, 16, 8],
            tracks: vec![60, 30, 12, 6],
            models: vec![ModelKind::Movt, ModelKind::Pixt],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub coverage_thresholds: Vec<f64>,
    pub saliency_fraction: f64,
    pub histogram_bins: usize,
    pub attribution: Attribution,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            coverage_thresholds: (0..10).map(|i| i as f64 / 10.0).collect(),
            saliency_fraction: 0.1,
            histogram_bins: 10,
            attribution: Attribution::Gradient,
        }
    }
}

/// Everything an experiment needs. `seed` is the master of the derived-seed
/// tree and overrides `train.seed` and `probe.seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: GenConfig,
    pub movt: MovTConfig,
    pub pixt: PixTConfig,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub sweep: SweepConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            data: GenConfig::default(),
            movt: MovTConfig::default(),
            pixt: PixTConfig::default(),
            train: TrainConfig::default(),
            probe: ProbeConfig::default(),
            sweep: SweepConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut cfg: ExperimentConfig =
            serde_path_to_error::deserialize(de).map_err(|e| Error::Config(format!("{}: {}", e.path(), e.inner())))?;
        cfg.train.seed = cfg.seed;
        cfg.probe.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                Self::parse(&text)
            }
            None => Self::parse("{}"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.movt.validate()?;
        self.pixt.validate()?;
        self.train.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if let Some(f) = self.sweep.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return bad(format!("sweep.fractions: {f} outside (0, 1]"));
        }
        if self.sweep.crops.iter().chain(&self.sweep.tracks).any(|&v| v == 0) {
            return bad("sweep.crops and sweep.tracks must be positive".into());
        }
        if let Some(t) = self.eval.coverage_thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return bad(format!("eval.coverage_thresholds: {t} outside [0, 1]"));
        }
        if !(self.eval.saliency_fraction > 0.0 && self.eval.saliency_fraction <= 1.0) {
            return bad("eval.saliency_fraction must lie in (0, 1]".into());
        }
        if self.eval.histogram_bins == 0 {
            return bad("eval.histogram_bins must be at least 1".into());
        }
        Ok(())
    }

    pub fn model(&self, kind: ModelKind) -> ModelConfig {
        match kind {
            ModelKind::Movt => ModelConfig::Movt(self.movt.clone()),
            ModelKind::Pixt => ModelConfig::Pixt(self.pixt.clone()),
        }
    }
}
