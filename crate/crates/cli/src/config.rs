use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pirhdy::context::{FinetuneConfig, ModelConfig, TrainConfig};
use pirhdy::tokenize::SegmentConfig;
use serde::{Deserialize, Serialize};

/// Default output locations, relative to the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub midi_dir: PathBuf,
    pub preprocess_out: PathBuf,
    pub vocab_out: PathBuf,
    /// Prefix of the `.prc` and `.gpc` files.
    pub corpus_out: PathBuf,
    pub model_out: PathBuf,
    pub report_out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            midi_dir: "data/mini-corpus".into(),
            preprocess_out: "out/preprocess".into(),
            vocab_out: "out/vocab.json".into(),
            corpus_out: "out/corpus".into(),
            model_out: "out/model.prm".into(),
            report_out: "out/report.json".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    /// Seed of the negative draws and the song split.
    pub seed: u64,
    /// Share of songs whose phrases form the held-out split.
    pub heldout_fraction: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig { seed: 7, heldout_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub seed: u64,
    /// Rank only queries from held-out songs.
    pub heldout_only: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { seed: 11, heldout_only: true }
    }
}

/// Everything one pipeline run needs. Unknown keys are rejected at every
/// level so ablation settings stay auditable.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub finetune: FinetuneConfig,
    pub segment: SegmentConfig,
    pub corpus: CorpusConfig,
    pub eval: EvalConfig,
    pub paths: Paths,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: PipelineConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate().with_context(|| format!("config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, x: f64| -> Result<()> {
            if !(0.0..=1.0).contains(&x) {
                bail!("{name} must lie in [0, 1], got {x}");
            }
            Ok(())
        };
        unit("segment.melodic_valid", self.segment.melodic_valid)?;
        unit("segment.harmonic_valid", self.segment.harmonic_valid)?;
        unit("corpus.heldout_fraction", self.corpus.heldout_fraction)?;
        unit("train.heldout_fraction", self.train.heldout_fraction)?;
        if self.segment.bars_per_phrase == 0 {
            bail!("segment.bars_per_phrase must be positive");
        }
        let p = &self.paths;
        for (name, path) in [
            ("midi_dir", &p.midi_dir),
            ("preprocess_out", &p.preprocess_out),
            ("vocab_out", &p.vocab_out),
            ("corpus_out", &p.corpus_out),
            ("model_out", &p.model_out),
            ("report_out", &p.report_out),
        ] {
            if path.as_os_str().is_empty() {
                bail!("paths.{name} is empty");
            }
        }
        self.model.validate()?;
        self.train.validate()?;
        self.finetune.validate()?;
        Ok(())
    }
}
