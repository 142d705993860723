//! Local and global context networks on top of the token model.

mod global;
mod local;
mod train;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{read_prm, write_prm, Activation, Attention, Dense, GruStack, NnError, ParamId, ParamStore};
use crate::token_model::{FeatureSet, TokenModel};
use crate::tokenize::{TokenizeError, Vocabulary};
use crate::Scalar;

pub use global::{finetune_global, GlobalMode};
pub use local::{group_samples, BatchLoss, LocalGroup};
pub use train::{train_local, EpochStats, FinetuneConfig, TrainConfig, TrainLog};

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("empty context")]
    EmptyContext,
    #[error("empty batch")]
    EmptyBatch,
    #[error("corpus has no usable samples")]
    EmptyCorpus,
    #[error("no phrase pairs to train on")]
    EmptyPairs,
    #[error("loss diverged at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("checkpoint is not pretrained: {0}")]
    NotPretrained(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error("sidecar: {0}")]
    Sidecar(#[from] serde_json::Error),
}

/// How the melodic and harmonic losses are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    /// Trainable convex weight `α = σ(a)`.
    Wt,
    Avg,
    Melody,
    Harmony,
}

impl std::str::FromStr for Fusion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "wt" => Ok(Fusion::Wt),
            "avg" => Ok(Fusion::Avg),
            "melody" => Ok(Fusion::Melody),
            "harmony" => Ok(Fusion::Harmony),
            _ => Err(format!("unknown fusion {s:?} (expected wt, avg, melody or harmony)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d: usize,
    pub rnn_layers: usize,
    pub features: FeatureSet,
    pub fusion: Fusion,
    pub w_m: usize,
    pub w_h: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { d: 32, rnn_layers: 2, features: FeatureSet::ALL, fusion: Fusion::Wt, w_m: 2, w_h: 4 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ContextError> {
        if self.d == 0 || !self.d.is_multiple_of(2) {
            return Err(ContextError::Config(format!("d must be even and positive, got {}", self.d)));
        }
        if self.rnn_layers == 0 {
            return Err(ContextError::Config("rnn_layers must be at least 1".into()));
        }
        if self.w_m == 0 {
            return Err(ContextError::Config("w_m must be at least 1".into()));
        }
        if self.d > usize::from(u16::MAX) {
            return Err(ContextError::Config("d does not fit the checkpoint header".into()));
        }
        Ok(())
    }
}

/// Layer handles of the whole network; values live in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct ContextNet {
    pub cfg: ModelConfig,
    pub token: TokenModel,
    /// Note-level recurrence and pooling shared by melodic contexts and phrases.
    pub melody_rnn: GruStack,
    pub melody_att: Attention,
    pub harmony_att: Attention,
    pub head_m: [Dense; 2],
    pub head_h: [Dense; 2],
    /// Logit of the melodic loss weight.
    pub alpha: ParamId,
    pub period_rnn: GruStack,
    pub period_att: Attention,
    pub track_att: Attention,
}

impl ContextNet {
    /// Creates all parameters in a fixed order from a seeded stream.
    pub fn build<T: Scalar>(store: &mut ParamStore<T>, vocab: &Vocabulary, cfg: &ModelConfig, seed: u64) -> Result<Self, ContextError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.d;
        let token = TokenModel::new(store, vocab, d, cfg.features, &mut rng)?;
        let melody_rnn = GruStack::new(store, "melody.rnn", d, d, cfg.rnn_layers, &mut rng)?;
        let melody_att = Attention::new(store, "melody.att", d, d, &mut rng)?;
        let harmony_att = Attention::new(store, "harmony.att", d, d, &mut rng)?;
        let head = |store: &mut ParamStore<T>, name: &str, rng: &mut ChaCha8Rng| -> Result<[Dense; 2], NnError> {
            Ok([
                Dense::new(store, &format!("{name}.0"), 2 * d, d, Activation::Tanh, rng)?,
                Dense::new(store, &format!("{name}.1"), d, 4, Activation::Identity, rng)?,
            ])
        };
        let head_m = head(store, "head_m", &mut rng)?;
        let head_h = head(store, "head_h", &mut rng)?;
        let alpha = store.add_zeros("fusion.a", &[1])?;
        let period_rnn = GruStack::new(store, "period.rnn", d, d, cfg.rnn_layers, &mut rng)?;
        let period_att = Attention::new(store, "period.att", d, d, &mut rng)?;
        let track_att = Attention::new(store, "track.att", d, d, &mut rng)?;
        Ok(ContextNet {
            cfg: cfg.clone(),
            token,
            melody_rnn,
            melody_att,
            harmony_att,
            head_m,
            head_h,
            alpha,
            period_rnn,
            period_att,
            track_att,
        })
    }

    /// `α = σ(a)`.
    pub fn alpha_value<T: Scalar>(&self, store: &ParamStore<T>) -> T {
        crate::nn::sigmoid(store.value(self.alpha).data()[0])
    }

    /// Loss weights of the melodic and harmonic branch.
    pub fn branch_weights<T: Scalar>(&self, store: &ParamStore<T>) -> (T, T) {
        let half = T::cast(0.5);
        match self.cfg.fusion {
            Fusion::Wt => {
                let a = self.alpha_value(store);
                (a, T::one() - a)
            }
            Fusion::Avg => (half, half),
            Fusion::Melody => (T::one(), T::zero()),
            Fusion::Harmony => (T::zero(), T::one()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "pretrain")]
    Pretrain,
    GM,
    GH,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::GM => "GM",
            Stage::GH => "GH",
        }
    }
}

/// JSON sidecar written next to every `.prm` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub stage: Stage,
    pub config: ModelConfig,
    pub corpus_hash: String,
    pub epoch: usize,
    pub heldout_bce: Option<f64>,
    pub seed: u64,
    pub vocab: serde_json::Value,
}

/// Network, parameters and vocabulary travelling together.
#[derive(Debug, Clone)]
pub struct ContextModel<T> {
    pub net: ContextNet,
    pub store: ParamStore<T>,
    pub vocab: Vocabulary,
    pub meta: CheckpointMeta,
}

pub fn sidecar_path(prm: &Path) -> PathBuf {
    prm.with_extension("json")
}

impl<T: Scalar> ContextModel<T> {
    pub fn new(vocab: Vocabulary, cfg: &ModelConfig, seed: u64) -> Result<Self, ContextError> {
        let mut store = ParamStore::new();
        let net = ContextNet::build(&mut store, &vocab, cfg, seed)?;
        let meta = CheckpointMeta {
            stage: Stage::Pretrain,
            config: cfg.clone(),
            corpus_hash: String::new(),
            epoch: 0,
            heldout_bce: None,
            seed,
            vocab: serde_json::from_str(&vocab.to_json())?,
        };
        Ok(ContextModel { net, store, vocab, meta })
    }

    /// Writes `<path>` (`.prm`) and its `.json` sidecar.
    pub fn save(&self, path: &Path) -> Result<(), ContextError> {
        let file = BufWriter::new(File::create(path).map_err(NnError::from)?);
        write_prm(file, self.net.cfg.d as u16, &self.store.export_values())?;
        let json = serde_json::to_string_pretty(&self.meta)?;
        std::fs::write(sidecar_path(path), json + "\n").map_err(NnError::from)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ContextError> {
        let json = std::fs::read_to_string(sidecar_path(path)).map_err(NnError::from)?;
        let meta: CheckpointMeta = serde_json::from_str(&json)?;
        let vocab = Vocabulary::from_json(&meta.vocab.to_string())?;
        let mut model = ContextModel::new(vocab, &meta.config, meta.seed)?;
        let (d, values) = read_prm(BufReader::new(File::open(path).map_err(NnError::from)?))?;
        if usize::from(d) != meta.config.d {
            return Err(NnError::Checkpoint(format!("header d={d} but config d={}", meta.config.d)).into());
        }
        model.store.load_values(values)?;
        model.meta = meta;
        Ok(model)
    }
}
