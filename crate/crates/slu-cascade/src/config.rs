//! Run configuration: a JSON document with defaults, flag overrides, and a
//! resolved copy written into every run directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusConfig;
use crate::error::{Result, SluError};
use crate::layers::Activation;
use crate::training::PhaseConfig;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ModelConfig {
    pub conv: Vec<(usize, usize, usize)>,
    pub w_layers: usize,
    pub w_hidden: usize,
    pub u_layers: usize,
    pub u_hidden: usize,
    pub subsample: usize,
    pub nlu_embed_dim: usize,
    pub nlu_hidden: usize,
    pub nlu_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            conv: vec![(3, 16, 64), (3, 64, 64)],
            w_layers: 4,
            w_hidden: 64,
            u_layers: 2,
            u_hidden: 64,
            subsample: 1,
            nlu_embed_dim: 32,
            nlu_hidden: 64,
            nlu_layers: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub patience: usize,
    pub clip_norm: f64,
    pub dropout: f64,
    pub lr_pretrain: f64,
    pub lr_finetune: f64,
    pub alpha: f64,
    pub epochs_phoneme: usize,
    pub epochs_word_pretrain: usize,
    pub epochs_word_finetune: usize,
    pub epochs_intent: usize,
    pub epochs_mtl: usize,
    pub epochs_nlu: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 8,
            patience: 3,
            clip_norm: 5.0,
            dropout: 0.1,
            lr_pretrain: 0.001,
            lr_finetune: 0.000125,
            alpha: 0.6,
            epochs_phoneme: 5,
            epochs_word_pretrain: 8,
            epochs_word_finetune: 5,
            epochs_intent: 8,
            epochs_mtl: 5,
            epochs_nlu: 12,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct EvalConfig {
    pub beam: usize,
    pub nbest: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { beam: 8, nbest: 4 }
    }
}

/// The fully resolved run configuration. Every field is overridable by a
/// CLI flag; the resolved copy is serialized into the run directory before
/// any work starts.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub bpe_target_size: usize,
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            bpe_target_size: 200,
            corpus: CorpusConfig::default(),
            model: ModelConfig::default(),
            training: TrainingConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| SluError::Config(format!("config parse: {}", e)))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| SluError::Format(format!("config serialize: {}", e)))?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.training.alpha) {
            return Err(SluError::Config(format!(
                "alpha {} outside [0,1]",
                self.training.alpha
            )));
        }
        if self.model.subsample == 0 {
            return Err(SluError::Config("subsample must be ≥ 1".into()));
        }
        if self.model.conv.first().map(|c| c.1) != Some(self.corpus.feature_dim) {
            return Err(SluError::Config(format!(
                "conv input dim {:?} != corpus feature dim {}",
                self.model.conv.first().map(|c| c.1),
                self.corpus.feature_dim
            )));
        }
        if self.eval.beam < self.eval.nbest || self.eval.nbest == 0 {
            return Err(SluError::Config(format!(
                "need beam ≥ nbest ≥ 1, got beam {} nbest {}",
                self.eval.beam, self.eval.nbest
            )));
        }
        Ok(())
    }

    /// Per-phase optimizer settings. Phases derive independent seeds.
    pub fn phase(&self, name: &str) -> PhaseConfig {
        let (lr, max_epochs) = match name {
            "phoneme" => (self.training.lr_pretrain, self.training.epochs_phoneme),
            "word-pretrain" => (self.training.lr_pretrain, self.training.epochs_word_pretrain),
            "word-finetune" => (self.training.lr_finetune, self.training.epochs_word_finetune),
            "intent-stepwise" => (self.training.lr_pretrain, self.training.epochs_intent),
            "mtl" => (self.training.lr_finetune, self.training.epochs_mtl),
            "nlu" => (self.training.lr_pretrain, self.training.epochs_nlu),
            other => panic!("unknown phase {}", other),
        };
        let salt: u64 = name
            .bytes()
            .fold(0u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
        PhaseConfig {
            lr,
            batch_size: self.training.batch_size,
            max_epochs,
            patience: self.training.patience,
            clip_norm: self.training.clip_norm,
            dropout: self.training.dropout,
            seed: self.seed ^ salt,
        }
    }

    pub fn cascade_dims(
        &self,
        p_classes: usize,
        vocab_size: usize,
        num_intents: usize,
    ) -> crate::cascade::CascadeDims {
        crate::cascade::CascadeDims {
            feature_dim: self.corpus.feature_dim,
            conv: self.model.conv.clone(),
            p_classes,
            w_layers: self.model.w_layers,
            w_hidden: self.model.w_hidden,
            vocab_size,
            u_layers: self.model.u_layers,
            u_hidden: self.model.u_hidden,
            num_intents,
            subsample: self.model.subsample,
            activation: Activation::Relu.code(),
        }
    }
}

/// Standard layout inside a run directory.
#[derive(Debug, Clone)]
pub struct RunDirs {
    pub root: PathBuf,
    pub corpus: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl RunDirs {
    pub fn new(root: &Path) -> Self {
        RunDirs {
            root: root.to_path_buf(),
            corpus: root.join("corpus"),
            checkpoints: root.join("checkpoints"),
            reports: root.join("reports"),
        }
    }

    pub fn create_all(&self) -> Result<()> {
        fs::create_dir_all(&self.corpus)?;
        fs::create_dir_all(&self.checkpoints)?;
        fs::create_dir_all(&self.reports)?;
        Ok(())
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.checkpoints.join(format!("{}.ckpt", name))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.reports.join(name)
    }

    pub fn bpe_vocab(&self) -> PathBuf {
        self.corpus.join("bpe.vocab")
    }

    pub fn slu_manifest(&self) -> PathBuf {
        self.corpus.join("slu_manifest.jsonl")
    }

    pub fn pretrain_manifest(&self) -> PathBuf {
        self.corpus.join("pretrain_manifest.jsonl")
    }
}
