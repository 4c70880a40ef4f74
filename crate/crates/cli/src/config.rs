//! Run configuration, read from TOML. Every stochastic stage has its own seed.

use std::path::Path;

use anyhow::{Context, Result};
use ipaths_core::analysis::AnalysisSettings;
use ipaths_core::checks::SuiteOptions;
use ipaths_core::compression::{CompressionOptions, Pooling, SpanMode};
use ipaths_core::lstm::{LstmModel, TrainSettings};
use ipaths_core::{Lexicon, LexiconConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LexiconSection {
    pub seed: u64,
    pub determiners: usize,
    pub noun_pairs: usize,
    pub verb_pairs: usize,
    pub prepositions: usize,
    pub adverbs: usize,
    pub fillers: usize,
}

impl Default for LexiconSection {
    fn default() -> Self {
        let s = LexiconConfig::default();
        Self {
            seed: 1,
            determiners: s.determiners,
            noun_pairs: s.noun_pairs,
            verb_pairs: s.verb_pairs,
            prepositions: s.prepositions,
            adverbs: s.adverbs,
            fillers: s.fillers,
        }
    }
}

impl LexiconSection {
    pub fn sizes(&self) -> LexiconConfig {
        LexiconConfig {
            determiners: self.determiners,
            noun_pairs: self.noun_pairs,
            verb_pairs: self.verb_pairs,
            prepositions: self.prepositions,
            adverbs: self.adverbs,
            fillers: self.fillers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub sentences: usize,
    pub seed: u64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            sentences: 50_000,
            seed: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub embed_dim: usize,
    pub hidden: usize,
    /// Initialisation seed.
    pub seed: u64,
    /// Added to each layer's forget-gate bias after initialisation.
    pub forget_bias_shift: [f64; 2],
}

impl ModelSection {
    pub fn init(&self, lex: &Lexicon) -> LstmModel {
        let mut model = LstmModel::random(lex.len(), self.embed_dim, self.hidden, lex.bos(), lex.eos(), self.seed);
        model.shift_forget_bias(&self.forget_bias_shift);
        model
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            hidden: 64,
            seed: 3,
            forget_bias_shift: [-2.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub min_epochs: usize,
    pub clip_norm: f64,
    /// Shuffling seed.
    pub seed: u64,
    pub dev_per_condition: usize,
    pub dev_seed: u64,
    pub simple_threshold: f64,
    pub noun_pp_threshold: f64,
    /// Fail when training has not met the NA gate.
    pub require_gate: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let s = TrainSettings::default();
        Self {
            learning_rate: s.learning_rate,
            batch_size: s.batch_size,
            max_epochs: s.max_epochs,
            min_epochs: s.min_epochs,
            clip_norm: s.clip_norm.unwrap_or(0.0),
            seed: 3,
            dev_per_condition: 100,
            dev_seed: 99,
            simple_threshold: 0.90,
            noun_pp_threshold: 0.80,
            require_gate: true,
        }
    }
}

impl TrainSection {
    pub fn settings(&self) -> TrainSettings {
        TrainSettings {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            min_epochs: self.min_epochs,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            ..TrainSettings::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TasksSection {
    pub per_condition: usize,
    pub seed: u64,
}

impl Default for TasksSection {
    fn default() -> Self {
        Self {
            per_condition: 300,
            seed: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    /// Leading sentences of each task dataset that are analysed.
    pub sentences_per_condition: usize,
    pub k_steps: usize,
    pub t_seed: u64,
    pub t_samples: usize,
    /// Paths kept per condition in `top_paths.csv`.
    pub top_paths: usize,
    /// Also write per-path means to `attributions.jsonl`.
    pub dump_attributions: bool,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let s = AnalysisSettings::default();
        Self {
            sentences_per_condition: 30,
            k_steps: s.k_steps,
            t_seed: 6,
            t_samples: s.t_samples,
            top_paths: 20,
            dump_attributions: false,
        }
    }
}

impl AnalysisSection {
    pub fn settings(&self) -> AnalysisSettings {
        AnalysisSettings {
            k_steps: self.k_steps,
            t_seed: self.t_seed,
            t_samples: self.t_samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressionSection {
    pub span: SpanMode,
    pub pooling: Pooling,
}

impl Default for CompressionSection {
    fn default() -> Self {
        Self {
            span: SpanMode::Prefix,
            pooling: Pooling::PerTask,
        }
    }
}

impl CompressionSection {
    pub fn options(&self) -> CompressionOptions {
        CompressionOptions {
            span: self.span,
            pooling: self.pooling,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub seed: u64,
    pub sentences_per_task: usize,
    pub k_steps: usize,
    pub corpus_sentences: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        let s = SuiteOptions::default();
        Self {
            seed: 7,
            sentences_per_task: s.sentences_per_task,
            k_steps: s.k_steps,
            corpus_sentences: s.corpus_sentences,
        }
    }
}

impl VerifySection {
    pub fn options(&self) -> SuiteOptions {
        SuiteOptions {
            seed: self.seed,
            sentences_per_task: self.sentences_per_task,
            k_steps: self.k_steps,
            corpus_sentences: self.corpus_sentences,
        }
    }
}

/// Everything that determines the artifacts of a run. The output directory
/// and thread count are deliberately not part of it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub lexicon: LexiconSection,
    pub corpus: CorpusSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub tasks: TasksSection,
    pub analysis: AnalysisSection,
    pub compression: CompressionSection,
    pub verify: VerifySection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Hex SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        let text = self.to_toml().expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Small configuration that runs every stage in well under a minute.
    pub fn smoke() -> Self {
        let mut c = Self::default();
        c.corpus.sentences = 600;
        c.model.embed_dim = 8;
        c.model.hidden = 10;
        c.train.max_epochs = 1;
        c.train.dev_per_condition = 10;
        c.train.require_gate = false;
        c.tasks.per_condition = 12;
        c.analysis.sentences_per_condition = 3;
        c.analysis.k_steps = 4;
        c.analysis.t_samples = 2_000;
        c.analysis.top_paths = 5;
        c.analysis.dump_attributions = true;
        c.verify.sentences_per_task = 2;
        c.verify.k_steps = 5;
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = RunConfig::from_toml("[model]\nhidden = 16\n[compression]\nspan = \"strict\"\n").unwrap();
        assert_eq!(c.model.hidden, 16);
        assert_eq!(c.model.embed_dim, 32);
        assert_eq!(c.compression.span, SpanMode::Strict);
        assert_ne!(c.hash(), RunConfig::default().hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("[model]\nwidth = 3\n").is_err());
        assert!(RunConfig::from_toml("[lexicon]\nnoun_pairs = \"many\"\n").is_err());
    }
}
