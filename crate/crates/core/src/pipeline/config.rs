//! The json file that drives every command.

use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::annotation::{RetryPolicy, Template, DEFAULT_SEED, DEFAULT_TEMPERATURE};
use crate::decoding::DecodeConfig;
use crate::dense::{DEFAULT_DIM, DEFAULT_HASH_SEED};
use crate::error::{Error, Result};
use crate::model::Arch;
use crate::retrieval::DEFAULT_DEPTH;
use crate::sparse::Bm25Params;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub passages: PathBuf,
    pub train_conversations: PathBuf,
    pub test_conversations: PathBuf,
    #[serde(default = "default_workdir")]
    pub workdir: PathBuf,
}

fn default_workdir() -> PathBuf {
    PathBuf::from("work")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbedderConfig {
    HashedTfidf { dim: usize, seed: u64 },
    /// Vectors for passages and queries precomputed by an outside encoder.
    ExternalFile { path: PathBuf },
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::HashedTfidf {
            dim: DEFAULT_DIM,
            seed: DEFAULT_HASH_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    pub bm25: Bm25Params,
    pub depth: usize,
    pub embedder: EmbedderConfig,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            bm25: Bm25Params::QRECC,
            depth: DEFAULT_DEPTH,
            embedder: EmbedderConfig::default(),
        }
    }
}

/// Architecture without the vocabulary size, which comes from the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let a = Arch::small(0);
        Self {
            d_model: a.d_model,
            heads: a.heads,
            d_ff: a.d_ff,
            enc_layers: a.enc_layers,
            dec_layers: a.dec_layers,
            max_src_len: a.max_src_len,
            max_tgt_len: a.max_tgt_len,
        }
    }
}

impl ModelConfig {
    pub fn arch(&self, vocab_size: usize) -> Arch {
        Arch {
            vocab_size,
            d_model: self.d_model,
            heads: self.heads,
            d_ff: self.d_ff,
            enc_layers: self.enc_layers,
            dec_layers: self.dec_layers,
            max_src_len: self.max_src_len,
            max_tgt_len: self.max_tgt_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnotationConfig {
    pub template: Template,
    /// Demonstrations per prompt; the template default when unset.
    pub m: Option<usize>,
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    pub mock_fixtures: Option<PathBuf>,
    pub parallelism: usize,
    pub temperature: f64,
    pub seed: u64,
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for AnnotationConfig {
    fn default() -> Self {
        let retry = RetryPolicy::default();
        Self {
            template: Template::Qrecc,
            m: None,
            endpoint: None,
            api_key: None,
            mock_fixtures: None,
            parallelism: 4,
            temperature: DEFAULT_TEMPERATURE,
            seed: DEFAULT_SEED,
            max_retries: retry.max_retries,
            initial_backoff_ms: retry.initial_backoff.as_millis() as u64,
            timeout_secs: retry.timeout.as_secs(),
        }
    }
}

impl AnnotationConfig {
    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            initial_backoff: std::time::Duration::from_millis(self.initial_backoff_ms),
            timeout: std::time::Duration::from_secs(self.timeout_secs),
        }
    }
}

fn default_stage1() -> TrainConfig {
    TrainConfig::stage1()
}

fn default_candidates() -> DecodeConfig {
    DecodeConfig::diverse(8)
}

fn default_reformulate() -> DecodeConfig {
    DecodeConfig::beam(4)
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default = "default_stage1")]
    pub stage1: TrainConfig,
    #[serde(default)]
    pub stage2: TrainConfig,
    #[serde(default = "default_candidates")]
    pub candidates: DecodeConfig,
    #[serde(default = "default_reformulate")]
    pub reformulate: DecodeConfig,
    #[serde(default)]
    pub annotation: AnnotationConfig,
    /// Seeds model initialization and both training stages.
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl PipelineConfig {
    /// Reads a config, expands `${VAR}` in string values and resolves
    /// relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        let mut value: serde_json::Value = serde_json::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        interpolate(&mut value, &|name| std::env::var(name).ok())?;
        let mut cfg: Self = serde_json::from_value(value).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.passages);
        fix(&mut self.paths.train_conversations);
        fix(&mut self.paths.test_conversations);
        fix(&mut self.paths.workdir);
        if let Some(p) = self.annotation.mock_fixtures.as_mut() {
            fix(p);
        }
        if let EmbedderConfig::ExternalFile { path } = &mut self.retrieval.embedder {
            fix(path);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.retrieval.bm25.validate()?;
        if self.retrieval.depth == 0 {
            return Err(Error::Config("retrieval depth must be positive".into()));
        }
        self.model.arch(vocab_floor()).validate()?;
        self.stage1.validate()?;
        self.stage2.validate()?;
        self.candidates.validate()?;
        self.reformulate.validate()?;
        if self.annotation.parallelism == 0 || self.annotation.parallelism > 8 {
            return Err(Error::Config("annotation parallelism must be in 1..=8".into()));
        }
        Ok(())
    }

    /// Stage settings with the pipeline seed applied.
    pub fn stage1_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            gamma: 0.0,
            contrastive_only: false,
            ..self.stage1.clone()
        }
    }

    pub fn stage2_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.stage2.clone()
        }
    }
}

// Any size past the special tokens; the real one is known after ingest.
fn vocab_floor() -> usize {
    crate::model::vocab::ANS + 2
}

/// Replaces `${NAME}` in every string of `value`. Unset variables are an error.
pub fn interpolate(value: &mut serde_json::Value, lookup: &dyn Fn(&str) -> Option<String>) -> Result<()> {
    let re = Regex::new(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("static pattern");
    match value {
        serde_json::Value::String(s) => {
            let mut missing = None;
            let out = re.replace_all(s, |c: &regex::Captures<'_>| {
                lookup(&c[1]).unwrap_or_else(|| {
                    missing.get_or_insert_with(|| c[1].to_string());
                    String::new()
                })
            });
            if let Some(name) = missing {
                return Err(Error::Config(format!("environment variable `{name}` is not set")));
            }
            *s = out.into_owned();
        }
        serde_json::Value::Array(items) => {
            for v in items {
                interpolate(v, lookup)?;
            }
        }
        serde_json::Value::Object(map) => {
            for v in map.values_mut() {
                interpolate(v, lookup)?;
            }
        }
        _ => {}
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> serde_json::Value {
        serde_json::json!({
            "paths": {
                "passages": "p.jsonl",
                "train_conversations": "train.jsonl",
                "test_conversations": "test.jsonl"
            }
        })
    }

    #[test]
    fn defaults_fill_missing_sections() {
        let cfg: PipelineConfig = serde_json::from_value(minimal()).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.stage1.gamma, 0.0);
        assert_eq!(cfg.stage2.gamma, 100.0);
        assert_eq!(cfg.retrieval.bm25, Bm25Params::QRECC);
        assert_eq!(cfg.paths.workdir, PathBuf::from("work"));
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v = minimal();
        v["stage1"] = serde_json::json!({"learning_rate": 0.1});
        assert!(serde_json::from_value::<PipelineConfig>(v).is_err());
    }

    #[test]
    fn env_interpolation() {
        let mut v = serde_json::json!({"a": "key=${TOKEN}", "b": ["${TOKEN}${TOKEN}"], "c": 3});
        interpolate(&mut v, &|n| (n == "TOKEN").then(|| "xy".to_string())).unwrap();
        assert_eq!(v, serde_json::json!({"a": "key=xy", "b": ["xyxy"], "c": 3}));
        let mut v = serde_json::json!({"a": "${NOPE}"});
        let err = interpolate(&mut v, &|_| None).unwrap_err();
        assert!(err.to_string().contains("NOPE"));
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, minimal().to_string()).unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.paths.passages, dir.path().join("p.jsonl"));
        assert_eq!(cfg.paths.workdir, dir.path().join("work"));
    }

    #[test]
    fn stage_seeds_follow_the_pipeline_seed() {
        let mut cfg: PipelineConfig = serde_json::from_value(minimal()).unwrap();
        cfg.seed = 7;
        cfg.stage1.gamma = 5.0;
        assert_eq!(cfg.stage1_config().seed, 7);
        assert_eq!(cfg.stage1_config().gamma, 0.0);
        assert_eq!(cfg.stage2_config().seed, 7);
    }
}
