//! JSON config files for the CLI and harness, and the builders that turn
//! them into runtime objects.
//!
//! There are two documents: a detector config (metric, threshold, backends,
//! prompts, gateway) and an experiment config (protocol, corpus paths, sweep
//! values, output dir) that embeds a detector config. Unknown keys are
//! rejected so typos surface as config errors instead of silently applied
//! defaults.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{load_jsonl, Corpus, CorpusError};
use crate::detector::{DetectorConfig, Metric};
use crate::evalreport::{EvalError, ExperimentConfig, Protocol};
use crate::gateway::{Gateway, GatewayConfig, GatewayError, GatewayMode};
use crate::rewrite::{
    LlmRewriter, MockIdentity, MockLossyPair, MockNeutralizing, PromptSet, RewriteError, Rewriter,
};
use crate::sentiment::{
    LexiconAnalyzer, LlmAnalyzer, SentimentAnalyzer, SentimentError, ValenceLexicon,
};
use crate::stability::{SmoothingConfig, StabilityError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sentiment(#[from] SentimentError),
    #[error(transparent)]
    Rewrite(#[from] RewriteError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum AnalyzerBackend {
    Lexicon,
    Llm,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum RewriterBackend {
    MockIdentity,
    MockNeutralizing,
    MockLossyPair,
    Llm,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AnalyzerSpec {
    #[serde(default = "default_analyzer_backend")]
    pub backend: AnalyzerBackend,
    /// Lexicon TSV path; the bundled list when omitted.
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    /// Override of the sentiment prompt template (LLM backend).
    #[serde(default)]
    pub prompt_template: Option<String>,
}

fn default_analyzer_backend() -> AnalyzerBackend {
    AnalyzerBackend::Lexicon
}

impl Default for AnalyzerBackend {
    fn default() -> Self {
        AnalyzerBackend::Lexicon
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewriterSpec {
    #[serde(default = "default_rewriter_backend")]
    pub backend: RewriterBackend,
    /// Lexicon for the mock backends; defaults to the analyzer's lexicon.
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
}

fn default_rewriter_backend() -> RewriterBackend {
    RewriterBackend::MockNeutralizing
}

impl Default for RewriterSpec {
    fn default() -> Self {
        Self {
            backend: default_rewriter_backend(),
            lexicon: None,
        }
    }
}

/// Endpoint and model shared by the LLM analyzer and rewriter.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSpec {
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// The detector config document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    #[serde(default = "default_metric")]
    pub metric: Metric,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_true")]
    pub sdp_on_rewrite: bool,
    #[serde(default = "default_delta")]
    pub smoothing_delta: f64,
    #[serde(default)]
    pub analyzer: AnalyzerSpec,
    #[serde(default)]
    pub rewriter: RewriterSpec,
    /// Prompt registry; the bundled set when omitted.
    #[serde(default)]
    pub prompts: Option<PromptSet>,
    #[serde(default)]
    pub llm: Option<LlmSpec>,
    #[serde(default)]
    pub gateway: Option<GatewayConfig>,
}

fn default_metric() -> Metric {
    Metric::Sdc
}
fn default_threshold() -> f64 {
    0.5
}
fn default_true() -> bool {
    true
}
fn default_delta() -> f64 {
    1e-6
}

impl Default for DetectorSpec {
    fn default() -> Self {
        Self {
            metric: default_metric(),
            threshold: default_threshold(),
            sdp_on_rewrite: true,
            smoothing_delta: default_delta(),
            analyzer: AnalyzerSpec::default(),
            rewriter: RewriterSpec::default(),
            prompts: None,
            llm: None,
            gateway: None,
        }
    }
}

impl DetectorSpec {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Json {
            path: path.display().to_string(),
            source,
        })
    }

    fn load_lexicon(&self, path: &Option<PathBuf>) -> Result<ValenceLexicon, ConfigError> {
        Ok(match path {
            Some(p) => ValenceLexicon::from_path(p)?,
            None => ValenceLexicon::bundled(),
        })
    }

    fn needs_llm(&self) -> bool {
        self.analyzer.backend == AnalyzerBackend::Llm
            || self.rewriter.backend == RewriterBackend::Llm
    }

    /// Resolve the document into a runnable detector configuration.
    pub fn build(&self) -> Result<DetectorConfig, ConfigError> {
        let smoothing = SmoothingConfig::new(self.smoothing_delta)?;
        let mut prompts = self.prompts.clone().unwrap_or_default();
        prompts.validate()?;
        if let Some(template) = &self.analyzer.prompt_template {
            prompts.sentiment = crate::sentiment::SentimentPrompt::new(template.clone())?;
        }

        let llm = self.llm.as_ref();
        let require_llm = || {
            llm.ok_or_else(|| {
                ConfigError::Invalid("llm: endpoint and model required for llm backends".into())
            })
        };

        let analyzer: Arc<dyn SentimentAnalyzer> = match self.analyzer.backend {
            AnalyzerBackend::Lexicon => Arc::new(LexiconAnalyzer::new(
                self.load_lexicon(&self.analyzer.lexicon)?,
                smoothing,
            )),
            AnalyzerBackend::Llm => {
                let llm = require_llm()?;
                let mut a = LlmAnalyzer::new(
                    llm.endpoint.clone(),
                    llm.model.clone(),
                    prompts.sentiment.clone(),
                    smoothing,
                );
                a.seed = llm.seed;
                Arc::new(a)
            }
        };

        let rewriter: Arc<dyn Rewriter> = match self.rewriter.backend {
            RewriterBackend::MockIdentity => Arc::new(MockIdentity),
            RewriterBackend::MockNeutralizing => {
                let lex = match &self.rewriter.lexicon {
                    Some(p) => ValenceLexicon::from_path(p)?,
                    None => self.load_lexicon(&self.analyzer.lexicon)?,
                };
                Arc::new(MockNeutralizing::new(Arc::new(lex)))
            }
            RewriterBackend::MockLossyPair => {
                let lex = match &self.rewriter.lexicon {
                    Some(p) => ValenceLexicon::from_path(p)?,
                    None => self.load_lexicon(&self.analyzer.lexicon)?,
                };
                Arc::new(MockLossyPair::new(Arc::new(lex)))
            }
            RewriterBackend::Llm => {
                let llm = require_llm()?;
                let mut r = LlmRewriter::new(llm.endpoint.clone(), llm.model.clone());
                r.seed = llm.seed;
                Arc::new(r)
            }
        };

        let gateway = match (&self.gateway, self.needs_llm()) {
            (Some(cfg), _) => Some(Arc::new(Gateway::new(cfg.clone())?)),
            (None, true) => {
                return Err(ConfigError::Invalid(
                    "gateway: required when an llm backend is configured".into(),
                ))
            }
            (None, false) => None,
        };

        Ok(DetectorConfig {
            metric: self.metric,
            threshold: self.threshold,
            prompts,
            analyzer,
            rewriter,
            gateway,
            sdp_on_rewrite: self.sdp_on_rewrite,
        })
    }
}

/// The experiment config document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub protocol: Protocol,
    #[serde(default)]
    pub detector: DetectorSpec,
    pub corpus: PathBuf,
    #[serde(default)]
    pub paraphrase_corpus: Option<PathBuf>,
    /// Sweep points; a per-protocol default when omitted.
    #[serde(default)]
    pub sweep: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub jobs: Option<usize>,
    /// Re-threshold at the per-run F1 optimum (default true).
    #[serde(default = "default_true")]
    pub calibrate: bool,
}

fn default_sweep(protocol: Protocol) -> Vec<f64> {
    match protocol {
        Protocol::Main => vec![],
        Protocol::ParaphraseSweep => vec![0.0, 0.1, 0.3, 0.5],
        Protocol::PerturbSweep => vec![0.05, 0.1, 0.2],
        Protocol::LengthSweep => vec![20.0, 40.0, 60.0],
        Protocol::PromptCountSweep => vec![3.0, 5.0, 7.0, 9.0],
    }
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Json {
            path: path.display().to_string(),
            source,
        })
    }

    /// Resolve paths and backends into a runnable experiment. `jobs`
    /// defaults to the processor count, capped by the gateway's in-flight
    /// limit when a live gateway is configured.
    pub fn build(&self) -> Result<ExperimentConfig, ConfigError> {
        let mut detector_spec = self.detector.clone();
        if self.protocol == Protocol::PromptCountSweep && detector_spec.prompts.is_none() {
            detector_spec.prompts = Some(PromptSet::bundled_with_prompts(9)?);
        }
        let detector = detector_spec.build()?;

        let corpus = load_jsonl(&self.corpus)?;
        let paraphrase_corpus: Option<Corpus> = match &self.paraphrase_corpus {
            Some(p) => Some(load_jsonl(p)?),
            None => None,
        };

        let jobs = self.jobs.unwrap_or_else(|| {
            let cpus = std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1);
            match &detector.gateway {
                Some(gw) if gw.config().mode != GatewayMode::Replay => {
                    cpus.min(gw.config().max_in_flight)
                }
                _ => cpus,
            }
        });

        let cfg = ExperimentConfig {
            protocol: self.protocol,
            detector,
            corpus,
            paraphrase_corpus,
            sweep: self
                .sweep
                .clone()
                .unwrap_or_else(|| default_sweep(self.protocol)),
            seed: self.seed,
            output_dir: self.output_dir.clone(),
            jobs,
            calibrate_threshold: self.calibrate,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_detector_spec_builds_mock_pipeline() {
        let spec: DetectorSpec = serde_json::from_str("{}").unwrap();
        let cfg = spec.build().unwrap();
        assert_eq!(cfg.metric, Metric::Sdc);
        assert_eq!(cfg.threshold, 0.5);
        assert_eq!(cfg.rewriter.backend_id(), "mock_neutralizing");
        assert_eq!(cfg.analyzer.backend_id(), "lexicon");
        assert!(cfg.gateway.is_none());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<DetectorSpec>(r#"{"treshold": 0.5}"#).unwrap_err();
        assert!(err.to_string().contains("treshold"));
    }

    #[test]
    fn llm_backend_requires_llm_and_gateway_sections() {
        let spec: DetectorSpec =
            serde_json::from_str(r#"{"rewriter": {"backend": "llm"}}"#).unwrap();
        let err = spec.build().unwrap_err();
        assert!(err.to_string().contains("llm"));

        let spec: DetectorSpec = serde_json::from_str(
            r#"{"rewriter": {"backend": "llm"},
                "llm": {"endpoint": "http://localhost:1", "model": "m"}}"#,
        )
        .unwrap();
        let err = spec.build().unwrap_err();
        assert!(err.to_string().contains("gateway"));
    }

    #[test]
    fn bad_smoothing_delta_is_rejected() {
        let spec: DetectorSpec =
            serde_json::from_str(r#"{"smoothing_delta": 0.5}"#).unwrap();
        assert!(spec.build().is_err());
    }

    #[test]
    fn experiment_spec_defaults_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let corpus_path = dir.path().join("corpus.jsonl");
        std::fs::write(
            &corpus_path,
            "{\"id\":\"a\",\"text\":\"plain words here\",\"label\":\"human\"}\n\
             {\"id\":\"b\",\"text\":\"more plain words\",\"label\":\"llm\"}\n",
        )
        .unwrap();

        let spec = ExperimentSpec {
            protocol: Protocol::PerturbSweep,
            detector: DetectorSpec::default(),
            corpus: corpus_path.clone(),
            paraphrase_corpus: None,
            sweep: None,
            seed: 7,
            output_dir: dir.path().join("out"),
            jobs: Some(2),
            calibrate: true,
        };
        let cfg = spec.build().unwrap();
        assert_eq!(cfg.sweep, vec![0.05, 0.1, 0.2]);

        let bad = ExperimentSpec {
            sweep: Some(vec![1.5]),
            ..spec.clone()
        };
        let err = bad.build().unwrap_err();
        assert!(err.to_string().contains("1.5"), "error names the bad value: {err}");
    }

    #[test]
    fn prompt_count_sweep_gets_nine_prompts_by_default() {
        let dir = tempfile::tempdir().unwrap();
        let corpus_path = dir.path().join("corpus.jsonl");
        std::fs::write(
            &corpus_path,
            "{\"id\":\"a\",\"text\":\"plain words here\",\"label\":\"human\"}\n",
        )
        .unwrap();
        let spec = ExperimentSpec {
            protocol: Protocol::PromptCountSweep,
            detector: DetectorSpec::default(),
            corpus: corpus_path,
            paraphrase_corpus: None,
            sweep: None,
            seed: 0,
            output_dir: dir.path().join("out"),
            jobs: Some(1),
            calibrate: false,
        };
        let cfg = spec.build().unwrap();
        assert_eq!(cfg.detector.prompts.prompt_count(), 9);
        assert_eq!(cfg.sweep, vec![3.0, 5.0, 7.0, 9.0]);
    }
}
