//! Low-emotional rewriting: the prompt registry, the rewriter backends, and
//! the per-sample record builder.
//!
//! A [`PromptSet`] holds the rewriting instructions, the forward/inverse
//! instruction pairs used for round trips, and the sentiment prompt. The
//! [`Rewriter`] trait has an LLM backend plus three fully deterministic mock
//! backends so the whole pipeline runs offline:
//!
//! * `mock_identity` returns its input verbatim,
//! * `mock_neutralizing` strips lexicon-matched words (an idealized
//!   low-emotional rewrite),
//! * `mock_lossy_pair` round-trips by overwriting lexicon-matched words with
//!   a sentinel, destroying valence information the way unstable human text
//!   loses it.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{CompletionRequest, GatewayError, GatewayHandle, Message};
use crate::sentiment::{SentimentAnalyzer, SentimentError, SentimentPrompt, ValenceLexicon};
use crate::stability::StabilityRecord;
use crate::tokenize;

/// Sentinel written over valence words by the lossy round-trip mock.
pub const LOSSY_SENTINEL: &str = "x17";

#[derive(Debug, Error)]
pub enum RewriteError {
    #[error("unknown rewrite prompt id {0:?}")]
    UnknownPrompt(String),
    #[error("unknown inverse pair id {0:?}")]
    UnknownPair(String),
    #[error("rewrite backend returned an empty result")]
    EmptyResult,
    #[error("rewriter requires a gateway but none was provided")]
    GatewayRequired,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Sentiment(#[from] SentimentError),
    #[error("invalid prompt set: {0}")]
    InvalidPromptSet(String),
    #[error("prompt {prompt_id}: {source}")]
    Prompt {
        prompt_id: String,
        #[source]
        source: Box<RewriteError>,
    },
}

impl RewriteError {
    fn for_prompt(self, prompt_id: &str) -> Self {
        RewriteError::Prompt {
            prompt_id: prompt_id.to_string(),
            source: Box::new(self),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct LerPrompt {
    pub id: String,
    pub instruction: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct InversePair {
    pub id: String,
    pub forward: String,
    pub inverse: String,
}

/// The active instruction registry: `I` low-emotional rewrite prompts, the
/// forward/inverse pairs, and the sentiment prompt.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct PromptSet {
    pub ler: Vec<LerPrompt>,
    pub pairs: Vec<InversePair>,
    pub sentiment: SentimentPrompt,
}

const BUNDLED_LER: [&str; 9] = [
    "Please rewrite this more straightforwardly.",
    "Polish this in a machine-like objective tone.",
    "Rewrite this in a neutral, matter-of-fact register.",
    "Rewrite objectively.",
    "Use a machine-like tone.",
    "Restate this plainly, without emotional wording.",
    "Rewrite this as a factual report.",
    "Paraphrase this with minimal emotional coloring.",
    "Rewrite this calmly and dispassionately.",
];

impl PromptSet {
    /// The default registry: three rewrite prompts and one inverse pair.
    pub fn bundled() -> Self {
        Self::bundled_with_prompts(3).expect("3 <= 9")
    }

    /// A registry with the first `i` of the nine shipped rewrite prompts
    /// (`1 <= i <= 9`), for prompt-count sweeps.
    pub fn bundled_with_prompts(i: usize) -> Result<Self, RewriteError> {
        if i == 0 || i > BUNDLED_LER.len() {
            return Err(RewriteError::InvalidPromptSet(format!(
                "prompt count {i} outside 1..={}",
                BUNDLED_LER.len()
            )));
        }
        Ok(Self {
            ler: BUNDLED_LER[..i]
                .iter()
                .enumerate()
                .map(|(n, s)| LerPrompt {
                    id: format!("ler{}", n + 1),
                    instruction: (*s).to_string(),
                })
                .collect(),
            pairs: vec![InversePair {
                id: "pair1".into(),
                forward: "Convert every first-person reference in this text to third person."
                    .into(),
                inverse: "Convert every third-person reference in this text to first person."
                    .into(),
            }],
            sentiment: SentimentPrompt::default(),
        })
    }

    /// Number of rewrite prompts (`I`).
    pub fn prompt_count(&self) -> usize {
        self.ler.len()
    }

    pub fn ler_prompt(&self, id: &str) -> Option<&LerPrompt> {
        self.ler.iter().find(|p| p.id == id)
    }

    pub fn pair(&self, id: &str) -> Option<&InversePair> {
        self.pairs.iter().find(|p| p.id == id)
    }

    /// Check the registry invariants: at least one rewrite prompt, globally
    /// unique ids, both directions of every pair non-empty, valid sentiment
    /// template.
    pub fn validate(&self) -> Result<(), RewriteError> {
        if self.ler.is_empty() {
            return Err(RewriteError::InvalidPromptSet(
                "at least one rewrite prompt is required".into(),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for id in self
            .ler
            .iter()
            .map(|p| &p.id)
            .chain(self.pairs.iter().map(|p| &p.id))
        {
            if !seen.insert(id.as_str()) {
                return Err(RewriteError::InvalidPromptSet(format!(
                    "duplicate prompt id {id:?}"
                )));
            }
        }
        if self
            .ler
            .iter()
            .any(|p| p.instruction.trim().is_empty() || p.id.trim().is_empty())
        {
            return Err(RewriteError::InvalidPromptSet(
                "rewrite prompts must have non-empty id and instruction".into(),
            ));
        }
        if self
            .pairs
            .iter()
            .any(|p| p.forward.trim().is_empty() || p.inverse.trim().is_empty())
        {
            return Err(RewriteError::InvalidPromptSet(
                "inverse pairs must have both directions non-empty".into(),
            ));
        }
        SentimentPrompt::new(self.sentiment.template.clone())
            .map_err(|e| RewriteError::InvalidPromptSet(e.to_string()))?;
        Ok(())
    }
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::bundled()
    }
}

/// Which leg of the pipeline an instruction is applied on. Mock backends
/// behave differently per step; the LLM backend does not care.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewriteStep {
    Ler,
    Forward,
    Inverse,
}

/// Text transformation backend.
pub trait Rewriter: Send + Sync {
    fn backend_id(&self) -> &str;

    fn apply(
        &self,
        text: &str,
        instruction: &str,
        step: RewriteStep,
        gateway: Option<&GatewayHandle>,
    ) -> Result<String, RewriteError>;
}

/// Returns input verbatim on every step.
pub struct MockIdentity;

impl Rewriter for MockIdentity {
    fn backend_id(&self) -> &str {
        "mock_identity"
    }

    fn apply(
        &self,
        text: &str,
        _instruction: &str,
        _step: RewriteStep,
        _gateway: Option<&GatewayHandle>,
    ) -> Result<String, RewriteError> {
        Ok(text.to_string())
    }
}

/// True when every canonical token of a whitespace word is in the lexicon
/// (and there is at least one).
fn word_matches(word: &str, lexicon: &ValenceLexicon) -> bool {
    let mut any = false;
    for token in tokenize::tokens(word) {
        if !lexicon.contains(&token) {
            return false;
        }
        any = true;
    }
    any
}

/// Drops every lexicon-matched word on the rewrite step; texts without any
/// match pass through verbatim. Round-trip steps are identity.
pub struct MockNeutralizing {
    lexicon: Arc<ValenceLexicon>,
}

impl MockNeutralizing {
    pub fn new(lexicon: Arc<ValenceLexicon>) -> Self {
        Self { lexicon }
    }
}

impl Rewriter for MockNeutralizing {
    fn backend_id(&self) -> &str {
        "mock_neutralizing"
    }

    fn apply(
        &self,
        text: &str,
        _instruction: &str,
        step: RewriteStep,
        _gateway: Option<&GatewayHandle>,
    ) -> Result<String, RewriteError> {
        if step != RewriteStep::Ler {
            return Ok(text.to_string());
        }
        let words: Vec<&str> = text.split_whitespace().collect();
        if words.iter().any(|w| word_matches(w, &self.lexicon)) {
            Ok(words
                .into_iter()
                .filter(|w| !word_matches(w, &self.lexicon))
                .collect::<Vec<_>>()
                .join(" "))
        } else {
            Ok(text.to_string())
        }
    }
}

/// Leaves rewrite steps alone; the forward step overwrites every
/// lexicon-matched word with [`LOSSY_SENTINEL`] and the inverse step is
/// identity, so round trips destroy valence information.
pub struct MockLossyPair {
    lexicon: Arc<ValenceLexicon>,
}

impl MockLossyPair {
    pub fn new(lexicon: Arc<ValenceLexicon>) -> Self {
        Self { lexicon }
    }
}

impl Rewriter for MockLossyPair {
    fn backend_id(&self) -> &str {
        "mock_lossy_pair"
    }

    fn apply(
        &self,
        text: &str,
        _instruction: &str,
        step: RewriteStep,
        _gateway: Option<&GatewayHandle>,
    ) -> Result<String, RewriteError> {
        if step != RewriteStep::Forward {
            return Ok(text.to_string());
        }
        let words: Vec<&str> = text.split_whitespace().collect();
        if words.iter().any(|w| word_matches(w, &self.lexicon)) {
            Ok(words
                .into_iter()
                .map(|w| {
                    if word_matches(w, &self.lexicon) {
                        LOSSY_SENTINEL
                    } else {
                        w
                    }
                })
                .collect::<Vec<_>>()
                .join(" "))
        } else {
            Ok(text.to_string())
        }
    }
}

/// One temperature-0 completion per step: `"{instruction}\n\n{text}"`.
pub struct LlmRewriter {
    pub endpoint: String,
    pub model: String,
    pub seed: Option<u64>,
}

impl LlmRewriter {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            seed: None,
        }
    }
}

impl Rewriter for LlmRewriter {
    fn backend_id(&self) -> &str {
        "llm"
    }

    fn apply(
        &self,
        text: &str,
        instruction: &str,
        _step: RewriteStep,
        gateway: Option<&GatewayHandle>,
    ) -> Result<String, RewriteError> {
        let gateway = gateway.ok_or(RewriteError::GatewayRequired)?;
        let mut req = CompletionRequest::new(
            self.endpoint.clone(),
            self.model.clone(),
            vec![Message::user(format!("{instruction}\n\n{text}"))],
        );
        req.seed = self.seed;
        let reply = gateway.complete(&req)?;
        if reply.trim().is_empty() {
            return Err(RewriteError::EmptyResult);
        }
        Ok(reply)
    }
}

/// Apply the rewrite prompt `prompt_id` from `ps` to `text`.
pub fn rewrite(
    text: &str,
    prompt_id: &str,
    ps: &PromptSet,
    rw: &dyn Rewriter,
    gateway: Option<&GatewayHandle>,
) -> Result<String, RewriteError> {
    let prompt = ps
        .ler_prompt(prompt_id)
        .ok_or_else(|| RewriteError::UnknownPrompt(prompt_id.to_string()))?;
    rw.apply(text, &prompt.instruction, RewriteStep::Ler, gateway)
        .map_err(|e| e.for_prompt(prompt_id))
}

/// Apply the forward then the inverse instruction of pair `pair_id`.
pub fn round_trip(
    text: &str,
    pair_id: &str,
    ps: &PromptSet,
    rw: &dyn Rewriter,
    gateway: Option<&GatewayHandle>,
) -> Result<String, RewriteError> {
    let pair = ps
        .pair(pair_id)
        .ok_or_else(|| RewriteError::UnknownPair(pair_id.to_string()))?;
    let forward = rw
        .apply(text, &pair.forward, RewriteStep::Forward, gateway)
        .map_err(|e| e.for_prompt(pair_id))?;
    rw.apply(&forward, &pair.inverse, RewriteStep::Inverse, gateway)
        .map_err(|e| e.for_prompt(pair_id))
}

/// What [`build_stability_record`] should compute beyond the rewrites.
#[derive(Debug, Clone, Copy)]
pub struct RecordOptions {
    /// Also run the forward/inverse round trips (needed for the preservation
    /// score).
    pub include_round_trips: bool,
    /// Round-trip the first prompt's rewrite rather than the original text.
    pub sdp_on_rewrite: bool,
}

impl Default for RecordOptions {
    fn default() -> Self {
        Self {
            include_round_trips: false,
            sdp_on_rewrite: true,
        }
    }
}

/// Run the per-sample pipeline: analyze the original once, rewrite and
/// analyze under every prompt, and optionally round-trip through every
/// inverse pair. Issues exactly `1 + I` analyzer calls when round trips are
/// off.
pub fn build_stability_record(
    text: &str,
    ps: &PromptSet,
    rw: &dyn Rewriter,
    analyzer: &dyn SentimentAnalyzer,
    opts: &RecordOptions,
    gateway: Option<&GatewayHandle>,
) -> Result<StabilityRecord, RewriteError> {
    ps.validate()?;
    let original = analyzer
        .analyze(text, gateway)
        .map_err(|e| RewriteError::from(e).for_prompt("original"))?;

    let mut rewrites = Vec::with_capacity(ps.ler.len());
    let mut first_rewrite_text: Option<String> = None;
    for prompt in &ps.ler {
        let rewritten = rw
            .apply(text, &prompt.instruction, RewriteStep::Ler, gateway)
            .map_err(|e| e.for_prompt(&prompt.id))?;
        let dist = analyzer
            .analyze(&rewritten, gateway)
            .map_err(|e| RewriteError::from(e).for_prompt(&prompt.id))?;
        if first_rewrite_text.is_none() {
            first_rewrite_text = Some(rewritten);
        }
        rewrites.push((prompt.id.clone(), dist));
    }

    let round_trips = if opts.include_round_trips && !ps.pairs.is_empty() {
        let base: &str = if opts.sdp_on_rewrite {
            first_rewrite_text.as_deref().unwrap_or(text)
        } else {
            text
        };
        let mut trips = Vec::with_capacity(ps.pairs.len());
        for pair in &ps.pairs {
            let tripped = round_trip(base, &pair.id, ps, rw, gateway)?;
            let dist = analyzer
                .analyze(&tripped, gateway)
                .map_err(|e| RewriteError::from(e).for_prompt(&pair.id))?;
            trips.push((pair.id.clone(), dist));
        }
        Some(trips)
    } else {
        None
    };

    Ok(StabilityRecord {
        original,
        rewrites,
        round_trips,
    })
}
