//! Zero-shot detection of LLM-generated text from the stability of a text's
//! 3-class sentiment distribution under low-emotional rewriting.
//!
//! The pipeline has three stages: rewrite the candidate text under a set of
//! low-emotional instructions ([`rewrite`]), extract a (negative, neutral,
//! positive) sentiment distribution from the original and every rewrite
//! ([`sentiment`]), and score how much the distribution moved ([`stability`]).
//! LLM-generated text tends to keep its sentiment distribution put; human
//! text drifts. A text is flagged as LLM-generated when the divergence score
//! falls below a decision threshold ([`detector`]).
//!
//! Everything runs offline with the bundled lexicon analyzer and the mock
//! rewriter family; live runs go through the caching [`gateway`] client.
//! [`robustness`] and [`evalreport`] hold the attack transforms and the
//! experiment harness.

pub mod config;
pub mod corpus;
pub mod detector;
pub mod evalreport;
pub mod gateway;
pub mod rewrite;
pub mod robustness;
pub mod sentiment;
pub mod stability;
pub mod tokenize;

pub use corpus::{Corpus, Label, TextSample};
pub use detector::{calibrate, detect, detect_batch, DetectionResult, DetectorConfig, Metric};
pub use gateway::{Gateway, GatewayConfig, GatewayHandle, GatewayMode};
pub use rewrite::{build_stability_record, PromptSet, Rewriter};
pub use sentiment::{LexiconAnalyzer, SentimentAnalyzer, ValenceLexicon};
pub use stability::{
    clamp_normalize, feature_embedding, sdc_score, sdp_score, signed_divergence,
    DivergenceScore, SentimentDistribution, SmoothingConfig, StabilityRecord,
};
