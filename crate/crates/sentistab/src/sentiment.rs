//! Sentiment distribution analyzers.
//!
//! Two backends produce a [`SentimentDistribution`] for a text: a
//! deterministic valence-lexicon analyzer (the offline default, with a
//! bundled word list) and an LLM-prompted analyzer that asks a model for
//! three class probabilities and parses whatever comes back.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{CompletionRequest, GatewayError, GatewayHandle, Message};
use crate::stability::{clamp_normalize, SentimentDistribution, SmoothingConfig, StabilityError};
use crate::tokenize;

/// Bundled default lexicon, compiled into the binary.
const BUNDLED_LEXICON: &str = include_str!("../data/default_lexicon.tsv");

/// Placeholder the sentiment prompt template must contain exactly once.
pub const TEMPLATE_PLACEHOLDER: &str = "{text}";

#[derive(Debug, Error)]
pub enum SentimentError {
    #[error("lexicon {path}:{line}: {msg}")]
    LexiconParse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("failed to read lexicon {path}: {source}")]
    LexiconIo {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid lexicon thresholds: neg {neg} must be < 0 < pos {pos}")]
    InvalidThresholds { neg: f64, pos: f64 },
    #[error("alpha must be positive, got {0}")]
    InvalidAlpha(f64),
    #[error("sentiment prompt template must contain exactly one {TEMPLATE_PLACEHOLDER} placeholder")]
    InvalidTemplate,
    #[error("could not extract three probabilities from reply: {reply:?}")]
    MalformedReply { reply: String },
    #[error("analyzer requires a gateway but none was provided")]
    GatewayRequired,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
}

/// Token valence map with the thresholds that bin a valence into
/// negative / neutral / positive, plus the Laplace pseudo-count used when
/// turning counts into a distribution.
#[derive(Debug, Clone)]
pub struct ValenceLexicon {
    entries: BTreeMap<String, f64>,
    pub pos_threshold: f64,
    pub neg_threshold: f64,
    pub alpha: f64,
}

impl ValenceLexicon {
    /// Build from explicit `(token, valence)` pairs with default thresholds.
    pub fn from_entries<I, S>(pairs: I) -> Result<Self, SentimentError>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut entries = BTreeMap::new();
        for (token, valence) in pairs {
            let token: String = token.into();
            if !(-1.0..=1.0).contains(&valence) || !valence.is_finite() {
                return Err(SentimentError::LexiconParse {
                    path: "<inline>".into(),
                    line: 0,
                    msg: format!("valence {valence} for {token:?} outside [-1, 1]"),
                });
            }
            entries.insert(token.to_lowercase(), valence);
        }
        Ok(Self {
            entries,
            pos_threshold: 0.1,
            neg_threshold: -0.1,
            alpha: 1.0,
        })
    }

    /// Parse the `token<TAB>valence` format. `#` lines and blank lines are
    /// comments; any valence outside [-1, 1], non-finite value, or duplicate
    /// token rejects the whole file with its 1-based line number.
    pub fn from_tsv(text: &str, origin: &str) -> Result<Self, SentimentError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| SentimentError::LexiconParse {
                path: origin.to_string(),
                line: line_no,
                msg,
            };
            let (token, valence_str) = line
                .split_once('\t')
                .ok_or_else(|| err("expected `token<TAB>valence`".into()))?;
            let valence: f64 = valence_str
                .trim()
                .parse()
                .map_err(|e| err(format!("bad valence {valence_str:?}: {e}")))?;
            if !valence.is_finite() || !(-1.0..=1.0).contains(&valence) {
                return Err(err(format!("valence {valence} outside [-1, 1]")));
            }
            let token = token.trim().to_lowercase();
            if token.is_empty() {
                return Err(err("empty token".into()));
            }
            if entries.insert(token.clone(), valence).is_some() {
                return Err(err(format!("duplicate token {token:?}")));
            }
        }
        Ok(Self {
            entries,
            pos_threshold: 0.1,
            neg_threshold: -0.1,
            alpha: 1.0,
        })
    }

    pub fn from_path(path: &Path) -> Result<Self, SentimentError> {
        let text = std::fs::read_to_string(path).map_err(|source| SentimentError::LexiconIo {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_tsv(&text, &path.display().to_string())
    }

    /// The word list shipped with the crate (~1.6k entries).
    pub fn bundled() -> Self {
        Self::from_tsv(BUNDLED_LEXICON, "<bundled>").expect("bundled lexicon parses")
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self, SentimentError> {
        if !(alpha > 0.0) {
            return Err(SentimentError::InvalidAlpha(alpha));
        }
        self.alpha = alpha;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.entries.contains_key(token)
    }

    pub fn valence(&self, token: &str) -> Option<f64> {
        self.entries.get(token).copied()
    }

    /// Tokens in sorted order (used by the synthetic corpus generator, which
    /// needs a platform-stable iteration order).
    pub fn tokens(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(t, &v)| (t.as_str(), v))
    }
}

/// Pluggable sentiment backend. The lexicon backend is fully deterministic;
/// the LLM backend is deterministic modulo the gateway cache.
pub trait SentimentAnalyzer: Send + Sync {
    fn backend_id(&self) -> &str;

    fn analyze(
        &self,
        text: &str,
        gateway: Option<&GatewayHandle>,
    ) -> Result<SentimentDistribution, SentimentError>;
}

/// Deterministic analyzer: bin lexicon-matched tokens by valence threshold,
/// Laplace-smooth the three counts, and normalize. Unmatched tokens are
/// ignored, so an empty or fully-unknown text yields the uniform
/// distribution.
#[derive(Debug, Clone)]
pub struct LexiconAnalyzer {
    lexicon: ValenceLexicon,
    smoothing: SmoothingConfig,
}

impl LexiconAnalyzer {
    pub fn new(lexicon: ValenceLexicon, smoothing: SmoothingConfig) -> Self {
        Self { lexicon, smoothing }
    }

    pub fn lexicon(&self) -> &ValenceLexicon {
        &self.lexicon
    }
}

/// Count-based distribution over (negative, neutral, positive).
pub fn lexicon_analyze(
    text: &str,
    lex: &ValenceLexicon,
    smoothing: &SmoothingConfig,
) -> Result<SentimentDistribution, SentimentError> {
    let mut counts = [0u64; 3];
    for token in tokenize::tokens(text) {
        let Some(valence) = lex.valence(&token) else {
            continue;
        };
        if valence < lex.neg_threshold {
            counts[0] += 1;
        } else if valence > lex.pos_threshold {
            counts[2] += 1;
        } else {
            counts[1] += 1;
        }
    }
    let raw = [
        counts[0] as f64 + lex.alpha,
        counts[1] as f64 + lex.alpha,
        counts[2] as f64 + lex.alpha,
    ];
    Ok(clamp_normalize(raw, smoothing)?)
}

impl SentimentAnalyzer for LexiconAnalyzer {
    fn backend_id(&self) -> &str {
        "lexicon"
    }

    fn analyze(
        &self,
        text: &str,
        _gateway: Option<&GatewayHandle>,
    ) -> Result<SentimentDistribution, SentimentError> {
        lexicon_analyze(text, &self.lexicon, &self.smoothing)
    }
}

/// Wraps any analyzer and counts `analyze` calls. The pipeline promises
/// exactly `1 + I` analyzer calls per sample in rewrite-only mode; this makes
/// that promise checkable.
pub struct CountingAnalyzer<A> {
    inner: A,
    calls: std::sync::atomic::AtomicU64,
}

impl<A: SentimentAnalyzer> CountingAnalyzer<A> {
    pub fn new(inner: A) -> Self {
        Self {
            inner,
            calls: std::sync::atomic::AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(std::sync::atomic::Ordering::SeqCst)
    }
}

impl<A: SentimentAnalyzer> SentimentAnalyzer for CountingAnalyzer<A> {
    fn backend_id(&self) -> &str {
        self.inner.backend_id()
    }

    fn analyze(
        &self,
        text: &str,
        gateway: Option<&GatewayHandle>,
    ) -> Result<SentimentDistribution, SentimentError> {
        self.calls
            .fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        self.inner.analyze(text, gateway)
    }
}

/// Prompt template used by the LLM analyzer; `{text}` is replaced with the
/// input.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct SentimentPrompt {
    pub template: String,
}

impl SentimentPrompt {
    pub fn new(template: impl Into<String>) -> Result<Self, SentimentError> {
        let template = template.into();
        if template.matches(TEMPLATE_PLACEHOLDER).count() != 1 {
            return Err(SentimentError::InvalidTemplate);
        }
        Ok(Self { template })
    }

    pub fn render(&self, text: &str) -> String {
        self.template.replacen(TEMPLATE_PLACEHOLDER, text, 1)
    }
}

impl Default for SentimentPrompt {
    fn default() -> Self {
        Self::new(
            "Estimate the sentiment distribution of the text below. Reply with exactly three \
             comma-separated probabilities for negative, neutral, positive (they should sum \
             to 1) and nothing else.\n\n{text}",
        )
        .expect("default template is valid")
    }
}

/// LLM-backed analyzer: one temperature-0 completion per text, parsed into
/// three numbers, with one format-repair retry on a malformed reply.
#[derive(Debug, Clone)]
pub struct LlmAnalyzer {
    pub endpoint: String,
    pub model: String,
    pub prompt: SentimentPrompt,
    pub seed: Option<u64>,
    smoothing: SmoothingConfig,
}

impl LlmAnalyzer {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        prompt: SentimentPrompt,
        smoothing: SmoothingConfig,
    ) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            prompt,
            seed: None,
            smoothing,
        }
    }

    fn request(&self, content: String) -> CompletionRequest {
        let mut req = CompletionRequest::new(
            self.endpoint.clone(),
            self.model.clone(),
            vec![Message::user(content)],
        );
        req.seed = self.seed;
        req
    }
}

impl SentimentAnalyzer for LlmAnalyzer {
    fn backend_id(&self) -> &str {
        "llm"
    }

    fn analyze(
        &self,
        text: &str,
        gateway: Option<&GatewayHandle>,
    ) -> Result<SentimentDistribution, SentimentError> {
        let gateway = gateway.ok_or(SentimentError::GatewayRequired)?;
        let reply = gateway.complete(&self.request(self.prompt.render(text)))?;
        match parse_reply(&reply) {
            Ok(raw) => Ok(clamp_normalize(raw, &self.smoothing)?),
            Err(_) => {
                let repair = format!(
                    "{}\n\nYour previous reply could not be parsed. Reply with exactly three \
                     comma-separated non-negative numbers (negative, neutral, positive) and \
                     no other text.",
                    self.prompt.render(text)
                );
                let reply = gateway.complete(&self.request(repair))?;
                let raw = parse_reply(&reply)
                    .map_err(|_| SentimentError::MalformedReply { reply })?;
                Ok(clamp_normalize(raw, &self.smoothing)?)
            }
        }
    }
}

/// Extract three finite non-negative numbers (negative, neutral, positive)
/// from an LLM reply. Accepts a JSON array, a JSON object keyed by class
/// name, labeled lines, or any text containing at least three numbers.
pub fn parse_reply(reply: &str) -> Result<[f64; 3], ()> {
    if let Ok(value) = serde_json::from_str::<serde_json::Value>(reply.trim()) {
        if let Some(arr) = value.as_array() {
            if arr.len() == 3 {
                let nums: Vec<f64> = arr.iter().filter_map(|v| v.as_f64()).collect();
                if nums.len() == 3 {
                    return validate([nums[0], nums[1], nums[2]]);
                }
            }
        }
        if let Some(obj) = value.as_object() {
            let get = |k: &str| obj.get(k).and_then(|v| v.as_f64());
            if let (Some(n), Some(u), Some(p)) =
                (get("negative"), get("neutral"), get("positive"))
            {
                return validate([n, u, p]);
            }
        }
    }

    // Labeled lines ("negative: 0.1") in any order.
    let lower = reply.to_lowercase();
    let labeled: Vec<Option<f64>> = ["negative", "neutral", "positive"]
        .iter()
        .map(|label| {
            lower
                .find(label)
                .and_then(|pos| first_number(&lower[pos + label.len()..]))
        })
        .collect();
    if let [Some(n), Some(u), Some(p)] = labeled[..] {
        return validate([n, u, p]);
    }

    // Fall back to the first three numbers in reading order.
    let nums = all_numbers(reply);
    if nums.len() >= 3 {
        return validate([nums[0], nums[1], nums[2]]);
    }
    Err(())
}

fn validate(v: [f64; 3]) -> Result<[f64; 3], ()> {
    if v.iter().all(|x| x.is_finite() && *x >= 0.0) {
        Ok(v)
    } else {
        Err(())
    }
}

fn first_number(s: &str) -> Option<f64> {
    all_numbers(s).into_iter().next()
}

fn all_numbers(s: &str) -> Vec<f64> {
    let mut out = Vec::new();
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit()
            || (bytes[i] == b'-' && i + 1 < bytes.len() && bytes[i + 1].is_ascii_digit())
        {
            let start = i;
            if bytes[i] == b'-' {
                i += 1;
            }
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'.' {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if let Ok(n) = s[start..i].parse::<f64>() {
                out.push(n);
            }
        } else {
            i += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_lexicon() -> ValenceLexicon {
        ValenceLexicon::from_entries([("good", 0.8), ("bad", -0.7)]).unwrap()
    }

    fn analyze(text: &str, lex: &ValenceLexicon) -> SentimentDistribution {
        lexicon_analyze(text, lex, &SmoothingConfig::default()).unwrap()
    }

    #[test]
    fn empty_text_is_uniform() {
        assert_eq!(
            analyze("", &small_lexicon()),
            SentimentDistribution::uniform()
        );
    }

    #[test]
    fn unmatched_tokens_are_uniform() {
        assert_eq!(
            analyze("the of and", &small_lexicon()),
            SentimentDistribution::uniform()
        );
    }

    #[test]
    fn good_good_bad_counts_match_hand_oracle() {
        // n_neg=1, n_neu=0, n_pos=2, alpha=1 -> (2, 1, 3)/6
        let d = analyze("good good bad", &small_lexicon());
        assert!((d.p_neg() - 2.0 / 6.0).abs() < 1e-12);
        assert!((d.p_neu() - 1.0 / 6.0).abs() < 1e-12);
        assert!((d.p_pos() - 3.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn neutral_band_counts_as_neutral() {
        let lex = ValenceLexicon::from_entries([("plain", 0.05), ("meh", -0.1)]).unwrap();
        let d = analyze("plain meh", &lex);
        // two neutral matches: (1, 3, 1)/5
        assert!((d.p_neu() - 3.0 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn mass_strictly_increases_with_matches() {
        let lex = small_lexicon();
        let mut last = analyze("", &lex).p_pos();
        for k in 1..=100 {
            let text = vec!["good"; k].join(" ");
            let p = analyze(&text, &lex).p_pos();
            assert!(p > last, "p_pos not increasing at k={k}");
            last = p;
        }
    }

    #[test]
    fn large_alpha_tends_to_uniform() {
        let lex = small_lexicon().with_alpha(1e9).unwrap();
        let d = analyze("good good good bad", &lex);
        for c in d.components() {
            assert!((c - 1.0 / 3.0).abs() < 1e-8);
        }
    }

    #[test]
    fn tsv_parsing_rejects_bad_lines() {
        let ok = ValenceLexicon::from_tsv("# comment\ngood\t0.5\n\nbad\t-0.5\n", "t").unwrap();
        assert_eq!(ok.len(), 2);

        let out_of_range = ValenceLexicon::from_tsv("good\t0.5\nhuge\t1.5\n", "t");
        match out_of_range {
            Err(SentimentError::LexiconParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }

        assert!(ValenceLexicon::from_tsv("good 0.5\n", "t").is_err());
        assert!(ValenceLexicon::from_tsv("good\t0.5\nGOOD\t0.2\n", "t").is_err());
        assert!(ValenceLexicon::from_tsv("good\tNaN\n", "t").is_err());
    }

    #[test]
    fn bundled_lexicon_loads_and_is_sane() {
        let lex = ValenceLexicon::bundled();
        assert!(lex.len() > 1000, "bundled lexicon has {} entries", lex.len());
        assert!(lex.valence("excellent").unwrap() > 0.5);
        assert!(lex.valence("terrible").unwrap() < -0.5);
        assert!(lex.tokens().all(|(t, v)| {
            t.chars().all(|c| c.is_ascii_alphanumeric()) && (-1.0..=1.0).contains(&v)
        }));
    }

    #[test]
    fn reply_parsing_accepts_documented_shapes() {
        assert_eq!(parse_reply("0.1, 0.7, 0.2").unwrap(), [0.1, 0.7, 0.2]);
        assert_eq!(parse_reply("[0.1, 0.7, 0.2]").unwrap(), [0.1, 0.7, 0.2]);
        assert_eq!(
            parse_reply(r#"{"negative": 0.1, "neutral": 0.7, "positive": 0.2}"#).unwrap(),
            [0.1, 0.7, 0.2]
        );
        assert_eq!(
            parse_reply("negative: 0\nneutral: 0\npositive: 0").unwrap(),
            [0.0, 0.0, 0.0]
        );
        // labeled lines in shuffled order still map by label
        assert_eq!(
            parse_reply("positive: 0.2\nnegative: 0.1\nneutral: 0.7").unwrap(),
            [0.1, 0.7, 0.2]
        );
        assert!(parse_reply("mostly positive").is_err());
        assert!(parse_reply("0.5 and 0.5").is_err());
        assert!(parse_reply("-0.1, 0.7, 0.4").is_err());
    }

    #[test]
    fn template_requires_exactly_one_placeholder() {
        assert!(SentimentPrompt::new("rate: {text}").is_ok());
        assert!(SentimentPrompt::new("no placeholder").is_err());
        assert!(SentimentPrompt::new("{text} and {text}").is_err());
        let p = SentimentPrompt::new("rate: {text}!").unwrap();
        assert_eq!(p.render("hi"), "rate: hi!");
    }

    proptest! {
        #[test]
        fn reorder_and_unmatched_tokens_do_not_change_output(
            perm in proptest::sample::select(vec![
                ["good", "good", "bad"],
                ["good", "bad", "good"],
                ["bad", "good", "good"],
            ]),
            noise in "[xyz]{1,8}",
        ) {
            let lex = small_lexicon();
            let base = analyze("good good bad", &lex);
            let reordered = analyze(&perm.join(" "), &lex);
            prop_assert_eq!(base, reordered);

            // `noise` only uses letters absent from the lexicon
            let with_noise = analyze(&format!("good {noise} good bad"), &lex);
            prop_assert_eq!(base, with_noise);
        }

        #[test]
        fn output_is_always_a_valid_distribution(text in ".{0,120}") {
            let d = analyze(&text, &ValenceLexicon::bundled());
            let sum: f64 = d.components().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(d.components().iter().all(|&c| c > 0.0 && c <= 1.0));
        }
    }
}
