//! Sentiment distribution types and the divergence scores computed from them.
//!
//! A [`SentimentDistribution`] is a probability vector over (negative,
//! neutral, positive). A [`StabilityRecord`] collects the distribution of an
//! original text together with the distributions of its rewrites (and
//! optionally its forward/inverse round trips). The scores defined here
//! measure how far the rewrites drifted from the original in log space:
//!
//! * [`sdc_score`] — mean L1 distance between log distributions of the
//!   original and each rewrite (consistency; low means stable).
//! * [`sdp_score`] — same L1-of-log distance against round-tripped text
//!   (preservation).
//! * [`signed_divergence`] — the signed log-ratio statistic, summed over
//!   classes and averaged over rewrites.
//!
//! All logs are natural logs. Distributions are floored at a small delta and
//! renormalized before any log is taken, so every score is finite.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fixed class order used everywhere, including serialization.
pub const CLASS_ORDER: [&str; 3] = ["negative", "neutral", "positive"];

#[derive(Debug, Error, PartialEq)]
pub enum StabilityError {
    #[error("distribution component is NaN or infinite")]
    NonFiniteInput,
    #[error("distribution component is negative")]
    NegativeInput,
    #[error("stability record has no rewrites")]
    EmptyRewrites,
    #[error("stability record has no round trips")]
    EmptyRoundTrips,
    #[error("invalid smoothing delta {0} (must be in (0, 1/3))")]
    InvalidDelta(f64),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
}

/// Floor applied to distribution components before logs are taken.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SmoothingConfig {
    pub delta: f64,
}

impl SmoothingConfig {
    pub fn new(delta: f64) -> Result<Self, StabilityError> {
        if !(delta > 0.0 && delta < 1.0 / 3.0) {
            return Err(StabilityError::InvalidDelta(delta));
        }
        Ok(Self { delta })
    }
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self { delta: 1e-6 }
    }
}

/// Probability vector over (negative, neutral, positive).
///
/// Always holds a valid clamped distribution: components in (0, 1], summing
/// to 1, each at least `delta / (1 + 3 delta)` for the delta it was built
/// with, so taking logs is always safe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct SentimentDistribution {
    p_neg: f64,
    p_neu: f64,
    p_pos: f64,
}

impl SentimentDistribution {
    pub fn p_neg(&self) -> f64 {
        self.p_neg
    }

    pub fn p_neu(&self) -> f64 {
        self.p_neu
    }

    pub fn p_pos(&self) -> f64 {
        self.p_pos
    }

    /// Components in fixed class order (negative, neutral, positive).
    pub fn components(&self) -> [f64; 3] {
        [self.p_neg, self.p_neu, self.p_pos]
    }

    /// The uniform distribution (1/3, 1/3, 1/3).
    pub fn uniform() -> Self {
        let third = 1.0 / 3.0;
        Self {
            p_neg: third,
            p_neu: third,
            p_pos: third,
        }
    }

    fn ln_components(&self) -> [f64; 3] {
        [self.p_neg.ln(), self.p_neu.ln(), self.p_pos.ln()]
    }
}

impl TryFrom<[f64; 3]> for SentimentDistribution {
    type Error = StabilityError;

    fn try_from(v: [f64; 3]) -> Result<Self, Self::Error> {
        if v.iter().any(|c| !c.is_finite()) {
            return Err(StabilityError::NonFiniteInput);
        }
        if v.iter().any(|&c| c < 0.0 || c > 1.0) {
            return Err(StabilityError::InvalidDistribution(format!(
                "component outside [0, 1]: {v:?}"
            )));
        }
        let sum: f64 = v.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(StabilityError::InvalidDistribution(format!(
                "components sum to {sum}, expected 1"
            )));
        }
        Ok(Self {
            p_neg: v[0],
            p_neu: v[1],
            p_pos: v[2],
        })
    }
}

impl From<SentimentDistribution> for [f64; 3] {
    fn from(d: SentimentDistribution) -> [f64; 3] {
        d.components()
    }
}

/// Turn a raw non-negative 3-vector into a valid clamped distribution.
///
/// The all-zero vector maps to uniform. Otherwise the vector is normalized,
/// floored at `cfg.delta`, and renormalized. Flooring keeps every log finite;
/// after the final renormalization each component is at least
/// `delta / (1 + 3 delta)`.
pub fn clamp_normalize(
    raw: [f64; 3],
    cfg: &SmoothingConfig,
) -> Result<SentimentDistribution, StabilityError> {
    if raw.iter().any(|c| !c.is_finite()) {
        return Err(StabilityError::NonFiniteInput);
    }
    if raw.iter().any(|&c| c < 0.0) {
        return Err(StabilityError::NegativeInput);
    }
    let sum: f64 = raw.iter().sum();
    if sum == 0.0 {
        return Ok(SentimentDistribution::uniform());
    }
    let mut v = raw.map(|c| (c / sum).max(cfg.delta));
    let sum2: f64 = v.iter().sum();
    v = v.map(|c| c / sum2);
    Ok(SentimentDistribution {
        p_neg: v[0],
        p_neu: v[1],
        p_pos: v[2],
    })
}

/// Distribution of an original text plus the distributions of its rewrites
/// and (optionally) its forward/inverse round trips, each keyed by the prompt
/// or pair id that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityRecord {
    pub original: SentimentDistribution,
    pub rewrites: Vec<(String, SentimentDistribution)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round_trips: Option<Vec<(String, SentimentDistribution)>>,
}

/// Scores derived from one [`StabilityRecord`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct DivergenceScore {
    pub sdc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sdp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signed: Option<f64>,
}

fn l1_log_distance(a: &SentimentDistribution, b: &SentimentDistribution) -> f64 {
    let la = a.ln_components();
    let lb = b.ln_components();
    (0..3).map(|c| (la[c] - lb[c]).abs()).sum()
}

fn mean_l1_log(
    original: &SentimentDistribution,
    others: &[(String, SentimentDistribution)],
) -> f64 {
    let total: f64 = others
        .iter()
        .map(|(_, d)| l1_log_distance(original, d))
        .sum();
    total / others.len() as f64
}

/// Sentiment distribution consistency: mean over rewrites of the L1 distance
/// between log distributions of the original and the rewrite. Zero exactly
/// when every rewrite distribution equals the original.
pub fn sdc_score(rec: &StabilityRecord) -> Result<f64, StabilityError> {
    if rec.rewrites.is_empty() {
        return Err(StabilityError::EmptyRewrites);
    }
    Ok(mean_l1_log(&rec.original, &rec.rewrites))
}

/// Sentiment distribution preservation: the same L1-of-log distance, taken
/// against the round-tripped distributions instead of the rewrites.
pub fn sdp_score(rec: &StabilityRecord) -> Result<f64, StabilityError> {
    let trips = rec
        .round_trips
        .as_deref()
        .filter(|t| !t.is_empty())
        .ok_or(StabilityError::EmptyRoundTrips)?;
    Ok(mean_l1_log(&rec.original, trips))
}

/// Signed divergence: sum over classes of
/// `log p_c(original) - mean_i log p_c(rewrite_i)`. Unlike the L1 scores this
/// keeps the direction of the shift and is antisymmetric under swapping the
/// original with a single rewrite.
pub fn signed_divergence(rec: &StabilityRecord) -> Result<f64, StabilityError> {
    if rec.rewrites.is_empty() {
        return Err(StabilityError::EmptyRewrites);
    }
    let lo = rec.original.ln_components();
    let n = rec.rewrites.len() as f64;
    let mut total = 0.0;
    for c in 0..3 {
        let mean_rw: f64 = rec
            .rewrites
            .iter()
            .map(|(_, d)| d.ln_components()[c])
            .sum::<f64>()
            / n;
        total += lo[c] - mean_rw;
    }
    Ok(total)
}

/// Concatenation `[p(original), p(rewrite_1), ..., p(rewrite_I)]` in fixed
/// class order; length `3 * (1 + I)`. Rewrites are taken in list order, which
/// [`crate::rewrite::build_stability_record`] keeps aligned with the prompt
/// registry.
pub fn feature_embedding(rec: &StabilityRecord) -> Result<Vec<f64>, StabilityError> {
    if rec.rewrites.is_empty() {
        return Err(StabilityError::EmptyRewrites);
    }
    let mut out = Vec::with_capacity(3 * (1 + rec.rewrites.len()));
    out.extend_from_slice(&rec.original.components());
    for (_, d) in &rec.rewrites {
        out.extend_from_slice(&d.components());
    }
    Ok(out)
}
