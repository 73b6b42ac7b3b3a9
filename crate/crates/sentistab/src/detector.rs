//! Per-sample detection and threshold calibration.
//!
//! [`detect`] runs the full pipeline for one sample (rewrite, analyze,
//! score) and applies the decision rule: a text is flagged as LLM-generated
//! when the selected divergence score is strictly below the threshold; ties
//! go to `human`. [`calibrate`] sweeps every candidate threshold over a
//! scored, labeled set and returns the F1-optimal one.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Label, TextSample};
use crate::gateway::{Gateway, GatewayHandle};
use crate::rewrite::{build_stability_record, PromptSet, RecordOptions, RewriteError, Rewriter};
use crate::sentiment::SentimentAnalyzer;
use crate::stability::{
    sdc_score, sdp_score, signed_divergence, DivergenceScore, StabilityError, StabilityRecord,
};
use crate::tokenize;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("sample {sample_id}: text is empty after tokenization")]
    EmptyText { sample_id: String },
    #[error("duplicate sample id {0:?} in batch")]
    DuplicateId(String),
    #[error("sample {sample_id}: {source}")]
    Rewrite {
        sample_id: String,
        #[source]
        source: RewriteError,
    },
    #[error("sample {sample_id}: {source}")]
    Stability {
        sample_id: String,
        #[source]
        source: StabilityError,
    },
    #[error("calibration input is empty")]
    EmptyInput,
    #[error("calibration requires both llm and human labels")]
    SingleClassInput,
    #[error("sample {0:?} has a non-finite score")]
    NonFiniteScore(String),
}

/// Which divergence score drives the verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Sdc,
    Sdp,
    Signed,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Sdc => "sdc",
            Metric::Sdp => "sdp",
            Metric::Signed => "signed",
        })
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sdc" => Ok(Metric::Sdc),
            "sdp" => Ok(Metric::Sdp),
            "signed" => Ok(Metric::Signed),
            other => Err(format!("unknown metric {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Llm,
    Human,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Llm => "llm",
            Verdict::Human => "human",
        })
    }
}

impl std::str::FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "llm" => Ok(Verdict::Llm),
            "human" => Ok(Verdict::Human),
            other => Err(format!("unknown verdict {other:?}")),
        }
    }
}

/// The decision rule: LLM-generated iff `score < threshold` (strict, so an
/// exact tie is `human`).
pub fn verdict_for(score: f64, threshold: f64) -> Verdict {
    if score < threshold {
        Verdict::Llm
    } else {
        Verdict::Human
    }
}

/// Everything a detection run needs. The threshold only means something
/// together with its metric, so the two always travel as a pair.
#[derive(Clone)]
pub struct DetectorConfig {
    pub metric: Metric,
    pub threshold: f64,
    pub prompts: PromptSet,
    pub analyzer: Arc<dyn SentimentAnalyzer>,
    pub rewriter: Arc<dyn Rewriter>,
    pub gateway: Option<Arc<Gateway>>,
    /// Round-trip the first prompt's rewrite instead of the original text
    /// when computing the preservation score.
    pub sdp_on_rewrite: bool,
}

impl DetectorConfig {
    fn record_options(&self) -> RecordOptions {
        RecordOptions {
            include_round_trips: self.metric == Metric::Sdp,
            sdp_on_rewrite: self.sdp_on_rewrite,
        }
    }
}

/// Serialized outcome for one sample.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DetectionResult {
    pub sample_id: String,
    pub scores: DivergenceScore,
    pub verdict: Verdict,
    pub threshold_used: f64,
    pub metric_used: Metric,
    pub llm_call_count: u64,
}

impl DetectionResult {
    /// The score the verdict was derived from.
    pub fn selected_score(&self) -> Option<f64> {
        match self.metric_used {
            Metric::Sdc => Some(self.scores.sdc),
            Metric::Sdp => self.scores.sdp,
            Metric::Signed => self.scores.signed,
        }
    }
}

/// A result together with the record it was scored from (the record carries
/// the feature embedding).
#[derive(Debug, Clone)]
pub struct Detection {
    pub result: DetectionResult,
    pub record: StabilityRecord,
}

/// Run the pipeline for one sample and keep the underlying record.
pub fn detect_with_record(
    sample: &TextSample,
    cfg: &DetectorConfig,
) -> Result<Detection, DetectError> {
    if tokenize::word_count(&sample.text) == 0 {
        return Err(DetectError::EmptyText {
            sample_id: sample.id.clone(),
        });
    }
    let handle = cfg.gateway.as_ref().map(|g| GatewayHandle::new(g.clone()));
    let record = build_stability_record(
        &sample.text,
        &cfg.prompts,
        cfg.rewriter.as_ref(),
        cfg.analyzer.as_ref(),
        &cfg.record_options(),
        handle.as_ref(),
    )
    .map_err(|source| DetectError::Rewrite {
        sample_id: sample.id.clone(),
        source,
    })?;

    let stability_err = |source| DetectError::Stability {
        sample_id: sample.id.clone(),
        source,
    };
    let sdc = sdc_score(&record).map_err(stability_err)?;
    let signed = signed_divergence(&record).map_err(|source| DetectError::Stability {
        sample_id: sample.id.clone(),
        source,
    })?;
    let sdp = match &record.round_trips {
        Some(trips) if !trips.is_empty() => {
            Some(sdp_score(&record).map_err(|source| DetectError::Stability {
                sample_id: sample.id.clone(),
                source,
            })?)
        }
        _ => None,
    };
    let scores = DivergenceScore {
        sdc,
        sdp,
        signed: Some(signed),
    };
    let selected = match cfg.metric {
        Metric::Sdc => sdc,
        Metric::Signed => signed,
        Metric::Sdp => sdp.ok_or(DetectError::Stability {
            sample_id: sample.id.clone(),
            source: StabilityError::EmptyRoundTrips,
        })?,
    };
    Ok(Detection {
        result: DetectionResult {
            sample_id: sample.id.clone(),
            scores,
            verdict: verdict_for(selected, cfg.threshold),
            threshold_used: cfg.threshold,
            metric_used: cfg.metric,
            llm_call_count: handle.map(|h| h.calls()).unwrap_or(0),
        },
        record,
    })
}

/// Classify one sample.
pub fn detect(sample: &TextSample, cfg: &DetectorConfig) -> Result<DetectionResult, DetectError> {
    detect_with_record(sample, cfg).map(|d| d.result)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct BatchError {
    pub sample_id: String,
    pub message: String,
}

/// Outcome of a fail-soft batch run: successful detections in input order
/// plus one recorded error per failed sample.
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub detections: Vec<Detection>,
    pub errors: Vec<BatchError>,
}

impl BatchOutcome {
    pub fn results(&self) -> Vec<&DetectionResult> {
        self.detections.iter().map(|d| &d.result).collect()
    }
}

/// Detect every sample, `parallelism` at a time. Per-sample failures do not
/// abort the batch; outputs are in input order regardless of schedule.
pub fn detect_batch(
    samples: &[TextSample],
    cfg: &DetectorConfig,
    parallelism: usize,
) -> Result<BatchOutcome, DetectError> {
    let mut seen = std::collections::HashSet::new();
    for s in samples {
        if !seen.insert(s.id.as_str()) {
            return Err(DetectError::DuplicateId(s.id.clone()));
        }
    }

    let n = samples.len();
    let slots: Mutex<Vec<Option<Result<Detection, DetectError>>>> =
        Mutex::new((0..n).map(|_| None).collect());
    let cursor = AtomicUsize::new(0);
    let workers = parallelism.max(1).min(n.max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let outcome = detect_with_record(&samples[i], cfg);
                slots.lock().unwrap()[i] = Some(outcome);
            });
        }
    });

    let mut detections = Vec::with_capacity(n);
    let mut errors = Vec::new();
    for (i, slot) in slots.into_inner().unwrap().into_iter().enumerate() {
        match slot.expect("every slot filled") {
            Ok(d) => detections.push(d),
            Err(e) => errors.push(BatchError {
                sample_id: samples[i].id.clone(),
                message: e.to_string(),
            }),
        }
    }
    Ok(BatchOutcome { detections, errors })
}

/// One scored, labeled sample for calibration.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScoreRow {
    pub id: String,
    pub label: Label,
    pub score: f64,
}

/// Result of a threshold sweep.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CalibrationReport {
    pub best_threshold: f64,
    pub best_f1: f64,
    pub roc_points: Vec<(f64, f64)>,
    pub score_table: Vec<ScoreRow>,
}

fn f1_at(scored: &[(f64, Label)], threshold: f64) -> (f64, f64, f64) {
    let (mut tp, mut fp, mut tn, mut fne) = (0u64, 0u64, 0u64, 0u64);
    for &(score, label) in scored {
        let predicted_llm = score < threshold;
        match (predicted_llm, label) {
            (true, Label::Llm) => tp += 1,
            (true, Label::Human) => fp += 1,
            (false, Label::Human) => tn += 1,
            (false, Label::Llm) => fne += 1,
            _ => {}
        }
    }
    let positives = (tp + fne) as f64;
    let negatives = (fp + tn) as f64;
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if positives > 0.0 {
        tp as f64 / positives
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let fpr = if negatives > 0.0 {
        fp as f64 / negatives
    } else {
        0.0
    };
    (f1, fpr, recall)
}

/// Sweep every candidate threshold (midpoints between adjacent distinct
/// scores, plus below-min and above-max sentinels) and return the one that
/// maximizes F1 with `llm` as the positive class. Ties break toward the
/// smaller threshold. Rows labeled `unknown` appear in the score table but
/// do not influence the sweep.
pub fn calibrate(rows: &[ScoreRow]) -> Result<CalibrationReport, DetectError> {
    if rows.is_empty() {
        return Err(DetectError::EmptyInput);
    }
    if let Some(bad) = rows.iter().find(|r| !r.score.is_finite()) {
        return Err(DetectError::NonFiniteScore(bad.id.clone()));
    }
    let scored: Vec<(f64, Label)> = rows
        .iter()
        .filter(|r| r.label != Label::Unknown)
        .map(|r| (r.score, r.label))
        .collect();
    let has_llm = scored.iter().any(|(_, l)| *l == Label::Llm);
    let has_human = scored.iter().any(|(_, l)| *l == Label::Human);
    if !has_llm || !has_human {
        return Err(DetectError::SingleClassInput);
    }

    let mut distinct: Vec<f64> = scored.iter().map(|(s, _)| *s).collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("scores are finite"));
    distinct.dedup();

    let mut candidates = Vec::with_capacity(distinct.len() + 1);
    candidates.push(distinct[0] - 1.0);
    for pair in distinct.windows(2) {
        candidates.push(pair[0] + (pair[1] - pair[0]) / 2.0);
    }
    candidates.push(distinct[distinct.len() - 1] + 1.0);

    let mut best_threshold = candidates[0];
    let mut best_f1 = -1.0;
    let mut roc_points = Vec::with_capacity(candidates.len());
    for &threshold in &candidates {
        let (f1, fpr, tpr) = f1_at(&scored, threshold);
        roc_points.push((fpr, tpr));
        if f1 > best_f1 {
            best_f1 = f1;
            best_threshold = threshold;
        }
    }

    Ok(CalibrationReport {
        best_threshold,
        best_f1,
        roc_points,
        score_table: rows.to_vec(),
    })
}
