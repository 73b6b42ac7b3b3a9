//! Detection metrics and the experiment harness.
//!
//! [`compute_metrics`] turns scored verdicts into precision / recall / F1 /
//! AUROC with `llm` as the positive class. Because the decision rule flags
//! *low* scores as LLM-generated, AUROC is the probability that a random llm
//! sample scores below a random human sample (ties count one half).
//!
//! [`run_experiment`] drives the five protocols (main run plus the
//! paraphrase-ratio, perturbation-rate, text-length, and prompt-count
//! sweeps), writing a scores CSV, a feature-embedding CSV, and a metrics
//! JSON per run. Metrics are a pure function of the scores CSV, so a report
//! can always be regenerated from it.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{length_bucket, Corpus, Label, TextSample};
use crate::detector::{
    calibrate, detect_batch, verdict_for, BatchError, DetectorConfig, Metric, ScoreRow, Verdict,
};
use crate::robustness::{lexical_perturb, paraphrase_mix};
use crate::stability::feature_embedding;
use crate::tokenize;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("metrics input is empty")]
    EmptyInput,
    #[error("metrics input row is unlabeled")]
    UnlabeledRow,
    #[error("metrics require both llm and human labels")]
    SingleClassInput,
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Detect(#[from] crate::detector::DetectError),
    #[error("failed to write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error at {path}: {source}")]
    Csv { path: String, source: csv::Error },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct MetricsBundle {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auroc: f64,
    pub confusion: Confusion,
}

/// One row of metrics input: the raw score, the verdict issued for it, and
/// the ground truth.
#[derive(Debug, Clone, Copy)]
pub struct ScoredVerdict {
    pub score: f64,
    pub verdict: Verdict,
    pub label: Label,
}

/// Confusion counts, precision/recall/F1 (`llm` positive, F1 = 0 when
/// P + R = 0), and rank-based AUROC.
pub fn compute_metrics(rows: &[ScoredVerdict]) -> Result<MetricsBundle, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if rows.iter().any(|r| r.label == Label::Unknown) {
        return Err(EvalError::UnlabeledRow);
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for r in rows {
        match (r.verdict, r.label) {
            (Verdict::Llm, Label::Llm) => tp += 1,
            (Verdict::Llm, Label::Human) => fp += 1,
            (Verdict::Human, Label::Human) => tn += 1,
            (Verdict::Human, Label::Llm) => fn_ += 1,
            _ => unreachable!("unknown labels rejected above"),
        }
    }
    if tp + fn_ == 0 || fp + tn == 0 {
        return Err(EvalError::SingleClassInput);
    }
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = tp as f64 / (tp + fn_) as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };

    let llm_scores: Vec<f64> = rows
        .iter()
        .filter(|r| r.label == Label::Llm)
        .map(|r| r.score)
        .collect();
    let human_scores: Vec<f64> = rows
        .iter()
        .filter(|r| r.label == Label::Human)
        .map(|r| r.score)
        .collect();
    let mut favorable = 0.0f64;
    for &l in &llm_scores {
        for &h in &human_scores {
            if l < h {
                favorable += 1.0;
            } else if l == h {
                favorable += 0.5;
            }
        }
    }
    let auroc = favorable / (llm_scores.len() as f64 * human_scores.len() as f64);

    Ok(MetricsBundle {
        precision,
        recall,
        f1,
        auroc,
        confusion: Confusion { tp, fp, tn, fn_ },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Main,
    ParaphraseSweep,
    PerturbSweep,
    LengthSweep,
    PromptCountSweep,
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Protocol::Main => "main",
            Protocol::ParaphraseSweep => "paraphrase_sweep",
            Protocol::PerturbSweep => "perturb_sweep",
            Protocol::LengthSweep => "length_sweep",
            Protocol::PromptCountSweep => "prompt_count_sweep",
        })
    }
}

/// A fully resolved experiment: detector, corpus, protocol, sweep points.
pub struct ExperimentConfig {
    pub protocol: Protocol,
    pub detector: DetectorConfig,
    pub corpus: Corpus,
    /// Id-matched paraphrased counterparts (paraphrase sweep only).
    pub paraphrase_corpus: Option<Corpus>,
    pub sweep: Vec<f64>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub jobs: usize,
    /// Re-threshold at the F1-optimal point per sweep point (the default)
    /// instead of using the configured threshold as-is.
    pub calibrate_threshold: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        let err = |msg: String| Err(EvalError::Config(msg));
        if self.jobs == 0 {
            return err("jobs: must be at least 1".into());
        }
        if self.sweep.windows(2).any(|w| w[0] >= w[1]) {
            return err("sweep: values must be strictly ascending".into());
        }
        if self.sweep.iter().any(|v| !v.is_finite()) {
            return err("sweep: values must be finite".into());
        }
        match self.protocol {
            Protocol::Main => {
                if !self.sweep.is_empty() {
                    return err("sweep: must be empty for the main protocol".into());
                }
            }
            Protocol::ParaphraseSweep => {
                if self.sweep.is_empty() {
                    return err("sweep: at least one ratio is required".into());
                }
                if let Some(bad) = self.sweep.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return err(format!("sweep: ratio {bad} outside [0, 1]"));
                }
                if self.paraphrase_corpus.is_none() {
                    return err("paraphrase_corpus: required for the paraphrase sweep".into());
                }
            }
            Protocol::PerturbSweep => {
                if self.sweep.is_empty() {
                    return err("sweep: at least one rate is required".into());
                }
                if let Some(bad) = self.sweep.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return err(format!("sweep: rate {bad} outside [0, 1]"));
                }
            }
            Protocol::LengthSweep => {
                if self.sweep.is_empty() {
                    return err("sweep: at least one length center is required".into());
                }
                if let Some(bad) = self
                    .sweep
                    .iter()
                    .find(|v| **v < 1.0 || v.fract() != 0.0)
                {
                    return err(format!("sweep: length center {bad} must be a positive integer"));
                }
            }
            Protocol::PromptCountSweep => {
                if self.sweep.is_empty() {
                    return err("sweep: at least one prompt count is required".into());
                }
                let available = self.detector.prompts.prompt_count();
                if let Some(bad) = self
                    .sweep
                    .iter()
                    .find(|v| **v < 1.0 || v.fract() != 0.0 || **v > available as f64)
                {
                    return err(format!(
                        "sweep: prompt count {bad} must be an integer in 1..={available}"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Metrics and bookkeeping for one sweep point (or the single main-protocol
/// row).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SweepRow {
    pub sweep_value: Option<f64>,
    pub count: usize,
    pub threshold: Option<f64>,
    pub metrics: Option<MetricsBundle>,
    pub errors: Vec<BatchError>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentReport {
    pub protocol: Protocol,
    pub metric: Metric,
    pub rows: Vec<SweepRow>,
}

impl ExperimentReport {
    pub fn error_count(&self) -> usize {
        self.rows.iter().map(|r| r.errors.len()).sum()
    }
}

/// One line of the scores CSV
/// (`id,label,word_count,sdc,sdp,signed,verdict`).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CsvScoreRow {
    pub id: String,
    pub label: Label,
    pub word_count: usize,
    pub sdc: f64,
    pub sdp: Option<f64>,
    pub signed: Option<f64>,
    pub verdict: Verdict,
}

impl CsvScoreRow {
    pub fn selected_score(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Sdc => Some(self.sdc),
            Metric::Sdp => self.sdp,
            Metric::Signed => self.signed,
        }
    }
}

/// Recompute the metrics bundle from scores-CSV rows alone (labeled rows
/// only). This is the regeneration path for a written report.
pub fn metrics_from_rows(rows: &[CsvScoreRow], metric: Metric) -> Result<MetricsBundle, EvalError> {
    let scored: Vec<ScoredVerdict> = rows
        .iter()
        .filter(|r| r.label != Label::Unknown)
        .map(|r| {
            Ok(ScoredVerdict {
                score: r
                    .selected_score(metric)
                    .ok_or_else(|| EvalError::Config(format!("row {} lacks {metric}", r.id)))?,
                verdict: r.verdict,
                label: r.label,
            })
        })
        .collect::<Result<_, EvalError>>()?;
    compute_metrics(&scored)
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<CsvScoreRow>, EvalError> {
    let mut reader = csv::Reader::from_path(path).map_err(|source| EvalError::Csv {
        path: path.display().to_string(),
        source,
    })?;
    reader
        .deserialize()
        .collect::<Result<Vec<CsvScoreRow>, csv::Error>>()
        .map_err(|source| EvalError::Csv {
            path: path.display().to_string(),
            source,
        })
}

struct PointOutcome {
    row: SweepRow,
    scores: Vec<CsvScoreRow>,
    embeddings: Vec<(String, Label, Vec<f64>)>,
}

/// Run one corpus through the detector, calibrate if asked, and assemble the
/// row plus its CSV payloads.
fn run_point(
    samples: &[TextSample],
    detector: &DetectorConfig,
    jobs: usize,
    calibrate_threshold: bool,
    sweep_value: Option<f64>,
) -> Result<PointOutcome, EvalError> {
    if samples.is_empty() {
        return Ok(PointOutcome {
            row: SweepRow {
                sweep_value,
                count: 0,
                threshold: None,
                metrics: None,
                errors: Vec::new(),
            },
            scores: Vec::new(),
            embeddings: Vec::new(),
        });
    }
    let outcome = detect_batch(samples, detector, jobs)?;
    let labels: HashMap<&str, Label> = samples.iter().map(|s| (s.id.as_str(), s.label)).collect();

    let mut score_rows: Vec<ScoreRow> = Vec::new();
    for d in &outcome.detections {
        let label = labels[d.result.sample_id.as_str()];
        if label == Label::Unknown {
            continue;
        }
        score_rows.push(ScoreRow {
            id: d.result.sample_id.clone(),
            label,
            score: d
                .result
                .selected_score()
                .expect("configured metric always scored"),
        });
    }

    let threshold = if calibrate_threshold {
        match calibrate(&score_rows) {
            Ok(report) => report.best_threshold,
            Err(_) => detector.threshold,
        }
    } else {
        detector.threshold
    };

    let texts: HashMap<&str, &TextSample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut csv_rows = Vec::with_capacity(outcome.detections.len());
    let mut embeddings = Vec::with_capacity(outcome.detections.len());
    let mut scored = Vec::new();
    for d in &outcome.detections {
        let sample = texts[d.result.sample_id.as_str()];
        let score = d
            .result
            .selected_score()
            .expect("configured metric always scored");
        let verdict = verdict_for(score, threshold);
        csv_rows.push(CsvScoreRow {
            id: d.result.sample_id.clone(),
            label: sample.label,
            word_count: tokenize::word_count(&sample.text),
            sdc: d.result.scores.sdc,
            sdp: d.result.scores.sdp,
            signed: d.result.scores.signed,
            verdict,
        });
        embeddings.push((
            d.result.sample_id.clone(),
            sample.label,
            feature_embedding(&d.record).expect("record has rewrites"),
        ));
        if sample.label != Label::Unknown {
            scored.push(ScoredVerdict {
                score,
                verdict,
                label: sample.label,
            });
        }
    }

    let metrics = compute_metrics(&scored).ok();
    Ok(PointOutcome {
        row: SweepRow {
            sweep_value,
            count: outcome.detections.len(),
            threshold: Some(threshold),
            metrics,
            errors: outcome.errors,
        },
        scores: csv_rows,
        embeddings,
    })
}

fn transformed_corpus(
    cfg: &ExperimentConfig,
    value: f64,
) -> Result<(Vec<TextSample>, Vec<BatchError>), EvalError> {
    let mut errors = Vec::new();
    let samples = match cfg.protocol {
        Protocol::Main => cfg.corpus.samples.clone(),
        Protocol::LengthSweep => {
            length_bucket(&cfg.corpus, value as usize, 10).samples
        }
        Protocol::PerturbSweep => cfg
            .corpus
            .samples
            .iter()
            .map(|s| {
                let mut attacked = s.clone();
                attacked.text = lexical_perturb(&s.text, value, cfg.seed);
                attacked
            })
            .collect(),
        Protocol::ParaphraseSweep => {
            let para = cfg
                .paraphrase_corpus
                .as_ref()
                .expect("validated: paraphrase corpus present");
            let by_id: HashMap<&str, &TextSample> =
                para.samples.iter().map(|s| (s.id.as_str(), s)).collect();
            let mut out = Vec::with_capacity(cfg.corpus.samples.len());
            for s in &cfg.corpus.samples {
                let Some(p) = by_id.get(s.id.as_str()) else {
                    errors.push(BatchError {
                        sample_id: s.id.clone(),
                        message: "no paraphrased counterpart".into(),
                    });
                    continue;
                };
                match paraphrase_mix(&s.text, &p.text, value, cfg.seed) {
                    Ok(text) => {
                        let mut attacked = s.clone();
                        attacked.text = text;
                        out.push(attacked);
                    }
                    Err(e) => errors.push(BatchError {
                        sample_id: s.id.clone(),
                        message: e.to_string(),
                    }),
                }
            }
            out
        }
        Protocol::PromptCountSweep => cfg.corpus.samples.clone(),
    };
    Ok((samples, errors))
}

/// Execute the experiment and write `scores[_v].csv`, `embedding[_v].csv`,
/// and `metrics.json` into the output directory. Deterministic for a warm
/// cache; per-sample failures are recorded in their row rather than aborting
/// the run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, EvalError> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|source| EvalError::Io {
        path: cfg.output_dir.display().to_string(),
        source,
    })?;

    let points: Vec<Option<f64>> = match cfg.protocol {
        Protocol::Main => vec![None],
        _ => cfg.sweep.iter().map(|&v| Some(v)).collect(),
    };

    let mut rows = Vec::with_capacity(points.len());
    for point in points {
        let value = point.unwrap_or(0.0);
        let (samples, mut transform_errors) = transformed_corpus(cfg, value)?;

        let detector = if cfg.protocol == Protocol::PromptCountSweep {
            let mut d = cfg.detector.clone();
            d.prompts.ler.truncate(value as usize);
            d
        } else {
            cfg.detector.clone()
        };

        let mut outcome = run_point(
            &samples,
            &detector,
            cfg.jobs,
            cfg.calibrate_threshold,
            point,
        )?;
        outcome.row.errors.append(&mut transform_errors);

        let suffix = point.map(|v| format!("_{v}")).unwrap_or_default();
        write_scores_csv(
            &cfg.output_dir.join(format!("scores{suffix}.csv")),
            &outcome.scores,
        )?;
        write_embedding_csv(
            &cfg.output_dir.join(format!("embedding{suffix}.csv")),
            &outcome.embeddings,
        )?;
        rows.push(outcome.row);
    }

    let report = ExperimentReport {
        protocol: cfg.protocol,
        metric: cfg.detector.metric,
        rows,
    };
    let path = cfg.output_dir.join("metrics.json");
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&path, json).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(report)
}

pub fn write_scores_csv(path: &Path, rows: &[CsvScoreRow]) -> Result<(), EvalError> {
    let mut writer = csv::Writer::from_path(path).map_err(|source| EvalError::Csv {
        path: path.display().to_string(),
        source,
    })?;
    for row in rows {
        writer.serialize(row).map_err(|source| EvalError::Csv {
            path: path.display().to_string(),
            source,
        })?;
    }
    writer.flush().map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Embedding CSV: `id,label,f0..f{3(1+I)-1}`.
pub fn write_embedding_csv(
    path: &Path,
    embeddings: &[(String, Label, Vec<f64>)],
) -> Result<(), EvalError> {
    let mut writer = csv::Writer::from_path(path).map_err(|source| EvalError::Csv {
        path: path.display().to_string(),
        source,
    })?;
    let dim = embeddings.first().map(|(_, _, e)| e.len()).unwrap_or(0);
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..dim).map(|i| format!("f{i}")));
    let csv_err = |source| EvalError::Csv {
        path: path.display().to_string(),
        source,
    };
    writer.write_record(&header).map_err(csv_err)?;
    for (id, label, emb) in embeddings {
        let mut record = vec![id.clone(), label.to_string()];
        record.extend(emb.iter().map(|f| f.to_string()));
        writer.write_record(&record).map_err(csv_err)?;
    }
    writer.flush().map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(score: f64, verdict: Verdict, label: Label) -> ScoredVerdict {
        ScoredVerdict {
            score,
            verdict,
            label,
        }
    }

    #[test]
    fn perfect_predictions_give_f1_one() {
        let rows = vec![
            sv(0.1, Verdict::Llm, Label::Llm),
            sv(0.2, Verdict::Llm, Label::Llm),
            sv(0.9, Verdict::Human, Label::Human),
        ];
        let m = compute_metrics(&rows).unwrap();
        assert_eq!(m.f1, 1.0);
        assert_eq!(m.auroc, 1.0);
        assert_eq!(m.confusion.tp, 2);
        assert_eq!(m.confusion.tn, 1);
    }

    #[test]
    fn hand_arithmetic_fixture() {
        // tp=2, fp=1, fn=1, tn=1 -> precision 2/3, recall 2/3, f1 2/3
        let rows = vec![
            sv(0.1, Verdict::Llm, Label::Llm),
            sv(0.2, Verdict::Llm, Label::Llm),
            sv(0.3, Verdict::Llm, Label::Human),
            sv(0.4, Verdict::Human, Label::Llm),
            sv(0.9, Verdict::Human, Label::Human),
        ];
        let m = compute_metrics(&rows).unwrap();
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
        let total = m.confusion.tp + m.confusion.fp + m.confusion.tn + m.confusion.fn_;
        assert_eq!(total as usize, rows.len());
    }

    #[test]
    fn no_llm_verdicts_means_zero_recall_and_f1() {
        let rows = vec![
            sv(0.6, Verdict::Human, Label::Llm),
            sv(0.9, Verdict::Human, Label::Human),
        ];
        let m = compute_metrics(&rows).unwrap();
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.f1, 0.0);
        assert_eq!(m.precision, 0.0);
    }

    #[test]
    fn auroc_counts_ties_as_half() {
        let rows = vec![
            sv(0.5, Verdict::Llm, Label::Llm),
            sv(0.5, Verdict::Human, Label::Human),
        ];
        let m = compute_metrics(&rows).unwrap();
        assert_eq!(m.auroc, 0.5);
    }

    #[test]
    fn auroc_is_monotone_transform_invariant() {
        let base = vec![
            sv(0.1, Verdict::Llm, Label::Llm),
            sv(0.7, Verdict::Llm, Label::Human),
            sv(0.4, Verdict::Human, Label::Llm),
            sv(0.9, Verdict::Human, Label::Human),
        ];
        let transformed: Vec<ScoredVerdict> = base
            .iter()
            .map(|r| sv((3.0 * r.score + 2.0).exp(), r.verdict, r.label))
            .collect();
        assert_eq!(
            compute_metrics(&base).unwrap().auroc,
            compute_metrics(&transformed).unwrap().auroc
        );
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(matches!(compute_metrics(&[]), Err(EvalError::EmptyInput)));
        assert!(matches!(
            compute_metrics(&[sv(0.1, Verdict::Llm, Label::Llm)]),
            Err(EvalError::SingleClassInput)
        ));
        assert!(matches!(
            compute_metrics(&[sv(0.1, Verdict::Llm, Label::Unknown)]),
            Err(EvalError::UnlabeledRow)
        ));
    }

    #[test]
    fn metrics_regenerate_from_csv_rows() {
        let rows = vec![
            CsvScoreRow {
                id: "a".into(),
                label: Label::Llm,
                word_count: 10,
                sdc: 0.0,
                sdp: None,
                signed: Some(0.0),
                verdict: Verdict::Llm,
            },
            CsvScoreRow {
                id: "b".into(),
                label: Label::Human,
                word_count: 12,
                sdc: 1.1,
                sdp: None,
                signed: Some(0.4),
                verdict: Verdict::Human,
            },
        ];
        let m = metrics_from_rows(&rows, Metric::Sdc).unwrap();
        assert_eq!(m.f1, 1.0);
    }

    #[test]
    fn scores_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        let rows = vec![
            CsvScoreRow {
                id: "with,comma".into(),
                label: Label::Llm,
                word_count: 3,
                sdc: 0.25,
                sdp: Some(0.5),
                signed: Some(-0.125),
                verdict: Verdict::Llm,
            },
            CsvScoreRow {
                id: "b".into(),
                label: Label::Unknown,
                word_count: 7,
                sdc: 1.5,
                sdp: None,
                signed: None,
                verdict: Verdict::Human,
            },
        ];
        write_scores_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("id,label,word_count,sdc,sdp,signed,verdict\n"));
        let back = read_scores_csv(&path).unwrap();
        assert_eq!(back, rows);
    }
}
