//! Corpus ingestion, aggregation, length bucketing, and the synthetic
//! generator used by the offline test harness.
//!
//! Corpora are JSONL: one object per line with at least `id` and `text`;
//! `label` (`human` / `llm` / `unknown`), `source`, and `domain` are
//! optional. Word counts always come from the canonical tokenizer.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sentiment::ValenceLexicon;
use crate::tokenize;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("aggregation requires samples with a single label, found {0:?} and {1:?}")]
    MixedLabels(Label, Label),
    #[error("target word count must be at least 1")]
    InvalidTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Human,
    Llm,
    Unknown,
}

impl Default for Label {
    fn default() -> Self {
        Label::Unknown
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::Human => "human",
            Label::Llm => "llm",
            Label::Unknown => "unknown",
        })
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "human" => Ok(Label::Human),
            "llm" => Ok(Label::Llm),
            "unknown" => Ok(Label::Unknown),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

/// One candidate text with optional provenance.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct TextSample {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
}

impl TextSample {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: Label) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            label,
            source: None,
            domain: None,
        }
    }

    /// Canonical token count of the text.
    pub fn word_count(&self) -> usize {
        tokenize::word_count(&self.text)
    }
}

/// Per-label and per-domain sample counts.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Manifest {
    pub total: usize,
    pub labels: BTreeMap<String, usize>,
    pub domains: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub samples: Vec<TextSample>,
}

impl Corpus {
    pub fn new(samples: Vec<TextSample>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn manifest(&self) -> Manifest {
        let mut labels = BTreeMap::new();
        let mut domains = BTreeMap::new();
        for s in &self.samples {
            *labels.entry(s.label.to_string()).or_insert(0) += 1;
            if let Some(d) = &s.domain {
                *domains.entry(d.clone()).or_insert(0) += 1;
            }
        }
        Manifest {
            total: self.samples.len(),
            labels,
            domains,
        }
    }

    /// Serialize as JSONL, one sample per line, trailing newline.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            out.push_str(&serde_json::to_string(s).expect("sample serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let mut file = std::fs::File::create(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        file.write_all(self.to_jsonl().as_bytes())
            .map_err(|source| CorpusError::Io {
                path: path.display().to_string(),
                source,
            })
    }
}

/// Parse a JSONL corpus. Every line must parse (first bad line aborts with
/// its 1-based number); missing labels default to `unknown`; duplicate ids
/// are rejected.
pub fn load_jsonl_str(text: &str, origin: &str) -> Result<Corpus, CorpusError> {
    let mut samples = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let sample: TextSample =
            serde_json::from_str(line).map_err(|e| CorpusError::Parse {
                path: origin.to_string(),
                line: idx + 1,
                msg: e.to_string(),
            })?;
        if !seen.insert(sample.id.clone()) {
            return Err(CorpusError::DuplicateId(sample.id));
        }
        samples.push(sample);
    }
    Ok(Corpus::new(samples))
}

pub fn load_jsonl(path: &Path) -> Result<Corpus, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_jsonl_str(&text, &path.display().to_string())
}

/// Greedily concatenate same-label samples (in seeded-shuffle order, joined
/// by single newlines) until every aggregate reaches `target_words`; leftover
/// short samples become one final short aggregate. Ids are joined with `+`.
pub fn aggregate_short(
    samples: &[TextSample],
    target_words: usize,
    seed: u64,
) -> Result<Vec<TextSample>, CorpusError> {
    if target_words == 0 {
        return Err(CorpusError::InvalidTarget);
    }
    if let Some(first) = samples.first() {
        if let Some(odd) = samples.iter().find(|s| s.label != first.label) {
            return Err(CorpusError::MixedLabels(first.label, odd.label));
        }
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut out = Vec::new();
    let mut ids: Vec<&str> = Vec::new();
    let mut texts: Vec<&str> = Vec::new();
    let mut words = 0usize;
    for &i in &order {
        let s = &samples[i];
        ids.push(&s.id);
        texts.push(&s.text);
        words += s.word_count();
        if words >= target_words {
            let mut agg = TextSample::new(ids.join("+"), texts.join("\n"), s.label);
            agg.source = s.source.clone();
            agg.domain = s.domain.clone();
            out.push(agg);
            ids.clear();
            texts.clear();
            words = 0;
        }
    }
    if !ids.is_empty() {
        let label = samples[0].label;
        let mut agg = TextSample::new(ids.join("+"), texts.join("\n"), label);
        agg.source = samples[0].source.clone();
        agg.domain = samples[0].domain.clone();
        out.push(agg);
    }
    Ok(out)
}

/// Keep samples whose word count is within `half_width` of `center_words`
/// (inclusive on both sides).
pub fn length_bucket(corpus: &Corpus, center_words: usize, half_width: usize) -> Corpus {
    Corpus::new(
        corpus
            .samples
            .iter()
            .filter(|s| s.word_count().abs_diff(center_words) <= half_width)
            .cloned()
            .collect(),
    )
}

// Candidate filler vocabulary for synthetic texts. Anything that collides
// with the active lexicon is filtered out at generation time, so generated
// llm-labeled texts are guaranteed lexicon-free.
const NEUTRAL_POOL: [&str; 96] = [
    "the", "of", "and", "into", "within", "between", "about", "through", "under", "over",
    "table", "chair", "window", "door", "road", "bridge", "river", "stone", "metal", "paper",
    "letter", "number", "system", "method", "process", "region", "record", "report", "figure",
    "section", "sample", "signal", "module", "object", "element", "factor", "matrix", "vector",
    "series", "period", "phase", "cycle", "layer", "branch", "engine", "wheel", "street",
    "corner", "market", "office", "garden", "forest", "field", "valley", "harbor", "station",
    "vehicle", "machine", "device", "screen", "button", "cable", "folder", "entry", "item",
    "unit", "batch", "queue", "stack", "model", "panel", "frame", "board", "sheet", "block",
    "piece", "portion", "segment", "cluster", "bundle", "packet", "channel", "route", "path",
    "track", "course", "step", "stage", "point", "line", "curve", "surface", "volume", "mass",
    "length", "width",
];

/// Deterministic offline corpus: `llm`-labeled texts use only words outside
/// the lexicon (so a neutralizing rewrite cannot move them), `human`-labeled
/// texts additionally carry 3-8 one-sided valence words (so it must).
/// Identical seeds give byte-identical corpora on every platform.
pub fn generate_synthetic(n_per_class: usize, lex: &ValenceLexicon, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let neutral: Vec<&str> = NEUTRAL_POOL
        .iter()
        .copied()
        .filter(|w| !lex.contains(w))
        .collect();
    assert!(
        neutral.len() >= 16,
        "lexicon swallowed the neutral word pool"
    );
    let positive: Vec<&str> = lex
        .tokens()
        .filter(|(_, v)| *v > lex.pos_threshold)
        .map(|(t, _)| t)
        .collect();
    let negative: Vec<&str> = lex
        .tokens()
        .filter(|(_, v)| *v < lex.neg_threshold)
        .map(|(t, _)| t)
        .collect();
    assert!(
        !positive.is_empty() && !negative.is_empty(),
        "lexicon must contain words on both sides of the neutral band"
    );

    let mut samples = Vec::with_capacity(2 * n_per_class);
    for i in 0..n_per_class {
        let words = rng.gen_range(30..=60);
        let body: Vec<&str> = (0..words)
            .map(|_| neutral[rng.gen_range(0..neutral.len())])
            .collect();
        let mut sample = TextSample::new(
            format!("llm-{:04}", i + 1),
            to_sentences(&body, &mut rng),
            Label::Llm,
        );
        sample.source = Some("synthetic".into());
        samples.push(sample);
    }
    for i in 0..n_per_class {
        let words = rng.gen_range(30..=60);
        let mut body: Vec<&str> = (0..words)
            .map(|_| neutral[rng.gen_range(0..neutral.len())])
            .collect();
        // one-sided valence words guarantee the distribution moves when
        // they are stripped
        let pool = if rng.gen_bool(0.5) { &positive } else { &negative };
        let inserts = rng.gen_range(3..=8);
        for _ in 0..inserts {
            let word = pool[rng.gen_range(0..pool.len())];
            let pos = rng.gen_range(0..=body.len());
            body.insert(pos, word);
        }
        samples.push(TextSample::new(
            format!("human-{:04}", i + 1),
            to_sentences(&body, &mut rng),
            Label::Human,
        ));
    }
    Corpus::new(samples)
}

/// Group words into sentences of 6-12 words ending in periods, so the
/// synthetic texts work with sentence-level transforms too.
fn to_sentences(words: &[&str], rng: &mut ChaCha8Rng) -> String {
    let mut out = String::new();
    let mut i = 0;
    while i < words.len() {
        let len = rng.gen_range(6..=12).min(words.len() - i);
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&words[i..i + len].join(" "));
        out.push('.');
        i += len;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_words(n: usize, id: &str, label: Label) -> TextSample {
        TextSample::new(id, vec!["word"; n].join(" "), label)
    }

    #[test]
    fn load_jsonl_parses_and_defaults_labels() {
        let text = r#"{"id":"a","text":"hello there","label":"human"}
{"id":"b","text":"general reply","label":"llm"}
{"id":"c","text":"no label"}
"#;
        let corpus = load_jsonl_str(text, "t").unwrap();
        assert_eq!(corpus.len(), 3);
        assert_eq!(corpus.samples[2].label, Label::Unknown);
        let manifest = corpus.manifest();
        assert_eq!(manifest.labels["human"], 1);
        assert_eq!(manifest.labels["llm"], 1);
        assert_eq!(manifest.labels["unknown"], 1);
    }

    #[test]
    fn load_jsonl_reports_first_bad_line() {
        let text = "{\"id\":\"a\",\"text\":\"ok\"}\n{\"id\":\"b\"}\n";
        match load_jsonl_str(text, "t") {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_jsonl_rejects_duplicate_ids() {
        let text = "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}\n";
        assert!(matches!(
            load_jsonl_str(text, "t"),
            Err(CorpusError::DuplicateId(id)) if id == "a"
        ));
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        assert!(load_jsonl_str("", "t").unwrap().is_empty());
    }

    #[test]
    fn jsonl_value_round_trip_is_exact() {
        let mut s = TextSample::new("a", "text with \"quotes\" and \n newline", Label::Human);
        s.domain = Some("review".into());
        let corpus = Corpus::new(vec![s, sample_words(3, "b", Label::Llm)]);
        let reloaded = load_jsonl_str(&corpus.to_jsonl(), "t").unwrap();
        assert_eq!(corpus, reloaded);
    }

    #[test]
    fn aggregate_keeps_long_samples_unchanged() {
        let input = vec![sample_words(100, "a", Label::Human)];
        let out = aggregate_short(&input, 64, 1).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].id, "a");
        assert_eq!(out[0].text, input[0].text);
    }

    #[test]
    fn aggregate_four_short_samples_to_one() {
        // greedy rule: 20 < 64, 40 < 64, 60 < 64, 80 >= 64 -> one aggregate
        let input: Vec<TextSample> = (0..4)
            .map(|i| sample_words(20, &format!("s{i}"), Label::Llm))
            .collect();
        let out = aggregate_short(&input, 64, 42).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].word_count(), 80);
        let id_parts: Vec<&str> = out[0].id.split('+').collect();
        let mut sorted = id_parts.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, ["s0", "s1", "s2", "s3"]);
        assert_eq!(id_parts.len(), 4);
    }

    #[test]
    fn aggregate_emits_short_remainder() {
        let input: Vec<TextSample> = (0..5)
            .map(|i| sample_words(20, &format!("s{i}"), Label::Llm))
            .collect();
        let out = aggregate_short(&input, 64, 42).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].word_count(), 80);
        assert_eq!(out[1].word_count(), 20);
    }

    #[test]
    fn aggregate_rejects_mixed_labels() {
        let input = vec![
            sample_words(5, "a", Label::Human),
            sample_words(5, "b", Label::Llm),
        ];
        assert!(matches!(
            aggregate_short(&input, 64, 1),
            Err(CorpusError::MixedLabels(..))
        ));
    }

    #[test]
    fn length_bucket_is_inclusive_at_the_boundary() {
        let center = 20;
        let corpus = Corpus::new(vec![
            sample_words(center, "exact", Label::Human),
            sample_words(center - 10, "low", Label::Human),
            sample_words(center + 10, "high", Label::Human),
            sample_words(center + 11, "out-high", Label::Human),
            sample_words(center - 11, "out-low", Label::Human),
        ]);
        let kept = length_bucket(&corpus, center, 10);
        let ids: Vec<&str> = kept.samples.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["exact", "low", "high"]);
    }

    #[test]
    fn length_bucket_hand_filter_fixture() {
        let corpus = Corpus::new(vec![
            sample_words(15, "a", Label::Human),
            sample_words(20, "b", Label::Human),
            sample_words(31, "c", Label::Human),
        ]);
        let kept = length_bucket(&corpus, 20, 10);
        let ids: Vec<&str> = kept.samples.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
    }

    #[test]
    fn synthetic_corpus_is_deterministic_and_separable_by_construction() {
        let lex = ValenceLexicon::bundled();
        let a = generate_synthetic(5, &lex, 7);
        let b = generate_synthetic(5, &lex, 7);
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        let c = generate_synthetic(5, &lex, 8);
        assert_ne!(a.to_jsonl(), c.to_jsonl());

        for s in &a.samples {
            let matches = crate::tokenize::tokens(&s.text)
                .filter(|t| lex.contains(t))
                .count();
            match s.label {
                Label::Llm => assert_eq!(matches, 0, "llm sample {} has lexicon words", s.id),
                Label::Human => {
                    assert!(matches >= 3, "human sample {} has {} matches", s.id, matches)
                }
                Label::Unknown => unreachable!(),
            }
        }
    }

    proptest! {
        #[test]
        fn aggregation_conserves_total_word_count(
            lens in proptest::collection::vec(1usize..40, 1..20),
            target in 1usize..100,
            seed in 0u64..1000,
        ) {
            let input: Vec<TextSample> = lens
                .iter()
                .enumerate()
                .map(|(i, &n)| sample_words(n, &format!("s{i}"), Label::Human))
                .collect();
            let total: usize = input.iter().map(|s| s.word_count()).sum();
            let out = aggregate_short(&input, target, seed).unwrap();
            let agg_total: usize = out.iter().map(|s| s.word_count()).sum();
            prop_assert_eq!(total, agg_total);
            // every aggregate except possibly the last reaches the target
            for a in out.iter().rev().skip(1) {
                prop_assert!(a.word_count() >= target);
            }
        }

        #[test]
        fn length_bucket_is_a_subset_and_idempotent(
            lens in proptest::collection::vec(1usize..60, 0..20),
            center in 1usize..50,
        ) {
            let corpus = Corpus::new(
                lens.iter()
                    .enumerate()
                    .map(|(i, &n)| sample_words(n, &format!("s{i}"), Label::Human))
                    .collect(),
            );
            let once = length_bucket(&corpus, center, 10);
            prop_assert!(once.len() <= corpus.len());
            for s in &once.samples {
                prop_assert!(corpus.samples.contains(s));
            }
            let twice = length_bucket(&once, center, 10);
            prop_assert_eq!(once, twice);
        }
    }
}
