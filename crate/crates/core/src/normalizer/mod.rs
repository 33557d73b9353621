//! Symptom extraction and normalization: a deterministic lexicon-driven
//! engine sliding fuzzy n-grams over transcripts, plus conversation
//! synthesis, transcription-noise simulation, and a pluggable slot for
//! external model-backed normalizers.

mod corrupt;
mod synth;


pub use corrupt::{corrupt_symptom_tokens, corrupt_transcript, NoiseConfig};
pub use synth::{
    build_augmented_pairs, conversation_for_symptoms, synthesize_conversation, AugmentedPair,
    TEMPLATE_COUNT,
};

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Stdio};

use thiserror::Error;

use crate::domain::DatasetStage;
use crate::text::{edit_similarity, tokenize};

#[derive(Debug, Error, PartialEq)]
pub enum NormalizerError {
    #[error("template {0} does not exist")]
    UnknownTemplate(usize),
    #[error("symptom list is empty")]
    EmptySymptoms,
    #[error("lexicon is empty")]
    EmptyLexicon,
    #[error("transcript is empty")]
    EmptyTranscript,
    #[error("threshold {0} outside (0, 1]")]
    BadThreshold(f64),
    #[error("external normalizer failed: {0}")]
    External(String),
}

/// The canonical symptom vocabulary: lowercase, unique, single-space
/// separated entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    entries: Vec<String>,
    max_ngram: usize,
}

/// The starter lexicon shipped with the crate.
pub const BUNDLED_LEXICON: &str = include_str!("lexicon.txt");

impl Lexicon {
    pub fn new(entries: impl IntoIterator<Item = String>) -> Result<Self, NormalizerError> {
        let set: BTreeSet<String> = entries
            .into_iter()
            .map(|e| e.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase())
            .filter(|e| !e.is_empty())
            .collect();
        if set.is_empty() {
            return Err(NormalizerError::EmptyLexicon);
        }
        let max_ngram = set.iter().map(|e| e.split(' ').count()).max().unwrap_or(1);
        Ok(Self { entries: set.into_iter().collect(), max_ngram })
    }

    pub fn bundled() -> Self {
        Self::new(BUNDLED_LEXICON.lines().map(str::to_string)).expect("bundled lexicon is valid")
    }

    pub fn from_file(path: &Path) -> Result<Self, NormalizerError> {
        let content = std::fs::read_to_string(path)
            .map_err(|e| NormalizerError::External(format!("reading lexicon: {e}")))?;
        Self::new(content.lines().map(str::to_string))
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn max_ngram(&self) -> usize {
        self.max_ngram
    }

    pub fn contains(&self, term: &str) -> bool {
        self.entries.binary_search_by(|e| e.as_str().cmp(term)).is_ok()
    }
}

/// A conversation transcript at a known pipeline stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub text: String,
    pub stage: DatasetStage,
}

impl Transcript {
    pub fn new(text: impl Into<String>, stage: DatasetStage) -> Result<Self, NormalizerError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(NormalizerError::EmptyTranscript);
        }
        Ok(Self { text, stage })
    }
}

/// Extraction output: canonical symptoms ordered by first occurrence, with
/// their source token spans and match scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionResult {
    pub symptoms: Vec<String>,
    /// Half-open token ranges into the tokenized transcript.
    pub spans: Vec<(usize, usize)>,
    pub scores: Vec<f64>,
}

impl ExtractionResult {
    /// Space-joined symptom sentence, the downstream exchange format.
    pub fn joined(&self) -> String {
        self.symptoms.join(" ")
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    start: usize,
    len: usize,
    entry: String,
    score: f64,
}

/// Slides n-grams (one slot past the longest entry, to absorb token-split
/// noise) over the tokenized transcript, scores each against the lexicon
/// by normalized edit similarity, and accepts non-overlapping spans with
/// score >= threshold: best score first, then longest span, earliest
/// span, lexicographic entry.
pub fn extract_and_normalize(
    transcript: &Transcript,
    lexicon: &Lexicon,
    threshold: f64,
) -> Result<ExtractionResult, NormalizerError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(NormalizerError::BadThreshold(threshold));
    }
    let tokens = tokenize(&transcript.text);
    let mut candidates: Vec<Candidate> = Vec::new();
    // one slot beyond the longest entry catches token-split transcription
    // noise ("shown up of breath" spans four tokens)
    for n in 1..=lexicon.max_ngram() + 1 {
        if n > tokens.len() {
            break;
        }
        for start in 0..=(tokens.len() - n) {
            let span_text = tokens[start..start + n].join(" ");
            let mut best: Option<(f64, &String)> = None;
            for entry in lexicon.entries() {
                if !length_compatible(span_text.len(), entry.len(), threshold) {
                    continue;
                }
                let score = edit_similarity(&span_text, entry);
                let better = match best {
                    None => true,
                    // higher score wins; lexicographic entry on exact ties
                    Some((s, e)) => score > s || (score == s && entry < e),
                };
                if better {
                    best = Some((score, entry));
                }
            }
            if let Some((score, entry)) = best {
                if score >= threshold {
                    candidates.push(Candidate { start, len: n, entry: entry.clone(), score });
                }
            }
        }
    }

    candidates.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("scores are finite")
            .then(b.len.cmp(&a.len))
            .then(a.start.cmp(&b.start))
            .then(a.entry.cmp(&b.entry))
    });

    let mut used = vec![false; tokens.len()];
    let mut accepted: Vec<Candidate> = Vec::new();
    for c in candidates {
        if used[c.start..c.start + c.len].iter().any(|&u| u) {
            continue;
        }
        for slot in &mut used[c.start..c.start + c.len] {
            *slot = true;
        }
        accepted.push(c);
    }
    accepted.sort_by_key(|c| c.start);

    Ok(ExtractionResult {
        symptoms: accepted.iter().map(|c| c.entry.clone()).collect(),
        spans: accepted.iter().map(|c| (c.start, c.start + c.len)).collect(),
        scores: accepted.iter().map(|c| c.score).collect(),
    })
}

/// Length prefilter: if the length gap alone pushes similarity below the
/// threshold, the edit distance cannot recover it.
fn length_compatible(a: usize, b: usize, threshold: f64) -> bool {
    let max = a.max(b);
    let gap = a.abs_diff(b);
    max == 0 || (gap as f64) <= (1.0 - threshold) * max as f64 + 1e-9
}

/// Transcript in, space-joined canonical symptom sentence out. Any
/// implementation can substitute for the lexicon engine.
pub trait Normalizer {
    fn name(&self) -> &str;
    fn normalize(&self, transcript: &Transcript) -> Result<String, NormalizerError>;
}

/// The reference implementation: the lexicon engine at a fixed threshold.
#[derive(Debug, Clone)]
pub struct LexiconNormalizer {
    pub lexicon: Lexicon,
    pub threshold: f64,
}

pub const DEFAULT_THRESHOLD: f64 = 0.8;

impl LexiconNormalizer {
    pub fn bundled() -> Self {
        Self { lexicon: Lexicon::bundled(), threshold: DEFAULT_THRESHOLD }
    }
}

impl Normalizer for LexiconNormalizer {
    fn name(&self) -> &str {
        "lexicon"
    }

    fn normalize(&self, transcript: &Transcript) -> Result<String, NormalizerError> {
        Ok(extract_and_normalize(transcript, &self.lexicon, self.threshold)?.joined())
    }
}

/// Shells out to an external command speaking the line protocol: one
/// newline-escaped transcript in on stdin, one space-joined symptom
/// sentence out on stdout.
#[derive(Debug, Clone)]
pub struct ExternalNormalizer {
    pub command: String,
}

impl Normalizer for ExternalNormalizer {
    fn name(&self) -> &str {
        "external"
    }

    fn normalize(&self, transcript: &Transcript) -> Result<String, NormalizerError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| NormalizerError::External(e.to_string()))?;
        let escaped = transcript.text.replace('\\', "\\\\").replace('\n', "\\n");
        child
            .stdin
            .take()
            .expect("stdin piped")
            .write_all(format!("{escaped}\n").as_bytes())
            .map_err(|e| NormalizerError::External(e.to_string()))?;
        let output =
            child.wait_with_output().map_err(|e| NormalizerError::External(e.to_string()))?;
        if !output.status.success() {
            return Err(NormalizerError::External(format!("exit status {}", output.status)));
        }
        let line = String::from_utf8_lossy(&output.stdout);
        Ok(line.lines().next().unwrap_or("").trim().to_string())
    }
}
