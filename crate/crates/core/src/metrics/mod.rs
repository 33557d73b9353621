//! Evaluation metric suite: WER, CER, exact match, BLEU, top-k accuracy,
//! micro/macro F1, MSE, Pearson and Spearman coefficients, plus the
//! structured report the end-to-end evaluation emits.

pub mod report;

use std::collections::BTreeSet;

use thiserror::Error;

use crate::text::{levenshtein, normalize_ws, tokenize};

pub use report::{CellKey, MetricReport, MetricValue, TaskReport};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {left} vs {right}")]
    LengthError { left: usize, right: usize },
    #[error("label universe is empty")]
    EmptyUniverse,
    #[error("zero variance in {side} vector")]
    DegenerateVariance { side: &'static str },
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("k={k} exceeds ranking length {len}")]
    RangeError { k: usize, len: usize },
}

/// Word error rate: word-level Levenshtein distance over the shared
/// tokenizer, normalized by the reference word count.
pub fn wer(reference: &str, hypothesis: &str) -> f64 {
    let r = tokenize(reference);
    let h = tokenize(hypothesis);
    levenshtein(&r, &h) as f64 / r.len().max(1) as f64
}

/// Character error rate: character-level Levenshtein after lowercasing,
/// normalized by the reference character count.
pub fn cer(reference: &str, hypothesis: &str) -> f64 {
    let r: Vec<char> = reference.to_lowercase().chars().collect();
    let h: Vec<char> = hypothesis.to_lowercase().chars().collect();
    levenshtein(&r, &h) as f64 / r.len().max(1) as f64
}

/// 1 iff the two strings are identical after lowercasing and whitespace
/// collapsing.
pub fn exact_match(reference: &str, hypothesis: &str) -> u8 {
    u8::from(normalize_ws(reference) == normalize_ws(hypothesis))
}

/// Sentence BLEU with clipped n-gram precisions up to `max_n`, add-one
/// smoothing on zero match counts, and the standard brevity penalty.
pub fn bleu(reference: &str, hypothesis: &str, max_n: usize) -> f64 {
    let r = tokenize(reference);
    let h = tokenize(hypothesis);
    if h.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let (matches, candidates) = clipped_ngram_matches(&r, &h, n);
        let p = if matches == 0 {
            (matches + 1) as f64 / (candidates + 1) as f64
        } else {
            matches as f64 / candidates as f64
        };
        log_sum += p.ln();
    }
    let precision = (log_sum / max_n as f64).exp();
    let bp = if h.len() < r.len() {
        (1.0 - r.len() as f64 / h.len() as f64).exp()
    } else {
        1.0
    };
    bp * precision
}

fn clipped_ngram_matches(r: &[String], h: &[String], n: usize) -> (usize, usize) {
    use std::collections::HashMap;
    if h.len() < n {
        return (0, 0);
    }
    let mut ref_counts: HashMap<&[String], usize> = HashMap::new();
    if r.len() >= n {
        for win in r.windows(n) {
            *ref_counts.entry(win).or_default() += 1;
        }
    }
    let mut hyp_counts: HashMap<&[String], usize> = HashMap::new();
    for win in h.windows(n) {
        *hyp_counts.entry(win).or_default() += 1;
    }
    let matches = hyp_counts
        .iter()
        .map(|(gram, &c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
        .sum();
    (matches, h.len() - n + 1)
}

/// Fraction of samples whose truth appears within the first k ranked
/// classes.
pub fn topk_accuracy(rankings: &[Vec<u32>], truths: &[u32], k: usize) -> Result<f64, MetricError> {
    if rankings.len() != truths.len() {
        return Err(MetricError::LengthError { left: rankings.len(), right: truths.len() });
    }
    if rankings.is_empty() {
        return Err(MetricError::TooFewSamples { need: 1, got: 0 });
    }
    for r in rankings {
        if r.len() < k {
            return Err(MetricError::RangeError { k, len: r.len() });
        }
    }
    let hits = rankings
        .iter()
        .zip(truths)
        .filter(|(ranking, truth)| ranking[..k].contains(truth))
        .count();
    Ok(hits as f64 / rankings.len() as f64)
}

/// Micro and macro F1 over multilabel predictions.
///
/// Micro pools TP/FP/FN over all labels; macro averages per-label F1,
/// with labels that never occur in truth or prediction contributing 0.
pub fn f1_scores(
    truth_sets: &[BTreeSet<u32>],
    pred_sets: &[BTreeSet<u32>],
    label_universe: &BTreeSet<u32>,
) -> Result<(f64, f64), MetricError> {
    if label_universe.is_empty() {
        return Err(MetricError::EmptyUniverse);
    }
    if truth_sets.len() != pred_sets.len() {
        return Err(MetricError::LengthError { left: truth_sets.len(), right: pred_sets.len() });
    }
    let mut global = (0usize, 0usize, 0usize); // tp, fp, fn
    let mut macro_sum = 0.0;
    for &label in label_universe {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fneg = 0usize;
        for (t, p) in truth_sets.iter().zip(pred_sets) {
            match (t.contains(&label), p.contains(&label)) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fneg += 1,
                (false, false) => {}
            }
        }
        global.0 += tp;
        global.1 += fp;
        global.2 += fneg;
        let denom = 2 * tp + fp + fneg;
        macro_sum += if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 };
    }
    let (tp, fp, fneg) = global;
    let micro_denom = 2 * tp + fp + fneg;
    let micro = if micro_denom == 0 { 0.0 } else { 2.0 * tp as f64 / micro_denom as f64 };
    let macro_f1 = macro_sum / label_universe.len() as f64;
    Ok((micro, macro_f1))
}

/// Mean squared error.
pub fn mse(predictions: &[f64], truths: &[f64]) -> Result<f64, MetricError> {
    if predictions.len() != truths.len() {
        return Err(MetricError::LengthError { left: predictions.len(), right: truths.len() });
    }
    if predictions.is_empty() {
        return Err(MetricError::TooFewSamples { need: 1, got: 0 });
    }
    let sum: f64 = predictions.iter().zip(truths).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / predictions.len() as f64)
}

/// Pearson correlation coefficient (population covariance over the product
/// of population standard deviations).
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthError { left: x.len(), right: y.len() });
    }
    if x.len() < 2 {
        return Err(MetricError::TooFewSamples { need: 2, got: x.len() });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 {
        return Err(MetricError::DegenerateVariance { side: "x" });
    }
    if vy == 0.0 {
        return Err(MetricError::DegenerateVariance { side: "y" });
    }
    Ok(cov / (vx.sqrt() * vy.sqrt()))
}

/// Spearman rank correlation: Pearson over average-tied ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthError { left: x.len(), right: y.len() });
    }
    if x.len() < 2 {
        return Err(MetricError::TooFewSamples { need: 2, got: x.len() });
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    pearson(&rx, &ry)
}

/// Ranks starting at 1; tied values share the average of their rank span.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        // positions i..=j hold the same value; average rank is 1-based
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

#[cfg(test)]
mod tests;
