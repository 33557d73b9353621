//! Shared text utilities: the tokenizer used by both the metric suite and
//! the symptom normalizer, plus Levenshtein edit distance.
//!
//! Keeping one tokenizer here means WER tokenization and n-gram extraction
//! agree byte-for-byte across modules.

/// Lowercases, splits on whitespace, and strips leading/trailing
/// punctuation from each token. Tokens that are all punctuation vanish.
pub fn tokenize(s: &str) -> Vec<String> {
    s.split_whitespace()
        .filter_map(|raw| {
            let t = raw
                .trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase();
            if t.is_empty() {
                None
            } else {
                Some(t)
            }
        })
        .collect()
}

/// Lowercase + collapse internal whitespace to single spaces + trim.
pub fn normalize_ws(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Levenshtein distance with unit insert/delete/substitute costs.
///
/// Generic over the symbol type so it serves both character-level (CER,
/// fuzzy matching) and word-level (WER) distances.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    // Single-row DP.
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut prev_diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let cost = usize::from(ca != cb);
            let next = (prev_diag + cost).min(row[j] + 1).min(row[j + 1] + 1);
            prev_diag = row[j + 1];
            row[j + 1] = next;
        }
    }
    row[b.len()]
}

/// Character-level Levenshtein over two strings.
pub fn levenshtein_chars(a: &str, b: &str) -> usize {
    let ca: Vec<char> = a.chars().collect();
    let cb: Vec<char> = b.chars().collect();
    levenshtein(&ca, &cb)
}

/// Normalized edit similarity in [0, 1]: `1 - dist / max(len_a, len_b)`.
/// Two empty strings are identical (similarity 1).
pub fn edit_similarity(a: &str, b: &str) -> f64 {
    let ca: Vec<char> = a.chars().collect();
    let cb: Vec<char> = b.chars().collect();
    let m = ca.len().max(cb.len());
    if m == 0 {
        return 1.0;
    }
    1.0 - levenshtein(&ca, &cb) as f64 / m as f64
}
