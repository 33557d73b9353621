//! Transcription-noise simulation: seeded character-level edits, biased
//! toward symptom spans, plus a bounded per-token corrupter whose output
//! stays within a fixed edit budget of the source.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::domain::DatasetStage;

use super::Transcript;

/// Character-edit rates plus the bias applied inside symptom spans.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    pub sub_rate: f64,
    pub del_rate: f64,
    pub ins_rate: f64,
    /// Multiplier on the edit rates within occurrences of
    /// `bias_substrings`.
    pub bias: f64,
    pub bias_substrings: Vec<String>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { sub_rate: 0.02, del_rate: 0.01, ins_rate: 0.01, bias: 2.0, bias_substrings: vec![] }
    }
}

impl NoiseConfig {
    pub fn silent() -> Self {
        Self { sub_rate: 0.0, del_rate: 0.0, ins_rate: 0.0, bias: 1.0, bias_substrings: vec![] }
    }
}

fn random_letter(rng: &mut ChaCha8Rng) -> char {
    (b'a' + rng.gen_range(0..26u8)) as char
}

fn random_letter_except(rng: &mut ChaCha8Rng, not: char) -> char {
    loop {
        let c = random_letter(rng);
        if c != not {
            return c;
        }
    }
}

/// Applies seeded character-level substitutions, deletions, and
/// insertions. Whitespace passes through untouched so token boundaries
/// survive. The output transcript carries the noisy-transcription stage.
pub fn corrupt_transcript(transcript: &Transcript, noise: &NoiseConfig, seed: u64) -> Transcript {
    let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, "corrupt"));
    let chars: Vec<char> = transcript.text.chars().collect();

    // mark characters inside biased spans
    let lower = transcript.text.to_lowercase();
    let mut biased = vec![false; chars.len()];
    for needle in &noise.bias_substrings {
        let needle = needle.to_lowercase();
        if needle.is_empty() {
            continue;
        }
        let mut from = 0;
        while let Some(found) = lower[from..].find(&needle) {
            let byte_start = from + found;
            // byte offsets map 1:1 to char offsets for ASCII transcripts;
            // fall back to char counting for safety
            let char_start = lower[..byte_start].chars().count();
            let char_len = needle.chars().count();
            for slot in biased.iter_mut().skip(char_start).take(char_len) {
                *slot = true;
            }
            from = byte_start + needle.len();
        }
    }

    let mut out = String::with_capacity(chars.len());
    for (i, &c) in chars.iter().enumerate() {
        if c.is_whitespace() {
            out.push(c);
            continue;
        }
        let mult = if biased[i] { noise.bias } else { 1.0 };
        let u: f64 = rng.gen();
        let sub = noise.sub_rate * mult;
        let del = noise.del_rate * mult;
        let ins = noise.ins_rate * mult;
        if u < sub {
            out.push(random_letter_except(&mut rng, c));
        } else if u < sub + del {
            // deleted
        } else if u < sub + del + ins {
            out.push(c);
            out.push(random_letter(&mut rng));
        } else {
            out.push(c);
        }
    }
    if out.trim().is_empty() {
        // degenerate rates can empty a short transcript; keep one token
        out = transcript.text.chars().take(1).collect();
    }
    Transcript { text: out, stage: DatasetStage::Text5 }
}

/// Applies at most `max_edits` seeded character edits to each whitespace
/// token inside each listed symptom occurrence, leaving all other text
/// untouched. The edit count per token is additionally capped at a fifth
/// of its length, so every corrupted token stays within normalized edit
/// similarity 0.8 of its source.
pub fn corrupt_symptom_tokens(
    text: &str,
    symptoms: &[String],
    max_edits: usize,
    seed: u64,
) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, "bounded-corrupt"));
    let mut result = text.to_string();
    for symptom in symptoms {
        if symptom.is_empty() {
            continue;
        }
        if let Some(pos) = result.find(symptom.as_str()) {
            let corrupted = corrupt_phrase(symptom, max_edits, &mut rng);
            result.replace_range(pos..pos + symptom.len(), &corrupted);
        }
    }
    result
}

fn corrupt_phrase(phrase: &str, max_edits: usize, rng: &mut ChaCha8Rng) -> String {
    phrase
        .split(' ')
        .map(|token| corrupt_token(token, max_edits, rng))
        .collect::<Vec<_>>()
        .join(" ")
}

fn corrupt_token(token: &str, max_edits: usize, rng: &mut ChaCha8Rng) -> String {
    let cap = max_edits.min(token.chars().count() / 5);
    if cap == 0 {
        return token.to_string();
    }
    let edits = rng.gen_range(0..=cap);
    let mut chars: Vec<char> = token.chars().collect();
    for _ in 0..edits {
        if chars.is_empty() {
            break;
        }
        let pos = rng.gen_range(0..chars.len());
        match rng.gen_range(0..4u8) {
            0 | 1 => chars[pos] = random_letter_except(rng, chars[pos]),
            2 => {
                chars.remove(pos);
            }
            _ => chars.insert(pos, random_letter(rng)),
        }
    }
    chars.into_iter().collect()
}
