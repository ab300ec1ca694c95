//! Independent reference implementations used by several test targets.
#![allow(dead_code)]

use std::collections::BTreeSet;

use pctnews::numerics::Rng;
use pctnews::tokenizer::{Vocabulary, CONTINUATION, RESERVED};

/// Sign agreement counted by explicit case analysis.
pub fn brute_direction_hits(preds: &[f64], actuals: &[f64]) -> usize {
    let mut hits = 0;
    for i in 0..preds.len() {
        let p_up = preds[i] >= 0.0 || preds[i].is_nan();
        let a_up = actuals[i] >= 0.0 || actuals[i].is_nan();
        if (p_up && a_up) || (!p_up && !a_up) {
            hits += 1;
        }
    }
    hits
}

pub fn brute_within_hits(preds: &[f64], actuals: &[f64], tol: f64) -> usize {
    let mut hits = 0;
    for i in 0..preds.len() {
        let same_side = (preds[i] >= 0.0) == (actuals[i] >= 0.0);
        let gap = if preds[i] > actuals[i] { preds[i] - actuals[i] } else { actuals[i] - preds[i] };
        if same_side && gap <= tol {
            hits += 1;
        }
    }
    hits
}

/// Mean of squared errors, summed in reverse with compensation.
pub fn brute_mse(preds: &[f64], actuals: &[f64]) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for i in (0..preds.len()).rev() {
        let d = preds[i] - actuals[i];
        let y = d * d - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    sum / preds.len() as f64
}

/// Minimum number of pieces over every segmentation, `None` if none exists.
pub fn dp_min_pieces(word: &str, vocab: &Vocabulary) -> Option<usize> {
    let chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    let mut best: Vec<Option<usize>> = vec![None; n + 1];
    best[0] = Some(0);
    for end in 1..=n {
        for start in 0..end {
            let Some(prefix) = best[start] else { continue };
            let body: String = chars[start..end].iter().collect();
            let piece = if start == 0 { body } else { format!("{CONTINUATION}{body}") };
            if vocab.id(&piece).is_some() {
                let cand = prefix + 1;
                if best[end].is_none_or(|b| cand < b) {
                    best[end] = Some(cand);
                }
            }
        }
    }
    best[n]
}

/// A vocabulary whose piece strings are closed under taking suffixes, with
/// every piece present both as a word start and as a continuation. Greedy
/// longest match is optimal on such vocabularies.
pub fn suffix_closed_vocab(rng: &mut Rng, alphabet: &[char]) -> Vocabulary {
    let mut pieces: BTreeSet<String> = alphabet.iter().map(|c| c.to_string()).collect();
    let seeds = 3 + rng.below(12);
    for _ in 0..seeds {
        let len = 2 + rng.below(5);
        let s: Vec<char> = (0..len).map(|_| alphabet[rng.below(alphabet.len())]).collect();
        for start in 0..len {
            pieces.insert(s[start..].iter().collect());
        }
    }
    let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    for p in &pieces {
        tokens.push(p.clone());
        tokens.push(format!("{CONTINUATION}{p}"));
    }
    Vocabulary::from_tokens(tokens).expect("distinct tokens")
}

pub fn random_word(rng: &mut Rng, alphabet: &[char], max_len: usize) -> String {
    let len = 1 + rng.below(max_len);
    (0..len).map(|_| alphabet[rng.below(alphabet.len())]).collect()
}

/// Random prediction/actual pairs, with exact zeros and boundary gaps mixed in.
pub fn random_instance(rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let n = 1 + rng.below(500);
    let mut preds = Vec::with_capacity(n);
    let mut actuals = Vec::with_capacity(n);
    for _ in 0..n {
        let a = match rng.below(6) {
            0 => 0.0,
            _ => 4.0 * rng.normal(),
        };
        let p = match rng.below(8) {
            0 => 0.0,
            1 => a + 2.0,
            2 => a - 5.0,
            3 => -a,
            _ => a + 3.0 * rng.normal(),
        };
        preds.push(p);
        actuals.push(a);
    }
    (preds, actuals)
}
