use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Length of the longest common subsequence, `O(|a| * |b|)` time and
/// `O(|b|)` memory.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Sentence-level ROUGE-L over pre-split units.
pub fn rouge_l<T: PartialEq>(reference: &[T], candidate: &[T]) -> Result<RougeScore> {
    if reference.is_empty() || candidate.is_empty() {
        return Err(Error::usage("ROUGE-L needs non-empty reference and candidate"));
    }
    let lcs = lcs_len(reference, candidate) as f64;
    let precision = lcs / candidate.len() as f64;
    let recall = lcs / reference.len() as f64;
    let f1 = if lcs == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(RougeScore {
        precision,
        recall,
        f1,
    })
}

/// Lowercased whitespace-separated words.
pub fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// ROUGE-L on detokenized text.
pub fn rouge_l_text(reference: &str, candidate: &str) -> Result<RougeScore> {
    rouge_l(&words(reference), &words(candidate))
}
