//! Detection of verbatim repetitive loops at the end of a token sequence.
//!
//! A passage ends in a loop when its tail has the form
//! `prefix, B, B, B, ..., B'` where `B` is a block of `lambda` tokens and `B'`
//! a (possibly empty) prefix of `B` rotated to the right phase. `rho` is the
//! index where the first copy of the block starts; `rho + lambda` is where the
//! first verbatim repetition begins.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{Passage, TokenId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopSpec {
    pub rho: usize,
    pub lambda: usize,
    pub looping_tokens: Vec<TokenId>,
    /// `looping_tokens` rotated to begin at a sentence start, when text is known.
    pub rotated_tokens: Vec<TokenId>,
}

impl LoopSpec {
    /// Index of the first verbatim repetition, `rho + lambda`.
    pub fn repeat_start(&self) -> usize {
        self.rho + self.lambda
    }
}

/// Period candidates in the order they are tried: `4, 5, ..., len/2`, then
/// `1, 2, 3`.
pub fn period_search_order(len: usize) -> impl Iterator<Item = usize> {
    let half = len / 2;
    (4..=half).chain((1..=3).filter(move |&l| l <= half))
}

/// Finds the first period (in [`period_search_order`]) whose last two blocks
/// agree, then walks back to the earliest index from which the sequence stays
/// periodic with that period.
pub fn detect_loop(tokens: &[TokenId]) -> Option<LoopSpec> {
    let len = tokens.len();
    let lambda = period_search_order(len)
        .find(|&l| tokens[len - 2 * l..len - l] == tokens[len - l..])?;

    // tokens[j] == tokens[j + lambda] holds for j in [rho, len - lambda).
    let mut rho = len - 2 * lambda;
    while rho > 0 && tokens[rho - 1] == tokens[rho - 1 + lambda] {
        rho -= 1;
    }
    let looping_tokens = tokens[rho..rho + lambda].to_vec();
    Some(LoopSpec {
        rho,
        lambda,
        rotated_tokens: looping_tokens.clone(),
        looping_tokens,
    })
}

/// Loop detection restricted to the generated part of a passage. The returned
/// `rho` is relative to the whole passage.
pub fn detect_in_continuation(passage: &Passage) -> Option<LoopSpec> {
    let offset = passage.condition_len.min(passage.tokens.len());
    detect_loop(&passage.tokens[offset..]).map(|mut spec| {
        spec.rho += offset;
        spec
    })
}

/// Fraction of passages whose continuation ends in a loop.
pub fn loop_rate<'a, I>(passages: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a Passage>,
{
    let (mut total, mut looping) = (0usize, 0usize);
    for p in passages {
        total += 1;
        if detect_in_continuation(p).is_some() {
            looping += 1;
        }
    }
    if total == 0 {
        return Err(Error::usage("loop_rate of an empty collection"));
    }
    Ok(looping as f64 / total as f64)
}

/// Which detokenized strings close a sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceBoundary {
    pub terminals: Vec<String>,
}

impl Default for SentenceBoundary {
    fn default() -> Self {
        Self {
            terminals: [".", "!", "?", "\n"].map(String::from).to_vec(),
        }
    }
}

impl SentenceBoundary {
    /// A token closes a sentence when its text, ignoring trailing spaces and
    /// tabs, ends with a terminal.
    pub fn is_terminal(&self, text: &str) -> bool {
        let trimmed = text.trim_end_matches([' ', '\t']);
        self.terminals.iter().any(|t| trimmed.ends_with(t.as_str()))
    }
}

/// Rotates the looping block so it starts right after its last sentence
/// terminal. Tokens with unknown text never count as terminals.
pub fn rotate_to_sentence_start<F, S>(
    looping_tokens: &[TokenId],
    text_of: F,
    boundary: &SentenceBoundary,
) -> Vec<TokenId>
where
    F: Fn(TokenId) -> Option<S>,
    S: AsRef<str>,
{
    let last_terminal = looping_tokens
        .iter()
        .rposition(|&t| text_of(t).is_some_and(|s| boundary.is_terminal(s.as_ref())));
    match last_terminal {
        Some(i) => {
            let mut out = looping_tokens.to_vec();
            out.rotate_left((i + 1) % looping_tokens.len());
            out
        }
        None => looping_tokens.to_vec(),
    }
}

impl LoopSpec {
    /// Fills `rotated_tokens` from the token text.
    pub fn with_rotation<F, S>(mut self, text_of: F, boundary: &SentenceBoundary) -> Self
    where
        F: Fn(TokenId) -> Option<S>,
        S: AsRef<str>,
    {
        self.rotated_tokens = rotate_to_sentence_start(&self.looping_tokens, text_of, boundary);
        self
    }
}
