//! How strongly a conditioning sequence gets echoed back by the model.
//!
//! A condition `x` is fed to the model (optionally after a context `c` and
//! repeated `k` times); the first `len(x)` generated tokens are compared with
//! `x` by ROUGE-L on detokenized words.

use std::io::Write;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rouge::{rouge_l_text, RougeScore};
use crate::decode::{generate, DecodeConfig, ProbabilitySource};
use crate::error::{Error, Result};
use crate::loopdetect::{detect_in_continuation, rotate_to_sentence_start, SentenceBoundary};
use crate::rng::{passage_seed, stage_seed, SplitMix64};
use crate::trace::{Passage, TokenId};

/// Number of sentences in the shared context of repeated conditions.
pub const CONTEXT_SENTENCES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionClass {
    LoopingSequence,
    FirstSentence,
    LastSentence,
}

impl ConditionClass {
    pub fn name(&self) -> &'static str {
        match self {
            ConditionClass::LoopingSequence => "looping_sequence",
            ConditionClass::FirstSentence => "first_sentence",
            ConditionClass::LastSentence => "last_sentence",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSet {
    pub class: ConditionClass,
    pub conditions: Vec<Vec<TokenId>>,
}

/// One table cell. `repeats == 0` marks the unrepeated, context-free mode.
/// `mean`/`std` are over F1; precision and recall means are kept alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InducingnessReport {
    pub condition_class: ConditionClass,
    pub repeats: usize,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub skipped: usize,
}

/// Writes `class,repeats,mean,std,n,mean_precision,mean_recall` rows.
pub fn write_reports_csv<W: Write>(mut out: W, reports: &[InducingnessReport]) -> std::io::Result<()> {
    writeln!(out, "class,repeats,mean,std,n,mean_precision,mean_recall")?;
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.condition_class.name(),
            r.repeats,
            r.mean,
            r.std,
            r.n,
            r.mean_precision,
            r.mean_recall
        )?;
    }
    Ok(())
}

/// Complete sentences (each ending in a terminal token). A trailing fragment
/// without a terminal is dropped.
pub fn split_sentences<F>(tokens: &[TokenId], is_terminal: F) -> Vec<&[TokenId]>
where
    F: Fn(TokenId) -> bool,
{
    let mut out = Vec::new();
    let mut start = 0;
    for (i, &t) in tokens.iter().enumerate() {
        if is_terminal(t) {
            out.push(&tokens[start..=i]);
            start = i + 1;
        }
    }
    out
}

/// Rotated looping sequences of every passage whose continuation loops.
pub fn looping_conditions<F, S>(
    generated: &[Passage],
    text_of: F,
    boundary: &SentenceBoundary,
) -> Vec<Vec<TokenId>>
where
    F: Fn(TokenId) -> Option<S> + Copy,
    S: AsRef<str>,
{
    generated
        .iter()
        .filter_map(detect_in_continuation)
        .map(|spec| rotate_to_sentence_start(&spec.looping_tokens, text_of, boundary))
        .collect()
}

/// First and last complete sentence of each passage that has one.
pub fn sentence_conditions<F>(passages: &[Passage], is_terminal: F) -> (ConditionSet, ConditionSet)
where
    F: Fn(TokenId) -> bool + Copy,
{
    let mut first = Vec::new();
    let mut last = Vec::new();
    for p in passages {
        let sents = split_sentences(&p.tokens, is_terminal);
        if let (Some(f), Some(l)) = (sents.first(), sents.last()) {
            first.push(f.to_vec());
            last.push(l.to_vec());
        }
    }
    (
        ConditionSet {
            class: ConditionClass::FirstSentence,
            conditions: first,
        },
        ConditionSet {
            class: ConditionClass::LastSentence,
            conditions: last,
        },
    )
}

/// The first [`CONTEXT_SENTENCES`] sentences of one passage chosen with
/// `seed` among those that have enough sentences.
pub fn pick_context<F>(passages: &[Passage], is_terminal: F, seed: u64) -> Result<Vec<TokenId>>
where
    F: Fn(TokenId) -> bool + Copy,
{
    let eligible: Vec<Vec<TokenId>> = passages
        .iter()
        .filter_map(|p| {
            let sents = split_sentences(&p.tokens, is_terminal);
            (sents.len() >= CONTEXT_SENTENCES)
                .then(|| sents[..CONTEXT_SENTENCES].concat())
        })
        .collect();
    if eligible.is_empty() {
        return Err(Error::usage(format!(
            "no passage has {CONTEXT_SENTENCES} complete sentences for the context"
        )));
    }
    let mut rng = SplitMix64::new(stage_seed(seed, "inducingness/context"));
    let pick = rng.below(eligible.len() as u64) as usize;
    Ok(eligible[pick].clone())
}

fn score_one<M, D>(
    model: &M,
    prefix: &[TokenId],
    target: &[TokenId],
    cfg: &DecodeConfig,
    detok: &D,
) -> Result<RougeScore>
where
    M: ProbabilitySource + ?Sized,
    D: Fn(&[TokenId]) -> String,
{
    let cfg = DecodeConfig {
        max_new_tokens: target.len(),
        ..*cfg
    };
    let out = generate(model, "condition", prefix, &cfg)?;
    rouge_l_text(&detok(target), &detok(out.continuation()))
}

fn summarize(
    class: ConditionClass,
    repeats: usize,
    scores: Vec<Result<RougeScore>>,
) -> Result<InducingnessReport> {
    let mut ok = Vec::with_capacity(scores.len());
    let mut skipped = 0;
    for (i, s) in scores.into_iter().enumerate() {
        match s {
            Ok(s) => ok.push(s),
            Err(e) => {
                warn!("{} condition {i} (repeats {repeats}) skipped: {e}", class.name());
                skipped += 1;
            }
        }
    }
    if ok.is_empty() {
        return Err(Error::usage(format!(
            "every {} condition failed (repeats {repeats})",
            class.name()
        )));
    }
    let n = ok.len() as f64;
    let mean = ok.iter().map(|s| s.f1).sum::<f64>() / n;
    let var = ok.iter().map(|s| (s.f1 - mean).powi(2)).sum::<f64>() / n;
    Ok(InducingnessReport {
        condition_class: class,
        repeats,
        mean,
        std: var.sqrt(),
        n: ok.len(),
        mean_precision: ok.iter().map(|s| s.precision).sum::<f64>() / n,
        mean_recall: ok.iter().map(|s| s.recall).sum::<f64>() / n,
        skipped,
    })
}

fn run_cell<M, D>(
    model: &M,
    set: &ConditionSet,
    context: &[TokenId],
    repeats: usize,
    decode: &DecodeConfig,
    detok: &D,
) -> Result<InducingnessReport>
where
    M: ProbabilitySource + Sync + ?Sized,
    D: Fn(&[TokenId]) -> String + Sync,
{
    if set.conditions.is_empty() {
        return Err(Error::usage(format!("no {} conditions", set.class.name())));
    }
    let scores: Vec<Result<RougeScore>> = set
        .conditions
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            if x.is_empty() {
                return Err(Error::usage("empty condition"));
            }
            let mut prefix = context.to_vec();
            for _ in 0..repeats.max(1) {
                prefix.extend_from_slice(x);
            }
            let cfg = DecodeConfig {
                seed: passage_seed(decode.seed, i as u64),
                ..*decode
            };
            score_one(model, &prefix, x, &cfg, detok)
        })
        .collect();
    summarize(set.class, repeats, scores)
}

/// Each condition alone as the prompt.
pub fn inducingness_simple<M, D>(
    sets: &[ConditionSet],
    model: &M,
    decode: &DecodeConfig,
    detok: D,
) -> Result<Vec<InducingnessReport>>
where
    M: ProbabilitySource + Sync + ?Sized,
    D: Fn(&[TokenId]) -> String + Sync,
{
    decode.validate()?;
    sets.iter()
        .map(|set| run_cell(model, set, &[], 0, decode, &detok))
        .collect()
}

/// `context` followed by the condition repeated `k` times, for each `k` in
/// `repeats`.
pub fn inducingness_repeated<M, D>(
    context: &[TokenId],
    sets: &[ConditionSet],
    repeats: &[usize],
    model: &M,
    decode: &DecodeConfig,
    detok: D,
) -> Result<Vec<InducingnessReport>>
where
    M: ProbabilitySource + Sync + ?Sized,
    D: Fn(&[TokenId]) -> String + Sync,
{
    decode.validate()?;
    if repeats.iter().any(|&k| k == 0) {
        return Err(Error::usage("repeat counts start at 1"));
    }
    let mut out = Vec::with_capacity(sets.len() * repeats.len());
    for set in sets {
        for &k in repeats {
            out.push(run_cell(model, set, context, k, decode, &detok)?);
        }
    }
    Ok(out)
}
