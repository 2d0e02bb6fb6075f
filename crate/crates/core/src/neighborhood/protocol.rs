//! Support/evaluation protocols over a labelled real corpus.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::curve::{
    absolute_samples, difference_samples, evenly_spaced_steps, relative_samples, Axis,
    CountParams, DeviationCurve, StepSamples, ABSOLUTE_STEP_COUNT, DEFAULT_TIME_WINDOW,
    RELATIVE_OFFSETS,
};
use super::index::SupportIndex;
use crate::decode::{generate_batch, DecodeConfig, ProbabilitySource};
use crate::error::{Error, Result};
use crate::loopdetect::{detect_in_continuation, LoopSpec};
use crate::rng::{keyed_seed, stage_seed, SplitMix64};
use crate::toylm::SelfReinforcingLM;
use crate::trace::{Passage, Split, StateTrace, TokenId};

/// Turns token sequences into hidden-state traces.
pub trait StateEncoder {
    fn encode(&self, id: &str, tokens: &[TokenId]) -> Result<StateTrace>;
}

impl StateEncoder for SelfReinforcingLM {
    fn encode(&self, id: &str, tokens: &[TokenId]) -> Result<StateTrace> {
        self.hidden_states(id, tokens)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareMode {
    /// Support from the training split, evaluation on validation + test.
    CompareSeen,
    /// Validation + test split into folds; one fold evaluated against the rest.
    CompareUnseen,
}

impl CompareMode {
    pub fn name(&self) -> &'static str {
        match self {
            CompareMode::CompareSeen => "compare_seen",
            CompareMode::CompareUnseen => "compare_unseen",
        }
    }
}

/// Indices into the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub support: Vec<usize>,
    pub evaluation: Vec<usize>,
}

/// Token-permuted copies of real passages. Each passage gets its own stream
/// keyed by its id, so the permutation does not depend on corpus order.
pub fn shuffle_control(passages: &[Passage], seed: u64) -> Result<Vec<Passage>> {
    if passages.is_empty() {
        return Err(Error::usage("shuffle_control of an empty collection"));
    }
    Ok(passages
        .iter()
        .map(|p| {
            let mut rng = SplitMix64::new(keyed_seed(seed, &p.id));
            let mut tokens = p.tokens.clone();
            rng.shuffle(&mut tokens);
            Passage {
                id: format!("{}#shuffled", p.id),
                tokens,
                text: None,
                origin: p.origin,
                condition_len: 0,
                split: p.split,
            }
        })
        .collect())
}

/// Splits a corpus into support and evaluation sets.
///
/// `compare_unseen` shuffles validation + test with `seed`, cuts it into
/// `num_folds` near-equal subsets, and returns `repeats` folds, each
/// evaluating a different subset against the union of the others.
pub fn partition(
    passages: &[Passage],
    mode: CompareMode,
    seed: u64,
    num_folds: usize,
    repeats: usize,
) -> Result<Vec<Fold>> {
    if let Some(p) = passages.iter().find(|p| p.split == Split::Synthetic) {
        return Err(Error::usage(format!(
            "passage `{}` has no train/valid/test split label",
            p.id
        )));
    }
    let held_out: Vec<usize> = passages
        .iter()
        .enumerate()
        .filter(|(_, p)| matches!(p.split, Split::Valid | Split::Test))
        .map(|(i, _)| i)
        .collect();
    match mode {
        CompareMode::CompareSeen => {
            let support: Vec<usize> = passages
                .iter()
                .enumerate()
                .filter(|(_, p)| p.split == Split::Train)
                .map(|(i, _)| i)
                .collect();
            if support.is_empty() || held_out.is_empty() {
                return Err(Error::usage(
                    "compare_seen needs both train and valid/test passages",
                ));
            }
            Ok(vec![Fold {
                support,
                evaluation: held_out,
            }])
        }
        CompareMode::CompareUnseen => {
            if num_folds < 2 || repeats == 0 || repeats > num_folds {
                return Err(Error::usage(format!(
                    "compare_unseen with {num_folds} folds and {repeats} repeats"
                )));
            }
            if held_out.len() < num_folds {
                return Err(Error::usage(format!(
                    "compare_unseen needs at least {num_folds} valid/test passages, found {}",
                    held_out.len()
                )));
            }
            let mut rng = SplitMix64::new(stage_seed(seed, "partition/unseen"));
            let mut pool = held_out;
            rng.shuffle(&mut pool);
            let n = pool.len();
            let subsets: Vec<Vec<usize>> = (0..num_folds)
                .map(|k| pool[k * n / num_folds..(k + 1) * n / num_folds].to_vec())
                .collect();
            let mut order: Vec<usize> = (0..num_folds).collect();
            rng.shuffle(&mut order);
            Ok(order[..repeats]
                .iter()
                .map(|&eval| {
                    let mut support: Vec<usize> = subsets
                        .iter()
                        .enumerate()
                        .filter(|(k, _)| *k != eval)
                        .flat_map(|(_, s)| s.iter().copied())
                        .collect();
                    support.sort_unstable();
                    let mut evaluation = subsets[eval].clone();
                    evaluation.sort_unstable();
                    Fold {
                        support,
                        evaluation,
                    }
                })
                .collect())
        }
    }
}

fn default_layer() -> usize {
    0
}
fn default_time_window() -> usize {
    DEFAULT_TIME_WINDOW
}
fn default_condition_len() -> usize {
    50
}
fn default_folds() -> usize {
    10
}
fn default_repeats() -> usize {
    3
}
fn default_offsets() -> Vec<i64> {
    RELATIVE_OFFSETS.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    #[serde(default = "default_layer")]
    pub layer: usize,
    pub radius: f64,
    #[serde(default = "default_time_window")]
    pub time_window: usize,
    #[serde(default = "default_condition_len")]
    pub condition_len: usize,
    pub strategies: Vec<DecodeConfig>,
    /// Absolute evaluation steps; defaults to 20 evenly spaced steps over
    /// the generated length.
    #[serde(default)]
    pub absolute_steps: Option<Vec<i64>>,
    #[serde(default = "default_offsets")]
    pub offsets: Vec<i64>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ProtocolConfig {
    pub fn new(radius: f64, strategies: Vec<DecodeConfig>) -> Self {
        Self {
            layer: default_layer(),
            radius,
            time_window: default_time_window(),
            condition_len: default_condition_len(),
            strategies,
            absolute_steps: None,
            offsets: default_offsets(),
            folds: default_folds(),
            repeats: default_repeats(),
            seed: 0,
        }
    }

    fn params(&self) -> CountParams {
        CountParams {
            layer: self.layer,
            radius: self.radius,
            time_window: self.time_window,
        }
    }

    fn steps(&self) -> Vec<i64> {
        match &self.absolute_steps {
            Some(s) => s.clone(),
            None => {
                let longest = self
                    .strategies
                    .iter()
                    .map(|s| s.max_new_tokens)
                    .max()
                    .unwrap_or(0);
                let len = self.condition_len + longest;
                evenly_spaced_steps(0, len.saturating_sub(1), ABSOLUTE_STEP_COUNT)
            }
        }
    }
}

/// Curves for one evaluated population (`real`, `shuffled`, or a strategy).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub name: String,
    pub absolute: DeviationCurve,
    /// Counts aligned to `rho + lambda` (generated arms only).
    pub relative: Option<DeviationCurve>,
    /// `n(generated) - n(real)` aligned to `rho + lambda` (generated arms only).
    pub difference: Option<DeviationCurve>,
    pub loop_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub mode: CompareMode,
    pub folds: Vec<Fold>,
    pub arms: Vec<ArmReport>,
}

impl ProtocolReport {
    pub fn arm(&self, name: &str) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.name == name)
    }
}

fn encode_all<E: StateEncoder + Sync + ?Sized>(
    encoder: &E,
    passages: &[Passage],
) -> Result<Vec<StateTrace>> {
    passages
        .par_iter()
        .map(|p| encoder.encode(&p.id, &p.tokens))
        .collect()
}

#[derive(Default)]
struct ArmAccumulator {
    absolute: Option<StepSamples>,
    relative: Option<StepSamples>,
    difference: Option<StepSamples>,
    looping: usize,
    total: usize,
}

fn merge_into(slot: &mut Option<StepSamples>, s: StepSamples) -> Result<()> {
    match slot {
        Some(acc) => acc.merge(s),
        None => {
            *slot = Some(s);
            Ok(())
        }
    }
}

/// Runs the support/evaluation comparison for every fold of `mode` and pools
/// the per-step samples across folds.
///
/// For each fold: support states come from encoding the support passages;
/// evaluation arms are the real evaluation passages, their shuffled copies,
/// and one continuation per evaluation passage for every decoding strategy,
/// conditioned on its first `condition_len` tokens.
pub fn compare_protocol<M>(
    passages: &[Passage],
    model: &M,
    mode: CompareMode,
    config: &ProtocolConfig,
) -> Result<ProtocolReport>
where
    M: ProbabilitySource + StateEncoder + Sync,
{
    if config.condition_len == 0 {
        return Err(Error::usage("condition_len must be positive"));
    }
    let folds = partition(passages, mode, config.seed, config.folds, config.repeats)?;
    let params = config.params();
    let steps = config.steps();
    let arm_names: Vec<String> = ["real".to_string(), "shuffled".to_string()]
        .into_iter()
        .chain(config.strategies.iter().map(|s| s.strategy.label()))
        .collect();
    let mut acc: Vec<ArmAccumulator> = arm_names.iter().map(|_| ArmAccumulator::default()).collect();

    for (f, fold) in folds.iter().enumerate() {
        let support: Vec<Passage> = fold.support.iter().map(|&i| passages[i].clone()).collect();
        let support_traces = encode_all(model, &support)?;
        let index = SupportIndex::build(&support_traces, config.layer)?;

        let evaluation: Vec<Passage> = fold
            .evaluation
            .iter()
            .map(|&i| passages[i].clone())
            .collect();
        if let Some(short) = evaluation.iter().find(|p| p.len() < config.condition_len) {
            return Err(Error::usage(format!(
                "passage `{}` is shorter than the {}-token condition",
                short.id, config.condition_len
            )));
        }
        let real_traces = encode_all(model, &evaluation)?;
        let real_refs: Vec<&StateTrace> = real_traces.iter().collect();
        merge_into(
            &mut acc[0].absolute,
            absolute_samples(&index, &real_refs, &steps, &params)?,
        )?;

        let shuffled = shuffle_control(&evaluation, stage_seed(config.seed, &format!("shuffle/{f}")))?;
        let shuffled_traces = encode_all(model, &shuffled)?;
        let shuffled_refs: Vec<&StateTrace> = shuffled_traces.iter().collect();
        merge_into(
            &mut acc[1].absolute,
            absolute_samples(&index, &shuffled_refs, &steps, &params)?,
        )?;

        let conditions: Vec<Vec<TokenId>> = evaluation
            .iter()
            .map(|p| p.tokens[..config.condition_len].to_vec())
            .collect();
        for (s, decode) in config.strategies.iter().enumerate() {
            let label = decode.strategy.label();
            let cfg = DecodeConfig {
                seed: decode.seed ^ stage_seed(config.seed, &format!("generate/{f}/{label}")),
                ..*decode
            };
            let generated = generate_batch(model, &format!("{label}/{f}/"), &conditions, &cfg)?;
            let loops: Vec<Option<LoopSpec>> = generated.iter().map(detect_in_continuation).collect();
            let loop_refs: Vec<Option<&LoopSpec>> = loops.iter().map(Option::as_ref).collect();
            let gen_traces = encode_all(model, &generated)?;
            let gen_refs: Vec<&StateTrace> = gen_traces.iter().collect();

            let arm = &mut acc[2 + s];
            arm.looping += loops.iter().filter(|l| l.is_some()).count();
            arm.total += loops.len();
            merge_into(
                &mut arm.absolute,
                absolute_samples(&index, &gen_refs, &steps, &params)?,
            )?;
            merge_into(
                &mut arm.relative,
                relative_samples(&index, &gen_refs, &loop_refs, &config.offsets, &params)?,
            )?;
            merge_into(
                &mut arm.difference,
                difference_samples(&index, &gen_refs, &real_refs, &loop_refs, &config.offsets, &params)?,
            )?;
        }
    }

    let arms = arm_names
        .into_iter()
        .zip(acc)
        .map(|(name, a)| ArmReport {
            name,
            absolute: a
                .absolute
                .unwrap_or_else(|| StepSamples::new(&steps))
                .summarize(Axis::AbsoluteTime),
            relative: a.relative.map(|s| s.summarize(Axis::RelativeToLoopStart)),
            difference: a.difference.map(|s| s.summarize(Axis::RelativeToLoopStart)),
            loop_rate: (a.total > 0).then(|| a.looping as f64 / a.total as f64),
        })
        .collect();
    Ok(ProtocolReport { mode, folds, arms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn corpus() -> Vec<Passage> {
        let mut out = Vec::new();
        for i in 0..40u32 {
            let split = match i % 4 {
                0 | 1 => Split::Train,
                2 => Split::Valid,
                _ => Split::Test,
            };
            out.push(Passage::real(format!("p{i}"), vec![i % 7, i % 5, 3], split));
        }
        out
    }

    #[test]
    fn seen_split_is_disjoint() {
        let c = corpus();
        let folds = partition(&c, CompareMode::CompareSeen, 0, 10, 3).unwrap();
        assert_eq!(folds.len(), 1);
        let s: HashSet<_> = folds[0].support.iter().collect();
        assert!(folds[0].evaluation.iter().all(|i| !s.contains(i)));
        assert!(folds[0].support.iter().all(|&i| c[i].split == Split::Train));
        assert_eq!(folds[0].evaluation.len(), 20);
    }

    #[test]
    fn unseen_uses_nine_subsets_as_support() {
        let c = corpus();
        let folds = partition(&c, CompareMode::CompareUnseen, 9, 10, 3).unwrap();
        assert_eq!(folds.len(), 3);
        let mut evals = HashSet::new();
        for f in &folds {
            assert_eq!(f.evaluation.len(), 2);
            assert_eq!(f.support.len(), 18);
            let s: HashSet<_> = f.support.iter().collect();
            assert!(f.evaluation.iter().all(|i| !s.contains(i)));
            assert!(evals.insert(f.evaluation.clone()));
            assert!(f
                .support
                .iter()
                .chain(&f.evaluation)
                .all(|&i| c[i].split != Split::Train));
        }
    }

    #[test]
    fn unlabeled_or_missing_splits_rejected() {
        let mut c = corpus();
        c.push(Passage::generated("g", vec![1], 0, Split::Synthetic));
        assert!(partition(&c, CompareMode::CompareSeen, 0, 10, 3).is_err());
        let train_only: Vec<Passage> = corpus()
            .into_iter()
            .filter(|p| p.split == Split::Train)
            .collect();
        assert!(partition(&train_only, CompareMode::CompareSeen, 0, 10, 3).is_err());
        assert!(partition(&train_only, CompareMode::CompareUnseen, 0, 10, 3).is_err());
    }

    #[test]
    fn shuffle_preserves_multiset() {
        let single = vec![Passage::real("one", vec![4], Split::Valid)];
        assert_eq!(shuffle_control(&single, 1).unwrap()[0].tokens, vec![4]);

        let ps = vec![Passage::real("a", (0..50).collect(), Split::Valid)];
        let a = shuffle_control(&ps, 7).unwrap();
        let b = shuffle_control(&ps, 7).unwrap();
        assert_eq!(a, b);
        let mut sorted = a[0].tokens.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, ps[0].tokens);
        assert_ne!(a[0].tokens, ps[0].tokens);
        assert!(shuffle_control(&[], 0).is_err());
    }
}
