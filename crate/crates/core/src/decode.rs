//! Decoding strategies over an arbitrary next-token probability source.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{passage_seed, SplitMix64};
use crate::trace::{Passage, Split, TokenId};

/// Tolerance on the total mass of a distribution.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Default continuation length: 512 analysed tokens minus a 50-token condition.
pub const DEFAULT_MAX_NEW_TOKENS: usize = 462;

/// Neumaier-compensated sum.
pub(crate) fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Probability vector over the vocabulary for one decoding step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDistribution {
    probs: Vec<f64>,
}

impl StepDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::usage("empty distribution"));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(Error::usage(format!("probability {p} at index {i}")));
        }
        let total = compensated_sum(probs.iter().copied());
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::usage(format!("probabilities sum to {total}")));
        }
        Ok(Self { probs })
    }

    /// Softmax of raw scores, e.g. a row of an exported logits file.
    pub fn from_logits(logits: &[f32]) -> Result<Self> {
        let max = logits
            .iter()
            .copied()
            .fold(f32::NEG_INFINITY, f32::max);
        if !max.is_finite() {
            return Err(Error::usage("logits contain no finite maximum"));
        }
        let exps: Vec<f64> = logits
            .iter()
            .map(|&l| (f64::from(l) - f64::from(max)).exp())
            .collect();
        let z = compensated_sum(exps.iter().copied());
        Self::new(exps.into_iter().map(|e| e / z).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn vocab_size(&self) -> usize {
        self.probs.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.probs
    }

    /// Highest-probability token; ties go to the lowest id.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0usize;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        best as TokenId
    }

    /// Token ids by descending probability, ties by ascending id.
    pub fn ranked(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.probs.len()).collect();
        order.sort_by(|&a, &b| self.probs[b].total_cmp(&self.probs[a]).then(a.cmp(&b)));
        order
    }

    /// Keeps only `keep`, renormalized. When `keep` already covers every
    /// token with nonzero mass the distribution is returned unchanged.
    fn restrict_to(&self, keep: &[usize]) -> Self {
        let support = self.probs.iter().filter(|&&p| p > 0.0).count();
        let kept_support = keep.iter().filter(|&&i| self.probs[i] > 0.0).count();
        if kept_support == support {
            return self.clone();
        }
        let mass = compensated_sum(keep.iter().map(|&i| self.probs[i]));
        let mut probs = vec![0.0; self.probs.len()];
        for &i in keep {
            probs[i] = self.probs[i] / mass;
        }
        Self { probs }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum Strategy {
    Greedy,
    Sample,
    TopK { k: usize },
    Nucleus { p: f64 },
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Greedy => "greedy",
            Strategy::Sample => "sample",
            Strategy::TopK { .. } => "top_k",
            Strategy::Nucleus { .. } => "nucleus",
        }
    }

    /// Short label including the parameter, e.g. `top_k40` or `nucleus0.9`.
    pub fn label(&self) -> String {
        match self {
            Strategy::TopK { k } => format!("top_k{k}"),
            Strategy::Nucleus { p } => format!("nucleus{p}"),
            other => other.name().to_string(),
        }
    }
}

fn default_max_new_tokens() -> usize {
    DEFAULT_MAX_NEW_TOKENS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    #[serde(flatten)]
    pub strategy: Strategy,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: usize,
    #[serde(default)]
    pub seed: u64,
}

impl DecodeConfig {
    pub fn new(strategy: Strategy, max_new_tokens: usize, seed: u64) -> Self {
        Self {
            strategy,
            max_new_tokens,
            seed,
        }
    }

    pub fn greedy(max_new_tokens: usize) -> Self {
        Self::new(Strategy::Greedy, max_new_tokens, 0)
    }

    pub fn validate(&self) -> Result<()> {
        match self.strategy {
            Strategy::TopK { k } if k == 0 => Err(Error::usage("top_k requires k >= 1")),
            Strategy::Nucleus { p } if !(p > 0.0 && p <= 1.0) => {
                Err(Error::usage(format!("nucleus p = {p} outside (0, 1]")))
            }
            _ if self.max_new_tokens == 0 => Err(Error::usage("max_new_tokens must be positive")),
            _ => Ok(()),
        }
    }
}

/// Applies the strategy's support restriction. `k` larger than the
/// vocabulary is clamped.
pub fn restrict(dist: &StepDistribution, strategy: &Strategy) -> Result<StepDistribution> {
    match *strategy {
        Strategy::Greedy | Strategy::Sample => Ok(dist.clone()),
        Strategy::TopK { k } => {
            if k == 0 {
                return Err(Error::usage("top_k requires k >= 1"));
            }
            let ranked = dist.ranked();
            Ok(dist.restrict_to(&ranked[..k.min(ranked.len())]))
        }
        Strategy::Nucleus { p } => {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::usage(format!("nucleus p = {p} outside (0, 1]")));
            }
            if p >= 1.0 {
                return Ok(dist.clone());
            }
            let ranked = dist.ranked();
            let mut sum = 0.0f64;
            let mut comp = 0.0f64;
            let mut cut = ranked.len();
            for (n, &i) in ranked.iter().enumerate() {
                let v = dist.probs[i];
                let t = sum + v;
                if sum.abs() >= v.abs() {
                    comp += (sum - t) + v;
                } else {
                    comp += (v - t) + sum;
                }
                sum = t;
                if sum + comp >= p {
                    cut = n + 1;
                    break;
                }
            }
            Ok(dist.restrict_to(&ranked[..cut]))
        }
    }
}

/// Picks the next token. Greedy ignores `rng`.
pub fn select(
    dist: &StepDistribution,
    strategy: &Strategy,
    rng: &mut SplitMix64,
) -> Result<TokenId> {
    if let Strategy::Greedy = strategy {
        return Ok(dist.argmax());
    }
    let restricted = restrict(dist, strategy)?;
    let u = rng.next_f64();
    let mut cum = 0.0;
    let mut last_nonzero = 0;
    for (i, &p) in restricted.probs.iter().enumerate() {
        if p > 0.0 {
            last_nonzero = i;
            cum += p;
            if u < cum {
                return Ok(i as TokenId);
            }
        }
    }
    Ok(last_nonzero as TokenId)
}

/// Anything that assigns next-token probabilities to a prefix.
pub trait ProbabilitySource {
    fn vocab_size(&self) -> usize;

    fn next_distribution(&self, prefix: &[TokenId]) -> Result<StepDistribution>;
}

impl<M: ProbabilitySource + ?Sized> ProbabilitySource for &M {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn next_distribution(&self, prefix: &[TokenId]) -> Result<StepDistribution> {
        (**self).next_distribution(prefix)
    }
}

/// Extends `condition` by `config.max_new_tokens` tokens. The random stream
/// is seeded with `config.seed`.
pub fn generate<M: ProbabilitySource + ?Sized>(
    model: &M,
    id: impl Into<String>,
    condition: &[TokenId],
    config: &DecodeConfig,
) -> Result<Passage> {
    config.validate()?;
    if condition.is_empty() {
        return Err(Error::usage("generation needs a non-empty condition"));
    }
    let mut rng = SplitMix64::new(config.seed);
    let mut tokens = Vec::with_capacity(condition.len() + config.max_new_tokens);
    tokens.extend_from_slice(condition);
    for step in 0..config.max_new_tokens {
        let dist = model.next_distribution(&tokens).map_err(|e| match e {
            Error::Model { reason, .. } => Error::Model { step, reason },
            other => Error::Model {
                step,
                reason: other.to_string(),
            },
        })?;
        if dist.vocab_size() != model.vocab_size() {
            return Err(Error::Model {
                step,
                reason: format!(
                    "distribution over {} tokens, model vocabulary is {}",
                    dist.vocab_size(),
                    model.vocab_size()
                ),
            });
        }
        tokens.push(select(&dist, &config.strategy, &mut rng)?);
    }
    Ok(Passage::generated(
        id,
        tokens,
        condition.len(),
        Split::Synthetic,
    ))
}

/// Generates one passage per condition in parallel. Passage `i` uses seed
/// `config.seed ^ i` and id `"{id_prefix}{i}"`; output order matches input.
pub fn generate_batch<M>(
    model: &M,
    id_prefix: &str,
    conditions: &[Vec<TokenId>],
    config: &DecodeConfig,
) -> Result<Vec<Passage>>
where
    M: ProbabilitySource + Sync + ?Sized,
{
    conditions
        .par_iter()
        .enumerate()
        .map(|(i, cond)| {
            let cfg = DecodeConfig {
                seed: passage_seed(config.seed, i as u64),
                ..*config
            };
            generate(model, format!("{id_prefix}{i}"), cond, &cfg)
        })
        .collect()
}
