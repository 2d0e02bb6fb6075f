//! A small self-reinforcing bigram model with inspectable hidden states.
//!
//! The next-token distribution mixes a fixed random bigram table with the
//! empirical continuations of the current token inside a trailing window:
//!
//! ```text
//! P(v | prefix) = (1 - beta) * base[last][v] + beta * count(last -> v) / count(last -> *)
//! ```
//!
//! so anything the model has just repeated becomes more likely to repeat
//! again. Hidden states are a fixed linear projection of the bigram counts in
//! the same kind of trailing window. Each bigram's projection column is an
//! independent random vector plus a shared direction scaled by the bigram's
//! log-plausibility `ln(V * base[u][v])`, so windows made of likely bigrams
//! sit in a common region of state space and implausible ones drift away.

use serde::{Deserialize, Serialize};

use crate::decode::{compensated_sum, ProbabilitySource, StepDistribution};
use crate::error::{Error, Result};
use crate::rng::{stage_seed, SplitMix64};
use crate::trace::{Passage, Split, StateTrace, TokenId};

/// Tokens whose id is a multiple of this render with a trailing period.
pub const SENTENCE_PERIOD: u32 = 16;

fn default_vocab() -> usize {
    256
}
fn default_beta() -> f64 {
    ToyLmSpec::DEFAULT_BETA
}
fn default_window() -> usize {
    64
}
fn default_state_dim() -> usize {
    32
}
fn default_sharpness() -> f64 {
    ToyLmSpec::DEFAULT_SHARPNESS
}
fn default_plausibility() -> f64 {
    ToyLmSpec::DEFAULT_PLAUSIBILITY
}

/// JSON-constructible description of a [`SelfReinforcingLM`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyLmSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_vocab")]
    pub vocab_size: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_state_dim")]
    pub state_dim: usize,
    /// Exponent applied to the uniform draws of each base row before
    /// normalizing; larger values concentrate a row on fewer successors.
    #[serde(default = "default_sharpness")]
    pub sharpness: f64,
    /// Weight of the shared log-plausibility direction in the projection.
    #[serde(default = "default_plausibility")]
    pub plausibility: f64,
}

impl ToyLmSpec {
    pub const DEFAULT_BETA: f64 = 0.5;
    pub const DEFAULT_SHARPNESS: f64 = 4.0;
    pub const DEFAULT_PLAUSIBILITY: f64 = 0.3;
    /// Neighborhood radius that suits default-spec states.
    pub const DEFAULT_RADIUS: f64 = 40.0;
}

impl Default for ToyLmSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            vocab_size: default_vocab(),
            beta: default_beta(),
            window: default_window(),
            state_dim: default_state_dim(),
            sharpness: default_sharpness(),
            plausibility: default_plausibility(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelfReinforcingLM {
    spec: ToyLmSpec,
    /// Row-major `vocab x vocab`, each row stochastic.
    base: Vec<f64>,
    projection_seed: u64,
    /// Unit vector shared by all projection columns.
    plausible_dir: Vec<f64>,
}

impl SelfReinforcingLM {
    pub fn new(spec: ToyLmSpec) -> Result<Self> {
        if spec.vocab_size < 2 {
            return Err(Error::usage("toy LM needs at least 2 tokens"));
        }
        if !(0.0..1.0).contains(&spec.beta) {
            return Err(Error::usage(format!("beta = {} outside [0, 1)", spec.beta)));
        }
        if spec.window < 2 || spec.state_dim == 0 {
            return Err(Error::usage("window must be >= 2 and state_dim >= 1"));
        }
        if !(spec.sharpness > 0.0 && spec.sharpness.is_finite()) {
            return Err(Error::usage("sharpness must be positive"));
        }
        if !spec.plausibility.is_finite() {
            return Err(Error::usage("plausibility weight must be finite"));
        }
        let v = spec.vocab_size;
        let mut rng = SplitMix64::new(stage_seed(spec.seed, "toylm/base"));
        let mut base = Vec::with_capacity(v * v);
        for _ in 0..v {
            // 1 - u lies in (0, 1], so every entry is strictly positive.
            let row: Vec<f64> = (0..v)
                .map(|_| (1.0 - rng.next_f64()).powf(spec.sharpness))
                .collect();
            let z = compensated_sum(row.iter().copied());
            base.extend(row.into_iter().map(|w| w / z));
        }
        let mut rng = SplitMix64::new(stage_seed(spec.seed, "toylm/direction"));
        let mut dir: Vec<f64> = (0..spec.state_dim).map(|_| 2.0 * rng.next_f64() - 1.0).collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|x| *x /= norm);
        Ok(Self {
            projection_seed: stage_seed(spec.seed, "toylm/projection"),
            spec,
            base,
            plausible_dir: dir,
        })
    }

    pub fn spec(&self) -> &ToyLmSpec {
        &self.spec
    }

    pub fn beta(&self) -> f64 {
        self.spec.beta
    }

    pub fn window(&self) -> usize {
        self.spec.window
    }

    pub fn state_dim(&self) -> usize {
        self.spec.state_dim
    }

    pub fn base_row(&self, token: TokenId) -> &[f64] {
        let v = self.spec.vocab_size;
        let start = token as usize * v;
        &self.base[start..start + v]
    }

    /// Same table and projection with a different reinforcement weight.
    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::usage(format!("beta = {beta} outside [0, 1)")));
        }
        let mut out = self.clone();
        out.spec.beta = beta;
        Ok(out)
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        if let Some(&t) = tokens
            .iter()
            .find(|&&t| t as usize >= self.spec.vocab_size)
        {
            return Err(Error::usage(format!(
                "token {t} outside toy vocabulary of {}",
                self.spec.vocab_size
            )));
        }
        Ok(())
    }

    /// Counts of tokens that followed `last` among the final `window` tokens.
    fn continuation_counts(&self, prefix: &[TokenId]) -> Vec<(TokenId, usize)> {
        let n = prefix.len();
        let last = prefix[n - 1];
        let start = n.saturating_sub(self.spec.window);
        let mut counts: Vec<(TokenId, usize)> = Vec::new();
        for i in start..n - 1 {
            if prefix[i] == last {
                let next = prefix[i + 1];
                match counts.iter_mut().find(|(t, _)| *t == next) {
                    Some((_, c)) => *c += 1,
                    None => counts.push((next, 1)),
                }
            }
        }
        counts
    }

    /// Display strings for each token id.
    pub fn vocabulary(&self) -> Vec<String> {
        (0..self.spec.vocab_size as u32)
            .map(|id| {
                if id % SENTENCE_PERIOD == 0 {
                    format!("w{id}.")
                } else {
                    format!("w{id}")
                }
            })
            .collect()
    }

    pub fn detokenize(&self, tokens: &[TokenId]) -> String {
        let vocab = self.vocabulary();
        tokens
            .iter()
            .map(|&t| vocab[t as usize].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn projection_entry(&self, pair: u64, d: usize) -> f32 {
        let mut rng = SplitMix64::new(
            self.projection_seed ^ pair.wrapping_mul(0xD1B5_4A32_D192_ED03) ^ d as u64,
        );
        (2.0 * rng.next_f64() - 1.0) as f32
    }

    /// One-layer trace; the state at `t` projects the counts of bigrams lying
    /// wholly inside `tokens[t + 1 - window ..= t]`.
    pub fn hidden_states(&self, id: &str, tokens: &[TokenId]) -> Result<StateTrace> {
        if tokens.is_empty() {
            return Err(Error::usage("cannot encode an empty passage"));
        }
        self.check_tokens(tokens)?;
        let dim = self.spec.state_dim;
        let v = self.spec.vocab_size as u64;
        let mut data = Vec::with_capacity(tokens.len() * dim);
        let mut pairs: Vec<u64> = Vec::with_capacity(self.spec.window);
        let mut acc = vec![0.0f64; dim];
        for t in 0..tokens.len() {
            let first = (t + 1).saturating_sub(self.spec.window);
            pairs.clear();
            pairs.extend((first..t).map(|i| u64::from(tokens[i]) * v + u64::from(tokens[i + 1])));
            // Canonical order makes the state a function of the pair multiset.
            pairs.sort_unstable();
            acc.iter_mut().for_each(|a| *a = 0.0);
            for &pair in &pairs {
                let shared = self.spec.plausibility * (v as f64 * self.base[pair as usize]).ln();
                for (d, a) in acc.iter_mut().enumerate() {
                    *a += f64::from(self.projection_entry(pair, d)) + shared * self.plausible_dir[d];
                }
            }
            data.extend(acc.iter().map(|&a| a as f32));
        }
        StateTrace::new(id, 1, tokens.len(), dim, data)
    }

    /// Passages drawn from the base table alone (no reinforcement), used as
    /// the toy stand-in for real text. Starting tokens are uniform.
    pub fn sample_real(&self, id_prefix: &str, count: usize, len: usize, split: Split, seed: u64) -> Vec<Passage> {
        let v = self.spec.vocab_size;
        (0..count)
            .map(|i| {
                let mut rng = SplitMix64::new(crate::rng::passage_seed(seed, i as u64));
                let mut tokens = Vec::with_capacity(len);
                tokens.push(rng.below(v as u64) as TokenId);
                while tokens.len() < len {
                    let row = self.base_row(*tokens.last().unwrap());
                    let u = rng.next_f64();
                    let mut cum = 0.0;
                    let mut pick = v - 1;
                    for (j, &p) in row.iter().enumerate() {
                        cum += p;
                        if u < cum {
                            pick = j;
                            break;
                        }
                    }
                    tokens.push(pick as TokenId);
                }
                let mut p = Passage::real(format!("{id_prefix}{i}"), tokens, split);
                p.text = Some(self.detokenize(&p.tokens));
                p
            })
            .collect()
    }
}

impl ProbabilitySource for SelfReinforcingLM {
    fn vocab_size(&self) -> usize {
        self.spec.vocab_size
    }

    fn next_distribution(&self, prefix: &[TokenId]) -> Result<StepDistribution> {
        let Some(&last) = prefix.last() else {
            return Err(Error::usage("next_distribution needs a non-empty prefix"));
        };
        self.check_tokens(prefix)?;
        let base = self.base_row(last);
        let counts = self.continuation_counts(prefix);
        if counts.is_empty() || self.spec.beta == 0.0 {
            return StepDistribution::new(base.to_vec());
        }
        let total: usize = counts.iter().map(|(_, c)| c).sum();
        let beta = self.spec.beta;
        let mut probs: Vec<f64> = base.iter().map(|&p| (1.0 - beta) * p).collect();
        for (tok, c) in counts {
            probs[tok as usize] += beta * c as f64 / total as f64;
        }
        StepDistribution::new(probs)
    }
}
