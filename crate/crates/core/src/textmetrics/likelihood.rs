//! Per-time-step masked-LM log-likelihood curves.
//!
//! For every passage and repetition, `ceil(fraction * T)` positions are
//! masked, a [`MaskedScorer`] reports the log-likelihood of recovering each
//! masked token, and the scores are averaged per time step over all
//! repetitions and passages.
//!
//! Mask positions are a shared contract with external scorers: passage `id`
//! uses one [`SplitMix64`] stream seeded with `seed ^ fnv1a64(id)`, and
//! repetition `r` is the `r`-th call of `choose_positions(T, k)` on it.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{keyed_seed, SplitMix64};
use crate::trace::{Passage, TokenId};

/// Fraction of tokens masked per repetition.
pub const DEFAULT_MASK_FRACTION: f64 = 0.15;

/// Repetitions per passage.
pub const DEFAULT_REPETITIONS: usize = 10;

pub struct MaskRequest<'a> {
    pub passage_id: &'a str,
    pub repetition: usize,
    pub tokens: &'a [TokenId],
    pub positions: &'a [usize],
}

/// Log-likelihood of each masked token given the rest of the passage.
pub trait MaskedScorer {
    fn score(&self, request: &MaskRequest<'_>) -> Result<Vec<f64>>;
}

/// Assigns `1 / vocab_size` to every token.
#[derive(Debug, Clone, Copy)]
pub struct UniformScorer {
    pub vocab_size: usize,
}

impl MaskedScorer for UniformScorer {
    fn score(&self, request: &MaskRequest<'_>) -> Result<Vec<f64>> {
        Ok(vec![-(self.vocab_size as f64).ln(); request.positions.len()])
    }
}

/// One line of a score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub passage_id: String,
    pub repetition: usize,
    pub positions: Vec<usize>,
    pub loglik: Vec<f64>,
}

/// Scores read from a JSONL file written by an external masked LM.
#[derive(Debug, Clone, Default)]
pub struct ScoreFileScorer {
    records: HashMap<(String, usize), ScoreRecord>,
}

impl ScoreFileScorer {
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = HashMap::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ScoreRecord = serde_json::from_str(&line)
                .map_err(|e| Error::format(format!("{}:{}: {e}", path.display(), n + 1)))?;
            if rec.positions.len() != rec.loglik.len() {
                return Err(Error::format(format!(
                    "{}:{}: {} positions but {} scores",
                    path.display(),
                    n + 1,
                    rec.positions.len(),
                    rec.loglik.len()
                )));
            }
            records.insert((rec.passage_id.clone(), rec.repetition), rec);
        }
        Ok(Self { records })
    }

    pub fn from_records(records: impl IntoIterator<Item = ScoreRecord>) -> Self {
        Self {
            records: records
                .into_iter()
                .map(|r| ((r.passage_id.clone(), r.repetition), r))
                .collect(),
        }
    }
}

impl MaskedScorer for ScoreFileScorer {
    fn score(&self, request: &MaskRequest<'_>) -> Result<Vec<f64>> {
        let rec = self
            .records
            .get(&(request.passage_id.to_string(), request.repetition))
            .ok_or_else(|| {
                Error::format(format!(
                    "no scores for passage `{}` repetition {}",
                    request.passage_id, request.repetition
                ))
            })?;
        if rec.positions != request.positions {
            return Err(Error::format(format!(
                "score file masks differ from the expected positions for `{}` repetition {}",
                request.passage_id, request.repetition
            )));
        }
        Ok(rec.loglik.clone())
    }
}

pub fn write_score_file(path: &Path, records: &[ScoreRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::json(path, e))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// `ceil(fraction * len)`, at least 1 and at most `len`.
pub fn mask_count(len: usize, fraction: f64) -> usize {
    ((fraction * len as f64).ceil() as usize).clamp(1, len.max(1))
}

/// Mask positions of every repetition of one passage.
pub fn mask_schedule(
    passage_id: &str,
    len: usize,
    fraction: f64,
    repetitions: usize,
    seed: u64,
) -> Vec<Vec<usize>> {
    let mut rng = SplitMix64::new(keyed_seed(seed, passage_id));
    let k = mask_count(len, fraction);
    (0..repetitions)
        .map(|_| rng.choose_positions(len, k))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodPoint {
    pub step: usize,
    pub mean: f64,
    pub n: usize,
}

/// Steps that were never masked are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodCurve {
    pub points: Vec<LikelihoodPoint>,
}

impl LikelihoodCurve {
    pub fn write_csv<W: Write>(&self, mut out: W, label: &str) -> std::io::Result<()> {
        writeln!(out, "step,mean_loglik,n,corpus")?;
        for p in &self.points {
            writeln!(out, "{},{},{},{label}", p.step, p.mean, p.n)?;
        }
        Ok(())
    }
}

fn validate_scores(scores: &[f64], request: &MaskRequest<'_>) -> Result<()> {
    if scores.len() != request.positions.len() {
        return Err(Error::format(format!(
            "scorer returned {} values for {} masked positions",
            scores.len(),
            request.positions.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !(**s <= 0.0)) {
        return Err(Error::format(format!("log-likelihood {s} is not <= 0")));
    }
    Ok(())
}

pub fn masked_likelihood_curve<S: MaskedScorer + ?Sized>(
    passages: &[Passage],
    scorer: &S,
    mask_fraction: f64,
    repetitions: usize,
    seed: u64,
) -> Result<LikelihoodCurve> {
    if !(mask_fraction > 0.0 && mask_fraction < 1.0) {
        return Err(Error::usage(format!(
            "mask fraction {mask_fraction} outside (0, 1)"
        )));
    }
    if repetitions == 0 {
        return Err(Error::usage("at least one repetition required"));
    }
    // Fixed accumulation order regardless of input order.
    let mut ordered: Vec<&Passage> = passages.iter().filter(|p| !p.is_empty()).collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));

    let longest = ordered.iter().map(|p| p.len()).max().unwrap_or(0);
    let mut sums = vec![0.0f64; longest];
    let mut counts = vec![0usize; longest];
    for p in ordered {
        let schedule = mask_schedule(&p.id, p.len(), mask_fraction, repetitions, seed);
        for (rep, positions) in schedule.iter().enumerate() {
            let request = MaskRequest {
                passage_id: &p.id,
                repetition: rep,
                tokens: &p.tokens,
                positions,
            };
            let attempt = || {
                scorer
                    .score(&request)
                    .and_then(|s| validate_scores(&s, &request).map(|_| s))
            };
            let scores = match attempt() {
                Ok(s) => s,
                Err(first) => {
                    warn!("scorer failed on `{}` repetition {rep}, retrying: {first}", p.id);
                    attempt().map_err(|e| Error::Model {
                        step: rep,
                        reason: format!("passage `{}` repetition {rep}: {e}", p.id),
                    })?
                }
            };
            for (&pos, &s) in positions.iter().zip(&scores) {
                sums[pos] += s;
                counts[pos] += 1;
            }
        }
    }
    let points = sums
        .into_iter()
        .zip(counts)
        .enumerate()
        .filter(|(_, (_, n))| *n > 0)
        .map(|(step, (sum, n))| LikelihoodPoint {
            step,
            mean: sum / n as f64,
            n,
        })
        .collect();
    Ok(LikelihoodCurve { points })
}
