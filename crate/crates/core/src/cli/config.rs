use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decode::{DecodeConfig, Strategy, DEFAULT_MAX_NEW_TOKENS};
use crate::error::{Error, Result};
use crate::neighborhood::{CompareMode, DEFAULT_TIME_WINDOW};
use crate::textmetrics::{DEFAULT_MASK_FRACTION, DEFAULT_REPETITIONS};
use crate::toylm::ToyLmSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// The built-in self-reinforcing bigram model.
    Toy(ToyLmSpec),
    /// No model: analyses read pre-computed traces from manifests.
    Traces,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScorerSpec {
    Uniform,
    File { path: PathBuf },
}

/// A pre-computed population to evaluate against the support corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSet {
    pub name: String,
    pub manifest: PathBuf,
    /// Real continuations paired by position with `manifest`'s passages, for
    /// difference curves.
    #[serde(default)]
    pub paired_real: Option<PathBuf>,
}

fn default_radii() -> Vec<f64> {
    vec![1024.0]
}
fn default_time_window() -> usize {
    DEFAULT_TIME_WINDOW
}
fn default_layers() -> Vec<usize> {
    vec![0]
}
fn default_modes() -> Vec<CompareMode> {
    vec![CompareMode::CompareSeen, CompareMode::CompareUnseen]
}
fn default_mask_fraction() -> f64 {
    DEFAULT_MASK_FRACTION
}
fn default_repetitions() -> usize {
    DEFAULT_REPETITIONS
}
fn default_condition_len() -> usize {
    50
}
fn default_num_passages() -> usize {
    200
}
fn default_passage_len() -> usize {
    512
}
fn default_components() -> usize {
    2
}
fn default_repeats() -> Vec<usize> {
    vec![1, 2, 3]
}
fn default_scorer() -> ScorerSpec {
    ScorerSpec::Uniform
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisParams {
    #[serde(default = "default_radii")]
    pub radii: Vec<f64>,
    #[serde(default = "default_time_window")]
    pub time_window: usize,
    /// Layer indices within the state files.
    #[serde(default = "default_layers")]
    pub layers: Vec<usize>,
    #[serde(default = "default_modes")]
    pub modes: Vec<CompareMode>,
    #[serde(default = "default_mask_fraction")]
    pub mask_fraction: f64,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_condition_len")]
    pub condition_len: usize,
    /// Size of the sampled toy corpus when no corpus manifest is given.
    #[serde(default = "default_num_passages")]
    pub num_passages: usize,
    #[serde(default = "default_passage_len")]
    pub passage_len: usize,
    #[serde(default = "default_components")]
    pub components: usize,
    #[serde(default = "default_repeats")]
    pub repeats: Vec<usize>,
    #[serde(default = "default_scorer")]
    pub scorer: ScorerSpec,
    #[serde(default)]
    pub evaluate: Vec<EvaluationSet>,
    /// Cap on the number of states fed to PCA (evenly subsampled).
    #[serde(default)]
    pub max_points: Option<usize>,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

fn default_decode() -> Vec<DecodeConfig> {
    [
        Strategy::Greedy,
        Strategy::Sample,
        Strategy::TopK { k: 40 },
        Strategy::Nucleus { p: 0.9 },
    ]
    .into_iter()
    .map(|s| DecodeConfig::new(s, DEFAULT_MAX_NEW_TOKENS, 0))
    .collect()
}

/// Everything a run needs; written verbatim into its output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub subcommand: Option<String>,
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default = "default_decode")]
    pub decode: Vec<DecodeConfig>,
    #[serde(default)]
    pub analysis: AnalysisParams,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn output_dir(&self) -> Result<&Path> {
        self.output_dir
            .as_deref()
            .ok_or_else(|| Error::usage("no output directory (set output_dir or --out)"))
    }

    pub fn corpus_path(&self) -> Result<&Path> {
        self.corpus
            .as_deref()
            .ok_or_else(|| Error::usage("no corpus manifest (set corpus or --corpus)"))
    }

    pub fn toy_model(&self) -> Option<&ToyLmSpec> {
        match &self.model {
            Some(ModelSpec::Toy(spec)) => Some(spec),
            _ => None,
        }
    }

    /// Checks referenced paths and parameter domains.
    pub fn validate(&self) -> Result<()> {
        let exists = |p: &Path, what: &str| {
            if p.exists() {
                Ok(())
            } else {
                Err(Error::usage(format!("{what} {} does not exist", p.display())))
            }
        };
        if let Some(c) = &self.corpus {
            exists(c, "corpus manifest")?;
        }
        if let ScorerSpec::File { path } = &self.analysis.scorer {
            exists(path, "score file")?;
        }
        for e in &self.analysis.evaluate {
            exists(&e.manifest, "evaluation manifest")?;
            if let Some(p) = &e.paired_real {
                exists(p, "paired real manifest")?;
            }
        }
        for d in &self.decode {
            d.validate()?;
        }
        if self.analysis.radii.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::usage("radii must be positive"));
        }
        if self.analysis.condition_len == 0 {
            return Err(Error::usage("condition_len must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_has_defaults() {
        let c = RunConfig::default();
        assert_eq!(c.decode.len(), 4);
        assert_eq!(c.analysis.time_window, 5);
        assert_eq!(c.analysis.repetitions, 10);
        assert_eq!(c.analysis.condition_len, 50);
        assert_eq!(c.analysis.radii, vec![1024.0]);
        assert!(c.model.is_none());
    }

    #[test]
    fn model_spec_json() {
        let c: RunConfig = serde_json::from_str(
            r#"{"model": {"kind": "toy", "seed": 3, "beta": 0.4}, "seed": 9,
                "analysis": {"scorer": {"kind": "file", "path": "s.jsonl"}}}"#,
        )
        .unwrap();
        let toy = c.toy_model().unwrap();
        assert_eq!((toy.seed, toy.beta, toy.vocab_size), (3, 0.4, 256));
        assert_eq!(c.seed, 9);
        assert!(c.validate().is_err());
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
