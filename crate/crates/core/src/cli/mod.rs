//! Batch front door. A JSON [`RunConfig`] is the source of truth and flags
//! override single fields; the resolved config is written into every output
//! directory, and a failed run leaves an `INCOMPLETE` marker beside its
//! partial outputs.

mod commands;
mod config;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::error;

pub use commands::{cmd_detect, cmd_generate, cmd_inducingness, cmd_likelihood, cmd_neighborhood, cmd_pca};
pub use config::{AnalysisParams, EvaluationSet, ModelSpec, RunConfig, ScorerSpec};

use crate::error::{Error, Result};

/// Name of the worker-count environment variable.
pub const WORKERS_ENV: &str = "DEGEN_WORKERS";

pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";
pub const RESOLVED_CONFIG: &str = "run_config.json";

#[derive(Debug, Parser)]
#[command(name = "degen", version, about = "Loop and exposure-bias diagnostics for text generation")]
pub struct Cli {
    /// JSON run config; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Corpus manifest.
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    /// Toy-LM JSON spec (selects the toy model).
    #[arg(long, global = true)]
    pub toy: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-passage work.
    #[arg(long, global = true, env = WORKERS_ENV)]
    pub workers: Option<usize>,
    /// Neighborhood radius; repeat for several.
    #[arg(long = "radius", global = true)]
    pub radii: Vec<f64>,
    /// State layer; repeat for several.
    #[arg(long = "layer", global = true)]
    pub layers: Vec<usize>,
    #[arg(long, global = true)]
    pub time_window: Option<usize>,
    #[arg(long, global = true)]
    pub condition_len: Option<usize>,
    #[arg(long, global = true)]
    pub num_passages: Option<usize>,
    #[arg(long, global = true)]
    pub max_new_tokens: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Find repetition loops in a corpus.
    Detect,
    /// Generate one corpus per decoding strategy.
    Generate,
    /// Neighbor-count deviation curves.
    Neighborhood,
    /// ROUGE-L echo of looping and sentence conditions.
    Inducingness,
    /// Per-step masked log-likelihood.
    Likelihood,
    /// Principal-component projection of hidden states.
    Pca,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Detect => "detect",
            Command::Generate => "generate",
            Command::Neighborhood => "neighborhood",
            Command::Inducingness => "inducingness",
            Command::Likelihood => "likelihood",
            Command::Pca => "pca",
        }
    }
}

impl Cli {
    /// Loads the config file (if any) and applies flag overrides.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.subcommand = Some(self.command.name().to_string());
        if let Some(c) = &self.corpus {
            cfg.corpus = Some(c.clone());
        }
        if let Some(p) = &self.toy {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let spec = serde_json::from_str(&text).map_err(|e| Error::json(p, e))?;
            cfg.model = Some(ModelSpec::Toy(spec));
        }
        if let Some(o) = &self.out {
            cfg.output_dir = Some(o.clone());
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
        if !self.radii.is_empty() {
            cfg.analysis.radii = self.radii.clone();
        }
        if !self.layers.is_empty() {
            cfg.analysis.layers = self.layers.clone();
        }
        if let Some(t) = self.time_window {
            cfg.analysis.time_window = t;
        }
        if let Some(c) = self.condition_len {
            cfg.analysis.condition_len = c;
        }
        if let Some(n) = self.num_passages {
            cfg.analysis.num_passages = n;
        }
        if let Some(m) = self.max_new_tokens {
            for d in &mut cfg.decode {
                d.max_new_tokens = m;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn dispatch(command: Command, cfg: &RunConfig, out: &Path) -> Result<()> {
    match command {
        Command::Detect => cmd_detect(cfg, out),
        Command::Generate => cmd_generate(cfg, out),
        Command::Neighborhood => cmd_neighborhood(cfg, out),
        Command::Inducingness => cmd_inducingness(cfg, out),
        Command::Likelihood => cmd_likelihood(cfg, out),
        Command::Pca => cmd_pca(cfg, out),
    }
}

/// Runs one subcommand with a resolved config. On failure the output
/// directory gets an `INCOMPLETE` file holding the error.
pub fn run(command: Command, cfg: &RunConfig) -> Result<()> {
    let out = cfg.output_dir()?.to_path_buf();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let marker = out.join(INCOMPLETE_MARKER);
    std::fs::write(&marker, "running\n").map_err(|e| Error::io(&marker, e))?;
    let config_path = out.join(RESOLVED_CONFIG);
    let mut text = serde_json::to_string_pretty(cfg).map_err(|e| Error::json(&config_path, e))?;
    text.push('\n');
    std::fs::write(&config_path, text).map_err(|e| Error::io(&config_path, e))?;

    let result = match cfg.workers {
        Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::usage(format!("cannot start {n} workers: {e}")))?
            .install(|| dispatch(command, cfg, &out)),
        _ => dispatch(command, cfg, &out),
    };
    match &result {
        Ok(()) => std::fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?,
        Err(e) => {
            std::fs::write(&marker, format!("{e}\n")).map_err(|err| Error::io(&marker, err))?;
        }
    }
    result
}

/// Entry point of the `degen` binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = cli.resolve().and_then(|cfg| run(cli.command, &cfg));
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            1
        }
    }
}
