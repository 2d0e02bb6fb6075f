use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::tensor::{read_tensor, write_tensor, TensorHeader};
use super::{Passage, StateTrace};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

const TOKENS_FILE: &str = "tokens.jsonl";
const VOCAB_FILE: &str = "vocab.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub vocab_size: usize,
    /// JSON array of token strings, indexed by token id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub metadata: serde_json::Map<String, serde_json::Value>,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub passage_id: String,
    pub tokens: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<PathBuf>,
    /// Expected `[L, T, D]` of the state file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_shape: Option<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub passage: Passage,
    pub states: Option<StateTrace>,
    /// Logits stay on disk; they are `T x vocab_size` and rarely needed whole.
    pub logits: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub vocab_size: usize,
    pub vocab: Option<Vec<String>>,
    pub metadata: serde_json::Map<String, serde_json::Value>,
    pub entries: Vec<CorpusEntry>,
}

impl Corpus {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            ..Self::default()
        }
    }

    pub fn passages(&self) -> impl Iterator<Item = &Passage> {
        self.entries.iter().map(|e| &e.passage)
    }

    pub fn push(&mut self, passage: Passage, states: Option<StateTrace>) {
        self.entries.push(CorpusEntry {
            passage,
            states,
            logits: None,
        });
    }

    /// Text of one token, when a vocabulary is attached.
    pub fn token_text(&self, id: u32) -> Option<&str> {
        self.vocab
            .as_ref()
            .and_then(|v| v.get(id as usize))
            .map(String::as_str)
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::json(path, e))
}

fn read_token_file(path: &Path) -> Result<HashMap<String, Passage>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let passage: Passage = serde_json::from_str(&line).map_err(|e| {
            Error::format(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        if out.contains_key(&passage.id) {
            return Err(Error::format(format!(
                "{}: passage `{}` appears twice",
                path.display(),
                passage.id
            )));
        }
        out.insert(passage.id.clone(), passage);
    }
    Ok(out)
}

/// Reads a manifest and materializes every entry, validating tokens against
/// the vocabulary and state tensors against their passages.
pub fn load_corpus(manifest_path: &Path) -> Result<Corpus> {
    let manifest: Manifest = read_json(manifest_path)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::format(format!(
            "{}: unsupported format_version {}",
            manifest_path.display(),
            manifest.format_version
        )));
    }
    let base = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();

    let mut seen = HashSet::new();
    for e in &manifest.entries {
        if !seen.insert(e.passage_id.as_str()) {
            return Err(Error::format(format!(
                "{}: duplicate passage_id `{}`",
                manifest_path.display(),
                e.passage_id
            )));
        }
    }

    let vocab = match &manifest.vocab {
        Some(p) => {
            let words: Vec<String> = read_json(&resolve(&base, p))?;
            if words.len() != manifest.vocab_size {
                return Err(Error::format(format!(
                    "vocabulary file has {} entries, manifest says vocab_size {}",
                    words.len(),
                    manifest.vocab_size
                )));
            }
            Some(words)
        }
        None => None,
    };

    let mut token_files: HashMap<PathBuf, HashMap<String, Passage>> = HashMap::new();
    let mut entries = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let load_err = |reason: String| Error::Load {
            passage_id: e.passage_id.clone(),
            reason,
        };
        let tok_path = resolve(&base, &e.tokens);
        if !token_files.contains_key(&tok_path) {
            if !tok_path.exists() {
                return Err(load_err(format!(
                    "token file {} does not exist",
                    tok_path.display()
                )));
            }
            let parsed = read_token_file(&tok_path)?;
            token_files.insert(tok_path.clone(), parsed);
        }
        let passage = token_files[&tok_path]
            .get(&e.passage_id)
            .cloned()
            .ok_or_else(|| load_err(format!("not found in {}", tok_path.display())))?;
        passage.validate(Some(manifest.vocab_size))?;

        let states = match &e.states {
            Some(p) => {
                let path = resolve(&base, p);
                if !path.exists() {
                    return Err(load_err(format!(
                        "state file {} does not exist",
                        path.display()
                    )));
                }
                let (header, data) = read_tensor(&path)?;
                let shape = [
                    header.layers as usize,
                    header.steps as usize,
                    header.dim as usize,
                ];
                if let Some(expected) = e.state_shape {
                    if expected != shape {
                        return Err(Error::format(format!(
                            "passage `{}`: manifest shape {expected:?} but {} has {shape:?}",
                            e.passage_id,
                            path.display()
                        )));
                    }
                }
                if shape[1] != passage.tokens.len() {
                    return Err(Error::format(format!(
                        "passage `{}`: {} tokens but state file has T = {}",
                        e.passage_id,
                        passage.tokens.len(),
                        shape[1]
                    )));
                }
                Some(StateTrace::new(
                    e.passage_id.clone(),
                    shape[0],
                    shape[1],
                    shape[2],
                    data,
                )?)
            }
            None => None,
        };

        let logits = match &e.logits {
            Some(p) => {
                let path = resolve(&base, p);
                if !path.exists() {
                    return Err(load_err(format!(
                        "logits file {} does not exist",
                        path.display()
                    )));
                }
                Some(path)
            }
            None => None,
        };

        entries.push(CorpusEntry {
            passage,
            states,
            logits,
        });
    }

    Ok(Corpus {
        vocab_size: manifest.vocab_size,
        vocab,
        metadata: manifest.metadata,
        entries,
    })
}

/// Writes `tokens.jsonl`, one `.hst` per traced passage, and `manifest.json`
/// into `out_dir`. Returns the manifest path.
pub fn write_corpus(corpus: &Corpus, out_dir: &Path) -> Result<PathBuf> {
    let mut ids = HashSet::new();
    for e in &corpus.entries {
        e.passage.validate(Some(corpus.vocab_size))?;
        if !ids.insert(e.passage.id.as_str()) {
            return Err(Error::usage(format!(
                "duplicate passage id `{}`",
                e.passage.id
            )));
        }
        if let Some(st) = &e.states {
            if st.num_steps() != e.passage.tokens.len() {
                return Err(Error::usage(format!(
                    "passage `{}`: {} tokens but trace has T = {}",
                    e.passage.id,
                    e.passage.tokens.len(),
                    st.num_steps()
                )));
            }
        }
    }

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let has_states = corpus.entries.iter().any(|e| e.states.is_some());
    let has_logits = corpus.entries.iter().any(|e| e.logits.is_some());
    if has_states {
        let d = out_dir.join("states");
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    if has_logits {
        let d = out_dir.join("logits");
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }

    let tok_path = out_dir.join(TOKENS_FILE);
    let file = File::create(&tok_path).map_err(|e| Error::io(&tok_path, e))?;
    let mut tok_out = BufWriter::new(file);
    let mut entries = Vec::with_capacity(corpus.entries.len());
    for (ordinal, e) in corpus.entries.iter().enumerate() {
        let line = serde_json::to_string(&e.passage).map_err(|err| Error::json(&tok_path, err))?;
        writeln!(tok_out, "{line}").map_err(|err| Error::io(&tok_path, err))?;

        let (states, state_shape) = match &e.states {
            Some(st) => {
                let rel = PathBuf::from(format!("states/{ordinal:06}.hst"));
                let header = TensorHeader {
                    layers: st.num_layers() as u32,
                    steps: st.num_steps() as u32,
                    dim: st.dim() as u32,
                };
                write_tensor(&out_dir.join(&rel), header, st.data())?;
                (Some(rel), Some(st.shape()))
            }
            None => (None, None),
        };
        let logits = match &e.logits {
            Some(src) => {
                let rel = PathBuf::from(format!("logits/{ordinal:06}.hst"));
                let dst = out_dir.join(&rel);
                if src != &dst {
                    fs::copy(src, &dst).map_err(|err| Error::io(src, err))?;
                }
                Some(rel)
            }
            None => None,
        };
        entries.push(ManifestEntry {
            passage_id: e.passage.id.clone(),
            tokens: PathBuf::from(TOKENS_FILE),
            states,
            state_shape,
            logits,
        });
    }
    tok_out.flush().map_err(|e| Error::io(&tok_path, e))?;

    let vocab = match &corpus.vocab {
        Some(words) => {
            let p = out_dir.join(VOCAB_FILE);
            write_json(&p, words)?;
            Some(PathBuf::from(VOCAB_FILE))
        }
        None => None,
    };

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        vocab_size: corpus.vocab_size,
        vocab,
        metadata: corpus.metadata.clone(),
        entries,
    };
    let manifest_path = out_dir.join("manifest.json");
    write_json(&manifest_path, &manifest)?;
    Ok(manifest_path)
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::json(path, e))?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}
