//! Passages, hidden-state traces, and the on-disk corpus formats.
//!
//! A real passage is drawn from the data distribution; a generated passage is
//! produced by a model under some decoding strategy and starts with the
//! `condition_len` tokens it was conditioned on. Neither distribution is
//! represented explicitly: a corpus is a finite sample of one of them.

mod corpus;
mod tensor;

pub use corpus::{load_corpus, write_corpus, Corpus, CorpusEntry, Manifest, ManifestEntry};
pub use tensor::{read_tensor, write_tensor, TensorHeader, HEADER_LEN, MAGIC, TENSOR_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Real,
    Generated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub tokens: Vec<TokenId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub origin: Origin,
    #[serde(default)]
    pub condition_len: usize,
    pub split: Split,
}

impl Passage {
    pub fn real(id: impl Into<String>, tokens: Vec<TokenId>, split: Split) -> Self {
        Self {
            id: id.into(),
            tokens,
            text: None,
            origin: Origin::Real,
            condition_len: 0,
            split,
        }
    }

    pub fn generated(
        id: impl Into<String>,
        tokens: Vec<TokenId>,
        condition_len: usize,
        split: Split,
    ) -> Self {
        Self {
            id: id.into(),
            tokens,
            text: None,
            origin: Origin::Generated,
            condition_len,
            split,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens after the conditioning prefix.
    pub fn continuation(&self) -> &[TokenId] {
        &self.tokens[self.condition_len.min(self.tokens.len())..]
    }

    pub fn validate(&self, vocab_size: Option<usize>) -> Result<()> {
        if self.condition_len > self.tokens.len() {
            return Err(Error::format(format!(
                "passage `{}`: condition_len {} exceeds length {}",
                self.id,
                self.condition_len,
                self.tokens.len()
            )));
        }
        if self.origin == Origin::Real && self.condition_len != 0 {
            return Err(Error::format(format!(
                "passage `{}`: real passages carry no condition (condition_len = {})",
                self.id, self.condition_len
            )));
        }
        if let Some(v) = vocab_size {
            if let Some((pos, &tok)) = self
                .tokens
                .iter()
                .enumerate()
                .find(|(_, &t)| t as usize >= v)
            {
                return Err(Error::format(format!(
                    "passage `{}`: token {tok} at position {pos} outside vocabulary of size {v}",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// Hidden states of one passage, stored `[layer][time][dim]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrace {
    pub passage_id: String,
    num_layers: usize,
    num_steps: usize,
    dim: usize,
    data: Vec<f32>,
}

impl StateTrace {
    pub fn new(
        passage_id: impl Into<String>,
        num_layers: usize,
        num_steps: usize,
        dim: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        let passage_id = passage_id.into();
        if num_layers == 0 || num_steps == 0 || dim == 0 {
            return Err(Error::format(format!(
                "trace `{passage_id}`: shape {num_layers}x{num_steps}x{dim} has an empty axis"
            )));
        }
        let expected = num_layers
            .checked_mul(num_steps)
            .and_then(|x| x.checked_mul(dim))
            .ok_or_else(|| Error::format("trace shape overflows"))?;
        if data.len() != expected {
            return Err(Error::format(format!(
                "trace `{passage_id}`: {} values for shape {num_layers}x{num_steps}x{dim}",
                data.len()
            )));
        }
        Ok(Self {
            passage_id,
            num_layers,
            num_steps,
            dim,
            data,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.num_layers, self.num_steps, self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn state(&self, layer: usize, t: usize) -> &[f32] {
        let start = (layer * self.num_steps + t) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Iterator over `(t, state)` for one layer.
    pub fn layer_states(&self, layer: usize) -> impl Iterator<Item = (usize, &[f32])> + '_ {
        let start = layer * self.num_steps * self.dim;
        self.data[start..start + self.num_steps * self.dim]
            .chunks_exact(self.dim)
            .enumerate()
    }
}
