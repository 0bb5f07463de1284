use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::TokenScheme;

/// Where layer normalization sits relative to the residual sum.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormPlacement {
    /// `x ← norm(x + f(x))`.
    #[default]
    Post,
    /// `x ← x + f(norm(x))`.
    Pre,
}

impl FromStr for NormPlacement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "post" => Ok(NormPlacement::Post),
            "pre" => Ok(NormPlacement::Pre),
            other => Err(Error::Config(format!("unknown norm placement {other:?}"))),
        }
    }
}

impl fmt::Display for NormPlacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormPlacement::Post => "post",
            NormPlacement::Pre => "pre",
        })
    }
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    pub scheme: TokenScheme,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub context_len: usize,
    pub vocab_size: usize,
    #[serde(default)]
    pub norm: NormPlacement,
    /// Layer norm between the last block and the decoder.
    #[serde(default = "default_true")]
    pub final_norm: bool,
    #[serde(default = "default_eps")]
    pub ln_eps: f64,
}

fn default_true() -> bool {
    true
}

fn default_eps() -> f64 {
    1e-5
}

impl ModelConfig {
    pub fn new(scheme: TokenScheme, d_model: usize, n_heads: usize, n_layers: usize) -> Self {
        Self {
            scheme,
            d_model,
            n_heads,
            n_layers,
            context_len: scheme.context_len(),
            vocab_size: scheme.vocab_size(),
            norm: NormPlacement::Post,
            final_norm: true,
            ln_eps: 1e-5,
        }
    }

    /// Full-size model: 402-dimensional embeddings, 6 heads, 5 blocks.
    pub fn full_size(scheme: TokenScheme) -> Self {
        Self::new(scheme, 402, 6, 5)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme.validate()?;
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "embedding dimension {} not divisible into {} heads",
                self.d_model, self.n_heads
            )));
        }
        if self.n_layers == 0 {
            return Err(Error::Config("need at least one block".into()));
        }
        if self.vocab_size < self.scheme.vocab_size() {
            return Err(Error::Config(format!(
                "vocabulary {} smaller than the scheme's {}",
                self.vocab_size,
                self.scheme.vocab_size()
            )));
        }
        // Training feeds the word, Δ and the first n − 1 values.
        let needed = self.scheme.word_len() + self.scheme.n;
        if self.context_len < needed {
            return Err(Error::Config(format!(
                "context {} shorter than the {needed} positions a permutation needs",
                self.context_len
            )));
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::Config("layer-norm epsilon must be positive".into()));
        }
        Ok(())
    }
}
