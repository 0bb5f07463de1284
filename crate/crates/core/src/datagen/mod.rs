//! Subgroup-restricted training data and full-group test data.
//!
//! General scheme: an unreduced word of `n − 1` pairs with indices in
//! `{1, …, m}` is relabeled through a random `σ ∈ S_n`, so it moves at most
//! `m` points of `{1, …, n}`. Adjacent scheme: a word of `N = n(n − 1)/2`
//! generator tokens in `{0, …, m − 1}` is pushed through a partitioned window
//! plan. Test rows use the same pipelines with `m = n` (and no relabeling or
//! windowing), i.e. they are drawn from the whole group.

mod format;
mod windows;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use format::{
    count_overlap, read_dataset, subgroup_fraction, write_dataset, Dataset, DatasetHeader,
    FORMAT_VERSION,
};
pub use windows::{
    apply_partitioned_windows, sample_composition, sample_naive_plan, sample_window_plan,
    WindowPlan,
};

use crate::error::{Error, Result};
use crate::perm::{Permutation, Transposition, Word};
use crate::rng;
use crate::tokenizer::{encode_general, SchemeKind, Token, TokenScheme};

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn stream_id(self) -> u16 {
        match self {
            Split::Train => 0,
            Split::Validation => 1,
            Split::Test => 2,
        }
    }

    pub fn is_subgroup(self) -> bool {
        !matches!(self, Split::Test)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowMode {
    #[default]
    Partitioned,
    Naive,
}

impl FromStr for WindowMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "partitioned" => Ok(WindowMode::Partitioned),
            "naive" => Ok(WindowMode::Naive),
            other => Err(Error::Config(format!("unknown window mode {other:?}"))),
        }
    }
}

impl fmt::Display for WindowMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WindowMode::Partitioned => "partitioned",
            WindowMode::Naive => "naive",
        })
    }
}

pub const DEFAULT_MIN_PART: usize = 3;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct DataGenConfig {
    pub scheme: TokenScheme,
    /// Subgroup degree.
    pub m: usize,
    pub count: usize,
    pub seed: u64,
    pub split: Split,
    pub min_part: usize,
    pub windows: WindowMode,
}

impl DataGenConfig {
    pub fn new(scheme: TokenScheme, m: usize, count: usize, seed: u64, split: Split) -> Self {
        Self {
            scheme,
            m,
            count,
            seed,
            split,
            min_part: DEFAULT_MIN_PART,
            windows: WindowMode::Partitioned,
        }
    }

    pub fn n(&self) -> usize {
        self.scheme.n
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme.validate()?;
        let n = self.scheme.n;
        if self.m < 1 || self.m >= n {
            return Err(Error::Config(format!(
                "subgroup degree m = {} must satisfy 1 ≤ m < n = {n}",
                self.m
            )));
        }
        if self.count == 0 {
            return Err(Error::Config("sample count must be positive".into()));
        }
        if self.scheme.kind == SchemeKind::Adjacent && self.split.is_subgroup() {
            match self.windows {
                WindowMode::Partitioned if self.min_part < 3 || self.m < self.min_part => {
                    return Err(Error::Config(format!(
                        "partitioned windows need min_part ≥ 3 and m ≥ min_part (m = {}, min_part = {})",
                        self.m, self.min_part
                    )));
                }
                WindowMode::Naive if self.m < 2 => {
                    return Err(Error::Config("naive windows need m ≥ 2".into()));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// One row: a fixed-length token word and the permutation it evaluates to.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Sample {
    pub word_tokens: Vec<Token>,
    pub target: Permutation,
}

impl Sample {
    pub fn from_word(scheme: &TokenScheme, word_tokens: Vec<Token>) -> Result<Self> {
        let target = scheme.decode_word(&word_tokens)?.evaluate(scheme.n)?;
        Ok(Self {
            word_tokens,
            target,
        })
    }
}

/// `n − 1` index pairs drawn uniformly from `{1, …, m}²`; pairs with
/// `i = j` act as the identity.
pub fn sample_general_subgroup_word<R: Rng + ?Sized>(
    m: usize,
    n: usize,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    (0..n.saturating_sub(1))
        .map(|_| (rng.gen_range(1..=m), rng.gen_range(1..=m)))
        .collect()
}

/// Replaces every index `x` by `σ(x)`.
pub fn relabel_general(pairs: &[(usize, usize)], sigma: &Permutation) -> Result<Vec<(usize, usize)>> {
    pairs
        .iter()
        .map(|&(i, j)| Ok((sigma.image(i)?, sigma.image(j)?)))
        .collect()
}

pub fn pairs_to_word(pairs: &[(usize, usize)]) -> Word {
    pairs.iter().map(|&(i, j)| Transposition::new(i, j)).collect()
}

/// `len` generator tokens drawn uniformly from `{0, …, m − 1}` (0 is the
/// identity).
pub fn sample_adjacent_word<R: Rng + ?Sized>(m: usize, len: usize, rng: &mut R) -> Vec<Token> {
    (0..len).map(|_| rng.gen_range(0..m) as Token).collect()
}

/// The row `row_index` of the dataset described by `config`.
pub fn generate_sample(config: &DataGenConfig, row_index: u64) -> Result<Sample> {
    let scheme = config.scheme;
    let n = scheme.n;
    let mut rng = rng::stream(config.seed, config.split.stream_id(), row_index);
    let word_tokens = match (scheme.kind, config.split.is_subgroup()) {
        (SchemeKind::General, true) => {
            let pairs = sample_general_subgroup_word(config.m, n, &mut rng);
            let sigma = Permutation::random(n, &mut rng)?;
            relabel_general(&pairs, &sigma)?
                .into_iter()
                .map(|(i, j)| encode_general(i, j, n))
                .collect::<Result<Vec<_>>>()?
        }
        (SchemeKind::General, false) => sample_general_subgroup_word(n, n, &mut rng)
            .into_iter()
            .map(|(i, j)| encode_general(i, j, n))
            .collect::<Result<Vec<_>>>()?,
        (SchemeKind::Adjacent, true) => {
            let len = scheme.word_len();
            let x = sample_adjacent_word(config.m, len, &mut rng);
            let plan = match config.windows {
                WindowMode::Partitioned => {
                    sample_window_plan(config.m, n, len, config.min_part, &mut rng)?
                }
                WindowMode::Naive => sample_naive_plan(config.m, n, len, &mut rng)?,
            };
            apply_partitioned_windows(&x, &plan, n)?
        }
        (SchemeKind::Adjacent, false) => sample_adjacent_word(n, scheme.word_len(), &mut rng),
    };
    Sample::from_word(&scheme, word_tokens)
}

/// Rows `range` of the dataset, generated in parallel.
pub fn generate_rows(config: &DataGenConfig, range: std::ops::Range<u64>) -> Result<Vec<Sample>> {
    range
        .into_par_iter()
        .map(|row| generate_sample(config, row))
        .collect()
}
