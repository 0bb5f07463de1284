//! Exact arithmetic in the symmetric group `S_n`.
//!
//! Permutations use 1-based one-line notation `(σ(1), …, σ(n))`. Products
//! follow `(στ)(i) = σ(τ(i))`, and a transposition `s_{i,j}` acts on the
//! right by swapping the entries in positions `i` and `j`. A word
//! `s_{i1,j1} ⋯ s_{iℓ,jℓ}` is evaluated by folding these right actions left
//! to right, starting from the identity.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A permutation of `{1, …, n}` in one-line notation.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation {
    entries: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDegree(n));
        }
        Ok(Self {
            entries: (1..=n).collect(),
        })
    }

    /// Validates that `entries` is a bijection of `1..=n`.
    pub fn from_one_line(entries: Vec<usize>) -> Result<Self> {
        let n = entries.len();
        if n == 0 {
            return Err(Error::InvalidDegree(0));
        }
        let mut seen = vec![false; n + 1];
        for &v in &entries {
            if v == 0 || v > n || seen[v] {
                return Err(Error::NotAPermutation { n, entries });
            }
            seen[v] = true;
        }
        Ok(Self { entries })
    }

    /// Uniform random permutation (Fisher–Yates).
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Self> {
        let mut p = Self::identity(n)?;
        p.entries.shuffle(rng);
        Ok(p)
    }

    pub fn degree(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[usize] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<usize> {
        self.entries
    }

    /// `σ(i)` for 1-based `i`.
    pub fn image(&self, i: usize) -> Result<usize> {
        self.check_index(i)?;
        Ok(self.entries[i - 1])
    }

    pub fn is_identity(&self) -> bool {
        self.entries.iter().enumerate().all(|(k, &v)| v == k + 1)
    }

    /// The product `στ`, i.e. `i ↦ σ(τ(i))`.
    pub fn compose(&self, tau: &Permutation) -> Result<Permutation> {
        if self.degree() != tau.degree() {
            return Err(Error::DegreeMismatch {
                left: self.degree(),
                right: tau.degree(),
            });
        }
        Ok(Permutation {
            entries: tau.entries.iter().map(|&t| self.entries[t - 1]).collect(),
        })
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.degree()];
        for (k, &v) in self.entries.iter().enumerate() {
            inv[v - 1] = k + 1;
        }
        Permutation { entries: inv }
    }

    /// Right action `p · s_{i,j}`: swaps the entries at positions `i` and `j`.
    pub fn apply_transposition(&self, t: Transposition) -> Result<Permutation> {
        let mut p = self.clone();
        p.apply_transposition_in_place(t)?;
        Ok(p)
    }

    pub fn apply_transposition_in_place(&mut self, t: Transposition) -> Result<()> {
        self.check_index(t.i)?;
        self.check_index(t.j)?;
        self.entries.swap(t.i - 1, t.j - 1);
        Ok(())
    }

    /// Number of moved points `|{i : p(i) ≠ i}|`.
    pub fn support_size(&self) -> usize {
        self.entries
            .iter()
            .enumerate()
            .filter(|&(k, &v)| v != k + 1)
            .count()
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i == 0 || i > self.degree() {
            Err(Error::IndexOutOfRange {
                index: i,
                n: self.degree(),
            })
        } else {
            Ok(())
        }
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;

    fn try_from(entries: Vec<usize>) -> Result<Self> {
        Self::from_one_line(entries)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.entries
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, v) in self.entries.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

impl fmt::Debug for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// The transposition `s_{i,j}` with 1-based indices. `i == j` is allowed and
/// acts as the identity.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct Transposition {
    pub i: usize,
    pub j: usize,
}

impl Transposition {
    /// Identity-acting factor, valid in every degree.
    pub const IDENTITY: Transposition = Transposition { i: 1, j: 1 };

    pub fn new(i: usize, j: usize) -> Self {
        Self { i, j }
    }

    /// The adjacent transposition `s_k = s_{k,k+1}`.
    pub fn adjacent(k: usize) -> Self {
        Self { i: k, j: k + 1 }
    }

    pub fn is_identity(&self) -> bool {
        self.i == self.j
    }

    pub fn is_adjacent(&self) -> bool {
        self.i.abs_diff(self.j) == 1
    }

    /// Same action regardless of index order.
    pub fn same_action(&self, other: &Transposition) -> bool {
        (self.is_identity() && other.is_identity())
            || (self.i == other.i && self.j == other.j)
            || (self.i == other.j && self.j == other.i)
    }
}

/// A product of transpositions, in written order.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Default, Serialize, Deserialize)]
pub struct Word {
    factors: Vec<Transposition>,
}

impl Word {
    pub fn new(factors: Vec<Transposition>) -> Self {
        Self { factors }
    }

    /// Builds a word in adjacent generators where `0` denotes the identity
    /// and `k ≥ 1` denotes `s_k`.
    pub fn from_adjacent(generators: &[usize]) -> Self {
        Self {
            factors: generators
                .iter()
                .map(|&k| {
                    if k == 0 {
                        Transposition::IDENTITY
                    } else {
                        Transposition::adjacent(k)
                    }
                })
                .collect(),
        }
    }

    pub fn factors(&self) -> &[Transposition] {
        &self.factors
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn push(&mut self, t: Transposition) {
        self.factors.push(t);
    }

    /// `(1, …, n) · w`.
    pub fn evaluate(&self, n: usize) -> Result<Permutation> {
        let mut p = Permutation::identity(n)?;
        for &t in &self.factors {
            p.apply_transposition_in_place(t)?;
        }
        Ok(p)
    }
}

impl FromIterator<Transposition> for Word {
    fn from_iter<I: IntoIterator<Item = Transposition>>(iter: I) -> Self {
        Self {
            factors: iter.into_iter().collect(),
        }
    }
}

pub fn identity(n: usize) -> Result<Permutation> {
    Permutation::identity(n)
}

pub fn compose(sigma: &Permutation, tau: &Permutation) -> Result<Permutation> {
    sigma.compose(tau)
}

pub fn apply_transposition(p: &Permutation, t: Transposition) -> Result<Permutation> {
    p.apply_transposition(t)
}

pub fn evaluate_word(w: &Word, n: usize) -> Result<Permutation> {
    w.evaluate(n)
}

pub fn inverse(sigma: &Permutation) -> Permutation {
    sigma.inverse()
}

pub fn support_size(p: &Permutation) -> usize {
    p.support_size()
}

pub fn random_permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Permutation> {
    Permutation::random(n, rng)
}
