//! Partitioned windows for adjacent-transposition words.
//!
//! A plan splits `m` into window widths `μ = (μ₁, …, μ_k)` (each at least
//! `min_part`), places window `j` at offset `o_j ∈ {0, …, n − μ_j}`, and
//! assigns every word slot to one window. A generator token `x` in slot `i`
//! becomes `o_{ℓᵢ} + (x mod μ_{ℓᵢ})`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::Token;

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct WindowPlan {
    /// Window widths; they sum to `m`.
    pub parts: Vec<usize>,
    pub offsets: Vec<usize>,
    /// Window index (0-based into `parts`) for every word slot.
    pub assignments: Vec<usize>,
}

impl WindowPlan {
    /// One window `[0, m)` over every slot: plain `x mod m`.
    pub fn single(m: usize, len: usize) -> Self {
        Self {
            parts: vec![m],
            offsets: vec![0],
            assignments: vec![0; len],
        }
    }

    pub fn windows(&self) -> usize {
        self.parts.len()
    }

    /// Token range `[o, o + μ)` that slot `slot` can emit.
    pub fn slot_range(&self, slot: usize) -> std::ops::Range<usize> {
        let w = self.assignments[slot];
        self.offsets[w]..self.offsets[w] + self.parts[w]
    }

    /// Checks window widths, offsets and assignments against degree `n`.
    pub fn validate(&self, n: usize, min_part: usize) -> Result<()> {
        if self.parts.is_empty() || self.parts.len() != self.offsets.len() {
            return Err(Error::InadmissiblePlan(format!(
                "{} parts with {} offsets",
                self.parts.len(),
                self.offsets.len()
            )));
        }
        for (j, (&mu, &o)) in self.parts.iter().zip(&self.offsets).enumerate() {
            if mu < min_part {
                return Err(Error::InadmissiblePlan(format!(
                    "window {j} has width {mu} < {min_part}"
                )));
            }
            if o + mu > n {
                return Err(Error::InadmissiblePlan(format!(
                    "window {j} at offset {o} with width {mu} exceeds generator {}",
                    n - 1
                )));
            }
        }
        if let Some(&a) = self.assignments.iter().find(|&&a| a >= self.parts.len()) {
            return Err(Error::InadmissiblePlan(format!(
                "slot assigned to missing window {a}"
            )));
        }
        Ok(())
    }
}

/// Number of compositions of `0..=m` with every part at least `min_part`.
fn composition_counts(m: usize, min_part: usize) -> Vec<f64> {
    let mut counts = vec![0.0; m + 1];
    counts[0] = 1.0;
    for total in 1..=m {
        counts[total] = (min_part..=total).map(|p| counts[total - p]).sum();
    }
    counts
}

/// Uniform composition of `m` with all parts `≥ min_part`.
///
/// Draws from the same distribution as rejecting uniform compositions with a
/// small part, but picks parts sequentially weighted by how many admissible
/// completions remain, so the cost does not grow with the rejection rate.
pub fn sample_composition<R: Rng + ?Sized>(
    m: usize,
    min_part: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if min_part == 0 || m < min_part {
        return Err(Error::Config(format!(
            "cannot split {m} into parts of at least {min_part}"
        )));
    }
    let counts = composition_counts(m, min_part);
    let mut parts = Vec::new();
    let mut rest = m;
    while rest > 0 {
        let mut u = rng.gen::<f64>() * counts[rest];
        let mut chosen = rest;
        for p in min_part..=rest {
            let c = counts[rest - p];
            if c == 0.0 {
                continue;
            }
            if u < c {
                chosen = p;
                break;
            }
            u -= c;
        }
        parts.push(chosen);
        rest -= chosen;
    }
    Ok(parts)
}

/// Random composition, one uniform offset per window, uniform slot
/// assignments.
pub fn sample_window_plan<R: Rng + ?Sized>(
    m: usize,
    n: usize,
    len: usize,
    min_part: usize,
    rng: &mut R,
) -> Result<WindowPlan> {
    if m > n {
        return Err(Error::Config(format!("subgroup degree {m} exceeds {n}")));
    }
    let parts = sample_composition(m, min_part, rng)?;
    let offsets = parts.iter().map(|&mu| rng.gen_range(0..=n - mu)).collect();
    let k = parts.len();
    let assignments = (0..len).map(|_| rng.gen_range(0..k)).collect();
    Ok(WindowPlan {
        parts,
        offsets,
        assignments,
    })
}

/// The naive window method: a single window of width `m` at a random offset.
pub fn sample_naive_plan<R: Rng + ?Sized>(
    m: usize,
    n: usize,
    len: usize,
    rng: &mut R,
) -> Result<WindowPlan> {
    if m == 0 || m > n {
        return Err(Error::Config(format!("window width {m} invalid for {n}")));
    }
    Ok(WindowPlan {
        parts: vec![m],
        offsets: vec![rng.gen_range(0..=n - m)],
        assignments: vec![0; len],
    })
}

pub fn apply_partitioned_windows(x: &[Token], plan: &WindowPlan, n: usize) -> Result<Vec<Token>> {
    if x.len() != plan.assignments.len() {
        return Err(Error::WordLength {
            expected: plan.assignments.len(),
            actual: x.len(),
        });
    }
    x.iter()
        .zip(&plan.assignments)
        .map(|(&t, &w)| {
            let (o, mu) = plan
                .offsets
                .get(w)
                .zip(plan.parts.get(w))
                .ok_or_else(|| Error::InadmissiblePlan(format!("missing window {w}")))?;
            let out = o + (t as usize) % mu;
            if out >= n {
                return Err(Error::InadmissiblePlan(format!(
                    "token {out} exceeds generator {}",
                    n - 1
                )));
            }
            Ok(out as Token)
        })
        .collect()
}
