use crate::error::{Error, Result};

/// Which keys each query position may attend to.
///
/// The first `N` (word) positions see the whole word and nothing after it.
/// Prediction positions (the separator and the permutation values) see the
/// whole word and, causally, the prediction positions up to themselves:
///
/// ```text
/// ┌ 1_{N×N}   0 ┐
/// └ 1        L  ┘   L lower triangular (including the diagonal)
/// ```
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct AttentionMask {
    size: usize,
    word_len: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn word_len(&self) -> usize {
        self.word_len
    }

    /// Whether query position `row` may attend to key position `col`.
    pub fn allows(&self, row: usize, col: usize) -> bool {
        self.allowed[row * self.size + col]
    }

    pub fn row(&self, row: usize) -> &[bool] {
        &self.allowed[row * self.size..(row + 1) * self.size]
    }

    /// Dense 0/1 rows, mostly for display and tests.
    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.size)
            .map(|r| self.row(r).iter().map(|&b| b as u8).collect())
            .collect()
    }
}

/// Mask for `word_len` word positions followed by `n_pred` prediction
/// positions.
pub fn build_mask(word_len: usize, n_pred: usize) -> AttentionMask {
    let size = word_len + n_pred;
    let mut allowed = vec![false; size * size];
    for r in 0..size {
        for c in 0..size {
            allowed[r * size + c] = c < word_len || (r >= word_len && c <= r);
        }
    }
    AttentionMask {
        size,
        word_len,
        allowed,
    }
}

/// As [`build_mask`], rejecting layouts longer than the context.
pub fn build_mask_checked(word_len: usize, n_pred: usize, context_len: usize) -> Result<AttentionMask> {
    if word_len + n_pred > context_len {
        return Err(Error::Shape(format!(
            "{word_len} word + {n_pred} prediction positions exceed context {context_len}"
        )));
    }
    Ok(build_mask(word_len, n_pred))
}
