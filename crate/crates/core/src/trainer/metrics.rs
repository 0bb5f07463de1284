use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::model::{Scalar, TrainBatch, Transformer};
use crate::perm::Permutation;
use crate::tokenizer::{Token, TokenScheme};

/// One row of the training metrics CSV.
///
/// `train_error` is the fraction of training rows with at least one wrong
/// teacher-forced prediction, accumulated over the epoch's batches.
/// `val_error` is the greedy-decoding full-permutation error on the
/// validation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_error: f64,
    pub val_error: f64,
    pub lr: f64,
    pub train_token_error: f64,
    pub val_token_error: f64,
    pub seconds: f64,
}

pub fn write_metrics<W: Write>(records: &[MetricsRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics<R: Read>(input: R) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|rec| rec.map_err(Error::from)).collect()
}

/// Anything that maps words to permutation values.
pub trait Predictor: Sync {
    fn scheme(&self) -> TokenScheme;

    /// Greedy outputs, `n` values in `1..=n` per word.
    fn predict_batch(&self, words: &[&[Token]]) -> Result<Vec<Vec<usize>>>;

    /// Per-position argmax values under teacher forcing, row-major.
    fn teacher_forced(&self, batch: &TrainBatch) -> Result<Vec<usize>>;
}

impl<F: Scalar> Predictor for Transformer<F> {
    fn scheme(&self) -> TokenScheme {
        *Transformer::scheme(self)
    }

    fn predict_batch(&self, words: &[&[Token]]) -> Result<Vec<Vec<usize>>> {
        Transformer::predict_batch(self, words)
    }

    fn teacher_forced(&self, batch: &TrainBatch) -> Result<Vec<usize>> {
        self.teacher_forced_values(batch)
    }
}

/// Predicts by evaluating the word exactly. Never wrong.
#[derive(Clone, Copy, Debug)]
pub struct OraclePredictor {
    pub scheme: TokenScheme,
}

impl Predictor for OraclePredictor {
    fn scheme(&self) -> TokenScheme {
        self.scheme
    }

    fn predict_batch(&self, words: &[&[Token]]) -> Result<Vec<Vec<usize>>> {
        words
            .iter()
            .map(|w| {
                let p = self.scheme.decode_word(w)?.evaluate(self.scheme.n)?;
                Ok(p.into_entries())
            })
            .collect()
    }

    fn teacher_forced(&self, batch: &TrainBatch) -> Result<Vec<usize>> {
        let words: Vec<&[Token]> = batch
            .inputs
            .chunks_exact(batch.seq)
            .map(|r| &r[..batch.target_offset])
            .collect();
        Ok(self.predict_batch(&words)?.into_iter().flatten().collect())
    }
}

/// Per-row evaluation result.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RowOutcome {
    /// Greedy output equals the target in every position.
    pub correct: bool,
    /// Teacher-forced positions predicted right.
    pub tokens_correct: usize,
    pub support: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub rows: usize,
    pub rows_wrong: usize,
    pub tokens: usize,
    pub tokens_wrong: usize,
}

impl ErrorCounts {
    pub fn from_outcomes<'a>(outcomes: impl IntoIterator<Item = &'a RowOutcome>, n: usize) -> Self {
        let mut c = ErrorCounts::default();
        for o in outcomes {
            c.rows += 1;
            c.rows_wrong += !o.correct as usize;
            c.tokens += n;
            c.tokens_wrong += n - o.tokens_correct;
        }
        c
    }

    pub fn full_error(&self) -> f64 {
        ratio(self.rows_wrong, self.rows)
    }

    pub fn token_error(&self) -> f64 {
        ratio(self.tokens_wrong, self.tokens)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

const EVAL_CHUNK: usize = 512;

/// Evaluates the first `limit` rows (all rows if `None`) of `dataset`.
pub fn evaluate_rows<P: Predictor + ?Sized>(
    predictor: &P,
    dataset: &Dataset,
    limit: Option<usize>,
) -> Result<Vec<RowOutcome>> {
    let scheme = *dataset.scheme();
    if predictor.scheme() != scheme {
        return Err(Error::Config(format!(
            "model expects {} n={}, data is {} n={}",
            predictor.scheme().kind,
            predictor.scheme().n,
            scheme.kind,
            scheme.n
        )));
    }
    let rows = limit.map_or(dataset.len(), |l| l.min(dataset.len()));
    if rows == 0 {
        return Err(Error::EmptyDataset);
    }
    let n = scheme.n;
    let word_len = scheme.word_len();
    let width = dataset.row_width();
    let starts: Vec<usize> = (0..rows).step_by(EVAL_CHUNK).collect();
    let chunks = starts
        .par_iter()
        .map(|&start| -> Result<Vec<RowOutcome>> {
            let count = EVAL_CHUNK.min(rows - start);
            let mut raw = Vec::with_capacity(count * width);
            dataset.read_rows(start, count, &mut raw)?;
            let words: Vec<&[Token]> = raw.chunks_exact(width).map(|r| &r[..word_len]).collect();
            let greedy = predictor.predict_batch(&words)?;
            let batch = TrainBatch::from_raw_rows(&scheme, &raw)?;
            let forced = predictor.teacher_forced(&batch)?;
            raw.chunks_exact(width)
                .zip(&greedy)
                .zip(forced.chunks_exact(n))
                .map(|((row, g), f)| {
                    let target: Vec<usize> = row[word_len..].iter().map(|&v| v as usize).collect();
                    let support = Permutation::from_one_line(target.clone())?.support_size();
                    Ok(RowOutcome {
                        correct: *g == target,
                        tokens_correct: f.iter().zip(&target).filter(|(a, b)| a == b).count(),
                        support,
                    })
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Fraction of samples whose greedy prediction differs from the target in
/// any position.
pub fn full_permutation_error<P: Predictor + ?Sized>(predictor: &P, dataset: &Dataset) -> Result<f64> {
    let outcomes = evaluate_rows(predictor, dataset, None)?;
    Ok(ErrorCounts::from_outcomes(&outcomes, dataset.scheme().n).full_error())
}

/// Fraction of wrong teacher-forced predictions over all prediction
/// positions.
pub fn single_token_error<P: Predictor + ?Sized>(predictor: &P, dataset: &Dataset) -> Result<f64> {
    let outcomes = evaluate_rows(predictor, dataset, None)?;
    Ok(ErrorCounts::from_outcomes(&outcomes, dataset.scheme().n).token_error())
}
