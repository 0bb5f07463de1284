//! Decoder transformer that reads a transposition word and writes out the
//! permutation one value at a time.
//!
//! Token and position embeddings are summed, passed through `n_layers`
//! blocks of masked multi-head attention and a ReLU feed-forward layer (each
//! wrapped in residual + layer norm), normalized once more, and projected to
//! vocabulary logits by a bias-free linear decoder.

mod checkpoint;
mod config;
mod layers;
mod mask;
mod params;

use std::ops::Range;
use std::sync::Arc;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, NdFloat};
use num_traits::NumCast;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{Checkpoint, OptimizerState, CHECKPOINT_VERSION};
pub use config::{ModelConfig, NormPlacement};
pub use mask::{build_mask, build_mask_checked, AttentionMask};
pub use params::{Layout, Params, TensorSpec};

use crate::datagen::Sample;
use crate::error::{Error, Result};
use crate::tokenizer::{Token, TokenScheme};
use layers::{AttnCache, FfnCache, NormCache, Shape};

/// Floating-point element type the model can run in.
pub trait Scalar: NdFloat + Default {}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub(crate) fn cst<F: Scalar>(x: f64) -> F {
    <F as NumCast>::from(x).expect("representable constant")
}

/// Teacher-forced training rows: `(x₁…x_N, Δ, p₁…p_{n−1})` as input and
/// `(p₁…p_n)` as targets at positions `N…N+n−1`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainBatch {
    pub rows: usize,
    pub seq: usize,
    pub inputs: Vec<Token>,
    pub targets: Vec<Token>,
    pub target_offset: usize,
}

impl TrainBatch {
    pub fn from_samples(scheme: &TokenScheme, samples: &[Sample]) -> Result<Self> {
        let n = scheme.n;
        let word_len = scheme.word_len();
        let seq = word_len + n;
        let mut inputs = Vec::with_capacity(samples.len() * seq);
        let mut targets = Vec::with_capacity(samples.len() * n);
        for s in samples {
            scheme.check_word(&s.word_tokens)?;
            if s.target.degree() != n {
                return Err(Error::DegreeMismatch {
                    left: s.target.degree(),
                    right: n,
                });
            }
            inputs.extend_from_slice(&s.word_tokens);
            inputs.push(scheme.separator());
            let values = s
                .target
                .entries()
                .iter()
                .map(|&v| scheme.perm_token(v))
                .collect::<Result<Vec<_>>>()?;
            inputs.extend_from_slice(&values[..n - 1]);
            targets.extend_from_slice(&values);
        }
        Ok(Self {
            rows: samples.len(),
            seq,
            inputs,
            targets,
            target_offset: word_len,
        })
    }

    /// From raw dataset rows (`N` word tokens then `n` one-line values).
    pub fn from_raw_rows(scheme: &TokenScheme, raw: &[Token]) -> Result<Self> {
        let n = scheme.n;
        let word_len = scheme.word_len();
        let width = word_len + n;
        if raw.len() % width != 0 {
            return Err(Error::Shape(format!(
                "{} values is not a whole number of {width}-wide rows",
                raw.len()
            )));
        }
        let rows = raw.len() / width;
        let mut inputs = Vec::with_capacity(rows * width);
        let mut targets = Vec::with_capacity(rows * n);
        for row in raw.chunks_exact(width) {
            inputs.extend_from_slice(&row[..word_len]);
            inputs.push(scheme.separator());
            for (k, &v) in row[word_len..].iter().enumerate() {
                let t = scheme.perm_token(v as usize)?;
                if k + 1 < n {
                    inputs.push(t);
                }
                targets.push(t);
            }
        }
        Ok(Self {
            rows,
            seq: width,
            inputs,
            targets,
            target_offset: word_len,
        })
    }

    pub fn targets_per_row(&self) -> usize {
        self.seq - self.target_offset
    }
}

/// Loss and accuracy counts for one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BatchStats {
    /// Summed (not averaged) cross-entropy in nats.
    pub loss_sum: f64,
    pub tokens: usize,
    pub tokens_correct: usize,
    pub rows: usize,
    /// Rows whose every teacher-forced prediction is right.
    pub rows_correct: usize,
}

impl BatchStats {
    pub fn merge(&mut self, other: &BatchStats) {
        self.loss_sum += other.loss_sum;
        self.tokens += other.tokens;
        self.tokens_correct += other.tokens_correct;
        self.rows += other.rows;
        self.rows_correct += other.rows_correct;
    }

    pub fn mean_loss(&self) -> f64 {
        if self.tokens == 0 {
            0.0
        } else {
            self.loss_sum / self.tokens as f64
        }
    }

    pub fn token_error(&self) -> f64 {
        if self.tokens == 0 {
            0.0
        } else {
            1.0 - self.tokens_correct as f64 / self.tokens as f64
        }
    }

    pub fn row_error(&self) -> f64 {
        if self.rows == 0 {
            0.0
        } else {
            1.0 - self.rows_correct as f64 / self.rows as f64
        }
    }
}

struct BlockCache<F> {
    attn: AttnCache<F>,
    ln1: NormCache<F>,
    ffn: FfnCache<F>,
    ln2: NormCache<F>,
}

struct ForwardCache<F> {
    tokens: Vec<Token>,
    shape: Shape,
    /// Positions the last block (and so `hidden`) covers.
    queries: Range<usize>,
    blocks: Vec<BlockCache<F>>,
    final_norm: Option<NormCache<F>>,
    hidden: Array2<F>,
}

#[derive(Clone, Debug)]
pub struct Transformer<F: Scalar = f32> {
    config: ModelConfig,
    params: Params<F>,
    mask: AttentionMask,
}

impl<F: Scalar> Transformer<F> {
    /// Randomly initialized model.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Arc::new(Layout::new(&config));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = Params::init(layout, config.d_model, &mut rng);
        Ok(Self::assemble(config, params))
    }

    pub fn from_params(config: ModelConfig, params: Params<F>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if layout.total() != params.len() {
            return Err(Error::Shape(format!(
                "{} parameters supplied, config needs {}",
                params.len(),
                layout.total()
            )));
        }
        Ok(Self::assemble(config, params))
    }

    fn assemble(config: ModelConfig, params: Params<F>) -> Self {
        let word_len = config.scheme.word_len();
        let mask = build_mask(word_len, config.context_len - word_len);
        Self {
            config,
            params,
            mask,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn scheme(&self) -> &TokenScheme {
        &self.config.scheme
    }

    pub fn params(&self) -> &Params<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<F> {
        &mut self.params
    }

    pub fn mask(&self) -> &AttentionMask {
        &self.mask
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    /// Same weights in another element type.
    pub fn cast<G: Scalar>(&self) -> Transformer<G> {
        Transformer {
            config: self.config,
            params: self.params.cast(),
            mask: self.mask.clone(),
        }
    }

    fn check_tokens(&self, tokens: &[Token], batch: usize, seq: usize) -> Result<()> {
        if tokens.len() != batch * seq {
            return Err(Error::Shape(format!(
                "{} tokens for {batch} rows of {seq}",
                tokens.len()
            )));
        }
        if seq == 0 || seq > self.config.context_len {
            return Err(Error::Shape(format!(
                "sequence length {seq} outside 1..={}",
                self.config.context_len
            )));
        }
        if let Some(&t) = tokens
            .iter()
            .find(|&&t| t as usize >= self.config.vocab_size)
        {
            return Err(Error::TokenOutOfRange {
                token: t as usize,
                limit: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn embed_rows(&self, tokens: &[Token], seq: usize) -> Array2<F> {
        let d = self.config.d_model;
        let tok = self.params.mat(self.params.layout().tok_emb);
        let pos = self.params.mat(self.params.layout().pos_emb);
        let mut x = Array2::zeros((tokens.len(), d));
        for (r, (&t, mut row)) in tokens.iter().zip(x.outer_iter_mut()).enumerate() {
            let te = tok.row(t as usize);
            let pe = pos.row(r % seq);
            for k in 0..d {
                row[k] = te[k] + pe[k];
            }
        }
        x
    }

    /// Token plus position embedding of one sequence, `len × D`.
    pub fn embed(&self, tokens: &[Token]) -> Result<Array2<F>> {
        self.check_tokens(tokens, 1, tokens.len())?;
        Ok(self.embed_rows(tokens, tokens.len()))
    }

    /// Forward pass. Every block sees all positions except the last, which
    /// only produces outputs for `queries`; nothing else reaches the decoder.
    fn run(&self, tokens: &[Token], batch: usize, seq: usize, queries: Range<usize>) -> Result<ForwardCache<F>> {
        self.check_tokens(tokens, batch, seq)?;
        assert!(queries.end <= seq && !queries.is_empty(), "query positions out of range");
        let shape = Shape {
            batch,
            seq,
            heads: self.config.n_heads,
        };
        let eps = cst::<F>(self.config.ln_eps);
        let p = &self.params;
        let layout = p.layout().clone();
        let last = layout.blocks.len() - 1;
        let mut x = self.embed_rows(tokens, seq);
        let mut blocks = Vec::with_capacity(layout.blocks.len());
        for (l, ids) in layout.blocks.iter().enumerate() {
            let qr = if l == last { queries.clone() } else { 0..seq };
            let cache = match self.config.norm {
                NormPlacement::Post => {
                    let xs = layers::gather_positions(&x, seq, qr.clone());
                    let (a, attn) = layers::attention(x, qr, p, ids, &self.mask, shape);
                    let r1 = xs + a;
                    let (h1, ln1) =
                        layers::layer_norm(&r1, p.vector(ids.ln1_g), p.vector(ids.ln1_b), eps);
                    let (f, ffn) = layers::feed_forward(h1.clone(), p, ids);
                    let r2 = h1 + f;
                    let (out, ln2) =
                        layers::layer_norm(&r2, p.vector(ids.ln2_g), p.vector(ids.ln2_b), eps);
                    x = out;
                    BlockCache { attn, ln1, ffn, ln2 }
                }
                NormPlacement::Pre => {
                    let (u, ln1) =
                        layers::layer_norm(&x, p.vector(ids.ln1_g), p.vector(ids.ln1_b), eps);
                    let xs = if qr.len() == seq {
                        x
                    } else {
                        layers::gather_positions(&x, seq, qr.clone())
                    };
                    let (a, attn) = layers::attention(u, qr, p, ids, &self.mask, shape);
                    let x1 = xs + a;
                    let (u2, ln2) =
                        layers::layer_norm(&x1, p.vector(ids.ln2_g), p.vector(ids.ln2_b), eps);
                    let (f, ffn) = layers::feed_forward(u2, p, ids);
                    x = x1 + f;
                    BlockCache { attn, ln1, ffn, ln2 }
                }
            };
            blocks.push(cache);
        }
        let (hidden, final_norm) = match layout.lnf {
            Some((g, b)) => {
                let (h, c) = layers::layer_norm(&x, p.vector(g), p.vector(b), eps);
                (h, Some(c))
            }
            None => (x, None),
        };
        Ok(ForwardCache {
            tokens: tokens.to_vec(),
            shape,
            queries,
            blocks,
            final_norm,
            hidden,
        })
    }

    fn decode(&self, hidden: &Array2<F>) -> Array2<F> {
        hidden.dot(&self.params.mat(self.params.layout().decoder))
    }

    /// Logits for every position of one sequence, `len × T`.
    pub fn forward(&self, tokens: &[Token]) -> Result<Array2<F>> {
        self.forward_batch(tokens, 1, tokens.len())
    }

    /// Logits for `batch` sequences of length `seq`, `(batch · seq) × T`.
    pub fn forward_batch(&self, tokens: &[Token], batch: usize, seq: usize) -> Result<Array2<F>> {
        let cache = self.run(tokens, batch, seq, 0..seq)?;
        Ok(self.decode(&cache.hidden))
    }

    fn target_positions(batch: &TrainBatch) -> Range<usize> {
        batch.target_offset..batch.seq
    }

    /// Value `1..=n` with the largest logit among the permutation tokens.
    fn perm_argmax(&self, logits: ndarray::ArrayView1<F>) -> usize {
        let lo = self.config.scheme.transposition_tokens();
        let n = self.config.scheme.n;
        let mut best = 0;
        for k in 1..n {
            if logits[lo + k] > logits[lo + best] {
                best = k;
            }
        }
        best + 1
    }

    /// Cross-entropy statistics and `dL/dlogits` for mean loss over targets.
    fn score(&self, logits: &Array2<F>, batch: &TrainBatch, want_grad: bool) -> (BatchStats, Option<Array2<F>>) {
        let per = batch.targets_per_row();
        let count = logits.nrows();
        let inv = F::one() / cst::<F>(count as f64);
        let mut stats = BatchStats {
            tokens: count,
            rows: batch.rows,
            ..Default::default()
        };
        let mut grad = want_grad.then(|| Array2::zeros(logits.raw_dim()));
        let mut row_ok = true;
        for (i, row) in logits.outer_iter().enumerate() {
            let target = batch.targets[i] as usize;
            let max = row.fold(F::neg_infinity(), |m, &v| if v > m { v } else { m });
            let sum = row.fold(F::zero(), |s, &v| s + (v - max).exp());
            let log_z = max + sum.ln();
            stats.loss_sum += (log_z - row[target]).to_f64().unwrap();
            let predicted = self.config.scheme.perm_token(self.perm_argmax(row)).unwrap() as usize;
            let ok = predicted == target;
            stats.tokens_correct += ok as usize;
            if i % per == 0 {
                row_ok = true;
            }
            row_ok &= ok;
            if i % per == per - 1 && row_ok {
                stats.rows_correct += 1;
            }
            if let Some(g) = grad.as_mut() {
                let mut gr = g.row_mut(i);
                for (k, &v) in row.iter().enumerate() {
                    gr[k] = (v - log_z).exp() * inv;
                }
                gr[target] -= inv;
            }
        }
        (stats, grad)
    }

    /// Teacher-forced loss and accuracy without gradients.
    pub fn evaluate_batch(&self, batch: &TrainBatch) -> Result<BatchStats> {
        let cache = self.run(&batch.inputs, batch.rows, batch.seq, Self::target_positions(batch))?;
        let logits = self.decode(&cache.hidden);
        Ok(self.score(&logits, batch, false).0)
    }

    /// Teacher-forced argmax values (1-based) at every prediction position.
    pub fn teacher_forced_values(&self, batch: &TrainBatch) -> Result<Vec<usize>> {
        let cache = self.run(&batch.inputs, batch.rows, batch.seq, Self::target_positions(batch))?;
        let logits = self.decode(&cache.hidden);
        Ok(logits.outer_iter().map(|r| self.perm_argmax(r)).collect())
    }

    /// Mean cross-entropy over the prediction positions and its gradient
    /// with respect to every parameter.
    pub fn loss_and_grad(&self, batch: &TrainBatch) -> Result<(BatchStats, Params<F>)> {
        let mut grads = Params::zeros(self.params.layout().clone());
        let stats = self.accumulate_grad(batch, &mut grads)?;
        Ok((stats, grads))
    }

    /// As [`loss_and_grad`](Self::loss_and_grad), adding into `grads`.
    pub fn accumulate_grad(&self, batch: &TrainBatch, grads: &mut Params<F>) -> Result<BatchStats> {
        let cache = self.run(&batch.inputs, batch.rows, batch.seq, Self::target_positions(batch))?;
        let logits = self.decode(&cache.hidden);
        let (stats, dlogits) = self.score(&logits, batch, true);
        let dlogits = dlogits.expect("gradient requested");
        self.backward(&cache, &dlogits, grads);
        Ok(stats)
    }

    fn backward(&self, cache: &ForwardCache<F>, dlogits: &Array2<F>, grads: &mut Params<F>) {
        let p = &self.params;
        let layout = p.layout().clone();
        let seq = cache.shape.seq;
        let last = layout.blocks.len() - 1;

        general_mat_mul(F::one(), &cache.hidden.t(), dlogits, F::one(), &mut grads.mat_mut(layout.decoder));
        let mut dx = dlogits.dot(&p.mat(layout.decoder).t());
        if let (Some(ids), Some(c)) = (layout.lnf, cache.final_norm.as_ref()) {
            dx = layers::layer_norm_backward(&dx, c, p, grads, ids);
        }
        for (l, (ids, bc)) in layout.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let qr = if l == last { cache.queries.clone() } else { 0..seq };
            dx = match self.config.norm {
                NormPlacement::Post => {
                    let dr2 = layers::layer_norm_backward(&dx, &bc.ln2, p, grads, (ids.ln2_g, ids.ln2_b));
                    let dh1 = layers::feed_forward_backward(&dr2, &bc.ffn, p, grads, ids) + &dr2;
                    let dr1 = layers::layer_norm_backward(&dh1, &bc.ln1, p, grads, (ids.ln1_g, ids.ln1_b));
                    let mut din = layers::attention_backward(&dr1, &bc.attn, p, grads, ids, cache.shape);
                    layers::add_positions(&mut din, &dr1, seq, qr);
                    din
                }
                NormPlacement::Pre => {
                    let du2 = layers::feed_forward_backward(&dx, &bc.ffn, p, grads, ids);
                    let dx1 = layers::layer_norm_backward(&du2, &bc.ln2, p, grads, (ids.ln2_g, ids.ln2_b)) + &dx;
                    let du = layers::attention_backward(&dx1, &bc.attn, p, grads, ids, cache.shape);
                    let mut din = layers::layer_norm_backward(&du, &bc.ln1, p, grads, (ids.ln1_g, ids.ln1_b));
                    layers::add_positions(&mut din, &dx1, seq, qr);
                    din
                }
            };
        }
        {
            let mut dtok = grads.mat_mut(layout.tok_emb);
            for (&t, row) in cache.tokens.iter().zip(dx.outer_iter()) {
                let mut dst = dtok.row_mut(t as usize);
                dst += &row;
            }
        }
        let mut dpos = grads.mat_mut(layout.pos_emb);
        for (r, row) in dx.outer_iter().enumerate() {
            let mut dst = dpos.row_mut(r % seq);
            dst += &row;
        }
    }

    /// Greedy autoregressive decoding of one word.
    pub fn predict_permutation(&self, word_tokens: &[Token]) -> Result<Vec<usize>> {
        Ok(self.predict_batch(&[word_tokens])?.pop().unwrap_or_default())
    }

    /// Greedy decoding for many words at once. Each output has `n` values in
    /// `1..=n`; whether they form a permutation is up to the model.
    pub fn predict_batch(&self, words: &[&[Token]]) -> Result<Vec<Vec<usize>>> {
        let scheme = self.config.scheme;
        let word_len = scheme.word_len();
        let n = scheme.n;
        let batch = words.len();
        if batch == 0 {
            return Ok(Vec::new());
        }
        let mut seqs: Vec<Vec<Token>> = Vec::with_capacity(batch);
        for w in words {
            scheme.check_word(w)?;
            let mut s = Vec::with_capacity(word_len + n);
            s.extend_from_slice(w);
            s.push(scheme.separator());
            seqs.push(s);
        }
        let mut out = vec![Vec::with_capacity(n); batch];
        for step in 0..n {
            let seq = word_len + 1 + step;
            let flat: Vec<Token> = seqs.iter().flatten().copied().collect();
            let cache = self.run(&flat, batch, seq, seq - 1..seq)?;
            let logits = self.decode(&cache.hidden);
            for (b, row) in logits.outer_iter().enumerate() {
                let v = self.perm_argmax(row);
                out[b].push(v);
                seqs[b].push(scheme.perm_token(v)?);
            }
        }
        Ok(out)
    }

    /// Trainable tensors with their shapes and element counts.
    pub fn parameter_breakdown(&self) -> Vec<(String, Vec<usize>, usize)> {
        parameter_breakdown(&self.config)
    }
}

/// Per-tensor parameter counts for `config` without allocating weights.
pub fn parameter_breakdown(config: &ModelConfig) -> Vec<(String, Vec<usize>, usize)> {
    Layout::new(config)
        .tensors()
        .iter()
        .map(|t| (t.name.clone(), t.shape.clone(), t.len()))
        .collect()
}

pub fn parameter_count(config: &ModelConfig) -> usize {
    Layout::new(config).total()
}

/// Row-wise softmax.
pub fn softmax_rows<F: Scalar>(logits: &Array2<F>) -> Array2<F> {
    let mut out = logits.clone();
    for mut row in out.outer_iter_mut() {
        let max = row.fold(F::neg_infinity(), |m, &v| if v > m { v } else { m });
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}
