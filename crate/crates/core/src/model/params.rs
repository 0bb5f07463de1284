//! Flat parameter storage with a named tensor layout.
//!
//! All trainable tensors live in one contiguous buffer. The optimizer,
//! checkpointing and gradient checks work on the flat buffer; the forward and
//! backward passes borrow typed views through [`Layout`] ids.

use std::sync::Arc;

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::{cst, Scalar};

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BlockIds {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
}

#[derive(Clone, Debug)]
pub struct Layout {
    tensors: Vec<TensorSpec>,
    inits: Vec<Init>,
    total: usize,
    pub tok_emb: usize,
    pub pos_emb: usize,
    pub blocks: Vec<BlockIds>,
    pub lnf: Option<(usize, usize)>,
    pub decoder: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let mut tensors = Vec::new();
        let mut inits = Vec::new();
        let mut total = 0;
        let mut add = |name: String, shape: Vec<usize>, init: Init| {
            let spec = TensorSpec {
                name,
                shape,
                offset: total,
            };
            total += spec.len();
            tensors.push(spec);
            inits.push(init);
            tensors.len() - 1
        };
        let tok_emb = add("token_embedding".into(), vec![cfg.vocab_size, d], Init::Normal);
        let pos_emb = add("position_embedding".into(), vec![cfg.context_len, d], Init::Normal);
        let blocks = (0..cfg.n_layers)
            .map(|l| {
                let p = |s: &str| format!("blocks.{l}.{s}");
                BlockIds {
                    wq: add(p("attn.query"), vec![d, d], Init::Normal),
                    wk: add(p("attn.key"), vec![d, d], Init::Normal),
                    wv: add(p("attn.value"), vec![d, d], Init::Normal),
                    wo: add(p("attn.out.weight"), vec![d, d], Init::Normal),
                    bo: add(p("attn.out.bias"), vec![d], Init::Zeros),
                    ln1_g: add(p("norm1.weight"), vec![d], Init::Ones),
                    ln1_b: add(p("norm1.bias"), vec![d], Init::Zeros),
                    w1: add(p("ffn.up.weight"), vec![d, 4 * d], Init::Normal),
                    b1: add(p("ffn.up.bias"), vec![4 * d], Init::Zeros),
                    w2: add(p("ffn.down.weight"), vec![4 * d, d], Init::Normal),
                    b2: add(p("ffn.down.bias"), vec![d], Init::Zeros),
                    ln2_g: add(p("norm2.weight"), vec![d], Init::Ones),
                    ln2_b: add(p("norm2.bias"), vec![d], Init::Zeros),
                }
            })
            .collect();
        let lnf = cfg.final_norm.then(|| {
            (
                add("final_norm.weight".into(), vec![d], Init::Ones),
                add("final_norm.bias".into(), vec![d], Init::Zeros),
            )
        });
        let decoder = add("decoder".into(), vec![d, cfg.vocab_size], Init::Normal);
        Self {
            tensors,
            inits,
            total,
            tok_emb,
            pos_emb,
            blocks,
            lnf,
            decoder,
        }
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn spec(&self, id: usize) -> &TensorSpec {
        &self.tensors[id]
    }

    fn range(&self, id: usize) -> std::ops::Range<usize> {
        let s = &self.tensors[id];
        s.offset..s.offset + s.len()
    }

    fn init_kind(&self, id: usize) -> Init {
        self.inits[id]
    }
}

/// Model parameters (or gradients, or optimizer moments) over one layout.
#[derive(Clone, Debug)]
pub struct Params<F> {
    layout: Arc<Layout>,
    data: Vec<F>,
}

impl<F: Scalar> Params<F> {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let data = vec![F::zero(); layout.total()];
        Self { layout, data }
    }

    /// Matrices and embedding tables from `N(0, 1/D)`, biases zero, norm
    /// gains one.
    pub fn init<R: Rng + ?Sized>(layout: Arc<Layout>, d_model: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (1.0 / d_model as f64).sqrt()).expect("valid std");
        let mut p = Self::zeros(layout.clone());
        for id in 0..layout.tensors().len() {
            let range = layout.range(id);
            let kind = layout.init_kind(id);
            for x in &mut p.data[range] {
                *x = match kind {
                    Init::Normal => cst(normal.sample(rng)),
                    Init::Zeros => F::zero(),
                    Init::Ones => F::one(),
                };
            }
        }
        p
    }

    pub fn from_vec(layout: Arc<Layout>, data: Vec<F>) -> Option<Self> {
        (data.len() == layout.total()).then_some(Self { layout, data })
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn slice(&self, id: usize) -> &[F] {
        &self.data[self.layout.range(id)]
    }

    pub fn slice_mut(&mut self, id: usize) -> &mut [F] {
        let r = self.layout.range(id);
        &mut self.data[r]
    }

    pub fn mat(&self, id: usize) -> ArrayView2<'_, F> {
        let s = self.layout.spec(id);
        ArrayView2::from_shape((s.shape[0], s.shape[1]), self.slice(id)).expect("matrix shape")
    }

    pub fn mat_mut(&mut self, id: usize) -> ArrayViewMut2<'_, F> {
        let (r, c) = {
            let s = self.layout.spec(id);
            (s.shape[0], s.shape[1])
        };
        ArrayViewMut2::from_shape((r, c), self.slice_mut(id)).expect("matrix shape")
    }

    pub fn vector(&self, id: usize) -> ArrayView1<'_, F> {
        ArrayView1::from(self.slice(id))
    }

    pub fn vector_mut(&mut self, id: usize) -> ArrayViewMut1<'_, F> {
        ArrayViewMut1::from(self.slice_mut(id))
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|x| *x = F::zero());
    }

    pub fn cast<G: Scalar>(&self) -> Params<G> {
        Params {
            layout: self.layout.clone(),
            data: self
                .data
                .iter()
                .map(|&x| cst(x.to_f64().unwrap()))
                .collect(),
        }
    }

    /// Euclidean norm of the whole buffer.
    pub fn norm(&self) -> f64 {
        self.data
            .iter()
            .map(|&x| {
                let v = x.to_f64().unwrap();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }
}
