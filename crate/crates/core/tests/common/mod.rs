#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symword::datagen::{generate_rows, DataGenConfig, Split};
use symword::model::{ModelConfig, NormPlacement, TrainBatch, Transformer};
use symword::{Token, TokenScheme};

pub fn batch(scheme: TokenScheme, rows: usize, seed: u64) -> TrainBatch {
    let cfg = DataGenConfig::new(scheme, scheme.n - 1, rows, seed, Split::Test);
    let samples = generate_rows(&cfg, 0..rows as u64).unwrap();
    TrainBatch::from_samples(&scheme, &samples).unwrap()
}

fn loss(model: &Transformer<f64>, b: &TrainBatch) -> f64 {
    model.evaluate_batch(b).unwrap().mean_loss()
}

pub struct GradientCheck {
    pub parameters: usize,
    /// Parameters whose gradient is large enough for a relative comparison.
    pub compared: usize,
    pub worst_relative: f64,
    /// Largest absolute mismatch among the negligible gradients.
    pub worst_absolute_small: f64,
}

impl GradientCheck {
    pub fn passed(&self, tol: f64) -> bool {
        self.worst_relative < tol && self.worst_absolute_small < 1e-8 && self.compared > self.parameters / 2
    }
}

/// Central differences (h = 1e-6) on every parameter of a tiny f64 model.
pub fn check_gradients(norm: NormPlacement, heads: usize, layers: usize) -> GradientCheck {
    let scheme = TokenScheme::general(4).unwrap();
    let mut cfg = ModelConfig::new(scheme, 8, heads, layers);
    cfg.norm = norm;
    let mut model: Transformer<f64> = Transformer::new(cfg, 11).unwrap();
    let b = batch(scheme, 3, 5);
    let (_, grads) = model.loss_and_grad(&b).unwrap();
    let analytic = grads.as_slice().to_vec();
    let h = 1e-6;
    let mut out = GradientCheck {
        parameters: analytic.len(),
        compared: 0,
        worst_relative: 0.0,
        worst_absolute_small: 0.0,
    };
    for (i, &a) in analytic.iter().enumerate() {
        let orig = model.params().as_slice()[i];
        model.params_mut().as_mut_slice()[i] = orig + h;
        let up = loss(&model, &b);
        model.params_mut().as_mut_slice()[i] = orig - h;
        let down = loss(&model, &b);
        model.params_mut().as_mut_slice()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let scale = a.abs().max(numeric.abs());
        if scale < 1e-7 {
            out.worst_absolute_small = out.worst_absolute_small.max((a - numeric).abs());
        } else {
            out.worst_relative = out.worst_relative.max((a - numeric).abs() / scale);
            out.compared += 1;
        }
    }
    out
}

/// Largest change in any prediction-position logit when every prediction
/// token after that position is resampled, over `inputs` random contexts.
pub fn causality_deviation(scheme: TokenScheme, inputs: usize, seed: u64) -> f64 {
    let model: Transformer<f32> = Transformer::new(ModelConfig::new(scheme, 32, 4, 2), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 14);
    let word_len = scheme.word_len();
    let c = scheme.context_len();
    let t = scheme.transposition_tokens() as u16;
    let mut worst = 0.0f32;
    for _ in 0..inputs {
        let mut tokens: Vec<u16> = (0..word_len).map(|_| rng.gen_range(0..t)).collect();
        tokens.push(scheme.separator());
        while tokens.len() < c {
            tokens.push(scheme.perm_token(rng.gen_range(1..=scheme.n)).unwrap());
        }
        let base = model.forward(&tokens).unwrap();
        let cut = rng.gen_range(word_len + 1..c);
        let mut changed = tokens.clone();
        for tok in &mut changed[cut..] {
            *tok = scheme.perm_token(rng.gen_range(1..=scheme.n)).unwrap();
        }
        let other = model.forward(&changed).unwrap();
        for r in word_len..cut {
            for k in 0..base.ncols() {
                worst = worst.max((base[[r, k]] - other[[r, k]]).abs());
            }
        }
    }
    worst as f64
}


/// Row `i` of the matrix has its single 1 in column `σ(i)`, so
/// `M(σ ∘ τ) = M(τ) M(σ)`.
type Matrix = Vec<Vec<u8>>;

fn identity_matrix(n: usize) -> Matrix {
    (0..n).map(|i| (0..n).map(|j| u8::from(i == j)).collect()).collect()
}

fn transposition_matrix(n: usize, i: usize, j: usize) -> Matrix {
    let mut m = identity_matrix(n);
    m.swap(i - 1, j - 1);
    m
}

fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.len();
    (0..n)
        .map(|r| (0..n).map(|c| (0..n).map(|k| a[r][k] * b[k][c]).sum()).collect())
        .collect()
}

fn one_line(m: &Matrix) -> Vec<usize> {
    m.iter()
        .map(|row| {
            assert_eq!(row.iter().map(|&v| v as usize).sum::<usize>(), 1);
            row.iter().position(|&v| v == 1).unwrap() + 1
        })
        .collect()
}

/// `π = t₁ ∘ t₂ ∘ ⋯ ∘ t_k`, built as `M(t_k) ⋯ M(t₁)`.
pub fn matrix_oracle(n: usize, pairs: &[(usize, usize)]) -> Vec<usize> {
    let mut acc = identity_matrix(n);
    for &(i, j) in pairs {
        acc = matmul(&transposition_matrix(n, i, j), &acc);
    }
    one_line(&acc)
}

fn general_pair(token: Token, n: usize) -> (usize, usize) {
    let x = token as usize;
    (x % n + 1, x / n + 1)
}

pub fn agrees_with_matrices(scheme: &TokenScheme, tokens: &[Token]) -> bool {
    let n = scheme.n;
    let pairs: Vec<_> = tokens.iter().map(|&t| general_pair(t, n)).collect();
    let got = scheme.decode_word(tokens).unwrap().evaluate(n).unwrap();
    got.entries() == matrix_oracle(n, &pairs).as_slice()
}

/// Every general-scheme word of length at most 4 over S5: (words, mismatches).
pub fn exhaustive_s5() -> (usize, usize) {
    let scheme = TokenScheme::general(5).unwrap();
    let t = scheme.transposition_tokens();
    let (mut words, mut bad) = (0, 0);
    for len in 0..=4u32 {
        for code in 0..t.pow(len) {
            let mut c = code;
            let tokens: Vec<Token> = (0..len)
                .map(|_| {
                    let d = (c % t) as Token;
                    c /= t;
                    d
                })
                .collect();
            bad += usize::from(!agrees_with_matrices(&scheme, &tokens));
            words += 1;
        }
    }
    (words, bad)
}

/// `count` random full-length general words over S10: mismatches.
pub fn random_s10(count: usize, seed: u64) -> usize {
    let scheme = TokenScheme::general(10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .filter(|_| {
            let tokens: Vec<Token> = (0..scheme.word_len())
                .map(|_| rng.gen_range(0..scheme.transposition_tokens()) as Token)
                .collect();
            !agrees_with_matrices(&scheme, &tokens)
        })
        .count()
}
