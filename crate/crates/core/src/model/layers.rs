//! Forward and backward passes of the transformer sublayers.
//!
//! Activations are `(batch · seq) × D` row-major matrices. Backward passes
//! accumulate parameter gradients straight into a gradient [`Params`] buffer
//! and return the gradient with respect to the sublayer input.

use std::ops::Range;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView1, Axis};

use super::mask::AttentionMask;
use super::params::{BlockIds, Params};
use super::{cst, Scalar};

pub(crate) struct NormCache<F> {
    xhat: Array2<F>,
    rstd: Vec<F>,
}

pub(crate) fn layer_norm<F: Scalar>(
    x: &Array2<F>,
    gain: ArrayView1<F>,
    bias: ArrayView1<F>,
    eps: F,
) -> (Array2<F>, NormCache<F>) {
    let (rows, d) = x.dim();
    let dn = cst::<F>(d as f64);
    let mut xhat = Array2::zeros((rows, d));
    let mut y = Array2::zeros((rows, d));
    let mut rstd = Vec::with_capacity(rows);
    for ((xr, mut hr), mut yr) in x
        .outer_iter()
        .zip(xhat.outer_iter_mut())
        .zip(y.outer_iter_mut())
    {
        let mean = xr.sum() / dn;
        let var = xr.fold(F::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / dn;
        let r = F::one() / (var + eps).sqrt();
        rstd.push(r);
        for k in 0..d {
            let h = (xr[k] - mean) * r;
            hr[k] = h;
            yr[k] = h * gain[k] + bias[k];
        }
    }
    (y, NormCache { xhat, rstd })
}

pub(crate) fn layer_norm_backward<F: Scalar>(
    dy: &Array2<F>,
    cache: &NormCache<F>,
    params: &Params<F>,
    grads: &mut Params<F>,
    (gain_id, bias_id): (usize, usize),
) -> Array2<F> {
    let (rows, d) = dy.dim();
    let dn = cst::<F>(d as f64);
    let gain = params.slice(gain_id);
    let mut dgain = vec![F::zero(); d];
    let mut dbias = vec![F::zero(); d];
    let mut dx = Array2::zeros((rows, d));
    let mut dxh = vec![F::zero(); d];
    for r in 0..rows {
        let dyr = dy.row(r);
        let xh = cache.xhat.row(r);
        let mut sum = F::zero();
        let mut sum_x = F::zero();
        for k in 0..d {
            dgain[k] += dyr[k] * xh[k];
            dbias[k] += dyr[k];
            let g = dyr[k] * gain[k];
            dxh[k] = g;
            sum += g;
            sum_x += g * xh[k];
        }
        let m1 = sum / dn;
        let m2 = sum_x / dn;
        let rs = cache.rstd[r];
        let mut out = dx.row_mut(r);
        for k in 0..d {
            out[k] = rs * (dxh[k] - m1 - xh[k] * m2);
        }
    }
    add_into(grads.slice_mut(gain_id), &dgain);
    add_into(grads.slice_mut(bias_id), &dbias);
    dx
}

fn add_into<F: Scalar>(dst: &mut [F], src: &[F]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) struct AttnCache<F> {
    x: Array2<F>,
    /// Rows of `x` at the query positions, when those are not all of them.
    xq: Option<Array2<F>>,
    queries: Range<usize>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    /// Attention weights, `(batch · heads)` matrices of `queries × seq`.
    probs: Vec<Array2<F>>,
    ctx: Array2<F>,
}

#[derive(Clone, Copy)]
pub(crate) struct Shape {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
}

/// Rows at positions `range` of every sequence in a `(batch · seq) × D`
/// matrix.
pub(crate) fn gather_positions<F: Scalar>(x: &Array2<F>, seq: usize, range: Range<usize>) -> Array2<F> {
    let batch = x.nrows() / seq;
    let ql = range.len();
    let mut out = Array2::zeros((batch * ql, x.ncols()));
    for b in 0..batch {
        out.slice_mut(s![b * ql..(b + 1) * ql, ..])
            .assign(&x.slice(s![b * seq + range.start..b * seq + range.end, ..]));
    }
    out
}

/// Adds `src` (rows at positions `range`) into the matching rows of `dst`.
pub(crate) fn add_positions<F: Scalar>(dst: &mut Array2<F>, src: &Array2<F>, seq: usize, range: Range<usize>) {
    if range.len() == seq {
        *dst += src;
        return;
    }
    let batch = dst.nrows() / seq;
    let ql = range.len();
    for b in 0..batch {
        let mut d = dst.slice_mut(s![b * seq + range.start..b * seq + range.end, ..]);
        d += &src.slice(s![b * ql..(b + 1) * ql, ..]);
    }
}

/// Masked multi-head self-attention. Keys and values come from every
/// position of `x`; outputs are produced only for positions in `queries`.
pub(crate) fn attention<F: Scalar>(
    x: Array2<F>,
    queries: Range<usize>,
    params: &Params<F>,
    ids: &BlockIds,
    mask: &AttentionMask,
    shape: Shape,
) -> (Array2<F>, AttnCache<F>) {
    let Shape { batch, seq, heads } = shape;
    let d = x.ncols();
    let dh = d / heads;
    let ql = queries.len();
    let scale = F::one() / cst::<F>(dh as f64).sqrt();
    let xq = (ql != seq).then(|| gather_positions(&x, seq, queries.clone()));
    let q = xq.as_ref().unwrap_or(&x).dot(&params.mat(ids.wq));
    let k = x.dot(&params.mat(ids.wk));
    let v = x.dot(&params.mat(ids.wv));
    let mut ctx = Array2::zeros((batch * ql, d));
    let mut probs = Vec::with_capacity(batch * heads);
    for b in 0..batch {
        let qrows = b * ql..(b + 1) * ql;
        let rows = b * seq..(b + 1) * seq;
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let qb = q.slice(s![qrows.clone(), cols.clone()]);
            let kb = k.slice(s![rows.clone(), cols.clone()]);
            let vb = v.slice(s![rows.clone(), cols.clone()]);
            let mut p = qb.dot(&kb.t());
            for (r, mut row) in p.outer_iter_mut().enumerate() {
                let allow = &mask.row(queries.start + r)[..seq];
                let mut max = F::neg_infinity();
                for c in 0..seq {
                    if allow[c] && row[c] * scale > max {
                        max = row[c] * scale;
                    }
                }
                let mut sum = F::zero();
                for c in 0..seq {
                    let e = if allow[c] {
                        (row[c] * scale - max).exp()
                    } else {
                        F::zero()
                    };
                    row[c] = e;
                    sum += e;
                }
                row.mapv_inplace(|e| e / sum);
            }
            general_mat_mul(
                F::one(),
                &p,
                &vb,
                F::zero(),
                &mut ctx.slice_mut(s![qrows.clone(), cols]),
            );
            probs.push(p);
        }
    }
    let mut out = ctx.dot(&params.mat(ids.wo));
    out += &params.vector(ids.bo);
    (
        out,
        AttnCache {
            x,
            xq,
            queries,
            q,
            k,
            v,
            probs,
            ctx,
        },
    )
}

/// Returns the gradient with respect to every row of the attention input.
pub(crate) fn attention_backward<F: Scalar>(
    dout: &Array2<F>,
    cache: &AttnCache<F>,
    params: &Params<F>,
    grads: &mut Params<F>,
    ids: &BlockIds,
    shape: Shape,
) -> Array2<F> {
    let Shape { batch, seq, heads } = shape;
    let d = dout.ncols();
    let dh = d / heads;
    let ql = cache.queries.len();
    let scale = F::one() / cst::<F>(dh as f64).sqrt();

    general_mat_mul(F::one(), &cache.ctx.t(), dout, F::one(), &mut grads.mat_mut(ids.wo));
    add_into(grads.slice_mut(ids.bo), dout.sum_axis(Axis(0)).as_slice().unwrap());
    let dctx = dout.dot(&params.mat(ids.wo).t());

    let mut dq = Array2::zeros((batch * ql, d));
    let mut dk = Array2::zeros((batch * seq, d));
    let mut dv = Array2::zeros((batch * seq, d));
    for b in 0..batch {
        let qrows = b * ql..(b + 1) * ql;
        let rows = b * seq..(b + 1) * seq;
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let p = &cache.probs[b * heads + h];
            let dc = dctx.slice(s![qrows.clone(), cols.clone()]);
            let qb = cache.q.slice(s![qrows.clone(), cols.clone()]);
            let kb = cache.k.slice(s![rows.clone(), cols.clone()]);
            let vb = cache.v.slice(s![rows.clone(), cols.clone()]);
            general_mat_mul(
                F::one(),
                &p.t(),
                &dc,
                F::zero(),
                &mut dv.slice_mut(s![rows.clone(), cols.clone()]),
            );
            let mut ds = dc.dot(&vb.t());
            for (mut drow, prow) in ds.outer_iter_mut().zip(p.outer_iter()) {
                let dot = drow
                    .iter()
                    .zip(prow.iter())
                    .fold(F::zero(), |acc, (&a, &b)| acc + a * b);
                for (dv, &pv) in drow.iter_mut().zip(prow.iter()) {
                    *dv = pv * (*dv - dot) * scale;
                }
            }
            general_mat_mul(
                F::one(),
                &ds,
                &kb,
                F::zero(),
                &mut dq.slice_mut(s![qrows.clone(), cols.clone()]),
            );
            general_mat_mul(
                F::one(),
                &ds.t(),
                &qb,
                F::zero(),
                &mut dk.slice_mut(s![rows.clone(), cols]),
            );
        }
    }
    let xt = cache.x.t();
    let xqt = cache.xq.as_ref().map_or(xt, |xq| xq.t());
    general_mat_mul(F::one(), &xqt, &dq, F::one(), &mut grads.mat_mut(ids.wq));
    general_mat_mul(F::one(), &xt, &dk, F::one(), &mut grads.mat_mut(ids.wk));
    general_mat_mul(F::one(), &xt, &dv, F::one(), &mut grads.mat_mut(ids.wv));
    let mut dx = dk.dot(&params.mat(ids.wk).t());
    general_mat_mul(F::one(), &dv, &params.mat(ids.wv).t(), F::one(), &mut dx);
    let dxq = dq.dot(&params.mat(ids.wq).t());
    add_positions(&mut dx, &dxq, seq, cache.queries.clone());
    dx
}

pub(crate) struct FfnCache<F> {
    x: Array2<F>,
    hidden: Array2<F>,
}

/// `Affine(D, 4D) → ReLU → Affine(4D, D)`.
pub(crate) fn feed_forward<F: Scalar>(
    x: Array2<F>,
    params: &Params<F>,
    ids: &BlockIds,
) -> (Array2<F>, FfnCache<F>) {
    let mut hidden = x.dot(&params.mat(ids.w1));
    hidden += &params.vector(ids.b1);
    hidden.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
    let mut out = hidden.dot(&params.mat(ids.w2));
    out += &params.vector(ids.b2);
    (out, FfnCache { x, hidden })
}

pub(crate) fn feed_forward_backward<F: Scalar>(
    dout: &Array2<F>,
    cache: &FfnCache<F>,
    params: &Params<F>,
    grads: &mut Params<F>,
    ids: &BlockIds,
) -> Array2<F> {
    general_mat_mul(F::one(), &cache.hidden.t(), dout, F::one(), &mut grads.mat_mut(ids.w2));
    add_into(grads.slice_mut(ids.b2), dout.sum_axis(Axis(0)).as_slice().unwrap());
    let mut dh = dout.dot(&params.mat(ids.w2).t());
    ndarray::Zip::from(&mut dh)
        .and(&cache.hidden)
        .for_each(|g, &h| {
            if h <= F::zero() {
                *g = F::zero();
            }
        });
    general_mat_mul(F::one(), &cache.x.t(), &dh, F::one(), &mut grads.mat_mut(ids.w1));
    add_into(grads.slice_mut(ids.b1), dh.sum_axis(Axis(0)).as_slice().unwrap());
    dh.dot(&params.mat(ids.w1).t())
}
