use rayon::prelude::*;

use crate::error::{GrnError, Result};
use crate::numerics::{cross_entropy_with_grad, Scalar, Tensor};
use crate::predictor::{Layout, PredictorConfig, PredictorParams};
use crate::refine::TokenMap;

const NORM_EPS: f64 = 1e-6;

/// One training example: composed input, condition (None = null class) and
/// per-token target categories.
#[derive(Clone, Debug)]
pub struct Example {
    pub input: TokenMap,
    pub cond: Option<usize>,
    pub targets: Vec<u16>,
}

struct LayerCache<T> {
    x_in: Vec<T>,
    n1: Vec<T>,
    r1: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    att: Vec<T>,
    o: Vec<T>,
    x_mid: Vec<T>,
    n2: Vec<T>,
    r2: Vec<T>,
    a: Vec<T>,
    b: Vec<T>,
    m: Vec<T>,
}

struct Cache<T> {
    layers: Vec<LayerCache<T>>,
    x_last: Vec<T>,
    nf: Vec<T>,
    rf: Vec<T>,
}

fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    T::gemm(m, k, n, a, false, b, false, &mut c, false);
    c
}

/// `[S, H·dh]` row-major to `[H, S, dh]`.
fn split_heads<T: Scalar>(x: &[T], s: usize, heads: usize, dh: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for i in 0..s {
        for h in 0..heads {
            let src = &x[i * heads * dh + h * dh..][..dh];
            out[h * s * dh + i * dh..][..dh].copy_from_slice(src);
        }
    }
    out
}

fn merge_heads<T: Scalar>(x: &[T], s: usize, heads: usize, dh: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for h in 0..heads {
        for i in 0..s {
            let src = &x[h * s * dh + i * dh..][..dh];
            out[i * heads * dh + h * dh..][..dh].copy_from_slice(src);
        }
    }
    out
}

fn rmsnorm<T: Scalar>(x: &[T], gain: &[T], d: usize) -> (Vec<T>, Vec<T>) {
    let rows = x.len() / d;
    let mut out = vec![T::zero(); x.len()];
    let mut inv = vec![T::zero(); rows];
    let eps = T::from_real(NORM_EPS);
    let inv_d = T::from_real(1.0 / d as f64);
    for r in 0..rows {
        let row = &x[r * d..][..d];
        let ms = row.iter().map(|&v| v * v).sum::<T>() * inv_d;
        let ri = T::one() / (ms + eps).sqrt();
        inv[r] = ri;
        for ((o, &v), &g) in out[r * d..][..d].iter_mut().zip(row).zip(gain) {
            *o = v * ri * g;
        }
    }
    (out, inv)
}

/// Accumulates into `dx` and `dgain`.
fn rmsnorm_backward<T: Scalar>(
    x: &[T],
    gain: &[T],
    inv: &[T],
    dout: &[T],
    d: usize,
    dx: &mut [T],
    dgain: &mut [T],
) {
    let inv_d = T::from_real(1.0 / d as f64);
    for (r, &ri) in inv.iter().enumerate() {
        let row = &x[r * d..][..d];
        let dy = &dout[r * d..][..d];
        let mut dot = T::zero();
        for j in 0..d {
            let gd = dy[j] * gain[j];
            dgain[j] += dy[j] * row[j] * ri;
            dot += gd * row[j];
        }
        let coef = ri * ri * ri * dot * inv_d;
        for j in 0..d {
            dx[r * d + j] += ri * dy[j] * gain[j] - row[j] * coef;
        }
    }
}

fn sigmoid<T: Scalar>(a: T) -> T {
    T::one() / (T::one() + (-a).exp())
}

fn check_input(cfg: &PredictorConfig, input: &TokenMap, cond: Option<usize>) -> Result<usize> {
    if input.n_pos() != cfg.n_pos || input.c_eff() != cfg.c_eff || input.k() != cfg.k {
        return Err(GrnError::param(format!(
            "input map {}x{} (K={}) does not match model {}x{} (K={})",
            input.n_pos(),
            input.c_eff(),
            input.k(),
            cfg.n_pos,
            cfg.c_eff,
            cfg.k
        )));
    }
    match cond {
        Some(c) if c >= cfg.n_classes => Err(GrnError::param(format!(
            "condition {c} outside {} classes",
            cfg.n_classes
        ))),
        Some(c) => Ok(c),
        None => Ok(cfg.null_class()),
    }
}

fn run<T: Scalar>(
    params: &PredictorParams<T>,
    input: &TokenMap,
    cond: Option<usize>,
    keep: bool,
) -> Result<(Vec<T>, Option<Cache<T>>)> {
    let cfg = params.config();
    let class = check_input(cfg, input, cond)?;
    let lay = Layout::new(cfg);
    let p = params.data();
    let (s, d, heads, dh, f) = (cfg.seq_len(), cfg.hidden, cfg.heads, cfg.head_dim(), cfg.ff_hidden);
    let ck = cfg.c_eff * cfg.k;
    let scale = T::from_real(1.0 / (dh as f64).sqrt());

    let mut x = vec![T::zero(); s * d];
    x[..d].copy_from_slice(&p[lay.cls_emb + class * d..][..d]);
    for pos in 0..cfg.n_pos {
        let row = &mut x[(pos + 1) * d..][..d];
        row.copy_from_slice(&p[lay.pos_emb + pos * d..][..d]);
        for c in 0..cfg.c_eff {
            let tok = input.values()[pos * cfg.c_eff + c] as usize;
            let emb = &p[lay.tok_emb + (c * cfg.k + tok) * d..][..d];
            for (r, &e) in row.iter_mut().zip(emb) {
                *r += e;
            }
        }
    }

    let mut layers = Vec::with_capacity(if keep { cfg.depth } else { 0 });
    for lo in &lay.layers {
        let (n1, r1) = rmsnorm(&x, &p[lo.norm1..][..d], d);
        let q = split_heads(&matmul(&n1, &p[lo.wq..][..d * d], s, d, d), s, heads, dh);
        let k = split_heads(&matmul(&n1, &p[lo.wk..][..d * d], s, d, d), s, heads, dh);
        let v = split_heads(&matmul(&n1, &p[lo.wv..][..d * d], s, d, d), s, heads, dh);
        let mut att = vec![T::zero(); heads * s * s];
        let mut oh = vec![T::zero(); heads * s * dh];
        for h in 0..heads {
            let qh = &q[h * s * dh..][..s * dh];
            let kh = &k[h * s * dh..][..s * dh];
            let vh = &v[h * s * dh..][..s * dh];
            let a = &mut att[h * s * s..][..s * s];
            T::gemm(s, dh, s, qh, false, kh, true, a, false);
            for row in a.chunks_mut(s) {
                let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
                let mut sum = T::zero();
                for v in row.iter_mut() {
                    *v = ((*v - max) * scale).exp();
                    sum += *v;
                }
                let inv = T::one() / sum;
                row.iter_mut().for_each(|v| *v = *v * inv);
            }
            T::gemm(s, s, dh, a, false, vh, false, &mut oh[h * s * dh..][..s * dh], false);
        }
        let o = merge_heads(&oh, s, heads, dh);
        let attn = matmul(&o, &p[lo.wo..][..d * d], s, d, d);
        let x_mid: Vec<T> = x.iter().zip(&attn).map(|(&a, &b)| a + b).collect();

        let (n2, r2) = rmsnorm(&x_mid, &p[lo.norm2..][..d], d);
        let a = matmul(&n2, &p[lo.w1..][..d * f], s, d, f);
        let b = matmul(&n2, &p[lo.w3..][..d * f], s, d, f);
        let m: Vec<T> = a
            .iter()
            .zip(&b)
            .map(|(&a, &b)| a * sigmoid(a) * b)
            .collect();
        let ff = matmul(&m, &p[lo.w2..][..f * d], s, f, d);
        let x_out: Vec<T> = x_mid.iter().zip(&ff).map(|(&a, &b)| a + b).collect();

        if keep {
            layers.push(LayerCache {
                x_in: x,
                n1,
                r1,
                q,
                k,
                v,
                att,
                o,
                x_mid,
                n2,
                r2,
                a,
                b,
                m,
            });
        }
        x = x_out;
    }

    let (nf, rf) = rmsnorm(&x, &p[lay.final_norm..][..d], d);
    let mut logits = vec![T::zero(); cfg.n_pos * ck];
    for row in logits.chunks_mut(ck) {
        row.copy_from_slice(&p[lay.head_b..][..ck]);
    }
    T::gemm(cfg.n_pos, d, ck, &nf[d..], false, &p[lay.head_w..][..d * ck], false, &mut logits, true);
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(GrnError::numeric("forward produced non-finite logits"));
    }
    let cache = keep.then_some(Cache {
        layers,
        x_last: x,
        nf,
        rf,
    });
    Ok((logits, cache))
}

/// Logits of shape `[n_pos, c_eff, K]`.
pub fn forward<T: Scalar>(params: &PredictorParams<T>, input: &TokenMap, cond: Option<usize>) -> Result<Tensor<T>> {
    let cfg = params.config();
    let (logits, _) = run(params, input, cond, false)?;
    Tensor::new(vec![cfg.n_pos, cfg.c_eff, cfg.k], logits)
}

/// Mean cross-entropy over all `n_pos · c_eff` tokens and its gradient
/// with respect to every parameter.
pub fn loss_and_grad<T: Scalar>(
    params: &PredictorParams<T>,
    input: &TokenMap,
    cond: Option<usize>,
    targets: &[u16],
) -> Result<(f64, Vec<T>)> {
    let cfg = params.config();
    let (logits, cache) = run(params, input, cond, true)?;
    let cache = cache.expect("cache requested");
    let class = check_input(cfg, input, cond)?;
    let targets: Vec<usize> = targets.iter().map(|&t| t as usize).collect();
    let (loss, dlogits) = cross_entropy_with_grad(&logits, cfg.k, &targets, 1.0)?;

    let lay = Layout::new(cfg);
    let p = params.data();
    let (s, d, heads, dh, f) = (cfg.seq_len(), cfg.hidden, cfg.heads, cfg.head_dim(), cfg.ff_hidden);
    let ck = cfg.c_eff * cfg.k;
    let scale = T::from_real(1.0 / (dh as f64).sqrt());
    let mut g = vec![T::zero(); lay.total];

    // output head
    T::gemm(d, cfg.n_pos, ck, &cache.nf[d..], true, &dlogits, false, &mut g[lay.head_w..][..d * ck], true);
    for row in dlogits.chunks(ck) {
        for (gb, &v) in g[lay.head_b..][..ck].iter_mut().zip(row) {
            *gb += v;
        }
    }
    let mut dnf = vec![T::zero(); s * d];
    T::gemm(cfg.n_pos, ck, d, &dlogits, false, &p[lay.head_w..][..d * ck], true, &mut dnf[d..], false);
    let mut dx = vec![T::zero(); s * d];
    {
        let (gn, _) = g.split_at_mut(lay.final_norm + d);
        rmsnorm_backward(
            &cache.x_last,
            &p[lay.final_norm..][..d],
            &cache.rf,
            &dnf,
            d,
            &mut dx,
            &mut gn[lay.final_norm..],
        );
    }

    for (lo, c) in lay.layers.iter().zip(&cache.layers).rev() {
        // feed-forward: x_out = x_mid + W2(silu(a) ⊙ b)
        let mut dm = vec![T::zero(); s * f];
        T::gemm(s, d, f, &dx, false, &p[lo.w2..][..f * d], true, &mut dm, false);
        T::gemm(f, s, d, &c.m, true, &dx, false, &mut g[lo.w2..][..f * d], true);
        let mut da = vec![T::zero(); s * f];
        let mut db = vec![T::zero(); s * f];
        for i in 0..s * f {
            let a = c.a[i];
            let sg = sigmoid(a);
            let silu = a * sg;
            db[i] = dm[i] * silu;
            da[i] = dm[i] * c.b[i] * sg * (T::one() + a * (T::one() - sg));
        }
        T::gemm(d, s, f, &c.n2, true, &da, false, &mut g[lo.w1..][..d * f], true);
        T::gemm(d, s, f, &c.n2, true, &db, false, &mut g[lo.w3..][..d * f], true);
        let mut dn2 = vec![T::zero(); s * d];
        T::gemm(s, f, d, &da, false, &p[lo.w1..][..d * f], true, &mut dn2, false);
        T::gemm(s, f, d, &db, false, &p[lo.w3..][..d * f], true, &mut dn2, true);
        let mut dx_mid = dx.clone();
        {
            let gn = &mut g[lo.norm2..][..d];
            rmsnorm_backward(&c.x_mid, &p[lo.norm2..][..d], &c.r2, &dn2, d, &mut dx_mid, gn);
        }

        // attention: x_mid = x_in + Wo(concat_h softmax(q kᵀ)·v)
        let mut do_ = vec![T::zero(); s * d];
        T::gemm(s, d, d, &dx_mid, false, &p[lo.wo..][..d * d], true, &mut do_, false);
        T::gemm(d, s, d, &c.o, true, &dx_mid, false, &mut g[lo.wo..][..d * d], true);
        let doh = split_heads(&do_, s, heads, dh);
        let mut dq = vec![T::zero(); s * d];
        let mut dk = vec![T::zero(); s * d];
        let mut dv = vec![T::zero(); s * d];
        let mut da_att = vec![T::zero(); s * s];
        for h in 0..heads {
            let off = h * s * dh;
            let att = &c.att[h * s * s..][..s * s];
            let dout = &doh[off..][..s * dh];
            T::gemm(s, dh, s, dout, false, &c.v[off..][..s * dh], true, &mut da_att, false);
            T::gemm(s, s, dh, att, true, dout, false, &mut dv[off..][..s * dh], false);
            for (arow, drow) in att.chunks(s).zip(da_att.chunks_mut(s)) {
                let dot = arow.iter().zip(drow.iter()).map(|(&a, &g)| a * g).sum::<T>();
                for (g, &a) in drow.iter_mut().zip(arow) {
                    *g = a * (*g - dot) * scale;
                }
            }
            T::gemm(s, s, dh, &da_att, false, &c.k[off..][..s * dh], false, &mut dq[off..][..s * dh], false);
            T::gemm(s, s, dh, &da_att, true, &c.q[off..][..s * dh], false, &mut dk[off..][..s * dh], false);
        }
        let dq = merge_heads(&dq, s, heads, dh);
        let dk = merge_heads(&dk, s, heads, dh);
        let dv = merge_heads(&dv, s, heads, dh);
        let mut dn1 = vec![T::zero(); s * d];
        for (w, dproj) in [(lo.wq, &dq), (lo.wk, &dk), (lo.wv, &dv)] {
            T::gemm(d, s, d, &c.n1, true, dproj, false, &mut g[w..][..d * d], true);
            T::gemm(s, d, d, dproj, false, &p[w..][..d * d], true, &mut dn1, true);
        }
        let mut dx_in = dx_mid.clone();
        {
            let gn = &mut g[lo.norm1..][..d];
            rmsnorm_backward(&c.x_in, &p[lo.norm1..][..d], &c.r1, &dn1, d, &mut dx_in, gn);
        }
        dx = dx_in;
    }

    // embeddings
    for (gv, &v) in g[lay.cls_emb + class * d..][..d].iter_mut().zip(&dx[..d]) {
        *gv += v;
    }
    for pos in 0..cfg.n_pos {
        let drow = &dx[(pos + 1) * d..][..d];
        for (gv, &v) in g[lay.pos_emb + pos * d..][..d].iter_mut().zip(drow) {
            *gv += v;
        }
        for ch in 0..cfg.c_eff {
            let tok = input.values()[pos * cfg.c_eff + ch] as usize;
            for (gv, &v) in g[lay.tok_emb + (ch * cfg.k + tok) * d..][..d].iter_mut().zip(drow) {
                *gv += v;
            }
        }
    }
    Ok((loss, g))
}

/// Batch-mean loss and gradient. Examples run in parallel; per-example
/// gradients are summed in input order in 64-bit.
pub fn batch_loss_and_grad<T: Scalar>(params: &PredictorParams<T>, batch: &[Example]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(GrnError::param("empty batch"));
    }
    let results: Vec<Result<(f64, Vec<T>)>> = batch
        .par_iter()
        .map(|ex| loss_and_grad(params, &ex.input, ex.cond, &ex.targets))
        .collect();
    let mut total = vec![0.0f64; params.data().len()];
    let mut loss = 0.0;
    for r in results {
        let (l, g) = r?;
        loss += l;
        for (t, v) in total.iter_mut().zip(&g) {
            *t += v.real();
        }
    }
    let inv = 1.0 / batch.len() as f64;
    total.iter_mut().for_each(|v| *v *= inv);
    Ok((loss * inv, total))
}
