use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::params::*;
use super::{lit, Params, Scalar};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

struct Ln<T> {
    xhat: Array2<T>,
    rstd: Array1<T>,
}

fn layer_norm<T: Scalar>(x: &Array2<T>, g: ArrayView1<T>, b: ArrayView1<T>) -> (Array2<T>, Ln<T>) {
    let mean = x.mean_axis(Axis(1)).expect("non-empty rows");
    let xc = x - &mean.insert_axis(Axis(1));
    let var = xc.mapv(|v| v * v).mean_axis(Axis(1)).expect("non-empty rows");
    let eps = lit::<T>(LN_EPS);
    let rstd = var.mapv(|v| T::one() / (v + eps).sqrt());
    let xhat = xc * &rstd.view().insert_axis(Axis(1));
    let y = &xhat * &g + &b;
    (y, Ln { xhat, rstd })
}

fn layer_norm_back<T: Scalar>(
    dy: &Array2<T>,
    ln: &Ln<T>,
    p: &Params<T>,
    gi: usize,
    bi: usize,
    grads: &mut [T],
) -> Array2<T> {
    acc_bias(grads, &p.tensors[bi], dy);
    {
        let mut dg = view1_mut(&p.tensors[gi], grads);
        dg += &(dy * &ln.xhat).sum_axis(Axis(0));
    }
    let dxhat = dy * &p.v(gi);
    let m1 = dxhat.mean_axis(Axis(1)).expect("non-empty rows");
    let m2 = (&dxhat * &ln.xhat).mean_axis(Axis(1)).expect("non-empty rows");
    let mut dx = dxhat - &m1.insert_axis(Axis(1)) - &ln.xhat * &m2.insert_axis(Axis(1));
    dx *= &ln.rstd.view().insert_axis(Axis(1));
    dx
}

fn linear<T: Scalar>(x: &Array2<T>, w: ArrayView2<T>, b: ArrayView1<T>) -> Array2<T> {
    let mut y = x.dot(&w);
    y += &b;
    y
}

fn acc_weight<T: Scalar>(grads: &mut [T], info: &TensorInfo, x: &Array2<T>, dy: &Array2<T>) {
    let mut g = view2_mut(info, grads);
    general_mat_mul(T::one(), &x.t(), dy, T::one(), &mut g);
}

fn acc_bias<T: Scalar>(grads: &mut [T], info: &TensorInfo, dy: &Array2<T>) {
    let mut g = view1_mut(info, grads);
    g += &dy.sum_axis(Axis(0));
}

fn gelu<T: Scalar>(x: T) -> T {
    let half = lit::<T>(0.5);
    let t = (lit::<T>(GELU_C) * (x + lit::<T>(GELU_A) * x * x * x)).tanh();
    half * x * (T::one() + t)
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = lit::<T>(0.5);
    let c = lit::<T>(GELU_C);
    let a = lit::<T>(GELU_A);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + lit::<T>(3.0) * a * x * x)
}

/// Row-wise softmax over unmasked keys; rows without any key become zero.
fn softmax_rows<T: Scalar>(scores: &mut Array2<T>, keys: Option<&[bool]>) {
    for mut row in scores.rows_mut() {
        let mut max = T::neg_infinity();
        for (j, &v) in row.iter().enumerate() {
            if keys.is_none_or(|k| k[j]) && v > max {
                max = v;
            }
        }
        if max == T::neg_infinity() {
            row.fill(T::zero());
            continue;
        }
        let mut sum = T::zero();
        for (j, v) in row.iter_mut().enumerate() {
            if keys.is_none_or(|k| k[j]) {
                *v = (*v - max).exp();
                sum += *v;
            } else {
                *v = T::zero();
            }
        }
        row /= sum;
    }
}

fn dropout_mask<T: Scalar>(shape: (usize, usize), p: f64, rng: &mut ChaCha8Rng) -> Array2<T> {
    let keep = lit::<T>(1.0 / (1.0 - p));
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < p { T::zero() } else { keep })
}

struct LayerCache<T> {
    ln1: Ln<T>,
    a: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    probs: Vec<Array2<T>>,
    ctx: Array2<T>,
    drop_attn: Option<Array2<T>>,
    ln2: Ln<T>,
    b: Array2<T>,
    hpre: Array2<T>,
    hact: Array2<T>,
    drop_ffn: Option<Array2<T>>,
}

struct Cache<T> {
    drop_emb: Option<Array2<T>>,
    layers: Vec<LayerCache<T>>,
    lnf: Ln<T>,
    z: Array2<T>,
}

/// Logits for one sequence. Keys marked false are never attended to.
/// Dropout is active only when `rng` is given.
fn forward_seq<T: Scalar>(
    p: &Params<T>,
    ids: &[u32],
    keys: Option<&[bool]>,
    mut rng: Option<&mut ChaCha8Rng>,
) -> (Array2<T>, Cache<T>) {
    let cfg = &p.config;
    let (n, d) = (ids.len(), cfg.d_model);
    let tok = p.m(TOK);
    let pos = p.m(POS);
    let mut x = Array2::zeros((n, d));
    for (i, &id) in ids.iter().enumerate() {
        let mut row = x.row_mut(i);
        row.assign(&tok.row(id as usize));
        row += &pos.row(i);
    }
    let dropout = if cfg.dropout > 0.0 { rng.as_deref_mut() } else { None };
    let drop_emb = dropout.map(|r| dropout_mask(x.dim(), cfg.dropout, r));
    if let Some(m) = &drop_emb {
        x *= m;
    }
    let dh = cfg.head_dim();
    let scale = lit::<T>(1.0 / (dh as f64).sqrt());
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let li = |k| p.layer(l, k);
        let (a, ln1) = layer_norm(&x, p.v(li(LN1_G)), p.v(li(LN1_B)));
        let q = linear(&a, p.m(li(WQ)), p.v(li(BQ)));
        let k = linear(&a, p.m(li(WK)), p.v(li(BK)));
        let v = linear(&a, p.m(li(WV)), p.v(li(BV)));
        let mut ctx = Array2::zeros((n, d));
        let mut probs = Vec::with_capacity(cfg.n_heads);
        for h in 0..cfg.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut sc = q.slice(cols).dot(&k.slice(cols).t());
            sc *= scale;
            softmax_rows(&mut sc, keys);
            ctx.slice_mut(cols).assign(&sc.dot(&v.slice(cols)));
            probs.push(sc);
        }
        let mut o = linear(&ctx, p.m(li(WO)), p.v(li(BO)));
        let dropout = if cfg.dropout > 0.0 { rng.as_deref_mut() } else { None };
        let drop_attn = dropout.map(|r| dropout_mask(o.dim(), cfg.dropout, r));
        if let Some(m) = &drop_attn {
            o *= m;
        }
        x += &o;
        let (b, ln2) = layer_norm(&x, p.v(li(LN2_G)), p.v(li(LN2_B)));
        let hpre = linear(&b, p.m(li(W1)), p.v(li(B1)));
        let hact = hpre.mapv(gelu);
        let mut f = linear(&hact, p.m(li(W2)), p.v(li(B2)));
        let dropout = if cfg.dropout > 0.0 { rng.as_deref_mut() } else { None };
        let drop_ffn = dropout.map(|r| dropout_mask(f.dim(), cfg.dropout, r));
        if let Some(m) = &drop_ffn {
            f *= m;
        }
        x += &f;
        layers.push(LayerCache {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            ctx,
            drop_attn,
            ln2,
            b,
            hpre,
            hact,
            drop_ffn,
        });
    }
    let (z, lnf) = layer_norm(&x, p.v(p.head(LNF_G)), p.v(p.head(LNF_B)));
    let logits = linear(&z, p.m(p.head(WC)), p.v(p.head(BC)));
    (
        logits,
        Cache {
            drop_emb,
            layers,
            lnf,
            z,
        },
    )
}

fn backward_seq<T: Scalar>(
    p: &Params<T>,
    ids: &[u32],
    cache: &Cache<T>,
    dlogits: &Array2<T>,
    grads: &mut [T],
) {
    let cfg = &p.config;
    let t = &p.tensors;
    acc_weight(grads, &t[p.head(WC)], &cache.z, dlogits);
    acc_bias(grads, &t[p.head(BC)], dlogits);
    let dz = dlogits.dot(&p.m(p.head(WC)).t());
    let mut dx = layer_norm_back(&dz, &cache.lnf, p, p.head(LNF_G), p.head(LNF_B), grads);
    let dh = cfg.head_dim();
    let scale = lit::<T>(1.0 / (dh as f64).sqrt());
    for l in (0..cfg.n_layers).rev() {
        let li = |k| p.layer(l, k);
        let c = &cache.layers[l];
        // Feed-forward block.
        let df = match &c.drop_ffn {
            Some(m) => &dx * m,
            None => dx.clone(),
        };
        acc_weight(grads, &t[li(W2)], &c.hact, &df);
        acc_bias(grads, &t[li(B2)], &df);
        let mut dh_pre = df.dot(&p.m(li(W2)).t());
        Zip::from(&mut dh_pre).and(&c.hpre).for_each(|g, &x| *g *= gelu_grad(x));
        acc_weight(grads, &t[li(W1)], &c.b, &dh_pre);
        acc_bias(grads, &t[li(B1)], &dh_pre);
        let db = dh_pre.dot(&p.m(li(W1)).t());
        dx += &layer_norm_back(&db, &c.ln2, p, li(LN2_G), li(LN2_B), grads);
        // Attention block.
        let d_o = match &c.drop_attn {
            Some(m) => &dx * m,
            None => dx.clone(),
        };
        acc_weight(grads, &t[li(WO)], &c.ctx, &d_o);
        acc_bias(grads, &t[li(BO)], &d_o);
        let dctx = d_o.dot(&p.m(li(WO)).t());
        let n = ids.len();
        let mut dq = Array2::zeros((n, cfg.d_model));
        let mut dk = Array2::zeros((n, cfg.d_model));
        let mut dv = Array2::zeros((n, cfg.d_model));
        for h in 0..cfg.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let pr = &c.probs[h];
            let dctx_h = dctx.slice(cols);
            dv.slice_mut(cols).assign(&pr.t().dot(&dctx_h));
            let dp = dctx_h.dot(&c.v.slice(cols).t());
            let mut ds = pr * &dp;
            let row_sums = ds.sum_axis(Axis(1)).insert_axis(Axis(1));
            ds = pr * &(dp - &row_sums);
            ds *= scale;
            dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
        }
        acc_weight(grads, &t[li(WQ)], &c.a, &dq);
        acc_bias(grads, &t[li(BQ)], &dq);
        acc_weight(grads, &t[li(WK)], &c.a, &dk);
        acc_bias(grads, &t[li(BK)], &dk);
        acc_weight(grads, &t[li(WV)], &c.a, &dv);
        acc_bias(grads, &t[li(BV)], &dv);
        let mut da = dq.dot(&p.m(li(WQ)).t());
        general_mat_mul(T::one(), &dk, &p.m(li(WK)).t(), T::one(), &mut da);
        general_mat_mul(T::one(), &dv, &p.m(li(WV)).t(), T::one(), &mut da);
        dx += &layer_norm_back(&da, &c.ln1, p, li(LN1_G), li(LN1_B), grads);
    }
    if let Some(m) = &cache.drop_emb {
        dx *= m;
    }
    let d = cfg.d_model;
    let (tok_off, pos_off) = (t[TOK].offset, t[POS].offset);
    for (i, &id) in ids.iter().enumerate() {
        let row = dx.row(i);
        let tr = tok_off + id as usize * d;
        let pr = pos_off + i * d;
        for (j, &g) in row.iter().enumerate() {
            grads[tr + j] += g;
            grads[pr + j] += g;
        }
    }
}

/// Summed cross-entropy over targeted positions, and the logit gradient
/// of that sum times `scale`.
fn cross_entropy<T: Scalar>(
    logits: &Array2<T>,
    targets: &[Option<u16>],
    scale: T,
) -> (T, Array2<T>) {
    let mut total = T::zero();
    let mut d = Array2::zeros(logits.dim());
    for (i, row) in logits.rows().into_iter().enumerate() {
        let Some(y) = targets[i] else { continue };
        let max = row.fold(T::neg_infinity(), |m, &v| m.max(v));
        let sum = row.fold(T::zero(), |s, &v| s + (v - max).exp());
        total += sum.ln() + max - row[y as usize];
        let mut drow = d.row_mut(i);
        for (j, &v) in row.iter().enumerate() {
            drow[j] = (v - max).exp() / sum * scale;
        }
        drow[y as usize] -= scale;
    }
    (total, d)
}

pub(crate) struct Example<'a> {
    pub ids: &'a [u32],
    pub targets: Vec<Option<u16>>,
    pub keys: Option<Vec<bool>>,
}

fn check_ids<T: Scalar>(p: &Params<T>, ids: &[u32]) -> Result<()> {
    match ids.iter().find(|&&id| id as usize >= p.config.vocab_size) {
        Some(&id) => Err(Error::TokenOutOfRange {
            id: id as usize,
            vocab_size: p.config.vocab_size,
        }),
        None => Ok(()),
    }
}

fn check_len<T: Scalar>(p: &Params<T>, n: usize) -> Result<()> {
    if n > p.config.max_seq_len {
        return Err(Error::Validation(format!(
            "sequence length {n} exceeds max_seq_len {}",
            p.config.max_seq_len
        )));
    }
    Ok(())
}

/// Mean cross-entropy over all targets of a batch and its gradient.
/// With a dropout seed, each example draws its own masks from it.
pub(crate) fn batch_loss_grad<T: Scalar>(
    p: &Params<T>,
    batch: &[Example<'_>],
    dropout_seed: Option<u64>,
) -> (T, Vec<T>) {
    let count: usize = batch
        .iter()
        .map(|e| e.targets.iter().filter(|t| t.is_some()).count())
        .sum();
    if count == 0 {
        return (T::zero(), p.zeros_like());
    }
    let scale = T::one() / lit::<T>(count as f64);
    let parts: Vec<(T, Vec<T>)> = batch
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let mut rng = dropout_seed.map(|s| {
                ChaCha8Rng::seed_from_u64(s.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64))
            });
            let (logits, cache) = forward_seq(p, e.ids, e.keys.as_deref(), rng.as_mut());
            let (l, dlogits) = cross_entropy(&logits, &e.targets, scale);
            let mut g = p.zeros_like();
            backward_seq(p, e.ids, &cache, &dlogits, &mut g);
            (l, g)
        })
        .collect();
    let mut loss = T::zero();
    let mut grads = p.zeros_like();
    for (l, g) in parts {
        loss += l;
        for (a, b) in grads.iter_mut().zip(g) {
            *a += b;
        }
    }
    (loss * scale, grads)
}

fn batch_examples<'a>(
    ids: &'a ArrayView2<'_, u32>,
    mask: &ArrayView2<'_, bool>,
    labels: Option<&ArrayView2<'_, u16>>,
) -> Result<Vec<(Vec<u32>, Vec<bool>, Vec<Option<u16>>)>> {
    if ids.dim() != mask.dim() || labels.is_some_and(|l| l.dim() != ids.dim()) {
        return Err(Error::Validation("ids, mask and labels must share one shape".into()));
    }
    Ok(ids
        .rows()
        .into_iter()
        .zip(mask.rows())
        .enumerate()
        .map(|(r, (i, m))| {
            let targets = m
                .iter()
                .enumerate()
                .map(|(c, &keep)| match labels {
                    Some(l) if keep => Some(l[[r, c]]),
                    _ => None,
                })
                .collect();
            (i.to_vec(), m.to_vec(), targets)
        })
        .collect())
}

fn validate_batch<T: Scalar>(
    p: &Params<T>,
    ids: &ArrayView2<'_, u32>,
    labels: Option<&ArrayView2<'_, u16>>,
) -> Result<()> {
    check_len(p, ids.ncols())?;
    check_ids(p, ids.as_standard_layout().as_slice().expect("standard layout"))?;
    if let Some(l) = labels {
        if let Some(&bad) = l.iter().find(|&&y| y as usize >= p.config.n_labels) {
            return Err(Error::Validation(format!("label id {bad} out of range")));
        }
    }
    Ok(())
}

/// Logits of shape (batch, seq_len, n_labels). `mask` is true on real
/// tokens; padded keys are not attended to.
pub fn forward<T: Scalar>(
    p: &Params<T>,
    ids: ArrayView2<'_, u32>,
    mask: ArrayView2<'_, bool>,
) -> Result<Array3<T>> {
    validate_batch(p, &ids, None)?;
    let rows = batch_examples(&ids, &mask, None)?;
    let (b, n) = ids.dim();
    let mut out = Array3::zeros((b, n, p.config.n_labels));
    for (r, (i, m, _)) in rows.iter().enumerate() {
        let (logits, _) = forward_seq(p, i, Some(m), None);
        out.index_axis_mut(Axis(0), r).assign(&logits);
    }
    Ok(out)
}

/// Mean cross-entropy over non-pad tokens, without dropout.
pub fn loss<T: Scalar>(
    p: &Params<T>,
    ids: ArrayView2<'_, u32>,
    mask: ArrayView2<'_, bool>,
    labels: ArrayView2<'_, u16>,
) -> Result<T> {
    loss_and_grad(p, ids, mask, labels).map(|(l, _)| l)
}

/// Loss and its gradient with respect to every weight, laid out like
/// `Params::data`.
pub fn loss_and_grad<T: Scalar>(
    p: &Params<T>,
    ids: ArrayView2<'_, u32>,
    mask: ArrayView2<'_, bool>,
    labels: ArrayView2<'_, u16>,
) -> Result<(T, Vec<T>)> {
    validate_batch(p, &ids, Some(&labels))?;
    let rows = batch_examples(&ids, &mask, Some(&labels))?;
    let batch: Vec<Example<'_>> = rows
        .iter()
        .map(|(i, m, t)| Example {
            ids: i,
            targets: t.clone(),
            keys: Some(m.clone()),
        })
        .collect();
    Ok(batch_loss_grad(p, &batch, None))
}

/// Logits for a stream of any length. Longer streams than the model's
/// window are covered by windows at half-window stride; each position
/// takes its logits from the window where it lies farthest from an inner
/// window edge, the earlier window on ties.
pub fn predict_logits<T: Scalar>(p: &Params<T>, ids: &[u32]) -> Result<Array2<T>> {
    check_ids(p, ids)?;
    let n = ids.len();
    let w = p.config.max_seq_len;
    if n <= w {
        return Ok(forward_seq(p, ids, None, None).0);
    }
    let stride = (w / 2).max(1);
    let mut starts = vec![0];
    while starts.last().unwrap() + w < n {
        starts.push((starts.last().unwrap() + stride).min(n - w));
    }
    let mut out = Array2::zeros((n, p.config.n_labels));
    let mut best = vec![None::<usize>; n];
    for s in starts {
        let (logits, _) = forward_seq(p, &ids[s..s + w], None, None);
        for i in 0..w {
            let left = if s == 0 { usize::MAX } else { i };
            let right = if s + w == n { usize::MAX } else { w - 1 - i };
            let score = left.min(right);
            if best[s + i].is_none_or(|b| score > b) {
                best[s + i] = Some(score);
                out.row_mut(s + i).assign(&logits.row(i));
            }
        }
    }
    Ok(out)
}

/// Arg-max label ids for a stream.
pub fn predict_ids<T: Scalar>(p: &Params<T>, ids: &[u32]) -> Result<Vec<u16>> {
    let logits = predict_logits(p, ids)?;
    Ok(logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best as u16
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use ndarray::Array2;

    fn tiny(dropout: f64) -> ModelConfig {
        ModelConfig {
            vocab_size: 23,
            d_model: 16,
            n_heads: 4,
            n_layers: 2,
            d_ff: 24,
            max_seq_len: 32,
            n_labels: 7,
            dropout,
        }
    }

    fn ids(b: usize, n: usize, seed: u64) -> Array2<u32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((b, n), || rng.random_range(0..23))
    }

    #[test]
    fn logits_shape() {
        let p = Params::<f32>::init(&tiny(0.1), 1).unwrap();
        let x = ids(2, 16, 0);
        let m = Array2::from_elem((2, 16), true);
        let out = forward(&p, x.view(), m.view()).unwrap();
        assert_eq!(out.dim(), (2, 16, 7));
    }

    #[test]
    fn out_of_range_id_is_an_error() {
        let p = Params::<f32>::init(&tiny(0.0), 1).unwrap();
        let mut x = ids(1, 4, 0);
        x[[0, 2]] = 23;
        let m = Array2::from_elem((1, 4), true);
        assert!(matches!(
            forward(&p, x.view(), m.view()),
            Err(Error::TokenOutOfRange { id: 23, .. })
        ));
    }

    #[test]
    fn all_padding_row_adds_no_loss() {
        let p = Params::<f64>::init(&tiny(0.0), 2).unwrap();
        let x = ids(2, 8, 3);
        let y = ids(2, 8, 4).mapv(|v| (v % 7) as u16);
        let mut m = Array2::from_elem((2, 8), true);
        let full = loss(&p, x.slice(s![0..1, ..]), m.slice(s![0..1, ..]), y.slice(s![0..1, ..])).unwrap();
        m.row_mut(1).fill(false);
        let padded = loss(&p, x.view(), m.view(), y.view()).unwrap();
        assert!((full - padded).abs() < 1e-12);
        let (_, g) = loss_and_grad(&p, x.slice(s![1..2, ..]), m.slice(s![1..2, ..]), y.slice(s![1..2, ..])).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn appending_pads_keeps_loss() {
        let p = Params::<f64>::init(&tiny(0.0), 5).unwrap();
        let x = ids(1, 10, 6);
        let y = ids(1, 10, 7).mapv(|v| (v % 7) as u16);
        let m = Array2::from_elem((1, 10), true);
        let base = loss(&p, x.view(), m.view(), y.view()).unwrap();
        let mut xp = Array2::zeros((1, 16));
        xp.slice_mut(s![.., ..10]).assign(&x);
        let mut mp = Array2::from_elem((1, 16), false);
        mp.slice_mut(s![.., ..10]).fill(true);
        let mut yp = Array2::zeros((1, 16));
        yp.slice_mut(s![.., ..10]).assign(&y);
        let padded = loss(&p, xp.view(), mp.view(), yp.view()).unwrap();
        assert!((base - padded).abs() < 1e-12, "{base} vs {padded}");
    }

    #[test]
    fn permutation_equivariance_without_positions() {
        let mut p = Params::<f64>::init(&tiny(0.0), 9).unwrap();
        let pos = &p.tensors[POS];
        let range = pos.offset..pos.offset + pos.len();
        p.data[range].fill(0.0);
        let x: Vec<u32> = vec![3, 17, 5, 5, 22, 0, 9, 11];
        let perm = [4, 2, 7, 0, 6, 1, 3, 5];
        let xp: Vec<u32> = perm.iter().map(|&i| x[i]).collect();
        let a = predict_logits(&p, &x).unwrap();
        let b = predict_logits(&p, &xp).unwrap();
        for (r, &i) in perm.iter().enumerate() {
            for c in 0..7 {
                assert!((b[[r, c]] - a[[i, c]]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn masked_keys_are_invisible() {
        // Changing a masked token must not change the other positions.
        let p = Params::<f64>::init(&tiny(0.0), 4).unwrap();
        let mut x = ids(1, 6, 8);
        let mut m = Array2::from_elem((1, 6), true);
        m[[0, 3]] = false;
        let a = forward(&p, x.view(), m.view()).unwrap();
        x[[0, 3]] = (x[[0, 3]] + 1) % 23;
        let b = forward(&p, x.view(), m.view()).unwrap();
        for i in [0, 1, 2, 4, 5] {
            for c in 0..7 {
                assert!((a[[0, i, c]] - b[[0, i, c]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn windowed_prediction_is_total_and_deterministic() {
        let p = Params::<f32>::init(&tiny(0.1), 3).unwrap();
        let x: Vec<u32> = (0..96).map(|i| (i * 7 % 23) as u32).collect();
        let a = predict_ids(&p, &x).unwrap();
        assert_eq!(a.len(), 96);
        assert_eq!(a, predict_ids(&p, &x).unwrap());
        let short = predict_ids(&p, &x[..10]).unwrap();
        assert_eq!(short.len(), 10);
        for n in [33, 47, 50, 65] {
            assert_eq!(predict_logits(&p, &x[..n]).unwrap().nrows(), n);
        }
    }

    #[test]
    fn window_stitching_uses_centered_context() {
        // Oracle: position i's logits equal those of the window where i is
        // farthest from an inner edge.
        let p = Params::<f64>::init(&tiny(0.0), 3).unwrap();
        let x: Vec<u32> = (0..70).map(|i| (i * 5 % 23) as u32).collect();
        let got = predict_logits(&p, &x).unwrap();
        // Windows of 32 at stride 16: starts 0, 16, 32, 38.
        let starts = [0usize, 16, 32, 38];
        for i in 0..70 {
            let mut best: Option<(usize, usize)> = None;
            for &s in &starts {
                if i < s || i >= s + 32 {
                    continue;
                }
                let l = if s == 0 { usize::MAX } else { i - s };
                let r = if s + 32 == 70 { usize::MAX } else { s + 31 - i };
                let sc = l.min(r);
                if best.is_none_or(|(b, _)| sc > b) {
                    best = Some((sc, s));
                }
            }
            let s = best.unwrap().1;
            let w = predict_logits(&p, &x[s..s + 32]).unwrap();
            for c in 0..7 {
                assert!((got[[i, c]] - w[[i - s, c]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dropout_changes_training_pass_only() {
        let p = Params::<f64>::init(&tiny(0.5), 1).unwrap();
        let x: Vec<u32> = vec![1, 2, 3, 4];
        let ex = || Example {
            ids: &x,
            targets: vec![Some(1); 4],
            keys: None,
        };
        let (a, _) = batch_loss_grad(&p, &[ex()], Some(1));
        let (b, _) = batch_loss_grad(&p, &[ex()], Some(2));
        let (c, _) = batch_loss_grad(&p, &[ex()], None);
        let (d, _) = batch_loss_grad(&p, &[ex()], None);
        assert_ne!(a, b);
        assert_eq!(c, d);
    }
}

#[cfg(test)]
mod gradcheck {
    use super::*;
    use crate::model::ModelConfig;

    /// Relative error per tensor between analytic and central-difference
    /// gradients; `None` when both gradients vanish.
    fn relative_errors(p: &Params<f64>, ids: &Array2<u32>, mask: &Array2<bool>, y: &Array2<u16>) -> Vec<(String, Option<f64>)> {
        let (_, g) = loss_and_grad(p, ids.view(), mask.view(), y.view()).unwrap();
        let h = 1e-5;
        let mut q = p.clone();
        p.tensors
            .iter()
            .map(|t| {
                let (mut num2, mut diff2, mut ana2) = (0.0, 0.0, 0.0);
                for i in t.offset..t.offset + t.len() {
                    let x = q.data[i];
                    q.data[i] = x + h;
                    let lp = loss(&q, ids.view(), mask.view(), y.view()).unwrap();
                    q.data[i] = x - h;
                    let lm = loss(&q, ids.view(), mask.view(), y.view()).unwrap();
                    q.data[i] = x;
                    let num = (lp - lm) / (2.0 * h);
                    num2 += num * num;
                    ana2 += g[i] * g[i];
                    diff2 += (num - g[i]).powi(2);
                }
                let (num, ana) = (num2.sqrt(), ana2.sqrt());
                let err = (num >= 1e-8 || ana >= 1e-8).then(|| diff2.sqrt() / (num + ana));
                (t.name.clone(), err)
            })
            .collect()
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let c = ModelConfig {
            vocab_size: 11,
            d_model: 16,
            n_heads: 4,
            n_layers: 2,
            d_ff: 20,
            max_seq_len: 8,
            n_labels: 5,
            dropout: 0.0,
        };
        let p = Params::<f64>::init(&c, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ids = Array2::from_shape_simple_fn((2, 6), || rng.random_range(0..11u32));
        let y = Array2::from_shape_simple_fn((2, 6), || rng.random_range(0..5u16));
        let mut mask = Array2::from_elem((2, 6), true);
        mask[[1, 5]] = false;
        for (name, err) in relative_errors(&p, &ids, &mask, &y) {
            match err {
                Some(e) => assert!(e < 1e-4, "{name}: relative error {e}"),
                // A key bias shifts every score of a query row equally.
                None => assert!(name.ends_with("attn.bk"), "{name}: vanishing gradient"),
            }
        }
    }
}
