//! Forward pass, total loss and reverse-mode gradients.
//!
//! Only the `L` unmasked positions of an utterance are run through the
//! encoder. Attention keys, pooling and losses never see padded positions,
//! and predictions at padded positions are reported as zero.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};

use crate::batch::Batch;
use crate::data::{GOP_DIM, MAX_LEN, UTT_ASPECTS, WORD_ASPECTS};
use crate::{Error, Result, Scalar};

use super::params::{EncoderLayer, ModelParams, D_MODEL, HEAD_IN};

const LN_EPS: f64 = 1e-5;

/// Predictions in padded layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions<T> {
    /// b×50
    pub phone: Array2<T>,
    /// b×50×3
    pub word: Array3<T>,
    /// b×5
    pub utt: Array2<T>,
}

impl<T: Scalar> Predictions<T> {
    pub fn zeros(b: usize) -> Self {
        Predictions {
            phone: Array2::zeros((b, MAX_LEN)),
            word: Array3::zeros((b, MAX_LEN, WORD_ASPECTS)),
            utt: Array2::zeros((b, UTT_ASPECTS)),
        }
    }
}

/// Per-level terms of the total loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T> {
    pub total: T,
    pub phone: T,
    /// Mean over the 3 word aspects.
    pub word: T,
    /// Mean over the 5 utterance aspects.
    pub utt: T,
    pub word_aspects: [T; WORD_ASPECTS],
    pub utt_aspects: [T; UTT_ASPECTS],
}

struct LnCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
}

fn layer_norm<T: Scalar>(
    x: &Array2<T>,
    gain: &Array2<T>,
    bias: &Array2<T>,
) -> (Array2<T>, LnCache<T>) {
    let d = T::of(x.ncols() as f64);
    let eps = T::of(LN_EPS);
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mu = row.sum() / d;
        row.mapv_inplace(|v| v - mu);
        let var = row.iter().map(|&v| v * v).sum::<T>() / d;
        *inv = T::one() / (var + eps).sqrt();
        let i = *inv;
        row.mapv_inplace(|v| v * i);
    }
    let y = &xhat * gain + bias;
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_backward<T: Scalar>(
    dy: &Array2<T>,
    cache: &LnCache<T>,
    gain: &Array2<T>,
    dgain: &mut Array2<T>,
    dbias: &mut Array2<T>,
) -> Array2<T> {
    let d = T::of(dy.ncols() as f64);
    *dgain += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    *dbias += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dy * gain;
    let mut dx = Array2::zeros(dy.dim());
    for r in 0..dy.nrows() {
        let g = dxhat.row(r);
        let xh = cache.xhat.row(r);
        let mean_g = g.sum() / d;
        let mean_gx = g.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<T>() / d;
        let inv = cache.inv_std[r];
        for c in 0..dy.ncols() {
            dx[[r, c]] = inv * (g[c] - mean_g - xh[c] * mean_gx);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn gelu<T: Scalar>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_K) * x * x * x);
    T::of(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_K) * x * x * x);
    let t = u.tanh();
    let du = T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_K) * x * x);
    T::of(0.5) * (T::one() + t) + T::of(0.5) * x * (T::one() - t * t) * du
}

struct LayerCache<T> {
    h_in: Array2<T>,
    ln1: LnCache<T>,
    a: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    probs: Array2<T>,
    ctx: Array2<T>,
    ln2: LnCache<T>,
    b: Array2<T>,
    z: Array2<T>,
    g: Array2<T>,
}

/// Everything the backward pass needs for one utterance.
struct UttCache<T> {
    len: usize,
    x: Array2<T>,
    ids: Vec<usize>,
    layers: Vec<LayerCache<T>>,
    final_ln: LnCache<T>,
    head_in: Array2<T>,
    pooled_in: Array2<T>,
}

struct UttOutput<T> {
    phone: Array1<T>,
    word: Array2<T>,
    utt: Array1<T>,
}

fn attention_scale<T: Scalar>() -> T {
    T::one() / T::of(D_MODEL as f64).sqrt()
}

fn softmax_rows<T: Scalar>(s: &mut Array2<T>) {
    for mut row in s.rows_mut() {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn encoder_forward<T: Scalar>(layer: &EncoderLayer<T>, h: Array2<T>) -> (Array2<T>, LayerCache<T>) {
    let (a, ln1) = layer_norm(&h, &layer.ln1_gain, &layer.ln1_bias);
    let q = a.dot(&layer.wq) + &layer.bq;
    let k = a.dot(&layer.wk) + &layer.bk;
    let v = a.dot(&layer.wv) + &layer.bv;
    let mut probs = q.dot(&k.t()) * attention_scale::<T>();
    softmax_rows(&mut probs);
    let ctx = probs.dot(&v);
    let h_mid = &h + &(ctx.dot(&layer.wo) + &layer.bo);
    let (b, ln2) = layer_norm(&h_mid, &layer.ln2_gain, &layer.ln2_bias);
    let z = b.dot(&layer.w1) + &layer.b1;
    let g = z.mapv(gelu);
    let out = &h_mid + &(g.dot(&layer.w2) + &layer.b2);
    (
        out,
        LayerCache {
            h_in: h,
            ln1,
            a,
            q,
            k,
            v,
            probs,
            ctx,
            ln2,
            b,
            z,
            g,
        },
    )
}

fn forward_utt<T: Scalar>(
    params: &ModelParams<T>,
    x: ArrayView2<'_, T>,
    ids: &[u8],
    er: [T; 2],
) -> (UttOutput<T>, UttCache<T>) {
    let len = ids.len();
    let x = x.to_owned();
    let ids: Vec<usize> = ids.iter().map(|&p| p as usize).collect();
    let mut h = x.dot(&params.proj_w) + &params.proj_b;
    for (j, &id) in ids.iter().enumerate() {
        let mut row = h.row_mut(j);
        row += &params.phone_emb.row(id);
        row += &params.pos_emb.row(j);
    }
    let mut layers = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (next, cache) = encoder_forward(layer, h);
        layers.push(cache);
        h = next;
    }
    let (rep, final_ln) = layer_norm(&h, &params.final_gain, &params.final_bias);

    let mut head_in = Array2::zeros((len, HEAD_IN));
    head_in.slice_mut(s![.., ..D_MODEL]).assign(&rep);
    head_in.column_mut(D_MODEL).fill(er[0]);
    head_in.column_mut(D_MODEL + 1).fill(er[1]);
    let mut pooled_in = Array2::zeros((1, HEAD_IN));
    pooled_in
        .slice_mut(s![0, ..D_MODEL])
        .assign(&rep.mean_axis(Axis(0)).expect("non-empty utterance"));
    pooled_in[[0, D_MODEL]] = er[0];
    pooled_in[[0, D_MODEL + 1]] = er[1];

    let phone = (head_in.dot(&params.phone_head_w) + &params.phone_head_b)
        .column(0)
        .to_owned();
    let word = head_in.dot(&params.word_head_w) + &params.word_head_b;
    let utt = (pooled_in.dot(&params.utt_head_w) + &params.utt_head_b)
        .row(0)
        .to_owned();
    (
        UttOutput { phone, word, utt },
        UttCache {
            len,
            x,
            ids,
            layers,
            final_ln,
            head_in,
            pooled_in,
        },
    )
}

fn check_batch<T: Scalar>(batch: &Batch<T>) -> Result<()> {
    let b = batch.size();
    let shapes_ok = batch.gop.dim() == (b, MAX_LEN, GOP_DIM)
        && batch.phone_ids.dim() == (b, MAX_LEN)
        && batch.mask.dim() == (b, MAX_LEN)
        && batch.phone_labels.dim() == (b, MAX_LEN)
        && batch.word_labels.dim() == (b, MAX_LEN, WORD_ASPECTS)
        && batch.utt_labels.dim() == (b, UTT_ASPECTS)
        && batch.er.dim() == (b, 2)
        && batch.lengths.len() == b;
    if !shapes_ok {
        return Err(Error::Shape(format!(
            "inconsistent batch tensors for b = {b}"
        )));
    }
    if let Some(&len) = batch.lengths.iter().find(|&&l| l == 0 || l > MAX_LEN) {
        return Err(Error::Shape(format!(
            "utterance length {len} outside 1..={MAX_LEN}"
        )));
    }
    Ok(())
}

fn run_batch<T: Scalar>(
    params: &ModelParams<T>,
    batch: &Batch<T>,
    keep_cache: bool,
) -> Result<(Predictions<T>, Vec<UttCache<T>>)> {
    check_batch(batch)?;
    let mut pred = Predictions::zeros(batch.size());
    let mut caches = Vec::new();
    for i in 0..batch.size() {
        let len = batch.lengths[i];
        let x = batch.gop.slice(s![i, ..len, ..]);
        let ids = batch.phone_ids.slice(s![i, ..len]).to_vec();
        let (out, cache) = forward_utt(params, x, &ids, [batch.er[[i, 0]], batch.er[[i, 1]]]);
        pred.phone.slice_mut(s![i, ..len]).assign(&out.phone);
        pred.word.slice_mut(s![i, ..len, ..]).assign(&out.word);
        pred.utt.row_mut(i).assign(&out.utt);
        if keep_cache {
            caches.push(cache);
        }
    }
    Ok((pred, caches))
}

/// Scores every utterance of the batch.
pub fn forward<T: Scalar>(params: &ModelParams<T>, batch: &Batch<T>) -> Result<Predictions<T>> {
    Ok(run_batch(params, batch, false)?.0)
}

/// Sum over levels of the aspect-averaged MSE: phone MSE over unmasked
/// positions, plus the mean of the 3 word-aspect MSEs over unmasked
/// positions, plus the mean of the 5 utterance-aspect MSEs.
pub fn total_loss<T: Scalar>(pred: &Predictions<T>, batch: &Batch<T>) -> Result<LossBreakdown<T>> {
    let b = batch.size();
    if pred.phone.dim() != (b, MAX_LEN)
        || pred.word.dim() != (b, MAX_LEN, WORD_ASPECTS)
        || pred.utt.dim() != (b, UTT_ASPECTS)
    {
        return Err(Error::Shape("predictions do not match batch".into()));
    }
    let positions = batch.valid_positions();
    if positions == 0 {
        return Err(Error::EmptyBatch);
    }
    let n = T::of(positions as f64);
    let mut phone = T::zero();
    let mut word = [T::zero(); WORD_ASPECTS];
    for (i, &len) in batch.lengths.iter().enumerate() {
        for j in 0..len {
            let e = pred.phone[[i, j]] - batch.phone_labels[[i, j]];
            phone += e * e;
            for (k, acc) in word.iter_mut().enumerate() {
                let e = pred.word[[i, j, k]] - batch.word_labels[[i, j, k]];
                *acc += e * e;
            }
        }
    }
    let mut utt = [T::zero(); UTT_ASPECTS];
    for i in 0..b {
        for (k, acc) in utt.iter_mut().enumerate() {
            let e = pred.utt[[i, k]] - batch.utt_labels[[i, k]];
            *acc += e * e;
        }
    }
    let phone = phone / n;
    let word_aspects = word.map(|v| v / n);
    let utt_aspects = utt.map(|v| v / T::of(b as f64));
    let word = word_aspects.iter().copied().sum::<T>() / T::of(WORD_ASPECTS as f64);
    let utt = utt_aspects.iter().copied().sum::<T>() / T::of(UTT_ASPECTS as f64);
    Ok(LossBreakdown {
        total: phone + word + utt,
        phone,
        word,
        utt,
        word_aspects,
        utt_aspects,
    })
}

fn encoder_backward<T: Scalar>(
    layer: &EncoderLayer<T>,
    grad: &mut EncoderLayer<T>,
    cache: &LayerCache<T>,
    dout: Array2<T>,
) -> Array2<T> {
    // Feed-forward branch.
    grad.w2 += &cache.g.t().dot(&dout);
    grad.b2 += &dout.sum_axis(Axis(0)).insert_axis(Axis(0));
    let mut dz = dout.dot(&layer.w2.t());
    ndarray::Zip::from(&mut dz)
        .and(&cache.z)
        .for_each(|d, &z| *d *= gelu_grad(z));
    grad.w1 += &cache.b.t().dot(&dz);
    grad.b1 += &dz.sum_axis(Axis(0)).insert_axis(Axis(0));
    let db = dz.dot(&layer.w1.t());
    let dh_mid = dout
        + layer_norm_backward(
            &db,
            &cache.ln2,
            &layer.ln2_gain,
            &mut grad.ln2_gain,
            &mut grad.ln2_bias,
        );

    // Attention branch.
    grad.wo += &cache.ctx.t().dot(&dh_mid);
    grad.bo += &dh_mid.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dctx = dh_mid.dot(&layer.wo.t());
    let dprobs = dctx.dot(&cache.v.t());
    let dv = cache.probs.t().dot(&dctx);
    let mut ds = &cache.probs * &dprobs;
    for (mut row, p) in ds.rows_mut().into_iter().zip(cache.probs.rows()) {
        let dot = row.sum();
        ndarray::Zip::from(&mut row)
            .and(&p)
            .for_each(|d, &p| *d -= p * dot);
    }
    ds.mapv_inplace(|v| v * attention_scale::<T>());
    let dq = ds.dot(&cache.k);
    let dk = ds.t().dot(&cache.q);
    grad.wq += &cache.a.t().dot(&dq);
    grad.bq += &dq.sum_axis(Axis(0)).insert_axis(Axis(0));
    grad.wk += &cache.a.t().dot(&dk);
    grad.bk += &dk.sum_axis(Axis(0)).insert_axis(Axis(0));
    grad.wv += &cache.a.t().dot(&dv);
    grad.bv += &dv.sum_axis(Axis(0)).insert_axis(Axis(0));
    let da = dq.dot(&layer.wq.t()) + dk.dot(&layer.wk.t()) + dv.dot(&layer.wv.t());
    debug_assert_eq!(cache.h_in.dim(), da.dim());
    &dh_mid
        + &layer_norm_backward(
            &da,
            &cache.ln1,
            &layer.ln1_gain,
            &mut grad.ln1_gain,
            &mut grad.ln1_bias,
        )
}

fn backward_utt<T: Scalar>(
    params: &ModelParams<T>,
    grad: &mut ModelParams<T>,
    cache: &UttCache<T>,
    dphone: Array1<T>,
    dword: Array2<T>,
    dutt: Array1<T>,
) {
    let dphone = dphone.insert_axis(Axis(1));
    let dutt = dutt.insert_axis(Axis(0));
    grad.phone_head_w += &cache.head_in.t().dot(&dphone);
    grad.phone_head_b += &dphone.sum_axis(Axis(0)).insert_axis(Axis(0));
    grad.word_head_w += &cache.head_in.t().dot(&dword);
    grad.word_head_b += &dword.sum_axis(Axis(0)).insert_axis(Axis(0));
    grad.utt_head_w += &cache.pooled_in.t().dot(&dutt);
    grad.utt_head_b += &dutt;

    let dhead = dphone.dot(&params.phone_head_w.t()) + dword.dot(&params.word_head_w.t());
    let dpooled = dutt.dot(&params.utt_head_w.t());
    let mut drep = dhead.slice(s![.., ..D_MODEL]).to_owned();
    let share = dpooled
        .slice(s![0, ..D_MODEL])
        .mapv(|v| v / T::of(cache.len as f64));
    for mut row in drep.rows_mut() {
        row += &share;
    }
    let mut dh = layer_norm_backward(
        &drep,
        &cache.final_ln,
        &params.final_gain,
        &mut grad.final_gain,
        &mut grad.final_bias,
    );
    for ((layer, g), c) in params
        .layers
        .iter()
        .zip(grad.layers.iter_mut())
        .zip(&cache.layers)
        .rev()
    {
        dh = encoder_backward(layer, g, c, dh);
    }
    grad.proj_w += &cache.x.t().dot(&dh);
    grad.proj_b += &dh.sum_axis(Axis(0)).insert_axis(Axis(0));
    for (j, &id) in cache.ids.iter().enumerate() {
        let mut e = grad.phone_emb.row_mut(id);
        e += &dh.row(j);
        let mut p = grad.pos_emb.row_mut(j);
        p += &dh.row(j);
    }
}

/// Loss and exact gradients of [`total_loss`] with respect to every parameter.
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    batch: &Batch<T>,
) -> Result<(LossBreakdown<T>, ModelParams<T>)> {
    let (pred, caches) = run_batch(params, batch, true)?;
    let loss = total_loss(&pred, batch)?;
    let two = T::of(2.0);
    let n = T::of(batch.valid_positions() as f64);
    let word_scale = two / (n * T::of(WORD_ASPECTS as f64));
    let utt_scale = two / (T::of(batch.size() as f64) * T::of(UTT_ASPECTS as f64));
    let mut grad = params.zeros_like();
    for (i, cache) in caches.iter().enumerate() {
        let len = cache.len;
        let dphone = Array1::from_shape_fn(len, |j| {
            two * (pred.phone[[i, j]] - batch.phone_labels[[i, j]]) / n
        });
        let dword = Array2::from_shape_fn((len, WORD_ASPECTS), |(j, k)| {
            word_scale * (pred.word[[i, j, k]] - batch.word_labels[[i, j, k]])
        });
        let dutt = Array1::from_shape_fn(UTT_ASPECTS, |k| {
            utt_scale * (pred.utt[[i, k]] - batch.utt_labels[[i, k]])
        });
        backward_utt(params, &mut grad, cache, dphone, dword, dutt);
    }
    Ok((loss, grad))
}
