//! Image tower forward and reverse passes.
//!
//! Activations are kept in flat `[batch, channels, height, width]` buffers.
//! The reverse pass can seed gradients both at the output embeddings and at
//! the pre-BatchNorm features of any block, which is what the feature
//! statistics alignment needs.

use std::collections::BTreeMap;

use super::params::ParameterSet;
use super::spec::*;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics (pre-training only).
    Train,
    /// Normalize with the stored running statistics.
    Eval,
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    input: Vec<T>,
    in_ch: usize,
    in_hw: usize,
    out_hw: usize,
    pre_bn: Vec<T>,
    bn: Option<BnCache<T>>,
    act: Vec<T>,
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

/// Per-channel statistics of the features entering a BatchNorm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats<T> {
    pub block: usize,
    pub mean: Vec<T>,
    /// Biased (population) variance over batch and spatial positions.
    pub var: Vec<T>,
    /// Number of values averaged per channel.
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct TowerCache<T> {
    batch: usize,
    mode: BnMode,
    blocks: Vec<BlockCache<T>>,
    pooled: Vec<T>,
    norms: Vec<T>,
    emb: Vec<T>,
}

impl<T: Scalar> TowerCache<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Globally pooled features entering the projection, `[batch × width]`.
    pub fn pooled(&self) -> &[T] {
        &self.pooled
    }

    /// Convolution output of `block`, before BatchNorm.
    pub fn pre_bn(&self, block: usize) -> Vec<T> {
        self.blocks[block].pre_bn.clone()
    }

    /// Unit-norm output embeddings, `[batch × embed_dim]`.
    pub fn embeddings(&self) -> &[T] {
        &self.emb
    }
}

#[derive(Debug, Clone)]
pub struct TowerOutput<T> {
    /// `[batch, embed_dim]`, unit-norm rows.
    pub embeddings: Tensor<T>,
    pub cache: TowerCache<T>,
    /// Statistics of pre-BatchNorm features for each BN block, tower order.
    pub feature_stats: Vec<FeatureStats<T>>,
}

#[derive(Debug, Clone)]
pub struct TowerGrads<T> {
    /// Gradients for trainable image-tower entries (empty when not requested).
    pub params: BTreeMap<String, Tensor<T>>,
    /// Gradient with respect to the input images.
    pub input: Option<Tensor<T>>,
}

/// Gradient seeds for [`backward`].
#[derive(Debug, Clone, Default)]
pub struct Seeds<'a, T> {
    /// `[batch × embed_dim]` gradient at the unit-norm embeddings.
    pub embeddings: Option<&'a [T]>,
    /// Per block: gradient at the pre-BatchNorm features.
    pub pre_bn: Vec<Option<Vec<T>>>,
}

pub fn check_images<T: Scalar>(spec: &ModelSpec, images: &Tensor<T>) -> Result<usize> {
    let [c, h, w] = spec.input_shape();
    let shape = images.shape();
    if shape.len() != 4 || shape[1] != c || shape[2] != h || shape[3] != w {
        return Err(Error::Shape {
            expected: format!("[batch, {c}, {h}, {w}]"),
            got: format!("{shape:?}"),
        });
    }
    Ok(shape[0])
}

pub fn forward<T: Scalar>(
    params: &ParameterSet<T>,
    images: &Tensor<T>,
    mode: BnMode,
) -> Result<TowerOutput<T>> {
    let spec = params.spec();
    let batch = check_images(spec, images)?;
    let eps = T::lit(BN_EPS);
    let mut x = images.data().to_vec();
    let mut in_ch = spec.in_channels;
    let mut hw = spec.image_size;
    let mut blocks = Vec::with_capacity(spec.blocks.len());
    let mut feature_stats = Vec::new();

    for (bi, blk) in spec.blocks.iter().enumerate() {
        let weight = params.tensor(&conv_weight(bi)).data();
        let bias = params.tensor(&conv_bias(bi)).data();
        let (pre_bn, out_hw) = conv_forward(
            &x, batch, in_ch, hw, weight, bias, blk.width, blk.kernel, blk.stride,
        );
        let plane = out_hw * out_hw;
        let mut y = pre_bn.clone();
        let bn = if blk.batchnorm {
            let (mean, var) = channel_stats(&pre_bn, batch, blk.width, plane);
            let count = batch * plane;
            let (center, scale_var) = match mode {
                BnMode::Train => (mean.clone(), var.clone()),
                BnMode::Eval => (
                    params.tensor(&bn_running_mean(bi)).data().to_vec(),
                    params.tensor(&bn_running_var(bi)).data().to_vec(),
                ),
            };
            feature_stats.push(FeatureStats {
                block: bi,
                mean,
                var,
                count,
            });
            let gamma = params.tensor(&bn_weight(bi)).data();
            let beta = params.tensor(&bn_bias(bi)).data();
            let inv_std: Vec<T> = scale_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            let mut xhat = vec![T::zero(); pre_bn.len()];
            for b in 0..batch {
                for c in 0..blk.width {
                    let off = (b * blk.width + c) * plane;
                    for p in off..off + plane {
                        let xh = (pre_bn[p] - center[c]) * inv_std[c];
                        xhat[p] = xh;
                        y[p] = gamma[c] * xh + beta[c];
                    }
                }
            }
            Some(BnCache { xhat, inv_std })
        } else {
            None
        };
        for v in y.iter_mut() {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
        let input = std::mem::replace(&mut x, y.clone());
        blocks.push(BlockCache {
            input,
            in_ch,
            in_hw: hw,
            out_hw,
            pre_bn,
            bn,
            act: y,
        });
        in_ch = blk.width;
        hw = out_hw;
    }

    // global average pooling
    let plane = hw * hw;
    let inv_plane = T::one() / T::lit(plane as f64);
    let mut pooled = vec![T::zero(); batch * in_ch];
    for b in 0..batch {
        for c in 0..in_ch {
            let off = (b * in_ch + c) * plane;
            pooled[b * in_ch + c] = x[off..off + plane].iter().copied().sum::<T>() * inv_plane;
        }
    }

    let e = spec.embed_dim;
    let pw = params.tensor(PROJ_WEIGHT).data();
    let pb = params.tensor(PROJ_BIAS).data();
    let mut z = vec![T::zero(); batch * e];
    for b in 0..batch {
        let h = &pooled[b * in_ch..(b + 1) * in_ch];
        for o in 0..e {
            let row = &pw[o * in_ch..(o + 1) * in_ch];
            z[b * e + o] = crate::tensor::dot(row, h) + pb[o];
        }
    }
    let (emb, norms) = normalize_rows(&z, batch, e);
    if norms.iter().any(|&n| !(n > T::zero())) {
        return Err(Error::Degenerate(
            "image projection produced a zero vector".into(),
        ));
    }
    Ok(TowerOutput {
        embeddings: Tensor::from_vec(&[batch, e], emb.clone())?,
        cache: TowerCache {
            batch,
            mode,
            blocks,
            pooled,
            norms,
            emb,
        },
        feature_stats,
    })
}

/// Reverse pass. Returns parameter gradients when `want_params` and the
/// input gradient when `want_input`.
pub fn backward<T: Scalar>(
    params: &ParameterSet<T>,
    cache: &TowerCache<T>,
    seeds: &Seeds<'_, T>,
    want_params: bool,
    want_input: bool,
) -> TowerGrads<T> {
    let spec = params.spec();
    let batch = cache.batch;
    let e = spec.embed_dim;
    let width = spec.last_width();
    let mut grads = BTreeMap::new();

    let last_tap = seeds
        .pre_bn
        .iter()
        .rposition(|s| s.is_some());
    let top = seeds.embeddings.is_some();

    // d(pooled)
    let mut d_pooled = vec![T::zero(); batch * width];
    if let Some(d_emb) = seeds.embeddings {
        let dz = normalize_rows_backward(&cache.emb, &cache.norms, d_emb, batch, e);
        let pw = params.tensor(PROJ_WEIGHT).data();
        if want_params {
            let mut dw = vec![T::zero(); e * width];
            let mut db = vec![T::zero(); e];
            for b in 0..batch {
                let h = &cache.pooled[b * width..(b + 1) * width];
                for o in 0..e {
                    let g = dz[b * e + o];
                    db[o] += g;
                    let row = &mut dw[o * width..(o + 1) * width];
                    for (r, &hv) in row.iter_mut().zip(h) {
                        *r += g * hv;
                    }
                }
            }
            grads.insert(
                PROJ_WEIGHT.to_string(),
                Tensor::from_vec(&[e, width], dw).expect("shape"),
            );
            grads.insert(PROJ_BIAS.to_string(), Tensor::from_vec(&[e], db).expect("shape"));
        }
        for b in 0..batch {
            for o in 0..e {
                let g = dz[b * e + o];
                let row = &pw[o * width..(o + 1) * width];
                for (d, &w) in d_pooled[b * width..(b + 1) * width].iter_mut().zip(row) {
                    *d += g * w;
                }
            }
        }
    } else if want_params {
        grads.insert(PROJ_WEIGHT.to_string(), Tensor::zeros(&[e, width]));
        grads.insert(PROJ_BIAS.to_string(), Tensor::zeros(&[e]));
    }

    // d(activation of last block)
    let last = cache.blocks.last().expect("at least one block");
    let plane = last.out_hw * last.out_hw;
    let inv_plane = T::one() / T::lit(plane as f64);
    let mut d_act = vec![T::zero(); batch * width * plane];
    if top {
        for bc in 0..batch * width {
            let g = d_pooled[bc] * inv_plane;
            for v in &mut d_act[bc * plane..(bc + 1) * plane] {
                *v = g;
            }
        }
    }

    let mut d_input = None;
    let n_blocks = spec.blocks.len();
    for bi in (0..n_blocks).rev() {
        let blk = &spec.blocks[bi];
        let c = &cache.blocks[bi];
        let live = top || last_tap.is_some_and(|t| t >= bi);
        if !live {
            if want_params {
                insert_zero_block_grads(&mut grads, spec, bi);
            }
            d_act = vec![T::zero(); batch * c.in_ch * c.in_hw * c.in_hw];
            if bi == 0 && want_input {
                d_input = Some(
                    Tensor::from_vec(&[batch, c.in_ch, c.in_hw, c.in_hw], d_act.clone())
                        .expect("shape"),
                );
            }
            continue;
        }
        let plane = c.out_hw * c.out_hw;
        // relu
        for (d, &a) in d_act.iter_mut().zip(&c.act) {
            if a <= T::zero() {
                *d = T::zero();
            }
        }
        let mut d_pre = if let Some(bn) = &c.bn {
            let gamma = params.tensor(&bn_weight(bi)).data();
            let mut dgamma = vec![T::zero(); blk.width];
            let mut dbeta = vec![T::zero(); blk.width];
            let mut d_pre = vec![T::zero(); d_act.len()];
            for ch in 0..blk.width {
                let mut sum_dy = T::zero();
                let mut sum_dy_xhat = T::zero();
                for b in 0..batch {
                    let off = (b * blk.width + ch) * plane;
                    for p in off..off + plane {
                        sum_dy += d_act[p];
                        sum_dy_xhat += d_act[p] * bn.xhat[p];
                    }
                }
                dgamma[ch] = sum_dy_xhat;
                dbeta[ch] = sum_dy;
                let g = gamma[ch] * bn.inv_std[ch];
                match cache.mode {
                    BnMode::Eval => {
                        for b in 0..batch {
                            let off = (b * blk.width + ch) * plane;
                            for p in off..off + plane {
                                d_pre[p] = g * d_act[p];
                            }
                        }
                    }
                    BnMode::Train => {
                        let n = T::lit((batch * plane) as f64);
                        let mean_dy = sum_dy / n;
                        let mean_dy_xhat = sum_dy_xhat / n;
                        for b in 0..batch {
                            let off = (b * blk.width + ch) * plane;
                            for p in off..off + plane {
                                d_pre[p] = g * (d_act[p] - mean_dy - bn.xhat[p] * mean_dy_xhat);
                            }
                        }
                    }
                }
            }
            if want_params {
                grads.insert(bn_weight(bi), Tensor::from_vec(&[blk.width], dgamma).expect("shape"));
                grads.insert(bn_bias(bi), Tensor::from_vec(&[blk.width], dbeta).expect("shape"));
            }
            d_pre
        } else {
            d_act
        };
        if let Some(Some(tap)) = seeds.pre_bn.get(bi) {
            for (d, &t) in d_pre.iter_mut().zip(tap) {
                *d += t;
            }
        }
        let weight = params.tensor(&conv_weight(bi)).data();
        let need_dx = bi > 0 || want_input;
        let (dx, dw, db) = conv_backward(
            &c.input,
            &d_pre,
            batch,
            c.in_ch,
            c.in_hw,
            weight,
            blk.width,
            blk.kernel,
            blk.stride,
            c.out_hw,
            want_params,
            need_dx,
        );
        if want_params {
            grads.insert(
                conv_weight(bi),
                Tensor::from_vec(&[blk.width, c.in_ch, blk.kernel, blk.kernel], dw).expect("shape"),
            );
            grads.insert(conv_bias(bi), Tensor::from_vec(&[blk.width], db).expect("shape"));
        }
        if bi == 0 {
            if want_input {
                d_input = Some(
                    Tensor::from_vec(&[batch, c.in_ch, c.in_hw, c.in_hw], dx).expect("shape"),
                );
            }
            break;
        }
        d_act = dx;
    }
    TowerGrads {
        params: grads,
        input: d_input,
    }
}

fn insert_zero_block_grads<T: Scalar>(
    grads: &mut BTreeMap<String, Tensor<T>>,
    spec: &ModelSpec,
    bi: usize,
) {
    let shapes: BTreeMap<String, Vec<usize>> = spec.entry_shapes().into_iter().collect();
    let blk = &spec.blocks[bi];
    let mut names = vec![conv_weight(bi), conv_bias(bi)];
    if blk.batchnorm {
        names.push(bn_weight(bi));
        names.push(bn_bias(bi));
    }
    for n in names {
        let shape = &shapes[&n];
        grads.insert(n, Tensor::zeros(shape));
    }
}

/// Running statistics after one pre-training step with `momentum`.
pub fn updated_running_stats<T: Scalar>(
    params: &ParameterSet<T>,
    stats: &[FeatureStats<T>],
    momentum: f64,
) -> super::params::BnStatistics<T> {
    let m = T::lit(momentum);
    let layers = stats
        .iter()
        .map(|s| {
            let rm = params.tensor(&bn_running_mean(s.block)).data();
            let rv = params.tensor(&bn_running_var(s.block)).data();
            let unbias = if s.count > 1 {
                T::lit(s.count as f64 / (s.count - 1) as f64)
            } else {
                T::one()
            };
            super::params::BnLayerStats {
                block: s.block,
                mean: rm
                    .iter()
                    .zip(&s.mean)
                    .map(|(&r, &b)| (T::one() - m) * r + m * b)
                    .collect(),
                var: rv
                    .iter()
                    .zip(&s.var)
                    .map(|(&r, &b)| (T::one() - m) * r + m * b * unbias)
                    .collect(),
            }
        })
        .collect();
    super::params::BnStatistics { layers }
}

pub fn normalize_rows<T: Scalar>(z: &[T], rows: usize, cols: usize) -> (Vec<T>, Vec<T>) {
    let mut out = vec![T::zero(); rows * cols];
    let mut norms = vec![T::zero(); rows];
    for r in 0..rows {
        let row = &z[r * cols..(r + 1) * cols];
        let n = crate::tensor::norm(row);
        norms[r] = n;
        for (o, &v) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
            *o = v / n;
        }
    }
    (out, norms)
}

/// Gradient through `e = z / ‖z‖` given the normalized rows.
pub fn normalize_rows_backward<T: Scalar>(
    emb: &[T],
    norms: &[T],
    d_emb: &[T],
    rows: usize,
    cols: usize,
) -> Vec<T> {
    let mut dz = vec![T::zero(); rows * cols];
    for r in 0..rows {
        let e = &emb[r * cols..(r + 1) * cols];
        let g = &d_emb[r * cols..(r + 1) * cols];
        let proj = crate::tensor::dot(e, g);
        for i in 0..cols {
            dz[r * cols + i] = (g[i] - e[i] * proj) / norms[r];
        }
    }
    dz
}

fn channel_stats<T: Scalar>(x: &[T], batch: usize, ch: usize, plane: usize) -> (Vec<T>, Vec<T>) {
    let n = T::lit((batch * plane) as f64);
    let mut mean = vec![T::zero(); ch];
    let mut var = vec![T::zero(); ch];
    for c in 0..ch {
        let mut s = T::zero();
        for b in 0..batch {
            let off = (b * ch + c) * plane;
            s += x[off..off + plane].iter().copied().sum::<T>();
        }
        let m = s / n;
        let mut v = T::zero();
        for b in 0..batch {
            let off = (b * ch + c) * plane;
            for &xv in &x[off..off + plane] {
                let d = xv - m;
                v += d * d;
            }
        }
        mean[c] = m;
        var[c] = v / n;
    }
    (mean, var)
}

#[allow(clippy::too_many_arguments)]
fn conv_forward<T: Scalar>(
    x: &[T],
    batch: usize,
    in_ch: usize,
    hw: usize,
    weight: &[T],
    bias: &[T],
    out_ch: usize,
    k: usize,
    stride: usize,
) -> (Vec<T>, usize) {
    let pad = k / 2;
    let out_hw = (hw + 2 * pad - k) / stride + 1;
    let plane = out_hw * out_hw;
    let mut out = vec![T::zero(); batch * out_ch * plane];
    for b in 0..batch {
        for o in 0..out_ch {
            let dst = &mut out[(b * out_ch + o) * plane..(b * out_ch + o + 1) * plane];
            dst.iter_mut().for_each(|v| *v = bias[o]);
            for i in 0..in_ch {
                let src = &x[(b * in_ch + i) * hw * hw..(b * in_ch + i + 1) * hw * hw];
                for kh in 0..k {
                    for kw in 0..k {
                        let w = weight[((o * in_ch + i) * k + kh) * k + kw];
                        for oy in 0..out_hw {
                            let iy = (oy * stride + kh) as isize - pad as isize;
                            if iy < 0 || iy >= hw as isize {
                                continue;
                            }
                            let srow = &src[iy as usize * hw..(iy as usize + 1) * hw];
                            let drow = &mut dst[oy * out_hw..(oy + 1) * out_hw];
                            for (ox, d) in drow.iter_mut().enumerate() {
                                let ix = (ox * stride + kw) as isize - pad as isize;
                                if ix >= 0 && ix < hw as isize {
                                    *d += w * srow[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (out, out_hw)
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Scalar>(
    x: &[T],
    dy: &[T],
    batch: usize,
    in_ch: usize,
    hw: usize,
    weight: &[T],
    out_ch: usize,
    k: usize,
    stride: usize,
    out_hw: usize,
    want_params: bool,
    want_dx: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let pad = k / 2;
    let plane = out_hw * out_hw;
    let mut dx = if want_dx {
        vec![T::zero(); batch * in_ch * hw * hw]
    } else {
        Vec::new()
    };
    let mut dw = if want_params {
        vec![T::zero(); out_ch * in_ch * k * k]
    } else {
        Vec::new()
    };
    let mut db = if want_params {
        vec![T::zero(); out_ch]
    } else {
        Vec::new()
    };
    for b in 0..batch {
        for o in 0..out_ch {
            let g = &dy[(b * out_ch + o) * plane..(b * out_ch + o + 1) * plane];
            if want_params {
                db[o] += g.iter().copied().sum::<T>();
            }
            for i in 0..in_ch {
                let base = (b * in_ch + i) * hw * hw;
                for kh in 0..k {
                    for kw in 0..k {
                        let widx = ((o * in_ch + i) * k + kh) * k + kw;
                        let w = weight[widx];
                        let mut acc = T::zero();
                        for oy in 0..out_hw {
                            let iy = (oy * stride + kh) as isize - pad as isize;
                            if iy < 0 || iy >= hw as isize {
                                continue;
                            }
                            let row = base + iy as usize * hw;
                            let grow = &g[oy * out_hw..(oy + 1) * out_hw];
                            for (ox, &gv) in grow.iter().enumerate() {
                                let ix = (ox * stride + kw) as isize - pad as isize;
                                if ix >= 0 && ix < hw as isize {
                                    let idx = row + ix as usize;
                                    if want_params {
                                        acc += gv * x[idx];
                                    }
                                    if want_dx {
                                        dx[idx] += gv * w;
                                    }
                                }
                            }
                        }
                        if want_params {
                            dw[widx] += acc;
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}
