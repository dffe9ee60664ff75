//! Contrastive objectives over unit-norm embeddings.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub loss: T,
    /// `[images × dim]`
    pub d_image: Vec<T>,
    /// `[prompts × dim]`
    pub d_text: Vec<T>,
}

/// Which pairs count as matching in a batch: `mask[i * prompts + p]`.
#[derive(Debug, Clone)]
pub struct PositiveMask {
    pub images: usize,
    pub prompts: usize,
    pub mask: Vec<bool>,
}

impl PositiveMask {
    /// One positive per image: `labels[i]` indexes the prompt list.
    pub fn from_labels(labels: &[usize], prompts: usize) -> Self {
        let mut mask = vec![false; labels.len() * prompts];
        for (i, &l) in labels.iter().enumerate() {
            mask[i * prompts + l] = true;
        }
        PositiveMask {
            images: labels.len(),
            prompts,
            mask,
        }
    }

    #[inline]
    pub fn get(&self, i: usize, p: usize) -> bool {
        self.mask[i * self.prompts + p]
    }
}

/// Softmax cross-entropy against a uniform distribution over the positive
/// entries. Returns (loss, d_logits).
fn soft_target_ce<T: Scalar>(logits: &[T], positive: impl Fn(usize) -> bool) -> (T, Vec<T>) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: T = exps.iter().copied().sum();
    let log_z = z.ln() + max;
    let n_pos = (0..logits.len()).filter(|&j| positive(j)).count();
    let q = T::one() / T::lit(n_pos as f64);
    let mut loss = T::zero();
    let mut d = Vec::with_capacity(logits.len());
    for (j, &e) in exps.iter().enumerate() {
        let target = if positive(j) { q } else { T::zero() };
        if positive(j) {
            loss += q * (log_z - logits[j]);
        }
        d.push(e / z - target);
    }
    (loss, d)
}

/// Contrastive loss over cosine similarities scaled by `1 / temperature`.
///
/// The image→text term is the mean over images of the cross-entropy of each
/// image's logits over all prompts, with the target spread uniformly over
/// its positives. When `symmetric`, the text→image term does the same for
/// every prompt with at least one positive image in the batch, and the two
/// terms are averaged.
pub fn contrastive_loss<T: Scalar>(
    img: &[T],
    txt: &[T],
    dim: usize,
    positives: &PositiveMask,
    temperature: f64,
    symmetric: bool,
) -> Result<LossOutput<T>> {
    let (b, p) = (positives.images, positives.prompts);
    if img.len() != b * dim || txt.len() != p * dim {
        return Err(Error::Shape {
            expected: format!("{b}x{dim} images and {p}x{dim} prompts"),
            got: format!("{} and {} values", img.len(), txt.len()),
        });
    }
    if b == 0 {
        return Err(Error::config("contrastive loss over an empty batch"));
    }
    for i in 0..b {
        if !(0..p).any(|j| positives.get(i, j)) {
            return Err(Error::Degenerate(format!("image {i} has no positive prompt")));
        }
    }
    let scale = T::one() / T::lit(temperature);
    let sims = crate::tensor::matmul_bt(img, txt, b, dim, p);
    let logits: Vec<T> = sims.iter().map(|&s| s * scale).collect();
    let mut d_logits = vec![T::zero(); b * p];

    let i2t_weight = if symmetric { T::lit(0.5) } else { T::one() };
    let inv_b = T::one() / T::lit(b as f64);
    let mut loss = T::zero();
    for i in 0..b {
        let (l, d) = soft_target_ce(&logits[i * p..(i + 1) * p], |j| positives.get(i, j));
        loss += i2t_weight * inv_b * l;
        for j in 0..p {
            d_logits[i * p + j] += i2t_weight * inv_b * d[j];
        }
    }
    if symmetric {
        let active: Vec<usize> = (0..p).filter(|&j| (0..b).any(|i| positives.get(i, j))).collect();
        let inv_a = T::one() / T::lit(active.len() as f64);
        let half = T::lit(0.5);
        let mut column = vec![T::zero(); b];
        for &j in &active {
            for i in 0..b {
                column[i] = logits[i * p + j];
            }
            let (l, d) = soft_target_ce(&column, |i| positives.get(i, j));
            loss += half * inv_a * l;
            for i in 0..b {
                d_logits[i * p + j] += half * inv_a * d[i];
            }
        }
    }

    let d_sims: Vec<T> = d_logits.iter().map(|&g| g * scale).collect();
    let d_image = crate::tensor::matmul(&d_sims, txt, b, p, dim);
    let d_text = crate::tensor::matmul_at(&d_sims, img, b, p, dim);
    Ok(LossOutput {
        loss,
        d_image,
        d_text,
    })
}
