//! Shared pieces of the training loops: contrastive gradients through both
//! towers, minibatch schedules and divergence checks.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::loss::{contrastive_loss, PositiveMask};
use super::params::ParameterSet;
use super::spec::TEXT_EMBEDDING;
use super::tower::{self, BnMode, FeatureStats, Seeds};
use super::{check_prompt_ids, text_rows};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct StepGrads<T> {
    pub loss: T,
    /// Gradients of trainable image-tower entries.
    pub image: BTreeMap<String, Tensor<T>>,
    /// Gradient of the text embedding table, when requested.
    pub text: Option<Tensor<T>>,
    pub feature_stats: Vec<FeatureStats<T>>,
}

/// Loss and gradients of the contrastive objective for one batch.
///
/// `prompts` lists the candidate prompt ids; `mask` marks the positives.
pub fn contrastive_grads<T: Scalar>(
    params: &ParameterSet<T>,
    images: &Tensor<T>,
    prompts: &[usize],
    mask: &PositiveMask,
    symmetric: bool,
    mode: BnMode,
    want_text: bool,
) -> Result<StepGrads<T>> {
    check_prompt_ids(params, prompts)?;
    let e = params.spec().embed_dim;
    let out = tower::forward(params, images, mode)?;
    let (txt, norms) = text_rows(params, prompts);
    let l = contrastive_loss(
        out.embeddings.data(),
        &txt,
        e,
        mask,
        params.spec().temperature,
        symmetric,
    )?;
    let seeds = Seeds {
        embeddings: Some(&l.d_image),
        pre_bn: Vec::new(),
    };
    let g = tower::backward(params, &out.cache, &seeds, true, false);
    let text = want_text.then(|| {
        let dz = tower::normalize_rows_backward(&txt, &norms, &l.d_text, prompts.len(), e);
        let mut table = Tensor::zeros(params.tensor(TEXT_EMBEDDING).shape());
        let data = table.data_mut();
        for (r, &id) in prompts.iter().enumerate() {
            for k in 0..e {
                data[id * e + k] += dz[r * e + k];
            }
        }
        table
    });
    Ok(StepGrads {
        loss: l.loss,
        image: g.params,
        text,
        feature_stats: out.feature_stats,
    })
}

/// Returns `Err` when `loss` is not finite.
pub fn check_finite<T: Scalar>(stage: &str, step: usize, loss: T) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::training(stage, step, format!("loss became {loss}")))
    }
}

/// Endless sampler of minibatches: reshuffles the index set every epoch and
/// yields consecutive chunks; the last chunk of an epoch may be shorter.
pub struct Batches {
    n: usize,
    size: usize,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Batches {
    pub fn new(n: usize, size: usize, rng: ChaCha8Rng) -> Self {
        Batches {
            n,
            size: size.max(1),
            order: Vec::new(),
            pos: n,
            rng,
        }
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos >= self.n {
            self.order = (0..self.n).collect();
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + self.size).min(self.n);
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        out
    }

    /// Number of batches in one pass over the data.
    pub fn per_epoch(&self) -> usize {
        self.n.div_ceil(self.size)
    }
}
