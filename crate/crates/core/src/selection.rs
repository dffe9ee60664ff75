//! Relative Fisher information per image-tower layer and layer selection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::PromptedExample;
use crate::error::{Error, Result};
use crate::model::loss::PositiveMask;
use crate::model::train::contrastive_grads;
use crate::model::tower::{self, BnMode, Seeds};
use crate::model::{encode_text, ParameterSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Objective whose per-example gradient feeds the Fisher estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FisherObjective {
    /// Cosine similarity between the image and its paired prompt.
    Similarity,
    /// Image→text cross-entropy of the paired prompt against the whole vocabulary.
    Contrastive,
}

/// Gradient of the objective for one example w.r.t. the trainable
/// image-tower entries. BatchNorm uses running statistics, so examples do
/// not interact.
pub fn example_gradient<T: Scalar>(
    params: &ParameterSet<T>,
    example: &PromptedExample<T>,
    objective: FisherObjective,
) -> Result<BTreeMap<String, Tensor<T>>> {
    let mut shape = vec![1];
    shape.extend_from_slice(example.example.image.shape());
    let image = Tensor::from_vec(&shape, example.example.image.data().to_vec())?;
    match objective {
        FisherObjective::Similarity => {
            let txt = encode_text(params, &[example.prompt])?;
            let out = tower::forward(params, &image, BnMode::Eval)?;
            let seeds = Seeds {
                embeddings: Some(txt.data()),
                pre_bn: Vec::new(),
            };
            Ok(tower::backward(params, &out.cache, &seeds, true, false).params)
        }
        FisherObjective::Contrastive => {
            let prompts: Vec<usize> = (0..params.spec().vocab.len()).collect();
            let mask = PositiveMask::from_labels(&[example.prompt], prompts.len());
            Ok(contrastive_grads(params, &image, &prompts, &mask, false, BnMode::Eval, false)?.image)
        }
    }
}

/// Diagonal empirical Fisher: per entry, the mean over examples of the
/// squared per-example gradient.
pub fn param_fisher<T: Scalar>(
    params: &ParameterSet<T>,
    examples: &[PromptedExample<T>],
    objective: FisherObjective,
) -> Result<BTreeMap<String, Tensor<T>>> {
    if examples.is_empty() {
        return Err(Error::config("Fisher information over an empty dataset"));
    }
    let grads = examples
        .iter()
        .map(|e| example_gradient(params, e, objective));
    mean_squared(grads)
}

/// Mean of element-wise squares over a stream of gradient maps.
pub fn mean_squared<T: Scalar>(
    grads: impl Iterator<Item = Result<BTreeMap<String, Tensor<T>>>>,
) -> Result<BTreeMap<String, Tensor<T>>> {
    let mut acc: BTreeMap<String, Tensor<T>> = BTreeMap::new();
    let mut n = 0usize;
    for g in grads {
        for (name, t) in g? {
            let sq = t.map(|v| v * v);
            match acc.get_mut(&name) {
                Some(a) => a.add_scaled(&sq, T::one()),
                None => {
                    acc.insert(name, sq);
                }
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::config("Fisher information over an empty dataset"));
    }
    let inv = T::one() / T::lit(n as f64);
    for t in acc.values_mut() {
        t.data_mut().iter_mut().for_each(|v| *v *= inv);
    }
    Ok(acc)
}

/// Reduces per-entry Fisher values to one scalar per layer: the mean over
/// all parameter entries of the layer.
pub fn reduce_to_layers<T: Scalar>(
    params: &ParameterSet<T>,
    fisher: &BTreeMap<String, Tensor<T>>,
) -> BTreeMap<String, f64> {
    params
        .spec()
        .image_layers()
        .into_iter()
        .map(|layer| {
            let (sum, count) = layer.params.iter().fold((0.0, 0usize), |(s, c), name| {
                let t = &fisher[name];
                (
                    s + t.data().iter().map(|v| v.to_f64_lossy()).sum::<f64>(),
                    c + t.numel(),
                )
            });
            (layer.path, sum / count as f64)
        })
        .collect()
}

/// Per-layer diagonal Fisher score of `examples`.
pub fn layer_fisher<T: Scalar>(
    params: &ParameterSet<T>,
    examples: &[PromptedExample<T>],
    objective: FisherObjective,
) -> Result<BTreeMap<String, f64>> {
    Ok(reduce_to_layers(params, &param_fisher(params, examples, objective)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerScoreMap {
    pub scores: BTreeMap<String, f64>,
    /// Layer paths in tower order; used to break ties.
    pub order: Vec<String>,
    pub epsilon: f64,
    pub objective: FisherObjective,
    pub forget_fingerprint: String,
    pub retain_fingerprint: String,
}

impl LayerScoreMap {
    /// Keeps only the given layers (e.g. those an adapter can attach to).
    pub fn restricted(&self, keep: &[String]) -> LayerScoreMap {
        let mut out = self.clone();
        out.order.retain(|p| keep.contains(p));
        out.scores.retain(|p, _| keep.contains(p));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("score map serializes")
    }
}

/// SHA-256 over example ids and paired prompts.
pub fn examples_fingerprint<T>(examples: &[PromptedExample<T>]) -> String {
    let mut h = Sha256::new();
    for e in examples {
        h.update(e.example.id.to_le_bytes());
        h.update((e.prompt as u64).to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// `I^l = F_forget(l) / (F_retain(l) + epsilon)` for every image-tower layer.
pub fn relative_fisher<T: Scalar>(
    params: &ParameterSet<T>,
    forget: &[PromptedExample<T>],
    retain: &[PromptedExample<T>],
    epsilon: f64,
    objective: FisherObjective,
) -> Result<LayerScoreMap> {
    if !(epsilon > 0.0) {
        return Err(Error::config("Fisher denominator guard must be positive"));
    }
    let f = layer_fisher(params, forget, objective)?;
    let r = layer_fisher(params, retain, objective)?;
    let scores = f
        .iter()
        .map(|(k, &v)| (k.clone(), v / (r[k] + epsilon)))
        .collect();
    Ok(LayerScoreMap {
        scores,
        order: params.spec().image_layers().into_iter().map(|l| l.path).collect(),
        epsilon,
        objective,
        forget_fingerprint: examples_fingerprint(forget),
        retain_fingerprint: examples_fingerprint(retain),
    })
}

/// The `k` highest-scoring layers, descending; ties go to the earlier layer.
pub fn select_layers(scores: &LayerScoreMap, k: usize) -> Result<Vec<String>> {
    let n = scores.order.len();
    if k == 0 || k > n {
        return Err(Error::config(format!(
            "cannot select {k} layers out of {n}"
        )));
    }
    let mut ranked: Vec<(usize, &String)> = scores.order.iter().enumerate().collect();
    ranked.sort_by(|a, b| {
        scores.scores[b.1]
            .total_cmp(&scores.scores[a.1])
            .then(a.0.cmp(&b.0))
    });
    Ok(ranked.into_iter().take(k).map(|(_, p)| p.clone()).collect())
}

/// Default layer budget: a quarter of the candidates, rounded up.
pub fn default_k(candidates: usize) -> usize {
    candidates.div_ceil(4).max(1)
}
