//! Dual encoder: a conv/BatchNorm image tower and an embedding-table text
//! tower over whole prompts, both producing unit-norm embeddings.

pub mod checkpoint;
pub mod loss;
pub mod optim;
pub mod params;
pub mod pretrain;
pub mod spec;
pub mod tower;
pub mod train;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use params::{AdapterRecord, BnLayerStats, BnStatistics, ParamMeta, ParameterSet, Provenance};
pub use spec::{BlockSpec, LayerInfo, LayerKind, ModelSpec};
pub use pretrain::{pretrain_toy, TrainConfig, TrainLog};
pub use tower::BnMode;

/// Unit-norm image embeddings, `[batch, embed_dim]`. BatchNorm uses the
/// stored running statistics.
pub fn encode_image<T: Scalar>(params: &ParameterSet<T>, images: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(tower::forward(params, images, BnMode::Eval)?.embeddings)
}

pub fn check_prompt_ids<T: Scalar>(params: &ParameterSet<T>, ids: &[usize]) -> Result<()> {
    let len = params.spec().vocab.len();
    match ids.iter().find(|&&id| id >= len) {
        Some(&id) => Err(Error::Vocab { id, len }),
        None => Ok(()),
    }
}

/// Raw text rows and their norms, used by the text reverse pass.
pub(crate) fn text_rows<T: Scalar>(params: &ParameterSet<T>, ids: &[usize]) -> (Vec<T>, Vec<T>) {
    let e = params.spec().embed_dim;
    let table = params.tensor(spec::TEXT_EMBEDDING).data();
    let raw: Vec<T> = ids
        .iter()
        .flat_map(|&id| table[id * e..(id + 1) * e].iter().copied())
        .collect();
    tower::normalize_rows(&raw, ids.len(), e)
}

/// Unit-norm text embeddings, one row per prompt id.
pub fn encode_text<T: Scalar>(params: &ParameterSet<T>, prompt_ids: &[usize]) -> Result<Tensor<T>> {
    check_prompt_ids(params, prompt_ids)?;
    let (rows, norms) = text_rows(params, prompt_ids);
    if norms.iter().any(|&n| !(n > T::zero())) {
        return Err(Error::Degenerate("zero text embedding row".into()));
    }
    Tensor::from_vec(&[prompt_ids.len(), params.spec().embed_dim], rows)
}

pub fn cosine_similarity<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            expected: format!("length {}", a.len()),
            got: format!("length {}", b.len()),
        });
    }
    let na = crate::tensor::norm(a);
    let nb = crate::tensor::norm(b);
    if !(na > T::zero()) || !(nb > T::zero()) {
        return Err(Error::Degenerate("cosine similarity of a zero vector".into()));
    }
    let c = crate::tensor::dot(a, b) / (na * nb);
    Ok(c.max(-T::one()).min(T::one()))
}

#[derive(Debug, Clone)]
pub struct Classification<T> {
    /// Index into the class prompt list, per image.
    pub predictions: Vec<usize>,
    /// `[images × classes]` cosine similarities.
    pub similarities: Vec<T>,
    pub classes: usize,
}

/// First index of the maximum; lowest index wins ties.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Predicts, for each image embedding row, the class with the highest cosine
/// similarity.
pub fn classify_embeddings<T: Scalar>(
    image_emb: &[T],
    text_emb: &[T],
    dim: usize,
) -> Classification<T> {
    let n = image_emb.len() / dim;
    let k = text_emb.len() / dim;
    let similarities = crate::tensor::matmul_bt(image_emb, text_emb, n, dim, k);
    let predictions = (0..n)
        .map(|i| argmax(&similarities[i * k..(i + 1) * k]))
        .collect();
    Classification {
        predictions,
        similarities,
        classes: k,
    }
}

pub fn zero_shot_classify<T: Scalar>(
    params: &ParameterSet<T>,
    images: &Tensor<T>,
    class_prompt_ids: &[usize],
) -> Result<Classification<T>> {
    if class_prompt_ids.is_empty() {
        return Err(Error::config("zero-shot classification needs at least one class prompt"));
    }
    let text = encode_text(params, class_prompt_ids)?;
    let img = encode_image(params, images)?;
    Ok(classify_embeddings(
        img.data(),
        text.data(),
        params.spec().embed_dim,
    ))
}
