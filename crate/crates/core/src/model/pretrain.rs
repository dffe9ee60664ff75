//! Contrastive pre-training of the toy dual encoder: produces the
//! "original" model every experiment starts from.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::PositiveMask;
use super::optim::Adam;
use super::params::{ParameterSet, Provenance};
use super::spec::{ModelSpec, BN_MOMENTUM, TEXT_EMBEDDING};
use super::tower::{updated_running_stats, BnMode};
use super::train::{check_finite, contrastive_grads, Batches};
use crate::data::{stack_images, Dataset};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1500,
            batch_size: 64,
            lr: 3e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Symmetric contrastive loss per step.
    pub losses: Vec<f64>,
}

/// Trains both towers with the symmetric contrastive loss. Each image's
/// positives are its superclass prompt and its subgroup prompt; every
/// prompt in the vocabulary is a candidate. BatchNorm normalizes with batch
/// statistics and its running statistics follow with momentum 0.1.
pub fn pretrain_toy<T: Scalar>(
    spec: ModelSpec,
    dataset: &Dataset<T>,
    cfg: &TrainConfig,
) -> Result<(ParameterSet<T>, TrainLog)> {
    if cfg.batch_size < 2 || !(cfg.lr > 0.0) {
        return Err(Error::config("pre-training needs batch_size >= 2 and lr > 0"));
    }
    let tax = &dataset.spec;
    if spec.vocab != tax.vocab() {
        return Err(Error::config(
            "model vocabulary does not match the dataset taxonomy",
        ));
    }
    for c in 0..tax.n_superclasses {
        if !dataset.examples.iter().any(|e| e.superclass == c) {
            return Err(Error::Coverage(tax.superclass_name(c)));
        }
    }
    for g in 0..tax.n_subgroups() {
        if dataset.of_subgroup(g).next().is_none() {
            return Err(Error::Coverage(tax.subgroup_name(g)));
        }
    }

    let mut params = ParameterSet::<T>::init(spec, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut batches = Batches::new(dataset.examples.len(), cfg.batch_size, rng);
    let mut adam = Adam::<T>::new(cfg.lr);
    let prompts: Vec<usize> = (0..params.spec().vocab.len()).collect();
    let mut log = TrainLog::default();

    for step in 0..cfg.steps {
        let idx = batches.next_batch();
        if idx.len() < 2 {
            continue;
        }
        let examples: Vec<_> = idx.iter().map(|&i| &dataset.examples[i]).collect();
        let images = stack_images(examples.iter().copied());
        let mut mask = PositiveMask {
            images: idx.len(),
            prompts: prompts.len(),
            mask: vec![false; idx.len() * prompts.len()],
        };
        for (i, e) in examples.iter().enumerate() {
            mask.mask[i * prompts.len() + tax.superclass_prompt(e.superclass)] = true;
            mask.mask[i * prompts.len() + tax.subgroup_prompt(e.subgroup)] = true;
        }
        let g = contrastive_grads(&params, &images, &prompts, &mask, true, BnMode::Train, true)?;
        check_finite("pretrain", step, g.loss)?;
        log.losses.push(g.loss.to_f64_lossy());

        let running = updated_running_stats(&params, &g.feature_stats, BN_MOMENTUM);
        adam.begin_step();
        for (name, grad) in &g.image {
            adam.update(name, params.tensor_mut(name), grad);
        }
        if let Some(text) = &g.text {
            adam.update(TEXT_EMBEDDING, params.tensor_mut(TEXT_EMBEDDING), text);
        }
        params.set_bn_statistics(&running)?;
    }
    Ok((params.with_provenance(Provenance::Original), log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, TaxonomySpec};
    use crate::model::spec::BlockSpec;

    fn setup() -> (ModelSpec, Dataset<f64>) {
        let tax = TaxonomySpec {
            n_superclasses: 2,
            subgroups_per_superclass: 2,
            image_size: 6,
            images_per_subgroup: 6,
            ..TaxonomySpec::default()
        };
        let spec = ModelSpec {
            in_channels: 3,
            image_size: 6,
            blocks: vec![BlockSpec::new(4, 3, 2, true)],
            embed_dim: 4,
            vocab: tax.vocab(),
            temperature: 0.2,
        };
        (spec, generate_synthetic(&tax).unwrap())
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let (spec, d) = setup();
        let cfg = TrainConfig { steps: 0, ..TrainConfig::default() };
        let (p, log) = pretrain_toy(spec.clone(), &d, &cfg).unwrap();
        assert!(p.same_values(&ParameterSet::init(spec, cfg.seed).unwrap()));
        assert!(log.losses.is_empty());
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let (spec, d) = setup();
        let cfg = TrainConfig { steps: 5, batch_size: 8, ..TrainConfig::default() };
        let (a, _) = pretrain_toy(spec.clone(), &d, &cfg).unwrap();
        let (b, _) = pretrain_toy(spec, &d, &cfg).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        assert_eq!(a.meta.provenance, Provenance::Original);
    }

    #[test]
    fn loss_decreases_and_running_stats_move() {
        let (spec, d) = setup();
        let cfg = TrainConfig { steps: 60, batch_size: 12, lr: 1e-2, seed: 1 };
        let (p, log) = pretrain_toy(spec, &d, &cfg).unwrap();
        let head: f64 = log.losses[..5].iter().sum::<f64>() / 5.0;
        let tail: f64 = log.losses[log.losses.len() - 5..].iter().sum::<f64>() / 5.0;
        assert!(tail < head, "{head} -> {tail}");
        let stats = p.bn_statistics();
        assert!(stats.layers[0].mean.iter().any(|&m| m != 0.0));
        assert!(stats.layers[0].var.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn missing_class_is_a_coverage_error() {
        let (spec, mut d) = setup();
        d.examples.retain(|e| e.subgroup != 3);
        let cfg = TrainConfig { steps: 1, ..TrainConfig::default() };
        assert!(matches!(pretrain_toy(spec, &d, &cfg), Err(Error::Coverage(_))));
    }
}
