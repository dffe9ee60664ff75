//! Small taxonomy and a briefly pre-trained model shared by the
//! integration tests.

#![allow(dead_code)]

use unlearn_core::data::{build_task, pretraining_pool, SplitFractions, TaxonomySpec, UnlearnTask};
use unlearn_core::model::{pretrain_toy, BlockSpec, ModelSpec, ParameterSet, TrainConfig};

pub fn taxonomy() -> TaxonomySpec {
    TaxonomySpec {
        n_superclasses: 2,
        subgroups_per_superclass: 2,
        image_size: 8,
        images_per_subgroup: 40,
        seed: 3,
        ..TaxonomySpec::default()
    }
}

pub fn spec(tax: &TaxonomySpec) -> ModelSpec {
    ModelSpec {
        blocks: vec![BlockSpec::new(4, 3, 1, true), BlockSpec::new(8, 3, 2, true)],
        embed_dim: 8,
        ..ModelSpec::reference(tax.image_size, tax.vocab())
    }
}

pub struct Fixture {
    pub original: ParameterSet<f64>,
    pub task: UnlearnTask<f64>,
}

pub fn fixture(target: usize) -> Fixture {
    let tax = taxonomy();
    let fractions = SplitFractions::default();
    let (data, task) = build_task::<f64>(&tax, target, &fractions, 3).unwrap();
    let pool = pretraining_pool(&data, &fractions, 3).unwrap();
    let cfg = TrainConfig {
        steps: 300,
        batch_size: 16,
        lr: 3e-3,
        seed: 3,
    };
    let (original, _) = pretrain_toy(spec(&tax), &pool, &cfg).unwrap();
    Fixture { original, task }
}
