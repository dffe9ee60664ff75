//! Forget / retain / calibration / evaluation splits for one unlearning task.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::style::{style_example, EDGE_SKETCH, GRAYSCALE, POSTERIZE};
use super::synth::{generate_synthetic, Dataset, LabeledExample, TaxonomySpec};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Whether accuracy on a suite should go down (forget) or stay (retain).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forget,
    Retain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteGroup {
    /// Held-out images of the forgotten subgroup.
    Target,
    /// Held-out images of sibling subgroups.
    Retain,
    /// Held-out images of every non-target subgroup.
    InDomain,
    /// Distribution-shifted suites never seen during unlearning.
    Unseen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelGranularity {
    Coarse,
    Fine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    /// Per-subgroup share held out for evaluation suites.
    pub eval: f64,
    /// Share of the target's non-held-out images placed in the forget set.
    pub forget: f64,
    /// Share of the sibling pool reserved for merge calibration.
    pub calibration: f64,
    pub calibration_labels: LabelGranularity,
    /// Label space of the target, retain and all-classes suites. The style
    /// suites always use superclass prompts.
    pub suite_labels: LabelGranularity,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            eval: 0.3,
            forget: 1.0,
            calibration: 0.1,
            calibration_labels: LabelGranularity::Fine,
            suite_labels: LabelGranularity::Fine,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.eval) {
            return Err(Error::config("eval fraction must lie in [0, 1)"));
        }
        if !(self.forget > 0.0 && self.forget <= 1.0) {
            return Err(Error::config("forget fraction must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.calibration) {
            return Err(Error::config(
                "calibration fraction must lie in [0, 1) so the retain set is non-empty",
            ));
        }
        Ok(())
    }
}

/// `round(fraction * n)`, the count rule used by every split.
pub fn fraction_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).round() as usize).min(n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptedExample<T> {
    pub example: LabeledExample<T>,
    /// Vocabulary id of the paired text.
    pub prompt: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSuite<T> {
    pub name: String,
    pub direction: Direction,
    pub group: SuiteGroup,
    /// Candidate prompts for zero-shot classification.
    pub class_prompts: Vec<usize>,
    pub examples: Vec<LabeledExample<T>>,
    /// Index into `class_prompts` per example.
    pub labels: Vec<usize>,
}

impl<T: Scalar> EvalSuite<T> {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    fn coarse(
        name: &str,
        direction: Direction,
        group: SuiteGroup,
        spec: &TaxonomySpec,
        examples: Vec<LabeledExample<T>>,
    ) -> Self {
        let labels = examples.iter().map(|e| e.superclass).collect();
        EvalSuite {
            name: name.to_string(),
            direction,
            group,
            class_prompts: spec.superclass_prompts(),
            examples,
            labels,
        }
    }

    fn with_labels(
        labels: LabelGranularity,
        name: &str,
        direction: Direction,
        group: SuiteGroup,
        spec: &TaxonomySpec,
        examples: Vec<LabeledExample<T>>,
    ) -> Self {
        match labels {
            LabelGranularity::Coarse => Self::coarse(name, direction, group, spec, examples),
            LabelGranularity::Fine => Self::fine(name, direction, group, spec, examples),
        }
    }

    fn fine(
        name: &str,
        direction: Direction,
        group: SuiteGroup,
        spec: &TaxonomySpec,
        examples: Vec<LabeledExample<T>>,
    ) -> Self {
        let labels = examples.iter().map(|e| e.subgroup).collect();
        EvalSuite {
            name: name.to_string(),
            direction,
            group,
            class_prompts: spec.subgroup_prompts(),
            examples,
            labels,
        }
    }
}

#[derive(Debug, Clone)]
pub struct UnlearnTask<T> {
    pub taxonomy: TaxonomySpec,
    pub target_subgroup: usize,
    pub seed: u64,
    pub fractions: SplitFractions,
    /// Target-subgroup images paired with the superclass prompt.
    pub forget: Vec<PromptedExample<T>>,
    /// Sibling-subgroup images paired with their subgroup prompt.
    pub retain: Vec<PromptedExample<T>>,
    pub calibration: EvalSuite<T>,
    pub suites: Vec<EvalSuite<T>>,
}

impl<T: Scalar> UnlearnTask<T> {
    pub fn suite(&self, name: &str) -> Option<&EvalSuite<T>> {
        self.suites.iter().find(|s| s.name == name)
    }

    pub fn target_superclass(&self) -> usize {
        self.taxonomy.superclass_of(self.target_subgroup)
    }

    pub fn forget_examples(&self) -> impl Iterator<Item = &LabeledExample<T>> {
        self.forget.iter().map(|p| &p.example)
    }

    pub fn retain_examples(&self) -> impl Iterator<Item = &LabeledExample<T>> {
        self.retain.iter().map(|p| &p.example)
    }

    /// Adds the held-out share of a shifted re-generation (excluding the
    /// target subgroup) as an unseen suite.
    pub fn add_shifted_suite(&mut self, name: &str, shifted: &Dataset<T>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(2);
        let mut picked = Vec::new();
        for g in 0..shifted.spec.n_subgroups() {
            if g == self.target_subgroup {
                continue;
            }
            let mut ex: Vec<&LabeledExample<T>> = shifted.of_subgroup(g).collect();
            ex.shuffle(&mut rng);
            let n = fraction_count(self.fractions.eval, ex.len());
            picked.extend(ex.into_iter().take(n).cloned());
        }
        self.suites.push(EvalSuite::coarse(
            name,
            Direction::Retain,
            SuiteGroup::Unseen,
            &self.taxonomy,
            picked,
        ));
    }
}

fn split_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

type PerSubgroup<T> = Vec<Vec<LabeledExample<T>>>;

/// Per subgroup: (held-out evaluation examples, remaining pool).
fn hold_out<T: Scalar>(
    dataset: &Dataset<T>,
    eval: f64,
    rng: &mut ChaCha8Rng,
) -> (PerSubgroup<T>, PerSubgroup<T>) {
    let mut held_out = Vec::new();
    let mut pool = Vec::new();
    for g in 0..dataset.spec.n_subgroups() {
        let mut ex: Vec<LabeledExample<T>> = dataset.of_subgroup(g).cloned().collect();
        ex.shuffle(rng);
        let rest = ex.split_off(fraction_count(eval, ex.len()));
        held_out.push(ex);
        pool.push(rest);
    }
    (held_out, pool)
}

/// The examples the original model may be pre-trained on: everything not
/// held out for evaluation. The hold-out does not depend on the target, so
/// one pre-trained model serves every task built with the same seed.
pub fn pretraining_pool<T: Scalar>(
    dataset: &Dataset<T>,
    fractions: &SplitFractions,
    seed: u64,
) -> Result<Dataset<T>> {
    fractions.validate()?;
    let (_, pool) = hold_out(dataset, fractions.eval, &mut split_rng(seed));
    Ok(Dataset {
        spec: dataset.spec.clone(),
        examples: pool.into_iter().flatten().collect(),
        log: dataset.log.clone(),
    })
}

/// Splits a generated dataset around `target_subgroup`.
///
/// Each subgroup's examples are shuffled and the first `eval` share is held
/// out for evaluation. The rest of the target forms the forget pool, the
/// rest of its siblings the retain pool, of which a `calibration` share is
/// set aside for merge calibration.
pub fn split_unlearn_task<T: Scalar>(
    dataset: &Dataset<T>,
    target_subgroup: usize,
    fractions: &SplitFractions,
    seed: u64,
) -> Result<UnlearnTask<T>> {
    fractions.validate()?;
    let spec = &dataset.spec;
    if target_subgroup >= spec.n_subgroups() || dataset.of_subgroup(target_subgroup).next().is_none()
    {
        return Err(Error::config(format!(
            "target subgroup {target_subgroup} is not present in the dataset"
        )));
    }
    let target_super = spec.superclass_of(target_subgroup);
    let mut rng = split_rng(seed);
    let (held_out, train_pool) = hold_out(dataset, fractions.eval, &mut rng);

    let target_pool = &train_pool[target_subgroup];
    let n_forget = fraction_count(fractions.forget, target_pool.len());
    let forget = target_pool[..n_forget]
        .iter()
        .map(|e| PromptedExample {
            example: e.clone(),
            prompt: spec.superclass_prompt(target_super),
        })
        .collect();

    let mut sibling_pool: Vec<LabeledExample<T>> = spec
        .subgroups_of(target_super)
        .filter(|&g| g != target_subgroup)
        .flat_map(|g| train_pool[g].iter().cloned())
        .collect();
    sibling_pool.shuffle(&mut rng);
    let n_cal = fraction_count(fractions.calibration, sibling_pool.len());
    let retain_part = sibling_pool.split_off(n_cal);
    let calibration_examples = sibling_pool;
    if retain_part.is_empty() {
        return Err(Error::config("retain set is empty: target superclass has no siblings"));
    }
    let retain = retain_part
        .into_iter()
        .map(|e| PromptedExample {
            prompt: spec.subgroup_prompt(e.subgroup),
            example: e,
        })
        .collect();
    let calibration = EvalSuite::with_labels(
        fractions.calibration_labels,
        "calibration",
        Direction::Retain,
        SuiteGroup::Retain,
        spec,
        calibration_examples,
    );

    let non_target: Vec<LabeledExample<T>> = (0..spec.n_subgroups())
        .filter(|&g| g != target_subgroup)
        .flat_map(|g| held_out[g].iter().cloned())
        .collect();
    let siblings: Vec<LabeledExample<T>> = spec
        .subgroups_of(target_super)
        .filter(|&g| g != target_subgroup)
        .flat_map(|g| held_out[g].iter().cloned())
        .collect();
    let labels = fractions.suite_labels;
    let mut suites = vec![
        EvalSuite::with_labels(
            labels,
            "target",
            Direction::Forget,
            SuiteGroup::Target,
            spec,
            held_out[target_subgroup].clone(),
        ),
        EvalSuite::with_labels(labels, "retain", Direction::Retain, SuiteGroup::Retain, spec, siblings),
        EvalSuite::with_labels(
            labels,
            "all",
            Direction::Retain,
            SuiteGroup::InDomain,
            spec,
            non_target.clone(),
        ),
    ];
    for (name, style) in [
        ("sketch", EDGE_SKETCH),
        ("posterize", POSTERIZE),
        ("grayscale", GRAYSCALE),
    ] {
        let styled = non_target
            .iter()
            .map(|e| style_example(e, style))
            .collect::<Result<Vec<_>>>()?;
        suites.push(EvalSuite::coarse(
            name,
            Direction::Retain,
            SuiteGroup::Unseen,
            spec,
            styled,
        ));
    }

    Ok(UnlearnTask {
        taxonomy: spec.clone(),
        target_subgroup,
        seed,
        fractions: fractions.clone(),
        forget,
        retain,
        calibration,
        suites,
    })
}

/// Generates the dataset and its shifted re-generation, then splits.
pub fn build_task<T: Scalar>(
    spec: &TaxonomySpec,
    target_subgroup: usize,
    fractions: &SplitFractions,
    seed: u64,
) -> Result<(Dataset<T>, UnlearnTask<T>)> {
    let dataset = generate_synthetic::<T>(spec)?;
    let mut task = split_unlearn_task(&dataset, target_subgroup, fractions, seed)?;
    let shifted = generate_synthetic::<T>(&spec.shifted())?;
    task.add_shifted_suite("shifted", &shifted);
    Ok((dataset, task))
}
