//! On-disk form of an [`UnlearnTask`]: `manifest.json` plus one
//! `<split>.bin` tensor-record file per split holding its stacked images.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::split::{Direction, EvalSuite, PromptedExample, SplitFractions, SuiteGroup, UnlearnTask};
use super::synth::{LabeledExample, StyleId, TaxonomySpec};
use crate::error::{Error, Result};
use crate::records::{read_records, write_atomic, write_records, Reader};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteMeta {
    pub direction: Direction,
    pub group: SuiteGroup,
    pub class_prompts: Vec<usize>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitEntry {
    pub name: String,
    pub ids: Vec<u64>,
    pub superclass: Vec<usize>,
    pub subgroup: Vec<usize>,
    pub style: Vec<u8>,
    /// Paired prompt per example (forget and retain splits).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts: Option<Vec<usize>>,
    /// Classification setup (calibration and evaluation suites).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite: Option<SuiteMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiveManifest {
    pub taxonomy: TaxonomySpec,
    pub seed: u64,
    pub target_subgroup: usize,
    pub fractions: SplitFractions,
    pub splits: Vec<SplitEntry>,
}

fn entry<'a, T: 'a>(
    name: &str,
    examples: impl Iterator<Item = &'a LabeledExample<T>>,
) -> SplitEntry {
    let mut e = SplitEntry {
        name: name.to_string(),
        ids: Vec::new(),
        superclass: Vec::new(),
        subgroup: Vec::new(),
        style: Vec::new(),
        prompts: None,
        suite: None,
    };
    for x in examples {
        e.ids.push(x.id);
        e.superclass.push(x.superclass);
        e.subgroup.push(x.subgroup);
        e.style.push(x.style.0);
    }
    e
}

fn suite_entry<T: Scalar>(s: &EvalSuite<T>) -> SplitEntry {
    let mut e = entry(&s.name, s.examples.iter());
    e.suite = Some(SuiteMeta {
        direction: s.direction,
        group: s.group,
        class_prompts: s.class_prompts.clone(),
        labels: s.labels.clone(),
    });
    e
}

fn images_bytes<'a, T: Scalar>(examples: impl Iterator<Item = &'a LabeledExample<T>>, image_shape: &[usize]) -> Vec<u8> {
    let mut data = Vec::new();
    let mut n = 0;
    for x in examples {
        data.extend_from_slice(x.image.data());
        n += 1;
    }
    let mut shape = vec![n];
    shape.extend_from_slice(image_shape);
    let t = Tensor::from_vec(&shape, data).expect("consistent example shapes");
    let mut out = Vec::new();
    write_records(&mut out, [("images", &t)].into_iter());
    out
}

/// Writes the task under `dir`, returning the manifest.
pub fn save_task<T: Scalar>(task: &UnlearnTask<T>, dir: &Path) -> Result<ArchiveManifest> {
    std::fs::create_dir_all(dir)?;
    let s = task.taxonomy.image_size;
    let image_shape = [super::synth::CHANNELS, s, s];
    let mut splits = Vec::new();

    let mut forget = entry("forget", task.forget_examples());
    forget.prompts = Some(task.forget.iter().map(|p| p.prompt).collect());
    write_atomic(&dir.join("forget.bin"), &images_bytes(task.forget_examples(), &image_shape))?;
    splits.push(forget);

    let mut retain = entry("retain_train", task.retain_examples());
    retain.prompts = Some(task.retain.iter().map(|p| p.prompt).collect());
    write_atomic(
        &dir.join("retain_train.bin"),
        &images_bytes(task.retain_examples(), &image_shape),
    )?;
    splits.push(retain);

    for suite in std::iter::once(&task.calibration).chain(&task.suites) {
        write_atomic(
            &dir.join(format!("{}.bin", suite.name)),
            &images_bytes(suite.examples.iter(), &image_shape),
        )?;
        splits.push(suite_entry(suite));
    }
    let manifest = ArchiveManifest {
        taxonomy: task.taxonomy.clone(),
        seed: task.seed,
        target_subgroup: task.target_subgroup,
        fractions: task.fractions.clone(),
        splits,
    };
    write_atomic(&dir.join(MANIFEST), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

fn load_examples<T: Scalar>(dir: &Path, e: &SplitEntry) -> Result<Vec<LabeledExample<T>>> {
    let bytes = std::fs::read(dir.join(format!("{}.bin", e.name)))
        .map_err(|err| Error::Artifact(format!("split {}: {err}", e.name)))?;
    let mut r = Reader::new(&bytes);
    let records = read_records::<T>(&mut r)?;
    let images = records
        .into_iter()
        .find(|(n, _)| n == "images")
        .map(|(_, t)| t)
        .ok_or_else(|| Error::Artifact(format!("split {} has no images record", e.name)))?;
    let shape = images.shape().to_vec();
    let n = e.ids.len();
    if shape.len() != 4
        || shape[0] != n
        || e.superclass.len() != n
        || e.subgroup.len() != n
        || e.style.len() != n
    {
        return Err(Error::Artifact(format!("split {} is inconsistent", e.name)));
    }
    let per: usize = shape[1..].iter().product();
    let data = images.into_data();
    (0..n)
        .map(|i| {
            Ok(LabeledExample {
                id: e.ids[i],
                image: Tensor::from_vec(&shape[1..], data[i * per..(i + 1) * per].to_vec())?,
                superclass: e.superclass[i],
                subgroup: e.subgroup[i],
                style: StyleId(e.style[i]),
            })
        })
        .collect()
}

fn prompted<T: Scalar>(dir: &Path, e: &SplitEntry) -> Result<Vec<PromptedExample<T>>> {
    let prompts = e
        .prompts
        .as_ref()
        .ok_or_else(|| Error::Artifact(format!("split {} lacks prompts", e.name)))?;
    let ex = load_examples(dir, e)?;
    if prompts.len() != ex.len() {
        return Err(Error::Artifact(format!("split {} is inconsistent", e.name)));
    }
    Ok(ex
        .into_iter()
        .zip(prompts)
        .map(|(example, &prompt)| PromptedExample { example, prompt })
        .collect())
}

fn suite<T: Scalar>(dir: &Path, e: &SplitEntry) -> Result<EvalSuite<T>> {
    let meta = e
        .suite
        .as_ref()
        .ok_or_else(|| Error::Artifact(format!("split {} lacks suite metadata", e.name)))?;
    let examples = load_examples(dir, e)?;
    if meta.labels.len() != examples.len() {
        return Err(Error::Artifact(format!("split {} is inconsistent", e.name)));
    }
    Ok(EvalSuite {
        name: e.name.clone(),
        direction: meta.direction,
        group: meta.group,
        class_prompts: meta.class_prompts.clone(),
        examples,
        labels: meta.labels.clone(),
    })
}

pub fn load_task<T: Scalar>(dir: &Path) -> Result<UnlearnTask<T>> {
    let bytes = std::fs::read(dir.join(MANIFEST))
        .map_err(|e| Error::Artifact(format!("cannot read task manifest in {}: {e}", dir.display())))?;
    let m: ArchiveManifest = serde_json::from_slice(&bytes)?;
    let find = |name: &str| {
        m.splits
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Artifact(format!("task archive lacks split {name}")))
    };
    let forget = prompted(dir, find("forget")?)?;
    let retain = prompted(dir, find("retain_train")?)?;
    let calibration = suite(dir, find("calibration")?)?;
    let suites = m
        .splits
        .iter()
        .filter(|s| !matches!(s.name.as_str(), "forget" | "retain_train" | "calibration"))
        .map(|s| suite(dir, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(UnlearnTask {
        taxonomy: m.taxonomy,
        target_subgroup: m.target_subgroup,
        seed: m.seed,
        fractions: m.fractions,
        forget,
        retain,
        calibration,
        suites,
    })
}
