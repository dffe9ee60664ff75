//! Zero-shot accuracy, restoration ratios, the directional aggregate score
//! and prompt-based retrieval.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{stack_images, Direction, EvalSuite, LabeledExample, SuiteGroup, TaxonomySpec};
use crate::error::{Error, Result};
use crate::model::{encode_image, encode_text, zero_shot_classify, ParameterSet, Provenance};
use crate::scalar::Scalar;

/// Images classified per forward pass.
const EVAL_CHUNK: usize = 256;

/// Fraction of `examples` whose zero-shot prediction over `class_prompts`
/// equals `labels`.
pub fn accuracy_of<T: Scalar>(
    params: &ParameterSet<T>,
    examples: &[LabeledExample<T>],
    labels: &[usize],
    class_prompts: &[usize],
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::config("accuracy over an empty dataset"));
    }
    if labels.len() != examples.len() {
        return Err(Error::config("one label per example required"));
    }
    let mut correct = 0usize;
    for (chunk, lab) in examples.chunks(EVAL_CHUNK).zip(labels.chunks(EVAL_CHUNK)) {
        let c = zero_shot_classify(params, &stack_images(chunk), class_prompts)?;
        correct += c.predictions.iter().zip(lab).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / examples.len() as f64)
}

pub fn accuracy<T: Scalar>(params: &ParameterSet<T>, suite: &EvalSuite<T>) -> Result<f64> {
    accuracy_of(params, &suite.examples, &suite.labels, &suite.class_prompts)
        .map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("suite {}: {m}", suite.name)),
            other => other,
        })
}

/// Subgroup-level zero-shot accuracy of each subgroup's examples, with every
/// subgroup prompt as a candidate. `None` where a subgroup has no examples.
pub fn subgroup_accuracies<T: Scalar>(
    params: &ParameterSet<T>,
    examples: &[LabeledExample<T>],
    taxonomy: &TaxonomySpec,
) -> Result<Vec<Option<f64>>> {
    let prompts = taxonomy.subgroup_prompts();
    (0..taxonomy.n_subgroups())
        .map(|g| {
            let ex: Vec<LabeledExample<T>> =
                examples.iter().filter(|e| e.subgroup == g).cloned().collect();
            if ex.is_empty() {
                return Ok(None);
            }
            let labels = vec![g; ex.len()];
            accuracy_of(params, &ex, &labels, &prompts).map(Some)
        })
        .collect()
}

/// `min(acc_unlearn / acc_ori, 1)`.
pub fn restoration_ratio(acc_unlearn: f64, acc_ori: f64) -> Result<f64> {
    if !(acc_ori > 0.0) {
        return Err(Error::UndefinedBaseline);
    }
    Ok((acc_unlearn / acc_ori).clamp(0.0, 1.0))
}

/// 100 × the mean over entries, where forget-direction ratios enter as
/// `1 − ratio`.
pub fn aggregate_score(entries: &[(f64, Direction)]) -> Result<f64> {
    if entries.is_empty() {
        return Err(Error::config("score over no entries"));
    }
    let total: f64 = entries
        .iter()
        .map(|&(r, d)| match d {
            Direction::Retain => r,
            Direction::Forget => 1.0 - r,
        })
        .sum();
    Ok(100.0 * total / entries.len() as f64)
}

/// Ids of the `k` gallery examples most similar to the prompt, descending;
/// equal similarities are ordered by example id.
pub fn retrieve<T: Scalar>(
    params: &ParameterSet<T>,
    prompt_id: usize,
    gallery: &[LabeledExample<T>],
    k: usize,
) -> Result<Vec<u64>> {
    if k == 0 || k > gallery.len() {
        return Err(Error::config(format!(
            "retrieval depth {k} outside 1..={}",
            gallery.len()
        )));
    }
    let e = params.spec().embed_dim;
    let txt = encode_text(params, &[prompt_id])?;
    let mut scored: Vec<(T, u64)> = Vec::with_capacity(gallery.len());
    for chunk in gallery.chunks(EVAL_CHUNK) {
        let img = encode_image(params, &stack_images(chunk))?;
        for (i, ex) in chunk.iter().enumerate() {
            let s = crate::tensor::dot(&img.data()[i * e..(i + 1) * e], txt.data());
            scored.push((s, ex.id));
        }
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(k).map(|(_, id)| id).collect())
}

/// Fraction of the top-`k` retrieved ids that satisfy `hit`.
pub fn hit_rate<T: Scalar>(
    params: &ParameterSet<T>,
    prompt_id: usize,
    gallery: &[LabeledExample<T>],
    k: usize,
    hit: impl Fn(&LabeledExample<T>) -> bool,
) -> Result<f64> {
    let ids = retrieve(params, prompt_id, gallery, k)?;
    let hits = ids
        .iter()
        .filter(|id| gallery.iter().any(|e| e.id == **id && hit(e)))
        .count();
    Ok(hits as f64 / k as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub suite: String,
    pub direction: Direction,
    pub group: SuiteGroup,
    pub acc_ori: f64,
    pub acc_unlearn: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub provenance: Provenance,
    pub original_hash: String,
    pub candidate_hash: String,
    /// SHA-256 over suite names and example ids.
    pub suites_fingerprint: String,
    pub suites: Vec<SuiteResult>,
    pub score: f64,
}

impl EvalReport {
    pub fn suite(&self, name: &str) -> Option<&SuiteResult> {
        self.suites.iter().find(|s| s.suite == name)
    }

    /// Mean ratio over suites of `group`, if any.
    pub fn mean_ratio(&self, group: SuiteGroup) -> Option<f64> {
        let r: Vec<f64> = self
            .suites
            .iter()
            .filter(|s| s.group == group)
            .map(|s| s.ratio)
            .collect();
        (!r.is_empty()).then(|| r.iter().sum::<f64>() / r.len() as f64)
    }

    /// Mean candidate accuracy over suites of `group`, if any.
    pub fn mean_accuracy(&self, group: SuiteGroup) -> Option<f64> {
        let r: Vec<f64> = self
            .suites
            .iter()
            .filter(|s| s.group == group)
            .map(|s| s.acc_unlearn)
            .collect();
        (!r.is_empty()).then(|| r.iter().sum::<f64>() / r.len() as f64)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// One row per suite, then a score footer. Ratios are percentages with
    /// one decimal.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("suite,direction,acc_ori,acc_unlearn,ratio\n");
        for s in &self.suites {
            let dir = match s.direction {
                Direction::Forget => "forget",
                Direction::Retain => "retain",
            };
            out.push_str(&format!(
                "{},{},{:.4},{:.4},{:.1}\n",
                s.suite,
                dir,
                s.acc_ori,
                s.acc_unlearn,
                100.0 * s.ratio
            ));
        }
        out.push_str(&format!("score,,,,{:.1}\n", self.score));
        out
    }
}

pub fn suites_fingerprint<T>(suites: &[EvalSuite<T>]) -> String {
    let mut h = Sha256::new();
    for s in suites {
        h.update(s.name.as_bytes());
        for e in &s.examples {
            h.update(e.id.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Accuracy of both models on every suite, the ratios and the score.
pub fn build_report<T: Scalar>(
    original: &ParameterSet<T>,
    candidate: &ParameterSet<T>,
    suites: &[EvalSuite<T>],
) -> Result<EvalReport> {
    if suites.is_empty() {
        return Err(Error::config("report needs at least one evaluation suite"));
    }
    candidate.check_compatible(original)?;
    let mut results = Vec::with_capacity(suites.len());
    for s in suites {
        let acc_ori = accuracy(original, s)?;
        let acc_unlearn = accuracy(candidate, s)?;
        results.push(SuiteResult {
            suite: s.name.clone(),
            direction: s.direction,
            group: s.group,
            acc_ori,
            acc_unlearn,
            ratio: restoration_ratio(acc_unlearn, acc_ori)?,
        });
    }
    let entries: Vec<(f64, Direction)> = results.iter().map(|r| (r.ratio, r.direction)).collect();
    Ok(EvalReport {
        provenance: candidate.meta.provenance.clone(),
        original_hash: original.content_hash(),
        candidate_hash: candidate.content_hash(),
        suites_fingerprint: suites_fingerprint(suites),
        suites: results,
        score: aggregate_score(&entries)?,
    })
}
