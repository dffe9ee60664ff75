//! Forget → remind → restore unlearning, and merging of unlearned models.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapters::{attach_adapters, fold_adapters};
use crate::data::{stack_images, EvalSuite, PromptedExample, UnlearnTask};
use crate::error::{Error, Result};
use crate::eval::accuracy;
use crate::model::loss::PositiveMask;
use crate::model::optim::Adam;
use crate::model::train::{check_finite, contrastive_grads, Batches};
use crate::model::tower::{self, BnMode, FeatureStats, Seeds};
use crate::model::{encode_image, encode_text, ParameterSet, Provenance};
use crate::scalar::Scalar;
use crate::selection::{default_k, relative_fisher, select_layers, FisherObjective, LayerScoreMap};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    /// Adam step size of the forgetting stage.
    pub forget_lr: f64,
    /// Adam step size of the reminding stage.
    pub remind_lr: f64,
    pub forget_steps: usize,
    pub forget_batch: usize,
    /// Layers to adapt; 0 picks a quarter of the candidates.
    pub layers_k: usize,
    /// Matrix layers eligible for adapters. Empty means every matrix layer
    /// of the image tower. Relative Fisher is still scored over all layers.
    pub adapt_layers: Vec<String>,
    pub fisher_epsilon: f64,
    pub fisher_objective: FisherObjective,
    pub adapter_rank: usize,
    pub adapter_scaling: f64,
    pub remind_steps: usize,
    pub remind_batch: usize,
    /// Only fine-tune the layers chosen for forgetting while reminding.
    pub remind_selected_only: bool,
    /// EMA decay: weight kept on the running average each step.
    pub ema_decay: f64,
    pub align_steps: usize,
    pub align_step_size: f64,
    /// Elementwise bound on |δ| (`inf` for none).
    pub align_bound: f64,
    /// Candidate merge coefficients, as weight on the original model.
    pub merge_grid: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            forget_lr: 2e-3,
            remind_lr: 2e-3,
            forget_steps: 240,
            forget_batch: 32,
            layers_k: 0,
            adapt_layers: vec!["image.proj".into()],
            fisher_epsilon: 1e-8,
            fisher_objective: FisherObjective::Similarity,
            adapter_rank: 4,
            adapter_scaling: 1.0,
            remind_steps: 30,
            remind_batch: 32,
            remind_selected_only: true,
            ema_decay: 0.95,
            align_steps: 5,
            align_step_size: 0.1,
            align_bound: f64::INFINITY,
            merge_grid: (0..=20).map(|i| i as f64 / 20.0).collect(),
            seed: 0,
        }
    }
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.forget_lr, self.remind_lr, self.align_step_size, self.fisher_epsilon, self.adapter_scaling];
        if rates.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
            return Err(Error::config("learning rates, step sizes and epsilon must be positive"));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(Error::config("ema_decay must lie in [0, 1]"));
        }
        if self.merge_grid.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::config("merge grid values must lie in [0, 1]"));
        }
        if self.forget_batch == 0 || self.remind_batch < 2 {
            return Err(Error::config("forget_batch >= 1 and remind_batch >= 2 required"));
        }
        if !(self.align_bound > 0.0) {
            return Err(Error::config("align_bound must be positive"));
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

// ---------------------------------------------------------------- forgetting

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ForgetLog {
    pub selected_layers: Vec<String>,
    /// Mean cosine similarity of the forget set to its coarse prompt, per step.
    pub losses: Vec<f64>,
    pub similarity_before: f64,
    pub similarity_after: f64,
}

/// Mean cosine similarity between each example's image and its paired prompt.
pub fn mean_pair_similarity<T: Scalar>(
    params: &ParameterSet<T>,
    examples: &[PromptedExample<T>],
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::config("similarity over an empty set"));
    }
    let e = params.spec().embed_dim;
    let img = encode_image(params, &stack_images(examples.iter().map(|p| &p.example)))?;
    let prompts: Vec<usize> = examples.iter().map(|p| p.prompt).collect();
    let txt = encode_text(params, &prompts)?;
    let total: f64 = (0..examples.len())
        .map(|i| {
            crate::tensor::dot(&img.data()[i * e..(i + 1) * e], &txt.data()[i * e..(i + 1) * e])
                .to_f64_lossy()
        })
        .sum();
    Ok(total / examples.len() as f64)
}

/// Trains low-rank adapters on `selected_layers` to minimize the mean
/// cosine similarity between forget images and their coarse prompt, then
/// folds them.
pub fn forget_stage<T: Scalar>(
    original: &ParameterSet<T>,
    task: &UnlearnTask<T>,
    selected_layers: &[String],
    cfg: &StageConfig,
) -> Result<(ParameterSet<T>, ForgetLog)> {
    if selected_layers.is_empty() {
        return Err(Error::config("forgetting needs at least one selected layer"));
    }
    if task.forget.is_empty() {
        return Err(Error::config("forget set is empty"));
    }
    let e = original.spec().embed_dim;
    let mut model = attach_adapters(
        original,
        selected_layers,
        cfg.adapter_rank,
        cfg.adapter_scaling,
        cfg.seed,
    )?;
    let mut batches = Batches::new(task.forget.len(), cfg.forget_batch, cfg.rng(10));
    let mut adam = Adam::<T>::new(cfg.forget_lr);
    let mut log = ForgetLog {
        selected_layers: selected_layers.to_vec(),
        similarity_before: mean_pair_similarity(original, &task.forget)?,
        ..ForgetLog::default()
    };
    for step in 0..cfg.forget_steps {
        let idx = batches.next_batch();
        let params = model.effective();
        let images = stack_images(idx.iter().map(|&i| &task.forget[i].example));
        let prompts: Vec<usize> = idx.iter().map(|&i| task.forget[i].prompt).collect();
        let txt = encode_text(&params, &prompts)?;
        let out = tower::forward(&params, &images, BnMode::Eval)?;
        let inv = T::one() / T::lit(idx.len() as f64);
        let loss = crate::tensor::dot(out.embeddings.data(), txt.data()) * inv;
        check_finite("forget", step, loss)?;
        log.losses.push(loss.to_f64_lossy());
        let d_emb: Vec<T> = txt.data().iter().map(|&t| t * inv).collect();
        debug_assert_eq!(d_emb.len(), idx.len() * e);
        let seeds = Seeds {
            embeddings: Some(&d_emb),
            pre_bn: Vec::new(),
        };
        let g = tower::backward(&params, &out.cache, &seeds, true, false);
        adam.begin_step();
        for (path, (da, db)) in model.adapter_grads(&g.params) {
            let ad = model.adapter_mut(&path).expect("adapter exists");
            adam.update(&format!("{path}.lora_a"), &mut ad.a, &da);
            adam.update(&format!("{path}.lora_b"), &mut ad.b, &db);
        }
    }
    let forgotten = fold_adapters(&model).with_provenance(Provenance::Forgotten);
    log.similarity_after = mean_pair_similarity(&forgotten, &task.forget)?;
    Ok((forgotten, log))
}

// ----------------------------------------------------------------- alignment

#[derive(Debug, Clone)]
pub struct AlignedBatch<T> {
    pub originals: Tensor<T>,
    pub perturbations: Tensor<T>,
    /// `originals + perturbations`, inside [0, 1].
    pub aligned: Tensor<T>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub accepted_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignSettings {
    pub steps: usize,
    pub step_size: f64,
    pub bound: f64,
}

impl From<&StageConfig> for AlignSettings {
    fn from(c: &StageConfig) -> Self {
        AlignSettings {
            steps: c.align_steps,
            step_size: c.align_step_size,
            bound: c.align_bound,
        }
    }
}

/// Per-layer terms of the alignment loss: ‖batch mean − running mean‖ and
/// ‖batch variance − running variance‖.
pub fn alignment_terms<T: Scalar>(
    params: &ParameterSet<T>,
    stats: &[FeatureStats<T>],
) -> Vec<(f64, f64)> {
    let bn = params.bn_statistics();
    stats
        .iter()
        .zip(&bn.layers)
        .map(|(s, r)| {
            let dm: f64 = s
                .mean
                .iter()
                .zip(&r.mean)
                .map(|(&a, &b)| (a - b).to_f64_lossy().powi(2))
                .sum();
            let dv: f64 = s
                .var
                .iter()
                .zip(&r.var)
                .map(|(&a, &b)| (a - b).to_f64_lossy().powi(2))
                .sum();
            (dm.sqrt(), dv.sqrt())
        })
        .collect()
}

fn alignment_loss_and_grad<T: Scalar>(
    params: &ParameterSet<T>,
    images: &Tensor<T>,
    want_grad: bool,
) -> Result<(T, Option<Tensor<T>>)> {
    let out = tower::forward(params, images, BnMode::Eval)?;
    let bn = params.bn_statistics();
    let spec = params.spec();
    let batch = out.cache.batch();
    let sizes = spec.spatial_sizes();
    let mut loss = T::zero();
    let mut taps: Vec<Option<Vec<T>>> = vec![None; spec.blocks.len()];
    for (s, r) in out.feature_stats.iter().zip(&bn.layers) {
        let dm: Vec<T> = s.mean.iter().zip(&r.mean).map(|(&a, &b)| a - b).collect();
        let dv: Vec<T> = s.var.iter().zip(&r.var).map(|(&a, &b)| a - b).collect();
        let nm = crate::tensor::norm(&dm);
        let nv = crate::tensor::norm(&dv);
        loss += nm + nv;
        if !want_grad {
            continue;
        }
        // subgradient 0 at a zero norm
        let gm: Vec<T> = dm
            .iter()
            .map(|&d| if nm > T::zero() { d / nm } else { T::zero() })
            .collect();
        let gv: Vec<T> = dv
            .iter()
            .map(|&d| if nv > T::zero() { d / nv } else { T::zero() })
            .collect();
        let width = s.mean.len();
        let plane = sizes[s.block] * sizes[s.block];
        let inv_n = T::one() / T::lit(s.count as f64);
        let two = T::lit(2.0);
        let pre = out.cache.pre_bn(s.block);
        let mut tap = vec![T::zero(); batch * width * plane];
        for b in 0..batch {
            for c in 0..width {
                let off = (b * width + c) * plane;
                for p in off..off + plane {
                    tap[p] = (gm[c] + gv[c] * two * (pre[p] - s.mean[c])) * inv_n;
                }
            }
        }
        taps[s.block] = Some(tap);
    }
    if !want_grad {
        return Ok((loss, None));
    }
    let seeds = Seeds {
        embeddings: None,
        pre_bn: taps,
    };
    let g = tower::backward(params, &out.cache, &seeds, false, true);
    Ok((loss, g.input))
}

/// Optimizes additive perturbations of `images` so the pre-BatchNorm
/// feature statistics of `original` match its running statistics. Plain
/// gradient descent; a step is accepted only when it lowers the loss,
/// otherwise the step size is halved.
pub fn align_batch<T: Scalar>(
    original: &ParameterSet<T>,
    images: &Tensor<T>,
    settings: AlignSettings,
) -> Result<AlignedBatch<T>> {
    let batch = tower::check_images(original.spec(), images)?;
    if batch < 2 {
        return Err(Error::config("alignment needs a batch of at least two images"));
    }
    let zero = T::zero();
    let one = T::one();
    let bound = T::lit(settings.bound.min(f64::MAX));
    let x = images.data();
    let mut delta = vec![zero; x.len()];
    let (l0, _) = alignment_loss_and_grad(original, images, false)?;
    let mut loss = l0;
    let mut eta = T::lit(settings.step_size);
    let mut accepted = 0;
    let mut current = images.clone();
    for _ in 0..settings.steps {
        if loss == zero {
            break;
        }
        let (_, grad) = alignment_loss_and_grad(original, &current, true)?;
        let grad = grad.expect("input gradient requested");
        let mut improved = false;
        for _ in 0..30 {
            let cand_delta: Vec<T> = delta
                .iter()
                .zip(grad.data())
                .zip(x)
                .map(|((&d, &g), &xi)| {
                    let nd = (d - eta * g).max(-bound).min(bound);
                    (xi + nd).max(zero).min(one) - xi
                })
                .collect();
            let cand = Tensor::from_vec(
                images.shape(),
                x.iter().zip(&cand_delta).map(|(&a, &d)| a + d).collect(),
            )?;
            let (cl, _) = alignment_loss_and_grad(original, &cand, false)?;
            if cl < loss {
                delta = cand_delta;
                current = cand;
                loss = cl;
                improved = true;
                break;
            }
            eta = eta * T::lit(0.5);
        }
        if !improved {
            break;
        }
        accepted += 1;
    }
    Ok(AlignedBatch {
        originals: images.clone(),
        perturbations: Tensor::from_vec(images.shape(), delta)?,
        aligned: current,
        initial_loss: l0.to_f64_lossy(),
        final_loss: loss.to_f64_lossy(),
        accepted_steps: accepted,
    })
}

/// Alignment loss of a batch as it stands.
pub fn alignment_loss<T: Scalar>(original: &ParameterSet<T>, images: &Tensor<T>) -> Result<f64> {
    Ok(alignment_loss_and_grad(original, images, false)?.0.to_f64_lossy())
}

// ----------------------------------------------------------------- reminding

/// `ema ← decay · ema + (1 − decay) · theta`, entry by entry.
pub fn ema_update<T: Scalar>(ema: &mut ParameterSet<T>, theta: &ParameterSet<T>, decay: f64) {
    let a = T::lit(decay);
    let b = T::one() - a;
    let names: Vec<String> = ema.entries().keys().cloned().collect();
    for name in names {
        let t = theta.tensor(&name);
        let slot = ema.tensor_mut(&name);
        for (e, &v) in slot.data_mut().iter_mut().zip(t.data()) {
            *e = a * *e + b * v;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RemindLog {
    /// Symmetric contrastive loss on aligned retain batches, per step.
    pub losses: Vec<f64>,
    pub align_initial: Vec<f64>,
    pub align_final: Vec<f64>,
}

/// Fine-tunes the forgotten model on BN-aligned retain images with fine
/// labels and returns the EMA of the trajectory, started at `original`.
pub fn remind_stage<T: Scalar>(
    forgotten: &ParameterSet<T>,
    original: &ParameterSet<T>,
    task: &UnlearnTask<T>,
    selected_layers: &[String],
    cfg: &StageConfig,
) -> Result<(ParameterSet<T>, RemindLog)> {
    if task.retain.is_empty() {
        return Err(Error::config("retain set is empty"));
    }
    forgotten.check_compatible(original)?;
    let prompts = task.taxonomy.subgroup_prompts();
    let position: BTreeMap<usize, usize> =
        prompts.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let trainable: Option<Vec<String>> = cfg.remind_selected_only.then(|| {
        selected_layers
            .iter()
            .filter_map(|p| original.spec().layer(p))
            .flat_map(|l| l.params)
            .collect()
    });
    let mut theta = forgotten.clone();
    let mut ema = original.clone();
    let mut batches = Batches::new(task.retain.len(), cfg.remind_batch, cfg.rng(20));
    let mut adam = Adam::<T>::new(cfg.remind_lr);
    let mut log = RemindLog::default();
    let settings = AlignSettings::from(cfg);
    for step in 0..cfg.remind_steps {
        let mut idx = batches.next_batch();
        if idx.len() < 2 {
            idx = batches.next_batch();
        }
        let images = stack_images(idx.iter().map(|&i| &task.retain[i].example));
        let aligned = align_batch(original, &images, settings)?;
        log.align_initial.push(aligned.initial_loss);
        log.align_final.push(aligned.final_loss);
        let labels: Vec<usize> = idx
            .iter()
            .map(|&i| {
                position
                    .get(&task.retain[i].prompt)
                    .copied()
                    .ok_or_else(|| Error::config("retain example paired with a non-subgroup prompt"))
            })
            .collect::<Result<_>>()?;
        let mask = PositiveMask::from_labels(&labels, prompts.len());
        let g = contrastive_grads(&theta, &aligned.aligned, &prompts, &mask, true, BnMode::Eval, false)?;
        check_finite("remind", step, g.loss)?;
        log.losses.push(g.loss.to_f64_lossy());
        adam.begin_step();
        for (name, grad) in &g.image {
            if trainable.as_ref().is_some_and(|t| !t.contains(name)) {
                continue;
            }
            adam.update(name, theta.tensor_mut(name), grad);
        }
        ema_update(&mut ema, &theta, cfg.ema_decay);
    }
    let mut out = ema.with_provenance(Provenance::Reminded);
    out.meta.seed = forgotten.meta.seed;
    out.meta.adapters = forgotten.meta.adapters.clone();
    Ok((out, log))
}

// --------------------------------------------------------------- restoration

/// `alpha · theta_f + (1 − alpha) · theta_ori` for every entry, including
/// BatchNorm running statistics. The endpoints return an input exactly.
pub fn merge_models<T: Scalar>(
    theta_f: &ParameterSet<T>,
    theta_ori: &ParameterSet<T>,
    alpha: f64,
) -> Result<ParameterSet<T>> {
    theta_f.check_compatible(theta_ori)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("merge coefficient {alpha} outside [0, 1]")));
    }
    if alpha == 1.0 {
        return Ok(theta_f.clone().with_provenance(Provenance::Merged));
    }
    if alpha == 0.0 {
        return Ok(theta_ori.clone().with_provenance(Provenance::Merged));
    }
    let a = T::lit(alpha);
    let b = T::one() - a;
    Ok(theta_f
        .map_entries(|name, t| t.zip_map(theta_ori.tensor(name), |x, y| a * x + b * y))
        .with_provenance(Provenance::Merged))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RestoreLog {
    /// `(alpha, calibration accuracy)` per grid point, in grid order.
    pub grid: Vec<(f64, f64)>,
    pub alpha: f64,
}

/// Model restored with merge coefficient `alpha`, the weight placed on the
/// original model.
pub fn restored_at<T: Scalar>(
    reminded: &ParameterSet<T>,
    original: &ParameterSet<T>,
    alpha: f64,
) -> Result<ParameterSet<T>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("merge coefficient {alpha} outside [0, 1]")));
    }
    let mut p = merge_models(reminded, original, 1.0 - alpha)?.with_provenance(Provenance::Restored);
    p.meta.seed = reminded.meta.seed;
    p.meta.adapters = reminded.meta.adapters.clone();
    Ok(p)
}

/// Picks the grid coefficient with the best calibration accuracy; ties go to
/// the smaller coefficient, which stays closer to the unlearned model.
pub fn restore_stage<T: Scalar>(
    reminded: &ParameterSet<T>,
    original: &ParameterSet<T>,
    calibration: &EvalSuite<T>,
    grid: &[f64],
) -> Result<(f64, ParameterSet<T>, RestoreLog)> {
    if grid.is_empty() {
        return Err(Error::config("merge grid is empty"));
    }
    if calibration.is_empty() {
        return Err(Error::config("calibration set is empty"));
    }
    let mut log = RestoreLog::default();
    let mut best: Option<(f64, f64)> = None;
    for &alpha in grid {
        let acc = accuracy(&restored_at(reminded, original, alpha)?, calibration)?;
        log.grid.push((alpha, acc));
        best = match best {
            Some((ba, bacc)) if bacc > acc || (bacc == acc && ba <= alpha) => Some((ba, bacc)),
            _ => Some((alpha, acc)),
        };
    }
    let (alpha, _) = best.expect("non-empty grid");
    log.alpha = alpha;
    Ok((alpha, restored_at(reminded, original, alpha)?, log))
}

/// Uniform element-wise average of unlearned checkpoints.
pub fn continuous_merge<T: Scalar>(
    unlearned: &[ParameterSet<T>],
    reference: &ParameterSet<T>,
) -> Result<ParameterSet<T>> {
    let first = unlearned
        .first()
        .ok_or_else(|| Error::config("nothing to merge"))?;
    for p in unlearned {
        p.check_compatible(reference)?;
    }
    if unlearned.len() == 1 {
        return Ok(first.clone());
    }
    let inv = T::one() / T::lit(unlearned.len() as f64);
    let merged = first.map_entries(|name, _| {
        let mut acc = unlearned[0].tensor(name).clone();
        for p in &unlearned[1..] {
            acc.add_scaled(p.tensor(name), T::one());
        }
        acc.map(|v| v * inv)
    });
    let mut merged = merged.with_provenance(Provenance::Merged);
    merged.meta.adapters = None;
    Ok(merged)
}

// ------------------------------------------------------------- full pipeline

#[derive(Debug, Clone)]
pub struct PipelineOutput<T> {
    pub scores: LayerScoreMap,
    pub forgotten: ParameterSet<T>,
    pub reminded: ParameterSet<T>,
    pub restored: ParameterSet<T>,
    pub alpha: f64,
    pub forget_log: ForgetLog,
    pub remind_log: RemindLog,
    pub restore_log: RestoreLog,
}

/// Scores and selects adaptable layers by relative Fisher information.
pub fn choose_layers<T: Scalar>(
    original: &ParameterSet<T>,
    task: &UnlearnTask<T>,
    cfg: &StageConfig,
) -> Result<(LayerScoreMap, Vec<String>)> {
    let scores = relative_fisher(
        original,
        &task.forget,
        &task.retain,
        cfg.fisher_epsilon,
        cfg.fisher_objective,
    )?;
    let adaptable: Vec<String> = original
        .spec()
        .image_layers()
        .into_iter()
        .filter(|l| l.matrix.is_some())
        .map(|l| l.path)
        .filter(|p| cfg.adapt_layers.is_empty() || cfg.adapt_layers.contains(p))
        .collect();
    if let Some(bad) = cfg.adapt_layers.iter().find(|p| !adaptable.contains(p)) {
        return Err(Error::config(format!("{bad} is not an adaptable image layer")));
    }
    let candidates = scores.restricted(&adaptable);
    let k = if cfg.layers_k == 0 {
        default_k(adaptable.len())
    } else {
        cfg.layers_k
    };
    let selected = select_layers(&candidates, k)?;
    Ok((scores, selected))
}

/// Reminding and restoration applied to an existing forgotten model.
pub fn remind_and_restore<T: Scalar>(
    original: &ParameterSet<T>,
    forgotten: &ParameterSet<T>,
    task: &UnlearnTask<T>,
    selected: &[String],
    cfg: &StageConfig,
) -> Result<(ParameterSet<T>, RemindLog, f64, ParameterSet<T>, RestoreLog)> {
    let (reminded, remind_log) = remind_stage(forgotten, original, task, selected, cfg)?;
    let (alpha, restored, restore_log) =
        restore_stage(&reminded, original, &task.calibration, &cfg.merge_grid)?;
    Ok((reminded, remind_log, alpha, restored, restore_log))
}

pub fn run_pipeline<T: Scalar>(
    original: &ParameterSet<T>,
    task: &UnlearnTask<T>,
    cfg: &StageConfig,
) -> Result<PipelineOutput<T>> {
    cfg.validate()?;
    let (scores, selected) = choose_layers(original, task, cfg)?;
    let (forgotten, forget_log) = forget_stage(original, task, &selected, cfg)?;
    let (reminded, remind_log, alpha, restored, restore_log) =
        remind_and_restore(original, &forgotten, task, &selected, cfg)?;
    Ok(PipelineOutput {
        scores,
        forgotten,
        reminded,
        restored,
        alpha,
        forget_log,
        remind_log,
        restore_log,
    })
}
