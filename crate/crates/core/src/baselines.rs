//! Comparison unlearning methods: FT, GA, Fisher noise, LIP and EMMN.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{stack_images, PromptedExample, UnlearnTask};
use crate::error::{Error, Result};
use crate::model::loss::PositiveMask;
use crate::model::optim::Adam;
use crate::model::train::{check_finite, contrastive_grads, Batches};
use crate::model::tower::{self, BnMode, Seeds};
use crate::model::{encode_text, ParameterSet, Provenance};
use crate::scalar::Scalar;
use crate::selection::{param_fisher, FisherObjective};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Ft,
    Ga,
    FisherNoise,
    Lip,
    Emmn,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Ft,
        Method::Ga,
        Method::FisherNoise,
        Method::Lip,
        Method::Emmn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ft => "FT",
            Method::Ga => "GA",
            Method::FisherNoise => "FISHER_NOISE",
            Method::Lip => "LIP",
            Method::Emmn => "EMMN",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown baseline {s:?}; expected one of FT, GA, FISHER_NOISE, LIP, EMMN"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub ft_epochs: usize,
    pub ga_epochs: usize,
    pub emmn_epochs: usize,
    pub lip_epochs: usize,
    /// Noisy copies per forget image.
    pub lip_copies: usize,
    /// Standard deviation of the LIP pixel noise.
    pub lip_sigma: f64,
    /// Scale of the Fisher-noise variance.
    pub fisher_alpha_var: f64,
    /// Added to the Fisher diagonal before the power is taken.
    pub fisher_floor: f64,
    /// `true`: std ∝ F^{-1/4} (important parameters get less noise);
    /// `false`: std ∝ F^{1/4}.
    pub fisher_inverse: bool,
    pub fisher_objective: FisherObjective,
    /// GA stops ascending once the forget loss reaches this magnitude.
    pub ga_loss_clip: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            lr: 1e-3,
            batch_size: 128,
            ft_epochs: 2,
            ga_epochs: 2,
            emmn_epochs: 5,
            lip_epochs: 2,
            lip_copies: 10,
            lip_sigma: 0.1,
            fisher_alpha_var: 0.2,
            fisher_floor: 1e-8,
            fisher_inverse: true,
            fisher_objective: FisherObjective::Contrastive,
            ga_loss_clip: 50.0,
            seed: 0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 {
            return Err(Error::config("baseline lr and batch_size must be positive"));
        }
        if self.lip_copies == 0 || !(self.lip_sigma > 0.0) {
            return Err(Error::config("LIP needs at least one noisy copy and sigma > 0"));
        }
        if !(self.fisher_alpha_var >= 0.0) || !(self.fisher_floor > 0.0) {
            return Err(Error::config("fisher_alpha_var >= 0 and fisher_floor > 0 required"));
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineLog {
    pub losses: Vec<f64>,
}

pub fn run_baseline<T: Scalar>(
    method: Method,
    original: &ParameterSet<T>,
    task: &UnlearnTask<T>,
    cfg: &BaselineConfig,
) -> Result<(ParameterSet<T>, BaselineLog)> {
    cfg.validate()?;
    let (p, log) = match method {
        Method::Ft => ft_baseline(original, task, cfg)?,
        Method::Ga => ga_baseline(original, task, cfg)?,
        Method::FisherNoise => (fisher_noise_baseline(original, task, cfg)?, BaselineLog::default()),
        Method::Lip => lip_baseline(original, task, cfg)?,
        Method::Emmn => emmn_baseline(original, task, cfg)?,
    };
    Ok((p.with_provenance(Provenance::Baseline(method.name().into())), log))
}

/// Image→text cross-entropy of each example's paired prompt among
/// `class_prompts`, with image-tower gradients.
fn classification_grads<T: Scalar>(
    params: &ParameterSet<T>,
    examples: &[&PromptedExample<T>],
    class_prompts: &[usize],
) -> Result<(T, BTreeMap<String, Tensor<T>>)> {
    let labels: Vec<usize> = examples
        .iter()
        .map(|e| {
            class_prompts
                .iter()
                .position(|&p| p == e.prompt)
                .ok_or_else(|| Error::config("example prompt is not a candidate class"))
        })
        .collect::<Result<_>>()?;
    let images = stack_images(examples.iter().map(|e| &e.example));
    let mask = PositiveMask::from_labels(&labels, class_prompts.len());
    let g = contrastive_grads(params, &images, class_prompts, &mask, false, BnMode::Eval, false)?;
    Ok((g.loss, g.image))
}

fn apply<T: Scalar>(
    adam: &mut Adam<T>,
    params: &mut ParameterSet<T>,
    grads: &BTreeMap<String, Tensor<T>>,
) {
    adam.begin_step();
    for (name, g) in grads {
        adam.update(name, params.tensor_mut(name), g);
    }
}

fn negate<T: Scalar>(grads: &mut BTreeMap<String, Tensor<T>>) {
    for g in grads.values_mut() {
        g.data_mut().iter_mut().for_each(|v| *v = -*v);
    }
}

/// Fine-tunes the image tower on the retain set with its fine labels.
pub fn ft_baseline<T: Scalar>(
    original: &ParameterSet<T>,
    task: &UnlearnTask<T>,
    cfg: &BaselineConfig,
) -> Result<(ParameterSet<T>, BaselineLog)> {
    let prompts = task.taxonomy.subgroup_prompts();
    let mut params = original.clone();
    let mut log = BaselineLog::default();
    if task.retain.is_empty() {
        return Ok((params, log));
    }
    let mut batches = Batches::new(task.retain.len(), cfg.batch_size, cfg.rng(1));
    let mut adam = Adam::new(cfg.lr);
    for step in 0..cfg.ft_epochs * batches.per_epoch() {
        let idx = batches.next_batch();
        let ex: Vec<_> = idx.iter().map(|&i| &task.retain[i]).collect();
        let (loss, grads) = classification_grads(&params, &ex, &prompts)?;
        check_finite("FT", step, loss)?;
        log.losses.push(loss.to_f64_lossy());
        apply(&mut adam, &mut params, &grads);
    }
    Ok((params, log))
}

/// Gradient ascent of the coarse-label loss on the forget set.
pub fn ga_baseline<T: Scalar>(
    original: &ParameterSet<T>,
    task: &UnlearnTask<T>,
    cfg: &BaselineConfig,
) -> Result<(ParameterSet<T>, BaselineLog)> {
    let prompts = task.taxonomy.superclass_prompts();
    let mut params = original.clone();
    let mut log = BaselineLog::default();
    if task.forget.is_empty() {
        return Err(Error::config("forget set is empty"));
    }
    let mut batches = Batches::new(task.forget.len(), cfg.batch_size, cfg.rng(2));
    let mut adam = Adam::new(cfg.lr);
    for step in 0..cfg.ga_epochs * batches.per_epoch() {
        let idx = batches.next_batch();
        let ex: Vec<_> = idx.iter().map(|&i| &task.forget[i]).collect();
        let (loss, mut grads) = classification_grads(&params, &ex, &prompts)?;
        check_finite("GA", step, loss)?;
        let l = loss.to_f64_lossy();
        log.losses.push(l);
        if l.abs() >= cfg.ga_loss_clip {
            continue;
        }
        negate(&mut grads);
        apply(&mut adam, &mut params, &grads);
    }
    Ok((params, log))
}

/// Standard deviation of the Fisher noise for one Fisher diagonal value.
pub fn fisher_noise_std(fisher: f64, cfg: &BaselineConfig) -> f64 {
    let f = fisher + cfg.fisher_floor;
    let power = if cfg.fisher_inverse { -0.25 } else { 0.25 };
    cfg.fisher_alpha_var.sqrt() * f.powf(power)
}

/// Adds zero-mean Gaussian noise to every trainable image-tower entry, with
/// variance `alpha_var · (F + floor)^{∓1/2}` from the forget-set Fisher
/// diagonal.
pub fn fisher_noise_baseline<T: Scalar>(
    original: &ParameterSet<T>,
    task: &UnlearnTask<T>,
    cfg: &BaselineConfig,
) -> Result<ParameterSet<T>> {
    if cfg.fisher_alpha_var == 0.0 {
        return Ok(original.clone());
    }
    let fisher = param_fisher(original, &task.forget, cfg.fisher_objective)?;
    let mut rng = cfg.rng(3);
    let mut params = original.clone();
    for (name, f) in &fisher {
        let t = params.tensor_mut(name);
        for (v, &fv) in t.data_mut().iter_mut().zip(f.data()) {
            let std = fisher_noise_std(fv.to_f64_lossy(), cfg);
            let n = Normal::new(0.0, std).map_err(|e| Error::config(e.to_string()))?;
            *v += T::lit(n.sample(&mut rng));
        }
    }
    Ok(params)
}

/// LIP loss terms for one batch of forget images and their noisy copies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipLoss {
    pub emb: f64,
    pub cls: f64,
}

/// Minimizes the local Lipschitz ratios of the image embedding and of the
/// class-similarity vector around forget images.
pub fn lip_baseline<T: Scalar>(
    original: &ParameterSet<T>,
    task: &UnlearnTask<T>,
    cfg: &BaselineConfig,
) -> Result<(ParameterSet<T>, BaselineLog)> {
    if task.forget.is_empty() {
        return Err(Error::config("forget set is empty"));
    }
    let mut params = original.clone();
    let mut log = BaselineLog::default();
    let mut batches = Batches::new(task.forget.len(), cfg.batch_size, cfg.rng(4));
    let mut noise_rng = cfg.rng(5);
    let mut adam = Adam::new(cfg.lr);
    let class_prompts = task.taxonomy.superclass_prompts();
    for step in 0..cfg.lip_epochs * batches.per_epoch() {
        let idx = batches.next_batch();
        let clean = stack_images(idx.iter().map(|&i| &task.forget[i].example));
        let (loss, grads) = lip_grads(&params, &clean, &class_prompts, cfg, &mut noise_rng)?;
        let total = T::lit(loss.emb + loss.cls);
        check_finite("LIP", step, total)?;
        log.losses.push(loss.emb + loss.cls);
        apply(&mut adam, &mut params, &grads);
    }
    Ok((params, log))
}

/// Loss and image-tower gradients of `L_emb + L_cls` for a clean batch.
pub fn lip_grads<T: Scalar>(
    params: &ParameterSet<T>,
    clean: &Tensor<T>,
    class_prompts: &[usize],
    cfg: &BaselineConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(LipLoss, BTreeMap<String, Tensor<T>>)> {
    let b = tower::check_images(params.spec(), clean)?;
    let n = cfg.lip_copies;
    let per: usize = clean.shape()[1..].iter().product();
    let normal = Normal::new(0.0, cfg.lip_sigma).map_err(|e| Error::config(e.to_string()))?;
    // layout: b clean images, then n copies of each
    let mut data = clean.data().to_vec();
    let mut eps_norm = vec![0.0f64; b * n];
    for i in 0..b {
        for c in 0..n {
            let mut sq = 0.0;
            for v in &clean.data()[i * per..(i + 1) * per] {
                let e = normal.sample(rng);
                sq += e * e;
                data.push(*v + T::lit(e));
            }
            eps_norm[i * n + c] = sq.sqrt();
        }
    }
    let mut shape = clean.shape().to_vec();
    shape[0] = b * (n + 1);
    let images = Tensor::from_vec(&shape, data)?;
    let out = tower::forward(params, &images, BnMode::Eval)?;
    let e = params.spec().embed_dim;
    let txt = encode_text(params, class_prompts)?;
    let k = class_prompts.len();
    let emb = out.embeddings.data();
    let mut d_emb = vec![T::zero(); emb.len()];
    let mut loss = LipLoss { emb: 0.0, cls: 0.0 };
    let weight = 1.0 / (b * n) as f64;
    for i in 0..b {
        let ei = &emb[i * e..(i + 1) * e];
        for c in 0..n {
            let j = b + i * n + c;
            let ej = &emb[j * e..(j + 1) * e];
            let w = T::lit(weight / eps_norm[i * n + c]);
            let diff: Vec<T> = ei.iter().zip(ej).map(|(&a, &bv)| a - bv).collect();
            let dn = crate::tensor::norm(&diff);
            loss.emb += (dn * w).to_f64_lossy();
            // class similarities: l = T e
            let ldiff = crate::tensor::matmul(txt.data(), &diff, k, e, 1);
            let ln = crate::tensor::norm(&ldiff);
            loss.cls += (ln * w).to_f64_lossy();
            let mut g = vec![T::zero(); e];
            if dn > T::zero() {
                for (gv, &d) in g.iter_mut().zip(&diff) {
                    *gv += w * d / dn;
                }
            }
            if ln > T::zero() {
                let back = crate::tensor::matmul_at(txt.data(), &ldiff, k, e, 1);
                for (gv, &d) in g.iter_mut().zip(&back) {
                    *gv += w * d / ln;
                }
            }
            for t in 0..e {
                d_emb[i * e + t] += g[t];
                d_emb[j * e + t] -= g[t];
            }
        }
    }
    let seeds = Seeds {
        embeddings: Some(&d_emb),
        pre_bn: Vec::new(),
    };
    let grads = tower::backward(params, &out.cache, &seeds, true, false).params;
    Ok((loss, grads))
}

/// Jointly ascends the coarse-label loss on the forget set and descends the
/// fine-label loss on the retain set.
pub fn emmn_baseline<T: Scalar>(
    original: &ParameterSet<T>,
    task: &UnlearnTask<T>,
    cfg: &BaselineConfig,
) -> Result<(ParameterSet<T>, BaselineLog)> {
    let coarse = task.taxonomy.superclass_prompts();
    let fine = task.taxonomy.subgroup_prompts();
    let mut params = original.clone();
    let mut log = BaselineLog::default();
    if task.retain.is_empty() {
        return Err(Error::config("retain set is empty"));
    }
    let mut retain_batches = Batches::new(task.retain.len(), cfg.batch_size, cfg.rng(6));
    let mut forget_batches = Batches::new(task.forget.len(), cfg.batch_size, cfg.rng(7));
    let mut adam = Adam::new(cfg.lr);
    for step in 0..cfg.emmn_epochs * retain_batches.per_epoch() {
        let idx = retain_batches.next_batch();
        let ex: Vec<_> = idx.iter().map(|&i| &task.retain[i]).collect();
        let (mut loss, mut grads) = classification_grads(&params, &ex, &fine)?;
        if !task.forget.is_empty() {
            let fidx = forget_batches.next_batch();
            let fex: Vec<_> = fidx.iter().map(|&i| &task.forget[i]).collect();
            let (floss, fgrads) = classification_grads(&params, &fex, &coarse)?;
            loss -= floss;
            for (name, g) in grads.iter_mut() {
                g.add_scaled(&fgrads[name], -T::one());
            }
        }
        check_finite("EMMN", step, loss)?;
        log.losses.push(loss.to_f64_lossy());
        apply(&mut adam, &mut params, &grads);
    }
    Ok((params, log))
}
