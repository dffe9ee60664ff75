//! Acceptance harness: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Criteria 7 to 10 share one pre-trained reference model built in a
//! temporary directory (a few minutes in release-like test builds).

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use unlearn_core::baselines::Method;
use unlearn_core::data::{Direction, LabeledExample, PromptedExample, StyleId, SuiteGroup};
use unlearn_core::eval::aggregate_score;
use unlearn_core::model::loss::PositiveMask;
use unlearn_core::model::tower::{self, BnMode};
use unlearn_core::model::train::contrastive_grads;
use unlearn_core::model::{encode_image, encode_text, BlockSpec, BnLayerStats, BnStatistics, ModelSpec, ParameterSet};
use unlearn_core::pipeline::{align_batch, alignment_loss, ema_update, merge_models, AlignSettings};
use unlearn_core::runner::{cmd_unlearn, Overrides, RunConfig, Runner, SweepAxis};
use unlearn_core::selection::{relative_fisher, select_layers, FisherObjective};
use unlearn_core::Tensor;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// --------------------------------------------------------------- criterion 1

/// Published restoration ratios (percent) and Scores. `forget` is the column
/// whose ratio enters as `1 - ratio`.
struct Row {
    table: &'static str,
    method: &'static str,
    forget: usize,
    ratios: [f64; 7],
    score: f64,
}

const fn row(table: &'static str, method: &'static str, forget: usize, ratios: [f64; 7], score: f64) -> Row {
    Row {
        table,
        method,
        forget,
        ratios,
        score,
    }
}

// columns: target, retain, all, cifar, food, stl, objectnet
const BREEDS: usize = 0;
// columns: target, retain, food, stl, objectnet, imagenet target, imagenet all
const CIFAR: usize = 0;
// columns: cifar, food, stl, objectnet, target style, retain, all
const STYLE: usize = 4;

#[rustfmt::skip]
const PUBLISHED: &[Row] = &[
    row("marmoset/RN50", "FT", BREEDS, [4.9, 100.0, 42.8, 19.2, 28.5, 46.8, 28.4], 51.6),
    row("marmoset/RN50", "GA", BREEDS, [0.0, 1.6, 53.8, 23.3, 37.6, 68.8, 32.1], 45.3),
    row("marmoset/RN50", "Fisher", BREEDS, [0.3, 0.9, 2.1, 14.7, 0.3, 11.4, 4.4], 19.1),
    row("marmoset/RN50", "LIP", BREEDS, [1.4, 3.6, 2.2, 15.2, 0.3, 11.2, 2.3], 18.6),
    row("marmoset/RN50", "EMMN", BREEDS, [0.0, 100.0, 47.5, 18.6, 33.5, 59.7, 29.7], 55.6),
    row("marmoset/RN50", "CLIP-LIP", BREEDS, [5.1, 0.7, 29.6, 26.7, 6.9, 55.2, 18.1], 33.2),
    row("marmoset/RN50", "Ours", BREEDS, [0.0, 91.7, 91.1, 100.0, 100.0, 88.6, 65.6], 91.0),
    row("marmoset/RN101", "FT", BREEDS, [2.0, 100.0, 44.3, 18.3, 7.6, 38.0, 25.0], 47.3),
    row("marmoset/RN101", "GA", BREEDS, [1.1, 0.5, 58.1, 30.9, 51.1, 63.4, 28.0], 47.3),
    row("marmoset/RN101", "Fisher", BREEDS, [1.4, 0.7, 0.5, 18.2, 0.3, 10.3, 1.4], 18.6),
    row("marmoset/RN101", "LIP", BREEDS, [0.3, 0.5, 3.2, 16.1, 0.3, 11.6, 2.7], 19.2),
    row("marmoset/RN101", "EMMN", BREEDS, [1.1, 100.0, 48.3, 35.1, 18.8, 10.8, 34.4], 49.5),
    row("marmoset/RN101", "CLIP-LIP", BREEDS, [4.1, 2.9, 51.4, 44.4, 19.0, 53.7, 21.5], 41.2),
    row("marmoset/RN101", "Ours", BREEDS, [0.0, 90.7, 93.9, 100.0, 99.3, 100.0, 66.3], 92.9),
    row("box turtle/RN50", "FT", BREEDS, [0.0, 100.0, 43.5, 17.9, 47.0, 76.4, 29.3], 59.2),
    row("box turtle/RN50", "GA", BREEDS, [0.0, 18.9, 70.4, 20.7, 65.7, 84.6, 30.9], 55.8),
    row("box turtle/RN50", "Fisher", BREEDS, [1.9, 2.8, 5.9, 13.8, 0.7, 11.4, 2.3], 19.3),
    row("box turtle/RN50", "LIP", BREEDS, [0.6, 4.8, 25.4, 15.1, 10.0, 25.8, 16.4], 28.1),
    row("box turtle/RN50", "EMMN", BREEDS, [0.2, 81.4, 47.0, 17.8, 36.3, 70.3, 25.5], 54.0),
    row("box turtle/RN50", "CLIP-LIP", BREEDS, [2.9, 2.8, 53.3, 27.7, 11.3, 69.1, 49.6], 44.4),
    row("box turtle/RN50", "Ours", BREEDS, [0.0, 98.7, 84.6, 77.4, 82.9, 95.2, 62.6], 85.9),
    row("box turtle/RN101", "FT", BREEDS, [0.0, 88.2, 52.0, 17.7, 48.5, 71.4, 34.0], 58.8),
    row("box turtle/RN101", "GA", BREEDS, [0.0, 28.7, 74.5, 18.9, 70.5, 81.8, 37.4], 58.8),
    row("box turtle/RN101", "Fisher", BREEDS, [2.9, 3.1, 1.4, 17.1, 0.5, 10.3, 0.9], 18.6),
    row("box turtle/RN101", "LIP", BREEDS, [1.2, 4.2, 20.7, 16.0, 14.7, 18.3, 21.2], 27.7),
    row("box turtle/RN101", "EMMN", BREEDS, [0.0, 63.0, 52.2, 14.3, 39.1, 65.8, 33.1], 52.5),
    row("box turtle/RN101", "CLIP-LIP", BREEDS, [6.9, 14.0, 61.2, 59.8, 30.7, 72.3, 26.9], 51.1),
    row("box turtle/RN101", "Ours", BREEDS, [0.0, 100.0, 95.2, 100.0, 97.4, 99.0, 66.8], 94.1),
    row("airplane/RN50", "FT", CIFAR, [0.0, 100.0, 1.8, 45.3, 0.3, 0.0, 0.5], 35.4),
    row("airplane/RN50", "GA", CIFAR, [0.0, 20.2, 1.6, 15.3, 0.1, 0.4, 0.2], 19.7),
    row("airplane/RN50", "Fisher", CIFAR, [0.0, 18.6, 1.6, 16.5, 0.4, 0.0, 0.2], 19.6),
    row("airplane/RN50", "LIP", CIFAR, [0.0, 22.3, 2.1, 16.2, 0.4, 0.2, 0.3], 20.2),
    row("airplane/RN50", "EMMN", CIFAR, [0.0, 100.0, 2.6, 45.2, 0.3, 0.0, 0.8], 35.6),
    row("airplane/RN50", "CLIP-LIP", CIFAR, [1.4, 38.6, 11.7, 54.2, 45.3, 64.4, 44.8], 51.1),
    row("airplane/RN50", "Ours", CIFAR, [9.3, 92.5, 85.2, 93.2, 84.0, 92.9, 83.8], 88.9),
    row("airplane/RN101", "FT", CIFAR, [0.0, 100.0, 1.9, 63.2, 0.6, 0.0, 0.3], 38.0),
    row("airplane/RN101", "GA", CIFAR, [0.0, 17.2, 1.6, 16.2, 0.4, 0.0, 0.2], 19.4),
    row("airplane/RN101", "Fisher", CIFAR, [0.0, 20.0, 1.7, 18.3, 0.4, 0.2, 0.3], 20.1),
    row("airplane/RN101", "LIP", CIFAR, [0.0, 21.4, 2.8, 17.0, 0.3, 0.0, 0.5], 20.3),
    row("airplane/RN101", "EMMN", CIFAR, [0.0, 100.0, 2.1, 61.4, 0.4, 0.2, 0.3], 37.8),
    row("airplane/RN101", "CLIP-LIP", CIFAR, [10.7, 55.1, 18.2, 68.3, 43.9, 39.7, 31.8], 49.5),
    row("airplane/RN101", "Ours", CIFAR, [12.7, 98.1, 85.2, 94.9, 84.0, 88.1, 66.1], 86.2),
    row("truck/RN50", "FT", CIFAR, [0.0, 76.7, 2.1, 31.8, 0.6, 0.0, 0.3], 30.2),
    row("truck/RN50", "GA", CIFAR, [0.0, 27.5, 2.0, 21.0, 0.4, 0.0, 0.2], 21.6),
    row("truck/RN50", "Fisher", CIFAR, [0.0, 16.9, 2.0, 21.0, 0.4, 0.0, 0.2], 19.2),
    row("truck/RN50", "LIP", CIFAR, [0.0, 18.9, 1.5, 13.4, 0.6, 0.2, 0.3], 19.3),
    row("truck/RN50", "EMMN", CIFAR, [0.0, 66.1, 2.1, 23.0, 0.3, 0.0, 0.2], 27.4),
    row("truck/RN50", "CLIP-LIP", CIFAR, [7.0, 61.7, 27.3, 80.7, 48.8, 55.3, 66.1], 61.8),
    row("truck/RN50", "Ours", CIFAR, [1.7, 86.1, 82.9, 91.7, 81.9, 98.5, 87.1], 89.5),
    row("truck/RN101", "FT", CIFAR, [0.0, 73.2, 2.4, 43.7, 0.4, 0.2, 0.5], 31.5),
    row("truck/RN101", "GA", CIFAR, [0.0, 25.4, 2.1, 20.9, 0.3, 0.0, 0.2], 21.3),
    row("truck/RN101", "Fisher", CIFAR, [0.0, 16.5, 1.7, 15.4, 0.4, 0.2, 0.2], 19.2),
    row("truck/RN101", "LIP", CIFAR, [0.0, 19.7, 2.8, 17.0, 0.4, 0.0, 0.3], 20.0),
    row("truck/RN101", "EMMN", CIFAR, [0.0, 60.7, 2.4, 38.7, 0.1, 0.2, 0.3], 28.9),
    row("truck/RN101", "CLIP-LIP", CIFAR, [10.5, 66.3, 34.0, 82.3, 73.3, 84.0, 70.0], 71.3),
    row("truck/RN101", "Ours", CIFAR, [3.5, 88.4, 80.6, 93.7, 84.2, 86.8, 74.8], 86.4),
    row("sketch cars", "FT", STYLE, [16.6, 3.6, 11.9, 6.0, 100.0, 100.0, 1.9], 20.0),
    row("sketch cars", "GA", STYLE, [76.8, 76.2, 94.1, 88.4, 2.9, 61.0, 88.9], 83.2),
    row("sketch cars", "Fisher", STYLE, [17.3, 2.9, 18.0, 1.7, 0.1, 0.6, 0.3], 20.1),
    row("sketch cars", "LIP", STYLE, [18.4, 1.7, 15.4, 6.4, 0.0, 0.0, 0.9], 20.4),
    row("sketch cars", "EMMN", STYLE, [26.8, 50.8, 44.3, 30.7, 21.3, 85.1, 8.2], 46.4),
    row("sketch cars", "CLIP-LIP", STYLE, [25.3, 12.5, 21.2, 12.8, 2.3, 2.9, 2.2], 24.9),
    row("sketch cars", "Ours", STYLE, [80.9, 82.4, 91.4, 90.1, 3.1, 80.0, 88.6], 87.2),
];

/// Rows whose printed ratio contradicts the printed accuracies:
/// (table, method, column, ratio recomputed from the accuracies).
const MISPRINTED: &[(&str, &str, usize, f64)] = &[
    // retain accuracy 0.2 of 54.7 is printed with ratio 3.6
    ("marmoset/RN50", "LIP", 1, 100.0 * 0.2 / 54.7),
    // STL accuracy 13.9 of 92.0 is printed with ratio 21.0
    ("truck/RN50", "Fisher", 3, 100.0 * 13.9 / 92.0),
];

/// Seven ratios printed to 0.1 and a Score printed to 0.1 can disagree by
/// up to 0.05 + 0.05.
const ROUNDING_BOUND: f64 = 0.1;

fn score_of(ratios: &[f64; 7], forget: usize) -> f64 {
    let entries: Vec<(f64, Direction)> = ratios
        .iter()
        .enumerate()
        .map(|(i, &r)| (r / 100.0, if i == forget { Direction::Forget } else { Direction::Retain }))
        .collect();
    aggregate_score(&entries).expect("seven entries")
}

fn criterion_1() -> Outcome {
    let mut exact = 0;
    let mut explained = Vec::new();
    for r in PUBLISHED {
        let s = score_of(&r.ratios, r.forget);
        if (s - r.score).abs() < 0.05 {
            exact += 1;
            continue;
        }
        let fixed = MISPRINTED
            .iter()
            .find(|m| m.0 == r.table && m.1 == r.method)
            .map(|m| {
                let mut v = r.ratios;
                v[m.2] = m.3;
                score_of(&v, r.forget)
            });
        let label = format!("{} {}", r.table, r.method);
        match fixed {
            Some(f) if (f - r.score).abs() < 0.05 => explained.push(format!("{label}: misprinted ratio")),
            None if (s - r.score).abs() <= ROUNDING_BOUND => {
                explained.push(format!("{label}: {s:.3} vs {}, rounding", r.score))
            }
            _ => return Err(format!("{label}: computed {s:.3}, printed {}", r.score)),
        }
    }
    for (t, m, want) in [
        ("marmoset/RN50", "Ours", 91.0),
        ("marmoset/RN50", "GA", 45.3),
        ("airplane/RN50", "Ours", 88.9),
        ("sketch cars", "Ours", 87.2),
    ] {
        let r = PUBLISHED.iter().find(|r| r.table == t && r.method == m).unwrap();
        let s = score_of(&r.ratios, r.forget);
        ensure((s - want).abs() < 0.05, || format!("{t} {m}: {s:.3} vs {want}"))?;
    }
    Ok(format!(
        "{exact}/{} rows within 0.05; published inconsistencies: {}",
        PUBLISHED.len(),
        explained.join("; ")
    ))
}

// --------------------------------------------------------- toy model helpers

fn toy_spec() -> ModelSpec {
    ModelSpec {
        in_channels: 1,
        image_size: 6,
        blocks: vec![BlockSpec::new(3, 3, 1, true), BlockSpec::new(4, 3, 2, true)],
        embed_dim: 4,
        vocab: vec!["a".into(), "b".into(), "c".into()],
        temperature: 0.2,
    }
}

fn random_images(rng: &mut ChaCha8Rng, n: usize, spec: &ModelSpec) -> Tensor<f64> {
    let [c, h, w] = spec.input_shape();
    let data = (0..n * c * h * w).map(|_| rng.random::<f64>()).collect();
    Tensor::from_vec(&[n, c, h, w], data).unwrap()
}

fn random_examples(rng: &mut ChaCha8Rng, n: usize, spec: &ModelSpec, id0: u64) -> Vec<PromptedExample<f64>> {
    let [c, h, w] = spec.input_shape();
    (0..n)
        .map(|i| PromptedExample {
            example: LabeledExample {
                id: id0 + i as u64,
                image: Tensor::from_vec(&[c, h, w], (0..c * h * w).map(|_| rng.random::<f64>()).collect())
                    .unwrap(),
                superclass: 0,
                subgroup: 0,
                style: StyleId(0),
            },
            prompt: rng.random_range(0..spec.vocab.len()),
        })
        .collect()
}

/// Finite-difference derivative of `f` along one parameter entry.
fn central_difference(
    params: &ParameterSet<f64>,
    name: &str,
    idx: usize,
    h: f64,
    f: &dyn Fn(&ParameterSet<f64>) -> f64,
) -> f64 {
    let mut p = params.clone();
    p.tensor_mut(name).data_mut()[idx] += h;
    let up = f(&p);
    p.tensor_mut(name).data_mut()[idx] -= 2.0 * h;
    let down = f(&p);
    (up - down) / (2.0 * h)
}

// --------------------------------------------------------------- criterion 2

fn criterion_2() -> Outcome {
    let spec = toy_spec();
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let a = ParameterSet::<f64>::init(spec.clone(), seed).map_err(fail)?;
        let b = ParameterSet::<f64>::init(spec.clone(), seed + 100).map_err(fail)?;
        ensure(merge_models(&a, &b, 1.0).map_err(fail)?.same_values(&a), || "alpha 1 is not theta_f".into())?;
        ensure(merge_models(&a, &b, 0.0).map_err(fail)?.same_values(&b), || "alpha 0 is not theta_ori".into())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..5 {
            let alpha: f64 = rng.random();
            let m = merge_models(&a, &b, alpha).map_err(fail)?;
            for (name, t) in m.entries() {
                let (x, y) = (a.tensor(name).data(), b.tensor(name).data());
                for (i, &v) in t.data().iter().enumerate() {
                    worst = worst.max((v - (y[i] + alpha * (x[i] - y[i]))).abs());
                }
            }
        }
    }
    ensure(worst <= 1e-12, || format!("linearity error {worst:e}"))?;
    Ok(format!("endpoints bitwise; max linearity error {worst:.1e}"))
}

// --------------------------------------------------------------- criterion 3

fn criterion_3() -> Outcome {
    let spec = toy_spec();
    let a = ParameterSet::<f64>::init(spec.clone(), 1).map_err(fail)?;
    let b = ParameterSet::<f64>::init(spec, 2).map_err(fail)?;
    let mut keep = a.clone();
    ema_update(&mut keep, &b, 1.0);
    ensure(keep.same_values(&a), || "decay 1 moved the average".into())?;
    let mut jump = a.clone();
    ema_update(&mut jump, &b, 0.0);
    ensure(jump.same_values(&b), || "decay 0 did not copy theta".into())?;
    let ones = a.map_entries(|_, t| t.map(|_| 1.0));
    let zeros = a.map_entries(|_, t| t.map(|_| 0.0));
    let mut trace = ones;
    ema_update(&mut trace, &zeros, 0.9);
    ensure(
        trace.entries().values().all(|t| t.data().iter().all(|&v| v == 0.9)),
        || "0.9 * 1.0 + 0.1 * 0.0 is not exactly 0.9".into(),
    )?;
    Ok("fixed points exact; scalar trace 0.9 exact".into())
}

// --------------------------------------------------------------- criterion 4

/// Per-layer mean of squared per-example gradients, from finite differences
/// of the image-text similarity.
fn brute_force_layer_fisher(params: &ParameterSet<f64>, examples: &[PromptedExample<f64>]) -> BTreeMap<String, f64> {
    let spec = params.spec().clone();
    let mut out = BTreeMap::new();
    for layer in spec.image_layers() {
        let mut sum = 0.0;
        let mut count = 0usize;
        for name in &layer.params {
            let n = params.tensor(name).numel();
            for idx in 0..n {
                let mut sq = 0.0;
                for ex in examples {
                    let mut shape = vec![1];
                    shape.extend_from_slice(ex.example.image.shape());
                    let img = Tensor::from_vec(&shape, ex.example.image.data().to_vec()).unwrap();
                    let f = |p: &ParameterSet<f64>| {
                        let u = encode_image(p, &img).unwrap();
                        let v = encode_text(p, &[ex.prompt]).unwrap();
                        u.data().iter().zip(v.data()).map(|(a, b)| a * b).sum::<f64>()
                    };
                    let g = central_difference(params, name, idx, 1e-6, &f);
                    sq += g * g;
                }
                sum += sq / examples.len() as f64;
                count += 1;
            }
        }
        out.insert(layer.path, sum / count as f64);
    }
    out
}

fn criterion_4() -> Outcome {
    let spec = toy_spec();
    let params = ParameterSet::<f64>::init(spec.clone(), 3).map_err(fail)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let forget = random_examples(&mut rng, 4, &spec, 0);
    let retain = random_examples(&mut rng, 4, &spec, 100);
    let eps = 1e-8;
    let got = relative_fisher(&params, &forget, &retain, eps, FisherObjective::Similarity).map_err(fail)?;
    let ff = brute_force_layer_fisher(&params, &forget);
    let fr = brute_force_layer_fisher(&params, &retain);
    let mut worst = 0.0f64;
    let mut oracle: Vec<(String, f64)> = Vec::new();
    for (layer, &f) in &ff {
        let want = f / (fr[layer] + eps);
        let have = got.scores[layer];
        worst = worst.max((have - want).abs() / want.abs().max(1e-300));
        oracle.push((layer.clone(), want));
    }
    ensure(worst <= 1e-6, || format!("relative error {worst:e}"))?;
    let order = got.order.clone();
    oracle.sort_by(|a, b| {
        b.1.total_cmp(&a.1).then(
            order
                .iter()
                .position(|p| *p == a.0)
                .cmp(&order.iter().position(|p| *p == b.0)),
        )
    });
    let ranked = select_layers(&got, order.len()).map_err(fail)?;
    let want: Vec<String> = oracle.into_iter().map(|(l, _)| l).collect();
    ensure(ranked == want, || format!("ranking {ranked:?} vs oracle {want:?}"))?;
    Ok(format!("{} layers; max relative error {worst:.1e}; rankings equal", order.len()))
}

// --------------------------------------------------------------- criterion 5

/// Sets each BN layer's running statistics to the batch's, front to back,
/// so later layers see the already-matched earlier ones.
fn match_bn_statistics(params: &mut ParameterSet<f64>, images: &Tensor<f64>) {
    let n = params.bn_statistics().layers.len();
    for k in 0..n {
        let out = tower::forward(params, images, BnMode::Eval).unwrap();
        let mut stats = params.bn_statistics();
        let s = &out.feature_stats[k];
        stats.layers[k] = BnLayerStats {
            block: s.block,
            mean: s.mean.clone(),
            var: s.var.clone(),
        };
        params.set_bn_statistics(&BnStatistics { layers: stats.layers }).unwrap();
    }
}

fn criterion_5() -> Outcome {
    let spec = toy_spec();
    let params = ParameterSet::<f64>::init(spec.clone(), 5).map_err(fail)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let settings = AlignSettings {
        steps: 5,
        step_size: 0.1,
        bound: f64::INFINITY,
    };
    let mut gain = 0.0;
    for i in 0..100 {
        let images = random_images(&mut rng, 8, &spec);
        let base = alignment_loss(&params, &images).map_err(fail)?;
        let a = align_batch(&params, &images, settings).map_err(fail)?;
        let after = alignment_loss(&params, &a.aligned).map_err(fail)?;
        ensure(after <= base && a.final_loss <= a.initial_loss, || {
            format!("batch {i}: loss rose from {base} to {after}")
        })?;
        gain += (base - after) / base; // percent once summed over 100
    }
    let images = random_images(&mut rng, 8, &spec);
    let mut matched = params.clone();
    match_bn_statistics(&mut matched, &images);
    let l0 = alignment_loss(&matched, &images).map_err(fail)?;
    let a = align_batch(&matched, &images, settings).map_err(fail)?;
    ensure(a.final_loss <= 1e-6, || format!("matched batch ends at {:e}", a.final_loss))?;
    Ok(format!(
        "100 batches never worse (mean reduction {:.1}%); matched batch {:.1e}",
        gain,
        l0.max(a.final_loss)
    ))
}

// --------------------------------------------------------------- criterion 6

fn criterion_6() -> Outcome {
    let spec = toy_spec();
    let params = ParameterSet::<f64>::init(spec.clone(), 6).map_err(fail)?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let images = random_images(&mut rng, 6, &spec);
    let prompts: Vec<usize> = (0..spec.vocab.len()).collect();
    let labels: Vec<usize> = (0..6).map(|i| i % prompts.len()).collect();
    let mask = PositiveMask::from_labels(&labels, prompts.len());
    let g = contrastive_grads(&params, &images, &prompts, &mask, true, BnMode::Train, true).map_err(fail)?;
    let loss = |p: &ParameterSet<f64>| {
        contrastive_grads(p, &images, &prompts, &mask, true, BnMode::Train, false)
            .unwrap()
            .loss
    };
    let text_name = params
        .entries()
        .keys()
        .find(|k| !g.image.contains_key(*k) && params.tensor(k).shape() == g.text.as_ref().unwrap().shape())
        .cloned()
        .ok_or("text table not found")?;
    let mut candidates: Vec<(String, usize, f64)> = Vec::new();
    for (name, t) in &g.image {
        for (i, &v) in t.data().iter().enumerate() {
            candidates.push((name.clone(), i, v));
        }
    }
    let text = g.text.as_ref().unwrap();
    for (i, &v) in text.data().iter().enumerate() {
        candidates.push((text_name.clone(), i, v));
    }
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (name, idx, analytic) = &candidates[rng.random_range(0..candidates.len())];
        let numeric = central_difference(&params, name, *idx, 1e-5, &loss);
        let scale = analytic.abs().max(numeric.abs()).max(1e-6);
        let rel = (analytic - numeric).abs() / scale;
        ensure(rel <= 1e-3, || format!("{name}[{idx}]: {analytic} vs {numeric}"))?;
        worst = worst.max(rel);
    }
    Ok(format!("20 parameters; max relative error {worst:.1e}"))
}

// ------------------------------------------------------- desk-scale criteria

fn reference_config() -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    RunConfig::load(&path).expect("shipped default config loads")
}

struct Desk {
    root: PathBuf,
    original: PathBuf,
    target0: Runner,
    held_out: f64,
}

impl Desk {
    fn build(root: &Path) -> Result<Desk, String> {
        let config = reference_config();
        let ov = Overrides {
            out_dir: Some(root.join("runs")),
            ..Overrides::default()
        };
        let target0 = Runner::new(config, &ov).map_err(fail)?;
        let pre = target0.pretrain().map_err(fail)?;
        Ok(Desk {
            root: root.to_path_buf(),
            original: target0.run.path("checkpoints/original.ckpt"),
            target0,
            held_out: pre.summary.held_out_accuracy,
        })
    }

    fn runner(&self, target: usize) -> Result<Runner, String> {
        let mut config = reference_config();
        config.target_subgroup = target;
        Runner::new(
            config,
            &Overrides {
                out_dir: Some(self.root.join("runs")),
                original: Some(self.original.clone()),
                ..Overrides::default()
            },
        )
        .map_err(fail)
    }
}

fn criterion_7(desk: &Desk) -> Outcome {
    ensure(desk.held_out >= 0.85, || format!("pre-trained held-out accuracy {:.3}", desk.held_out))?;
    let out = desk.target0.unlearn().map_err(fail)?;
    let r = &out.report;
    let target = r.suite("target").ok_or("no target suite")?.ratio;
    let retain = r.suite("retain").ok_or("no retain suite")?.ratio;
    let unseen = r.mean_ratio(SuiteGroup::Unseen).ok_or("no unseen suites")?;
    let mut baselines = Vec::new();
    for m in Method::ALL {
        baselines.push((m, desk.target0.baseline(m).map_err(fail)?.report.score));
    }
    let detail = format!(
        "target {target:.3} retain {retain:.3} unseen {unseen:.3} score {:.1} vs {}",
        r.score,
        baselines
            .iter()
            .map(|(m, s)| format!("{m} {s:.1}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    ensure(target <= 0.10, || format!("target ratio too high: {detail}"))?;
    ensure(retain >= 0.80, || format!("retain ratio too low: {detail}"))?;
    ensure(unseen >= 0.70, || format!("unseen ratio too low: {detail}"))?;
    ensure(baselines.iter().all(|&(_, s)| r.score > s), || format!("a baseline scores higher: {detail}"))?;
    Ok(format!("held-out {:.3}; {detail}", desk.held_out))
}

fn criterion_8(desk: &Desk) -> Outcome {
    let table = desk
        .target0
        .sweep(SweepAxis::AlphaMerge, &[0.1, 0.3, 0.5, 0.65, 0.7, 0.9])
        .map_err(fail)?;
    let rows = &table.rows;
    let fmt = rows
        .iter()
        .map(|r| format!("{}: {:.2}/{:.2}", r.value, r.acc_f, r.acc_r))
        .collect::<Vec<_>>()
        .join(", ");
    let monotone = rows
        .windows(2)
        .all(|w| w[1].acc_f >= w[0].acc_f && w[1].acc_r >= w[0].acc_r);
    ensure(monotone, || format!("not non-decreasing: {fmt}"))?;
    Ok(format!("alpha: acc_f/acc_r {fmt}"))
}

fn criterion_9(desk: &Desk) -> Outcome {
    let a = desk.target0.run.path("checkpoints/restored.ckpt");
    if !a.is_file() {
        desk.target0.unlearn().map_err(fail)?;
    }
    let second = desk.runner(5)?;
    second.unlearn().map_err(fail)?;
    let b = second.run.path("checkpoints/restored.ckpt");
    let out = desk.target0.continuous(&[a, b], None).map_err(fail)?;
    let original = out.report.row("original").ok_or("no original row")?;
    let merged = out.report.row("merged").ok_or("no merged row")?;
    let ratio = |g: usize| (merged[g] / original[g]).min(1.0);
    let (t0, t5) = (ratio(0), ratio(5));
    let others: Vec<f64> = (0..merged.len()).filter(|&g| g != 0 && g != 5).map(ratio).collect();
    let retain = others.iter().sum::<f64>() / others.len() as f64;
    let detail = format!("targets {t0:.2}/{t5:.2}; mean retain ratio {retain:.3}");
    ensure(t0 <= 0.25 && t5 <= 0.25, || format!("a target came back: {detail}"))?;
    ensure(retain >= 0.5, || format!("retain collapsed: {detail}"))?;
    Ok(detail)
}

fn criterion_10(desk: &Desk) -> Outcome {
    let config = desk.root.join("determinism.toml");
    std::fs::write(&config, reference_config().to_toml()).map_err(fail)?;
    let run = |dir: &str| {
        cmd_unlearn(
            &config,
            &Overrides {
                out_dir: Some(desk.root.join(dir)),
                original: Some(desk.original.clone()),
                ..Overrides::default()
            },
        )
        .map(|o| o.restored.content_hash())
        .map_err(fail)
    };
    let first = run("det-a")?;
    let second = run("det-b")?;
    ensure(first == second, || format!("{first} vs {second}"))?;
    Ok(format!("restored {}", &first[..16]))
}

// ----------------------------------------------------------------- harness

fn report(n: usize, what: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = t.elapsed().as_secs_f64();
    match outcome {
        Ok(d) => {
            println!("PASS criterion {n:>2} {what} ({secs:.1}s): {d}");
            true
        }
        Err(e) => {
            println!("FAIL criterion {n:>2} {what} ({secs:.1}s): {e}");
            false
        }
    }
}

fn main() -> ExitCode {
    let mut ok = true;
    ok &= report(1, "score formula", criterion_1);
    ok &= report(2, "merge identities", criterion_2);
    ok &= report(3, "EMA identities", criterion_3);
    ok &= report(4, "Fisher oracle", criterion_4);
    ok &= report(5, "alignment soundness", criterion_5);
    ok &= report(6, "gradient check", criterion_6);

    let tmp = tempfile::tempdir().expect("temporary directory");
    let t = Instant::now();
    let desk = Desk::build(tmp.path());
    println!("pre-training the reference model took {:.1}s", t.elapsed().as_secs_f64());
    let desk_criteria: [(usize, &str, fn(&Desk) -> Outcome); 4] = [
        (7, "desk-scale unlearning", criterion_7),
        (8, "merge ablation direction", criterion_8),
        (9, "continuous forgetting", criterion_9),
        (10, "determinism", criterion_10),
    ];
    for (n, what, f) in desk_criteria {
        ok &= report(n, what, || match &desk {
            Ok(d) => f(d),
            Err(e) => Err(format!("reference model unavailable: {e}")),
        });
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
