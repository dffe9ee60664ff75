//! Procedural superclass/subgroup image generator.
//!
//! Every subgroup is rendered from a fixed number of localized oriented
//! grating patches ("factors"). Sibling subgroups draw
//! `round(overlap * FACTORS_PER_SUBGROUP)` of their factors from a pool shared
//! by the superclass; the rest are unique to the subgroup. Per-example
//! variation is position jitter, amplitude, phase and pixel noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const FACTORS_PER_SUBGROUP: usize = 4;
pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureFamily {
    Sine,
    Square,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaxonomySpec {
    pub n_superclasses: usize,
    pub subgroups_per_superclass: usize,
    /// Fraction of generative factors sibling subgroups share (0 disjoint, 1 identical).
    pub overlap: f64,
    pub image_size: usize,
    pub images_per_subgroup: usize,
    #[serde(default)]
    pub seed: u64,
    pub texture: TextureFamily,
    /// Render at this side length and rescale to `image_size` (bilinear).
    pub render_size: Option<usize>,
    /// Separates example streams of shifted re-generations from the base one.
    pub variant: u64,
}

impl Default for TaxonomySpec {
    fn default() -> Self {
        TaxonomySpec {
            n_superclasses: 4,
            subgroups_per_superclass: 4,
            overlap: 0.5,
            image_size: 16,
            images_per_subgroup: 200,
            seed: 0,
            texture: TextureFamily::Sine,
            render_size: None,
            variant: 0,
        }
    }
}

impl TaxonomySpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_superclasses == 0 || self.subgroups_per_superclass == 0 {
            return Err(Error::config("taxonomy needs at least one superclass and subgroup"));
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(Error::config("overlap must lie in [0, 1]"));
        }
        if self.image_size < 4 || self.images_per_subgroup == 0 {
            return Err(Error::config("image_size must be >= 4 and images_per_subgroup > 0"));
        }
        if matches!(self.render_size, Some(r) if r < 2) {
            return Err(Error::config("render_size must be >= 2"));
        }
        Ok(())
    }

    pub fn n_subgroups(&self) -> usize {
        self.n_superclasses * self.subgroups_per_superclass
    }

    pub fn superclass_of(&self, subgroup: usize) -> usize {
        subgroup / self.subgroups_per_superclass
    }

    pub fn subgroups_of(&self, superclass: usize) -> std::ops::Range<usize> {
        let g = self.subgroups_per_superclass;
        superclass * g..(superclass + 1) * g
    }

    pub fn shared_factor_count(&self) -> usize {
        (self.overlap * FACTORS_PER_SUBGROUP as f64).round() as usize
    }

    /// Same semantics (factors) rendered with a different texture family at
    /// a lower resolution, with an independent example stream.
    pub fn shifted(&self) -> TaxonomySpec {
        TaxonomySpec {
            texture: match self.texture {
                TextureFamily::Sine => TextureFamily::Square,
                TextureFamily::Square => TextureFamily::Sine,
            },
            render_size: Some((self.image_size / 2).max(2)),
            variant: self.variant + 1,
            ..self.clone()
        }
    }

    pub fn superclass_name(&self, c: usize) -> String {
        format!("superclass-{c}")
    }

    pub fn subgroup_name(&self, g: usize) -> String {
        let c = self.superclass_of(g);
        let local = g % self.subgroups_per_superclass;
        format!("superclass-{c}/subgroup-{local}")
    }

    /// Prompt strings: every superclass name, then every subgroup name.
    pub fn vocab(&self) -> Vec<String> {
        (0..self.n_superclasses)
            .map(|c| self.superclass_name(c))
            .chain((0..self.n_subgroups()).map(|g| self.subgroup_name(g)))
            .collect()
    }

    pub fn superclass_prompt(&self, c: usize) -> usize {
        c
    }

    pub fn subgroup_prompt(&self, g: usize) -> usize {
        self.n_superclasses + g
    }

    pub fn superclass_prompts(&self) -> Vec<usize> {
        (0..self.n_superclasses).collect()
    }

    pub fn subgroup_prompts(&self) -> Vec<usize> {
        (0..self.n_subgroups()).map(|g| self.subgroup_prompt(g)).collect()
    }
}

/// A localized oriented grating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub id: usize,
    /// Center in unit image coordinates.
    pub cy: f64,
    pub cx: f64,
    /// Gaussian envelope width in unit image coordinates.
    pub sigma: f64,
    pub theta: f64,
    /// Cycles per image width.
    pub freq: f64,
    pub color: [f64; CHANNELS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupFactors {
    pub subgroup: usize,
    pub superclass: usize,
    pub factor_ids: Vec<usize>,
}

/// Record of which factors each subgroup is rendered from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructionLog {
    pub factors: Vec<Factor>,
    pub subgroups: Vec<SubgroupFactors>,
}

impl ConstructionLog {
    pub fn shared_between(&self, a: usize, b: usize) -> usize {
        let fa = &self.subgroups[a].factor_ids;
        self.subgroups[b]
            .factor_ids
            .iter()
            .filter(|id| fa.contains(id))
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleId(pub u8);

impl StyleId {
    pub const NONE: StyleId = StyleId(0);
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample<T> {
    pub id: u64,
    /// `[channels, size, size]`, values in [0, 1].
    pub image: Tensor<T>,
    pub superclass: usize,
    pub subgroup: usize,
    pub style: StyleId,
}

#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub spec: TaxonomySpec,
    pub examples: Vec<LabeledExample<T>>,
    pub log: ConstructionLog,
}

impl<T: Scalar> Dataset<T> {
    pub fn of_subgroup(&self, g: usize) -> impl Iterator<Item = &LabeledExample<T>> {
        self.examples.iter().filter(move |e| e.subgroup == g)
    }
}

/// Stacks example images into a `[batch, C, H, W]` tensor.
pub fn stack_images<'a, T: Scalar>(
    examples: impl IntoIterator<Item = &'a LabeledExample<T>>,
) -> Tensor<T> {
    let mut data = Vec::new();
    let mut n = 0;
    let mut shape = vec![0usize; 3];
    for e in examples {
        shape.copy_from_slice(e.image.shape());
        data.extend_from_slice(e.image.data());
        n += 1;
    }
    Tensor::from_vec(&[n, shape[0], shape[1], shape[2]], data).expect("consistent example shapes")
}

fn build_factors(spec: &TaxonomySpec) -> ConstructionLog {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(0);
    let mut factors = Vec::new();
    let mut new_factor = |rng: &mut ChaCha8Rng| {
        let mut color = [0.0; CHANNELS];
        for c in color.iter_mut() {
            *c = rng.random_range(0.1..1.0);
        }
        let f = Factor {
            id: factors.len(),
            cy: rng.random_range(0.2..0.8),
            cx: rng.random_range(0.2..0.8),
            sigma: rng.random_range(0.12..0.2),
            theta: rng.random_range(0.0..PI),
            freq: rng.random_range(2.0..4.5),
            color,
        };
        factors.push(f);
        factors.len() - 1
    };
    let n_shared = spec.shared_factor_count();
    let mut subgroups = Vec::new();
    for c in 0..spec.n_superclasses {
        let pool: Vec<usize> = (0..n_shared).map(|_| new_factor(&mut rng)).collect();
        for g in spec.subgroups_of(c) {
            let mut ids = pool.clone();
            ids.extend((n_shared..FACTORS_PER_SUBGROUP).map(|_| new_factor(&mut rng)));
            subgroups.push(SubgroupFactors {
                subgroup: g,
                superclass: c,
                factor_ids: ids,
            });
        }
    }
    ConstructionLog { factors, subgroups }
}

fn wave(texture: TextureFamily, phase: f64) -> f64 {
    match texture {
        TextureFamily::Sine => 0.5 + 0.5 * phase.cos(),
        TextureFamily::Square => {
            if phase.cos() >= 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

fn render(
    spec: &TaxonomySpec,
    log: &ConstructionLog,
    ids: &[usize],
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let size = spec.render_size.unwrap_or(spec.image_size);
    let jitter = Normal::new(0.0, 0.03).expect("finite");
    let phase_jitter = Normal::new(0.0, 0.3).expect("finite");
    let pixel_noise = Normal::new(0.0, 0.04).expect("finite");
    let mut img = vec![0.1; CHANNELS * size * size];
    let amp_per_factor = 1.2 / ids.len() as f64;
    for &id in ids {
        let f = &log.factors[id];
        let cy = f.cy + jitter.sample(rng);
        let cx = f.cx + jitter.sample(rng);
        let amp = amp_per_factor * rng.random_range(0.7..1.0);
        let phase0 = phase_jitter.sample(rng);
        let (st, ct) = f.theta.sin_cos();
        for y in 0..size {
            let uy = (y as f64 + 0.5) / size as f64;
            for x in 0..size {
                let ux = (x as f64 + 0.5) / size as f64;
                let (dy, dx) = (uy - cy, ux - cx);
                let env = (-(dy * dy + dx * dx) / (2.0 * f.sigma * f.sigma)).exp();
                let w = wave(spec.texture, 2.0 * PI * f.freq * (dx * ct + dy * st) + phase0);
                let v = amp * env * w;
                for (ch, &col) in f.color.iter().enumerate() {
                    img[(ch * size + y) * size + x] += v * col;
                }
            }
        }
    }
    for v in img.iter_mut() {
        *v = (*v + pixel_noise.sample(rng)).clamp(0.0, 1.0);
    }
    if size != spec.image_size {
        rescale_bilinear(&img, CHANNELS, size, spec.image_size)
    } else {
        img
    }
}

/// Bilinear resampling with align-corners = false.
pub fn rescale_bilinear(src: &[f64], channels: usize, from: usize, to: usize) -> Vec<f64> {
    let mut out = vec![0.0; channels * to * to];
    let scale = from as f64 / to as f64;
    let sample = |ch: usize, y: usize, x: usize| src[(ch * from + y) * from + x];
    for ch in 0..channels {
        for y in 0..to {
            let fy = ((y as f64 + 0.5) * scale - 0.5).clamp(0.0, (from - 1) as f64);
            let (y0, ty) = (fy.floor() as usize, fy - fy.floor());
            let y1 = (y0 + 1).min(from - 1);
            for x in 0..to {
                let fx = ((x as f64 + 0.5) * scale - 0.5).clamp(0.0, (from - 1) as f64);
                let (x0, tx) = (fx.floor() as usize, fx - fx.floor());
                let x1 = (x0 + 1).min(from - 1);
                let top = sample(ch, y0, x0) * (1.0 - tx) + sample(ch, y0, x1) * tx;
                let bot = sample(ch, y1, x0) * (1.0 - tx) + sample(ch, y1, x1) * tx;
                out[(ch * to + y) * to + x] = top * (1.0 - ty) + bot * ty;
            }
        }
    }
    out
}

/// Generates `images_per_subgroup` examples for every subgroup, ordered by
/// subgroup; ids are positions in that order.
pub fn generate_synthetic<T: Scalar>(spec: &TaxonomySpec) -> Result<Dataset<T>> {
    spec.validate()?;
    let log = build_factors(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1 + spec.variant);
    let size = spec.image_size;
    let mut examples = Vec::with_capacity(spec.n_subgroups() * spec.images_per_subgroup);
    for sg in &log.subgroups {
        for _ in 0..spec.images_per_subgroup {
            let pixels = render(spec, &log, &sg.factor_ids, &mut rng);
            let image = Tensor::from_vec(
                &[CHANNELS, size, size],
                pixels.into_iter().map(T::lit).collect(),
            )?;
            examples.push(LabeledExample {
                id: examples.len() as u64,
                image,
                superclass: sg.superclass,
                subgroup: sg.subgroup,
                style: StyleId::NONE,
            });
        }
    }
    Ok(Dataset {
        spec: spec.clone(),
        examples,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(overlap: f64) -> TaxonomySpec {
        TaxonomySpec {
            n_superclasses: 2,
            subgroups_per_superclass: 2,
            overlap,
            images_per_subgroup: 5,
            ..TaxonomySpec::default()
        }
    }

    #[test]
    fn zero_overlap_shares_no_factors() {
        let d = generate_synthetic::<f64>(&small(0.0)).unwrap();
        assert_eq!(d.log.shared_between(0, 1), 0);
        assert_eq!(d.log.shared_between(2, 3), 0);
    }

    #[test]
    fn full_overlap_shares_every_factor() {
        let d = generate_synthetic::<f64>(&small(1.0)).unwrap();
        assert_eq!(d.log.shared_between(0, 1), FACTORS_PER_SUBGROUP);
        // different superclasses never share
        assert_eq!(d.log.shared_between(0, 2), 0);
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = generate_synthetic::<f32>(&small(0.5)).unwrap();
        let b = generate_synthetic::<f32>(&small(0.5)).unwrap();
        assert_eq!(a.examples.len(), 20);
        for (x, y) in a.examples.iter().zip(&b.examples) {
            assert!(x.image.bitwise_eq(&y.image));
        }
        let mut other = small(0.5);
        other.seed = 1;
        let c = generate_synthetic::<f32>(&other).unwrap();
        assert!(!a.examples[0].image.bitwise_eq(&c.examples[0].image));
    }

    #[test]
    fn pixels_in_unit_range_and_labels_consistent() {
        let spec = small(0.5);
        let d = generate_synthetic::<f64>(&spec.shifted()).unwrap();
        for e in &d.examples {
            assert_eq!(e.image.shape(), &[3, 16, 16]);
            assert!(e.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert_eq!(spec.superclass_of(e.subgroup), e.superclass);
        }
    }

    #[test]
    fn vocab_layout() {
        let spec = small(0.5);
        let v = spec.vocab();
        assert_eq!(v.len(), 6);
        assert_eq!(v[spec.superclass_prompt(1)], "superclass-1");
        assert_eq!(v[spec.subgroup_prompt(3)], "superclass-1/subgroup-1");
    }

    #[test]
    fn rejects_bad_overlap() {
        let mut s = small(0.5);
        s.overlap = 1.5;
        assert!(generate_synthetic::<f64>(&s).is_err());
    }
}
