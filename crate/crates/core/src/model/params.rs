use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::spec::*;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Where a parameter set came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    Original,
    Forgotten,
    Reminded,
    Restored,
    Merged,
    Baseline(String),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Original => f.write_str("original"),
            Provenance::Forgotten => f.write_str("forgotten"),
            Provenance::Reminded => f.write_str("reminded"),
            Provenance::Restored => f.write_str("restored"),
            Provenance::Merged => f.write_str("merged"),
            Provenance::Baseline(name) => write!(f, "baseline:{name}"),
        }
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "original" => Provenance::Original,
            "forgotten" => Provenance::Forgotten,
            "reminded" => Provenance::Reminded,
            "restored" => Provenance::Restored,
            "merged" => Provenance::Merged,
            other => match other.strip_prefix("baseline:") {
                Some(name) if !name.is_empty() => Provenance::Baseline(name.to_string()),
                _ => return Err(Error::Artifact(format!("unknown provenance tag {other:?}"))),
            },
        })
    }
}

impl Serialize for Provenance {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Provenance {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Adapter configuration that produced a folded checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterRecord {
    pub layer_paths: Vec<String>,
    pub rank: usize,
    pub scaling: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamMeta {
    pub fingerprint: String,
    pub seed: u64,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapters: Option<AdapterRecord>,
}

/// Named tensors for one dual-encoder architecture: the unit of
/// checkpointing, merging, averaging and Fisher attribution.
#[derive(Debug, Clone)]
pub struct ParameterSet<T> {
    spec: Arc<ModelSpec>,
    entries: BTreeMap<String, Tensor<T>>,
    pub meta: ParamMeta,
}

/// Per-BatchNorm-layer running statistics, in tower order.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStatistics<T> {
    pub layers: Vec<BnLayerStats<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnLayerStats<T> {
    pub block: usize,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> ParameterSet<T> {
    /// Builds a parameter set, checking that `entries` covers the
    /// architecture exactly.
    pub fn new(
        spec: Arc<ModelSpec>,
        entries: BTreeMap<String, Tensor<T>>,
        seed: u64,
        provenance: Provenance,
    ) -> Result<Self> {
        spec.validate()?;
        let expected = spec.entry_shapes();
        if expected.len() != entries.len() {
            return Err(Error::Artifact(format!(
                "expected {} entries, found {}",
                expected.len(),
                entries.len()
            )));
        }
        for (name, shape) in &expected {
            match entries.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Shape {
                        expected: format!("{name} {shape:?}"),
                        got: format!("{:?}", t.shape()),
                    })
                }
                None => return Err(Error::Artifact(format!("missing entry {name}"))),
            }
        }
        let meta = ParamMeta {
            fingerprint: spec.fingerprint(),
            seed,
            provenance,
            adapters: None,
        };
        Ok(ParameterSet {
            spec,
            entries,
            meta,
        })
    }

    /// Deterministic random initialization: He-normal convolutions,
    /// unit-scale BatchNorm, Gaussian text rows.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = BTreeMap::new();
        for (name, shape) in spec.entry_shapes() {
            let n: usize = shape.iter().product();
            let t = if name.ends_with("conv.weight") || name == PROJ_WEIGHT {
                let fan_in: usize = shape[1..].iter().product();
                let std = (2.0 / fan_in as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("finite std");
                let data = (0..n).map(|_| T::lit(normal.sample(&mut rng))).collect();
                Tensor::from_vec(&shape, data)?
            } else if name == TEXT_EMBEDDING {
                let normal = Normal::new(0.0, 1.0).expect("finite std");
                let data = (0..n).map(|_| T::lit(normal.sample(&mut rng))).collect();
                Tensor::from_vec(&shape, data)?
            } else if name.ends_with("bn.weight") || name.ends_with("running_var") {
                Tensor::filled(&shape, T::one())
            } else {
                Tensor::zeros(&shape)
            };
            entries.insert(name, t);
        }
        ParameterSet::new(Arc::new(spec), entries, seed, Provenance::Original)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn spec_arc(&self) -> &Arc<ModelSpec> {
        &self.spec
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name)
    }

    /// Panics when `name` is not an entry of this architecture.
    pub fn tensor(&self, name: &str) -> &Tensor<T> {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("no parameter entry {name}"))
    }

    pub fn entries(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.entries
    }

    /// Replaces an entry; the shape must match.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        match self.entries.get_mut(name) {
            Some(slot) if slot.shape() == value.shape() => {
                *slot = value;
                Ok(())
            }
            Some(slot) => Err(Error::Shape {
                expected: format!("{name} {:?}", slot.shape()),
                got: format!("{:?}", value.shape()),
            }),
            None => Err(Error::Artifact(format!("no parameter entry {name}"))),
        }
    }

    pub fn tensor_mut(&mut self, name: &str) -> &mut Tensor<T> {
        self.entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("no parameter entry {name}"))
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.meta.provenance = provenance;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.meta.seed = seed;
        self
    }

    /// Merge compatibility: same architecture fingerprint and all shapes agree.
    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.meta.fingerprint != other.meta.fingerprint {
            return Err(Error::Merge(format!(
                "architecture fingerprints differ ({} vs {})",
                short(&self.meta.fingerprint),
                short(&other.meta.fingerprint)
            )));
        }
        for (name, t) in &self.entries {
            match other.entries.get(name) {
                Some(o) if o.shape() == t.shape() => {}
                _ => return Err(Error::Merge(format!("entry {name} disagrees"))),
            }
        }
        if self.entries.len() != other.entries.len() {
            return Err(Error::Merge("entry sets differ".into()));
        }
        Ok(())
    }

    /// Bitwise equality of every entry (metadata ignored).
    pub fn same_values(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .all(|(k, v)| other.entries.get(k).is_some_and(|o| o.bitwise_eq(v)))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.entries
            .iter()
            .map(|(k, v)| v.max_abs_diff(other.tensor(k)))
            .fold(T::zero(), T::max)
    }

    pub fn bn_statistics(&self) -> BnStatistics<T> {
        BnStatistics {
            layers: self
                .spec
                .bn_blocks()
                .into_iter()
                .map(|b| BnLayerStats {
                    block: b,
                    mean: self.tensor(&bn_running_mean(b)).data().to_vec(),
                    var: self.tensor(&bn_running_var(b)).data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn set_bn_statistics(&mut self, stats: &BnStatistics<T>) -> Result<()> {
        for layer in &stats.layers {
            if layer.var.iter().any(|&v| !(v > T::zero())) {
                return Err(Error::Degenerate(format!(
                    "block {} running variance must be strictly positive",
                    layer.block
                )));
            }
            let w = layer.mean.len();
            self.set(
                &bn_running_mean(layer.block),
                Tensor::from_vec(&[w], layer.mean.clone())?,
            )?;
            self.set(
                &bn_running_var(layer.block),
                Tensor::from_vec(&[w], layer.var.clone())?,
            )?;
        }
        Ok(())
    }

    /// SHA-256 over entry names and little-endian payloads.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        let mut buf = Vec::new();
        for (name, t) in &self.entries {
            h.update(name.as_bytes());
            buf.clear();
            for &v in t.data() {
                v.write_le(&mut buf);
            }
            h.update(&buf);
        }
        hex::encode(h.finalize())
    }

    /// Applies `f(name, tensor)` to every entry and returns a new set with
    /// the same metadata.
    pub fn map_entries(&self, mut f: impl FnMut(&str, &Tensor<T>) -> Tensor<T>) -> Self {
        ParameterSet {
            spec: self.spec.clone(),
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), f(k, v)))
                .collect(),
            meta: self.meta.clone(),
        }
    }
}

fn short(s: &str) -> &str {
    &s[..s.len().min(12)]
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_spec() -> ModelSpec {
        ModelSpec {
            in_channels: 1,
            image_size: 4,
            blocks: vec![BlockSpec::new(2, 3, 1, true)],
            embed_dim: 3,
            vocab: vec!["x".into(), "y".into()],
            temperature: 0.1,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = ParameterSet::<f64>::init(tiny_spec(), 7).unwrap();
        let b = ParameterSet::<f64>::init(tiny_spec(), 7).unwrap();
        let c = ParameterSet::<f64>::init(tiny_spec(), 8).unwrap();
        assert!(a.same_values(&b));
        assert!(!a.same_values(&c));
        assert_eq!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn provenance_round_trips_through_strings() {
        for p in [
            Provenance::Original,
            Provenance::Restored,
            Provenance::Baseline("GA".into()),
        ] {
            assert_eq!(p.to_string().parse::<Provenance>().unwrap(), p);
        }
        assert!("baseline:".parse::<Provenance>().is_err());
    }

    #[test]
    fn compatibility_requires_same_fingerprint() {
        let a = ParameterSet::<f64>::init(tiny_spec(), 1).unwrap();
        let mut spec = tiny_spec();
        spec.embed_dim = 4;
        let b = ParameterSet::<f64>::init(spec, 1).unwrap();
        assert!(matches!(a.check_compatible(&b), Err(Error::Merge(_))));
        assert!(a.check_compatible(&a.clone()).is_ok());
    }

    #[test]
    fn bn_statistics_reject_non_positive_variance() {
        let mut a = ParameterSet::<f64>::init(tiny_spec(), 1).unwrap();
        let mut stats = a.bn_statistics();
        assert_eq!(stats.layers.len(), 1);
        stats.layers[0].var[0] = 0.0;
        assert!(a.set_bn_statistics(&stats).is_err());
    }
}
