//! Low-rank adapters on weight matrices of the image tower.
//!
//! A convolution weight `[out, in, k, k]` is viewed as an `out × (in·k·k)`
//! matrix. An adapter adds `scaling · A · B` to that matrix, with `A`
//! (`d_out × r`) starting at zero and `B` (`r × d_in`) Gaussian.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::{AdapterRecord, ParameterSet};
use crate::scalar::Scalar;
use crate::tensor::{matmul, matmul_at, matmul_bt, Tensor};

/// Standard deviation of the initial `B` entries.
pub const B_INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct Adapter<T> {
    /// Entry name of the adapted weight.
    pub weight: String,
    pub d_out: usize,
    pub d_in: usize,
    /// `d_out × r`
    pub a: Tensor<T>,
    /// `r × d_in`
    pub b: Tensor<T>,
}

impl<T: Scalar> Adapter<T> {
    /// `scaling · A · B`, shaped like the adapted weight.
    pub fn delta(&self, scaling: T, shape: &[usize]) -> Tensor<T> {
        let r = self.a.shape()[1];
        let ab = matmul(self.a.data(), self.b.data(), self.d_out, r, self.d_in);
        Tensor::from_vec(shape, ab.into_iter().map(|v| v * scaling).collect())
            .expect("delta has the weight's size")
    }
}

#[derive(Debug, Clone)]
pub struct AdaptedModel<T> {
    base: ParameterSet<T>,
    adapters: BTreeMap<String, Adapter<T>>,
    pub rank: usize,
    pub scaling: f64,
}

pub fn attach_adapters<T: Scalar>(
    base: &ParameterSet<T>,
    layer_paths: &[String],
    rank: usize,
    scaling: f64,
    seed: u64,
) -> Result<AdaptedModel<T>> {
    if rank == 0 {
        return Err(Error::config("adapter rank must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, B_INIT_STD).expect("finite std");
    let mut adapters = BTreeMap::new();
    for path in layer_paths {
        let layer = base
            .spec()
            .layer(path)
            .ok_or_else(|| Error::config(format!("unknown image-tower layer {path}")))?;
        let weight = layer
            .matrix
            .ok_or_else(|| Error::config(format!("layer {path} has no weight matrix")))?;
        let (d_out, d_in) = base
            .tensor(&weight)
            .matrix_dims()
            .expect("weight entries have rank >= 2");
        if rank >= d_out.min(d_in) {
            return Err(Error::config(format!(
                "adapter rank {rank} must be below min({d_out}, {d_in}) for {path}"
            )));
        }
        let b = (0..rank * d_in)
            .map(|_| T::lit(normal.sample(&mut rng)))
            .collect();
        adapters.insert(
            path.clone(),
            Adapter {
                weight,
                d_out,
                d_in,
                a: Tensor::zeros(&[d_out, rank]),
                b: Tensor::from_vec(&[rank, d_in], b)?,
            },
        );
    }
    Ok(AdaptedModel {
        base: base.clone(),
        adapters,
        rank,
        scaling,
    })
}

impl<T: Scalar> AdaptedModel<T> {
    pub fn base(&self) -> &ParameterSet<T> {
        &self.base
    }

    pub fn adapters(&self) -> &BTreeMap<String, Adapter<T>> {
        &self.adapters
    }

    pub fn adapter_mut(&mut self, path: &str) -> Option<&mut Adapter<T>> {
        self.adapters.get_mut(path)
    }

    pub fn layer_paths(&self) -> Vec<String> {
        self.adapters.keys().cloned().collect()
    }

    /// Base parameters with every adapter applied: `W + scaling · A · B`.
    pub fn effective(&self) -> ParameterSet<T> {
        let s = T::lit(self.scaling);
        let mut p = self.base.clone();
        for ad in self.adapters.values() {
            let w = p.tensor_mut(&ad.weight);
            let delta = ad.delta(s, w.shape());
            w.add_scaled(&delta, T::one());
        }
        p
    }

    /// Maps gradients w.r.t. the effective weights to the adapter factors:
    /// `dA = s · dW · Bᵀ`, `dB = s · Aᵀ · dW`. Keyed by layer path.
    pub fn adapter_grads(
        &self,
        weight_grads: &BTreeMap<String, Tensor<T>>,
    ) -> BTreeMap<String, (Tensor<T>, Tensor<T>)> {
        let s = T::lit(self.scaling);
        let r = self.rank;
        self.adapters
            .iter()
            .map(|(path, ad)| {
                let dw = weight_grads[&ad.weight].data();
                let da = matmul_bt(dw, ad.b.data(), ad.d_out, ad.d_in, r);
                let db = matmul_at(ad.a.data(), dw, ad.d_out, r, ad.d_in);
                let scale = |v: Vec<T>, shape: &[usize]| {
                    Tensor::from_vec(shape, v.into_iter().map(|x| x * s).collect())
                        .expect("adapter gradient shape")
                };
                (
                    path.clone(),
                    (scale(da, &[ad.d_out, r]), scale(db, &[r, ad.d_in])),
                )
            })
            .collect()
    }
}

/// Folds every adapter into its weight and records the adapter setup.
pub fn fold_adapters<T: Scalar>(model: &AdaptedModel<T>) -> ParameterSet<T> {
    let mut p = model.effective();
    if !model.adapters.is_empty() {
        p.meta.adapters = Some(AdapterRecord {
            layer_paths: model.layer_paths(),
            rank: model.rank,
            scaling: model.scaling,
        });
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::spec::{BlockSpec, ModelSpec, PROJ_WEIGHT};

    fn base() -> ParameterSet<f64> {
        let spec = ModelSpec {
            in_channels: 2,
            image_size: 5,
            blocks: vec![BlockSpec::new(4, 3, 1, true), BlockSpec::new(6, 3, 2, true)],
            embed_dim: 5,
            vocab: vec!["a".into(), "b".into()],
            temperature: 0.1,
        };
        ParameterSet::init(spec, 3).unwrap()
    }

    #[test]
    fn attach_then_fold_is_identity() {
        let p = base();
        let paths = vec!["image.block0.conv".to_string(), "image.proj".to_string()];
        let m = attach_adapters(&p, &paths, 2, 1.0, 0).unwrap();
        let f = fold_adapters(&m);
        assert!(f.same_values(&p));
        assert_eq!(f.meta.adapters.as_ref().unwrap().layer_paths, paths);
    }

    #[test]
    fn rejects_bad_layers_and_ranks() {
        let p = base();
        assert!(matches!(
            attach_adapters(&p, &["image.block0.bn".to_string()], 1, 1.0, 0),
            Err(Error::Config(_))
        ));
        assert!(attach_adapters(&p, &["image.nowhere".to_string()], 1, 1.0, 0).is_err());
        // projection is 5 × 6
        assert!(attach_adapters(&p, &["image.proj".to_string()], 5, 1.0, 0).is_err());
        assert!(attach_adapters(&p, &["image.proj".to_string()], 4, 1.0, 0).is_ok());
        assert!(attach_adapters(&p, &["image.proj".to_string()], 0, 1.0, 0).is_err());
    }

    #[test]
    fn rank_one_fold_is_an_outer_product() {
        let p = base();
        let mut m = attach_adapters(&p, &["image.proj".to_string()], 1, 2.0, 0).unwrap();
        let ad = m.adapter_mut("image.proj").unwrap();
        ad.a = Tensor::from_vec(&[5, 1], vec![1.0, 0.0, -1.0, 2.0, 0.5]).unwrap();
        ad.b = Tensor::from_vec(&[1, 6], vec![1.0, 2.0, 0.0, 0.0, -3.0, 1.0]).unwrap();
        let (a, b) = (ad.a.data().to_vec(), ad.b.data().to_vec());
        let f = fold_adapters(&m);
        let w0 = p.tensor(PROJ_WEIGHT).data();
        let w1 = f.tensor(PROJ_WEIGHT).data();
        for i in 0..5 {
            for j in 0..6 {
                assert_eq!(w1[i * 6 + j], w0[i * 6 + j] + 2.0 * a[i] * b[j]);
            }
        }
    }

    #[test]
    fn adapter_gradients_match_finite_differences() {
        let p = base();
        let mut m = attach_adapters(&p, &["image.block1.conv".to_string()], 2, 0.5, 1).unwrap();
        m.adapter_mut("image.block1.conv").unwrap().a =
            Tensor::from_vec(&[6, 2], (0..12).map(|i| (i as f64 - 5.0) * 0.1).collect()).unwrap();
        // a linear functional of the effective weight: L = Σ c ⊙ W
        let w_name = "image.block1.conv.weight".to_string();
        let n = p.tensor(&w_name).numel();
        let c: Vec<f64> = (0..n).map(|i| ((i * 37) % 11) as f64 / 11.0 - 0.5).collect();
        let loss = |m: &AdaptedModel<f64>| -> f64 {
            crate::tensor::dot(m.effective().tensor(&w_name).data(), &c)
        };
        let dw = BTreeMap::from([(
            w_name.clone(),
            Tensor::from_vec(p.tensor(&w_name).shape(), c.clone()).unwrap(),
        )]);
        let (da, db) = &m.adapter_grads(&dw)["image.block1.conv"];
        let h = 1e-6;
        for idx in [0, 5, 11] {
            let mut plus = m.clone();
            plus.adapter_mut("image.block1.conv").unwrap().a.data_mut()[idx] += h;
            let mut minus = m.clone();
            minus.adapter_mut("image.block1.conv").unwrap().a.data_mut()[idx] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert!((fd - da.data()[idx]).abs() < 1e-6);
        }
        for idx in [0, 40, 71] {
            let mut plus = m.clone();
            plus.adapter_mut("image.block1.conv").unwrap().b.data_mut()[idx] += h;
            let mut minus = m.clone();
            minus.adapter_mut("image.block1.conv").unwrap().b.data_mut()[idx] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert!((fd - db.data()[idx]).abs() < 1e-6);
        }
    }

    #[test]
    fn fold_attach_fold_is_idempotent() {
        let p = base();
        let mut m = attach_adapters(&p, &["image.proj".to_string()], 2, 1.0, 0).unwrap();
        m.adapter_mut("image.proj").unwrap().a = Tensor::filled(&[5, 2], 0.3);
        let once = fold_adapters(&m);
        let again = fold_adapters(&attach_adapters(&once, &["image.proj".to_string()], 2, 1.0, 9).unwrap());
        assert!(once.same_values(&again));
    }
}
