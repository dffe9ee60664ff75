use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// BatchNorm running-statistics momentum used during pre-training.
pub const BN_MOMENTUM: f64 = 0.1;
/// Variance guard inside BatchNorm normalization.
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub batchnorm: bool,
}

impl BlockSpec {
    pub fn new(width: usize, kernel: usize, stride: usize, batchnorm: bool) -> Self {
        BlockSpec {
            width,
            kernel,
            stride,
            batchnorm,
        }
    }
}

/// Architecture of the dual encoder.
///
/// The image tower is a stack of conv → (BatchNorm) → ReLU blocks with
/// same-padding, followed by global average pooling and a linear projection.
/// The text tower is one embedding row per prompt in `vocab`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub in_channels: usize,
    pub image_size: usize,
    pub blocks: Vec<BlockSpec>,
    pub embed_dim: usize,
    pub vocab: Vec<String>,
    /// Contrastive logits are cosine similarities divided by this.
    pub temperature: f64,
}

/// Kind of a parameterized image-tower layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    BatchNorm,
    Projection,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerInfo {
    pub path: String,
    pub kind: LayerKind,
    /// Trainable parameter entries belonging to this layer.
    pub params: Vec<String>,
    /// Entry that carries the weight matrix, when the layer has one.
    pub matrix: Option<String>,
}

pub const TEXT_EMBEDDING: &str = "text.embedding";
pub const PROJ_WEIGHT: &str = "image.proj.weight";
pub const PROJ_BIAS: &str = "image.proj.bias";

pub fn conv_weight(block: usize) -> String {
    format!("image.block{block}.conv.weight")
}
pub fn conv_bias(block: usize) -> String {
    format!("image.block{block}.conv.bias")
}
pub fn bn_weight(block: usize) -> String {
    format!("image.block{block}.bn.weight")
}
pub fn bn_bias(block: usize) -> String {
    format!("image.block{block}.bn.bias")
}
pub fn bn_running_mean(block: usize) -> String {
    format!("image.block{block}.bn.running_mean")
}
pub fn bn_running_var(block: usize) -> String {
    format!("image.block{block}.bn.running_var")
}

impl ModelSpec {
    /// The desk-scale architecture used by the reference benchmark.
    pub fn reference(image_size: usize, vocab: Vec<String>) -> Self {
        ModelSpec {
            in_channels: 3,
            image_size,
            blocks: vec![
                BlockSpec::new(8, 3, 1, true),
                BlockSpec::new(16, 3, 2, true),
                BlockSpec::new(64, 3, 2, true),
            ],
            embed_dim: 32,
            vocab,
            temperature: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::config("image tower needs at least one block"));
        }
        if !self.blocks.iter().any(|b| b.batchnorm) {
            return Err(Error::config(
                "at least one image-tower block must carry BatchNorm",
            ));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.width == 0 || b.kernel == 0 || b.stride == 0 {
                return Err(Error::config(format!(
                    "block {i}: width, kernel and stride must be positive"
                )));
            }
            if b.kernel % 2 == 0 {
                return Err(Error::config(format!(
                    "block {i}: kernel must be odd for same padding"
                )));
            }
        }
        if self.embed_dim == 0 || self.in_channels == 0 || self.image_size == 0 {
            return Err(Error::config(
                "embed_dim, in_channels and image_size must be positive",
            ));
        }
        if self.vocab.is_empty() {
            return Err(Error::config("vocabulary is empty"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("temperature must be positive"));
        }
        Ok(())
    }

    /// Spatial side length after each block.
    pub fn spatial_sizes(&self) -> Vec<usize> {
        let mut size = self.image_size;
        self.blocks
            .iter()
            .map(|b| {
                let pad = b.kernel / 2;
                size = (size + 2 * pad - b.kernel) / b.stride + 1;
                size
            })
            .collect()
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.in_channels, self.image_size, self.image_size]
    }

    pub fn last_width(&self) -> usize {
        self.blocks.last().map(|b| b.width).unwrap_or(self.in_channels)
    }

    /// Indices of blocks carrying BatchNorm, in tower order.
    pub fn bn_blocks(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| b.batchnorm)
            .map(|(i, _)| i)
            .collect()
    }

    /// Every entry of a parameter set for this architecture with its shape,
    /// in tower order (image tower first, then the text table).
    pub fn entry_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut in_ch = self.in_channels;
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((conv_weight(i), vec![b.width, in_ch, b.kernel, b.kernel]));
            out.push((conv_bias(i), vec![b.width]));
            if b.batchnorm {
                out.push((bn_weight(i), vec![b.width]));
                out.push((bn_bias(i), vec![b.width]));
                out.push((bn_running_mean(i), vec![b.width]));
                out.push((bn_running_var(i), vec![b.width]));
            }
            in_ch = b.width;
        }
        out.push((PROJ_WEIGHT.to_string(), vec![self.embed_dim, in_ch]));
        out.push((PROJ_BIAS.to_string(), vec![self.embed_dim]));
        out.push((
            TEXT_EMBEDDING.to_string(),
            vec![self.vocab.len(), self.embed_dim],
        ));
        out
    }

    /// Parameterized image-tower layers in tower order.
    pub fn image_layers(&self) -> Vec<LayerInfo> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.push(LayerInfo {
                path: format!("image.block{i}.conv"),
                kind: LayerKind::Conv,
                params: vec![conv_weight(i), conv_bias(i)],
                matrix: Some(conv_weight(i)),
            });
            if b.batchnorm {
                out.push(LayerInfo {
                    path: format!("image.block{i}.bn"),
                    kind: LayerKind::BatchNorm,
                    params: vec![bn_weight(i), bn_bias(i)],
                    matrix: None,
                });
            }
        }
        out.push(LayerInfo {
            path: "image.proj".to_string(),
            kind: LayerKind::Projection,
            params: vec![PROJ_WEIGHT.to_string(), PROJ_BIAS.to_string()],
            matrix: Some(PROJ_WEIGHT.to_string()),
        });
        out
    }

    pub fn layer(&self, path: &str) -> Option<LayerInfo> {
        self.image_layers().into_iter().find(|l| l.path == path)
    }

    /// Trainable image-tower entries (excludes BatchNorm running statistics).
    pub fn image_trainable(&self) -> Vec<String> {
        self.image_layers()
            .into_iter()
            .flat_map(|l| l.params)
            .collect()
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("ModelSpec serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ModelSpec {
        ModelSpec {
            in_channels: 3,
            image_size: 12,
            blocks: vec![BlockSpec::new(4, 3, 1, true), BlockSpec::new(6, 3, 2, false)],
            embed_dim: 5,
            vocab: vec!["a".into(), "b".into()],
            temperature: 0.1,
        }
    }

    #[test]
    fn spatial_sizes_follow_stride() {
        assert_eq!(spec().spatial_sizes(), vec![12, 6]);
    }

    #[test]
    fn requires_batchnorm() {
        let mut s = spec();
        s.blocks[0].batchnorm = false;
        assert!(matches!(s.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn layers_in_tower_order() {
        let paths: Vec<_> = spec().image_layers().into_iter().map(|l| l.path).collect();
        assert_eq!(
            paths,
            vec![
                "image.block0.conv",
                "image.block0.bn",
                "image.block1.conv",
                "image.proj"
            ]
        );
    }

    #[test]
    fn fingerprint_tracks_architecture() {
        let a = spec();
        let mut b = spec();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.embed_dim = 6;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
