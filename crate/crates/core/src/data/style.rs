//! Deterministic pixel-level style transforms.

use super::synth::{Dataset, LabeledExample, StyleId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const EDGE_SKETCH: StyleId = StyleId(1);
pub const POSTERIZE: StyleId = StyleId(2);
pub const GRAYSCALE: StyleId = StyleId(3);

const POSTER_LEVELS: usize = 4;

pub fn style_name(style: StyleId) -> Option<&'static str> {
    match style.0 {
        0 => Some("none"),
        1 => Some("sketch"),
        2 => Some("posterize"),
        3 => Some("grayscale"),
        _ => None,
    }
}

fn luminance<T: Scalar>(data: &[T], channels: usize, plane: usize, p: usize) -> T {
    if channels < 3 {
        return data[p];
    }
    let (r, g, b) = (data[p], data[plane + p], data[2 * plane + p]);
    if r == g && g == b {
        return r;
    }
    (T::lit(0.299) * r + T::lit(0.587) * g + T::lit(0.114) * b)
        .min(T::one())
        .max(T::zero())
}

/// Applies a style to one `[C, H, W]` image.
pub fn style_image<T: Scalar>(image: &Tensor<T>, style: StyleId) -> Result<Tensor<T>> {
    let shape = image.shape();
    let (channels, h, w) = (shape[0], shape[1], shape[2]);
    let plane = h * w;
    let src = image.data();
    let mut out = vec![T::zero(); src.len()];
    match style.0 {
        1 => {
            let gray: Vec<T> = (0..plane).map(|p| luminance(src, channels, plane, p)).collect();
            let at = |y: usize, x: usize| gray[y * w + x];
            let half = T::lit(0.5);
            for y in 0..h {
                for x in 0..w {
                    let gx = (at(y, (x + 1).min(w - 1)) - at(y, x.saturating_sub(1))) * half;
                    let gy = (at((y + 1).min(h - 1), x) - at(y.saturating_sub(1), x)) * half;
                    let mag = (gx * gx + gy * gy).sqrt() * T::lit(4.0);
                    let v = mag.min(T::one());
                    for c in 0..channels {
                        out[c * plane + y * w + x] = v;
                    }
                }
            }
        }
        2 => {
            let levels = T::lit(POSTER_LEVELS as f64);
            let top = T::lit((POSTER_LEVELS - 1) as f64);
            for (o, &v) in out.iter_mut().zip(src) {
                let q = (v * levels).floor().min(top).max(T::zero());
                *o = q / top;
            }
        }
        3 => {
            for p in 0..plane {
                let g = luminance(src, channels, plane, p);
                for c in 0..channels {
                    out[c * plane + p] = g;
                }
            }
        }
        other => {
            return Err(Error::config(format!(
                "unknown style id {other} (expected 1 sketch, 2 posterize, 3 grayscale)"
            )))
        }
    }
    Tensor::from_vec(shape, out)
}

pub fn style_example<T: Scalar>(e: &LabeledExample<T>, style: StyleId) -> Result<LabeledExample<T>> {
    Ok(LabeledExample {
        image: style_image(&e.image, style)?,
        style,
        ..e.clone()
    })
}

/// Restyles every example; labels and ids are unchanged.
pub fn apply_style<T: Scalar>(dataset: &Dataset<T>, style: StyleId) -> Result<Dataset<T>> {
    let examples = dataset
        .examples
        .iter()
        .map(|e| style_example(e, style))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        spec: dataset.spec.clone(),
        examples,
        log: dataset.log.clone(),
    })
}
