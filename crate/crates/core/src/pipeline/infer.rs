//! Sliding-window inference over whole pages.

use serde::{Deserialize, Serialize};

use super::image::{BinaryImage, GrayImage, RgbImage};
use super::patches::{extract_patches, stitch, PatchGrid, DEFAULT_STRIDE, PATCH_SIZE};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{no_grad, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferConfig {
    pub patch_size: usize,
    pub stride: usize,
    /// Patches per forward pass.
    pub batch_size: usize,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            patch_size: PATCH_SIZE,
            stride: DEFAULT_STRIDE,
            batch_size: 16,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub binary: BinaryImage,
    /// Stitched ink probability.
    pub probability: GrayImage,
}

/// Pads (reflect), runs every patch, averages the overlapping sigmoid
/// outputs, thresholds at 0.5 and crops back to the input size.
pub fn infer(model: &Model, image: &RgbImage, cfg: &InferConfig) -> Result<Prediction> {
    let size = cfg.patch_size;
    if !size.is_multiple_of(model.config.downsample_factor()) {
        return Err(Error::Config(format!(
            "patch size {size} is not a multiple of the model's downsample factor {}",
            model.config.downsample_factor()
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("inference batch size must be positive".into()));
    }
    let padded = image.pad_reflect(size, size);
    let grid = PatchGrid::new(padded.height, padded.width, size, cfg.stride)?;
    let patches = extract_patches(&padded.data, 3, &grid)?;

    let mut probs: Vec<Vec<f32>> = Vec::with_capacity(patches.len());
    for chunk in patches.chunks(cfg.batch_size) {
        let x = Tensor::new(&[chunk.len(), 3, size, size], chunk.concat())?;
        let p = no_grad(|| model.forward(&x))?.probabilities();
        probs.extend(p.data().chunks(size * size).map(<[f32]>::to_vec));
    }
    let full = stitch(&probs, 1, &grid)?;

    let (w, h) = (image.width, image.height);
    let mut cropped = Vec::with_capacity(w * h);
    for r in 0..h {
        cropped.extend_from_slice(&full[r * padded.width..r * padded.width + w]);
    }
    if cropped.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("inference produced non-finite probabilities".into()));
    }
    Ok(Prediction {
        binary: BinaryImage::threshold(w, h, &cropped)?,
        probability: GrayImage::new(w, h, cropped)?,
    })
}
