//! Geometric augmentation applied identically to an image patch and its
//! ground truth.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Maximum crop offset from the grid origin, per axis.
    pub crop_jitter: usize,
    pub hflip: bool,
    pub vflip: bool,
    /// Rotation by a uniformly chosen multiple of 90°.
    pub rotate: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            crop_jitter: 16,
            hflip: true,
            vflip: true,
            rotate: true,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            crop_jitter: 0,
            hflip: false,
            vflip: false,
            rotate: false,
        }
    }
}

/// The transform drawn for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Transform {
    pub hflip: bool,
    pub vflip: bool,
    /// Clockwise quarter turns, `0..4`.
    pub quarter_turns: u8,
}

impl Transform {
    pub fn sample<R: Rng>(cfg: &AugmentConfig, rng: &mut R) -> Self {
        Transform {
            hflip: cfg.hflip && rng.random_bool(0.5),
            vflip: cfg.vflip && rng.random_bool(0.5),
            quarter_turns: if cfg.rotate { rng.random_range(0..4) } else { 0 },
        }
    }

    /// Applies to `channels` square planes of side `size`.
    pub fn apply(&self, data: &[f32], channels: usize, size: usize) -> Vec<f32> {
        let mut out = data.to_vec();
        if self.hflip {
            out = hflip(&out, channels, size, size);
        }
        if self.vflip {
            out = vflip(&out, channels, size, size);
        }
        for _ in 0..self.quarter_turns {
            out = rot90(&out, channels, size);
        }
        out
    }
}

/// Shifts a grid origin by up to `±jitter`, clamped into `0..=limit`.
pub fn jitter_origin<R: Rng>(origin: usize, limit: usize, jitter: usize, rng: &mut R) -> usize {
    if jitter == 0 {
        return origin;
    }
    let lo = origin.saturating_sub(jitter);
    let hi = (origin + jitter).min(limit);
    rng.random_range(lo..=hi)
}

pub fn hflip(data: &[f32], channels: usize, height: usize, width: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(data.len());
    for row in data[..channels * height * width].chunks(width) {
        out.extend(row.iter().rev());
    }
    out
}

pub fn vflip(data: &[f32], channels: usize, height: usize, width: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(data.len());
    for plane in data[..channels * height * width].chunks(height * width) {
        for row in plane.chunks(width).rev() {
            out.extend_from_slice(row);
        }
    }
    out
}

/// Clockwise quarter turn of square planes.
pub fn rot90(data: &[f32], channels: usize, size: usize) -> Vec<f32> {
    let n = size * size;
    let mut out = vec![0.0; channels * n];
    for c in 0..channels {
        let (src, dst) = (&data[c * n..(c + 1) * n], &mut out[c * n..(c + 1) * n]);
        for r in 0..size {
            for col in 0..size {
                dst[col * size + (size - 1 - r)] = src[r * size + col];
            }
        }
    }
    out
}
