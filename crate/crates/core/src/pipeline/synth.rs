//! Procedural text-like documents with pixel-exact ground truth.
//!
//! Each page carries a few lines of pseudo-glyphs made of 2–3 px strokes,
//! dark ink on a tinted background with smooth stains and Gaussian noise.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::{DatasetIndex, Record};
use super::image::{save_binary, save_rgb, BinaryImage, RgbImage};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub noise_std: f32,
    /// Strength of the darkest stain relative to the background.
    pub stain: f32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 128,
            height: 128,
            noise_std: 0.04,
            stain: 0.2,
        }
    }
}

fn segment_distance(px: f32, py: f32, a: (f32, f32), b: (f32, f32)) -> f32 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

struct Stroke {
    a: (f32, f32),
    b: (f32, f32),
    radius: f32,
}

fn glyph_strokes<R: Rng>(rng: &mut R, x0: f32, y0: f32, w: f32, h: f32, radius: f32) -> Vec<Stroke> {
    let n = rng.random_range(2..=4);
    let mut pt = || (x0 + rng.random_range(0.0..w), y0 + rng.random_range(0.0..h));
    let mut strokes = Vec::with_capacity(n);
    let mut prev = pt();
    for _ in 0..n {
        let next = pt();
        strokes.push(Stroke { a: prev, b: next, radius });
        prev = next;
    }
    strokes
}

/// One degraded page and its ground truth, fully determined by `seed`.
pub fn synthetic_pair(seed: u64, cfg: &SynthConfig) -> Result<(RgbImage, BinaryImage)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (cfg.width, cfg.height);

    let mut strokes = Vec::new();
    let line_height = rng.random_range(22.0..30.0f32);
    let mut y = rng.random_range(4.0..10.0f32);
    while y + line_height * 0.7 < h as f32 {
        let mut x = rng.random_range(2.0..8.0f32);
        let gh = line_height * rng.random_range(0.5..0.7);
        while x + 6.0 < w as f32 {
            let gw = rng.random_range(6.0..11.0f32);
            // stroke widths of 2 or 3 px
            let radius = if rng.random_bool(0.5) { 1.0 } else { 1.5 };
            strokes.extend(glyph_strokes(&mut rng, x, y, gw, gh, radius));
            x += gw + rng.random_range(3.0..6.0);
            if rng.random_bool(0.15) {
                x += rng.random_range(5.0..10.0);
            }
        }
        y += line_height;
    }

    let mut gt = vec![0u8; w * h];
    for s in &strokes {
        let (xmin, xmax) = (s.a.0.min(s.b.0) - s.radius, s.a.0.max(s.b.0) + s.radius);
        let (ymin, ymax) = (s.a.1.min(s.b.1) - s.radius, s.a.1.max(s.b.1) + s.radius);
        for r in (ymin.floor().max(0.0) as usize)..=(ymax.ceil().min(h as f32 - 1.0) as usize) {
            for c in (xmin.floor().max(0.0) as usize)..=(xmax.ceil().min(w as f32 - 1.0) as usize) {
                if segment_distance(c as f32 + 0.5, r as f32 + 0.5, s.a, s.b) <= s.radius {
                    gt[r * w + c] = 1;
                }
            }
        }
    }

    let background = rng.random_range(0.7..0.9f32);
    let ink = rng.random_range(0.1..0.3f32);
    let tint = [1.0, rng.random_range(0.94..1.0f32), rng.random_range(0.85..0.95f32)];
    let stains: Vec<(f32, f32, f32, f32)> = (0..rng.random_range(2..=4))
        .map(|_| {
            (
                rng.random_range(0.0..w as f32),
                rng.random_range(0.0..h as f32),
                rng.random_range(15.0..40.0f32),
                rng.random_range(0.3..1.0f32) * cfg.stain,
            )
        })
        .collect();
    let noise = Normal::new(0.0f32, cfg.noise_std.max(0.0)).expect("finite std");

    let mut data = vec![0.0f32; 3 * w * h];
    for r in 0..h {
        for c in 0..w {
            let shade: f32 = stains
                .iter()
                .map(|&(sx, sy, rad, amp)| {
                    let d2 = (c as f32 - sx).powi(2) + (r as f32 - sy).powi(2);
                    amp * (-d2 / (2.0 * rad * rad)).exp()
                })
                .sum();
            let base = if gt[r * w + c] == 1 { ink } else { background * (1.0 - shade) };
            for (ch, t) in tint.iter().enumerate() {
                let v = base * t + noise.sample(&mut rng);
                data[ch * w * h + r * w + c] = v.clamp(0.0, 1.0);
            }
        }
    }
    Ok((RgbImage::new(w, h, data)?, BinaryImage::new(w, h, gt)?))
}

/// Writes `count` pages under `dir` (`degraded/`, `gt/`, `manifest.tsv`),
/// assigning year tags round-robin. Returns the manifest path and index.
pub fn write_corpus(
    dir: impl AsRef<Path>,
    count: usize,
    seed: u64,
    years: &[String],
    cfg: &SynthConfig,
) -> Result<(PathBuf, DatasetIndex)> {
    let dir = dir.as_ref();
    let mut records = Vec::with_capacity(count);
    let mut lines = String::new();
    for i in 0..count {
        let (img, gt) = synthetic_pair(seed.wrapping_mul(1_000_003).wrapping_add(i as u64), cfg)?;
        let name = format!("page{i:03}.png");
        let (d, g) = (Path::new("degraded").join(&name), Path::new("gt").join(&name));
        save_rgb(&img, dir.join(&d))?;
        save_binary(&gt, dir.join(&g))?;
        let year = years.get(i % years.len().max(1)).cloned().unwrap_or_else(|| "synthetic".into());
        lines.push_str(&format!("{year}\t{}\t{}\n", d.display(), g.display()));
        records.push(Record {
            year,
            degraded: dir.join(d),
            gt: dir.join(g),
        });
    }
    let manifest = dir.join("manifest.tsv");
    super::image::write_atomic(&manifest, lines.as_bytes())?;
    Ok((manifest, DatasetIndex { records }))
}
