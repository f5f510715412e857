//! Brute-force references shared by the integration tests.
#![allow(dead_code)]

use amsdb::pipeline::{BinaryImage, GrayImage};
use amsdb::tensor::reflect_index;

/// Counts by direct enumeration: (tp, fp, fn, tn).
pub fn counts(pred: &BinaryImage, gt: &BinaryImage) -> (u64, u64, u64, u64) {
    let mut c = (0, 0, 0, 0);
    for r in 0..gt.height {
        for col in 0..gt.width {
            match (pred.get(r, col), gt.get(r, col)) {
                (1, 1) => c.0 += 1,
                (1, 0) => c.1 += 1,
                (0, 1) => c.2 += 1,
                _ => c.3 += 1,
            }
        }
    }
    c
}

pub fn hm(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Threshold maximising `w0·w1·(μ0 − μ1)²` over `t ∈ 1..=255`, classes
/// `bin < t` and `bin ≥ t`; first maximum wins.
pub fn otsu_exhaustive(img: &GrayImage) -> usize {
    let bins: Vec<usize> = img.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as usize).collect();
    let n = bins.len() as f64;
    let mut best = (-1.0f64, 0usize);
    for t in 1..256 {
        let lo: Vec<f64> = bins.iter().filter(|&&b| b < t).map(|&b| b as f64).collect();
        let hi: Vec<f64> = bins.iter().filter(|&&b| b >= t).map(|&b| b as f64).collect();
        if lo.is_empty() || hi.is_empty() {
            continue;
        }
        let m0 = lo.iter().sum::<f64>() / lo.len() as f64;
        let m1 = hi.iter().sum::<f64>() / hi.len() as f64;
        let var = (lo.len() as f64 / n) * (hi.len() as f64 / n) * (m0 - m1).powi(2);
        if var > best.0 * (1.0 + 1e-12) {
            best = (var, t);
        }
    }
    best.1
}

pub fn naive_stats(img: &GrayImage, window: usize, r: usize, c: usize) -> (f64, f64) {
    let half = (window / 2) as isize;
    let (mut s, mut s2) = (0.0f64, 0.0f64);
    for dy in -half..=half {
        for dx in -half..=half {
            let y = reflect_index(r as isize + dy, img.height);
            let x = reflect_index(c as isize + dx, img.width);
            let v = img.get(y, x) as f64;
            s += v;
            s2 += v * v;
        }
    }
    let n = (window * window) as f64;
    let m = s / n;
    (m, (s2 / n - m * m).max(0.0).sqrt())
}
