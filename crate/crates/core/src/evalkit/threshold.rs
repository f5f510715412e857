//! Classical global and local thresholding baselines. Dark pixels below
//! the threshold become ink.

use crate::error::{Error, Result};
use crate::pipeline::image::{BinaryImage, GrayImage};
use crate::tensor::reflect_index;

pub const SAUVOLA_WINDOW: usize = 25;
pub const SAUVOLA_K: f64 = 0.2;
pub const SAUVOLA_R: f64 = 0.5;
pub const BRADLEY_T_PERCENT: f64 = 15.0;

/// Histogram bin of an intensity in `[0, 1]`.
pub fn bin_of(v: f32) -> usize {
    (v.clamp(0.0, 1.0) * 255.0).round() as usize
}

pub fn histogram(img: &GrayImage) -> [u64; 256] {
    let mut h = [0u64; 256];
    for &v in &img.data {
        h[bin_of(v)] += 1;
    }
    h
}

/// Full 256-bit product of two `u128`s as `(high, low)`.
fn mul_wide(a: u128, b: u128) -> (u128, u128) {
    let mask = u64::MAX as u128;
    let (a1, a0) = (a >> 64, a & mask);
    let (b1, b0) = (b >> 64, b & mask);
    let lo = a0 * b0;
    let mid1 = a1 * b0;
    let mid2 = a0 * b1;
    let hi = a1 * b1;
    let (mid, carry_mid) = mid1.overflowing_add(mid2);
    let (low, carry_lo) = lo.overflowing_add((mid & mask) << 64);
    let high = hi + (mid >> 64) + ((carry_mid as u128) << 64) + carry_lo as u128;
    (high, low)
}

/// Between-class variance of splitting the histogram at `t` (classes
/// `< t` and `≥ t`), as the exact fraction `num/den` up to a constant
/// factor.
fn between_class(hist: &[u64; 256], t: usize) -> (u128, u128) {
    let (mut n0, mut s0, mut n1, mut s1) = (0u128, 0u128, 0u128, 0u128);
    for (b, &c) in hist.iter().enumerate() {
        let (c, bv) = (c as u128, b as u128);
        if b < t {
            n0 += c;
            s0 += c * bv;
        } else {
            n1 += c;
            s1 += c * bv;
        }
    }
    if n0 == 0 || n1 == 0 {
        return (0, 1);
    }
    let d = (s0 * n1).abs_diff(s1 * n0);
    (d * d, n0 * n1)
}

/// Otsu's threshold as a bin index in `0..=255` and the binarised image
/// (bins below the threshold are ink). Ties go to the lowest threshold; a
/// constant image returns its own bin and no ink.
pub fn otsu(img: &GrayImage) -> Result<(usize, BinaryImage)> {
    if img.data.is_empty() {
        return Err(Error::Param("otsu needs a non-empty image".into()));
    }
    let hist = histogram(img);
    let mut best_t = 0;
    let mut best = (0u128, 1u128);
    for t in 1..256 {
        let (num, den) = between_class(&hist, t);
        // num/den > best.0/best.1, compared exactly
        if mul_wide(num, best.1) > mul_wide(best.0, den) {
            best = (num, den);
            best_t = t;
        }
    }
    if best.0 == 0 {
        best_t = bin_of(img.data[0]);
    }
    let data = img.data.iter().map(|&v| (bin_of(v) < best_t) as u8).collect();
    Ok((best_t, BinaryImage::new(img.width, img.height, data)?))
}

fn check_window(window: usize) -> Result<()> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::Param(format!("window must be odd and ≥ 3, got {window}")));
    }
    Ok(())
}

/// Local mean and standard deviation over a reflect-padded `window²`
/// neighbourhood, via summed-area tables in `f64`.
pub fn local_stats(img: &GrayImage, window: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    check_window(window)?;
    let (w, h, r) = (img.width, img.height, window / 2);
    let (pw, ph) = (w + 2 * r, h + 2 * r);
    let mut s1 = vec![0.0f64; (pw + 1) * (ph + 1)];
    let mut s2 = vec![0.0f64; (pw + 1) * (ph + 1)];
    for y in 0..ph {
        let sy = reflect_index(y as isize - r as isize, h);
        let (mut row1, mut row2) = (0.0f64, 0.0f64);
        for x in 0..pw {
            let sx = reflect_index(x as isize - r as isize, w);
            let v = img.data[sy * w + sx] as f64;
            row1 += v;
            row2 += v * v;
            let i = (y + 1) * (pw + 1) + x + 1;
            s1[i] = s1[i - pw - 1] + row1;
            s2[i] = s2[i - pw - 1] + row2;
        }
    }
    let area = (window * window) as f64;
    let rect = |s: &[f64], y: usize, x: usize| {
        let (y1, x1) = (y + window, x + window);
        s[y1 * (pw + 1) + x1] - s[y * (pw + 1) + x1] - s[y1 * (pw + 1) + x] + s[y * (pw + 1) + x]
    };
    let mut mean = Vec::with_capacity(w * h);
    let mut std = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let m = rect(&s1, y, x) / area;
            let var = rect(&s2, y, x) / area - m * m;
            mean.push(m);
            std.push(var.max(0.0).sqrt());
        }
    }
    Ok((mean, std))
}

/// Ink where `v < m·(1 + k·(s/R − 1))`.
pub fn sauvola(img: &GrayImage, window: usize, k: f64, r: f64) -> Result<BinaryImage> {
    if !(r > 0.0) {
        return Err(Error::Param(format!("Sauvola R must be positive, got {r}")));
    }
    let (mean, std) = local_stats(img, window)?;
    let data = img
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| ((v as f64) < mean[i] * (1.0 + k * (std[i] / r - 1.0))) as u8)
        .collect();
    BinaryImage::new(img.width, img.height, data)
}

/// The original method's default: an eighth of the width, made odd, ≥ 3.
pub fn bradley_default_window(width: usize) -> usize {
    let w = (width / 8).max(3);
    if w.is_multiple_of(2) {
        w + 1
    } else {
        w
    }
}

/// Ink where `v < mean·(1 − t_percent/100)`.
pub fn bradley(img: &GrayImage, window: usize, t_percent: f64) -> Result<BinaryImage> {
    if !(0.0..=100.0).contains(&t_percent) {
        return Err(Error::Param(format!("t_percent must be in [0, 100], got {t_percent}")));
    }
    let (mean, _) = local_stats(img, window)?;
    let f = 1.0 - t_percent / 100.0;
    let data = img
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| ((v as f64) < mean[i] * f) as u8)
        .collect();
    BinaryImage::new(img.width, img.height, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wide_multiply_matches_u128_when_small() {
        assert_eq!(mul_wide(3, 5), (0, 15));
        assert_eq!(mul_wide(u128::MAX, 2), (1, u128::MAX - 1));
        assert_eq!(mul_wide(1 << 64, 1 << 64), (1, 0));
    }

    #[test]
    fn two_modes_split() {
        let data: Vec<f32> = (0..64).map(|i| if i % 2 == 0 { 0.2 } else { 0.8 }).collect();
        let img = GrayImage::new(8, 8, data.clone()).unwrap();
        let (t, out) = otsu(&img).unwrap();
        assert!(t > bin_of(0.2) && t <= bin_of(0.8));
        // ties: every t in (51, 204] separates equally well, so the lowest wins
        assert_eq!(t, bin_of(0.2) + 1);
        for (o, v) in out.data.iter().zip(&data) {
            assert_eq!(*o, (*v < 0.5) as u8);
        }
    }

    #[test]
    fn constant_images_are_background() {
        let img = GrayImage::filled(6, 5, 0.6);
        let (t, out) = otsu(&img).unwrap();
        assert_eq!(t, bin_of(0.6));
        assert_eq!(out.ink_count(), 0);
        assert_eq!(sauvola(&img, 5, 0.2, 0.5).unwrap().ink_count(), 0);
        assert_eq!(bradley(&img, 5, 15.0).unwrap().ink_count(), 0);
    }

    #[test]
    fn dark_blot_is_ink_under_sauvola() {
        let mut img = GrayImage::filled(15, 15, 0.9);
        for r in 6..9 {
            for c in 6..9 {
                img.data[r * 15 + c] = 0.1;
            }
        }
        let out = sauvola(&img, 9, 0.2, 0.5).unwrap();
        for r in 6..9 {
            for c in 6..9 {
                assert_eq!(out.get(r, c), 1);
            }
        }
        assert_eq!(out.ink_count(), 9);
    }

    #[test]
    fn step_interior_is_background_for_bradley() {
        let (w, h) = (30, 6);
        let data = (0..w * h).map(|i| if i % w < 15 { 0.3 } else { 0.8 }).collect();
        let img = GrayImage::new(w, h, data).unwrap();
        let out = bradley(&img, 5, 15.0).unwrap();
        for r in 0..h {
            for c in (0..12).chain(18..30) {
                assert_eq!(out.get(r, c), 0, "({r},{c})");
            }
        }
    }

    #[test]
    fn even_windows_rejected() {
        let img = GrayImage::filled(4, 4, 0.5);
        assert!(matches!(sauvola(&img, 4, 0.2, 0.5), Err(Error::Param(_))));
        assert!(matches!(bradley(&img, 1, 15.0), Err(Error::Param(_))));
    }

    #[test]
    fn bradley_window_default() {
        assert_eq!(bradley_default_window(200), 25);
        assert_eq!(bradley_default_window(10), 3);
        assert_eq!(bradley_default_window(128), 17);
    }
}
