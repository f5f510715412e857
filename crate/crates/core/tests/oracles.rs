//! Metrics and thresholds against brute-force reference implementations.

mod common;

use amsdb::evalkit::{evaluate, f_measure, local_stats, otsu, pseudo_f_measure, psnr, skeletonize};
use amsdb::evalkit::{bradley, sauvola};
use amsdb::pipeline::{BinaryImage, GrayImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{counts, hm, naive_stats, otsu_exhaustive};

fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize) -> BinaryImage {
    let density = rng.random_range(0.05..0.5);
    BinaryImage::new(w, h, (0..w * h).map(|_| rng.random_bool(density) as u8).collect()).unwrap()
}

#[test]
fn pixel_metrics_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..100 {
        let gt = loop {
            let m = random_mask(&mut rng, 16, 16);
            if m.ink_count() > 0 {
                break m;
            }
        };
        // every tenth prediction is empty, every tenth identical
        let pred = match case % 10 {
            0 => BinaryImage::empty(16, 16),
            1 => gt.clone(),
            _ => random_mask(&mut rng, 16, 16),
        };
        let (tp, fp, fn_, tn) = counts(&pred, &gt);
        assert_eq!(tp + fp + fn_ + tn, 256);
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = tp as f64 / (tp + fn_) as f64;
        let (lp, lr, lf) = f_measure(&pred, &gt).unwrap();
        assert_eq!(lp, p * 100.0, "case {case}");
        assert_eq!(lr, r * 100.0, "case {case}");
        assert_eq!(lf, hm(p, r) * 100.0, "case {case}");
        // closed form as a second opinion
        assert!((lf - 200.0 * tp as f64 / (2 * tp + fp + fn_) as f64).abs() < 1e-9);

        let mse = (fp + fn_) as f64 / 256.0;
        let want_psnr = if mse == 0.0 { 100.0 } else { (10.0 * (1.0 / mse).log10()).min(100.0) };
        assert_eq!(psnr(&pred, &gt).unwrap(), want_psnr, "case {case}");

        let mut skel = skeletonize(&gt);
        if skel.ink_count() == 0 {
            skel = gt.clone();
        }
        let (stp, _, sfn, _) = counts(&pred, &skel);
        let pr = stp as f64 / (stp + sfn) as f64;
        let (lpr, lpp, lfps) = pseudo_f_measure(&pred, &gt).unwrap();
        assert_eq!(lpr, pr * 100.0, "case {case}");
        assert_eq!(lpp, p * 100.0, "case {case}");
        assert_eq!(lfps, hm(p, pr) * 100.0, "case {case}");

        let rep = evaluate(&pred, &gt).unwrap();
        assert_eq!((rep.tp, rep.fp, rep.fn_, rep.tn), (tp, fp, fn_, tn));
    }
}

#[test]
fn otsu_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..50 {
        let (w, h) = (rng.random_range(4..40), rng.random_range(4..40));
        // bimodal with varying separation
        let (a, b) = (rng.random_range(0.0..0.5f32), rng.random_range(0.5..1.0f32));
        let data = (0..w * h)
            .map(|_| {
                let c = if rng.random_bool(0.3) { a } else { b };
                (c + rng.random_range(-0.15..0.15f32)).clamp(0.0, 1.0)
            })
            .collect();
        let img = GrayImage::new(w, h, data).unwrap();
        let (t, bin) = otsu(&img).unwrap();
        assert_eq!(t, otsu_exhaustive(&img), "case {case}");
        for (i, &v) in img.data.iter().enumerate() {
            assert_eq!(bin.data[i], (((v * 255.0).round() as usize) < t) as u8);
        }
    }
}

#[test]
fn local_statistics_match_double_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..8 {
        let (w, h) = (rng.random_range(5..30), rng.random_range(5..30));
        let img = GrayImage::new(w, h, (0..w * h).map(|_| rng.random()).collect()).unwrap();
        for window in [3, 5, 9] {
            let (mean, std) = local_stats(&img, window).unwrap();
            let sv = sauvola(&img, window, 0.2, 0.5).unwrap();
            let br = bradley(&img, window, 15.0).unwrap();
            for r in 0..h {
                for c in 0..w {
                    let (m, s) = naive_stats(&img, window, r, c);
                    assert!((mean[r * w + c] - m).abs() < 1e-5);
                    assert!((std[r * w + c] - s).abs() < 1e-5);
                    let v = img.get(r, c) as f64;
                    let ts = m * (1.0 + 0.2 * (s / 0.5 - 1.0));
                    if (v - ts).abs() > 1e-5 {
                        assert_eq!(sv.get(r, c), (v < ts) as u8);
                    }
                    let tb = m * 0.85;
                    if (v - tb).abs() > 1e-5 {
                        assert_eq!(br.get(r, c), (v < tb) as u8);
                    }
                }
            }
        }
    }
}
