//! Zhang-Suen thinning.

use crate::pipeline::image::BinaryImage;

/// Thins ink regions to 8-connected, 1-pixel-wide curves. Pixels outside
/// the image count as background.
pub fn skeletonize(img: &BinaryImage) -> BinaryImage {
    let (w, h) = (img.width as isize, img.height as isize);
    let mut cur = img.data.clone();
    let at = |d: &[u8], r: isize, c: isize| -> u8 {
        if r < 0 || c < 0 || r >= h || c >= w {
            0
        } else {
            d[(r * w + c) as usize]
        }
    };
    let mut remove = Vec::new();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            remove.clear();
            for r in 0..h {
                for c in 0..w {
                    if cur[(r * w + c) as usize] == 0 {
                        continue;
                    }
                    // P2..P9 clockwise from north
                    let p = [
                        at(&cur, r - 1, c),
                        at(&cur, r - 1, c + 1),
                        at(&cur, r, c + 1),
                        at(&cur, r + 1, c + 1),
                        at(&cur, r + 1, c),
                        at(&cur, r + 1, c - 1),
                        at(&cur, r, c - 1),
                        at(&cur, r - 1, c - 1),
                    ];
                    let b: u8 = p.iter().sum();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8).filter(|&i| p[i] == 0 && p[(i + 1) % 8] == 1).count();
                    if a != 1 {
                        continue;
                    }
                    let (p2, p4, p6, p8) = (p[0], p[2], p[4], p[6]);
                    let ok = if pass == 0 {
                        p2 * p4 * p6 == 0 && p4 * p6 * p8 == 0
                    } else {
                        p2 * p4 * p8 == 0 && p2 * p6 * p8 == 0
                    };
                    if ok {
                        remove.push((r * w + c) as usize);
                    }
                }
            }
            for &i in &remove {
                cur[i] = 0;
            }
            changed |= !remove.is_empty();
        }
        if !changed {
            break;
        }
    }
    BinaryImage {
        width: img.width,
        height: img.height,
        data: cur,
    }
}
