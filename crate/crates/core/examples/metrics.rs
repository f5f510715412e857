//! Pixel metrics on hand-made masks: a 3-px stroke predicted thin, and
//! the same stroke predicted with a spurious blob.

use amsdb::evalkit::{evaluate, skeletonize};
use amsdb::pipeline::BinaryImage;

fn stroke(w: usize, h: usize, rows: std::ops::Range<usize>, extra: &[usize]) -> amsdb::Result<BinaryImage> {
    let mut d = vec![0u8; w * h];
    for r in rows {
        d[r * w + 2..r * w + w - 2].fill(1);
    }
    for &i in extra {
        d[i] = 1;
    }
    BinaryImage::new(w, h, d)
}

fn main() -> amsdb::Result<()> {
    let (w, h) = (16, 9);
    let gt = stroke(w, h, 3..6, &[])?;
    println!("ground-truth ink {}, skeleton ink {}", gt.ink_count(), skeletonize(&gt).ink_count());

    let cases = [
        ("exact", gt.clone()),
        ("thinned", stroke(w, h, 4..5, &[])?),
        ("with blob", stroke(w, h, 3..6, &[w + 1, w + 2, 2 * w + 1, 2 * w + 2])?),
    ];
    for (name, pred) in &cases {
        let m = evaluate(pred, &gt)?;
        println!("{name:<10} {}", m.to_kv());
    }
    Ok(())
}
