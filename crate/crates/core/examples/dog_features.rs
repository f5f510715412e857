//! Multiscale difference-of-Gaussians responses on a synthetic stroke.
//!
//! Each band keeps detail between two blur scales; a constant map has no
//! detail at any scale, so the bank annihilates it.

use amsdb::dog::DoGBank;
use amsdb::Tensor;

fn energy(t: &Tensor) -> f32 {
    t.to_vec().iter().map(|v| v * v).sum::<f32>().sqrt()
}

fn main() -> amsdb::Result<()> {
    let (h, w) = (32, 32);
    // one dark vertical stroke, three pixels wide, on a bright page
    let page: Vec<f32> = (0..h * w)
        .map(|i| if (14..17).contains(&(i % w)) { 0.1 } else { 0.9 })
        .collect();
    let x = Tensor::new(&[1, 1, h, w], page)?;

    let bank = DoGBank::new(3, 0.8)?;
    for (i, (band, &(s1, s2))) in bank.responses(&x)?.iter().zip(bank.pairs()).enumerate() {
        println!("band {i}: sigma {s1:.3} -> {s2:.3}  energy {:.4}", energy(band));
    }
    println!("weighted sum energy {:.4}", energy(&bank.apply(&x)?));

    let flat = Tensor::full(&[1, 1, h, w], 0.6);
    let residue = bank.apply(&flat)?.to_vec().iter().fold(0.0f32, |m, v| m.max(v.abs()));
    println!("max |response| on a constant map: {residue:.1e}");
    Ok(())
}
