//! Finite-difference check of the hand-written selective-scan backward pass
//! and of a small convolution.

use amsdb::ssm::selective_scan;
use amsdb::tensor::check_gradients;
use amsdb::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn leaf(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> amsdb::Result<Tensor> {
    let n = shape.iter().product();
    Tensor::param(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect())
}

fn main() -> amsdb::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (b, l, e, s) = (2, 7, 3, 4);
    let u = leaf(&mut rng, &[b, l, e], -1.0, 1.0)?;
    let delta = leaf(&mut rng, &[b, l, e], 0.05, 0.8)?;
    let a = leaf(&mut rng, &[e, s], -2.0, -0.2)?;
    let bm = leaf(&mut rng, &[b, l, s], -1.0, 1.0)?;
    let cm = leaf(&mut rng, &[b, l, s], -1.0, 1.0)?;
    let d = leaf(&mut rng, &[e], -1.0, 1.0)?;
    let inputs = [u, delta, a, bm, cm, d];
    let report = check_gradients(
        || selective_scan(&inputs[0], &inputs[1], &inputs[2], &inputs[3], &inputs[4], &inputs[5]),
        &inputs,
        1e-2,
        64,
        0,
    )?;
    for (name, err) in ["u", "delta", "A", "B", "C", "D"].iter().zip(&report.per_input) {
        println!("scan  d/d{name:<6} relative error {err:.2e}");
    }

    let x = leaf(&mut rng, &[1, 2, 6, 5], -1.0, 1.0)?;
    let k = leaf(&mut rng, &[3, 2, 3, 3], -1.0, 1.0)?;
    let report = check_gradients(|| x.conv2d(&k, None, 2, 1), &[x.clone(), k.clone()], 1e-2, 64, 1)?;
    println!("conv2d (stride 2) max relative error {:.2e}", report.max_rel_error());
    Ok(())
}
