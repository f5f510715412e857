//! Save a model with its optimizer state, reload it, and confirm the
//! outputs match bit for bit.

use amsdb::model::{default_scale_weights, loss, Model, ModelConfig, SkipMode};
use amsdb::pipeline::Checkpoint;
use amsdb::tensor::{no_grad, Adam};
use amsdb::Tensor;

fn main() -> amsdb::Result<()> {
    let cfg = ModelConfig::desk(vec![8, 16], vec![1, 1], SkipMode::DoG);
    let model = Model::new(cfg, 42)?;
    let mut adam = Adam::new(1e-3);

    // one update so the optimizer moments are non-trivial
    let x = Tensor::full(&[1, 3, 32, 32], 0.5);
    let target = Tensor::new(&[1, 1, 32, 32], (0..1024).map(|i| ((i / 32) % 4 == 0) as u8 as f32).collect())?;
    let scales = model.config.num_scales();
    loss(&model.forward(&x)?, &target, &default_scale_weights(scales))?.backward()?;
    adam.step(&model.params())?;

    let path = std::env::temp_dir().join("amsdb-example.ckpt");
    Checkpoint::from_model(&model, 42, 1, Some(&adam)).save(&path)?;
    let loaded = Checkpoint::load(&path)?;
    let bytes = loaded.to_bytes()?.len();
    println!("{} arrays, {bytes} bytes, step {}", loaded.arrays.len(), loaded.step);

    let restored = loaded.to_model()?;
    let (a, b) = no_grad(|| -> amsdb::Result<_> { Ok((model.forward(&x)?, restored.forward(&x)?)) })?;
    let same = a.finest().to_vec() == b.finest().to_vec();
    println!("identical predictions after reload: {same}");
    std::fs::remove_file(&path).ok();
    Ok(())
}
