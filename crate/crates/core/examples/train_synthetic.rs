//! Overfits the desk-scale network on a small procedural corpus and reports
//! training-set quality.
//!
//!     cargo run --release --example train_synthetic -- [steps] [skip-mode]

use std::time::Instant;

use amsdb::evalkit::{evaluate, MetricsReport};
use amsdb::model::{ModelConfig, SkipMode};
use amsdb::pipeline::{infer, synthetic_pair, train, AugmentConfig, InferConfig, Pair, SynthConfig, TrainConfig};

fn main() -> amsdb::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);
    let mode: SkipMode = args.next().as_deref().unwrap_or("dog-residual").parse()?;

    let pairs: Vec<Pair> = (0..8)
        .map(|i| {
            let (image, gt) = synthetic_pair(i, &SynthConfig::default())?;
            Ok(Pair { id: format!("page{i}"), image, gt })
        })
        .collect::<amsdb::Result<_>>()?;

    let model_cfg = ModelConfig::desk(vec![16, 32], vec![1, 1], mode);
    let cfg = TrainConfig {
        steps,
        batch_size: 8,
        lr: 1e-3,
        augment: AugmentConfig { crop_jitter: 0, ..AugmentConfig::default() },
        val_fraction: 0.0,
        val_every: 50,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let out = train(&model_cfg, &cfg, &pairs, |row| {
        if let (Some(vl), fm) = (row.val_loss, row.val_fm) {
            println!(
                "step {:4}  loss {:.4}  val_loss {vl:.4}  val_fm {:.2}  ({:.0}s)",
                row.step,
                row.loss,
                fm.unwrap_or(f64::NAN),
                start.elapsed().as_secs_f32()
            );
        }
    })?;
    println!("parameters: {}", out.model.num_params());

    let rows = pairs
        .iter()
        .map(|p| evaluate(&infer(&out.model, &p.image, &InferConfig::default())?.binary, &p.gt))
        .collect::<amsdb::Result<Vec<_>>>()?;
    let mean = MetricsReport::mean(&rows).expect("non-empty corpus");
    println!("training set: {}", mean.to_kv());
    Ok(())
}
