//! Patch grids and sliding-window inference on a page whose size is not a
//! multiple of the patch size. The network is untrained here; only shapes
//! and coverage are of interest.

use amsdb::model::{Model, ModelConfig, SkipMode};
use amsdb::pipeline::{extract_patches, infer, stitch, synthetic_pair, InferConfig, PatchGrid, SynthConfig};

fn main() -> amsdb::Result<()> {
    for (h, w) in [(256, 256), (200, 200), (128, 300)] {
        let grid = PatchGrid::new(h, w, 128, 64)?;
        let cov = grid.coverage();
        println!(
            "{h}x{w}: {} patches, coverage {}..={}",
            grid.len(),
            cov.iter().min().unwrap(),
            cov.iter().max().unwrap()
        );
    }

    let (page, _) = synthetic_pair(5, &SynthConfig { width: 210, height: 150, ..SynthConfig::default() })?;
    let grid = PatchGrid::new(page.height.max(128), page.width.max(128), 128, 64)?;
    let padded = page.pad_reflect(128, 128);
    let patches = extract_patches(&padded.data, 3, &grid)?;
    let restored = stitch(&patches, 3, &grid)?;
    println!("stitch(extract(x)) == x: {}", restored == padded.data);

    let model = Model::new(ModelConfig::desk(vec![16, 32], vec![1, 1], SkipMode::DoGResidual), 0)?;
    let pred = infer(&model, &page, &InferConfig::default())?;
    println!(
        "input {}x{} -> prediction {}x{} ({} ink pixels)",
        page.width,
        page.height,
        pred.binary.width,
        pred.binary.height,
        pred.binary.ink_count()
    );
    Ok(())
}
