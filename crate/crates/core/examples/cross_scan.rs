//! The four scan orders over a small grid, and the unscan/merge round trip.

use amsdb::ssm::{expand, merge, ScanDirection};
use amsdb::Tensor;

fn main() -> amsdb::Result<()> {
    let (h, w) = (3, 4);
    for dir in ScanDirection::ALL {
        println!("{dir:?}: {:?}", dir.order(h, w));
    }

    // one channel holding its own grid index
    let grid = Tensor::new(&[1, 1, h, w], (0..h * w).map(|v| v as f32).collect())?;
    let seqs = expand(&grid)?;
    println!("column-major sequence: {:?}", seqs.sequences[2].to_vec());

    // scanning with the identity map and merging gives 4x the input
    let merged = merge(&seqs.sequences, h, w)?;
    let back: Vec<f32> = merged.to_vec().iter().map(|v| v / 4.0).collect();
    assert_eq!(back, grid.to_vec());
    println!("merge(expand(x)) / 4 == x");
    Ok(())
}
