//! Classical thresholding on a procedural page, scored against its ground
//! truth. Pass a directory to also write the binarised images.
//!
//!     cargo run --release --example baselines -- [out-dir]

use std::path::PathBuf;

use amsdb::evalkit::{bradley, evaluate, otsu, sauvola, threshold};
use amsdb::pipeline::image::save_binary;
use amsdb::pipeline::{synthetic_pair, SynthConfig};

fn main() -> amsdb::Result<()> {
    let out_dir = std::env::args().nth(1).map(PathBuf::from);
    let cfg = SynthConfig { width: 256, height: 192, ..SynthConfig::default() };
    let (page, gt) = synthetic_pair(11, &cfg)?;
    let gray = page.to_gray();

    let (t, global) = otsu(&gray)?;
    println!("otsu threshold bin {t}");
    let window = threshold::bradley_default_window(gray.width);
    let results = [
        ("otsu", global),
        ("sauvola", sauvola(&gray, threshold::SAUVOLA_WINDOW, threshold::SAUVOLA_K, threshold::SAUVOLA_R)?),
        ("bradley", bradley(&gray, window, threshold::BRADLEY_T_PERCENT)?),
    ];
    for (name, bin) in &results {
        let m = evaluate(bin, &gt)?;
        println!("{name:<8} FM {:6.2}  pseudo-FM {:6.2}  PSNR {:5.2} dB", m.fmeasure, m.pseudo_fmeasure, m.psnr);
        if let Some(dir) = &out_dir {
            save_binary(bin, dir.join(format!("{name}.png")))?;
        }
    }
    Ok(())
}
