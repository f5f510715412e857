use std::path::Path;

use amsdb::dog::{gaussian_kernel, sigma_schedule, DoGBank};
use amsdb::evalkit::{evaluate, psnr};
use amsdb::model::{Model, ModelConfig, SkipMode};
use amsdb::pipeline::augment::{hflip, rot90, vflip};
use amsdb::pipeline::patches::axis_origins;
use amsdb::pipeline::{
    extract_patches, leave_one_out_split, stitch, synthetic_pair, train, AugmentConfig, BinaryImage, Checkpoint,
    DatasetIndex, Pair, PatchGrid, SynthConfig, TrainConfig,
};
use amsdb::ssm::{expand, merge, ScanDirection};
use amsdb::Tensor;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grid_covers_every_pixel(h in 128usize..400, w in 128usize..400, stride in 1usize..=128) {
        let grid = PatchGrid::new(h, w, 128, stride).unwrap();
        let rows = axis_origins(h, 128, stride);
        let cols = axis_origins(w, 128, stride);
        prop_assert_eq!(grid.len(), rows.len() * cols.len());
        prop_assert_eq!(*rows.last().unwrap(), h - 128);
        prop_assert!(grid.coverage().iter().all(|&c| c >= 1));
    }

    #[test]
    fn stitch_inverts_extract(h in 8usize..40, w in 8usize..40, size in 4usize..8, seed in any::<u64>()) {
        let stride = 1 + (seed as usize % size);
        let data: Vec<f32> = (0..2 * h * w).map(|i| ((i as u64).wrapping_mul(seed | 1) % 997) as f32).collect();
        let grid = PatchGrid::new(h, w, size, stride).unwrap();
        let back = stitch(&extract_patches(&data, 2, &grid).unwrap(), 2, &grid).unwrap();
        prop_assert_eq!(back, data);
    }

    #[test]
    fn flips_and_rotations_are_involutions(n in 1usize..12, seed in any::<u32>()) {
        let data: Vec<f32> = (0..3 * n * n).map(|i| (i as u32 ^ seed) as f32).collect();
        prop_assert_eq!(hflip(&hflip(&data, 3, n, n), 3, n, n), data.clone());
        prop_assert_eq!(vflip(&vflip(&data, 3, n, n), 3, n, n), data.clone());
        let mut r = data.clone();
        for _ in 0..4 {
            r = rot90(&r, 3, n);
        }
        prop_assert_eq!(r, data);
    }

    #[test]
    fn scan_orders_are_permutations(h in 1usize..9, w in 1usize..9) {
        for dir in ScanDirection::ALL {
            let mut o = dir.order(h, w);
            o.sort_unstable();
            prop_assert_eq!(o, (0..h * w).collect::<Vec<_>>());
        }
        let x = Tensor::new(&[1, 2, h, w], (0..2 * h * w).map(|v| v as f32).collect()).unwrap();
        let m = merge(&expand(&x).unwrap().sequences, h, w).unwrap();
        prop_assert_eq!(m.to_vec(), x.to_vec().iter().map(|v| 4.0 * v).collect::<Vec<_>>());
    }

    #[test]
    fn metrics_stay_in_range(bits in proptest::collection::vec(0u8..4, 64)) {
        let gt = BinaryImage::new(8, 8, bits.iter().map(|b| b & 1).collect()).unwrap();
        let pred = BinaryImage::new(8, 8, bits.iter().map(|b| b >> 1).collect()).unwrap();
        prop_assert!(psnr(&pred, &gt).unwrap() >= 0.0);
        if gt.ink_count() > 0 {
            let r = evaluate(&pred, &gt).unwrap();
            for v in [r.fmeasure, r.pseudo_fmeasure, r.precision, r.recall, r.pseudo_recall] {
                prop_assert!((0.0..=100.0).contains(&v));
            }
            prop_assert_eq!(r.tp + r.fp + r.fn_ + r.tn, 64);
        }
    }

    #[test]
    fn blur_kernels_sum_to_one(sigma in 0.3f64..6.0, half in 1usize..15) {
        let k = gaussian_kernel(sigma, 2 * half + 1).unwrap();
        let s: f64 = k.weights().iter().map(|&v| v as f64).sum();
        prop_assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn schedule_bands_chain(sigma0 in 0.1f64..3.0, n in 1usize..8) {
        let pairs = sigma_schedule(sigma0, n).unwrap();
        for i in 1..pairs.len() {
            prop_assert_eq!(pairs[i - 1].1, pairs[i].0);
        }
        prop_assert!(pairs.iter().all(|&(a, b)| b > a));
    }

    #[test]
    fn split_partitions_the_index(years in proptest::collection::vec(2009u32..2014, 1..30), pick in any::<prop::sample::Index>()) {
        let text: String = years
            .iter()
            .enumerate()
            .map(|(i, y)| format!("{y}\td/{i}.png\tg/{i}.png\n"))
            .collect();
        let idx = DatasetIndex::parse(&text, Path::new("/x")).unwrap();
        let held = pick.get(&years).to_string();
        let (tr, te) = leave_one_out_split(&idx, &held).unwrap();
        prop_assert!(te.records.iter().all(|r| r.year == held));
        prop_assert!(tr.records.iter().all(|r| r.year != held));
        prop_assert_eq!(tr.len() + te.len(), idx.len());
    }
}

#[test]
fn worked_patch_counts() {
    assert_eq!(PatchGrid::new(256, 256, 128, 64).unwrap().len(), 9);
    assert_eq!(axis_origins(200, 128, 64), vec![0, 64, 72]);
    assert_eq!(PatchGrid::new(200, 200, 128, 64).unwrap().len(), 9);
    assert_eq!(PatchGrid::new(128, 128, 128, 64).unwrap().len(), 1);
}

#[test]
fn bank_weights_are_linear() {
    let x = Tensor::new(&[1, 2, 12, 12], (0..288).map(|v| ((v * 37) % 11) as f32).collect()).unwrap();
    let a = DoGBank::with_weights(0.8, vec![0.3, -1.2, 0.5]).unwrap();
    let b = DoGBank::with_weights(0.8, vec![0.6, -2.4, 1.0]).unwrap();
    let (ya, yb) = (a.apply(&x).unwrap().to_vec(), b.apply(&x).unwrap().to_vec());
    for (p, q) in ya.iter().zip(&yb) {
        assert!((2.0 * p - q).abs() < 1e-5);
    }
}

fn tiny_corpus() -> Vec<Pair> {
    let cfg = SynthConfig { width: 64, height: 64, ..SynthConfig::default() };
    (0..2)
        .map(|i| {
            let (image, gt) = synthetic_pair(i, &cfg).unwrap();
            Pair { id: format!("p{i}"), image, gt }
        })
        .collect()
}

fn tiny_run(seed: u64, steps: usize) -> Vec<u8> {
    let model_cfg = ModelConfig::desk(vec![8, 16], vec![1, 1], SkipMode::DoGResidual);
    let cfg = TrainConfig {
        steps,
        batch_size: 2,
        seed,
        patch_size: 32,
        stride: 32,
        augment: AugmentConfig::default(),
        val_every: 0,
        ..TrainConfig::default()
    };
    let out = train(&model_cfg, &cfg, &tiny_corpus(), |_| {}).unwrap();
    Checkpoint::from_model(&out.model, seed, steps as u64, Some(&out.optimizer))
        .to_bytes()
        .unwrap()
}

#[test]
fn training_is_reproducible() {
    let a = tiny_run(5, 3);
    assert_eq!(a, tiny_run(5, 3));
    assert_ne!(a, tiny_run(6, 3));
}

#[test]
fn checkpoint_round_trip_is_byte_exact() {
    let bytes = tiny_run(1, 2);
    let ck = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(ck.to_bytes().unwrap(), bytes);
    let model = ck.to_model().unwrap();
    let again = Checkpoint::from_model(&model, ck.seed, ck.step, ck.to_optimizer(&model).unwrap().as_ref());
    assert_eq!(again.to_bytes().unwrap(), bytes);
    let fresh = Model::new(model.config.clone(), 1).unwrap();
    assert_ne!(Checkpoint::from_model(&fresh, 1, 2, None).to_bytes().unwrap(), bytes);
}
