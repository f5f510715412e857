//! Data handling around the network: image I/O, patching, augmentation,
//! manifests, training, inference and checkpoints.

pub mod augment;
pub mod checkpoint;
pub mod dataset;
pub mod image;
pub mod infer;
pub mod patches;
pub mod synth;
pub mod train;

pub use augment::{AugmentConfig, Transform};
pub use checkpoint::Checkpoint;
pub use dataset::{leave_one_out_split, load_pairs, DatasetIndex, Pair, Record};
pub use image::{BinaryImage, GrayImage, RgbImage};
pub use infer::{infer, InferConfig, Prediction};
pub use patches::{extract_patches, stitch, PatchGrid, DEFAULT_STRIDE, PATCH_SIZE};
pub use synth::{synthetic_pair, write_corpus, SynthConfig};
pub use train::{train, train_model, LogRow, TrainConfig, TrainOutcome};
