//! Document image binarisation with a selective-scan U-Net.
//!
//! The encoder runs four-direction selective scans over patch tokens, the
//! skip connections pass through learnable difference-of-Gaussians banks,
//! and the decoder emits a logit map at every scale. Around the model sit a
//! small autograd engine ([`tensor`]), patch tiling, training and inference
//! ([`pipeline`]), classical thresholding baselines and DIBCO-style metrics
//! ([`evalkit`]), and the `amsdb` command line ([`cli`]).
//!
//! ```no_run
//! use amsdb::model::{Model, ModelConfig, SkipMode};
//! use amsdb::Tensor;
//!
//! let cfg = ModelConfig::desk(vec![16, 32], vec![1, 1], SkipMode::DoGResidual);
//! let model = Model::new(cfg, 0)?;
//! let page = Tensor::full(&[1, 3, 128, 128], 0.8);
//! let logits = &model.forward(&page)?.logits[0];
//! assert_eq!(logits.shape(), &[1, 1, 128, 128]);
//! # Ok::<(), amsdb::Error>(())
//! ```

pub mod cli;
pub mod dog;
pub mod error;
pub mod evalkit;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod ssm;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
