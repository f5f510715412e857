//! Binarisation quality metrics and classical thresholding baselines.

pub mod metrics;
pub mod skeleton;
pub mod threshold;

pub use metrics::{evaluate, f_measure, psnr, pseudo_f_measure, Confusion, MetricsReport, PSNR_CAP};
pub use skeleton::skeletonize;
pub use threshold::{bradley, local_stats, otsu, sauvola};
