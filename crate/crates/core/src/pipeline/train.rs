//! Deterministic patch-based training.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{jitter_origin, AugmentConfig, Transform};
use super::dataset::Pair;
use super::image::RgbImage;
use super::patches::{crop, PatchGrid, DEFAULT_STRIDE, PATCH_SIZE};
use crate::error::{Error, Result};
use crate::evalkit::Confusion;
use crate::model::{default_scale_weights, loss, Model, ModelConfig};
use crate::tensor::{no_grad, Adam, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
    pub patch_size: usize,
    pub stride: usize,
    pub augment: AugmentConfig,
    /// Share of patches held out for validation. With `0`, validation runs
    /// on a fixed subset of the training patches instead.
    pub val_fraction: f32,
    /// Validate every this many steps (and after the last step); `0` only at the end.
    pub val_every: usize,
    pub max_val_patches: usize,
    /// Per-head loss weights, finest first; empty selects the halving default.
    pub scale_weights: Vec<f32>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 300,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            patch_size: PATCH_SIZE,
            stride: DEFAULT_STRIDE,
            augment: AugmentConfig::default(),
            val_fraction: 0.1,
            val_every: 50,
            max_val_patches: 32,
            scale_weights: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be finite and ≥ 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val fraction must be in [0, 1), got {}", self.val_fraction)));
        }
        if !self.patch_size.is_multiple_of(model.downsample_factor()) {
            return Err(Error::Config(format!(
                "patch size {} is not a multiple of the model's downsample factor {}",
                self.patch_size,
                model.downsample_factor()
            )));
        }
        if self.stride == 0 || self.stride > self.patch_size {
            return Err(Error::Config(format!("stride must be in 1..={}", self.patch_size)));
        }
        if !self.scale_weights.is_empty() && self.scale_weights.len() != model.num_scales() {
            return Err(Error::Config(format!(
                "{} scale weights for {} decoder heads",
                self.scale_weights.len(),
                model.num_scales()
            )));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRow {
    pub step: usize,
    pub loss: f32,
    pub val_loss: Option<f32>,
    /// Pixel F-measure (percent) over all validation patches.
    pub val_fm: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub optimizer: Adam,
    pub log: Vec<LogRow>,
}

/// A training source padded up to the patch size.
struct Source {
    id: String,
    image: RgbImage,
    gt: Vec<f32>,
}

#[derive(Debug, Clone, Copy)]
struct PatchRef {
    source: usize,
    row: usize,
    col: usize,
}

fn prepare(pairs: &[Pair], size: usize) -> Vec<Source> {
    pairs
        .iter()
        .map(|p| {
            let image = p.image.pad_reflect(size, size);
            let gt_rgb = RgbImage::from_gray(&super::image::GrayImage {
                width: p.gt.width,
                height: p.gt.height,
                data: p.gt.to_f32(),
            })
            .pad_reflect(size, size);
            Source {
                id: p.id.clone(),
                gt: gt_rgb.plane(0).to_vec(),
                image,
            }
        })
        .collect()
}

struct Batch {
    x: Tensor,
    t: Tensor,
    ids: Vec<String>,
}

fn assemble(
    sources: &[Source],
    refs: &[PatchRef],
    size: usize,
    aug: Option<(&AugmentConfig, &mut ChaCha8Rng)>,
) -> Result<Batch> {
    let mut xs = Vec::with_capacity(refs.len() * 3 * size * size);
    let mut ts = Vec::with_capacity(refs.len() * size * size);
    let mut ids = Vec::with_capacity(refs.len());
    let mut aug = aug;
    for r in refs {
        let src = &sources[r.source];
        let (h, w) = (src.image.height, src.image.width);
        let (mut row, mut col, mut tf) = (r.row, r.col, Transform::default());
        if let Some((cfg, rng)) = aug.as_mut() {
            row = jitter_origin(row, h - size, cfg.crop_jitter, rng);
            col = jitter_origin(col, w - size, cfg.crop_jitter, rng);
            tf = Transform::sample(cfg, rng);
        }
        xs.extend(tf.apply(&crop(&src.image.data, 3, h, w, row, col, size), 3, size));
        ts.extend(tf.apply(&crop(&src.gt, 1, h, w, row, col, size), 1, size));
        ids.push(format!("{}@{row},{col}", src.id));
    }
    let n = refs.len();
    Ok(Batch {
        x: Tensor::new(&[n, 3, size, size], xs)?,
        t: Tensor::new(&[n, 1, size, size], ts)?,
        ids,
    })
}

fn validate(model: &Model, sources: &[Source], refs: &[PatchRef], cfg: &TrainConfig, weights: &[f32]) -> Result<(f32, Option<f64>)> {
    let mut total = 0.0f64;
    let mut conf = Confusion::default();
    for chunk in refs.chunks(cfg.batch_size) {
        let b = assemble(sources, chunk, cfg.patch_size, None)?;
        let out = no_grad(|| model.forward(&b.x))?;
        total += loss(&out, &b.t, weights)?.item() as f64 * chunk.len() as f64;
        let p = out.probabilities();
        let (pd, td) = (p.data(), b.t.data());
        for (&pv, &tv) in pd.iter().zip(td.iter()) {
            conf.add(pv >= 0.5, tv >= 0.5);
        }
    }
    Ok(((total / refs.len() as f64) as f32, conf.f_measure().ok()))
}

/// Trains a freshly initialised model. `observe` sees each log row as it
/// is produced.
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    pairs: &[Pair],
    observe: impl FnMut(&LogRow),
) -> Result<TrainOutcome> {
    let model = Model::new(model_cfg.clone(), cfg.seed)?;
    train_model(model, Adam::new(cfg.lr), cfg, pairs, observe)
}

/// Continues training `model` with `optimizer`.
pub fn train_model(
    model: Model,
    mut optimizer: Adam,
    cfg: &TrainConfig,
    pairs: &[Pair],
    mut observe: impl FnMut(&LogRow),
) -> Result<TrainOutcome> {
    cfg.validate(&model.config)?;
    if pairs.is_empty() {
        return Err(Error::Data("training index is empty".into()));
    }
    let size = cfg.patch_size;
    let sources = prepare(pairs, size);
    let mut all = Vec::new();
    for (i, s) in sources.iter().enumerate() {
        let grid = PatchGrid::new(s.image.height, s.image.width, size, cfg.stride)?;
        all.extend(grid.origins().map(|(row, col)| PatchRef { source: i, row, col }));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_da7a);
    all.shuffle(&mut rng);
    let n_val = ((all.len() as f32 * cfg.val_fraction).round() as usize).min(all.len() - 1);
    let (val_refs, train_refs): (Vec<PatchRef>, Vec<PatchRef>) = if n_val == 0 {
        let fixed = all[..all.len().min(cfg.max_val_patches)].to_vec();
        (fixed, all)
    } else {
        let v = all[..n_val.min(cfg.max_val_patches)].to_vec();
        (v, all[n_val..].to_vec())
    };

    let weights = if cfg.scale_weights.is_empty() {
        default_scale_weights(model.config.num_scales())
    } else {
        cfg.scale_weights.clone()
    };
    optimizer.lr = cfg.lr;
    let params = model.params();
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut log = Vec::with_capacity(cfg.steps);

    for step in 1..=cfg.steps {
        let mut picked = Vec::with_capacity(cfg.batch_size);
        while picked.len() < cfg.batch_size {
            if cursor == order.len() {
                order = (0..train_refs.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            picked.push(train_refs[order[cursor]]);
            cursor += 1;
        }
        let batch = assemble(&sources, &picked, size, Some((&cfg.augment, &mut rng)))?;
        for p in &params {
            p.zero_grad();
        }
        let out = model.forward(&batch.x)?;
        let l = loss(&out, &batch.t, &weights)?;
        let value = l.item();
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "loss became {value} at step {step}; batch: {}",
                batch.ids.join(", ")
            )));
        }
        l.backward()?;
        drop(out);
        optimizer.step(&params)?;

        let mut row = LogRow {
            step,
            loss: value,
            val_loss: None,
            val_fm: None,
        };
        if step == cfg.steps || (cfg.val_every > 0 && step % cfg.val_every == 0) {
            let (vl, fm) = validate(&model, &sources, &val_refs, cfg, &weights)?;
            row.val_loss = Some(vl);
            row.val_fm = fm;
        }
        observe(&row);
        log.push(row);
    }
    Ok(TrainOutcome {
        model,
        optimizer,
        log,
    })
}
