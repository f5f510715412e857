//! The binarisation network: a staged selective-scan encoder, a U-shaped
//! decoder with a segmentation head per scale, and configurable skip
//! connections (plain, band-pass, band-pass residual).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dog::DoGBank;
use crate::error::{Error, Result};
use crate::nn::{join, Conv2d, LayerNorm, Module};
use crate::ssm::{VssBlock, VssConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SkipMode {
    Plain,
    DoG,
    DoGResidual,
}

impl std::str::FromStr for SkipMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "plain" => Ok(SkipMode::Plain),
            "dog" => Ok(SkipMode::DoG),
            "dogresidual" => Ok(SkipMode::DoGResidual),
            _ => Err(Error::Config(format!(
                "unknown skip mode {s:?} (expected plain, dog or dog-residual)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoGSettings {
    pub scales: usize,
    pub sigma0: f64,
}

impl Default for DoGSettings {
    fn default() -> Self {
        DoGSettings {
            scales: 3,
            sigma0: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub in_channels: usize,
    /// Channel width of each encoder stage.
    pub dims: Vec<usize>,
    /// Selective-scan blocks per stage.
    pub depths: Vec<usize>,
    /// Stride of the patch embedding; a power of two.
    pub patch_size: usize,
    pub state_dim: usize,
    pub expand: usize,
    /// `0` picks `ceil(dim / 16)` per stage.
    pub dt_rank: usize,
    pub skip_mode: SkipMode,
    /// One bank per encoder stage.
    pub dog: Vec<DoGSettings>,
    /// Feed the (pooled) input image into the decoder blocks above the
    /// first encoder stage. Without it those blocks see no skip at all.
    pub image_guidance: bool,
    /// Width of the decoder blocks above the first encoder stage.
    pub guide_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::desk([16, 32].to_vec(), [1, 1].to_vec(), SkipMode::DoGResidual)
    }
}

impl ModelConfig {
    pub fn desk(dims: Vec<usize>, depths: Vec<usize>, skip_mode: SkipMode) -> Self {
        let dog = vec![DoGSettings::default(); dims.len()];
        ModelConfig {
            in_channels: 3,
            dims,
            depths,
            patch_size: 4,
            state_dim: 8,
            expand: 2,
            dt_rank: 0,
            skip_mode,
            dog,
            image_guidance: true,
            guide_channels: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.dims.is_empty() || self.dims.contains(&0) {
            return fail(format!("stage dims must be non-empty and positive, got {:?}", self.dims));
        }
        if self.depths.len() != self.dims.len() {
            return fail(format!(
                "{} stage dims but {} depths",
                self.dims.len(),
                self.depths.len()
            ));
        }
        if self.skip_mode != SkipMode::Plain && self.dog.len() != self.dims.len() {
            return fail(format!(
                "{} stages but {} DoG banks",
                self.dims.len(),
                self.dog.len()
            ));
        }
        if let Some(d) = self.dog.iter().find(|d| d.scales == 0 || !(d.sigma0 > 0.0)) {
            return fail(format!("invalid DoG settings {d:?}"));
        }
        if self.patch_size < 2 || !self.patch_size.is_power_of_two() {
            return fail(format!("patch size must be a power of two ≥ 2, got {}", self.patch_size));
        }
        if self.in_channels == 0 || self.state_dim == 0 || self.expand == 0 || self.guide_channels == 0 {
            return fail("channel, state and expansion sizes must be positive".into());
        }
        Ok(())
    }

    /// Input sides must be multiples of this.
    pub fn downsample_factor(&self) -> usize {
        self.patch_size << (self.dims.len() - 1)
    }

    /// Decoder heads, finest first.
    pub fn num_scales(&self) -> usize {
        self.dims.len() + self.patch_size.trailing_zeros() as usize
    }

    /// Spatial reduction of head `s` relative to the input.
    pub fn scale_factor(&self, s: usize) -> usize {
        let extra = self.patch_size.trailing_zeros() as usize;
        if s <= extra {
            1 << s
        } else {
            self.patch_size << (s - extra)
        }
    }
}

/// `λ_s`: 1 at the finest head, halving per coarser head.
pub fn default_scale_weights(n: usize) -> Vec<f32> {
    (0..n).map(|s| 0.5f32.powi(s as i32)).collect()
}

#[derive(Debug, Clone)]
pub struct ModelOutput {
    /// `[B×1×h_s×w_s]` logits, finest (input resolution) first.
    pub logits: Vec<Tensor>,
}

impl ModelOutput {
    pub fn finest(&self) -> &Tensor {
        &self.logits[0]
    }

    pub fn probabilities(&self) -> Tensor {
        self.logits[0].sigmoid()
    }
}

#[derive(Debug, Clone)]
pub struct Stage {
    /// Patch embedding for the first stage, 2× downsampling afterwards.
    pub entry: Conv2d,
    pub entry_norm: LayerNorm,
    pub blocks: Vec<VssBlock>,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub stages: Vec<Stage>,
    factor: usize,
}

impl Encoder {
    fn init(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Result<Self> {
        let mut stages = Vec::with_capacity(cfg.dims.len());
        let mut c_in = cfg.in_channels;
        for (i, (&dim, &depth)) in cfg.dims.iter().zip(&cfg.depths).enumerate() {
            let k = if i == 0 { cfg.patch_size } else { 2 };
            let entry = Conv2d::trunc_normal(rng, c_in, dim, k, k, 0)?;
            let vss = VssConfig {
                dim,
                expand: cfg.expand,
                state: cfg.state_dim,
                dt_rank: cfg.dt_rank,
            };
            let blocks = (0..depth)
                .map(|_| VssBlock::init(rng, vss))
                .collect::<Result<Vec<_>>>()?;
            stages.push(Stage {
                entry,
                entry_norm: LayerNorm::new(dim)?,
                blocks,
            });
            c_in = dim;
        }
        Ok(Encoder {
            stages,
            factor: cfg.downsample_factor(),
        })
    }

    /// Feature map after every stage, shallowest first.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let (h, w) = (x.shape()[2], x.shape()[3]);
        if h % self.factor != 0 || w % self.factor != 0 {
            return Err(Error::Contract(format!(
                "input {h}x{w} is not a multiple of the downsample factor {}; pad first",
                self.factor
            )));
        }
        let mut feats = Vec::with_capacity(self.stages.len());
        let mut z = x.clone();
        for stage in &self.stages {
            z = stage.entry_norm.forward_channels(&stage.entry.forward(&z)?)?;
            for block in &stage.blocks {
                z = block.forward(&z)?;
            }
            feats.push(z.clone());
        }
        Ok(feats)
    }
}

impl Module for Encoder {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (i, st) in self.stages.iter().enumerate() {
            let p = join(prefix, &format!("stage{i}"));
            st.entry.collect_params(&join(&p, "entry"), out);
            st.entry_norm.collect_params(&join(&p, "entry_norm"), out);
            for (j, b) in st.blocks.iter().enumerate() {
                b.collect_params(&join(&p, &format!("block{j}")), out);
            }
        }
    }
}

/// Applies the configured skip connection to one encoder feature map.
pub fn skip_transform(feature: &Tensor, mode: SkipMode, bank: Option<&DoGBank>) -> Result<Tensor> {
    let need = || {
        bank.ok_or_else(|| Error::Config(format!("skip mode {mode:?} needs a DoG bank")))
    };
    match mode {
        SkipMode::Plain => Ok(feature.clone()),
        SkipMode::DoG => need()?.apply(feature),
        SkipMode::DoGResidual => feature.add(&need()?.apply(feature)?),
    }
}

/// Upsample, fuse with a skip, residual double conv, plus a logit head.
#[derive(Debug, Clone)]
pub struct UpBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub residual: Conv2d,
    pub head: Conv2d,
}

impl UpBlock {
    pub fn init(rng: &mut ChaCha8Rng, c_in: usize, c_skip: usize, c_out: usize) -> Result<Self> {
        let c = c_in + c_skip;
        Ok(UpBlock {
            conv1: Conv2d::he(rng, c, c_out, 3, 1, 1)?,
            conv2: Conv2d::he(rng, c_out, c_out, 3, 1, 1)?,
            residual: Conv2d::fan_in_uniform(rng, c, c_out, 1, 1, 0)?,
            head: Conv2d::fan_in_uniform(rng, c_out, 1, 1, 1, 0)?,
        })
    }

    /// Returns the block output and its logit map. `x` is upsampled 2× when
    /// the skip is twice its size; equal sizes are fused directly. Without a
    /// skip the output is 2× the input.
    pub fn forward(&self, x: &Tensor, skip: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let (h, w) = (x.shape()[2], x.shape()[3]);
        let fused = match skip {
            None => x.upsample_nearest(2)?,
            Some(s) => {
                let (sh, sw) = (s.shape()[2], s.shape()[3]);
                let up = if (sh, sw) == (h, w) {
                    x.clone()
                } else if (sh, sw) == (2 * h, 2 * w) {
                    x.upsample_nearest(2)?
                } else {
                    return Err(Error::shape(
                        "upsample_block",
                        format!("decoder input {h}x{w} with skip {sh}x{sw}"),
                    ));
                };
                Tensor::concat(&[up, s.clone()], 1)?
            }
        };
        let y = self.conv2.forward(&self.conv1.forward(&fused)?.silu())?.silu();
        let out = y.add(&self.residual.forward(&fused)?)?;
        let logits = self.head.forward(&out)?;
        Ok((out, logits))
    }
}

impl Module for UpBlock {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.conv1.collect_params(&join(prefix, "conv1"), out);
        self.conv2.collect_params(&join(prefix, "conv2"), out);
        self.residual.collect_params(&join(prefix, "residual"), out);
        self.head.collect_params(&join(prefix, "head"), out);
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: Encoder,
    /// One bank per stage unless the skip mode is plain.
    pub banks: Vec<DoGBank>,
    /// Deepest first; the last `log2(patch_size)` blocks work above stage 1.
    pub decoder: Vec<UpBlock>,
}

impl Model {
    /// Deterministic initialisation from `seed`. Bank weights start at `1/N`
    /// without consuming randomness, so every skip mode draws the same
    /// encoder and decoder weights for the same seed.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::init(&mut rng, &config)?;
        let banks = match config.skip_mode {
            SkipMode::Plain => Vec::new(),
            _ => config
                .dog
                .iter()
                .map(|d| DoGBank::new(d.scales, d.sigma0))
                .collect::<Result<_>>()?,
        };
        let dims = &config.dims;
        let n = dims.len();
        let mut decoder = Vec::new();
        decoder.push(UpBlock::init(&mut rng, dims[n - 1], dims[n - 1], dims[n - 1])?);
        for i in (0..n - 1).rev() {
            decoder.push(UpBlock::init(&mut rng, dims[i + 1], dims[i], dims[i])?);
        }
        let mut c_in = dims[0];
        let guide = if config.image_guidance { config.in_channels } else { 0 };
        for _ in 0..config.patch_size.trailing_zeros() {
            decoder.push(UpBlock::init(&mut rng, c_in, guide, config.guide_channels)?);
            c_in = config.guide_channels;
        }
        Ok(Model {
            config,
            encoder,
            banks,
            decoder,
        })
    }

    pub fn skip(&self, depth: usize, feature: &Tensor) -> Result<Tensor> {
        skip_transform(feature, self.config.skip_mode, self.banks.get(depth))
    }

    /// `x: [B×C×H×W]` with `H`, `W` multiples of the downsample factor.
    pub fn forward(&self, x: &Tensor) -> Result<ModelOutput> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.config.in_channels {
            return Err(Error::shape(
                "model",
                format!("expected [B, {}, H, W], got {shape:?}", self.config.in_channels),
            ));
        }
        let feats = self.encoder.forward(x)?;
        let n = feats.len();
        let mut logits = Vec::with_capacity(self.decoder.len());

        let (mut z, l) = self.decoder[0].forward(&feats[n - 1], Some(&self.skip(n - 1, &feats[n - 1])?))?;
        logits.push(l);
        for (k, depth) in (0..n - 1).rev().enumerate() {
            let (nz, l) = self.decoder[k + 1].forward(&z, Some(&self.skip(depth, &feats[depth])?))?;
            z = nz;
            logits.push(l);
        }
        let extra = self.config.patch_size.trailing_zeros() as usize;
        for j in 0..extra {
            let factor = 1usize << (extra - 1 - j);
            let guide = match (self.config.image_guidance, factor) {
                (false, _) => None,
                (true, 1) => Some(x.clone()),
                (true, f) => Some(x.avg_pool(f)?),
            };
            let (nz, l) = self.decoder[n + j].forward(&z, guide.as_ref())?;
            z = nz;
            logits.push(l);
        }
        logits.reverse();
        Ok(ModelOutput { logits })
    }

    pub fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }
}

impl Module for Model {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.encoder.collect_params(&join(prefix, "encoder"), out);
        for (i, bank) in self.banks.iter().enumerate() {
            out.push((join(prefix, &format!("skip.depth{i}.dog.weights")), bank.weights().clone()));
        }
        for (i, b) in self.decoder.iter().enumerate() {
            b.collect_params(&join(prefix, &format!("decoder.block{i}")), out);
        }
    }
}

/// Majority vote over `factor×factor` cells of a `{0,1}` map; a tie counts
/// as ink.
pub fn downsample_majority(target: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 1 {
        return Ok(target.detach());
    }
    let (b, c, h, w) = match target.shape() {
        &[b, c, h, w] if h % factor == 0 && w % factor == 0 => (b, c, h, w),
        s => {
            return Err(Error::shape(
                "downsample_majority",
                format!("{s:?} is not divisible into {factor}x{factor} cells"),
            ))
        }
    };
    let (oh, ow) = (h / factor, w / factor);
    let src = target.data();
    let mut out = vec![0.0f32; b * c * oh * ow];
    for plane in 0..b * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut ink = 0;
                for di in 0..factor {
                    let row = base + (i * factor + di) * w + j * factor;
                    ink += src[row..row + factor].iter().filter(|&&v| v >= 0.5).count();
                }
                out[(plane * oh + i) * ow + j] = if 2 * ink >= factor * factor { 1.0 } else { 0.0 };
            }
        }
    }
    Tensor::new(&[b, c, oh, ow], out)
}

/// `Σ_s λ_s·(BCE + Dice)` against `target: [B×1×H×W]` in `{0,1}`.
pub fn loss(output: &ModelOutput, target: &Tensor, weights: &[f32]) -> Result<Tensor> {
    let finest = output.finest().shape();
    if target.shape() != finest {
        return Err(Error::shape(
            "loss",
            format!("target {:?} vs prediction {finest:?}", target.shape()),
        ));
    }
    if weights.len() != output.logits.len() {
        return Err(Error::Config(format!(
            "{} scale weights for {} heads",
            weights.len(),
            output.logits.len()
        )));
    }
    let mut total: Option<Tensor> = None;
    for (logits, &lambda) in output.logits.iter().zip(weights) {
        if lambda == 0.0 {
            continue;
        }
        let factor = finest[2] / logits.shape()[2];
        let t = downsample_majority(target, factor)?;
        let term = logits.bce_with_logits(&t)?.add(&logits.dice_loss(&t)?)?.mul_scalar(lambda);
        total = Some(match total {
            None => term,
            Some(acc) => acc.add(&term)?,
        });
    }
    total.ok_or_else(|| Error::Config("all scale weights are zero".into()))
}
