//! Parameter containers and initialisers shared by the network layers.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::tensor::Tensor;

/// Anything that owns learnable leaves. Names are dotted paths and must be
/// unique within a model.
pub trait Module {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>);

    fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.collect_params("", &mut out);
        out
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Normal samples with `std`, redrawn outside ±2σ.
pub fn trunc_normal<R: Rng>(rng: &mut R, shape: &[usize], std: f32) -> Result<Tensor> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let z: f32 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break z * std;
            }
        })
        .collect();
    Tensor::param(shape, data)
}

/// He-normal initialisation for layers followed by SiLU/ReLU.
pub fn he_normal<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Result<Tensor> {
    trunc_normal(rng, shape, (2.0 / fan_in as f32).sqrt())
}

pub fn constant(shape: &[usize], value: f32) -> Result<Tensor> {
    Tensor::param(shape, vec![value; shape.iter().product()])
}

/// Dense layer over the last dimension of `[N×in]` rows.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn trunc_normal<R: Rng>(rng: &mut R, d_in: usize, d_out: usize, bias: bool) -> Result<Self> {
        Ok(Linear {
            weight: trunc_normal(rng, &[d_in, d_out], 0.02)?,
            bias: if bias { Some(constant(&[d_out], 0.0)?) } else { None },
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.linear(&self.weight, self.bias.as_ref())
    }
}

impl Module for Linear {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        if let Some(b) = &self.bias {
            out.push((join(prefix, "bias"), b.clone()));
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn he<R: Rng>(
        rng: &mut R,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        Ok(Conv2d {
            weight: he_normal(rng, &[c_out, c_in, kernel, kernel], c_in * kernel * kernel)?,
            bias: constant(&[c_out], 0.0)?,
            stride,
            padding,
        })
    }

    pub fn trunc_normal<R: Rng>(
        rng: &mut R,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        Ok(Conv2d {
            weight: trunc_normal(rng, &[c_out, c_in, kernel, kernel], 0.02)?,
            bias: constant(&[c_out], 0.0)?,
            stride,
            padding,
        })
    }

    /// Uniform in `±1/√fan_in`, zero bias.
    pub fn fan_in_uniform<R: Rng>(
        rng: &mut R,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let bound = 1.0 / ((c_in * kernel * kernel) as f32).sqrt();
        let n = c_out * c_in * kernel * kernel;
        Ok(Conv2d {
            weight: Tensor::param(
                &[c_out, c_in, kernel, kernel],
                (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
            )?,
            bias: constant(&[c_out], 0.0)?,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.conv2d(&self.weight, Some(&self.bias), self.stride, self.padding)
    }
}

impl Module for Conv2d {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
    pub eps: f32,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gain: constant(&[dim], 1.0)?,
            bias: constant(&[dim], 0.0)?,
            eps: 1e-5,
        })
    }

    /// Normalises `[..., D]` rows.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(&self.gain, &self.bias, self.eps)
    }

    /// Normalises the channel axis of a `[B×C×H×W]` map.
    pub fn forward_channels(&self, x: &Tensor) -> Result<Tensor> {
        let shape = x.shape().to_vec();
        let tokens = to_tokens(x)?;
        from_tokens(&self.forward(&tokens)?, &shape)
    }
}

impl Module for LayerNorm {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((join(prefix, "gain"), self.gain.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }
}

/// `[B×C×H×W]` → `[(B·H·W)×C]` channels-last rows.
pub fn to_tokens(x: &Tensor) -> Result<Tensor> {
    let s = x.shape().to_vec();
    x.permute(&[0, 2, 3, 1])?.reshape(&[s[0] * s[2] * s[3], s[1]])
}

/// Inverse of [`to_tokens`] for a target NCHW `shape`.
pub fn from_tokens(tokens: &Tensor, shape: &[usize]) -> Result<Tensor> {
    tokens
        .reshape(&[shape[0], shape[2], shape[3], shape[1]])?
        .permute(&[0, 3, 1, 2])
}
