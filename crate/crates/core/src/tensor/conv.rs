//! Spatial operations on `[B×C×H×W]` tensors.

use std::rc::Rc;

use super::ops::{dims4, gemm};
use super::Tensor;
use crate::error::{Error, Result};

/// Mirror index into `0..n` without repeating the edge sample
/// (`-1 → 1`, `n → n-2`), folding as often as needed.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

struct ConvGeom {
    ci: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    /// Output columns `ox` whose input column `ox·stride + kx − pad` lies
    /// inside the image.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx).div_ceil(self.stride).min(self.wo);
        let hi = if self.w + self.pad > kx {
            ((self.w + self.pad - kx - 1) / self.stride + 1).min(self.wo)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    fn im2col(&self, x: &[f32], cols: &mut [f32]) {
        let p = self.ho * self.wo;
        for c in 0..self.ci {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    let (lo, hi) = self.valid_cols(kx);
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let line = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &x[(c * self.h + iy as usize) * self.w..][..self.w];
                        line[..lo].fill(0.0);
                        line[hi..].fill(0.0);
                        if lo == hi {
                            continue;
                        }
                        let first = lo * self.stride + kx - self.pad;
                        if self.stride == 1 {
                            line[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                        } else {
                            for (j, v) in line[lo..hi].iter_mut().enumerate() {
                                *v = src[first + j * self.stride];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f32], x: &mut [f32]) {
        let p = self.ho * self.wo;
        for c in 0..self.ci {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    let (lo, hi) = self.valid_cols(kx);
                    if lo == hi {
                        continue;
                    }
                    let first = lo * self.stride + kx - self.pad;
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut x[(c * self.h + iy as usize) * self.w..][..self.w];
                        let line = &src[oy * self.wo + lo..oy * self.wo + hi];
                        if self.stride == 1 {
                            for (d, &v) in dst[first..first + hi - lo].iter_mut().zip(line) {
                                *d += v;
                            }
                        } else {
                            for (j, &v) in line.iter().enumerate() {
                                dst[first + j * self.stride] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Tensor {
    /// 2-D cross-correlation with zero padding.
    /// `self: [B×C_in×H×W]`, `kernel: [C_out×C_in×k×k]`, optional `bias: [C_out]`.
    pub fn conv2d(
        &self,
        kernel: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        let [b, ci, h, w] = dims4(self, "conv2d")?;
        let [co, ci2, k, k2] = dims4(kernel, "conv2d")?;
        if ci != ci2 || k != k2 || k == 0 {
            return Err(Error::shape(
                "conv2d",
                format!("input {:?} with kernel {:?}", self.shape(), kernel.shape()),
            ));
        }
        if stride == 0 {
            return Err(Error::Param("conv2d stride must be positive".into()));
        }
        if h + 2 * padding < k || w + 2 * padding < k {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "kernel {k}x{k} larger than padded input {}x{}",
                    h + 2 * padding,
                    w + 2 * padding
                ),
            ));
        }
        if let Some(bs) = bias {
            if bs.numel() != co {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias {:?} for {co} output channels", bs.shape()),
                ));
            }
        }
        let geom = Rc::new(ConvGeom {
            ci,
            h,
            w,
            k,
            stride,
            pad: padding,
            ho: (h + 2 * padding - k) / stride + 1,
            wo: (w + 2 * padding - k) / stride + 1,
        });
        let (ho, wo) = (geom.ho, geom.wo);
        let p = ho * wo;
        let kk = ci * k * k;
        let mut out = vec![0.0f32; b * co * p];
        {
            let x = self.data();
            let wt = kernel.data();
            let mut cols = vec![0.0f32; kk * p];
            for bi in 0..b {
                geom.im2col(&x[bi * ci * h * w..(bi + 1) * ci * h * w], &mut cols);
                gemm(
                    co,
                    kk,
                    p,
                    &wt,
                    (kk as isize, 1),
                    &cols,
                    (p as isize, 1),
                    &mut out[bi * co * p..(bi + 1) * co * p],
                    false,
                );
            }
            if let Some(bs) = bias {
                let bs = bs.data();
                for bi in 0..b {
                    for c in 0..co {
                        out[(bi * co + c) * p..][..p].iter_mut().for_each(|v| *v += bs[c]);
                    }
                }
            }
        }
        let mut inputs = vec![self.clone(), kernel.clone()];
        if let Some(bs) = bias {
            inputs.push(bs.clone());
        }
        let has_bias = bias.is_some();
        let (x_t, k_t) = (self.clone(), kernel.clone());
        Ok(Tensor::from_op(
            vec![b, co, ho, wo],
            out,
            "conv2d",
            inputs,
            Box::new(move |g| {
                let x = x_t.data();
                let wt = k_t.data();
                let need_x = x_t.requires_grad();
                let need_k = k_t.requires_grad();
                let mut gx = need_x.then(|| vec![0.0f32; x.len()]);
                let mut gk = need_k.then(|| vec![0.0f32; wt.len()]);
                let mut cols = vec![0.0f32; kk * p];
                for bi in 0..b {
                    let gy = &g[bi * co * p..(bi + 1) * co * p];
                    if let Some(gk) = gk.as_mut() {
                        geom.im2col(&x[bi * ci * h * w..(bi + 1) * ci * h * w], &mut cols);
                        // dW += dY · colsᵀ
                        gemm(co, p, kk, gy, (p as isize, 1), &cols, (1, p as isize), gk, true);
                    }
                    if let Some(gx) = gx.as_mut() {
                        // dcols = Wᵀ · dY
                        gemm(kk, co, p, &wt, (1, kk as isize), gy, (p as isize, 1), &mut cols, false);
                        geom.col2im(&cols, &mut gx[bi * ci * h * w..(bi + 1) * ci * h * w]);
                    }
                }
                let mut grads = vec![gx, gk];
                if has_bias {
                    let mut gb = vec![0.0f32; co];
                    for bi in 0..b {
                        for (c, gbc) in gb.iter_mut().enumerate() {
                            *gbc += g[(bi * co + c) * p..][..p].iter().sum::<f32>();
                        }
                    }
                    grads.push(Some(gb));
                }
                grads
            }),
        ))
    }

    /// Per-channel 2-D cross-correlation with zero "same" padding.
    /// `self: [B×C×H×W]`, `kernel: [C×1×k×k]` with odd `k`.
    pub fn depthwise_conv2d(&self, kernel: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let [b, c, h, w] = dims4(self, "depthwise_conv2d")?;
        let [c2, one, k, k2] = dims4(kernel, "depthwise_conv2d")?;
        if c != c2 || one != 1 || k != k2 || k % 2 == 0 {
            return Err(Error::shape(
                "depthwise_conv2d",
                format!("input {:?} with kernel {:?}", self.shape(), kernel.shape()),
            ));
        }
        if let Some(bs) = bias {
            if bs.numel() != c {
                return Err(Error::shape(
                    "depthwise_conv2d",
                    format!("bias {:?} for {c} channels", bs.shape()),
                ));
            }
        }
        let r = (k / 2) as isize;
        let mut out = vec![0.0f32; b * c * h * w];
        {
            let x = self.data();
            let wt = kernel.data();
            for bi in 0..b {
                for ch in 0..c {
                    let plane = &x[(bi * c + ch) * h * w..][..h * w];
                    let kern = &wt[ch * k * k..][..k * k];
                    let dst = &mut out[(bi * c + ch) * h * w..][..h * w];
                    for y in 0..h as isize {
                        for xx in 0..w as isize {
                            let mut acc = 0.0f32;
                            for ky in 0..k as isize {
                                let iy = y + ky - r;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..k as isize {
                                    let ix = xx + kx - r;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    acc += kern[(ky * k as isize + kx) as usize]
                                        * plane[(iy * w as isize + ix) as usize];
                                }
                            }
                            dst[(y * w as isize + xx) as usize] = acc;
                        }
                    }
                    if let Some(bs) = bias {
                        let bv = bs.data()[ch];
                        dst.iter_mut().for_each(|v| *v += bv);
                    }
                }
            }
        }
        let mut inputs = vec![self.clone(), kernel.clone()];
        if let Some(bs) = bias {
            inputs.push(bs.clone());
        }
        let has_bias = bias.is_some();
        let (x_t, k_t) = (self.clone(), kernel.clone());
        Ok(Tensor::from_op(
            vec![b, c, h, w],
            out,
            "depthwise_conv2d",
            inputs,
            Box::new(move |g| {
                let x = x_t.data();
                let wt = k_t.data();
                let mut gx = vec![0.0f32; x.len()];
                let mut gk = vec![0.0f32; wt.len()];
                let mut gb = vec![0.0f32; c];
                for bi in 0..b {
                    for ch in 0..c {
                        let base = (bi * c + ch) * h * w;
                        let plane = &x[base..][..h * w];
                        let gy = &g[base..][..h * w];
                        let kern = &wt[ch * k * k..][..k * k];
                        gb[ch] += gy.iter().sum::<f32>();
                        for y in 0..h as isize {
                            for xx in 0..w as isize {
                                let go = gy[(y * w as isize + xx) as usize];
                                if go == 0.0 {
                                    continue;
                                }
                                for ky in 0..k as isize {
                                    let iy = y + ky - r;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..k as isize {
                                        let ix = xx + kx - r;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        let ki = (ky * k as isize + kx) as usize;
                                        let xi = (iy * w as isize + ix) as usize;
                                        gk[ch * k * k + ki] += go * plane[xi];
                                        gx[base + xi] += go * kern[ki];
                                    }
                                }
                            }
                        }
                    }
                }
                let mut grads = vec![Some(gx), Some(gk)];
                if has_bias {
                    grads.push(Some(gb));
                }
                grads
            }),
        ))
    }

    /// One separable pass of a fixed 1-D kernel along width (`vertical =
    /// false`) or height, with reflect padding. Shape is preserved.
    pub fn reflect_filter_1d(&self, taps: &[f32], vertical: bool) -> Result<Tensor> {
        let [b, c, h, w] = dims4(self, "reflect_filter_1d")?;
        if taps.len().is_multiple_of(2) {
            return Err(Error::Param(format!(
                "filter length {} must be odd",
                taps.len()
            )));
        }
        let r = taps.len() / 2;
        let len = if vertical { h } else { w };
        // source position of tap j for output i is pad_index[i + j]
        let pad_index: Rc<Vec<usize>> = Rc::new(
            (0..len + 2 * r)
                .map(|i| reflect_index(i as isize - r as isize, len))
                .collect(),
        );
        let taps: Rc<Vec<f32>> = Rc::new(taps.to_vec());
        let n = self.numel();
        let mut out = vec![0.0f32; n];
        {
            let x = self.data();
            if vertical {
                for pl in 0..b * c {
                    let src = &x[pl * h * w..][..h * w];
                    let dst = &mut out[pl * h * w..][..h * w];
                    for i in 0..h {
                        let drow = &mut dst[i * w..(i + 1) * w];
                        for (j, &t) in taps.iter().enumerate() {
                            let srow = &src[pad_index[i + j] * w..][..w];
                            for (d, &v) in drow.iter_mut().zip(srow) {
                                *d += t * v;
                            }
                        }
                    }
                }
            } else {
                let mut padded = vec![0.0f32; w + 2 * r];
                for line in 0..b * c * h {
                    let src = &x[line * w..][..w];
                    for (pv, &k) in padded.iter_mut().zip(pad_index.iter()) {
                        *pv = src[k];
                    }
                    for (i, o) in out[line * w..][..w].iter_mut().enumerate() {
                        *o = taps.iter().zip(&padded[i..]).map(|(t, v)| t * v).sum();
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            if vertical { "filter_v" } else { "filter_h" },
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = vec![0.0f32; n];
                if vertical {
                    for pl in 0..b * c {
                        let gy = &g[pl * h * w..][..h * w];
                        let dst = &mut gx[pl * h * w..][..h * w];
                        for i in 0..h {
                            let grow = &gy[i * w..(i + 1) * w];
                            for (j, &t) in taps.iter().enumerate() {
                                let drow = &mut dst[pad_index[i + j] * w..][..w];
                                for (d, &v) in drow.iter_mut().zip(grow) {
                                    *d += t * v;
                                }
                            }
                        }
                    }
                } else {
                    let mut gpad = vec![0.0f32; w + 2 * r];
                    for line in 0..b * c * h {
                        gpad.fill(0.0);
                        for (i, &go) in g[line * w..][..w].iter().enumerate() {
                            for (gp, &t) in gpad[i..].iter_mut().zip(taps.iter()) {
                                *gp += t * go;
                            }
                        }
                        let dst = &mut gx[line * w..][..w];
                        for (&gp, &k) in gpad.iter().zip(pad_index.iter()) {
                            dst[k] += gp;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Nearest-neighbour upsampling of H and W by an integer factor.
    pub fn upsample_nearest(&self, factor: usize) -> Result<Tensor> {
        let [b, c, h, w] = dims4(self, "upsample_nearest")?;
        if factor == 0 {
            return Err(Error::Param("upsample factor must be positive".into()));
        }
        let (ho, wo) = (h * factor, w * factor);
        let mut out = vec![0.0f32; b * c * ho * wo];
        {
            let x = self.data();
            for pl in 0..b * c {
                for y in 0..ho {
                    for xx in 0..wo {
                        out[(pl * ho + y) * wo + xx] = x[(pl * h + y / factor) * w + xx / factor];
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            vec![b, c, ho, wo],
            out,
            "upsample_nearest",
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = vec![0.0f32; b * c * h * w];
                for pl in 0..b * c {
                    for y in 0..ho {
                        for xx in 0..wo {
                            gx[(pl * h + y / factor) * w + xx / factor] += g[(pl * ho + y) * wo + xx];
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Mean over non-overlapping `factor×factor` cells.
    pub fn avg_pool(&self, factor: usize) -> Result<Tensor> {
        let [b, c, h, w] = dims4(self, "avg_pool")?;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(Error::shape(
                "avg_pool",
                format!("factor {factor} does not divide {h}x{w}"),
            ));
        }
        let (ho, wo) = (h / factor, w / factor);
        let inv = 1.0 / (factor * factor) as f32;
        let mut out = vec![0.0f32; b * c * ho * wo];
        {
            let x = self.data();
            for pl in 0..b * c {
                for y in 0..h {
                    for xx in 0..w {
                        out[(pl * ho + y / factor) * wo + xx / factor] += x[(pl * h + y) * w + xx];
                    }
                }
            }
            out.iter_mut().for_each(|v| *v *= inv);
        }
        Ok(Tensor::from_op(
            vec![b, c, ho, wo],
            out,
            "avg_pool",
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = vec![0.0f32; b * c * h * w];
                for pl in 0..b * c {
                    for y in 0..h {
                        for xx in 0..w {
                            gx[(pl * h + y) * w + xx] = g[(pl * ho + y / factor) * wo + xx / factor] * inv;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }
}
