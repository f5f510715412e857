//! Selective state-space scanning over 2-D feature maps.
//!
//! A feature map is unrolled into four token sequences ([`expand`]), each
//! sequence runs through its own input-dependent recurrence
//! ([`selective_scan`]), and the results are folded back onto the grid and
//! summed ([`merge`]). [`VssBlock`] wraps this in the gated residual block
//! used as the encoder's basic unit.
//!
//! Recurrence, per channel `e` and state `s`:
//!
//! ```text
//! h_t = exp(Δ_t·A)·h_{t−1} + Δ_t·B_t·u_t,   h_0 = 0
//! y_t = C_t·h_t + D·u_t
//! ```

use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{constant, from_tokens, join, to_tokens, trunc_normal, LayerNorm, Module};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanDirection {
    RowMajor,
    RowMajorReversed,
    ColumnMajor,
    ColumnMajorReversed,
}

impl ScanDirection {
    pub const ALL: [ScanDirection; 4] = [
        ScanDirection::RowMajor,
        ScanDirection::RowMajorReversed,
        ScanDirection::ColumnMajor,
        ScanDirection::ColumnMajorReversed,
    ];

    /// `order[t]` is the row-major grid position visited at step `t`.
    pub fn order(self, height: usize, width: usize) -> Vec<usize> {
        let n = height * width;
        let col_major = |t: usize| (t % height) * width + t / height;
        match self {
            ScanDirection::RowMajor => (0..n).collect(),
            ScanDirection::RowMajorReversed => (0..n).rev().collect(),
            ScanDirection::ColumnMajor => (0..n).map(col_major).collect(),
            ScanDirection::ColumnMajorReversed => (0..n).rev().map(col_major).collect(),
        }
    }
}

fn inverse(order: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; order.len()];
    for (t, &p) in order.iter().enumerate() {
        inv[p] = t;
    }
    inv
}

/// Four directional token sequences of one feature map.
#[derive(Debug, Clone)]
pub struct DirectionalSequences {
    /// `[B×(H·W)×D]` per direction, in [`ScanDirection::ALL`] order.
    pub sequences: [Tensor; 4],
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Unrolls `z: [B×D×H×W]` along the four scan directions.
pub fn expand(z: &Tensor) -> Result<DirectionalSequences> {
    let [b, d, h, w] = match z.shape() {
        &[b, d, h, w] => [b, d, h, w],
        s => return Err(Error::shape("expand", format!("expected [B, D, H, W], got {s:?}"))),
    };
    let tokens = z.permute(&[0, 2, 3, 1])?.reshape(&[b, h * w, d])?;
    let seq = |dir: ScanDirection| tokens.permute_rows(Rc::new(dir.order(h, w)));
    Ok(DirectionalSequences {
        sequences: [
            seq(ScanDirection::RowMajor)?,
            seq(ScanDirection::RowMajorReversed)?,
            seq(ScanDirection::ColumnMajor)?,
            seq(ScanDirection::ColumnMajorReversed)?,
        ],
        batch: b,
        channels: d,
        height: h,
        width: w,
    })
}

/// Puts one directional sequence back onto the grid as `[B×D×H×W]`.
pub fn unscan(seq: &Tensor, dir: ScanDirection, height: usize, width: usize) -> Result<Tensor> {
    let (b, l, d) = match seq.shape() {
        &[b, l, d] => (b, l, d),
        s => return Err(Error::shape("merge", format!("expected [B, L, D], got {s:?}"))),
    };
    if l != height * width {
        return Err(Error::shape(
            "merge",
            format!("sequence length {l} does not match {height}x{width} grid"),
        ));
    }
    seq.permute_rows(Rc::new(inverse(&dir.order(height, width))))?
        .reshape(&[b, height, width, d])?
        .permute(&[0, 3, 1, 2])
}

/// Inverse-permutes each scanned sequence back to 2-D and sums them.
pub fn merge(scanned: &[Tensor; 4], height: usize, width: usize) -> Result<Tensor> {
    let first = scanned[0].shape();
    if let Some(bad) = scanned.iter().find(|s| s.shape() != first) {
        return Err(Error::shape(
            "merge",
            format!("sequence shapes differ: {first:?} vs {:?}", bad.shape()),
        ));
    }
    let mut acc = unscan(&scanned[0], ScanDirection::ALL[0], height, width)?;
    for (seq, dir) in scanned.iter().zip(ScanDirection::ALL).skip(1) {
        acc = acc.add(&unscan(seq, dir, height, width)?)?;
    }
    Ok(acc)
}

/// Scan sizes: batch, length, channels, state.
#[derive(Debug, Clone, Copy)]
struct ScanDims {
    b: usize,
    l: usize,
    e: usize,
    s: usize,
}

/// Forward recurrence on raw slices. Returns outputs `[B×L×E]` and every
/// hidden state `[B×L×E×S]` (state after consuming step `t`).
/// Branch-free `exp` so the per-state loop vectorises: range reduction by
/// `ln 2` and a degree-6 polynomial. Inputs above 88 are clamped and
/// anything below `FLUSH` returns exactly zero, so long decays never leave
/// subnormals in the state recurrences (they are very slow on x86).
#[inline(always)]
fn exp_f32(x: f32) -> f32 {
    const ROUND: f32 = 12_582_912.0; // 1.5·2^23
    let keep = x >= FLUSH;
    let x = x.clamp(FLUSH, 88.0);
    let n = (x * std::f32::consts::LOG2_E + ROUND) - ROUND;
    let r = x - n * 0.693_359_4 + n * 2.121_944_4e-4;
    let mut p = 1.987_569_1e-4f32;
    p = p * r + 1.398_199_9e-3;
    p = p * r + 8.333_452e-3;
    p = p * r + 4.166_579_6e-2;
    p = p * r + 0.166_666_65;
    p = p * r + 0.5;
    let y = p * r * r + r + 1.0;
    let v = y * f32::from_bits(((n as i32 + 127) as u32) << 23);
    if keep {
        v
    } else {
        0.0
    }
}

const FLUSH: f32 = -60.0;

/// Output `y` plus, when `save` is set, every hidden state and every
/// decay factor `exp(Δ·A)`, both `[B×L×E×S]`.
#[allow(clippy::too_many_arguments)]
fn scan_forward(
    dims: ScanDims,
    u: &[f32],
    delta: &[f32],
    a: &[f32],
    bm: &[f32],
    cm: &[f32],
    d: &[f32],
    save: bool,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let ScanDims { b, l, e, s } = dims;
    let mut y = vec![0.0f32; b * l * e];
    let saved_len = if save { b * l * e * s } else { 0 };
    let mut hs = vec![0.0f32; saved_len];
    let mut decays = vec![0.0f32; saved_len];
    let mut h = vec![0.0f32; e * s];
    let mut dec = vec![0.0f32; s];
    for bi in 0..b {
        h.fill(0.0);
        for t in 0..l {
            let row = bi * l + t;
            let bt = &bm[row * s..(row + 1) * s];
            let ct = &cm[row * s..(row + 1) * s];
            for ei in 0..e {
                let ut = u[row * e + ei];
                let dt = delta[row * e + ei];
                let hrow = &mut h[ei * s..(ei + 1) * s];
                let arow = &a[ei * s..(ei + 1) * s];
                for (dv, &av) in dec.iter_mut().zip(arow) {
                    *dv = exp_f32(dt * av);
                }
                let du = dt * ut;
                let mut acc = 0.0f32;
                for si in 0..s {
                    let hv = dec[si] * hrow[si] + du * bt[si];
                    hrow[si] = hv;
                    acc += ct[si] * hv;
                }
                y[row * e + ei] = acc + d[ei] * ut;
                if save {
                    let at = (row * e + ei) * s;
                    hs[at..at + s].copy_from_slice(hrow);
                    decays[at..at + s].copy_from_slice(&dec);
                }
            }
        }
    }
    (y, hs, decays)
}

/// Hidden states of the recurrence, `[B×L×E×S]`, for inspection.
pub fn scan_states(
    u: &Tensor,
    delta: &Tensor,
    a: &Tensor,
    b: &Tensor,
    c: &Tensor,
    d: &Tensor,
) -> Result<Vec<f32>> {
    let dims = scan_dims(u, delta, a, b, c, d)?;
    Ok(scan_forward(dims, &u.data(), &delta.data(), &a.data(), &b.data(), &c.data(), &d.data(), true).1)
}

fn scan_dims(
    u: &Tensor,
    delta: &Tensor,
    a: &Tensor,
    b: &Tensor,
    c: &Tensor,
    d: &Tensor,
) -> Result<ScanDims> {
    let (bs, l, e) = match u.shape() {
        &[bs, l, e] => (bs, l, e),
        s => {
            return Err(Error::shape(
                "selective_scan",
                format!("input must be [B, L, E], got {s:?}"),
            ))
        }
    };
    let s = match a.shape() {
        &[e2, s] if e2 == e => s,
        sh => {
            return Err(Error::shape(
                "selective_scan",
                format!("state matrix {sh:?} for {e} channels"),
            ))
        }
    };
    let ok = delta.shape() == u.shape()
        && b.shape() == [bs, l, s]
        && c.shape() == [bs, l, s]
        && d.numel() == e;
    if !ok {
        return Err(Error::shape(
            "selective_scan",
            format!(
                "u {:?}, delta {:?}, A {:?}, B {:?}, C {:?}, D {:?}",
                u.shape(),
                delta.shape(),
                a.shape(),
                b.shape(),
                c.shape(),
                d.shape()
            ),
        ));
    }
    Ok(ScanDims { b: bs, l, e, s })
}

/// Selective scan with zero-order hold on `A` and an Euler step on `B`.
///
/// Shapes: `u, delta: [B×L×E]`, `a: [E×S]` (continuous-time, expected
/// negative), `b, c: [B×L×S]`, `d: [E]`. Output `[B×L×E]`. Differentiable
/// with respect to every input.
pub fn selective_scan(
    u: &Tensor,
    delta: &Tensor,
    a: &Tensor,
    b: &Tensor,
    c: &Tensor,
    d: &Tensor,
) -> Result<Tensor> {
    let dims = scan_dims(u, delta, a, b, c, d)?;
    let inputs = vec![u.clone(), delta.clone(), a.clone(), b.clone(), c.clone(), d.clone()];
    let save = crate::tensor::grad_enabled() && inputs.iter().any(Tensor::requires_grad);
    let (y, hs, decays) =
        scan_forward(dims, &u.data(), &delta.data(), &a.data(), &b.data(), &c.data(), &d.data(), save);
    let saved = inputs.clone();
    Ok(Tensor::from_op(
        vec![dims.b, dims.l, dims.e],
        y,
        "selective_scan",
        inputs,
        Box::new(move |gy| scan_backward(dims, &saved, &hs, &decays, gy)),
    ))
}

fn scan_backward(dims: ScanDims, saved: &[Tensor], hs: &[f32], decays: &[f32], gy: &[f32]) -> Vec<Option<Vec<f32>>> {
    let ScanDims { b, l, e, s } = dims;
    let u = saved[0].data();
    let delta = saved[1].data();
    let a = saved[2].data();
    let bm = saved[3].data();
    let cm = saved[4].data();
    let d = saved[5].data();
    let mut gu = vec![0.0f32; u.len()];
    let mut gdelta = vec![0.0f32; delta.len()];
    let mut ga = vec![0.0f32; a.len()];
    let mut gb = vec![0.0f32; bm.len()];
    let mut gc = vec![0.0f32; cm.len()];
    let mut gd = vec![0.0f32; d.len()];
    // gradient flowing into h_t from later steps
    let mut gh = vec![0.0f32; e * s];
    for bi in 0..b {
        gh.fill(0.0);
        for t in (0..l).rev() {
            let row = bi * l + t;
            let bt = &bm[row * s..(row + 1) * s];
            let ct = &cm[row * s..(row + 1) * s];
            for ei in 0..e {
                let idx = row * e + ei;
                let g = gy[idx];
                let ut = u[idx];
                let dt = delta[idx];
                let h_now = &hs[idx * s..(idx + 1) * s];
                let h_prev = if t > 0 {
                    let p = (row - 1) * e + ei;
                    Some(&hs[p * s..(p + 1) * s])
                } else {
                    None
                };
                gd[ei] += g * ut;
                let mut du = g * d[ei];
                let mut ddelta = 0.0f32;
                let ghrow = &mut gh[ei * s..(ei + 1) * s];
                let arow = &a[ei * s..(ei + 1) * s];
                let dec = &decays[idx * s..(idx + 1) * s];
                let gcrow = &mut gc[row * s..(row + 1) * s];
                let garow = &mut ga[ei * s..(ei + 1) * s];
                let dtu = dt * ut;
                for si in 0..s {
                    gcrow[si] += g * h_now[si];
                    let total = ghrow[si] + g * ct[si];
                    let hp = h_prev.map_or(0.0, |h| h[si]);
                    let tdh = total * dec[si] * hp;
                    ddelta += tdh * arow[si] + total * bt[si] * ut;
                    garow[si] += tdh * dt;
                    gb[row * s + si] += total * dtu;
                    du += total * dt * bt[si];
                    ghrow[si] = total * dec[si];
                }
                gu[idx] += du;
                gdelta[idx] += ddelta;
            }
        }
    }
    vec![Some(gu), Some(gdelta), Some(ga), Some(gb), Some(gc), Some(gd)]
}

/// Learnable parameters of one directional recurrence.
#[derive(Debug, Clone)]
pub struct S6Params {
    /// `[E×R]` token → low-rank step size.
    pub x_proj_dt: Tensor,
    /// `[E×S]` token → `B_t`.
    pub x_proj_b: Tensor,
    /// `[E×S]` token → `C_t`.
    pub x_proj_c: Tensor,
    /// `[R×E]` low-rank step → per-channel step.
    pub dt_proj: Tensor,
    pub dt_bias: Tensor,
    /// `A = −exp(a_log)`, `[E×S]`.
    pub a_log: Tensor,
    pub d: Tensor,
}

impl S6Params {
    pub fn init<R: Rng>(rng: &mut R, channels: usize, state: usize, rank: usize) -> Result<Self> {
        let a_log: Vec<f32> = (0..channels)
            .flat_map(|_| (1..=state).map(|s| (s as f32).ln()))
            .collect();
        // step sizes start log-uniform in [1e-3, 1e-1]; store softplus⁻¹
        let dt_bias: Vec<f32> = (0..channels)
            .map(|_| {
                let dt = (rng.random_range(0.001f32.ln()..0.1f32.ln())).exp();
                dt + (-(-dt).exp_m1()).ln()
            })
            .collect();
        Ok(S6Params {
            x_proj_dt: trunc_normal(rng, &[channels, rank], 0.02)?,
            x_proj_b: trunc_normal(rng, &[channels, state], 0.02)?,
            x_proj_c: trunc_normal(rng, &[channels, state], 0.02)?,
            dt_proj: trunc_normal(rng, &[rank, channels], 0.02)?,
            dt_bias: Tensor::param(&[channels], dt_bias)?,
            a_log: Tensor::param(&[channels, state], a_log)?,
            d: constant(&[channels], 1.0)?,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.a_log.shape()[1]
    }

    /// Continuous-time state matrix, strictly negative by construction.
    pub fn a(&self) -> Tensor {
        self.a_log.exp().neg()
    }

    /// Runs the recurrence over `u: [B×L×E]`.
    pub fn scan(&self, u: &Tensor) -> Result<Tensor> {
        let (b, l, e) = match u.shape() {
            &[b, l, e] => (b, l, e),
            s => return Err(Error::shape("s6", format!("expected [B, L, E], got {s:?}"))),
        };
        let s = self.state_dim();
        let flat = u.reshape(&[b * l, e])?;
        let delta = flat
            .matmul(&self.x_proj_dt)?
            .matmul(&self.dt_proj)?
            .add_bias(&self.dt_bias)?
            .softplus()
            .reshape(&[b, l, e])?;
        let bm = flat.matmul(&self.x_proj_b)?.reshape(&[b, l, s])?;
        let cm = flat.matmul(&self.x_proj_c)?.reshape(&[b, l, s])?;
        selective_scan(u, &delta, &self.a(), &bm, &cm, &self.d)
    }
}

impl Module for S6Params {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (name, t) in [
            ("x_proj_dt", &self.x_proj_dt),
            ("x_proj_b", &self.x_proj_b),
            ("x_proj_c", &self.x_proj_c),
            ("dt_proj", &self.dt_proj),
            ("dt_bias", &self.dt_bias),
            ("a_log", &self.a_log),
            ("d", &self.d),
        ] {
            out.push((join(prefix, name), t.clone()));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VssConfig {
    pub dim: usize,
    pub expand: usize,
    pub state: usize,
    /// Step-size rank; `0` selects `ceil(dim / 16)`.
    pub dt_rank: usize,
}

impl VssConfig {
    pub fn inner(&self) -> usize {
        self.dim * self.expand
    }

    pub fn rank(&self) -> usize {
        if self.dt_rank == 0 {
            self.dim.div_ceil(16)
        } else {
            self.dt_rank
        }
    }
}

/// Gated residual block around the four-direction selective scan.
///
/// ```text
/// h = LN(x)
/// y = LN(merge(S6ᵥ(expandᵥ(SiLU(dwconv(h·W_x))))))
/// out = x + (y ⊙ SiLU(h·W_z))·W_out
/// ```
#[derive(Debug, Clone)]
pub struct VssBlock {
    pub norm: LayerNorm,
    pub in_proj_x: Tensor,
    pub in_proj_z: Tensor,
    pub conv_weight: Tensor,
    pub conv_bias: Tensor,
    pub directions: [S6Params; 4],
    pub out_norm: LayerNorm,
    pub out_proj: Tensor,
}

impl VssBlock {
    pub fn init<R: Rng>(rng: &mut R, cfg: VssConfig) -> Result<Self> {
        let (d, e) = (cfg.dim, cfg.inner());
        let in_proj_x = trunc_normal(rng, &[d, e], 0.02)?;
        let in_proj_z = trunc_normal(rng, &[d, e], 0.02)?;
        let conv_weight = trunc_normal(rng, &[e, 1, 3, 3], 0.02)?;
        let conv_bias = constant(&[e], 0.0)?;
        let directions = [
            S6Params::init(rng, e, cfg.state, cfg.rank())?,
            S6Params::init(rng, e, cfg.state, cfg.rank())?,
            S6Params::init(rng, e, cfg.state, cfg.rank())?,
            S6Params::init(rng, e, cfg.state, cfg.rank())?,
        ];
        Ok(VssBlock {
            norm: LayerNorm::new(d)?,
            in_proj_x,
            in_proj_z,
            conv_weight,
            conv_bias,
            directions,
            out_norm: LayerNorm::new(e)?,
            out_proj: trunc_normal(rng, &[e, d], 0.02)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let shape = x.shape().to_vec();
        let (b, h, w) = (shape[0], shape[2], shape[3]);
        let e = self.in_proj_x.shape()[1];
        let tokens = self.norm.forward(&to_tokens(x)?)?;

        let branch = from_tokens(&tokens.matmul(&self.in_proj_x)?, &[b, e, h, w])?
            .depthwise_conv2d(&self.conv_weight, Some(&self.conv_bias))?
            .silu();
        let seqs = expand(&branch)?;
        let scanned = [
            self.directions[0].scan(&seqs.sequences[0])?,
            self.directions[1].scan(&seqs.sequences[1])?,
            self.directions[2].scan(&seqs.sequences[2])?,
            self.directions[3].scan(&seqs.sequences[3])?,
        ];
        let merged = self.out_norm.forward(&to_tokens(&merge(&scanned, h, w)?)?)?;

        let gate = tokens.matmul(&self.in_proj_z)?.silu();
        let out = merged.mul(&gate)?.matmul(&self.out_proj)?;
        x.add(&from_tokens(&out, &shape)?)
    }
}

impl Module for VssBlock {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.norm.collect_params(&join(prefix, "norm"), out);
        out.push((join(prefix, "in_proj_x"), self.in_proj_x.clone()));
        out.push((join(prefix, "in_proj_z"), self.in_proj_z.clone()));
        out.push((join(prefix, "conv.weight"), self.conv_weight.clone()));
        out.push((join(prefix, "conv.bias"), self.conv_bias.clone()));
        for (v, dir) in self.directions.iter().enumerate() {
            dir.collect_params(&join(prefix, &format!("scan{}", v + 1)), out);
        }
        self.out_norm.collect_params(&join(prefix, "out_norm"), out);
        out.push((join(prefix, "out_proj"), self.out_proj.clone()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exp_tracks_libm() {
        let mut worst = 0.0f64;
        for i in 0..=200_000 {
            let x = FLUSH + (88.0 - FLUSH) * i as f32 / 200_000.0;
            let exact = (x as f64).exp();
            worst = worst.max(((exp_f32(x) as f64 - exact) / exact).abs());
        }
        assert!(worst < 4.0 * f32::EPSILON as f64, "{worst}");
        assert_eq!(exp_f32(0.0), 1.0);
        assert_eq!(exp_f32(FLUSH - 1e-3), 0.0);
        assert_eq!(exp_f32(-1e4), 0.0);
    }
    use crate::tensor::check_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(b: usize, d: usize, h: usize, w: usize) -> Tensor {
        let n = b * d * h * w;
        Tensor::new(&[b, d, h, w], (0..n).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn expand_two_by_two() {
        // [[a,b],[c,d]] with a=0, b=1, c=2, d=3
        let seqs = expand(&grid(1, 1, 2, 2)).unwrap();
        let got: Vec<Vec<f32>> = seqs.sequences.iter().map(|s| s.to_vec()).collect();
        assert_eq!(got[0], vec![0., 1., 2., 3.]);
        assert_eq!(got[1], vec![3., 2., 1., 0.]);
        assert_eq!(got[2], vec![0., 2., 1., 3.]);
        assert_eq!(got[3], vec![3., 1., 2., 0.]);
    }

    #[test]
    fn expand_single_pixel() {
        let z = Tensor::new(&[1, 2, 1, 1], vec![4.0, 5.0]).unwrap();
        for s in expand(&z).unwrap().sequences.iter() {
            assert_eq!(s.to_vec(), vec![4.0, 5.0]);
        }
    }

    #[test]
    fn unscan_inverts_each_direction() {
        let z = grid(2, 3, 3, 5);
        let seqs = expand(&z).unwrap();
        for (s, dir) in seqs.sequences.iter().zip(ScanDirection::ALL) {
            assert_eq!(unscan(s, dir, 3, 5).unwrap().to_vec(), z.to_vec());
        }
    }

    #[test]
    fn merge_of_identity_scan_is_four_times_input() {
        let z = grid(1, 2, 3, 5);
        let seqs = expand(&z).unwrap();
        let merged = merge(&seqs.sequences, 3, 5).unwrap();
        let expect: Vec<f32> = z.to_vec().iter().map(|v| 4.0 * v).collect();
        assert_eq!(merged.to_vec(), expect);
    }

    #[test]
    fn merge_single_direction() {
        let z = grid(1, 1, 2, 3);
        let seqs = expand(&z).unwrap();
        let zero = Tensor::zeros(seqs.sequences[0].shape());
        let parts = [zero.clone(), zero.clone(), seqs.sequences[2].clone(), zero];
        assert_eq!(merge(&parts, 2, 3).unwrap().to_vec(), z.to_vec());
    }

    #[test]
    fn merge_rejects_geometry_mismatch() {
        let seqs = expand(&grid(1, 1, 2, 3)).unwrap();
        assert!(merge(&seqs.sequences, 3, 3).is_err());
    }

    #[test]
    fn scalar_scan_is_cumulative_sum() {
        let u = Tensor::new(&[1, 3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let ones = Tensor::full(&[1, 3, 1], 1.0);
        let y = selective_scan(&u, &ones, &Tensor::zeros(&[1, 1]), &ones, &ones, &Tensor::zeros(&[1]))
            .unwrap();
        assert_eq!(y.to_vec(), vec![1.0, 3.0, 6.0]);
    }

    #[test]
    fn zero_input_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = S6Params::init(&mut rng, 4, 3, 1).unwrap();
        let y = p.scan(&Tensor::zeros(&[2, 7, 4])).unwrap();
        assert!(y.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn a_is_strictly_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = S6Params::init(&mut rng, 4, 8, 1).unwrap();
        assert!(p.a().to_vec().iter().all(|&v| v < 0.0));
    }

    #[test]
    fn zero_output_projection_leaves_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = VssConfig { dim: 4, expand: 2, state: 4, dt_rank: 0 };
        let block = VssBlock::init(&mut rng, cfg).unwrap();
        block.out_proj.data_mut().fill(0.0);
        let x = Tensor::new(&[1, 4, 3, 2], (0..24).map(|v| (v as f32).sin()).collect()).unwrap();
        assert_eq!(block.forward(&x).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn block_preserves_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = VssConfig { dim: 4, expand: 2, state: 4, dt_rank: 0 };
        let block = VssBlock::init(&mut rng, cfg).unwrap();
        for (h, w) in [(1, 1), (2, 5), (4, 4)] {
            let x = Tensor::full(&[2, 4, h, w], 0.3);
            assert_eq!(block.forward(&x).unwrap().shape(), &[2, 4, h, w]);
        }
    }

    #[test]
    fn four_directions_have_distinct_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = VssConfig { dim: 4, expand: 2, state: 4, dt_rank: 0 };
        let block = VssBlock::init(&mut rng, cfg).unwrap();
        for i in 0..4 {
            for j in i + 1..4 {
                let (a, b) = (&block.directions[i], &block.directions[j]);
                assert!(!a.x_proj_b.ptr_eq(&b.x_proj_b));
                assert_ne!(a.x_proj_b.to_vec(), b.x_proj_b.to_vec());
            }
        }
    }

    fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
        let n = shape.iter().product();
        Tensor::param(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }

    struct ScanInputs {
        u: Tensor,
        delta: Tensor,
        a: Tensor,
        b: Tensor,
        c: Tensor,
        d: Tensor,
    }

    fn scan_inputs(rng: &mut ChaCha8Rng, l: usize, e: usize, s: usize) -> ScanInputs {
        ScanInputs {
            u: random(rng, &[1, l, e], -1.0, 1.0),
            delta: random(rng, &[1, l, e], 0.1, 1.0),
            a: random(rng, &[e, s], -1.5, -0.1),
            b: random(rng, &[1, l, s], -1.0, 1.0),
            c: random(rng, &[1, l, s], -1.0, 1.0),
            d: random(rng, &[e], -1.0, 1.0),
        }
    }

    impl ScanInputs {
        fn run(&self) -> Result<Tensor> {
            selective_scan(&self.u, &self.delta, &self.a, &self.b, &self.c, &self.d)
        }
    }

    #[test]
    fn scan_is_causal() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let (l, e) = (9, 3);
            let inp = scan_inputs(&mut rng, l, e, 4);
            let base = inp.run().unwrap().to_vec();
            let t = rng.random_range(0..l);
            inp.u.data_mut()[t * e + rng.random_range(0..e)] += 0.7;
            let moved = inp.run().unwrap().to_vec();
            assert_eq!(base[..t * e], moved[..t * e]);
            assert_ne!(base[t * e..], moved[t * e..]);
        }
    }

    #[test]
    fn scan_prefix_matches_shorter_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (l, p, e, s) = (10, 6, 2, 3);
        let full = scan_inputs(&mut rng, l, e, s);
        let prefix = |t: &Tensor, w: usize| {
            Tensor::new(&[1, p, w], t.to_vec()[..p * w].to_vec()).unwrap()
        };
        let short = selective_scan(
            &prefix(&full.u, e),
            &prefix(&full.delta, e),
            &full.a,
            &prefix(&full.b, s),
            &prefix(&full.c, s),
            &full.d,
        )
        .unwrap();
        assert_eq!(full.run().unwrap().to_vec()[..p * e], short.to_vec()[..]);
    }

    #[test]
    fn constant_input_state_stays_bounded() {
        let (l, e, s) = (1000, 2, 4);
        let (dt, bv, uv) = (0.5f32, 0.8f32, 1.0f32);
        let a = Tensor::new(&[e, s], vec![-0.05, -0.2, -1.0, -3.0, -0.1, -0.5, -2.0, -0.01]).unwrap();
        let states = scan_states(
            &Tensor::full(&[1, l, e], uv),
            &Tensor::full(&[1, l, e], dt),
            &a,
            &Tensor::full(&[1, l, s], bv),
            &Tensor::full(&[1, l, s], 1.0),
            &Tensor::zeros(&[e]),
        )
        .unwrap();
        let av = a.to_vec();
        for t in 0..l {
            for ei in 0..e {
                for si in 0..s {
                    let bound = dt * bv * uv / (1.0 - (dt * av[ei * s + si]).exp());
                    let h = states[(t * e + ei) * s + si];
                    assert!(h.is_finite() && h.abs() <= bound * (1.0 + 1e-4), "t={t} h={h} bound={bound}");
                }
            }
        }
    }

    #[test]
    fn scan_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let inp = scan_inputs(&mut rng, 5, 3, 2);
        let params = [&inp.u, &inp.delta, &inp.a, &inp.b, &inp.c, &inp.d].map(|t| t.clone());
        let report = check_gradients(|| inp.run(), &params, 1e-2, 64, 0).unwrap();
        assert!(report.max_rel_error() < 1e-3, "{report:?}");
    }

    #[test]
    fn block_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cfg = VssConfig { dim: 4, expand: 2, state: 4, dt_rank: 0 };
        let block = VssBlock::init(&mut rng, cfg).unwrap();
        // O(1) weights so every path carries signal well above f32 noise
        for (name, p) in block.named_params() {
            let (lo, hi) = match name.rsplit('.').next().unwrap() {
                "dt_bias" => (-0.5, 0.5),
                "a_log" => (-0.5, 0.5),
                "gain" => (0.5, 1.5),
                "out_proj" => (-1.5, 1.5),
                _ => (-1.0, 1.0),
            };
            for v in p.data_mut().iter_mut() {
                *v = rng.random_range(lo..hi);
            }
        }
        let x = random(&mut rng, &[1, 4, 3, 3], -1.0, 1.0);
        let mut inputs = vec![x.clone()];
        inputs.extend(block.named_params().into_iter().map(|(_, t)| t));
        let report = check_gradients(|| block.forward(&x), &inputs, 1e-2, 24, 1).unwrap();
        assert!(report.max_rel_error() < 1e-3, "{report:?}");
    }
}
