use std::rc::Rc;

use super::Tensor;
use crate::error::{Error, Result};

/// C = A·B (+ C when `accumulate`) on row-major slices with arbitrary strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_strides: (isize, isize),
    b: &[f32],
    b_strides: (isize, isize),
    c: &mut [f32],
    accumulate: bool,
) {
    debug_assert!(c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: callers pass slices that cover the strided extents described by
    // (m, k, n) and the strides; c is a dense m×n row-major block.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Subnormals to zero. Saturated activations otherwise leave them behind
/// and every later multiply touching one runs an order of magnitude slower.
#[inline]
fn flush(v: f32) -> f32 {
    if v.abs() < f32::MIN_POSITIVE {
        0.0
    } else {
        v
    }
}

fn softplus(x: f32) -> f32 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid_f32(x: f32) -> f32 {
    sigmoid(x)
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        }
    }

    fn apply(self, a: f32, b: f32) -> f32 {
        match self {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
        }
    }
}

fn reduce_to_scalar(g: &[f32]) -> Vec<f32> {
    vec![g.iter().map(|&v| v as f64).sum::<f64>() as f32]
}

impl Tensor {
    fn binary(&self, other: &Tensor, kind: Binary) -> Result<Tensor> {
        let (a_len, b_len) = (self.numel(), other.numel());
        let shape = if self.shape() == other.shape() || b_len == 1 {
            self.shape().to_vec()
        } else if a_len == 1 {
            other.shape().to_vec()
        } else {
            return Err(Error::shape(
                kind.name(),
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        };
        let n: usize = shape.iter().product();
        let data: Vec<f32> = {
            let a = self.data();
            let b = other.data();
            (0..n)
                .map(|i| kind.apply(a[if a_len == 1 { 0 } else { i }], b[if b_len == 1 { 0 } else { i }]))
                .collect()
        };
        let (sa, sb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            shape,
            data,
            kind.name(),
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let (ga, gb): (Vec<f32>, Vec<f32>) = match kind {
                    Binary::Add => (g.to_vec(), g.to_vec()),
                    Binary::Sub => (g.to_vec(), g.iter().map(|v| -v).collect()),
                    Binary::Mul => {
                        let a = sa.data();
                        let b = sb.data();
                        let (al, bl) = (a.len(), b.len());
                        let ga = g
                            .iter()
                            .enumerate()
                            .map(|(i, gi)| gi * b[if bl == 1 { 0 } else { i }])
                            .collect();
                        let gb = g
                            .iter()
                            .enumerate()
                            .map(|(i, gi)| gi * a[if al == 1 { 0 } else { i }])
                            .collect();
                        (ga, gb)
                    }
                };
                let ga = if a_len == 1 && g.len() != 1 { reduce_to_scalar(&ga) } else { ga };
                let gb = if b_len == 1 && g.len() != 1 { reduce_to_scalar(&gb) } else { gb };
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Binary::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Binary::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Binary::Mul)
    }

    /// Pointwise op whose derivative is expressed through input `x` and output `y`.
    fn unary(&self, name: &'static str, f: impl Fn(f32) -> f32, df: fn(f32, f32) -> f32) -> Tensor {
        let data: Vec<f32> = self.data().iter().map(|&x| flush(f(x))).collect();
        let x = self.clone();
        let y = data.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            name,
            vec![self.clone()],
            Box::new(move |g| {
                let xd = x.data();
                let gx = g
                    .iter()
                    .zip(xd.iter().zip(&y))
                    .map(|(gi, (&xi, &yi))| flush(gi * df(xi, yi)))
                    .collect();
                vec![Some(gx)]
            }),
        )
    }

    pub fn exp(&self) -> Tensor {
        self.unary("exp", f32::exp, |_, y| y)
    }

    pub fn neg(&self) -> Tensor {
        self.unary("neg", |x| -x, |_, _| -1.0)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary("sigmoid", sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn silu(&self) -> Tensor {
        self.unary("silu", |x| x * sigmoid(x), |x, _| {
            let s = sigmoid(x);
            s * (1.0 + x * (1.0 - s))
        })
    }

    pub fn relu(&self) -> Tensor {
        self.unary("relu", |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn softplus(&self) -> Tensor {
        self.unary("softplus", softplus, |x, _| sigmoid(x))
    }

    pub fn mul_scalar(&self, c: f32) -> Tensor {
        let data: Vec<f32> = self.data().iter().map(|&x| x * c).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            "mul_scalar",
            vec![self.clone()],
            Box::new(move |g| vec![Some(g.iter().map(|v| v * c).collect())]),
        )
    }

    pub fn add_scalar(&self, c: f32) -> Tensor {
        let data: Vec<f32> = self.data().iter().map(|&x| x + c).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            "add_scalar",
            vec![self.clone()],
            Box::new(|g| vec![Some(g.to_vec())]),
        )
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(&self) -> Tensor {
        let total = self.data().iter().map(|&v| v as f64).sum::<f64>() as f32;
        let n = self.numel();
        Tensor::from_op(
            vec![1],
            vec![total],
            "sum",
            vec![self.clone()],
            Box::new(move |g| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        let total = self.data().iter().map(|&v| v as f64).sum::<f64>();
        let inv = 1.0 / n as f32;
        Tensor::from_op(
            vec![1],
            vec![(total / n as f64) as f32],
            "mean",
            vec![self.clone()],
            Box::new(move |g| vec![Some(vec![g[0] * inv; n])]),
        )
    }

    /// Sum (or mean) over the listed axes; reduced axes are removed.
    pub fn reduce(&self, axes: &[usize], mean: bool) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        let nd = shape.len();
        if let Some(&bad) = axes.iter().find(|&&a| a >= nd) {
            return Err(Error::shape(
                "reduce",
                format!("axis {bad} out of range for {nd}-d tensor"),
            ));
        }
        let mut keep = vec![true; nd];
        for &a in axes {
            keep[a] = false;
        }
        let out_shape: Vec<usize> = (0..nd).filter(|&i| keep[i]).map(|i| shape[i]).collect();
        let count: usize = (0..nd).filter(|&i| !keep[i]).map(|i| shape[i]).product();
        let out_shape = if out_shape.is_empty() { vec![1] } else { out_shape };
        let out_len: usize = out_shape.iter().product();
        // map each input flat index to its output flat index
        let mut map = Vec::with_capacity(self.numel());
        let mut idx = vec![0usize; nd];
        for _ in 0..self.numel() {
            let mut o = 0;
            for i in 0..nd {
                if keep[i] {
                    o = o * shape[i] + idx[i];
                }
            }
            map.push(o);
            for i in (0..nd).rev() {
                idx[i] += 1;
                if idx[i] < shape[i] {
                    break;
                }
                idx[i] = 0;
            }
        }
        let scale = if mean { 1.0 / count as f64 } else { 1.0 };
        let mut acc = vec![0f64; out_len];
        for (&v, &o) in self.data().iter().zip(&map) {
            acc[o] += v as f64;
        }
        let data = acc.iter().map(|&v| (v * scale) as f32).collect();
        let scale = scale as f32;
        Ok(Tensor::from_op(
            out_shape,
            data,
            if mean { "mean_axes" } else { "sum_axes" },
            vec![self.clone()],
            Box::new(move |g| vec![Some(map.iter().map(|&o| g[o] * scale).collect())]),
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?}", self.shape(), shape),
            ));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            "reshape",
            vec![self.clone()],
            Box::new(|g| vec![Some(g.to_vec())]),
        ))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let shape = self.shape();
        let nd = shape.len();
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        if sorted != (0..nd).collect::<Vec<_>>() {
            return Err(Error::shape(
                "permute",
                format!("{axes:?} is not a permutation of {nd} axes"),
            ));
        }
        let mut in_strides = vec![1usize; nd];
        for i in (0..nd.saturating_sub(1)).rev() {
            in_strides[i] = in_strides[i + 1] * shape[i + 1];
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let n = self.numel();
        let mut src = Vec::with_capacity(n);
        let mut idx = vec![0usize; nd];
        for _ in 0..n {
            src.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum::<usize>());
            for i in (0..nd).rev() {
                idx[i] += 1;
                if idx[i] < out_shape[i] {
                    break;
                }
                idx[i] = 0;
            }
        }
        let data = {
            let d = self.data();
            src.iter().map(|&s| d[s]).collect()
        };
        Ok(Tensor::from_op(
            out_shape,
            data,
            "permute",
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = vec![0.0; g.len()];
                for (gi, &s) in g.iter().zip(&src) {
                    gx[s] = *gi;
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// `out[b, t, :] = self[b, order[t], :]` for a `[B×L×C]` tensor; `order`
    /// must be a permutation of `0..L`.
    pub fn permute_rows(&self, order: Rc<Vec<usize>>) -> Result<Tensor> {
        let [b, l, c] = dims3(self, "permute_rows")?;
        if order.len() != l {
            return Err(Error::shape(
                "permute_rows",
                format!("order of length {} for sequence length {l}", order.len()),
            ));
        }
        let mut data = vec![0.0; b * l * c];
        {
            let x = self.data();
            for bi in 0..b {
                for (t, &src) in order.iter().enumerate() {
                    let o = (bi * l + t) * c;
                    let s = (bi * l + src) * c;
                    data[o..o + c].copy_from_slice(&x[s..s + c]);
                }
            }
        }
        Ok(Tensor::from_op(
            vec![b, l, c],
            data,
            "permute_rows",
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = vec![0.0; g.len()];
                for bi in 0..b {
                    for (t, &src) in order.iter().enumerate() {
                        let o = (bi * l + t) * c;
                        let s = (bi * l + src) * c;
                        for j in 0..c {
                            gx[s + j] += g[o + j];
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let nd = first.ndim();
        if axis >= nd {
            return Err(Error::shape("concat", format!("axis {axis} for {nd}-d inputs")));
        }
        for p in parts {
            let ok = p.ndim() == nd
                && (0..nd).all(|i| i == axis || p.shape()[i] == first.shape()[i]);
            if !ok {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} vs {:?} along axis {axis}", first.shape(), p.shape()),
                ));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let total: usize = widths.iter().sum();
        let mut shape = first.shape().to_vec();
        shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
        let mut data = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data()[o * w..(o + 1) * w]);
            }
        }
        Ok(Tensor::from_op(
            shape,
            data,
            "concat",
            parts.to_vec(),
            Box::new(move |g| {
                let mut grads: Vec<Vec<f32>> =
                    widths.iter().map(|&w| Vec::with_capacity(w * outer)).collect();
                for o in 0..outer {
                    let mut off = o * total;
                    for (gp, &w) in grads.iter_mut().zip(&widths) {
                        gp.extend_from_slice(&g[off..off + w]);
                        off += w;
                    }
                }
                grads.into_iter().map(Some).collect()
            }),
        ))
    }

    /// `[m×k]·[k×n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = dims2(self, "matmul")?;
        let (k2, n) = dims2(other, "matmul")?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", self.shape(), other.shape()),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            &self.data(),
            (k as isize, 1),
            &other.data(),
            (n as isize, 1),
            &mut out,
            false,
        );
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            "matmul",
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let ga = a.requires_grad().then(|| {
                    // dA = dY · Bᵀ
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g, (n as isize, 1), &b.data(), (1, n as isize), &mut ga, false);
                    ga
                });
                let gb = b.requires_grad().then(|| {
                    // dB = Aᵀ · dY
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, &a.data(), (1, k as isize), g, (n as isize, 1), &mut gb, false);
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Adds `bias[D]` to every row of a `[..., D]` tensor.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let d = *self.shape().last().unwrap();
        if bias.numel() != d {
            return Err(Error::shape(
                "add_bias",
                format!("bias {:?} for input {:?}", bias.shape(), self.shape()),
            ));
        }
        let data = {
            let x = self.data();
            let b = bias.data();
            x.chunks(d)
                .flat_map(|row| row.iter().zip(b.iter()).map(|(x, b)| x + b))
                .collect()
        };
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            "add_bias",
            vec![self.clone(), bias.clone()],
            Box::new(move |g| {
                let mut gb = vec![0.0; d];
                for row in g.chunks(d) {
                    gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                vec![Some(g.to_vec()), Some(gb)]
            }),
        ))
    }

    /// `x·W + b` over the last dimension of a `[N×D_in]` tensor.
    pub fn linear(&self, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let y = self.matmul(weight)?;
        match bias {
            Some(b) => y.add_bias(b),
            None => Ok(y),
        }
    }

    /// Per-position normalisation over the last dimension followed by an
    /// affine transform.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: f32) -> Result<Tensor> {
        let d = *self.shape().last().unwrap();
        if gain.numel() != d || bias.numel() != d {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "input {:?} with gain {:?} and bias {:?}",
                    self.shape(),
                    gain.shape(),
                    bias.shape()
                ),
            ));
        }
        let rows = self.numel() / d;
        let mut xhat = vec![0.0f32; self.numel()];
        let mut inv_std = vec![0.0f32; rows];
        let mut out = vec![0.0f32; self.numel()];
        {
            let x = self.data();
            let gn = gain.data();
            let bs = bias.data();
            for r in 0..rows {
                let row = &x[r * d..(r + 1) * d];
                let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
                let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / d as f64;
                let is = 1.0 / (var + eps as f64).sqrt();
                inv_std[r] = is as f32;
                for j in 0..d {
                    let h = ((row[j] as f64 - mean) * is) as f32;
                    xhat[r * d + j] = h;
                    out[r * d + j] = h * gn[j] + bs[j];
                }
            }
        }
        let g_t = gain.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            "layer_norm",
            vec![self.clone(), gain.clone(), bias.clone()],
            Box::new(move |g| {
                let gn = g_t.data();
                let mut gx = vec![0.0; g.len()];
                let mut gg = vec![0.0; d];
                let mut gb = vec![0.0; d];
                for r in 0..rows {
                    let gy = &g[r * d..(r + 1) * d];
                    let xh = &xhat[r * d..(r + 1) * d];
                    let mut mean_dxh = 0.0f64;
                    let mut mean_dxh_xh = 0.0f64;
                    for j in 0..d {
                        let dxh = (gy[j] * gn[j]) as f64;
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xh[j] as f64;
                        gg[j] += gy[j] * xh[j];
                        gb[j] += gy[j];
                    }
                    mean_dxh /= d as f64;
                    mean_dxh_xh /= d as f64;
                    for j in 0..d {
                        let dxh = (gy[j] * gn[j]) as f64;
                        gx[r * d + j] = (inv_std[r] as f64
                            * (dxh - mean_dxh - xh[j] as f64 * mean_dxh_xh))
                            as f32;
                    }
                }
                vec![Some(gx), Some(gg), Some(gb)]
            }),
        ))
    }

    /// `Σ_i w[i]·xs[i]` for same-shape inputs and a weight vector of length `xs.len()`.
    pub fn weighted_sum(xs: &[Tensor], weights: &Tensor) -> Result<Tensor> {
        let first = xs
            .first()
            .ok_or_else(|| Error::shape("weighted_sum", "no terms"))?;
        if weights.numel() != xs.len() {
            return Err(Error::shape(
                "weighted_sum",
                format!("{} weights for {} terms", weights.numel(), xs.len()),
            ));
        }
        if let Some(bad) = xs.iter().find(|x| x.shape() != first.shape()) {
            return Err(Error::shape(
                "weighted_sum",
                format!("{:?} vs {:?}", first.shape(), bad.shape()),
            ));
        }
        let n = first.numel();
        let w = weights.to_vec();
        let mut out = vec![0.0f32; n];
        for (x, &wi) in xs.iter().zip(&w) {
            out.iter_mut().zip(x.data().iter()).for_each(|(o, v)| *o += wi * v);
        }
        let terms = xs.to_vec();
        let wt = weights.clone();
        let mut inputs = xs.to_vec();
        inputs.push(weights.clone());
        Ok(Tensor::from_op(
            first.shape().to_vec(),
            out,
            "weighted_sum",
            inputs,
            Box::new(move |g| {
                let w = wt.data();
                let mut grads: Vec<Option<Vec<f32>>> = terms
                    .iter()
                    .zip(w.iter())
                    .map(|(x, &wi)| x.requires_grad().then(|| g.iter().map(|v| v * wi).collect()))
                    .collect();
                let gw = terms
                    .iter()
                    .map(|x| {
                        x.data()
                            .iter()
                            .zip(g)
                            .map(|(&a, &b)| a as f64 * b as f64)
                            .sum::<f64>() as f32
                    })
                    .collect();
                grads.push(Some(gw));
                grads
            }),
        ))
    }
}

pub(crate) fn dims2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        &[a, b] => Ok((a, b)),
        s => Err(Error::shape(op, format!("expected 2-d tensor, got {s:?}"))),
    }
}

pub(crate) fn dims3(t: &Tensor, op: &'static str) -> Result<[usize; 3]> {
    match t.shape() {
        &[a, b, c] => Ok([a, b, c]),
        s => Err(Error::shape(op, format!("expected 3-d tensor, got {s:?}"))),
    }
}

pub(crate) fn dims4(t: &Tensor, op: &'static str) -> Result<[usize; 4]> {
    match t.shape() {
        &[a, b, c, d] => Ok([a, b, c, d]),
        s => Err(Error::shape(op, format!("expected 4-d tensor, got {s:?}"))),
    }
}
