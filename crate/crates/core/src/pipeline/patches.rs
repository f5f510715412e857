//! Overlapping square patches and their averaging inverse.

use crate::error::{Error, Result};

pub const PATCH_SIZE: usize = 128;
pub const DEFAULT_STRIDE: usize = 64;

/// Patch origins covering a `height × width` source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    pub height: usize,
    pub width: usize,
    pub size: usize,
    pub stride: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

/// `0, stride, 2·stride, …` with a final origin clamped to `n − size`.
pub fn axis_origins(n: usize, size: usize, stride: usize) -> Vec<usize> {
    let last = n - size;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if *out.last().unwrap() != last {
        out.push(last);
    }
    out
}

impl PatchGrid {
    /// The source must already be at least `size` on both sides.
    pub fn new(height: usize, width: usize, size: usize, stride: usize) -> Result<Self> {
        if size == 0 || stride == 0 || stride > size {
            return Err(Error::Param(format!(
                "stride must be in 1..={size} for patch size {size}, got {stride}"
            )));
        }
        if height < size || width < size {
            return Err(Error::Param(format!(
                "{height}x{width} source is smaller than the {size}px patch; pad first"
            )));
        }
        Ok(PatchGrid {
            height,
            width,
            size,
            stride,
            rows: axis_origins(height, size, stride),
            cols: axis_origins(width, size, stride),
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len() * self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(row, col)` origins in row-major grid order.
    pub fn origins(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows.iter().flat_map(move |&r| self.cols.iter().map(move |&c| (r, c)))
    }

    /// How many patches cover each source pixel.
    pub fn coverage(&self) -> Vec<u32> {
        let mut cov = vec![0u32; self.height * self.width];
        for (r, c) in self.origins() {
            for i in r..r + self.size {
                for v in &mut cov[i * self.width + c..i * self.width + c + self.size] {
                    *v += 1;
                }
            }
        }
        cov
    }
}

/// Copies a `size × size` window at `(row, col)` out of `channels` planes.
pub fn crop(
    data: &[f32],
    channels: usize,
    height: usize,
    width: usize,
    row: usize,
    col: usize,
    size: usize,
) -> Vec<f32> {
    let mut out = Vec::with_capacity(channels * size * size);
    for c in 0..channels {
        let plane = &data[c * height * width..(c + 1) * height * width];
        for i in row..row + size {
            out.extend_from_slice(&plane[i * width + col..i * width + col + size]);
        }
    }
    out
}

/// One patch per grid origin, each `channels × size × size`.
pub fn extract_patches(data: &[f32], channels: usize, grid: &PatchGrid) -> Result<Vec<Vec<f32>>> {
    if data.len() != channels * grid.height * grid.width {
        return Err(Error::Data(format!(
            "{} values for a {channels}x{}x{} source",
            data.len(),
            grid.height,
            grid.width
        )));
    }
    Ok(grid
        .origins()
        .map(|(r, c)| crop(data, channels, grid.height, grid.width, r, c, grid.size))
        .collect())
}

/// Per-pixel mean of every covering patch.
pub fn stitch(patches: &[Vec<f32>], channels: usize, grid: &PatchGrid) -> Result<Vec<f32>> {
    if patches.len() != grid.len() {
        return Err(Error::Data(format!(
            "{} patches for a grid of {}",
            patches.len(),
            grid.len()
        )));
    }
    let (h, w, s) = (grid.height, grid.width, grid.size);
    let mut sum = vec![0.0f64; channels * h * w];
    for (p, (r, c)) in patches.iter().zip(grid.origins()) {
        if p.len() != channels * s * s {
            return Err(Error::Data(format!("patch holds {} values, expected {}", p.len(), channels * s * s)));
        }
        for ch in 0..channels {
            for i in 0..s {
                let src = &p[(ch * s + i) * s..(ch * s + i + 1) * s];
                let dst = (ch * h + r + i) * w + c;
                for (d, &v) in sum[dst..dst + s].iter_mut().zip(src) {
                    *d += v as f64;
                }
            }
        }
    }
    let cov = grid.coverage();
    Ok(sum
        .iter()
        .enumerate()
        .map(|(i, &v)| (v / cov[i % (h * w)] as f64) as f32)
        .collect())
}
