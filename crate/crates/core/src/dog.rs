//! Multiscale difference-of-Gaussians feature bank.
//!
//! A [`DoGBank`] holds `N` band-pass filters whose sigma pairs follow a
//! geometric schedule, `σ₁,ᵢ = σ₀·2^(i/N)` and `σ₂,ᵢ = σ₁,ᵢ·2^(1/N)` for
//! `i = 1..N`, plus one learnable weight per band. Applied to a feature map
//! it produces `Σᵢ wᵢ·(G(x; σ₁,ᵢ) − G(x; σ₂,ᵢ))`.
//!
//! Blurs are per-channel, reflect-padded and use kernels normalised to sum
//! to one, so every band annihilates constant maps exactly.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sampled, normalised 2-D Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    size: usize,
    sigma: f64,
    weights: Vec<f32>,
    taps: Vec<f32>,
}

impl GaussianKernel {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `size×size` weights, row-major.
    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn weight(&self, row: usize, col: usize) -> f32 {
        self.weights[row * self.size + col]
    }

    /// Normalised 1-D factor; `weights = taps ⊗ taps`.
    pub fn taps(&self) -> &[f32] {
        &self.taps
    }
}

/// Samples `K(x, y) = exp(−((x−i)² + (y−j)²)/2σ²) / 2πσ²` at integer offsets
/// from the centre of a `k×k` grid and renormalises the samples to sum to 1.
pub fn gaussian_kernel(sigma: f64, k: usize) -> Result<GaussianKernel> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Param(format!("gaussian sigma must be positive, got {sigma}")));
    }
    if k == 0 || k.is_multiple_of(2) {
        return Err(Error::Param(format!("gaussian kernel size must be odd, got {k}")));
    }
    let r = (k / 2) as i64;
    let two_s2 = 2.0 * sigma * sigma;
    let norm = 1.0 / (std::f64::consts::PI * two_s2);
    let mut raw = Vec::with_capacity(k * k);
    for dy in -r..=r {
        for dx in -r..=r {
            raw.push(norm * (-((dx * dx + dy * dy) as f64) / two_s2).exp());
        }
    }
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|v| (v / total) as f32).collect();

    let raw1: Vec<f64> = (-r..=r).map(|d| (-((d * d) as f64) / two_s2).exp()).collect();
    let total1: f64 = raw1.iter().sum();
    let taps = raw1.iter().map(|v| (v / total1) as f32).collect();
    Ok(GaussianKernel {
        size: k,
        sigma,
        weights,
        taps,
    })
}

/// Per-channel Gaussian blur of a `[B×C×H×W]` map with reflect padding;
/// spatial size is preserved.
pub fn gaussian_blur(x: &Tensor, kernel: &GaussianKernel) -> Result<Tensor> {
    x.reflect_filter_1d(&kernel.taps, false)?
        .reflect_filter_1d(&kernel.taps, true)
}

/// `G(x; σ₁) − G(x; σ₂)` with both blurs sharing kernel size `k`.
pub fn dog(x: &Tensor, sigma1: f64, sigma2: f64, k: usize) -> Result<Tensor> {
    let narrow = gaussian_blur(x, &gaussian_kernel(sigma1, k)?)?;
    let wide = gaussian_blur(x, &gaussian_kernel(sigma2, k)?)?;
    narrow.sub(&wide)
}

/// The `N` sigma pairs `(σ₁,ᵢ, σ₂,ᵢ)`, `i = 1..N`.
///
/// `σ₂,ᵢ` is evaluated as `σ₀·2^((i+1)/N)` so that consecutive bands share
/// their boundary bit-for-bit.
pub fn sigma_schedule(sigma0: f64, n: usize) -> Result<Vec<(f64, f64)>> {
    if !(sigma0 > 0.0) || !sigma0.is_finite() {
        return Err(Error::Param(format!("base sigma must be positive, got {sigma0}")));
    }
    if n == 0 {
        return Err(Error::Param("number of DoG scales must be at least 1".into()));
    }
    let level = |i: usize| sigma0 * 2f64.powf(i as f64 / n as f64);
    Ok((1..=n).map(|i| (level(i), level(i + 1))).collect())
}

/// Kernel size used for a band: `2·ceil(3σ₂)+1`, capped to the largest odd
/// size that fits the feature map.
pub fn band_kernel_size(sigma2: f64, height: usize, width: usize) -> usize {
    let k = 2 * (3.0 * sigma2).ceil() as usize + 1;
    let m = height.min(width).max(1);
    let cap = if m % 2 == 1 { m } else { m - 1 };
    k.min(cap)
}

/// A sigma schedule with one learnable weight per band.
#[derive(Debug, Clone)]
pub struct DoGBank {
    sigma0: f64,
    pairs: Vec<(f64, f64)>,
    weights: Tensor,
}

impl DoGBank {
    /// Bank with weights initialised to `1/N`.
    pub fn new(scales: usize, sigma0: f64) -> Result<Self> {
        let init = vec![1.0 / scales.max(1) as f32; scales.max(1)];
        Self::with_weights(sigma0, init)
    }

    pub fn with_weights(sigma0: f64, weights: Vec<f32>) -> Result<Self> {
        let pairs = sigma_schedule(sigma0, weights.len())?;
        let weights = Tensor::param(&[pairs.len()], weights)?;
        Ok(DoGBank {
            sigma0,
            pairs,
            weights,
        })
    }

    pub fn scales(&self) -> usize {
        self.pairs.len()
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    pub fn pairs(&self) -> &[(f64, f64)] {
        &self.pairs
    }

    /// The learnable weight leaf (shape `[N]`).
    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    /// Individual band responses `DoG(x; σ₁,ᵢ, σ₂,ᵢ)`.
    pub fn responses(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let (h, w) = match x.shape() {
            &[_, _, h, w] => (h, w),
            s => {
                return Err(Error::shape(
                    "f_dog",
                    format!("expected [B, C, H, W] feature map, got {s:?}"),
                ))
            }
        };
        self.pairs
            .iter()
            .map(|&(s1, s2)| dog(x, s1, s2, band_kernel_size(s2, h, w)))
            .collect()
    }

    /// `F_DoG(x) = Σᵢ wᵢ·DoG(x; σ₁,ᵢ, σ₂,ᵢ)`.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        Tensor::weighted_sum(&self.responses(x)?, &self.weights)
    }
}

/// Free-function form of [`DoGBank::apply`].
pub fn f_dog(x: &Tensor, bank: &DoGBank) -> Result<Tensor> {
    bank.apply(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn impulse(size: usize) -> Tensor {
        let mut d = vec![0.0; size * size];
        d[(size / 2) * size + size / 2] = 1.0;
        Tensor::new(&[1, 1, size, size], d).unwrap()
    }

    #[test]
    fn kernel_sigma_one_size_three() {
        // exp(−d²/2) at d² = 0, 1, 2 normalised by 1 + 4e^-0.5 + 4e^-1
        let k = gaussian_kernel(1.0, 3).unwrap();
        let z = 1.0 + 4.0 * (-0.5f64).exp() + 4.0 * (-1.0f64).exp();
        assert!((z - 4.8976).abs() < 1e-4);
        assert!((k.weight(1, 1) as f64 - 1.0 / z).abs() < 1e-6);
        assert!((k.weight(0, 1) as f64 - (-0.5f64).exp() / z).abs() < 1e-6);
        assert!((k.weight(0, 0) as f64 - (-1.0f64).exp() / z).abs() < 1e-6);
        assert!((k.weight(1, 1) - 0.2042).abs() < 1e-4);
        assert!((k.weight(1, 0) - 0.1238).abs() < 1e-4);
        assert!((k.weight(2, 2) - 0.0751).abs() < 1e-4);
    }

    #[test]
    fn kernel_size_one_is_unit() {
        for s in [0.1, 1.0, 7.5] {
            assert_eq!(gaussian_kernel(s, 1).unwrap().weights(), &[1.0]);
        }
    }

    #[test]
    fn kernel_parameter_errors() {
        assert!(matches!(gaussian_kernel(1.0, 4), Err(Error::Param(_))));
        assert!(matches!(gaussian_kernel(0.0, 3), Err(Error::Param(_))));
        assert!(matches!(gaussian_kernel(-1.0, 3), Err(Error::Param(_))));
    }

    #[test]
    fn kernel_symmetries() {
        let k = gaussian_kernel(1.7, 9).unwrap();
        let n = k.size();
        let total: f64 = k.weights().iter().map(|&v| v as f64).sum();
        assert!((total - 1.0).abs() < 1e-6);
        let c = k.weight(n / 2, n / 2);
        for r in 0..n {
            for q in 0..n {
                let v = k.weight(r, q);
                assert_eq!(v, k.weight(n - 1 - r, q));
                assert_eq!(v, k.weight(r, n - 1 - q));
                assert_eq!(v, k.weight(q, r));
                assert!(v <= c);
            }
        }
    }

    #[test]
    fn impulse_response_matches_kernel() {
        let k = gaussian_kernel(1.0, 3).unwrap();
        let y = gaussian_blur(&impulse(7), &k).unwrap().to_vec();
        for r in 0..3 {
            for q in 0..3 {
                let got = y[(2 + r) * 7 + 2 + q];
                assert!((got - k.weight(r, q)).abs() < 1e-6, "({r},{q}) {got}");
            }
        }
        let outside: f32 = y.iter().sum::<f32>() - k.weights().iter().sum::<f32>();
        assert!(outside.abs() < 1e-6);
    }

    #[test]
    fn schedule_examples() {
        let s = sigma_schedule(1.0, 2).unwrap();
        assert!((s[0].0 - 2f64.sqrt()).abs() < 1e-12 && (s[0].1 - 2.0).abs() < 1e-12);
        assert!((s[1].0 - 2.0).abs() < 1e-12 && (s[1].1 - 8f64.sqrt()).abs() < 1e-12);
        assert_eq!(sigma_schedule(1.0, 1).unwrap(), vec![(2.0, 4.0)]);
        assert!(sigma_schedule(0.0, 2).is_err());
        assert!(sigma_schedule(1.0, 0).is_err());
    }

    #[test]
    fn band_kernel_size_caps_to_odd_map_size() {
        assert_eq!(band_kernel_size(1.0, 64, 64), 7);
        assert_eq!(band_kernel_size(2.016, 64, 64), 15);
        assert_eq!(band_kernel_size(2.016, 8, 12), 7);
        assert_eq!(band_kernel_size(2.016, 1, 1), 1);
    }

    #[test]
    fn dog_of_identical_sigmas_is_zero() {
        let x = Tensor::new(&[1, 2, 5, 6], (0..60).map(|v| (v as f32 * 0.37).sin()).collect()).unwrap();
        assert!(dog(&x, 1.3, 1.3, 5).unwrap().to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dog_step_edge_peaks_at_edge_and_changes_sign() {
        let mut d = vec![0.0f32; 64];
        for r in 0..8 {
            for c in 4..8 {
                d[r * 8 + c] = 1.0;
            }
        }
        let x = Tensor::new(&[1, 1, 8, 8], d).unwrap();
        let y = dog(&x, 0.8, 1.0, 5).unwrap().to_vec();
        let row: Vec<f32> = y[3 * 8..4 * 8].to_vec();
        // dark side goes negative next to the edge, bright side positive
        assert!(row[3] < 0.0 && row[4] > 0.0, "{row:?}");
        let peak = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .unwrap()
            .0;
        assert!(peak == 3 || peak == 4, "{row:?}");
        // wider bands keep the zero crossing on the edge
        let wide = dog(&x, 1.0, 2.0, 7).unwrap().to_vec();
        assert!(wide[3 * 8 + 3] < 0.0 && wide[3 * 8 + 4] > 0.0);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let bank = DoGBank::with_weights(0.8, vec![0.0; 3]).unwrap();
        let x = Tensor::new(&[1, 1, 6, 6], (0..36).map(|v| v as f32).collect()).unwrap();
        assert!(bank.apply(&x).unwrap().to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_band_unit_weight_equals_dog() {
        let bank = DoGBank::with_weights(1.0, vec![1.0]).unwrap();
        let x = Tensor::new(&[1, 1, 9, 9], (0..81).map(|v| ((v * 7) % 11) as f32).collect()).unwrap();
        let (s1, s2) = bank.pairs()[0];
        let direct = dog(&x, s1, s2, band_kernel_size(s2, 9, 9)).unwrap();
        assert_eq!(bank.apply(&x).unwrap().to_vec(), direct.to_vec());
    }
}
