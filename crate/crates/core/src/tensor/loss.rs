//! Fused segmentation losses on raw logits.

use super::ops::sigmoid_f32;
use super::Tensor;
use crate::error::{Error, Result};

/// Additive smoothing in the Dice ratio; keeps empty targets well defined.
pub const DICE_SMOOTH: f32 = 1.0;

fn check_target(op: &'static str, logits: &Tensor, target: &Tensor) -> Result<()> {
    if logits.shape() != target.shape() {
        return Err(Error::shape(
            op,
            format!("logits {:?} vs target {:?}", logits.shape(), target.shape()),
        ));
    }
    Ok(())
}

impl Tensor {
    /// Mean binary cross-entropy between `sigmoid(self)` and `target`,
    /// computed stably from logits.
    pub fn bce_with_logits(&self, target: &Tensor) -> Result<Tensor> {
        check_target("bce_with_logits", self, target)?;
        let n = self.numel();
        let total: f64 = {
            let x = self.data();
            let t = target.data();
            x.iter()
                .zip(t.iter())
                .map(|(&x, &t)| {
                    (x.max(0.0) - x * t) as f64 + ((-x.abs()).exp() as f64).ln_1p()
                })
                .sum()
        };
        let (x_t, t_t) = (self.clone(), target.clone());
        Ok(Tensor::from_op(
            vec![1],
            vec![(total / n as f64) as f32],
            "bce_with_logits",
            vec![self.clone(), target.clone()],
            Box::new(move |g| {
                let scale = g[0] / n as f32;
                let x = x_t.data();
                let t = t_t.data();
                let gx = x
                    .iter()
                    .zip(t.iter())
                    .map(|(&x, &t)| (sigmoid_f32(x) - t) * scale)
                    .collect();
                vec![Some(gx), None]
            }),
        ))
    }

    /// Soft Dice loss `1 − (2Σpt + s)/(Σp + Σt + s)` with `p = sigmoid(self)`.
    pub fn dice_loss(&self, target: &Tensor) -> Result<Tensor> {
        check_target("dice_loss", self, target)?;
        let p: Vec<f32> = self.data().iter().map(|&x| sigmoid_f32(x)).collect();
        let (inter, denom) = {
            let t = target.data();
            let inter: f64 = p.iter().zip(t.iter()).map(|(&p, &t)| (p * t) as f64).sum();
            let sp: f64 = p.iter().map(|&v| v as f64).sum();
            let st: f64 = t.iter().map(|&v| v as f64).sum();
            (inter, sp + st + DICE_SMOOTH as f64)
        };
        let numer = 2.0 * inter + DICE_SMOOTH as f64;
        let loss = 1.0 - numer / denom;
        let t_t = target.clone();
        Ok(Tensor::from_op(
            vec![1],
            vec![loss as f32],
            "dice_loss",
            vec![self.clone(), target.clone()],
            Box::new(move |g| {
                let t = t_t.data();
                let d2 = denom * denom;
                let gx = p
                    .iter()
                    .zip(t.iter())
                    .map(|(&p, &t)| {
                        let dp = -(2.0 * t as f64 * denom - numer) / d2;
                        (dp * (p * (1.0 - p)) as f64) as f32 * g[0]
                    })
                    .collect();
                vec![Some(gx), None]
            }),
        ))
    }
}
