//! Central finite-difference verification of recorded gradient rules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{no_grad, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Norm-wise relative error `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` per input.
    pub per_input: Vec<f64>,
    /// The same ratio over every probed coordinate of every input at once,
    /// i.e. the error of the gradient as a single vector.
    pub overall: f64,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.per_input.iter().cloned().fold(0.0, f64::max)
    }
}

fn norm_rel(diff2: f64, an2: f64, nu2: f64) -> f64 {
    let scale = an2.sqrt().max(nu2.sqrt());
    if scale < 1e-12 {
        diff2.sqrt()
    } else {
        diff2.sqrt() / scale
    }
}

/// Compares analytic gradients of `f` with respect to `inputs` against central
/// differences (fourth-order stencil). The scalar probed is `Σ r_i·y_i` for a fixed random `r`, so
/// every output element contributes. `step` is scaled by `max(1, |x|)`; at
/// most `max_coords` coordinates are probed per input.
pub fn check_gradients<F>(
    f: F,
    inputs: &[Tensor],
    step: f32,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn() -> Result<Tensor>,
{
    if let Some(bad) = inputs.iter().find(|t| !t.is_leaf() || !t.requires_grad()) {
        return Err(Error::Contract(format!(
            "gradient check inputs must be differentiable leaves, got {bad:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = f()?;
    let r: Vec<f32> = (0..y.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let r_t = Tensor::new(y.shape(), r.clone())?;

    for t in inputs {
        t.zero_grad();
    }
    y.mul(&r_t)?.sum().backward()?;
    let analytic: Vec<Vec<f32>> = inputs
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let probe = || -> Result<f64> {
        let y = no_grad(&f)?;
        let d = y.data();
        Ok(d.iter().zip(&r).map(|(&a, &b)| a as f64 * b as f64).sum())
    };

    let mut per_input = Vec::with_capacity(inputs.len());
    let (mut all_diff2, mut all_an2, mut all_nu2) = (0f64, 0f64, 0f64);
    let mut coords_checked = 0;
    for (t, an) in inputs.iter().zip(&analytic) {
        let n = t.numel();
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            let mut c: Vec<usize> = (0..max_coords).map(|_| rng.random_range(0..n)).collect();
            c.sort_unstable();
            c.dedup();
            c
        };
        let (mut diff2, mut an2, mut nu2) = (0f64, 0f64, 0f64);
        for &i in &coords {
            let orig = t.data()[i];
            let h = step * orig.abs().max(1.0);
            // f evaluated at the f32-rounded point orig + k·h
            let at = |k: f32| -> Result<(f64, f64)> {
                let x = orig + k * h;
                t.data_mut()[i] = x;
                Ok((probe()?, x as f64 - orig as f64))
            };
            let (f1, d1) = at(1.0)?;
            let (fm1, dm1) = at(-1.0)?;
            let (f2, d2) = at(2.0)?;
            let (fm2, dm2) = at(-2.0)?;
            t.data_mut()[i] = orig;
            // fourth-order stencil: cancels the O(h²) truncation of the
            // two-point difference, which dominates at f32-friendly steps
            let c1 = (f1 - fm1) / (d1 - dm1);
            let c2 = (f2 - fm2) / (d2 - dm2);
            let numeric = (4.0 * c1 - c2) / 3.0;
            let a = an[i] as f64;
            diff2 += (a - numeric).powi(2);
            an2 += a * a;
            nu2 += numeric * numeric;
        }
        coords_checked += coords.len();
        all_diff2 += diff2;
        all_an2 += an2;
        all_nu2 += nu2;
        per_input.push(norm_rel(diff2, an2, nu2));
    }
    for t in inputs {
        t.zero_grad();
    }
    Ok(GradCheckReport {
        per_input,
        overall: norm_rel(all_diff2, all_an2, all_nu2),
        coords_checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(data: Vec<f32>) -> Tensor {
        Tensor::param(&[data.len()], data).unwrap()
    }

    #[test]
    fn flags_a_wrong_rule() {
        let x = param(vec![0.4, -0.9, 1.3]);
        // y = x² with a backward that is off by a factor of 1.5
        let bad = |t: &Tensor| {
            let xd = t.to_vec();
            let data = xd.iter().map(|v| v * v).collect();
            Tensor::from_op(
                t.shape().to_vec(),
                data,
                "bad_square",
                vec![t.clone()],
                Box::new(move |g| vec![Some(g.iter().zip(&xd).map(|(gi, v)| gi * 3.0 * v).collect())]),
            )
        };
        let report = check_gradients(|| Ok(bad(&x)), std::slice::from_ref(&x), 1e-2, 8, 0).unwrap();
        assert!(report.max_rel_error() > 0.2 && report.overall > 0.2);
        let good = check_gradients(|| x.mul(&x), std::slice::from_ref(&x), 1e-2, 8, 0).unwrap();
        assert!(good.overall < 1e-4, "{good:?}");
    }
}
