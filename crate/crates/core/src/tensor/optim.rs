use super::Tensor;
use crate::error::{Error, Result};

/// First and second moment estimates of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl AdamState {
    pub fn zeros(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// Adam with bias correction. `step` counts completed updates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub step: u64,
    pub states: Vec<AdamState>,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            states: Vec::new(),
        }
    }

    /// Applies one update to every parameter from its accumulated gradient.
    /// Parameters without a gradient are treated as having a zero gradient.
    pub fn step(&mut self, params: &[Tensor]) -> Result<()> {
        if self.states.is_empty() {
            self.states = params.iter().map(|p| AdamState::zeros(p.numel())).collect();
        }
        if self.states.len() != params.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} states for {} parameters", self.states.len(), params.len()),
            ));
        }
        self.step += 1;
        for (p, state) in params.iter().zip(self.states.iter_mut()) {
            let grad = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
            let mut data = p.data_mut();
            adam_update(
                &mut data, &grad, state, self.step, self.lr, self.beta1, self.beta2, self.eps,
            )?;
        }
        Ok(())
    }
}

/// One bias-corrected Adam update of `params` in place. `t` is the 1-based
/// step number.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    params: &mut [f32],
    grads: &[f32],
    state: &mut AdamState,
    t: u64,
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::shape(
            "adam_step",
            format!(
                "params {n}, grads {}, m {}, v {}",
                grads.len(),
                state.m.len(),
                state.v.len()
            ),
        ));
    }
    let bc1 = 1.0 - (beta1 as f64).powi(t as i32);
    let bc2 = 1.0 - (beta2 as f64).powi(t as i32);
    for i in 0..n {
        let g = grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] as f64 / bc1;
        let v_hat = state.v[i] as f64 / bc2;
        params[i] -= (lr as f64 * m_hat / (v_hat.sqrt() + eps as f64)) as f32;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![0.5, -1.0];
        let mut s = AdamState::zeros(2);
        adam_update(&mut p, &[0.0, 0.0], &mut s, 1, 0.1, 0.9, 0.999, 1e-8).unwrap();
        assert_eq!(p, vec![0.5, -1.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = 1, v̂ = 1 after bias correction, so Δw = −lr·1/(1+eps)
        let mut p = vec![0.0];
        let mut s = AdamState::zeros(1);
        adam_update(&mut p, &[1.0], &mut s, 1, 0.1, 0.9, 0.999, 1e-8).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-6, "{}", p[0]);
    }

    #[test]
    fn quadratic_loss_decreases() {
        let w = Tensor::param(&[1], vec![2.0]).unwrap();
        let mut opt = Adam::new(0.1);
        let mut losses = vec![];
        for _ in 0..3 {
            w.zero_grad();
            let loss = w.mul(&w).unwrap().sum();
            losses.push(loss.item());
            loss.backward().unwrap();
            opt.step(std::slice::from_ref(&w)).unwrap();
        }
        assert!(losses[1] < losses[0] && losses[2] < losses[1], "{losses:?}");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = vec![0.0; 3];
        let mut s = AdamState::zeros(2);
        assert!(adam_update(&mut p, &[0.0; 3], &mut s, 1, 0.1, 0.9, 0.999, 1e-8).is_err());
    }
}
