use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub first_moment: Vec<T>,
    pub second_moment: Vec<T>,
    pub hyper: AdamHyper,
}

impl<T: Real> AdamState<T> {
    pub fn new(n_params: usize, hyper: AdamHyper) -> Self {
        AdamState {
            step: 0,
            first_moment: vec![T::zero(); n_params],
            second_moment: vec![T::zero(); n_params],
            hyper,
        }
    }
}

pub fn adam_step<T: Real>(params: &mut [T], grads: &[T], state: &mut AdamState<T>) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    state.step += 1;
    let h = state.hyper;
    let t = state.step as i32;
    let bc1 = 1.0 - h.beta1.powi(t);
    let bc2 = 1.0 - h.beta2.powi(t);
    let (b1, b2) = (T::from_f64(h.beta1), T::from_f64(h.beta2));
    let (one_b1, one_b2) = (T::from_f64(1.0 - h.beta1), T::from_f64(1.0 - h.beta2));
    // lr·m̂/(√v̂+ε) with the bias corrections folded into two scalars.
    let step_size = T::from_f64(h.lr / bc1);
    let inv_sqrt_bc2 = T::from_f64(1.0 / bc2.sqrt());
    let eps = T::from_f64(h.eps);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        *m = b1 * *m + one_b1 * g;
        *v = b2 * *v + one_b2 * g * g;
        *p -= step_size * *m / (v.sqrt() * inv_sqrt_bc2 + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = vec![0.3f64, -1.2, 4.0];
        let before = p.clone();
        let mut s = AdamState::new(3, AdamHyper::with_lr(0.1));
        for _ in 0..5 {
            adam_step(&mut p, &[0.0; 3], &mut s).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(s.step, 5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![0.0f64];
        let mut s = AdamState::new(1, AdamHyper::with_lr(0.1));
        adam_step(&mut p, &[1.0], &mut s).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-7);
    }

    #[test]
    fn minimizes_square() {
        let mut p = vec![1.0f64];
        let mut s = AdamState::new(1, AdamHyper::with_lr(0.1));
        let mut reached = None;
        for step in 1..=200 {
            let g = 2.0 * p[0];
            adam_step(&mut p, &[g], &mut s).unwrap();
            if p[0].abs() < 1e-3 {
                reached = Some(step);
                break;
            }
        }
        assert!(reached.is_some(), "theta = {}", p[0]);
        assert!(s.second_moment.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn shape_mismatch() {
        let mut s = AdamState::<f32>::new(2, AdamHyper::with_lr(0.1));
        assert!(adam_step(&mut [0.0f32; 2], &[0.0; 3], &mut s).is_err());
    }
}
