use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::num::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub m: Vec<S>,
    pub v: Vec<S>,
}

impl<S: Scalar> AdamState<S> {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![S::zero(); n],
            v: vec![S::zero(); n],
        }
    }
}

/// One AdamW update at step `t >= 1`. Weight decay is applied to `theta`
/// directly, apart from the moment-normalised gradient step.
pub fn adamw_step<S: Scalar>(
    theta: &mut [S],
    grad: &[S],
    state: &mut AdamState<S>,
    hp: &AdamWParams,
    t: u64,
) -> Result<(), TrainError> {
    let n = theta.len();
    if grad.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(TrainError::Shape(format!(
            "adamw: params {n}, grad {}, state {}/{}",
            grad.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    if t == 0 {
        return Err(TrainError::Config("adamw step counter starts at 1".into()));
    }
    let (b1, b2) = (S::of(hp.beta1), S::of(hp.beta2));
    let lr = S::of(hp.lr);
    let decay = S::one() - S::of(hp.lr * hp.weight_decay);
    let c1 = S::one() / (S::one() - S::of(hp.beta1.powi(t as i32)));
    let c2 = S::one() / (S::one() - S::of(hp.beta2.powi(t as i32)));
    let eps = S::of(hp.eps);
    for i in 0..n {
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + (S::one() - b1) * g;
        state.v[i] = b2 * state.v[i] + (S::one() - b2) * g * g;
        let mhat = state.m[i] * c1;
        let vhat = state.v[i] * c2;
        theta[i] = theta[i] * decay - lr * mhat / (vhat.sqrt() + eps);
    }
    Ok(())
}

/// AdamW over a fixed list of parameter slots; a slot's state is created
/// the first time it receives a gradient.
#[derive(Debug, Clone)]
pub struct AdamW<S> {
    pub hp: AdamWParams,
    t: u64,
    states: Vec<Option<AdamState<S>>>,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(hp: AdamWParams, slots: usize) -> Self {
        Self {
            hp,
            t: 0,
            states: vec![None; slots],
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Advances the step counter; call once per optimizer step before
    /// [`AdamW::update`].
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn update(&mut self, slot: usize, theta: &mut [S], grad: &[S]) -> Result<(), TrainError> {
        let state = self.states[slot].get_or_insert_with(|| AdamState::zeros(theta.len()));
        adamw_step(theta, grad, state, &self.hp, self.t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_no_decay_is_identity() {
        let mut th = vec![1.0f64, -2.0];
        let mut st = AdamState::zeros(2);
        let hp = AdamWParams { weight_decay: 0.0, ..Default::default() };
        adamw_step(&mut th, &[0.0, 0.0], &mut st, &hp, 1).unwrap();
        assert_eq!(th, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_is_signed_lr() {
        let hp = AdamWParams { lr: 0.1, weight_decay: 0.0, ..Default::default() };
        for g in [3.0f64, -0.02] {
            let mut th = vec![0.0];
            let mut st = AdamState::zeros(1);
            adamw_step(&mut th, &[g], &mut st, &hp, 1).unwrap();
            let want = -0.1 * g / (g.abs() + 1e-8);
            assert!((th[0] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn decay_is_decoupled() {
        let hp = AdamWParams { lr: 0.1, weight_decay: 0.5, ..Default::default() };
        let mut th = vec![2.0f64];
        let mut st = AdamState::zeros(1);
        adamw_step(&mut th, &[0.0], &mut st, &hp, 1).unwrap();
        assert!((th[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_is_identity() {
        let hp = AdamWParams { lr: 0.0, ..Default::default() };
        let mut th = vec![0.3f64, 0.7];
        let mut st = AdamState::zeros(2);
        for t in 1..5 {
            adamw_step(&mut th, &[1.0, -1.0], &mut st, &hp, t).unwrap();
        }
        assert_eq!(th, vec![0.3, 0.7]);
    }

    #[test]
    fn shape_mismatch() {
        let mut st = AdamState::<f64>::zeros(2);
        assert!(matches!(
            adamw_step(&mut [0.0], &[0.0], &mut st, &AdamWParams::default(), 1),
            Err(TrainError::Shape(_))
        ));
    }
}
