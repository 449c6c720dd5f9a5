use serde::{Deserialize, Serialize};

use super::network::ParamSet;
use super::tensor::Tensor;
use super::ApproxError;

/// Bias-corrected adaptive moment estimates (Adam).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(params: &ParamSet, learning_rate: f64) -> Self {
        let zeros: Vec<Tensor> = params.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, step: 0, first: zeros.clone(), second: zeros }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Global L2 norm over every gradient element.
pub fn gradient_norm(grads: &ParamSet) -> f64 {
    grads.tensors.iter().flat_map(|t| t.data()).map(|v| v * v).sum::<f64>().sqrt()
}

/// Rescales `grads` in place so their global norm is at most `max_norm`.
pub fn clip_gradient_norm(grads: &mut ParamSet, max_norm: f64) -> f64 {
    let norm = gradient_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for t in &mut grads.tensors {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

pub fn optimizer_step(params: &mut ParamSet, grads: &ParamSet, state: &mut OptimizerState) -> Result<(), ApproxError> {
    if !params.same_layout(grads) || params.tensors.len() != state.first.len() {
        return Err(ApproxError::Shape("gradient layout does not match parameters".into()));
    }
    for (p, m) in params.tensors.iter().zip(&state.first) {
        if p.shape() != m.shape() {
            return Err(ApproxError::Shape("optimizer state layout does not match parameters".into()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((p, g), (m, v)) in
        params.tensors.iter_mut().zip(&grads.tensors).zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        let pd = p.data_mut();
        let gd = g.data();
        let md = m.data_mut();
        let vd = v.data_mut();
        for i in 0..pd.len() {
            md[i] = b1 * md[i] + (1.0 - b1) * gd[i];
            vd[i] = b2 * vd[i] + (1.0 - b2) * gd[i] * gd[i];
            let mh = md[i] / c1;
            let vh = vd[i] / c2;
            pd[i] -= state.learning_rate * mh / (vh.sqrt() + state.epsilon);
        }
    }
    params.version += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(vals: &[f64]) -> ParamSet {
        ParamSet { tensors: vec![Tensor::from_vec(vals.to_vec())], version: 0 }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = params(&[0.3, -1.0, 2.0]);
        let before = p.clone();
        let mut st = OptimizerState::new(&p, 3e-4);
        optimizer_step(&mut p, &params(&[0.0, 0.0, 0.0]), &mut st).unwrap();
        assert_eq!(p.tensors, before.tensors);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let lr = 3e-4;
        let g = [0.5, -2.0, 1e-3];
        let mut p = params(&[0.0, 0.0, 0.0]);
        let mut st = OptimizerState::new(&p, lr);
        optimizer_step(&mut p, &params(&g), &mut st).unwrap();
        for (x, gi) in p.tensors[0].data().iter().zip(g) {
            let want = -lr * gi / (gi.abs() + 1e-8);
            assert!((x - want).abs() < 1e-15, "{x} vs {want}");
        }
    }

    #[test]
    fn identical_states_step_identically() {
        let mut a = params(&[1.0, 2.0]);
        let mut b = a.clone();
        let mut sa = OptimizerState::new(&a, 1e-2);
        let mut sb = sa.clone();
        for _ in 0..2 {
            optimizer_step(&mut a, &params(&[0.1, -0.7]), &mut sa).unwrap();
            optimizer_step(&mut b, &params(&[0.1, -0.7]), &mut sb).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn layout_mismatch_is_an_error() {
        let mut p = params(&[1.0, 2.0]);
        let mut st = OptimizerState::new(&p, 1e-3);
        assert!(optimizer_step(&mut p, &params(&[1.0]), &mut st).is_err());
    }
}
