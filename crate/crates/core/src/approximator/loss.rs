use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::network::{forward_graph, ForwardVars, NetworkSpec, ParamSet};
use super::tensor::Tensor;
use super::ApproxError;
use crate::envs::ObservationStack;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoLossConfig {
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

impl Default for PpoLossConfig {
    fn default() -> Self {
        Self { clip: 0.2, value_coef: 0.5, entropy_coef: 0.01 }
    }
}

/// Scalar diagnostics reported next to a loss node.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub total: f64,
    /// Clipped surrogate objective (to be maximized).
    pub surrogate: f64,
    pub value_mse: f64,
    pub entropy: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
}

fn check_finite(name: &str, xs: &[f64]) -> Result<(), ApproxError> {
    if let Some(i) = xs.iter().position(|v| !v.is_finite()) {
        return Err(ApproxError::NonFinite(format!("{name}[{i}] = {}", xs[i])));
    }
    Ok(())
}

/// `−L_CLIP + c_v·MSE(V, returns) − c₂·entropy`, all means over the batch.
#[allow(clippy::too_many_arguments)]
pub fn ppo_loss(
    graph: &mut Graph,
    fw: ForwardVars,
    actions: &[usize],
    old_log_probs: &[f64],
    advantages: &[f64],
    returns: &[f64],
    cfg: &PpoLossConfig,
) -> Result<(Var, LossComponents), ApproxError> {
    let n = actions.len();
    if old_log_probs.len() != n || advantages.len() != n || returns.len() != n {
        return Err(ApproxError::Shape(format!(
            "batch columns differ: {n} actions, {} log-probs, {} advantages, {} returns",
            old_log_probs.len(),
            advantages.len(),
            returns.len()
        )));
    }
    check_finite("old_log_probs", old_log_probs)?;
    check_finite("advantages", advantages)?;
    check_finite("returns", returns)?;

    let logp = graph.log_softmax(fw.logits)?;
    let logp_a = graph.gather(logp, actions)?;
    let old = graph.constant(Tensor::from_vec(old_log_probs.to_vec()));
    let diff = graph.sub(logp_a, old)?;
    let ratio = graph.exp(diff)?;
    let adv = graph.constant(Tensor::from_vec(advantages.to_vec()));
    let surr1 = graph.mul(ratio, adv)?;
    let clipped = graph.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip)?;
    let surr2 = graph.mul(clipped, adv)?;
    let surr = graph.min(surr1, surr2)?;
    let surrogate = graph.mean(surr)?;

    let probs = graph.exp(logp)?;
    let plogp = graph.mul(probs, logp)?;
    let neg_entropy_rows = graph.sum_rows(plogp)?;
    let neg_entropy = graph.mean(neg_entropy_rows)?;

    let ret = graph.constant(Tensor::from_vec(returns.to_vec()));
    let err = graph.sub(fw.values, ret)?;
    let sq = graph.square(err)?;
    let mse = graph.mean(sq)?;

    // total = −surrogate + c_v·mse + c₂·(−entropy)
    let a = graph.scale(surrogate, -1.0)?;
    let b = graph.scale(mse, cfg.value_coef)?;
    let c = graph.scale(neg_entropy, cfg.entropy_coef)?;
    let ab = graph.add(a, b)?;
    let total = graph.add(ab, c)?;

    let ratios = graph.value(ratio)?.data();
    let clip_fraction = ratios.iter().filter(|r| (**r - 1.0).abs() > cfg.clip).count() as f64 / n as f64;
    let mean_ratio = ratios.iter().sum::<f64>() / n as f64;
    let components = LossComponents {
        total: graph.value(total)?.data()[0],
        surrogate: graph.value(surrogate)?.data()[0],
        value_mse: graph.value(mse)?.data()[0],
        entropy: -graph.value(neg_entropy)?.data()[0],
        mean_ratio,
        clip_fraction,
    };
    if !components.total.is_finite() {
        return Err(ApproxError::NonFinite(format!("ppo loss evaluated to {}", components.total)));
    }
    Ok((total, components))
}

/// Mean squared error of the value head against `targets`.
pub fn value_mse(graph: &mut Graph, fw: ForwardVars, targets: &[f64]) -> Result<Var, ApproxError> {
    check_finite("targets", targets)?;
    let t = graph.constant(Tensor::from_vec(targets.to_vec()));
    let err = graph.sub(fw.values, t)?;
    let sq = graph.square(err)?;
    graph.mean(sq)
}

/// Mean negative log-likelihood of hard `labels` under the policy head.
pub fn cross_entropy(graph: &mut Graph, fw: ForwardVars, labels: &[usize]) -> Result<Var, ApproxError> {
    let logp = graph.log_softmax(fw.logits)?;
    let picked = graph.gather(logp, labels)?;
    let mean = graph.mean(picked)?;
    graph.scale(mean, -1.0)
}

/// Runs a forward pass over `obs`, builds a loss with `build`, and returns
/// the loss value together with gradients shaped like `params`.
pub fn loss_and_gradients<T>(
    spec: &NetworkSpec,
    params: &ParamSet,
    obs: &[&ObservationStack],
    build: impl FnOnce(&mut Graph, ForwardVars) -> Result<(Var, T), ApproxError>,
) -> Result<(f64, ParamSet, T), ApproxError> {
    let mut graph = Graph::new();
    let fw = forward_graph(&mut graph, spec, params, obs)?;
    let (loss, extra) = build(&mut graph, fw)?;
    let value = graph.value(loss)?.data()[0];
    let tensors = graph.backward(loss)?;
    Ok((value, ParamSet { tensors, version: params.version }, extra))
}
