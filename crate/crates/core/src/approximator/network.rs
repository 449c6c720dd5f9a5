use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{log_softmax_in_place, Graph, Var};
use super::tensor::Tensor;
use super::ApproxError;
use crate::envs::ObservationStack;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv { filters: usize, kernel: usize, stride: usize, activation: Activation },
    Dense { units: usize, activation: Activation },
}

/// Shared actor-critic trunk followed by a policy head (`actions` logits)
/// and a scalar value head.
///
/// Parameters are laid out as `[weight, bias]` per trunk layer, then the
/// policy head, then the value head. Convolution weights are `[F, K, K, C]`
/// and dense weights `[out, in]`; activations flow channel-last.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub layers: Vec<LayerSpec>,
    pub actions: usize,
}

impl NetworkSpec {
    /// Two convolutions and one hidden dense layer, LeNet-scale.
    pub fn default_for(channels: usize, height: usize, width: usize, actions: usize) -> Self {
        Self {
            channels,
            height,
            width,
            layers: vec![
                LayerSpec::Conv { filters: 8, kernel: 3, stride: 1, activation: Activation::Relu },
                LayerSpec::Conv { filters: 16, kernel: 3, stride: 2, activation: Activation::Relu },
                LayerSpec::Dense { units: 64, activation: Activation::Relu },
            ],
            actions,
        }
    }

    /// Shapes of every parameter tensor in canonical order.
    pub fn param_shapes(&self) -> Result<Vec<Vec<usize>>, ApproxError> {
        if self.channels == 0 || self.height == 0 || self.width == 0 || self.actions == 0 {
            return Err(ApproxError::Spec("input extents and action count must be positive".into()));
        }
        let mut shapes = Vec::new();
        // (h, w, c) while spatial, then Some(flat) once a dense layer ran.
        let (mut h, mut w, mut c) = (self.height, self.width, self.channels);
        let mut flat: Option<usize> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv { filters, kernel, stride, .. } => {
                    if flat.is_some() {
                        return Err(ApproxError::Spec(format!("layer {i}: convolution after a dense layer")));
                    }
                    if filters == 0 || kernel == 0 || stride == 0 || kernel > h || kernel > w {
                        return Err(ApproxError::Spec(format!(
                            "layer {i}: conv {filters}x{kernel}/{stride} does not fit a {h}x{w} input"
                        )));
                    }
                    shapes.push(vec![filters, kernel, kernel, c]);
                    shapes.push(vec![filters]);
                    h = (h - kernel) / stride + 1;
                    w = (w - kernel) / stride + 1;
                    c = filters;
                }
                LayerSpec::Dense { units, .. } => {
                    if units == 0 {
                        return Err(ApproxError::Spec(format!("layer {i}: dense layer with zero units")));
                    }
                    let inputs = flat.unwrap_or(h * w * c);
                    shapes.push(vec![units, inputs]);
                    shapes.push(vec![units]);
                    flat = Some(units);
                }
            }
        }
        let features = flat.unwrap_or(h * w * c);
        shapes.push(vec![self.actions, features]);
        shapes.push(vec![self.actions]);
        shapes.push(vec![1, features]);
        shapes.push(vec![1]);
        Ok(shapes)
    }

    pub fn param_count(&self) -> Result<usize, ApproxError> {
        Ok(self.param_shapes()?.iter().map(|s| s.iter().product::<usize>()).sum())
    }

    fn check_input(&self, obs: &ObservationStack) -> Result<(), ApproxError> {
        let got = (obs.channels(), obs.height(), obs.width());
        let want = (self.channels, self.height, self.width);
        if got != want {
            return Err(ApproxError::Shape(format!(
                "observation is {}x{}x{}, network expects {}x{}x{}",
                got.0, got.1, got.2, want.0, want.1, want.2
            )));
        }
        Ok(())
    }
}

/// Ordered parameter tensors of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub tensors: Vec<Tensor>,
    pub version: u64,
}

impl ParamSet {
    pub fn zeros_like(spec: &NetworkSpec) -> Result<Self, ApproxError> {
        let tensors = spec.param_shapes()?.iter().map(|s| Tensor::zeros(s)).collect();
        Ok(Self { tensors, version: 0 })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn element_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.shape() == b.shape())
    }

    pub fn matches(&self, spec: &NetworkSpec) -> bool {
        match spec.param_shapes() {
            Ok(shapes) => {
                shapes.len() == self.tensors.len()
                    && shapes.iter().zip(&self.tensors).all(|(s, t)| s.as_slice() == t.shape())
            }
            Err(_) => false,
        }
    }

    /// Flat copy of every element in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Index range (in tensors) of the policy head `[weight, bias]`.
    pub fn policy_head_slots(&self) -> std::ops::Range<usize> {
        self.tensors.len() - 4..self.tensors.len() - 2
    }

    /// Index range (in tensors) of the value head `[weight, bias]`.
    pub fn value_head_slots(&self) -> std::ops::Range<usize> {
        self.tensors.len() - 2..self.tensors.len()
    }
}

/// Deterministic initialization: zero biases, weights uniform in
/// `±gain·sqrt(3/fan_in)` (gain √2 for the trunk, 0.01 for the policy head,
/// 1 for the value head).
pub fn build_network(spec: &NetworkSpec, seed: u64) -> Result<ParamSet, ApproxError> {
    let shapes = spec.param_shapes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shapes.len();
    let tensors = shapes
        .iter()
        .enumerate()
        .map(|(i, shape)| {
            if shape.len() == 1 {
                return Tensor::zeros(shape);
            }
            let fan_in: usize = shape[1..].iter().product();
            let gain = if i == n - 4 {
                0.01
            } else if i == n - 2 {
                1.0
            } else {
                std::f64::consts::SQRT_2
            };
            let bound = gain * (3.0 / fan_in as f64).sqrt();
            let len = shape.iter().product();
            let data = (0..len).map(|_| rng.gen_range(-bound..bound)).collect();
            Tensor::new(shape.clone(), data).expect("shape from spec")
        })
        .collect();
    Ok(ParamSet { tensors, version: 0 })
}

/// Probability of each discrete action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    probs: Vec<f64>,
}

impl ActionDistribution {
    pub fn from_logits(logits: &[f64]) -> Self {
        let mut lp = logits.to_vec();
        log_softmax_in_place(&mut lp);
        Self { probs: lp.into_iter().map(f64::exp).collect() }
    }

    /// Normalizes non-negative weights; all-zero weights become uniform.
    pub fn from_weights(weights: &[f64]) -> Self {
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            let p = 1.0 / weights.len() as f64;
            return Self { probs: vec![p; weights.len()] };
        }
        Self { probs: weights.iter().map(|w| w / total).collect() }
    }

    pub fn uniform(actions: usize) -> Self {
        Self { probs: vec![1.0 / actions as f64; actions] }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, action: usize) -> f64 {
        self.probs[action]
    }

    pub fn log_prob(&self, action: usize) -> f64 {
        self.probs[action].ln()
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Most probable action, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Inverse-CDF sample; falls back to the last positive entry when
    /// rounding leaves the draw past the cumulative total.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                last = i;
                acc += p;
                if u < acc {
                    return i;
                }
            }
        }
        last
    }

    pub fn entropy(&self) -> f64 {
        -self.probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
    }
}

/// Graph handles for a batched forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// `[N, actions]`
    pub logits: Var,
    /// `[N]`
    pub values: Var,
}

/// Records the forward pass of `obs` through the network into `graph`,
/// registering every parameter tensor under its canonical slot.
pub fn forward_graph(
    graph: &mut Graph,
    spec: &NetworkSpec,
    params: &ParamSet,
    obs: &[&ObservationStack],
) -> Result<ForwardVars, ApproxError> {
    if obs.is_empty() {
        return Err(ApproxError::Shape("empty observation batch".into()));
    }
    if !params.matches(spec) {
        return Err(ApproxError::Shape("parameter set does not match network spec".into()));
    }
    for o in obs {
        spec.check_input(o)?;
    }
    let (c, h, w) = (spec.channels, spec.height, spec.width);
    let n = obs.len();
    // channel-first maps -> channel-last batch
    let mut input = vec![0.0; n * h * w * c];
    for (b, o) in obs.iter().enumerate() {
        let src = o.data();
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    input[((b * h + y) * w + x) * c + ch] = src[(ch * h + y) * w + x];
                }
            }
        }
    }
    let slots: Vec<Var> = params.tensors.iter().enumerate().map(|(i, t)| graph.param(i, t.clone())).collect();
    let mut x = graph.constant(Tensor::new(vec![n, h, w, c], input)?);
    for (i, layer) in spec.layers.iter().enumerate() {
        let (wv, bv) = (slots[2 * i], slots[2 * i + 1]);
        let (pre, act) = match *layer {
            LayerSpec::Conv { stride, activation, .. } => (graph.conv2d(x, wv, bv, stride)?, activation),
            LayerSpec::Dense { activation, .. } => (graph.dense(x, wv, bv)?, activation),
        };
        x = match act {
            Activation::Relu => graph.relu(pre)?,
            Activation::Tanh => graph.tanh(pre)?,
            Activation::Identity => pre,
        };
    }
    let k = slots.len();
    let logits = graph.dense(x, slots[k - 4], slots[k - 3])?;
    let v = graph.dense(x, slots[k - 2], slots[k - 1])?;
    let values = graph.reshape(v, vec![n])?;
    Ok(ForwardVars { logits, values })
}

/// Action distributions and state values for a batch, without keeping the graph.
pub fn evaluate_batch(
    spec: &NetworkSpec,
    params: &ParamSet,
    obs: &[&ObservationStack],
) -> Result<Vec<(ActionDistribution, f64)>, ApproxError> {
    let mut graph = Graph::new();
    let fw = forward_graph(&mut graph, spec, params, obs)?;
    let logits = graph.value(fw.logits)?.data();
    let values = graph.value(fw.values)?.data();
    Ok(logits
        .chunks_exact(spec.actions)
        .zip(values)
        .map(|(row, &v)| (ActionDistribution::from_logits(row), v))
        .collect())
}

pub fn policy_forward(
    spec: &NetworkSpec,
    params: &ParamSet,
    obs: &ObservationStack,
) -> Result<ActionDistribution, ApproxError> {
    Ok(evaluate_batch(spec, params, &[obs])?.remove(0).0)
}

pub fn value_forward(spec: &NetworkSpec, params: &ParamSet, obs: &ObservationStack) -> Result<f64, ApproxError> {
    Ok(evaluate_batch(spec, params, &[obs])?.remove(0).1)
}
