//! Small differentiable actor-critic networks: tensors, a reverse-mode tape,
//! loss builders, an Adam optimizer, and a checksummed parameter encoding.

mod graph;
mod loss;
mod network;
mod optim;
mod serialize;
mod tensor;

pub use graph::{Graph, Var};
pub use loss::{cross_entropy, loss_and_gradients, ppo_loss, value_mse, LossComponents, PpoLossConfig};
pub use network::{
    build_network, evaluate_batch, forward_graph, policy_forward, value_forward, ActionDistribution, Activation,
    ForwardVars, LayerSpec, NetworkSpec, ParamSet,
};
pub use optim::{clip_gradient_norm, gradient_norm, optimizer_step, OptimizerState};
pub use serialize::{load_params, save_params, PARAMS_FORMAT_VERSION};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum ApproxError {
    #[error("invalid network spec: {0}")]
    Spec(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("variable does not belong to this graph or carries no recorded computation")]
    Detached,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("corrupt parameter bytes: {0}")]
    Corrupt(String),
    #[error("unsupported parameter format version {found} (supported: {supported})")]
    Version { found: u16, supported: u16 },
}
