//! Multi-agent PPO training with expert-guided exploration and a simulated
//! model-sharing registry.

pub mod approximator;
pub mod envs;
pub mod harness;
pub mod medc;
pub mod registry;
pub mod trainer;
