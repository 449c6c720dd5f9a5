//! Shared-parameter PPO over the grid worlds: horizon collection, GAE,
//! clipped-surrogate updates, and periodic greedy evaluation.

mod gae;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::approximator::{
    build_network, clip_gradient_norm, evaluate_batch, loss_and_gradients, optimizer_step, ppo_loss,
    ActionDistribution, ApproxError, LossComponents, NetworkSpec, OptimizerState, ParamSet, PpoLossConfig,
};
use crate::envs::{make_env, EnvConfig, EnvError, Environment, ObservationStack};

pub use gae::compute_gae;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("update diverged at epoch {epoch}, minibatch {minibatch}: {detail}")]
    NonFinite { epoch: usize, minibatch: usize, detail: String },
    #[error("action hook failed: {0}")]
    Hook(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub learning_rate: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub horizon: usize,
    pub epochs: usize,
    pub total_steps: usize,
    /// Timesteps per minibatch; every agent's sample at a chosen timestep is included.
    pub minibatch_size: usize,
    pub value_coef: f64,
    pub max_grad_norm: Option<f64>,
    pub eval_interval: usize,
    pub eval_steps: usize,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            clip: 0.2,
            entropy_coef: 0.01,
            gamma: 0.99,
            lambda: 0.95,
            horizon: 4000,
            epochs: 20,
            total_steps: 500_000,
            minibatch_size: 500,
            value_coef: 0.5,
            max_grad_norm: Some(0.5),
            eval_interval: 40_000,
            eval_steps: 4000,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return bad("gamma and lambda must lie in [0, 1]");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.horizon == 0 || self.minibatch_size == 0 || self.eval_interval == 0 || self.eval_steps == 0 {
            return bad("horizon, minibatch size, eval interval and eval steps must be at least 1");
        }
        if matches!(self.max_grad_norm, Some(n) if !(n > 0.0)) {
            return bad("max gradient norm must be positive");
        }
        Ok(())
    }

    pub fn loss_config(&self) -> PpoLossConfig {
        PpoLossConfig { clip: self.clip, value_coef: self.value_coef, entropy_coef: self.entropy_coef }
    }
}

/// Independent seed for stream `stream` of a run seeded with `base`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(0x632b_e59b_d9b4_e019);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const INIT_STREAM: u64 = 1;
const POLICY_STREAM: u64 = 2;
const SHUFFLE_STREAM: u64 = 3;
const EVAL_STREAM: u64 = 4;

/// Seed of the evaluation environment paired with a training environment seed.
pub fn eval_env_seed(train_env_seed: u64) -> u64 {
    let s = derive_seed(train_env_seed, EVAL_STREAM);
    if s == train_env_seed {
        s.wrapping_add(1)
    } else {
        s
    }
}

/// One horizon of experience for every agent. Per-agent columns are stored
/// timestep-major: entry `t * agents + k`.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryBuffer {
    pub agents: usize,
    pub observations: Vec<ObservationStack>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    /// Action came from an action hook rather than the agent's own sampling.
    pub hooked: Vec<bool>,
    /// Team reward per timestep.
    pub rewards: Vec<f64>,
    /// Timestep ended its episode.
    pub flags: Vec<bool>,
    /// Critic value of the state after the last step, per agent; zero after a terminal step.
    pub bootstrap: Vec<f64>,
}

impl TrajectoryBuffer {
    pub fn new(agents: usize) -> Self {
        Self { agents, ..Self::default() }
    }

    /// Timesteps stored.
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Lengths of the episode segments, the last one possibly cut by the horizon.
    pub fn segments(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut run = 0;
        for &f in &self.flags {
            run += 1;
            if f {
                out.push(run);
                run = 0;
            }
        }
        if run > 0 {
            out.push(run);
        }
        out
    }

    /// Advantages and returns per sample, in the buffer's sample order.
    pub fn advantages(&self, gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
        let (n, a) = (self.len(), self.agents);
        if self.values.len() != n * a || self.bootstrap.len() != a {
            return Err(TrainError::Length("buffer is not finalized".into()));
        }
        let mut adv = vec![0.0; n * a];
        let mut ret = vec![0.0; n * a];
        for k in 0..a {
            let values: Vec<f64> = (0..n).map(|t| self.values[t * a + k]).collect();
            let (ak, rk) = compute_gae(&self.rewards, &values, &self.flags, self.bootstrap[k], gamma, lambda)?;
            for t in 0..n {
                adv[t * a + k] = ak[t];
                ret[t * a + k] = rk[t];
            }
        }
        Ok((adv, ret))
    }
}

/// What an [`ActionHook`] wants done for one agent at one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HookDecision {
    /// Sample from the agent's own distribution.
    OwnPolicy,
    /// Execute this action instead.
    Execute(usize),
}

/// Intercepts action selection during collection.
pub trait ActionHook {
    fn begin_episode(&mut self) {}

    fn choose(
        &mut self,
        agent: usize,
        obs: &ObservationStack,
        own: &ActionDistribution,
    ) -> Result<HookDecision, TrainError>;

    fn end_horizon(&mut self) {}

    /// Runs after every PPO update with the horizon that fed it.
    fn after_update(
        &mut self,
        _spec: &NetworkSpec,
        _params: &mut ParamSet,
        _buffer: &TrajectoryBuffer,
    ) -> Result<(), TrainError> {
        Ok(())
    }
}

/// Plain PPO: every action is sampled from the agent's own policy.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoHook;

impl ActionHook for NoHook {
    fn choose(&mut self, _: usize, _: &ObservationStack, _: &ActionDistribution) -> Result<HookDecision, TrainError> {
        Ok(HookDecision::OwnPolicy)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CollectStats {
    pub steps: usize,
    /// Lengths of the episodes that finished inside this horizon.
    pub episode_lengths: Vec<usize>,
    pub episode_returns: Vec<f64>,
    pub hook_actions: usize,
    /// Smallest own-policy probability of any hook-executed action.
    pub min_hook_prob: Option<f64>,
}

/// Environment plus the in-flight episode, carried across horizons.
#[derive(Debug, Clone)]
pub struct Rollout {
    env: Environment,
    obs: Vec<ObservationStack>,
    episode_len: usize,
    episode_return: f64,
    fresh: bool,
}

impl Rollout {
    pub fn new(cfg: &EnvConfig) -> Result<Self, TrainError> {
        Ok(Self { env: make_env(cfg)?, obs: Vec::new(), episode_len: 0, episode_return: 0.0, fresh: true })
    }

    pub fn env(&self) -> &Environment {
        &self.env
    }
}

/// Collects exactly `horizon` timesteps, resetting on termination.
#[allow(clippy::too_many_arguments)]
pub fn collect_horizon(
    rollout: &mut Rollout,
    spec: &NetworkSpec,
    params: &ParamSet,
    horizon: usize,
    rng: &mut ChaCha8Rng,
    hook: &mut dyn ActionHook,
) -> Result<(TrajectoryBuffer, CollectStats), TrainError> {
    let agents = rollout.env.num_agents();
    let mut buf = TrajectoryBuffer::new(agents);
    let mut stats = CollectStats::default();
    for _ in 0..horizon {
        if rollout.fresh {
            rollout.obs = rollout.env.reset();
            rollout.episode_len = 0;
            rollout.episode_return = 0.0;
            rollout.fresh = false;
            hook.begin_episode();
        }
        let refs: Vec<&ObservationStack> = rollout.obs.iter().collect();
        let outputs = evaluate_batch(spec, params, &refs)?;
        let mut actions = Vec::with_capacity(agents);
        for (k, (dist, value)) in outputs.iter().enumerate() {
            let (action, hooked) = match hook.choose(k, &rollout.obs[k], dist)? {
                HookDecision::OwnPolicy => (dist.sample(rng), false),
                HookDecision::Execute(a) => {
                    if a >= dist.len() {
                        return Err(TrainError::Hook(format!("hook chose action {a} of {}", dist.len())));
                    }
                    let p = dist.prob(a);
                    stats.hook_actions += 1;
                    stats.min_hook_prob = Some(stats.min_hook_prob.map_or(p, |m: f64| m.min(p)));
                    (a, true)
                }
            };
            actions.push(action);
            buf.log_probs.push(dist.log_prob(action));
            buf.values.push(*value);
            buf.hooked.push(hooked);
        }
        let result = rollout.env.step(&actions)?;
        buf.observations.append(&mut rollout.obs);
        buf.actions.extend_from_slice(&actions);
        buf.rewards.push(result.reward);
        buf.flags.push(result.done);
        rollout.obs = result.observations;
        rollout.episode_len += 1;
        rollout.episode_return += result.reward;
        stats.steps += 1;
        if result.done {
            stats.episode_lengths.push(rollout.episode_len);
            stats.episode_returns.push(rollout.episode_return);
            rollout.fresh = true;
        }
    }
    buf.bootstrap = if rollout.fresh {
        vec![0.0; agents]
    } else {
        let refs: Vec<&ObservationStack> = rollout.obs.iter().collect();
        evaluate_batch(spec, params, &refs)?.into_iter().map(|(_, v)| v).collect()
    };
    hook.end_horizon();
    Ok((buf, stats))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub loss: f64,
    pub value_mse: f64,
    pub entropy: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    /// Mean probability ratio of the very first minibatch, before any step.
    pub first_ratio: Option<f64>,
    pub epochs: Vec<EpochStats>,
}

/// Shuffled-minibatch clipped-surrogate updates over one finalized buffer.
pub fn ppo_update(
    spec: &NetworkSpec,
    params: &mut ParamSet,
    opt: &mut OptimizerState,
    buffer: &TrajectoryBuffer,
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats, TrainError> {
    let (advantages, returns) = buffer.advantages(cfg.gamma, cfg.lambda)?;
    let a = buffer.agents;
    let loss_cfg = cfg.loss_config();
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    let mut stats = UpdateStats::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut acc = EpochStats::default();
        let mut weight = 0.0;
        for (mb, chunk) in order.chunks(cfg.minibatch_size).enumerate() {
            let idx: Vec<usize> = chunk.iter().flat_map(|&t| (0..a).map(move |k| t * a + k)).collect();
            let obs: Vec<&ObservationStack> = idx.iter().map(|&i| &buffer.observations[i]).collect();
            let actions: Vec<usize> = idx.iter().map(|&i| buffer.actions[i]).collect();
            let old: Vec<f64> = idx.iter().map(|&i| buffer.log_probs[i]).collect();
            let ret: Vec<f64> = idx.iter().map(|&i| returns[i]).collect();
            let mut adv: Vec<f64> = idx.iter().map(|&i| advantages[i]).collect();
            normalize(&mut adv);
            let diverged = |detail: String| TrainError::NonFinite { epoch, minibatch: mb, detail };
            let (_, mut grads, parts): (f64, ParamSet, LossComponents) =
                loss_and_gradients(spec, params, &obs, |g, fw| ppo_loss(g, fw, &actions, &old, &adv, &ret, &loss_cfg))
                    .map_err(|e| diverged(e.to_string()))?;
            if !grads.is_finite() {
                return Err(diverged(format!("non-finite gradient, loss {parts:?}")));
            }
            if let Some(max) = cfg.max_grad_norm {
                clip_gradient_norm(&mut grads, max);
            }
            optimizer_step(params, &grads, opt)?;
            if stats.first_ratio.is_none() {
                stats.first_ratio = Some(parts.mean_ratio);
            }
            let w = idx.len() as f64;
            weight += w;
            acc.loss += w * parts.total;
            acc.value_mse += w * parts.value_mse;
            acc.entropy += w * parts.entropy;
            acc.mean_ratio += w * parts.mean_ratio;
            acc.clip_fraction += w * parts.clip_fraction;
        }
        if weight > 0.0 {
            acc.loss /= weight;
            acc.value_mse /= weight;
            acc.entropy /= weight;
            acc.mean_ratio /= weight;
            acc.clip_fraction /= weight;
        }
        stats.epochs.push(acc);
    }
    Ok(stats)
}

/// Zero mean, unit variance; left alone when the spread is negligible.
fn normalize(xs: &mut [f64]) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std < 1e-8 {
        return;
    }
    xs.iter_mut().for_each(|x| *x = (*x - mean) / std);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub step: usize,
    pub mean_episode_length: f64,
    pub mean_return: f64,
    pub episodes: usize,
}

/// Runs `steps` greedy steps on a fresh environment built from `cfg`.
/// Averages cover completed episodes; if none completed, the partial episode
/// is reported instead.
pub fn evaluate_greedy(
    cfg: &EnvConfig,
    spec: &NetworkSpec,
    params: &ParamSet,
    steps: usize,
) -> Result<EvalReport, TrainError> {
    let mut env = make_env(cfg)?;
    let mut obs = env.reset();
    let (mut len, mut ret) = (0usize, 0.0);
    let (mut lengths, mut returns) = (0usize, 0.0);
    let mut episodes = 0;
    for _ in 0..steps {
        let refs: Vec<&ObservationStack> = obs.iter().collect();
        let actions: Vec<usize> = evaluate_batch(spec, params, &refs)?.iter().map(|(d, _)| d.argmax()).collect();
        let r = env.step(&actions)?;
        len += 1;
        ret += r.reward;
        obs = r.observations;
        if r.done {
            episodes += 1;
            lengths += len;
            returns += ret;
            len = 0;
            ret = 0.0;
            obs = env.reset();
        }
    }
    let report = if episodes > 0 {
        EvalReport {
            step: 0,
            mean_episode_length: lengths as f64 / episodes as f64,
            mean_return: returns / episodes as f64,
            episodes,
        }
    } else {
        EvalReport { step: 0, mean_episode_length: len as f64, mean_return: ret, episodes: 0 }
    };
    Ok(report)
}

/// Receives evaluation reports and post-update snapshots during [`train`].
pub trait TrainObserver {
    fn on_eval(&mut self, _report: &EvalReport) -> Result<(), TrainError> {
        Ok(())
    }

    fn on_update(
        &mut self,
        _update: usize,
        _params: &ParamSet,
        _collect: &CollectStats,
        _stats: &UpdateStats,
    ) -> Result<(), TrainError> {
        Ok(())
    }
}

impl TrainObserver for () {}

impl TrainObserver for Vec<EvalReport> {
    fn on_eval(&mut self, report: &EvalReport) -> Result<(), TrainError> {
        self.push(report.clone());
        Ok(())
    }
}

/// A PPO learner bound to one training environment.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub spec: NetworkSpec,
    pub cfg: PpoConfig,
    params: ParamSet,
    opt: OptimizerState,
    rollout: Rollout,
    env_cfg: EnvConfig,
    eval_cfg: EnvConfig,
    policy_rng: ChaCha8Rng,
    shuffle_rng: ChaCha8Rng,
    steps: usize,
    updates: usize,
}

impl Trainer {
    pub fn new(env_cfg: &EnvConfig, cfg: &PpoConfig) -> Result<Self, TrainError> {
        env_cfg.validate()?;
        let spec = NetworkSpec::default_for(
            crate::envs::OBSERVATION_CHANNELS,
            env_cfg.height,
            env_cfg.width,
            crate::envs::NUM_ACTIONS,
        );
        let params = build_network(&spec, derive_seed(cfg.seed, INIT_STREAM))?;
        Self::with_params(env_cfg, cfg, spec, params)
    }

    pub fn with_params(
        env_cfg: &EnvConfig,
        cfg: &PpoConfig,
        spec: NetworkSpec,
        params: ParamSet,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        if !params.matches(&spec) {
            return Err(TrainError::Config("parameters do not match the network spec".into()));
        }
        let mut eval_cfg = env_cfg.clone();
        eval_cfg.seed = eval_env_seed(env_cfg.seed);
        Ok(Self {
            opt: OptimizerState::new(&params, cfg.learning_rate),
            rollout: Rollout::new(env_cfg)?,
            policy_rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, POLICY_STREAM)),
            shuffle_rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, SHUFFLE_STREAM)),
            env_cfg: env_cfg.clone(),
            eval_cfg,
            spec,
            params,
            cfg: cfg.clone(),
            steps: 0,
            updates: 0,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Replaces the weights, keeping optimizer moments and the rollout.
    pub fn set_params(&mut self, params: ParamSet) -> Result<(), TrainError> {
        if !params.same_layout(&self.params) {
            return Err(TrainError::Config("replacement parameters have a different layout".into()));
        }
        self.params = params;
        Ok(())
    }

    pub fn env_config(&self) -> &EnvConfig {
        &self.env_cfg
    }

    pub fn eval_config(&self) -> &EnvConfig {
        &self.eval_cfg
    }

    /// Environment steps collected so far.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn collect(&mut self, hook: &mut dyn ActionHook) -> Result<(TrajectoryBuffer, CollectStats), TrainError> {
        let out =
            collect_horizon(&mut self.rollout, &self.spec, &self.params, self.cfg.horizon, &mut self.policy_rng, hook)?;
        self.steps += out.1.steps;
        Ok(out)
    }

    pub fn update(&mut self, buffer: &TrajectoryBuffer) -> Result<UpdateStats, TrainError> {
        let stats = ppo_update(&self.spec, &mut self.params, &mut self.opt, buffer, &self.cfg, &mut self.shuffle_rng)?;
        self.updates += 1;
        Ok(stats)
    }

    /// Collect one horizon, update on it, then let the hook post-process.
    pub fn iteration(
        &mut self,
        hook: &mut dyn ActionHook,
    ) -> Result<(TrajectoryBuffer, CollectStats, UpdateStats), TrainError> {
        let (buffer, collect) = self.collect(hook)?;
        let stats = self.update(&buffer)?;
        hook.after_update(&self.spec, &mut self.params, &buffer)?;
        Ok((buffer, collect, stats))
    }

    pub fn evaluate(&self, step: usize) -> Result<EvalReport, TrainError> {
        let mut r = evaluate_greedy(&self.eval_cfg, &self.spec, &self.params, self.cfg.eval_steps)?;
        r.step = step;
        Ok(r)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub spec: NetworkSpec,
    pub params: ParamSet,
    pub reports: Vec<EvalReport>,
    pub steps: usize,
}

/// Alternates collection and updates until `total_steps` timesteps are
/// collected, evaluating greedily each time another `eval_interval` steps pass.
pub fn train(
    env_cfg: &EnvConfig,
    cfg: &PpoConfig,
    hook: &mut dyn ActionHook,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome, TrainError> {
    let mut trainer = Trainer::new(env_cfg, cfg)?;
    run(&mut trainer, hook, observer)
}

/// [`train`] on an already constructed trainer.
pub fn run(
    trainer: &mut Trainer,
    hook: &mut dyn ActionHook,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome, TrainError> {
    let cfg = trainer.cfg.clone();
    let mut reports = Vec::new();
    let mut next_eval = cfg.eval_interval;
    while trainer.steps() < cfg.total_steps {
        let (_, collect, stats) = trainer.iteration(hook)?;
        observer.on_update(trainer.updates(), trainer.params(), &collect, &stats)?;
        while next_eval <= trainer.steps() && next_eval <= cfg.total_steps {
            let report = trainer.evaluate(next_eval)?;
            observer.on_eval(&report)?;
            reports.push(report);
            next_eval += cfg.eval_interval;
        }
    }
    Ok(TrainOutcome { spec: trainer.spec.clone(), params: trainer.params().clone(), reports, steps: trainer.steps() })
}
