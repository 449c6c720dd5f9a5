use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{expert_rank_actions, roulette_select, ExpertHandle, MedcError};
use crate::approximator::{
    cross_entropy, loss_and_gradients, optimizer_step, ActionDistribution, NetworkSpec, OptimizerState, ParamSet,
    Tensor,
};
use crate::envs::{EnvConfig, ObservationStack};
use crate::trainer::{
    derive_seed, eval_env_seed, evaluate_greedy, ActionHook, EvalReport, HookDecision, NoHook, PpoConfig, TrainError,
    TrainObserver, Trainer, TrajectoryBuffer,
};

/// Elementwise mean of parameter sets sharing one layout.
pub fn frl_average(sets: &[ParamSet]) -> Result<ParamSet, MedcError> {
    let first = sets.first().ok_or(MedcError::Architecture)?;
    if sets.iter().any(|s| !s.same_layout(first)) {
        return Err(MedcError::Architecture);
    }
    let n = sets.len() as f64;
    let tensors = (0..first.tensors.len())
        .map(|i| {
            let mut sum = vec![0.0; first.tensors[i].len()];
            for s in sets {
                for (acc, v) in sum.iter_mut().zip(s.tensors[i].data()) {
                    *acc += v;
                }
            }
            Tensor::new(first.tensors[i].shape().to_vec(), sum.into_iter().map(|v| v / n).collect())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let version = sets.iter().map(|s| s.version).max().unwrap_or(0);
    Ok(ParamSet { tensors, version })
}

/// One gradient step on the cross-entropy between the policy and the expert's
/// first choice on each observation. Returns the loss before the step.
pub fn bc_update(
    spec: &NetworkSpec,
    params: &mut ParamSet,
    opt: &mut OptimizerState,
    expert: &ExpertHandle,
    batch: &[&ObservationStack],
    rng: &mut ChaCha8Rng,
) -> Result<f64, MedcError> {
    let labels =
        batch.iter().map(|o| Ok(expert_rank_actions(expert, o, rng)?[0])).collect::<Result<Vec<usize>, MedcError>>()?;
    let (loss, grads, ()) = loss_and_gradients(spec, params, batch, |g, fw| Ok((cross_entropy(g, fw, &labels)?, ())))?;
    optimizer_step(params, &grads, opt)?;
    Ok(loss)
}

/// Imitation-assisted PPO: after every PPO update, one behavioral-cloning
/// pass over the horizon's observations, one roulette-chosen expert per minibatch.
#[derive(Debug, Clone)]
pub struct IlHook {
    experts: Vec<ExpertHandle>,
    rng: ChaCha8Rng,
    learning_rate: f64,
    minibatch_size: usize,
    opt: Option<OptimizerState>,
    losses: Vec<f64>,
}

impl IlHook {
    pub fn new(
        experts: Vec<ExpertHandle>,
        learning_rate: f64,
        minibatch_size: usize,
        seed: u64,
    ) -> Result<Self, MedcError> {
        if experts.is_empty() {
            return Err(MedcError::NoExperts);
        }
        Ok(Self {
            experts,
            rng: ChaCha8Rng::seed_from_u64(seed),
            learning_rate,
            minibatch_size: minibatch_size.max(1),
            opt: None,
            losses: Vec::new(),
        })
    }

    /// Cloning loss of every minibatch so far.
    pub fn losses(&self) -> &[f64] {
        &self.losses
    }
}

impl ActionHook for IlHook {
    fn choose(&mut self, _: usize, _: &ObservationStack, _: &ActionDistribution) -> Result<HookDecision, TrainError> {
        Ok(HookDecision::OwnPolicy)
    }

    fn after_update(
        &mut self,
        spec: &NetworkSpec,
        params: &mut ParamSet,
        buffer: &TrajectoryBuffer,
    ) -> Result<(), TrainError> {
        let lr = self.learning_rate;
        let opt = self.opt.get_or_insert_with(|| OptimizerState::new(params, lr));
        let a = buffer.agents;
        let mut order: Vec<usize> = (0..buffer.len()).collect();
        order.shuffle(&mut self.rng);
        for chunk in order.chunks(self.minibatch_size) {
            let obs: Vec<&ObservationStack> =
                chunk.iter().flat_map(|&t| (0..a).map(move |k| t * a + k)).map(|i| &buffer.observations[i]).collect();
            let e = roulette_select(&self.experts, &mut self.rng)?;
            let loss = bc_update(spec, params, opt, &self.experts[e], &obs, &mut self.rng)?;
            self.losses.push(loss);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FrlOutcome {
    pub spec: NetworkSpec,
    pub params: ParamSet,
    pub reports: Vec<EvalReport>,
    pub steps: usize,
}

/// Federated PPO: each round every user runs one collect-and-update
/// iteration on its own environment, then all users adopt the mean
/// parameters. `cfg.total_steps` bounds the steps summed over users; the
/// global model is evaluated greedily on `target` every `cfg.eval_interval`
/// summed steps.
pub fn frl_train(
    users: &[EnvConfig],
    target: &EnvConfig,
    cfg: &PpoConfig,
    observer: &mut dyn TrainObserver,
) -> Result<FrlOutcome, MedcError> {
    if users.is_empty() {
        return Err(MedcError::Config("federated training needs at least one user".into()));
    }
    if users.iter().any(|u| (u.height, u.width) != (target.height, target.width)) {
        return Err(MedcError::Architecture);
    }
    let mut trainers = Vec::with_capacity(users.len());
    for (i, u) in users.iter().enumerate() {
        let ucfg = PpoConfig { seed: derive_seed(cfg.seed, 100 + i as u64), ..cfg.clone() };
        trainers.push(Trainer::new(u, &ucfg)?);
    }
    let spec = trainers[0].spec.clone();
    let mut global = crate::approximator::build_network(&spec, derive_seed(cfg.seed, 99))?;
    let mut eval_cfg = target.clone();
    eval_cfg.seed = eval_env_seed(target.seed);
    let mut reports = Vec::new();
    let mut steps = 0;
    let mut next_eval = cfg.eval_interval;
    while steps < cfg.total_steps {
        let mut local = Vec::with_capacity(trainers.len());
        for t in trainers.iter_mut() {
            if steps >= cfg.total_steps {
                break;
            }
            t.set_params(global.clone())?;
            let (_, collect, stats) = t.iteration(&mut NoHook)?;
            steps += collect.steps;
            observer.on_update(t.updates(), t.params(), &collect, &stats)?;
            local.push(t.params().clone());
        }
        global = frl_average(&local)?;
        while next_eval <= steps && next_eval <= cfg.total_steps {
            let mut r = evaluate_greedy(&eval_cfg, &spec, &global, cfg.eval_steps)?;
            r.step = next_eval;
            observer.on_eval(&r)?;
            reports.push(r);
            next_eval += cfg.eval_interval;
        }
    }
    Ok(FrlOutcome { spec, params: global, reports, steps })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> NetworkSpec {
        NetworkSpec::default_for(5, 6, 6, 9)
    }

    #[test]
    fn average_identities() {
        let w = crate::approximator::build_network(&spec(), 1).unwrap();
        let same = frl_average(&[w.clone(), w.clone(), w.clone()]).unwrap();
        for (a, b) in same.tensors.iter().zip(&w.tensors) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-15 * y.abs().max(1.0));
            }
        }
        let mut neg = w.clone();
        neg.tensors.iter_mut().for_each(|t| t.data_mut().iter_mut().for_each(|v| *v = -*v));
        let zero = frl_average(&[w, neg]).unwrap();
        assert!(zero.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn average_rejects_mixed_architectures() {
        let a = crate::approximator::build_network(&spec(), 1).unwrap();
        let b = crate::approximator::build_network(&NetworkSpec::default_for(5, 7, 7, 9), 1).unwrap();
        assert!(matches!(frl_average(&[a, b]), Err(MedcError::Architecture)));
        assert!(frl_average(&[]).is_err());
    }

    #[test]
    fn bc_uniform_loss_is_ln9_and_decreases() {
        let s = spec();
        let mut p = ParamSet::zeros_like(&s).unwrap();
        // keep a trainable trunk so the head sees non-zero features
        let init = crate::approximator::build_network(&s, 5).unwrap();
        let head = p.policy_head_slots();
        for i in 0..p.tensors.len() {
            if !head.contains(&i) {
                p.tensors[i] = init.tensors[i].clone();
            }
        }
        let mut opt = OptimizerState::new(&p, 1e-2);
        let expert = ExpertHandle::biased(3, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let obs: Vec<ObservationStack> = (0..8)
            .map(|i| {
                let mut o = ObservationStack::zeros(5, 6, 6);
                o.channel_mut(0)[i] = 1.0;
                o
            })
            .collect();
        let refs: Vec<&ObservationStack> = obs.iter().collect();
        let first = bc_update(&s, &mut p, &mut opt, &expert, &refs, &mut rng).unwrap();
        assert!((first - 9f64.ln()).abs() < 1e-12);
        let mut prev = first;
        for _ in 0..10 {
            let l = bc_update(&s, &mut p, &mut opt, &expert, &refs, &mut rng).unwrap();
            assert!(l <= prev + 1e-12);
            prev = l;
        }
    }

    #[test]
    fn frl_round_trip() {
        let users = vec![EnvConfig::target_localization(5, 5, 1, 0, 1), EnvConfig::target_localization(5, 5, 2, 1, 2)];
        let target = EnvConfig::target_localization(5, 5, 2, 1, 3);
        let cfg = PpoConfig {
            horizon: 40,
            minibatch_size: 20,
            epochs: 1,
            total_steps: 160,
            eval_interval: 80,
            eval_steps: 30,
            ..PpoConfig::default()
        };
        let a = frl_train(&users, &target, &cfg, &mut ()).unwrap();
        let b = frl_train(&users, &target, &cfg, &mut ()).unwrap();
        assert_eq!(a.steps, 160);
        assert_eq!(a.reports.iter().map(|r| r.step).collect::<Vec<_>>(), vec![80, 160]);
        assert_eq!(a.params.tensors, b.params.tensors);
        let wrong = vec![EnvConfig::target_localization(6, 6, 1, 0, 1)];
        assert!(frl_train(&wrong, &target, &cfg, &mut ()).is_err());
    }
}
