use medc_core::approximator::{build_network, policy_forward, ActionDistribution, NetworkSpec};
use medc_core::envs::{make_env, opposite_action, EnvConfig, ObservationStack, NUM_ACTIONS, STAY};
use medc_core::medc::{expert_rank_actions, frl_average, q_filter, roulette_index, ExpertHandle, MedcConfig, MedcHook};
use medc_core::trainer::{train, PpoConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn distribution() -> impl Strategy<Value = ActionDistribution> {
    prop::collection::vec(-6.0f64..6.0, NUM_ACTIONS).prop_map(|l| ActionDistribution::from_logits(&l))
}

fn ranking() -> impl Strategy<Value = Vec<usize>> {
    Just((0..NUM_ACTIONS).collect::<Vec<_>>()).prop_shuffle()
}

fn observation(seed: u64) -> ObservationStack {
    let mut env = make_env(&EnvConfig::target_localization(6, 6, 2, 2, seed)).unwrap();
    env.reset().remove(0)
}

proptest! {
    #[test]
    fn q_filter_picks_first_admissible(ranked in ranking(), own in distribution(), q in 0.0f64..0.5) {
        match q_filter(&ranked, &own, q) {
            Some((a, rank)) => {
                prop_assert_eq!(ranked[rank], a);
                prop_assert!(own.prob(a) >= q);
                prop_assert!(ranked[..rank].iter().all(|&b| own.prob(b) < q));
            }
            None => prop_assert!(ranked.iter().all(|&b| own.prob(b) < q)),
        }
    }

    #[test]
    fn raising_q_never_moves_the_choice_up_the_ranking(ranked in ranking(), own in distribution(), q1 in 0.0f64..0.5, dq in 0.0f64..0.5) {
        let lo = q_filter(&ranked, &own, q1).map(|(_, r)| r);
        let hi = q_filter(&ranked, &own, q1 + dq).map(|(_, r)| r);
        match (lo, hi) {
            (Some(a), Some(b)) => prop_assert!(b >= a),
            (None, Some(_)) => prop_assert!(false, "a stricter threshold admitted an action"),
            _ => {}
        }
    }

    #[test]
    fn q_zero_always_takes_the_top_choice(ranked in ranking(), own in distribution()) {
        prop_assert_eq!(q_filter(&ranked, &own, 0.0), Some((ranked[0], 0)));
    }

    #[test]
    fn roulette_never_picks_zero_weight(weights in prop::collection::vec(prop_oneof![Just(0.0), 0.01f64..5.0], 1..8), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let any_positive = weights.iter().any(|w| *w > 0.0);
        for _ in 0..50 {
            let i = roulette_index(&weights, &mut rng).unwrap();
            prop_assert!(i < weights.len());
            if any_positive {
                prop_assert!(weights[i] > 0.0);
            }
        }
    }

    #[test]
    fn every_expert_ranks_a_permutation(seed in 0u64..200, action in 0usize..NUM_ACTIONS) {
        let spec = NetworkSpec::default_for(5, 6, 6, NUM_ACTIONS);
        let params = build_network(&spec, seed).unwrap();
        let obs = observation(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let experts = [
            ExpertHandle::trained(spec.clone(), params.clone(), 1.0).unwrap(),
            ExpertHandle::malicious(spec.clone(), params.clone(), 1.0).unwrap(),
            ExpertHandle::random(1.0).unwrap(),
            ExpertHandle::biased(action, 1.0).unwrap(),
        ];
        let ranks: Vec<Vec<usize>> = experts.iter().map(|e| expert_rank_actions(e, &obs, &mut rng).unwrap()).collect();
        for r in &ranks {
            let mut s = r.clone();
            s.sort_unstable();
            prop_assert_eq!(s, (0..NUM_ACTIONS).collect::<Vec<_>>());
        }
        let own = policy_forward(&spec, &params, &obs).unwrap();
        let best = ranks[0][0];
        prop_assert!((0..NUM_ACTIONS).all(|a| own.prob(a) <= own.prob(best)));
        prop_assert_eq!(ranks[1][0], opposite_action(best));
        prop_assert_eq!(ranks[3][0], action);
    }

    #[test]
    fn averaging_identical_models_is_identity(seed in any::<u64>()) {
        let spec = NetworkSpec::default_for(5, 5, 5, NUM_ACTIONS);
        let p = build_network(&spec, seed).unwrap();
        let avg = frl_average(&[p.clone(), p.clone(), p.clone()]).unwrap();
        for (a, b) in avg.flatten().iter().zip(p.flatten()) {
            prop_assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
    }
}

#[test]
fn opposite_is_an_involution_fixing_stay() {
    assert_eq!(opposite_action(STAY), STAY);
    for a in 0..NUM_ACTIONS {
        assert_eq!(opposite_action(opposite_action(a)), a);
        if a != STAY {
            assert_ne!(opposite_action(a), a);
        }
    }
}

#[test]
fn guided_training_never_executes_below_threshold() {
    let env = EnvConfig::target_localization(6, 6, 2, 1, 4);
    let cfg = PpoConfig {
        horizon: 400,
        minibatch_size: 100,
        epochs: 3,
        total_steps: 1200,
        eval_interval: 1200,
        eval_steps: 100,
        seed: 4,
        ..PpoConfig::default()
    };
    let spec = NetworkSpec::default_for(5, 6, 6, NUM_ACTIONS);
    let experts = vec![
        ExpertHandle::biased(2, 1.0).unwrap(),
        ExpertHandle::malicious(spec.clone(), build_network(&spec, 1).unwrap(), 1.0).unwrap(),
    ];
    let medc = MedcConfig { expert_rate: 0.5, q: 0.11 };
    let mut hook = MedcHook::new(medc, experts, 8).unwrap();
    let mut collect = Vec::new();
    struct Audit<'a>(&'a mut Vec<(usize, Option<f64>)>);
    impl medc_core::trainer::TrainObserver for Audit<'_> {
        fn on_update(
            &mut self,
            _: usize,
            _: &medc_core::approximator::ParamSet,
            c: &medc_core::trainer::CollectStats,
            _: &medc_core::trainer::UpdateStats,
        ) -> Result<(), medc_core::trainer::TrainError> {
            self.0.push((c.hook_actions, c.min_hook_prob));
            Ok(())
        }
    }
    train(&env, &cfg, &mut hook, &mut Audit(&mut collect)).unwrap();
    let totals = hook.totals();
    assert!(totals.medc_episodes > 0 && totals.expert_actions > 0);
    assert_eq!(totals.q_violations, 0);
    assert!(totals.min_executed_prob.unwrap() >= 0.11);
    let executed: usize = collect.iter().map(|c| c.0).sum();
    assert_eq!(executed, totals.expert_actions);
    assert!(collect.iter().filter_map(|c| c.1).all(|p| p >= 0.11));
}
