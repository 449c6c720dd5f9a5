use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::MedcError;
use crate::approximator::{policy_forward, NetworkSpec, ParamSet};
use crate::envs::{opposite_action, ObservationStack, NUM_ACTIONS, OBSERVATION_CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpertKind {
    Trained,
    Random,
    Biased,
    Malicious,
}

impl std::str::FromStr for ExpertKind {
    type Err = MedcError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trained" | "proper" => Ok(Self::Trained),
            "random" => Ok(Self::Random),
            "biased" => Ok(Self::Biased),
            "malicious" => Ok(Self::Malicious),
            other => Err(MedcError::Expert(format!("unknown expert kind {other:?}"))),
        }
    }
}

/// Where an expert came from, as recorded in its registry entry or package.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpertSource {
    pub application: String,
    pub details: Vec<u64>,
    pub description: String,
}

/// An action ranker selectable by roulette weight `similarity` (R_S).
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertHandle {
    pub kind: ExpertKind,
    model: Option<(NetworkSpec, ParamSet)>,
    fixed_action: usize,
    pub similarity: f64,
    pub source: ExpertSource,
}

fn check_similarity(rs: f64) -> Result<(), MedcError> {
    if !(rs.is_finite() && rs >= 0.0) {
        return Err(MedcError::Expert(format!("similarity weight must be finite and non-negative, got {rs}")));
    }
    Ok(())
}

fn check_model(spec: &NetworkSpec, params: &ParamSet) -> Result<(), MedcError> {
    if spec.channels != OBSERVATION_CHANNELS || spec.actions != NUM_ACTIONS {
        return Err(MedcError::Expert(format!(
            "expert network takes {} channels and {} actions, environments use {OBSERVATION_CHANNELS} and {NUM_ACTIONS}",
            spec.channels, spec.actions
        )));
    }
    if !params.matches(spec) {
        return Err(MedcError::Expert("expert parameters do not match its network spec".into()));
    }
    Ok(())
}

impl ExpertHandle {
    pub fn trained(spec: NetworkSpec, params: ParamSet, similarity: f64) -> Result<Self, MedcError> {
        check_similarity(similarity)?;
        check_model(&spec, &params)?;
        Ok(Self {
            kind: ExpertKind::Trained,
            model: Some((spec, params)),
            fixed_action: 0,
            similarity,
            source: ExpertSource::default(),
        })
    }

    /// A trained policy whose top suggestion is turned around.
    pub fn malicious(spec: NetworkSpec, params: ParamSet, similarity: f64) -> Result<Self, MedcError> {
        Ok(Self { kind: ExpertKind::Malicious, ..Self::trained(spec, params, similarity)? })
    }

    pub fn random(similarity: f64) -> Result<Self, MedcError> {
        check_similarity(similarity)?;
        Ok(Self { kind: ExpertKind::Random, model: None, fixed_action: 0, similarity, source: ExpertSource::default() })
    }

    pub fn biased(action: usize, similarity: f64) -> Result<Self, MedcError> {
        check_similarity(similarity)?;
        if action >= NUM_ACTIONS {
            return Err(MedcError::Expert(format!("biased action {action} outside 0..{NUM_ACTIONS}")));
        }
        Ok(Self {
            kind: ExpertKind::Biased,
            model: None,
            fixed_action: action,
            similarity,
            source: ExpertSource::default(),
        })
    }

    pub fn with_source(mut self, source: ExpertSource) -> Self {
        self.source = source;
        self
    }

    pub fn model(&self) -> Option<(&NetworkSpec, &ParamSet)> {
        self.model.as_ref().map(|(s, p)| (s, p))
    }

    pub fn fixed_action(&self) -> Option<usize> {
        (self.kind == ExpertKind::Biased).then_some(self.fixed_action)
    }
}

/// Every action, most recommended first.
pub fn expert_rank_actions<R: Rng + ?Sized>(
    expert: &ExpertHandle,
    obs: &ObservationStack,
    rng: &mut R,
) -> Result<Vec<usize>, MedcError> {
    match expert.kind {
        ExpertKind::Trained => trained_ranking(expert, obs),
        ExpertKind::Malicious => {
            let mut ranked = trained_ranking(expert, obs)?;
            let flipped = opposite_action(ranked[0]);
            ranked.retain(|&a| a != flipped);
            ranked.insert(0, flipped);
            Ok(ranked)
        }
        ExpertKind::Random => {
            let mut ranked: Vec<usize> = (0..NUM_ACTIONS).collect();
            ranked.shuffle(rng);
            Ok(ranked)
        }
        ExpertKind::Biased => {
            let mut ranked = vec![expert.fixed_action];
            ranked.extend((0..NUM_ACTIONS).filter(|&a| a != expert.fixed_action));
            Ok(ranked)
        }
    }
}

fn trained_ranking(expert: &ExpertHandle, obs: &ObservationStack) -> Result<Vec<usize>, MedcError> {
    let (spec, params) = expert.model.as_ref().ok_or_else(|| MedcError::Expert("expert has no model".into()))?;
    let dist = policy_forward(spec, params, obs)?;
    let p = dist.probs();
    let mut ranked: Vec<usize> = (0..p.len()).collect();
    // stable sort keeps the lower index first among equal probabilities
    ranked.sort_by(|&a, &b| p[b].total_cmp(&p[a]));
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Expert whose policy head puts all its bias on `action`.
    pub(crate) fn peaked_expert(action: usize) -> ExpertHandle {
        let spec = NetworkSpec::default_for(5, 6, 6, 9);
        let mut p = ParamSet::zeros_like(&spec).unwrap();
        let k = p.policy_head_slots().end - 1;
        p.tensors[k].data_mut()[action] = 3.0;
        ExpertHandle::trained(spec, p, 1.0).unwrap()
    }

    fn obs() -> ObservationStack {
        ObservationStack::zeros(5, 6, 6)
    }

    #[test]
    fn trained_ranking_peaks_first_then_index_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = expert_rank_actions(&peaked_expert(5), &obs(), &mut rng).unwrap();
        assert_eq!(r, vec![5, 0, 1, 2, 3, 4, 6, 7, 8]);
    }

    #[test]
    fn malicious_flips_east_to_west() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = peaked_expert(2);
        let (spec, params) = e.model().unwrap();
        let m = ExpertHandle::malicious(spec.clone(), params.clone(), 1.0).unwrap();
        let r = expert_rank_actions(&m, &obs(), &mut rng).unwrap();
        assert_eq!(r[0], 6);
        let mut sorted = r.clone();
        sorted.sort();
        assert_eq!(sorted, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn malicious_stay_stays() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = peaked_expert(8);
        let (spec, params) = e.model().unwrap();
        let m = ExpertHandle::malicious(spec.clone(), params.clone(), 1.0).unwrap();
        assert_eq!(expert_rank_actions(&m, &obs(), &mut rng).unwrap()[0], 8);
    }

    #[test]
    fn biased_always_leads_with_its_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = ExpertHandle::biased(4, 1.0).unwrap();
        for _ in 0..5 {
            let r = expert_rank_actions(&b, &obs(), &mut rng).unwrap();
            assert_eq!(r, vec![4, 0, 1, 2, 3, 5, 6, 7, 8]);
        }
        assert!(ExpertHandle::biased(9, 1.0).is_err());
    }

    #[test]
    fn random_is_a_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = ExpertHandle::random(1.0).unwrap();
        let mut firsts = [0usize; 9];
        for _ in 0..900 {
            let mut r = expert_rank_actions(&e, &obs(), &mut rng).unwrap();
            firsts[r[0]] += 1;
            r.sort();
            assert_eq!(r, (0..9).collect::<Vec<_>>());
        }
        assert!(firsts.iter().all(|&c| c > 50));
    }

    #[test]
    fn wrong_shapes_are_rejected() {
        let spec = NetworkSpec::default_for(4, 6, 6, 9);
        let p = ParamSet::zeros_like(&spec).unwrap();
        assert!(ExpertHandle::trained(spec, p, 1.0).is_err());
        assert!(ExpertHandle::random(-1.0).is_err());
        assert!(ExpertHandle::random(f64::NAN).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = peaked_expert(0);
        assert!(expert_rank_actions(&e, &ObservationStack::zeros(5, 7, 7), &mut rng).is_err());
    }
}
