use rand::Rng;

use super::{ControlProblem, Decision, FeatureKey, Policy, RewardSegment, Rollout, UnitTrace};
use crate::oracles::TabularMdp;
use crate::rng::StreamRng;
use crate::traffic::RewardBounds;
use crate::Result;

/// A tabular MDP as a planning problem: the feature key is the state, and
/// rewards are mapped linearly onto `[0, 1]` using the table's extremes.
#[derive(Debug, Clone)]
pub struct MdpProblem {
    pub mdp: TabularMdp,
    pub bounds: RewardBounds,
}

impl MdpProblem {
    pub fn new(mdp: TabularMdp) -> Result<Self> {
        let all = mdp.reward.iter().flatten();
        let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
        let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
        let bounds = RewardBounds::new(lo, hi)?;
        Ok(Self { mdp, bounds })
    }

    pub fn key(s: usize) -> FeatureKey {
        FeatureKey::new(s as u32, 0)
    }

    /// Per-state action distributions of `policy`.
    pub fn table(&self, policy: &Policy) -> Vec<Vec<f64>> {
        (0..self.mdp.num_states())
            .map(|s| policy.row(Self::key(s), self.mdp.num_actions(s)))
            .collect()
    }

    pub fn greedy(&self, policy: &Policy) -> Vec<usize> {
        (0..self.mdp.num_states())
            .map(|s| policy.greedy(Self::key(s), self.mdp.num_actions(s)))
            .collect()
    }
}

impl ControlProblem for MdpProblem {
    type State = usize;

    fn num_actions(&self, key: FeatureKey) -> usize {
        self.mdp.num_actions(key.class as usize)
    }

    fn rollout(&self, start: &usize, policy: &Policy, length: u64, rng: &mut StreamRng) -> Result<Rollout> {
        let mut s = *start;
        let mut unit = UnitTrace::default();
        let mut clamped = 0;
        for t in 0..=length {
            let n = self.mdp.num_actions(s);
            let key = Self::key(s);
            let a = policy.sample(key, n, rng);
            unit.decisions.push(Decision {
                step: t,
                key,
                action: a as u16,
                actions: n as u16,
            });
            let (p, c) = self.bounds.probability(self.mdp.reward[s][a]);
            clamped += c as u64;
            unit.rewards.push(RewardSegment {
                from: t,
                to: t + 1,
                probability: p,
            });
            if t < length {
                let u: f64 = rng.random();
                let row = &self.mdp.transition[s][a];
                let mut acc = 0.0;
                let mut next = row.len() - 1;
                for (j, &p) in row.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        next = j;
                        break;
                    }
                }
                s = next;
            }
        }
        Ok(Rollout {
            length,
            units: vec![unit],
            clamped,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{policy_evaluation, value_iteration};
    use crate::planner::{plan, sample_rollouts, HorizonMixture, PlanConfig, PlanStatus};

    fn chain() -> TabularMdp {
        // action 1 moves right, action 0 stays; reward only in state 1
        TabularMdp::new(
            vec![
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            ],
            vec![vec![0.0, 0.0], vec![1.0, 0.2]],
            0.9,
        )
        .unwrap()
    }

    #[test]
    fn finite_rollouts_have_fixed_length() {
        let p = MdpProblem::new(chain()).unwrap();
        let b = sample_rollouts(&p, &[0, 1], &Policy::uniform(), &HorizonMixture::finite(2), 50, 1).unwrap();
        for r in &b.rollouts {
            assert_eq!(r.length, 2);
            assert_eq!(r.units[0].decisions.len(), 3);
        }
    }

    #[test]
    fn deterministic_rollouts_are_identical() {
        let mdp = TabularMdp::new(vec![vec![vec![1.0]]], vec![vec![1.0]], 0.5).unwrap();
        let mut mdp = mdp;
        mdp.reward[0][0] = 1.0;
        let p = MdpProblem {
            mdp,
            bounds: RewardBounds::new(0.0, 1.0).unwrap(),
        };
        let b = sample_rollouts(&p, &[0], &Policy::uniform(), &HorizonMixture::finite(4), 10, 2).unwrap();
        assert!(b.rollouts.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn single_action_is_already_optimal() {
        let mdp = TabularMdp::new(
            vec![vec![vec![0.5, 0.5]], vec![vec![0.5, 0.5]]],
            vec![vec![0.0], vec![1.0]],
            0.9,
        )
        .unwrap();
        let p = MdpProblem::new(mdp).unwrap();
        let m = HorizonMixture::discounted(0.9).unwrap();
        let r = plan(&p, &[0, 1], &m, &Policy::uniform(), &PlanConfig::new(100, 3)).unwrap();
        assert_eq!(r.status, PlanStatus::NoImprovement);
        assert_eq!(r.trace.len(), 1);
        assert_eq!(r.policy, Policy::uniform());
    }

    #[test]
    fn chain_policy_matches_value_iteration() {
        let mdp = chain();
        let (_, best) = value_iteration(&mdp, 1e-12);
        let p = MdpProblem::new(mdp.clone()).unwrap();
        let m = HorizonMixture::discounted(0.9).unwrap();
        let mut config = PlanConfig::new(5000, 4);
        config.max_iterations = 50;
        let r = plan(&p, &[0, 1], &m, &Policy::uniform(), &config).unwrap();
        assert_eq!(p.greedy(&r.policy), best);
        let v = policy_evaluation(&mdp, &p.table(&r.policy));
        let (opt, _) = value_iteration(&mdp, 1e-12);
        for s in 0..2 {
            assert!(v[s] >= 0.95 * opt[s], "{v:?} vs {opt:?}");
        }
    }
}
