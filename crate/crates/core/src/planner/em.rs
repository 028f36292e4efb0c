use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FeatureKey, HorizonMixture, Policy};
use crate::rng::{derive_seed, stream_rng, StreamRng};
use crate::{Error, Result};

/// One policy draw made during a rollout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    /// Rollout step at which the action took effect.
    pub step: u64,
    pub key: FeatureKey,
    pub action: u16,
    pub actions: u16,
}

/// Reward probability `p(R=1 | x_t, a_t)` held constant over steps
/// `[from, to)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardSegment {
    pub from: u64,
    pub to: u64,
    pub probability: f64,
}

/// Decisions and reward stream of one decision maker in a rollout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UnitTrace {
    pub decisions: Vec<Decision>,
    pub rewards: Vec<RewardSegment>,
}

impl UnitTrace {
    /// `sum_{t = from}^{length} p(t) p(R=1 | x_t, a_t)`.
    pub fn reward_to_go(&self, from: u64, length: u64, mixture: &HorizonMixture) -> f64 {
        self.rewards
            .iter()
            .map(|s| s.probability * mixture.step_mass(s.from.max(from), s.to.min(length + 1)))
            .sum()
    }
}

/// One sampled trajectory of length `T^k`. A rollout may hold several
/// units (e.g. agents) that each receive their own reward; the rollout's
/// reward probability is their mean.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Rollout {
    pub length: u64,
    pub units: Vec<UnitTrace>,
    /// Reward evaluations that had to be clamped into the bounds.
    pub clamped: u64,
}

impl Rollout {
    pub fn value(&self, mixture: &HorizonMixture) -> f64 {
        if self.units.is_empty() {
            return 0.0;
        }
        self.units
            .iter()
            .map(|u| u.reward_to_go(0, self.length, mixture))
            .sum::<f64>()
            / self.units.len() as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBatch {
    pub rollouts: Vec<Rollout>,
}

/// A decision process the planner can sample from.
pub trait ControlProblem: Sync {
    type State: Clone + Send + Sync;

    fn num_actions(&self, key: FeatureKey) -> usize;

    /// Simulates steps `0..=length` from `start`, drawing actions from
    /// `policy`.
    fn rollout(&self, start: &Self::State, policy: &Policy, length: u64, rng: &mut StreamRng) -> Result<Rollout>;
}

/// Draws `count` rollouts, each from a uniformly chosen belief particle
/// with its length drawn from the mixture.
pub fn sample_rollouts<P: ControlProblem>(
    problem: &P,
    belief: &[P::State],
    policy: &Policy,
    mixture: &HorizonMixture,
    count: usize,
    seed: u64,
) -> Result<RolloutBatch> {
    if belief.is_empty() {
        return Err(Error::invalid("belief has no particles"));
    }
    let rollouts = (0..count)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k as u64, 0);
            let start = &belief[rng.random_range(0..belief.len())];
            let length = mixture.sample_length(&mut rng);
            problem.rollout(start, policy, length, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RolloutBatch { rollouts })
}

/// `(1/K) sum_k sum_t p(t) p(R=1 | x_t^k, a_t^k)`.
pub fn estimate_value(batch: &RolloutBatch, mixture: &HorizonMixture) -> f64 {
    value_with_error(batch, mixture).0
}

/// Value estimate and its Monte Carlo standard error.
pub fn value_with_error(batch: &RolloutBatch, mixture: &HorizonMixture) -> (f64, f64) {
    let k = batch.rollouts.len();
    if k == 0 {
        return (0.0, 0.0);
    }
    let v: Vec<f64> = batch.rollouts.iter().map(|r| r.value(mixture)).collect();
    let mean = v.iter().sum::<f64>() / k as f64;
    let var = if k > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1) as f64
    } else {
        0.0
    };
    (mean, (var / k as f64).sqrt())
}

/// Reward-weighted visitation of `(key, action)` pairs, normalized to sum
/// to one over the table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Posteriors {
    pub weights: BTreeMap<FeatureKey, Vec<f64>>,
    /// Normalizer before scaling.
    pub total: f64,
}

/// Weights each decision by its unit's reward-to-go from the decision step.
pub fn e_step_posteriors(batch: &RolloutBatch, mixture: &HorizonMixture) -> Result<Posteriors> {
    let partial: Vec<BTreeMap<FeatureKey, Vec<f64>>> = batch
        .rollouts
        .par_iter()
        .map(|r| {
            let mut table: BTreeMap<FeatureKey, Vec<f64>> = BTreeMap::new();
            for unit in &r.units {
                for d in &unit.decisions {
                    let w = unit.reward_to_go(d.step, r.length, mixture);
                    let row = table.entry(d.key).or_insert_with(|| vec![0.0; d.actions as usize]);
                    row[d.action as usize] += w;
                }
            }
            table
        })
        .collect();
    let mut weights: BTreeMap<FeatureKey, Vec<f64>> = BTreeMap::new();
    for table in partial {
        for (k, row) in table {
            match weights.get_mut(&k) {
                Some(acc) => acc.iter_mut().zip(&row).for_each(|(a, b)| *a += b),
                None => {
                    weights.insert(k, row);
                }
            }
        }
    }
    let total: f64 = weights.values().flatten().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroRewardBatch);
    }
    for row in weights.values_mut() {
        row.iter_mut().for_each(|w| *w /= total);
    }
    Ok(Posteriors { weights, total })
}

/// `theta(a | x) = W(x, a) / sum_a' W(x, a')`; rows never visited keep
/// their previous values.
pub fn m_step_update(posteriors: &Posteriors, policy: &Policy) -> Policy {
    let mut next = policy.clone();
    for (key, row) in &posteriors.weights {
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            next.set_row(*key, row.clone()).expect("nonnegative row with positive sum");
        }
    }
    next
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    /// Rollouts per iteration.
    pub rollouts: usize,
    pub max_iterations: usize,
    /// Relative improvement of the value over `window` iterations below
    /// which planning stops.
    pub tolerance: f64,
    pub window: usize,
    pub seed: u64,
}

impl PlanConfig {
    pub fn new(rollouts: usize, seed: u64) -> Self {
        Self {
            rollouts,
            max_iterations: 200,
            tolerance: 1e-3,
            window: 5,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanStatus {
    Converged,
    /// The first M-step returned the initial policy.
    NoImprovement,
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanIteration {
    pub iteration: usize,
    pub value: f64,
    pub std_error: f64,
    pub clamped: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    /// Policy with the highest estimated value.
    pub policy: Policy,
    pub value: f64,
    /// Policy after the last M-step.
    pub last_policy: Policy,
    pub status: PlanStatus,
    pub trace: Vec<PlanIteration>,
}

/// EM policy search: sample rollouts under the current policy, weight
/// decisions by reward-to-go, refit the policy table, repeat.
pub fn plan<P: ControlProblem>(
    problem: &P,
    belief: &[P::State],
    mixture: &HorizonMixture,
    initial: &Policy,
    config: &PlanConfig,
) -> Result<PlanResult> {
    mixture.validate()?;
    let mut policy = initial.clone();
    let mut best = (f64::NEG_INFINITY, initial.clone());
    let mut trace: Vec<PlanIteration> = Vec::new();
    let mut status = PlanStatus::MaxIterations;
    for it in 1..=config.max_iterations {
        let batch = sample_rollouts(problem, belief, &policy, mixture, config.rollouts, derive_seed(config.seed, it as u64))?;
        let (value, std_error) = value_with_error(&batch, mixture);
        trace.push(PlanIteration {
            iteration: it,
            value,
            std_error,
            clamped: batch.rollouts.iter().map(|r| r.clamped).sum(),
        });
        if value > best.0 {
            best = (value, policy.clone());
        }
        let post = e_step_posteriors(&batch, mixture)?;
        let next = m_step_update(&post, &policy);
        if next.distance(&policy) < 1e-12 {
            status = if it == 1 {
                PlanStatus::NoImprovement
            } else {
                PlanStatus::Converged
            };
            break;
        }
        policy = next;
        let w = config.window;
        if w > 0 && trace.len() > w {
            let base = trace[trace.len() - 1 - w].value;
            let recent = trace[trace.len() - w..].iter().map(|p| p.value).fold(f64::NEG_INFINITY, f64::max);
            if (recent - base) / base.abs().max(f64::MIN_POSITIVE) < config.tolerance {
                status = PlanStatus::Converged;
                break;
            }
        }
    }
    Ok(PlanResult {
        policy: best.1,
        value: best.0,
        last_policy: policy,
        status,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(decisions: &[(u64, u32, u16)], rewards: &[(u64, u64, f64)]) -> UnitTrace {
        UnitTrace {
            decisions: decisions
                .iter()
                .map(|&(step, class, action)| Decision {
                    step,
                    key: FeatureKey::new(class, 0),
                    action,
                    actions: 2,
                })
                .collect(),
            rewards: rewards
                .iter()
                .map(|&(from, to, probability)| RewardSegment { from, to, probability })
                .collect(),
        }
    }

    fn batch(units: Vec<(u64, UnitTrace)>) -> RolloutBatch {
        RolloutBatch {
            rollouts: units
                .into_iter()
                .map(|(length, u)| Rollout {
                    length,
                    units: vec![u],
                    clamped: 0,
                })
                .collect(),
        }
    }

    #[test]
    fn certain_reward_has_unit_value() {
        let m = HorizonMixture::finite(3);
        let b = batch(vec![(3, unit(&[], &[(0, 4, 1.0)])), (3, unit(&[], &[(0, 2, 1.0), (2, 4, 1.0)]))]);
        assert!((estimate_value(&b, &m) - 1.0).abs() < 1e-15);
        let z = batch(vec![(3, unit(&[], &[(0, 4, 0.0)]))]);
        assert_eq!(estimate_value(&z, &m), 0.0);
    }

    #[test]
    fn hand_summed_value() {
        // H = 1, rewards p(R|s,a) at t = 0 and t = 1
        let m = HorizonMixture::finite(1);
        let b = batch(vec![
            (1, unit(&[], &[(0, 1, 0.2), (1, 2, 0.9)])),
            (1, unit(&[], &[(0, 1, 0.6), (1, 2, 0.3)])),
        ]);
        let expected = 0.5 * (0.5 * 0.2 + 0.5 * 0.9) + 0.5 * (0.5 * 0.6 + 0.5 * 0.3);
        assert!((estimate_value(&b, &m) - expected).abs() < 1e-12);
    }

    #[test]
    fn posterior_masses_follow_reward_to_go() {
        let m = HorizonMixture::finite(3);
        let b = batch(vec![
            (3, unit(&[(0, 0, 0)], &[(0, 4, 0.75)])),
            (3, unit(&[(0, 1, 1)], &[(0, 4, 0.25)])),
        ]);
        let p = e_step_posteriors(&b, &m).unwrap();
        assert!((p.weights[&FeatureKey::new(0, 0)][0] - 0.75).abs() < 1e-12);
        assert!((p.weights[&FeatureKey::new(1, 0)][1] - 0.25).abs() < 1e-12);
        let total: f64 = p.weights.values().flatten().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_rollout_weights_by_reward_to_go() {
        let m = HorizonMixture::finite(3);
        let b = batch(vec![(3, unit(&[(0, 0, 1), (2, 1, 0)], &[(0, 2, 1.0), (2, 4, 0.5)]))]);
        let p = e_step_posteriors(&b, &m).unwrap();
        // rtg(0) = (2 + 1) / 4, rtg(2) = 1 / 4
        assert!((p.weights[&FeatureKey::new(0, 0)][1] - 0.75).abs() < 1e-12);
        assert!((p.weights[&FeatureKey::new(1, 0)][0] - 0.25).abs() < 1e-12);
        assert_eq!(p.weights[&FeatureKey::new(0, 0)][0], 0.0);
    }

    #[test]
    fn zero_reward_batch_is_an_error() {
        let m = HorizonMixture::finite(3);
        let b = batch(vec![(3, unit(&[(0, 0, 0)], &[(0, 4, 0.0)]))]);
        assert!(matches!(e_step_posteriors(&b, &m), Err(Error::ZeroRewardBatch)));
    }

    #[test]
    fn m_step_rules() {
        let mut post = Posteriors::default();
        post.weights.insert(FeatureKey::new(0, 0), vec![0.4, 0.0]);
        post.weights.insert(FeatureKey::new(1, 0), vec![0.3, 0.3]);
        post.weights.insert(FeatureKey::new(2, 0), vec![0.0, 0.0]);
        let mut prior = Policy::uniform();
        prior.set_row(FeatureKey::new(2, 0), vec![0.9, 0.1]).unwrap();
        let p = m_step_update(&post, &prior);
        assert_eq!(p.row(FeatureKey::new(0, 0), 2), vec![1.0, 0.0]);
        assert_eq!(p.row(FeatureKey::new(1, 0), 2), vec![0.5, 0.5]);
        assert_eq!(p.row(FeatureKey::new(2, 0), 2), vec![0.9, 0.1]);
    }
}
