use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::rng::stream_rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    /// `transition[s][a][s']`
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `reward[s][a]`
    pub reward: Vec<Vec<f64>>,
    pub discount: f64,
}

impl TabularMdp {
    pub fn new(transition: Vec<Vec<Vec<f64>>>, reward: Vec<Vec<f64>>, discount: f64) -> Result<Self> {
        let s = transition.len();
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::invalid(format!("discount {discount} outside [0, 1)")));
        }
        if reward.len() != s {
            return Err(Error::invalid("reward table has wrong number of states"));
        }
        for (i, rows) in transition.iter().enumerate() {
            if rows.len() != reward[i].len() {
                return Err(Error::invalid(format!("state {i}: action counts disagree")));
            }
            for row in rows {
                let sum: f64 = row.iter().sum();
                if row.len() != s || row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
                    return Err(Error::invalid(format!("state {i}: transition row not stochastic")));
                }
            }
        }
        Ok(Self {
            transition,
            reward,
            discount,
        })
    }

    pub fn num_states(&self) -> usize {
        self.transition.len()
    }

    pub fn num_actions(&self, s: usize) -> usize {
        self.reward[s].len()
    }

    fn q(&self, v: &[f64], s: usize, a: usize) -> f64 {
        self.reward[s][a]
            + self.discount
                * self.transition[s][a]
                    .iter()
                    .zip(v)
                    .map(|(p, x)| p * x)
                    .sum::<f64>()
    }
}

/// Iterates the Bellman optimality operator from zero until the sup-norm
/// residual drops below `tolerance`. Ties in the greedy policy go to the
/// lowest action index.
pub fn value_iteration(mdp: &TabularMdp, tolerance: f64) -> (Vec<f64>, Vec<usize>) {
    let n = mdp.num_states();
    let mut v = vec![0.0; n];
    loop {
        let next: Vec<f64> = (0..n)
            .map(|s| {
                (0..mdp.num_actions(s))
                    .map(|a| mdp.q(&v, s, a))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let residual = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if residual < tolerance {
            break;
        }
    }
    let policy = (0..n)
        .map(|s| {
            let qs: Vec<f64> = (0..mdp.num_actions(s)).map(|a| mdp.q(&v, s, a)).collect();
            let best = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let eps = 1e-10 * best.abs().max(1.0);
            qs.iter().position(|&q| q >= best - eps).unwrap_or(0)
        })
        .collect();
    (v, policy)
}

/// Exact value of a stochastic policy `policy[s][a]` from the linear system
/// `(I - gamma P_pi) V = R_pi`.
pub fn policy_evaluation(mdp: &TabularMdp, policy: &[Vec<f64>]) -> Vec<f64> {
    let n = mdp.num_states();
    let mut m = DMatrix::<f64>::identity(n, n);
    let mut r = DVector::<f64>::zeros(n);
    for s in 0..n {
        for (a, &pa) in policy[s].iter().enumerate() {
            r[s] += pa * mdp.reward[s][a];
            for (s2, &p) in mdp.transition[s][a].iter().enumerate() {
                m[(s, s2)] -= mdp.discount * pa * p;
            }
        }
    }
    let v = m.lu().solve(&r).expect("I - gamma P is nonsingular for gamma < 1");
    v.iter().copied().collect()
}

/// Seeded random MDP with dense transitions and rewards in `[0, 1]`.
pub fn random_mdp(seed: u64, states: usize, actions: usize, discount: f64) -> TabularMdp {
    let mut rng = stream_rng(seed, 0x6d6470, 0);
    let transition = (0..states)
        .map(|_| {
            (0..actions)
                .map(|_| {
                    let w: Vec<f64> = (0..states).map(|_| rng.random::<f64>().powi(2)).collect();
                    let s: f64 = w.iter().sum();
                    w.into_iter().map(|x| x / s).collect()
                })
                .collect()
        })
        .collect();
    let reward = (0..states)
        .map(|_| (0..actions).map(|_| rng.random::<f64>()).collect())
        .collect();
    TabularMdp::new(transition, reward, discount).expect("valid by construction")
}
