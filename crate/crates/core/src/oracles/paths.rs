use std::collections::BTreeMap;

use super::DiscreteHmm;
use crate::kinetic::{discrete_step_distribution, KineticModel, TimeGrid};
use crate::{Error, Result};

/// Exact marginals `P(x_t)` for `t = 0..=grid.horizon` of the uniformized
/// chain, by expanding the full tree of event sequences. Fails once the tree
/// would exceed `node_budget` nodes.
pub fn enumerate_paths<M>(
    model: &M,
    initial: &M::State,
    action: &M::Action,
    grid: &TimeGrid,
    node_budget: usize,
) -> Result<Vec<BTreeMap<M::State, f64>>>
where
    M: KineticModel,
    M::State: Ord,
{
    let mut marginals = vec![BTreeMap::new(); grid.horizon as usize + 1];
    let mut nodes = 0usize;
    // depth-first over (step, state, probability)
    let mut stack = vec![(0u64, initial.clone(), 1.0f64)];
    while let Some((t, x, p)) = stack.pop() {
        nodes += 1;
        if nodes > node_budget {
            return Err(Error::StateExplosion(node_budget));
        }
        *marginals[t as usize].entry(x.clone()).or_insert(0.0) += p;
        if t == grid.horizon {
            continue;
        }
        let d = discrete_step_distribution(model, &x, grid.time_of(t), action, grid.tau)?;
        if d.null > 0.0 {
            stack.push((t + 1, x.clone(), p * d.null));
        }
        for (v, q) in d.events {
            let mut y = x.clone();
            model.apply(&mut y, v);
            stack.push((t + 1, y, p * q));
        }
    }
    Ok(marginals)
}

/// Encodes a uniformized chain on the listed states as an HMM whose hidden
/// state is the index into `states`.
pub fn skm_to_hmm<M>(
    model: &M,
    states: &[M::State],
    action: &M::Action,
    tau: f64,
    observation: Vec<Vec<f64>>,
    initial: Vec<f64>,
) -> Result<DiscreteHmm>
where
    M: KineticModel,
    M::State: PartialEq,
{
    let n = states.len();
    let mut transition = vec![vec![0.0; n]; n];
    for (i, x) in states.iter().enumerate() {
        let d = discrete_step_distribution(model, x, 0.0, action, tau)?;
        transition[i][i] += d.null;
        for (v, q) in d.events {
            let mut y = x.clone();
            model.apply(&mut y, v);
            let j = states
                .iter()
                .position(|s| *s == y)
                .ok_or_else(|| Error::invalid("event leaves the listed state space"))?;
            transition[i][j] += q;
        }
    }
    DiscreteHmm::new(transition, observation, initial)
}
