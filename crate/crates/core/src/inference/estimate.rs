use serde::{Deserialize, Serialize};

use super::{pf_mutate, ParticleEnsemble};
use crate::kinetic::{KineticModel, TimeGrid};
use crate::Result;

/// Posterior summary of one location's count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationEstimate {
    pub mean: f64,
    pub p10: f64,
    pub p90: f64,
}

/// Weighted mean and 10%/90% quantiles per location of `counts(particle)`.
/// Quantiles are the smallest value whose cumulative weight reaches the
/// level.
pub fn summarize_counts<S>(particles: &[S], weights: &[f64], counts: impl Fn(&S) -> &[u32]) -> Vec<LocationEstimate> {
    let Some(first) = particles.first() else {
        return Vec::new();
    };
    let n_loc = counts(first).len();
    let total: f64 = weights.iter().sum();
    let mut out = Vec::with_capacity(n_loc);
    let mut column: Vec<(u32, f64)> = Vec::with_capacity(particles.len());
    for l in 0..n_loc {
        column.clear();
        column.extend(particles.iter().zip(weights).map(|(p, &w)| (counts(p)[l], w)));
        let mean = column.iter().map(|&(c, w)| c as f64 * w).sum::<f64>() / total;
        column.sort_by_key(|&(c, _)| c);
        let quantile = |q: f64| {
            let mut acc = 0.0;
            for &(c, w) in column.iter() {
                acc += w;
                if acc >= q * total - 1e-12 * total {
                    return c as f64;
                }
            }
            column.last().map_or(0.0, |&(c, _)| c as f64)
        };
        out.push(LocationEstimate {
            mean,
            p10: quantile(0.1),
            p90: quantile(0.9),
        });
    }
    out
}

/// Count estimate now (`horizon_steps == 0`) or `horizon_steps` ahead by
/// propagating a copy of the ensemble without selection. `subset` limits the
/// forecast to an evenly strided subset of particles.
#[allow(clippy::too_many_arguments)]
pub fn estimate_state<M>(
    model: &M,
    ensemble: &ParticleEnsemble<M::State>,
    action: &M::Action,
    grid: &TimeGrid,
    horizon_steps: u64,
    seed: u64,
    subset: Option<usize>,
    counts: impl Fn(&M::State) -> &[u32],
) -> Result<Vec<LocationEstimate>>
where
    M: KineticModel,
{
    let weights = ensemble.weights();
    if horizon_steps == 0 {
        return Ok(summarize_counts(&ensemble.particles, &weights, counts));
    }
    let k = ensemble.len();
    let m = subset.unwrap_or(k).clamp(1, k);
    let picks: Vec<usize> = (0..m).map(|i| i * k / m).collect();
    let mut copy = ParticleEnsemble {
        particles: picks.iter().map(|&i| ensemble.particles[i].clone()).collect(),
        log_weights: picks.iter().map(|&i| ensemble.log_weights[i]).collect(),
        ancestors: (0..m as u32).collect(),
        step: ensemble.step,
    };
    pf_mutate(model, &mut copy, action, grid, ensemble.step + horizon_steps, seed, &mut [] as &mut [()])?;
    Ok(summarize_counts(&copy.particles, &copy.weights(), counts))
}
