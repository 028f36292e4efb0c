use serde::{Deserialize, Serialize};

use super::{pf_mutate, pf_select, ParticleEnsemble};
use crate::kinetic::{KineticModel, StepObserver, TimeGrid};
use crate::rng::{derive_seed, stream_rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub particles: usize,
    pub seed: u64,
    /// Resample only when the effective sample size falls below this
    /// fraction of `K`. `None` resamples at every observation.
    #[serde(default)]
    pub ess_threshold: Option<f64>,
    /// On collapse, redraw the ensemble from the initial particles instead
    /// of failing.
    #[serde(default)]
    pub rejuvenate: bool,
}

impl FilterConfig {
    pub fn new(particles: usize, seed: u64) -> Self {
        Self {
            particles,
            seed,
            ess_threshold: None,
            rejuvenate: false,
        }
    }
}

/// A grid step at which the filter pauses, optionally carrying the index of
/// an observation to condition on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Stop {
    pub step: u64,
    pub observation: Option<usize>,
}

/// Merges observation steps (`obs_steps[i]` carries observation `i`) with
/// extra report steps into a sorted stop list.
pub fn merge_stops(obs_steps: &[u64], report_steps: &[u64]) -> Vec<Stop> {
    let mut stops: Vec<Stop> = obs_steps
        .iter()
        .enumerate()
        .map(|(i, &step)| Stop {
            step,
            observation: Some(i),
        })
        .collect();
    for &step in report_steps {
        if !obs_steps.contains(&step) {
            stops.push(Stop {
                step,
                observation: None,
            });
        }
    }
    stops.sort();
    stops.dedup_by_key(|s| s.step);
    stops
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterOutput {
    /// `log p(y_{1:T})` estimate.
    pub log_evidence: f64,
    /// `(step, log p(y_t | y_{1:t-1}))` at each observation.
    pub increments: Vec<(u64, f64)>,
    pub resample_count: usize,
    pub rejuvenations: usize,
}

/// What the filter hands to the caller at each stop: the selected ensemble,
/// the stop index and the per-particle observers that recorded the interval
/// leading to it (already permuted by the selection).
pub type StopCallback<'a, S, O> = dyn FnMut(&ParticleEnsemble<S>, usize, &mut Vec<O>) -> Result<()> + 'a;

/// Bootstrap particle filter: between stops every particle follows the
/// uniformized dynamics; at a stop with an observation the ensemble is
/// weighted by `log_likelihood(state, observation)` and resampled.
#[allow(clippy::too_many_arguments)]
pub fn run_filter<M, O, F>(
    model: &M,
    ensemble: &mut ParticleEnsemble<M::State>,
    action: &M::Action,
    grid: &TimeGrid,
    stops: &[Stop],
    log_likelihood: F,
    describe_observation: &dyn Fn(usize) -> String,
    config: &FilterConfig,
    make_observer: &(dyn Fn() -> O + Sync),
    on_stop: &mut StopCallback<'_, M::State, O>,
) -> Result<FilterOutput>
where
    M: KineticModel,
    O: StepObserver<M> + Send + Clone,
    F: Fn(&M::State, usize) -> f64 + Sync,
{
    use rayon::prelude::*;

    let initial = config.rejuvenate.then(|| ensemble.clone());
    let mut out = FilterOutput::default();
    let select_seed = derive_seed(config.seed, 1);
    let mutate_seed = derive_seed(config.seed, 2);
    for (si, stop) in stops.iter().enumerate() {
        if stop.step < ensemble.step {
            return Err(Error::invalid("filter stops must not go back in time"));
        }
        let mut observers: Vec<O> = (0..ensemble.len()).map(|_| make_observer()).collect();
        pf_mutate(model, ensemble, action, grid, stop.step, mutate_seed, &mut observers)?;
        if let Some(oi) = stop.observation {
            let ll: Vec<f64> = ensemble
                .particles
                .par_iter()
                .map(|x| log_likelihood(x, oi))
                .collect();
            let resample = match config.ess_threshold {
                None => true,
                Some(th) => {
                    let mut tmp = ensemble.log_weights.clone();
                    tmp.iter_mut().zip(&ll).for_each(|(w, l)| *w += l);
                    let probe = ParticleEnsemble {
                        particles: Vec::<()>::new(),
                        log_weights: tmp,
                        ancestors: Vec::new(),
                        step: 0,
                    };
                    probe.ess() < th * ensemble.len() as f64
                }
            };
            let mut rng = stream_rng(select_seed, si as u64, stop.step);
            let describe = || describe_observation(oi);
            let sel = match pf_select(ensemble, &ll, resample, &mut rng, stop.step, &describe) {
                Err(Error::FilterCollapse { .. }) if initial.is_some() => {
                    out.rejuvenations += 1;
                    *ensemble = initial.clone().expect("checked");
                    let seed = derive_seed(config.seed, 1000 + si as u64);
                    pf_mutate(model, ensemble, action, grid, stop.step, seed, &mut [] as &mut [O])?;
                    observers = (0..ensemble.len()).map(|_| make_observer()).collect();
                    let ll: Vec<f64> = ensemble
                        .particles
                        .par_iter()
                        .map(|x| log_likelihood(x, oi))
                        .collect();
                    pf_select(ensemble, &ll, true, &mut rng, stop.step, &describe)?
                }
                other => other?,
            };
            if sel.resampled {
                out.resample_count += 1;
                let anc = &ensemble.ancestors;
                if anc.iter().enumerate().any(|(k, &a)| a as usize != k) {
                    let old = observers.clone();
                    for (slot, &a) in anc.iter().enumerate() {
                        if a as usize != slot {
                            observers[slot] = old[a as usize].clone();
                        }
                    }
                }
            } else {
                ensemble.ancestors = (0..ensemble.len() as u32).collect();
            }
            out.log_evidence += sel.log_increment;
            out.increments.push((stop.step, sel.log_increment));
        } else {
            ensemble.ancestors = (0..ensemble.len() as u32).collect();
        }
        on_stop(ensemble, si, &mut observers)?;
    }
    Ok(out)
}

/// Ancestral lines: `lines[t][k]` is the slot at stop `t` of the ancestor of
/// final particle `k`, following `j_T = k`, `j_{t-1} = a_t[j_t]` where
/// `ancestors[t]` are the selection indices recorded at stop `t`.
pub fn pf_smooth(ancestors: &[Vec<u32>]) -> Vec<Vec<u32>> {
    let Some(last) = ancestors.last() else {
        return Vec::new();
    };
    let k = last.len();
    let mut lines = vec![Vec::new(); ancestors.len()];
    let mut j: Vec<u32> = (0..k as u32).collect();
    for t in (0..ancestors.len()).rev() {
        lines[t] = j.clone();
        j = j.iter().map(|&i| ancestors[t][i as usize]).collect();
    }
    lines
}

/// Filtering history with per-stop states, enough to rebuild smoothed
/// trajectories.
#[derive(Debug, Clone)]
pub struct ParticleHistory<S> {
    pub steps: Vec<u64>,
    pub states: Vec<Vec<S>>,
    pub ancestors: Vec<Vec<u32>>,
}

impl<S: Clone> ParticleHistory<S> {
    pub fn new() -> Self {
        Self {
            steps: Vec::new(),
            states: Vec::new(),
            ancestors: Vec::new(),
        }
    }

    pub fn record(&mut self, ensemble: &ParticleEnsemble<S>) {
        self.steps.push(ensemble.step);
        self.states.push(ensemble.particles.clone());
        self.ancestors.push(ensemble.ancestors.clone());
    }

    /// Smoothed state trajectories, one per final particle.
    pub fn smoothed(&self) -> Vec<SmoothedTrajectory<S>> {
        let lines = pf_smooth(&self.ancestors);
        let k = lines.last().map_or(0, Vec::len);
        (0..k)
            .map(|i| SmoothedTrajectory {
                indices: lines.iter().map(|l| l[i]).collect(),
                states: lines
                    .iter()
                    .zip(&self.states)
                    .map(|(l, s)| s[l[i] as usize].clone())
                    .collect(),
            })
            .collect()
    }
}

impl<S: Clone> Default for ParticleHistory<S> {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedTrajectory<S> {
    pub indices: Vec<u32>,
    pub states: Vec<S>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lines_follow_ancestors_backwards() {
        let anc = vec![vec![0, 1, 2], vec![0, 0, 2], vec![2, 1, 1]];
        let lines = pf_smooth(&anc);
        assert_eq!(lines[2], vec![0, 1, 2]);
        assert_eq!(lines[1], vec![2, 1, 1]);
        assert_eq!(lines[0], vec![2, 0, 0]);
    }

    #[test]
    fn stops_merge_sorted() {
        let s = merge_stops(&[10, 20], &[5, 20, 30]);
        let steps: Vec<u64> = s.iter().map(|s| s.step).collect();
        assert_eq!(steps, vec![5, 10, 20, 30]);
        assert_eq!(s[2].observation, Some(1));
        assert_eq!(s[0].observation, None);
    }
}
