use rand::Rng;
use rayon::prelude::*;

use crate::kinetic::{advance, KineticModel, StepObserver, TimeGrid};
use crate::rng::stream_rng;
use crate::{Error, Result};

/// `K` particles at a common grid step, with log weights (all zero right
/// after selection) and the ancestor of each slot from the last selection.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble<S> {
    pub particles: Vec<S>,
    pub log_weights: Vec<f64>,
    pub ancestors: Vec<u32>,
    pub step: u64,
}

impl<S: Clone> ParticleEnsemble<S> {
    pub fn new(particles: Vec<S>, step: u64) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::invalid("an ensemble needs at least one particle"));
        }
        let k = particles.len();
        Ok(Self {
            particles,
            log_weights: vec![0.0; k],
            ancestors: (0..k as u32).collect(),
            step,
        })
    }

    /// `K` copies of one state.
    pub fn replicate(state: S, k: usize, step: u64) -> Result<Self> {
        Self::new(vec![state; k], step)
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Normalized weights.
    pub fn weights(&self) -> Vec<f64> {
        let m = self.log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = self.log_weights.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    }

    pub fn is_equally_weighted(&self) -> bool {
        self.log_weights.iter().all(|&l| l == self.log_weights[0])
    }

    /// Effective sample size `1 / sum w^2`.
    pub fn ess(&self) -> f64 {
        1.0 / self.weights().iter().map(|w| w * w).sum::<f64>()
    }
}

/// Advances every particle from the ensemble's step to `to` under `action`.
/// Particle `k` draws from its own stream `(seed, k, from_step)`, so the
/// result does not depend on scheduling.
pub fn pf_mutate<M, O>(
    model: &M,
    ensemble: &mut ParticleEnsemble<M::State>,
    action: &M::Action,
    grid: &TimeGrid,
    to: u64,
    seed: u64,
    observers: &mut [O],
) -> Result<()>
where
    M: KineticModel,
    O: StepObserver<M> + Send,
{
    let from = ensemble.step;
    assert!(observers.is_empty() || observers.len() == ensemble.len());
    if observers.is_empty() {
        ensemble
            .particles
            .par_iter_mut()
            .enumerate()
            .try_for_each(|(k, x)| {
                let mut rng = stream_rng(seed, k as u64, from);
                advance(model, x, action, grid, from, to, &mut rng, &mut ()).map(|_| ())
            })?;
    } else {
        ensemble
            .particles
            .par_iter_mut()
            .zip(observers.par_iter_mut())
            .enumerate()
            .try_for_each(|(k, (x, obs))| {
                let mut rng = stream_rng(seed, k as u64, from);
                advance(model, x, action, grid, from, to, &mut rng, obs).map(|_| ())
            })?;
    }
    ensemble.step = to;
    Ok(())
}

/// `log sum exp`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Systematic resampling: one uniform offset, `K` evenly spaced points on
/// the cumulative weights. Returns how many copies each particle gets.
pub fn systematic_counts<R: Rng + ?Sized>(weights: &[f64], n: usize, rng: &mut R) -> Vec<u32> {
    let total: f64 = weights.iter().sum();
    let u0: f64 = rng.random::<f64>();
    let mut counts = vec![0u32; weights.len()];
    let mut cum = 0.0;
    let mut i = 0;
    for j in 0..n {
        let point = (u0 + j as f64) / n as f64 * total;
        while i + 1 < weights.len() && cum + weights[i] <= point {
            cum += weights[i];
            i += 1;
        }
        counts[i] += 1;
    }
    counts
}

/// Slot assignment for in-place resampling: particles with at least one copy
/// stay in their own slot and extra copies fill the slots of particles with
/// none. `ancestors[k]` is the particle that slot `k` is copied from.
pub fn place_copies(counts: &[u32]) -> Vec<u32> {
    let n = counts.len();
    let mut ancestors: Vec<u32> = (0..n as u32).collect();
    let mut free = (0..n).filter(|&k| counts[k] == 0);
    for (k, &c) in counts.iter().enumerate() {
        for _ in 1..c {
            let slot = free.next().expect("counts sum to n");
            ancestors[slot] = k as u32;
        }
    }
    ancestors
}

/// Copies particles according to `ancestors` (as from [`place_copies`]) and
/// resets the weights.
pub fn apply_selection<S: Clone>(ensemble: &mut ParticleEnsemble<S>, ancestors: Vec<u32>) {
    for (slot, &a) in ancestors.iter().enumerate() {
        let a = a as usize;
        if a != slot {
            let (dst, src) = if slot < a {
                let (lo, hi) = ensemble.particles.split_at_mut(a);
                (&mut lo[slot], &hi[0])
            } else {
                let (lo, hi) = ensemble.particles.split_at_mut(slot);
                (&mut hi[0], &lo[a])
            };
            dst.clone_from(src);
        }
    }
    ensemble.log_weights.iter_mut().for_each(|w| *w = 0.0);
    ensemble.ancestors = ancestors;
}

/// Result of weighting an ensemble by one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// `log sum_k W_k p(y | x_k)` with `W` the normalized prior weights.
    pub log_increment: f64,
    pub resampled: bool,
}

/// Weights the ensemble by `log_likelihoods` and, when `resample` is set,
/// draws `K` particles by systematic resampling.
///
/// Fails with `filter-collapse` when every likelihood is zero. `step` and
/// `observation` only feed that diagnostic.
pub fn pf_select<S: Clone, R: Rng + ?Sized>(
    ensemble: &mut ParticleEnsemble<S>,
    log_likelihoods: &[f64],
    resample: bool,
    rng: &mut R,
    step: u64,
    observation: &dyn Fn() -> String,
) -> Result<Selection> {
    let k = ensemble.len();
    let prior = log_sum_exp(&ensemble.log_weights);
    let posterior: Vec<f64> = ensemble
        .log_weights
        .iter()
        .zip(log_likelihoods)
        .map(|(w, l)| w + l)
        .collect();
    let total = log_sum_exp(&posterior);
    if total == f64::NEG_INFINITY || total.is_nan() {
        return Err(Error::FilterCollapse {
            step,
            observation: observation(),
            max_log_likelihood: log_likelihoods.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        });
    }
    let log_increment = total - prior;
    let uniform = posterior.iter().all(|&w| w == posterior[0]);
    ensemble.log_weights = posterior;
    if !resample {
        return Ok(Selection {
            log_increment,
            resampled: false,
        });
    }
    if uniform {
        // systematic resampling of equal weights is the identity
        ensemble.log_weights.iter_mut().for_each(|w| *w = 0.0);
        ensemble.ancestors = (0..k as u32).collect();
    } else {
        let w = ensemble.weights();
        let counts = systematic_counts(&w, k, rng);
        apply_selection(ensemble, place_copies(&counts));
    }
    Ok(Selection {
        log_increment,
        resampled: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetic::{EventSchema, Skm};

    #[test]
    fn systematic_counts_track_weights() {
        let mut rng = stream_rng(1, 0, 0);
        let w = [0.5, 0.25, 0.125, 0.125];
        let c = systematic_counts(&w, 8, &mut rng);
        assert_eq!(c, vec![4, 2, 1, 1]);
        let c = systematic_counts(&[0.0, 1.0, 0.0], 5, &mut rng);
        assert_eq!(c, vec![0, 5, 0]);
    }

    #[test]
    fn copies_fill_empty_slots() {
        let a = place_copies(&[0, 3, 0, 1]);
        assert_eq!(a, vec![1, 1, 1, 3]);
    }

    #[test]
    fn identical_particles_keep_their_slots() {
        let mut e = ParticleEnsemble::replicate(vec![3i64], 6, 0).unwrap();
        let mut rng = stream_rng(2, 0, 0);
        let ll = vec![(0.25f64).ln(); 6];
        let s = pf_select(&mut e, &ll, true, &mut rng, 1, &|| "y".into()).unwrap();
        assert_eq!(e.ancestors, (0..6).collect::<Vec<_>>());
        assert!((s.log_increment - 0.25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_survivor_takes_every_slot() {
        let mut e = ParticleEnsemble::new((0..5).map(|i| vec![i as i64]).collect(), 0).unwrap();
        let mut rng = stream_rng(3, 0, 0);
        let mut ll = vec![f64::NEG_INFINITY; 5];
        ll[3] = 0.0;
        pf_select(&mut e, &ll, true, &mut rng, 1, &|| "y".into()).unwrap();
        assert!(e.ancestors.iter().all(|&a| a == 3));
        assert!(e.particles.iter().all(|p| p == &vec![3]));
    }

    #[test]
    fn collapse_reports_diagnostics() {
        let mut e = ParticleEnsemble::replicate(vec![0i64], 3, 0).unwrap();
        let mut rng = stream_rng(4, 0, 0);
        let err = pf_select(&mut e, &[f64::NEG_INFINITY; 3], true, &mut rng, 17, &|| "y=5".into())
            .unwrap_err();
        match err {
            Error::FilterCollapse { step, observation, .. } => {
                assert_eq!(step, 17);
                assert_eq!(observation, "y=5");
            }
            other => panic!("{other:?}"),
        }
    }

    fn chain() -> Skm {
        Skm::new(
            vec!["A".into(), "B".into(), "C".into()],
            vec![
                EventSchema::new("ab", &[(0, 1)], &[(1, 1)], 2.0).unwrap(),
                EventSchema::new("ac", &[(0, 1)], &[(2, 1)], 1.0).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn one_step_event_frequencies() {
        // rates (2, 1) and tau = 0.1: P = (0.2, 0.1, 0.7 for no event)
        let model = chain();
        let grid = TimeGrid::new(0.1, 1).unwrap();
        let n = 100_000;
        let mut e = ParticleEnsemble::replicate(vec![1i64, 0, 0], n, 0).unwrap();
        pf_mutate(&model, &mut e, &[], &grid, 1, 5, &mut [] as &mut [()]).unwrap();
        let count = |i: usize| e.particles.iter().filter(|p| p[i] == 1).count() as f64 / n as f64;
        for (p, got) in [(0.2, count(1)), (0.1, count(2)), (0.7, count(0))] {
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            assert!((got - p).abs() < 3.0 * sd, "{got} vs {p}");
        }
    }

    #[test]
    fn frozen_dynamics_leave_particles_alone() {
        let model = chain();
        let grid = TimeGrid::new(0.1, 10).unwrap();
        let mut e = ParticleEnsemble::replicate(vec![0i64, 1, 1], 10, 0).unwrap();
        pf_mutate(&model, &mut e, &[], &grid, 10, 5, &mut [] as &mut [()]).unwrap();
        assert_eq!(e.step, 10);
        assert!(e.particles.iter().all(|p| p == &vec![0, 1, 1]));
    }

    #[test]
    fn certain_event_always_fires() {
        let model = Skm::new(
            vec!["X".into()],
            vec![EventSchema::new("d", &[(0, 1)], &[], 10.0).unwrap()],
        )
        .unwrap();
        let grid = TimeGrid::new(0.1, 1).unwrap();
        let mut e = ParticleEnsemble::replicate(vec![1i64], 50, 0).unwrap();
        pf_mutate(&model, &mut e, &[], &grid, 1, 9, &mut [] as &mut [()]).unwrap();
        assert!(e.particles.iter().all(|p| p == &vec![0]));
    }

    #[test]
    fn resampling_preserves_weighted_mean() {
        let values: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let w: Vec<f64> = (0..20).map(|i| 1.0 + (i % 5) as f64).collect();
        let s: f64 = w.iter().sum();
        let target: f64 = values.iter().zip(&w).map(|(v, w)| v * w / s).sum();
        let reps = 4000;
        let mut rng = stream_rng(6, 0, 0);
        let means: Vec<f64> = (0..reps)
            .map(|_| {
                let c = systematic_counts(&w, 20, &mut rng);
                c.iter().zip(&values).map(|(&c, v)| c as f64 * v).sum::<f64>() / 20.0
            })
            .collect();
        let m = means.iter().sum::<f64>() / reps as f64;
        let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (reps - 1) as f64;
        assert!((m - target).abs() < 3.0 * (var / reps as f64).sqrt() + 1e-9);
    }
}
