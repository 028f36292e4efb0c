use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{merge_stops, pf_smooth, run_filter, FilterConfig, FilterOutput, ParticleEnsemble, Stop};
use crate::kinetic::{KineticModel, Skm, StepObserver, TimeGrid};
use crate::{Error, Result};

/// A kinetic model whose rate constants are `c = exp(phi_j)` for tied
/// parameters `phi`, so that every hazard splits as
/// `h_0 = sum_j exp(phi_j) G_j(x) + H(x)`.
pub trait RateModel: KineticModel + Sized {
    fn num_params(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn with_params(&self, phi: &[f64]) -> Self;

    /// Writes `G_j` into `basis` and returns the untied remainder `H`.
    fn hazard_basis(&self, state: &Self::State, t: f64, action: &Self::Action, basis: &mut [f64]) -> f64;

    /// `(Some(j), g)` with `h_v = exp(phi_j) g`, or `(None, h_v)` for an
    /// untied event.
    fn event_basis(&self, state: &Self::State, t: f64, action: &Self::Action, v: usize) -> (Option<usize>, f64);
}

/// SKM with events tied to log-rate parameters. Untied events keep their
/// fixed rate constants. Custom rate laws must be linear in the rate
/// constant.
#[derive(Debug, Clone)]
pub struct TiedSkm {
    pub skm: Skm,
    pub tying: Vec<Option<usize>>,
    phi: Vec<f64>,
}

impl TiedSkm {
    /// Parameters start at the log of the first tied event's rate constant.
    pub fn new(skm: Skm, tying: Vec<Option<usize>>) -> Result<Self> {
        if tying.len() != skm.events.len() {
            return Err(Error::invalid("tying must list every event"));
        }
        let n = tying.iter().flatten().map(|&j| j + 1).max().unwrap_or(0);
        let mut phi = vec![f64::NAN; n];
        for (v, j) in tying.iter().enumerate() {
            if let Some(j) = *j {
                if phi[j].is_nan() {
                    phi[j] = skm.events[v].rate_constant.ln();
                }
            }
        }
        if phi.iter().any(|p| p.is_nan()) {
            return Err(Error::invalid("every parameter needs at least one event"));
        }
        let mut out = Self { skm, tying, phi };
        out = out.with_params(&out.phi.clone());
        Ok(out)
    }

    /// One parameter per event.
    pub fn untied(skm: Skm) -> Result<Self> {
        let n = skm.events.len();
        Self::new(skm, (0..n).map(Some).collect())
    }

    pub fn rate_constants(&self) -> Vec<f64> {
        self.phi.iter().map(|p| p.exp()).collect()
    }

    fn g(&self, v: usize, x: &[i64], action: &[f64]) -> f64 {
        let a = action.get(v).copied().unwrap_or(1.0);
        match &self.skm.laws[v] {
            crate::kinetic::RateLaw::MassAction => a * self.skm.events[v].mass_action_factor(x),
            crate::kinetic::RateLaw::Custom(f) => a * f(x, 1.0),
        }
    }
}

impl KineticModel for TiedSkm {
    type State = Vec<i64>;
    type Action = [f64];

    fn num_events(&self) -> usize {
        self.skm.num_events()
    }
    fn hazards(&self, s: &Vec<i64>, t: f64, a: &[f64], out: &mut Vec<(usize, f64)>) {
        self.skm.hazards(s, t, a, out)
    }
    fn total_hazard(&self, s: &Vec<i64>, t: f64, a: &[f64]) -> f64 {
        self.skm.total_hazard(s, t, a)
    }
    fn select_event(&self, s: &Vec<i64>, t: f64, a: &[f64], target: f64) -> usize {
        self.skm.select_event(s, t, a, target)
    }
    fn apply(&self, s: &mut Vec<i64>, v: usize) {
        self.skm.apply(s, v)
    }
    fn describe(&self, s: &Vec<i64>) -> String {
        self.skm.describe(s)
    }
}

impl RateModel for TiedSkm {
    fn num_params(&self) -> usize {
        self.phi.len()
    }

    fn params(&self) -> Vec<f64> {
        self.phi.clone()
    }

    fn with_params(&self, phi: &[f64]) -> Self {
        let mut out = self.clone();
        out.phi = phi.to_vec();
        for (v, j) in self.tying.iter().enumerate() {
            if let Some(j) = *j {
                out.skm.events[v].rate_constant = phi[j].exp();
            }
        }
        out
    }

    fn hazard_basis(&self, x: &Vec<i64>, _t: f64, action: &[f64], basis: &mut [f64]) -> f64 {
        basis.iter_mut().for_each(|b| *b = 0.0);
        let mut fixed = 0.0;
        for v in 0..self.skm.events.len() {
            match self.tying[v] {
                Some(j) => basis[j] += self.g(v, x, action),
                None => fixed += self.skm.hazard(v, x, action),
            }
        }
        fixed
    }

    fn event_basis(&self, x: &Vec<i64>, _t: f64, action: &[f64], v: usize) -> (Option<usize>, f64) {
        match self.tying[v] {
            Some(j) => (Some(j), self.g(v, x, action)),
            None => (None, self.skm.hazard(v, x, action)),
        }
    }
}

/// A run of empty steps in one state, possibly ended by an event.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub null_steps: u64,
    pub basis: Vec<f64>,
    pub fixed: f64,
    pub fired: Option<(Option<usize>, f64)>,
}

/// Observer that records [`Segment`]s for the learning objective.
#[derive(Debug, Clone, Default)]
pub struct SegmentRecorder {
    pub tau: f64,
    pub segments: Vec<Segment>,
}

impl<M: RateModel> StepObserver<M> for SegmentRecorder {
    fn segment(&mut self, model: &M, state: &M::State, action: &M::Action, start: u64, null_steps: u64, event: Option<usize>) {
        let t = start as f64 * self.tau;
        let mut basis = vec![0.0; model.num_params()];
        let fixed = model.hazard_basis(state, t, action, &mut basis);
        let fired = event.map(|v| model.event_basis(state, t, action, v));
        self.segments.push(Segment {
            null_steps,
            basis,
            fixed,
            fired,
        });
    }
}

/// Complete-data log-likelihood of a fixed set of smoothed trajectories as
/// a function of `phi`, averaged over trajectories:
///
/// `(1/K) sum [ n log(1 - tau h_0) + log(tau h_v) ]`
///
/// Segments with identical hazard bases are merged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenObjective {
    pub tau: f64,
    /// `(G, H, total empty-step weight)`
    pub groups: Vec<(Vec<f64>, f64, f64)>,
    /// Weighted number of fired events per parameter.
    pub fired: Vec<f64>,
    /// `sum log(tau g)` over tied events plus `sum log(tau h)` over untied.
    pub constant: f64,
    pub trajectories: f64,
}

impl FrozenObjective {
    /// `segments[t][k]`: segments of the interval ending at stop `t` in slot
    /// `k`; `ancestors[t]`: selection indices recorded at stop `t`.
    pub fn from_history(tau: f64, num_params: usize, segments: &[Vec<Vec<Segment>>], ancestors: &[Vec<u32>]) -> Self {
        let lines = pf_smooth(ancestors);
        let k = lines.last().map_or(0, Vec::len);
        let mut groups: HashMap<Vec<u64>, (Vec<f64>, f64, f64)> = HashMap::new();
        let mut order: Vec<Vec<u64>> = Vec::new();
        let mut fired = vec![0.0; num_params];
        let mut constant = 0.0;
        for (t, line) in lines.iter().enumerate() {
            let mut mult = vec![0u32; segments[t].len()];
            for &slot in line {
                mult[slot as usize] += 1;
            }
            for (slot, &m) in mult.iter().enumerate() {
                if m == 0 {
                    continue;
                }
                let m = m as f64;
                for seg in &segments[t][slot] {
                    if seg.null_steps > 0 {
                        let mut key: Vec<u64> = seg.basis.iter().map(|b| b.to_bits()).collect();
                        key.push(seg.fixed.to_bits());
                        let e = groups.entry(key.clone()).or_insert_with(|| {
                            order.push(key);
                            (seg.basis.clone(), seg.fixed, 0.0)
                        });
                        e.2 += m * seg.null_steps as f64;
                    }
                    if let Some((j, g)) = seg.fired {
                        if let Some(j) = j {
                            fired[j] += m;
                        }
                        constant += m * (tau * g).ln();
                    }
                }
            }
        }
        let groups = order.into_iter().map(|key| groups.remove(&key).unwrap()).collect();
        Self {
            tau,
            groups,
            fired,
            constant,
            trajectories: k as f64,
        }
    }

    fn h0(&self, g: &[f64], h: f64, phi: &[f64]) -> f64 {
        g.iter().zip(phi).map(|(g, p)| g * p.exp()).sum::<f64>() + h
    }

    pub fn value(&self, phi: &[f64]) -> f64 {
        let mut acc = self.constant;
        for (g, h, w) in &self.groups {
            let q = 1.0 - self.tau * self.h0(g, *h, phi);
            if q <= 0.0 {
                return f64::NEG_INFINITY;
            }
            acc += w * q.ln();
        }
        acc += self.fired.iter().zip(phi).map(|(n, p)| n * p).sum::<f64>();
        acc / self.trajectories
    }

    /// `d value / d phi_j`.
    pub fn gradient(&self, phi: &[f64]) -> Vec<f64> {
        let mut grad = self.fired.clone();
        for (g, h, w) in &self.groups {
            let q = 1.0 - self.tau * self.h0(g, *h, phi);
            for j in 0..phi.len() {
                grad[j] -= w * self.tau * phi[j].exp() * g[j] / q;
            }
        }
        grad.iter().map(|x| x / self.trajectories).collect()
    }

    /// Gradient divided by the mean number of events per trajectory for
    /// each parameter: a relative measure of stationarity.
    pub fn normalized_gradient(&self, phi: &[f64]) -> Vec<f64> {
        self.gradient(phi)
            .iter()
            .zip(&self.fired)
            .map(|(g, n)| g * self.trajectories / n.max(1.0))
            .collect()
    }

    /// Gradient ascent on the normalized gradient with backtracking: the
    /// step is halved until the objective increases.
    pub fn maximize(&self, phi0: &[f64], max_iterations: usize) -> Vec<f64> {
        let mut phi = phi0.to_vec();
        let mut f = self.value(&phi);
        for _ in 0..max_iterations {
            let d = self.normalized_gradient(&phi);
            let g = self.gradient(&phi);
            let slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
            if d.iter().all(|x| x.abs() < 1e-10) || slope <= 0.0 {
                break;
            }
            let mut eta = 1.0;
            let mut accepted = false;
            while eta > 1e-12 {
                let cand: Vec<f64> = phi.iter().zip(&d).map(|(p, d)| p + eta * d).collect();
                let fc = self.value(&cand);
                if fc.is_finite() && fc >= f + 1e-4 * eta * slope {
                    phi = cand;
                    f = fc;
                    accepted = true;
                    break;
                }
                eta *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        phi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub filter: FilterConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnStep {
    pub iteration: usize,
    pub params: Vec<f64>,
    pub log_evidence: f64,
    pub objective: f64,
}

/// Runs the filter under `model`, recording segments, and returns the
/// frozen objective over the smoothed trajectories.
#[allow(clippy::too_many_arguments)]
pub fn frozen_objective<M, F>(
    model: &M,
    initial: &[M::State],
    action: &M::Action,
    grid: &TimeGrid,
    obs_steps: &[u64],
    log_likelihood: F,
    describe: &dyn Fn(usize) -> String,
    config: &FilterConfig,
) -> Result<(FrozenObjective, FilterOutput)>
where
    M: RateModel,
    F: Fn(&M::State, usize) -> f64 + Sync,
{
    let mut ensemble = ParticleEnsemble::new(
        (0..config.particles).map(|k| initial[k % initial.len()].clone()).collect(),
        0,
    )?;
    let end = grid.horizon;
    let stops: Vec<Stop> = merge_stops(obs_steps, &[end]);
    let mut segments: Vec<Vec<Vec<Segment>>> = Vec::with_capacity(stops.len());
    let mut ancestors: Vec<Vec<u32>> = Vec::with_capacity(stops.len());
    let tau = grid.tau;
    let out = run_filter(
        model,
        &mut ensemble,
        action,
        grid,
        &stops,
        log_likelihood,
        describe,
        config,
        &move || SegmentRecorder {
            tau,
            segments: Vec::new(),
        },
        &mut |e, _, obs: &mut Vec<SegmentRecorder>| {
            ancestors.push(e.ancestors.clone());
            segments.push(obs.drain(..).map(|o| o.segments).collect());
            Ok(())
        },
    )?;
    Ok((
        FrozenObjective::from_history(tau, model.num_params(), &segments, &ancestors),
        out,
    ))
}

/// Monte Carlo EM on the log-rate parameters: each outer iteration filters
/// and smooths under the current parameters, freezes the smoothed
/// trajectories and maximizes their complete-data likelihood by gradient
/// ascent. Returns the final model and one trace entry per outer iteration
/// plus a final evaluation.
#[allow(clippy::too_many_arguments)]
pub fn learn_rates<M, F>(
    model: &M,
    initial: &[M::State],
    action: &M::Action,
    grid: &TimeGrid,
    obs_steps: &[u64],
    log_likelihood: F,
    describe: &dyn Fn(usize) -> String,
    config: &LearnConfig,
) -> Result<(M, Vec<LearnStep>)>
where
    M: RateModel,
    F: Fn(&M::State, usize) -> f64 + Sync,
{
    let mut current = model.with_params(&model.params());
    let mut trace = Vec::new();
    for it in 0..=config.outer_iterations {
        let (obj, out) = frozen_objective(&current, initial, action, grid, obs_steps, &log_likelihood, describe, &config.filter)?;
        if !out.log_evidence.is_finite() {
            return Err(Error::Diverged(out.log_evidence));
        }
        let phi = current.params();
        trace.push(LearnStep {
            iteration: it,
            params: phi.clone(),
            log_evidence: out.log_evidence,
            objective: obj.value(&phi),
        });
        if it == config.outer_iterations {
            break;
        }
        let next = obj.maximize(&phi, config.inner_iterations);
        if next.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged(f64::NAN));
        }
        current = current.with_params(&next);
    }
    Ok((current, trace))
}
