use std::borrow::Borrow;

use serde::{Deserialize, Serialize};

use super::{KineticModel, TimeGrid};

/// A sample path: events `(v_i, t_i)` and the state after each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord<S> {
    pub initial: S,
    pub start: f64,
    pub end: f64,
    pub events: Vec<(usize, f64)>,
    pub states: Vec<S>,
    /// Log density of the path as recorded by the sampler.
    pub log_probability: f64,
}

impl<S> PathRecord<S> {
    pub fn final_state(&self) -> &S {
        self.states.last().unwrap_or(&self.initial)
    }

    /// State in force at time `t`.
    pub fn state_at(&self, t: f64) -> &S {
        let i = self.events.partition_point(|&(_, ti)| ti <= t);
        if i == 0 {
            &self.initial
        } else {
            &self.states[i - 1]
        }
    }

    /// Checks that each recorded state is its predecessor with the event
    /// applied and that event times increase strictly within the window.
    pub fn is_consistent<M>(&self, model: &M) -> bool
    where
        M: KineticModel<State = S>,
        S: Clone + PartialEq,
    {
        if self.events.len() != self.states.len() {
            return false;
        }
        let mut prev_t = self.start;
        let mut x = self.initial.clone();
        for (i, &(v, t)) in self.events.iter().enumerate() {
            if (i > 0 && t <= prev_t) || t < self.start || t > self.end {
                return false;
            }
            model.apply(&mut x, v);
            if x != self.states[i] {
                return false;
            }
            prev_t = t;
        }
        true
    }
}

/// Piecewise-constant action schedule: `actions[i]` is in force from
/// `switch_times[i]` until the next switch. The first action also covers
/// any time before the first switch.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSequence<T> {
    pub switch_times: Vec<f64>,
    pub actions: Vec<T>,
}

impl<T> ActionSequence<T> {
    pub fn constant(action: T) -> Self {
        Self {
            switch_times: vec![f64::NEG_INFINITY],
            actions: vec![action],
        }
    }

    pub fn at(&self, t: f64) -> &T {
        let i = self.switch_times.partition_point(|&s| s <= t);
        &self.actions[i.saturating_sub(1)]
    }

    /// First switch strictly after `t`.
    pub fn next_switch(&self, t: f64) -> f64 {
        let i = self.switch_times.partition_point(|&s| s <= t);
        self.switch_times.get(i).copied().unwrap_or(f64::INFINITY)
    }
}

fn hazard_of<M: KineticModel>(
    model: &M,
    state: &M::State,
    t: f64,
    action: &M::Action,
    v: usize,
    buf: &mut Vec<(usize, f64)>,
) -> f64 {
    buf.clear();
    model.hazards(state, t, action, buf);
    buf.iter().find(|(e, _)| *e == v).map_or(0.0, |&(_, h)| h)
}

/// `int_a^b h_0(x, s) ds` in a fixed state, splitting at rate changes and
/// action switches.
fn integrated_hazard<M, T>(
    model: &M,
    state: &M::State,
    actions: &ActionSequence<T>,
    a: f64,
    b: f64,
) -> f64
where
    M: KineticModel,
    T: Borrow<M::Action>,
{
    let mut t = a;
    let mut acc = 0.0;
    while t < b {
        let action = actions.at(t).borrow();
        let next = model
            .next_rate_change(state, t, action)
            .min(actions.next_switch(t))
            .min(b);
        acc += model.total_hazard(state, t, action) * (next - t);
        t = next;
    }
    acc
}

/// Continuous-time path log density
/// `sum_i log h_{v_i}(x_{i-1}) - int h_0(x(s)) ds` over `[start, end]`.
/// Returns negative infinity if any event has zero hazard at its source.
pub fn path_log_probability<M, T>(
    model: &M,
    path: &PathRecord<M::State>,
    actions: &ActionSequence<T>,
) -> f64
where
    M: KineticModel,
    T: Borrow<M::Action>,
{
    let mut buf = Vec::new();
    let mut log_p = 0.0;
    let mut t_prev = path.start;
    let mut x = &path.initial;
    for (i, &(v, t)) in path.events.iter().enumerate() {
        log_p -= integrated_hazard(model, x, actions, t_prev, t);
        let h = hazard_of(model, x, t, actions.at(t).borrow(), v, &mut buf);
        if h <= 0.0 {
            return f64::NEG_INFINITY;
        }
        log_p += h.ln();
        x = &path.states[i];
        t_prev = t;
    }
    log_p - integrated_hazard(model, x, actions, t_prev, path.end)
}

/// Log probability of a path of the uniformized chain over `grid`. Event
/// times are the grid times of the states they produce, so an event at
/// `n * tau` fired on the transition from step `n - 1`. Every other step is
/// empty and contributes `log(1 - tau h_0)`.
pub fn discrete_path_log_probability<M, T>(
    model: &M,
    path: &PathRecord<M::State>,
    grid: &TimeGrid,
    actions: &ActionSequence<T>,
) -> f64
where
    M: KineticModel,
    T: Borrow<M::Action>,
{
    let tau = grid.tau;
    let mut buf = Vec::new();
    let mut log_p = 0.0;
    let mut step = grid.step_at_or_after(path.start);
    let end = grid.step_at_or_after(path.end);
    let mut x = &path.initial;

    // empty steps in state x over [from, to), split where hazards may change
    let empty_steps = |x: &M::State, from: u64, to: u64| -> f64 {
        let mut s = from;
        let mut acc = 0.0;
        while s < to {
            let t = grid.time_of(s);
            let action = actions.at(t).borrow();
            let change = model
                .next_rate_change(x, t, action)
                .min(actions.next_switch(t));
            let next = if change.is_finite() {
                grid.step_at_or_after(change).max(s + 1).min(to)
            } else {
                to
            };
            let p = tau * model.total_hazard(x, t, action);
            acc += (next - s) as f64 * (-p).ln_1p();
            s = next;
        }
        acc
    };

    for (i, &(v, t)) in path.events.iter().enumerate() {
        let n = grid.step_at_or_after(t);
        if n <= step {
            return f64::NEG_INFINITY;
        }
        log_p += empty_steps(x, step, n - 1);
        let s = grid.time_of(n - 1);
        let p = tau * hazard_of(model, x, s, actions.at(s).borrow(), v, &mut buf);
        if p <= 0.0 {
            return f64::NEG_INFINITY;
        }
        log_p += p.ln();
        x = &path.states[i];
        step = n;
    }
    log_p + empty_steps(x, step, end)
}
