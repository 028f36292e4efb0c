use rand::Rng;

use super::{KineticModel, PathRecord, TimeGrid};
use crate::{Error, Result};

/// Slack allowed on `tau * h_0 <= 1` before it is treated as a violation.
const TAU_SLACK: f64 = 1e-12;

/// `h_0(x, a)`.
pub fn total_rate<M: KineticModel>(model: &M, state: &M::State, t: f64, action: &M::Action) -> f64 {
    model.total_hazard(state, t, action)
}

/// One-step categorical of the uniformized chain: no event with probability
/// `null`, event `v` with probability `tau * h_v`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDistribution {
    pub null: f64,
    pub events: Vec<(usize, f64)>,
}

impl StepDistribution {
    pub fn probability(&self, event: Option<usize>) -> f64 {
        match event {
            None => self.null,
            Some(v) => self
                .events
                .iter()
                .find(|(e, _)| *e == v)
                .map_or(0.0, |&(_, p)| p),
        }
    }

    pub fn total(&self) -> f64 {
        self.null + self.events.iter().map(|(_, p)| p).sum::<f64>()
    }
}

fn tau_error<M: KineticModel>(model: &M, state: &M::State, t: f64, product: f64) -> Error {
    Error::TauTooLarge {
        time: t,
        product,
        state: model.describe(state),
    }
}

pub fn discrete_step_distribution<M: KineticModel>(
    model: &M,
    state: &M::State,
    t: f64,
    action: &M::Action,
    tau: f64,
) -> Result<StepDistribution> {
    let mut hs = Vec::new();
    model.hazards(state, t, action, &mut hs);
    let mut events = Vec::with_capacity(hs.len());
    let mut sum = 0.0;
    for (v, h) in hs {
        let p = tau * h;
        sum += p;
        events.push((v, p));
    }
    if sum > 1.0 + TAU_SLACK {
        return Err(tau_error(model, state, t, sum));
    }
    Ok(StepDistribution {
        null: (1.0 - sum).max(0.0),
        events,
    })
}

/// Samples one step of the uniformized chain at time `t` and applies the
/// chosen event. Returns the event, or `None` for an empty step.
pub fn step_discrete<M: KineticModel, R: Rng + ?Sized>(
    model: &M,
    state: &mut M::State,
    t: f64,
    action: &M::Action,
    tau: f64,
    rng: &mut R,
) -> Result<Option<usize>> {
    model.catch_up(state, t);
    let h0 = model.total_hazard(state, t, action);
    let p = tau * h0;
    if p > 1.0 + TAU_SLACK {
        return Err(tau_error(model, state, t, p));
    }
    let u: f64 = rng.random();
    if u >= p {
        return Ok(None);
    }
    // u / tau is uniform on [0, h_0) given that an event fires
    let v = model.select_event(state, t, action, u / tau);
    model.apply(state, v);
    Ok(Some(v))
}

/// Number of Bernoulli(`p`) trials up to and including the first success.
pub fn sample_geometric<R: Rng + ?Sized>(p: f64, rng: &mut R) -> u64 {
    if p >= 1.0 {
        return 1;
    }
    if p <= 0.0 {
        return u64::MAX;
    }
    // 1 - U is in (0, 1]
    let u: f64 = 1.0 - rng.random::<f64>();
    let k = (u.ln() / (-p).ln_1p()).floor();
    if k >= (u64::MAX - 1) as f64 {
        u64::MAX
    } else {
        1 + k as u64
    }
}

/// Receives the sample path of [`advance`] in compressed form.
pub trait StepObserver<M: KineticModel + ?Sized> {
    /// `null_steps` empty steps starting at grid step `start`, all taken in
    /// `state`, followed by `event` (fired from `state` on the transition out
    /// of step `start + null_steps`) if any.
    fn segment(
        &mut self,
        _model: &M,
        _state: &M::State,
        _action: &M::Action,
        _start: u64,
        _null_steps: u64,
        _event: Option<usize>,
    ) {
    }

    /// Called after `event` has been applied; `step` is the grid step of the
    /// new state. May modify the state (e.g. an agent's next choice).
    fn after_event(
        &mut self,
        _model: &M,
        _step: u64,
        _event: usize,
        _state: &mut M::State,
    ) -> Result<()> {
        Ok(())
    }
}

impl<M: KineticModel + ?Sized> StepObserver<M> for () {}

/// Runs the uniformized chain from grid step `from` to `to`.
///
/// Empty steps are skipped in blocks: while hazards are constant the wait
/// until the next event is geometric in the number of steps, so this samples
/// the same chain as repeated [`step_discrete`] calls at a cost proportional
/// to the number of events and rate changes. Returns the number of events.
#[allow(clippy::too_many_arguments)]
pub fn advance<M, R, O>(
    model: &M,
    state: &mut M::State,
    action: &M::Action,
    grid: &TimeGrid,
    from: u64,
    to: u64,
    rng: &mut R,
    observer: &mut O,
) -> Result<u64>
where
    M: KineticModel,
    R: Rng + ?Sized,
    O: StepObserver<M> + ?Sized,
{
    let tau = grid.tau;
    let mut step = from;
    let mut fired = 0;
    while step < to {
        let t = grid.time_of(step);
        model.catch_up(state, t);
        let change = model.next_rate_change(state, t, action);
        let boundary = if change.is_finite() {
            grid.step_at_or_after(change).max(step + 1).min(to)
        } else {
            to
        };
        let available = boundary - step;
        let h0 = model.total_hazard(state, t, action);
        let p = tau * h0;
        if p > 1.0 + TAU_SLACK {
            return Err(tau_error(model, state, t, p));
        }
        let g = sample_geometric(p, rng);
        if g > available {
            observer.segment(model, state, action, step, available, None);
            step = boundary;
            continue;
        }
        let target = rng.random::<f64>() * h0;
        let v = model.select_event(state, t, action, target);
        observer.segment(model, state, action, step, g - 1, Some(v));
        model.apply(state, v);
        step += g;
        fired += 1;
        observer.after_event(model, step, v, state)?;
    }
    model.catch_up(state, grid.time_of(to.max(from)));
    Ok(fired)
}

/// Outcome of one Gillespie draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GillespieStep {
    pub wait: f64,
    pub event: usize,
}

/// Draws the waiting time and event from `state` at time `t` and applies
/// the event. Assumes hazards stay constant over the wait.
pub fn gillespie_step<M: KineticModel, R: Rng + ?Sized>(
    model: &M,
    state: &mut M::State,
    t: f64,
    action: &M::Action,
    rng: &mut R,
) -> Result<GillespieStep> {
    let h0 = model.total_hazard(state, t, action);
    if h0 <= 0.0 {
        return Err(Error::Absorbed);
    }
    let u: f64 = 1.0 - rng.random::<f64>();
    let wait = -u.ln() / h0;
    let target = rng.random::<f64>() * h0;
    let event = model.select_event(state, t, action, target);
    model.apply(state, event);
    Ok(GillespieStep { wait, event })
}

/// Continuous-time run over `[t0, t_end]`. Stops early without error when
/// the process is absorbed and hazards never change again. Waits that cross
/// a rate change are truncated there and redrawn (memorylessness).
pub fn gillespie_run<M: KineticModel, R: Rng + ?Sized>(
    model: &M,
    initial: M::State,
    action: &M::Action,
    t0: f64,
    t_end: f64,
    rng: &mut R,
) -> PathRecord<M::State> {
    let mut state = initial.clone();
    let mut t = t0;
    let mut events = Vec::new();
    let mut states = Vec::new();
    let mut log_p = 0.0;
    let mut hs = Vec::new();
    while t < t_end {
        model.catch_up(&mut state, t);
        let change = model.next_rate_change(&state, t, action).min(t_end);
        let h0 = model.total_hazard(&state, t, action);
        let wait = if h0 > 0.0 {
            -(1.0 - rng.random::<f64>()).ln() / h0
        } else {
            f64::INFINITY
        };
        if t + wait >= change {
            log_p -= h0 * (change - t);
            t = change;
            continue;
        }
        let target = rng.random::<f64>() * h0;
        let v = model.select_event(&state, t, action, target);
        hs.clear();
        model.hazards(&state, t, action, &mut hs);
        let hv = hs.iter().find(|(e, _)| *e == v).map_or(0.0, |&(_, h)| h);
        log_p += hv.ln() - h0 * wait;
        t += wait;
        model.apply(&mut state, v);
        events.push((v, t));
        states.push(state.clone());
    }
    PathRecord {
        initial,
        start: t0,
        end: t_end,
        events,
        states,
        log_probability: log_p,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetic::{EventSchema, Skm};
    use crate::rng::stream_rng;

    fn death(c: f64) -> Skm {
        Skm::new(
            vec!["X".into()],
            vec![EventSchema::new("death", &[(0, 1)], &[], c).unwrap()],
        )
        .unwrap()
    }

    fn two_events(c1: f64, c2: f64) -> Skm {
        // A -> B and B -> A, each first order
        Skm::new(
            vec!["A".into(), "B".into()],
            vec![
                EventSchema::new("ab", &[(0, 1)], &[(1, 1)], c1).unwrap(),
                EventSchema::new("ba", &[(1, 1)], &[(0, 1)], c2).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn total_rate_examples() {
        assert_eq!(total_rate(&death(1.0), &vec![3], 0.0, &[]), 3.0);
        assert_eq!(total_rate(&death(1.0), &vec![0], 0.0, &[]), 0.0);
        assert_eq!(total_rate(&two_events(0.5, 1.5), &vec![1, 1], 0.0, &[]), 2.0);
        let empty = Skm::new(vec!["X".into()], vec![]).unwrap();
        assert_eq!(total_rate(&empty, &vec![5], 0.0, &[]), 0.0);
    }

    #[test]
    fn step_distribution_examples() {
        let d = discrete_step_distribution(&death(2.0), &vec![1], 0.0, &[], 0.1).unwrap();
        assert!((d.null - 0.8).abs() < 1e-15);
        assert!((d.probability(Some(0)) - 0.2).abs() < 1e-15);

        let d = discrete_step_distribution(&death(2.0), &vec![0], 0.0, &[], 0.1).unwrap();
        assert_eq!(d.null, 1.0);
        assert!(d.events.is_empty());

        let d = discrete_step_distribution(&two_events(4.0, 6.0), &vec![1, 1], 0.0, &[], 0.1)
            .unwrap();
        assert!(d.null.abs() < 1e-15);
        assert!((d.probability(Some(0)) - 0.4).abs() < 1e-15);
        assert!((d.probability(Some(1)) - 0.6).abs() < 1e-15);
        assert!((d.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oversized_tau_is_an_error_with_state() {
        let err = discrete_step_distribution(&death(1.0), &vec![20], 0.0, &[], 0.1).unwrap_err();
        match err {
            Error::TauTooLarge { product, state, .. } => {
                assert!((product - 2.0).abs() < 1e-12);
                assert_eq!(state, "[20]");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn absorbed_state_is_reported() {
        let mut rng = stream_rng(1, 0, 0);
        let err = gillespie_step(&death(1.0), &mut vec![0], 0.0, &[], &mut rng).unwrap_err();
        assert!(matches!(err, Error::Absorbed));
    }

    #[test]
    fn gillespie_wait_has_exponential_mean() {
        let model = death(1.0);
        let mut rng = stream_rng(7, 0, 0);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let mut x = vec![1];
            sum += gillespie_step(&model, &mut x, 0.0, &[], &mut rng).unwrap().wait;
            assert_eq!(x, vec![0]);
        }
        let mean = sum / n as f64;
        // Exponential(1) has unit standard deviation
        assert!((mean - 1.0).abs() < 3.0 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn gillespie_death_process_mean_at_unit_time() {
        let model = death(1.0);
        let runs = 10_000;
        let p = (-1.0f64).exp();
        let mut sum = 0.0;
        for r in 0..runs {
            let mut rng = stream_rng(11, r, 0);
            let path = gillespie_run(&model, vec![100], &[], 0.0, 1.0, &mut rng);
            sum += path.final_state()[0] as f64;
        }
        let mean = sum / runs as f64;
        let sd = (100.0 * p * (1.0 - p) / runs as f64).sqrt();
        assert!((mean - 100.0 * p).abs() < 3.0 * sd, "mean {mean}");
    }

    #[test]
    fn geometric_skip_matches_stepwise_chain() {
        // compare event-count distributions after 50 steps
        let model = death(1.0);
        let grid = TimeGrid::new(0.05, 50).unwrap();
        let runs = 20_000;
        let mut a = [0u32; 11];
        let mut b = [0u32; 11];
        for r in 0..runs {
            let mut rng = stream_rng(3, r, 0);
            let mut x = vec![10];
            advance(&model, &mut x, &[], &grid, 0, 50, &mut rng, &mut ()).unwrap();
            a[x[0] as usize] += 1;
            let mut rng = stream_rng(4, r, 0);
            let mut y = vec![10];
            for s in 0..50 {
                step_discrete(&model, &mut y, grid.time_of(s), &[], grid.tau, &mut rng).unwrap();
            }
            b[y[0] as usize] += 1;
        }
        let tv: f64 = a
            .iter()
            .zip(&b)
            .map(|(&x, &y)| (x as f64 - y as f64).abs())
            .sum::<f64>()
            / (2.0 * runs as f64);
        assert!(tv < 0.03, "tv {tv}");
    }

    #[test]
    fn advance_is_seed_deterministic() {
        let model = two_events(1.0, 2.0);
        let grid = TimeGrid::new(0.01, 1000).unwrap();
        let run = |seed| {
            let mut rng = stream_rng(seed, 0, 0);
            let mut x = vec![10, 10];
            advance(&model, &mut x, &[], &grid, 0, 1000, &mut rng, &mut ()).unwrap();
            x
        };
        assert_eq!(run(5), run(5));
    }

    #[test]
    fn geometric_sampler_mean() {
        let mut rng = stream_rng(9, 0, 0);
        let p = 0.2;
        let n = 100_000;
        let mean = (0..n).map(|_| sample_geometric(p, &mut rng) as f64).sum::<f64>() / n as f64;
        let sd = ((1.0 - p) / (p * p) / n as f64).sqrt();
        assert!((mean - 1.0 / p).abs() < 3.0 * sd);
        assert_eq!(sample_geometric(1.0, &mut rng), 1);
    }
}
