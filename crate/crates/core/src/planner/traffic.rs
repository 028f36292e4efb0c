use std::sync::Arc;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::{ControlProblem, Decision, FeatureKey, Policy, RewardSegment, Rollout, UnitTrace, ANY_BIN};
use crate::kinetic::{advance, KineticModel, StepObserver, TimeGrid};
use crate::rng::StreamRng;
use crate::traffic::{
    rate_segments, Recorder, RewardBounds, RouteWeights, ScoringConfig, TrafficModel, TrafficState,
};
use crate::{Error, Result};

/// Which choices agents make under a policy and how they are keyed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionConfig {
    /// Departure time shifts (seconds) an agent can apply to a planned
    /// departure.
    pub shift_options: Vec<f64>,
    /// Activities whose departure is shifted.
    pub departure_activities: Vec<usize>,
    /// Width of the policy's time bins (seconds).
    pub bin_width: f64,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        Self {
            shift_options: vec![-1800.0, -1200.0, -600.0, 0.0],
            departure_activities: vec![0],
            bin_width: 900.0,
        }
    }
}

/// The traffic model as a planning problem. Every agent is a decision
/// maker: it picks a departure shift at the start of a rollout and a
/// downstream location whenever it enters a lane with several. Each agent
/// is rewarded by its own score rate.
#[derive(Debug, Clone)]
pub struct TrafficProblem {
    pub model: Arc<TrafficModel>,
    pub grid: TimeGrid,
    /// Grid step the belief particles are at.
    pub start_step: u64,
    pub scoring: ScoringConfig,
    pub bounds: RewardBounds,
    pub decisions: DecisionConfig,
}

/// What an agent did in a policy-driven run.
#[derive(Debug, Clone)]
pub struct PolicyRun {
    pub recorder: Recorder,
    /// Per agent, steps relative to the run start.
    pub decisions: Vec<Vec<Decision>>,
}

struct Driver<'a> {
    problem: &'a TrafficProblem,
    policy: &'a Policy,
    rng: StreamRng,
    from: u64,
    recorder: Recorder,
    decisions: Vec<Vec<Decision>>,
}

impl Driver<'_> {
    fn choose_route(&mut self, state: &mut TrafficState, agent: usize, step: u64) {
        let model = &self.problem.model;
        if let Some(lane) = model.pending_decision(state, agent) {
            let key = self.problem.route_key(lane, self.problem.grid.time_of(step));
            let n = model.lanes[lane].choices.len();
            let a = self.policy.sample(key, n, &mut self.rng);
            model.set_choice(state, agent, a as u8);
            self.decisions[agent].push(Decision {
                step: step - self.from,
                key,
                action: a as u16,
                actions: n as u16,
            });
        }
    }
}

impl StepObserver<TrafficModel> for Driver<'_> {
    fn after_event(&mut self, model: &TrafficModel, step: u64, event: usize, state: &mut TrafficState) -> Result<()> {
        self.recorder.after_event(model, step, event, state)?;
        let (agent, _, _) = model.decode(event);
        self.choose_route(state, agent, step);
        Ok(())
    }
}

impl TrafficProblem {
    pub fn new(model: Arc<TrafficModel>, grid: TimeGrid, start_step: u64, scoring: ScoringConfig, decisions: DecisionConfig) -> Result<Self> {
        scoring.validate()?;
        let (lo, hi) = scoring.rate_bounds();
        let bounds = RewardBounds::new(lo, hi)?;
        if decisions.shift_options.is_empty() || !(decisions.bin_width > 0.0) {
            return Err(Error::invalid("decisions need at least one shift option and a positive bin width"));
        }
        Ok(Self {
            model,
            grid,
            start_step,
            scoring,
            bounds,
            decisions,
        })
    }

    fn bin(&self, t: f64) -> u32 {
        (t / self.decisions.bin_width).floor().max(0.0) as u32
    }

    pub fn route_key(&self, lane: usize, t: f64) -> FeatureKey {
        FeatureKey::new(lane as u32, self.bin(t))
    }

    pub fn departure_key(&self, q: usize, planned: f64) -> FeatureKey {
        FeatureKey::new((self.model.lanes.len() + q) as u32, self.bin(planned))
    }

    /// Human-readable name of a feature class.
    pub fn class_label(&self, class: u32) -> String {
        let c = class as usize;
        let locs = &self.model.network.locations;
        match self.model.lanes.get(c) {
            Some(l) => format!("route:{}->{}", locs[l.location].id, locs[l.dest].id),
            None => format!("depart:{}", c - self.model.lanes.len()),
        }
    }

    /// Lanes where a vehicle picks among several downstream locations.
    pub fn route_classes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.model.lanes.len()).filter(|&l| self.model.lanes[l].choices.len() > 1)
    }

    /// Free-flow seconds from `loc` to building `dest` along feasible moves.
    pub fn free_flow_time(&self, loc: usize, dest: usize) -> f64 {
        if loc == dest {
            return 0.0;
        }
        let here = &self.model.network.locations[loc];
        let own = if self.model.network.is_building(loc) {
            0.0
        } else {
            here.length / here.free_speed
        };
        match self.model.lane(loc, dest) {
            Some(l) => {
                own + self.model.lanes[l]
                    .choices
                    .iter()
                    .map(|&c| self.free_flow_time(c, dest))
                    .fold(f64::INFINITY, f64::min)
            }
            None => f64::INFINITY,
        }
    }

    /// Every agent takes the free-flow fastest downstream location (lowest
    /// index on ties) and departs as planned.
    pub fn shortest_path_policy(&self) -> Policy {
        let mut p = Policy::uniform();
        for lane in self.route_classes() {
            let l = &self.model.lanes[lane];
            let costs: Vec<f64> = l.choices.iter().map(|&c| self.free_flow_time(c, l.dest)).collect();
            let mut best = 0;
            for (i, &c) in costs.iter().enumerate() {
                if c < costs[best] {
                    best = i;
                }
            }
            p.set_action(FeatureKey::new(lane as u32, ANY_BIN), l.choices.len(), best);
        }
        let zero = self
            .decisions
            .shift_options
            .iter()
            .position(|&s| s == 0.0)
            .unwrap_or(self.decisions.shift_options.len() - 1);
        for &q in &self.decisions.departure_activities {
            p.set_action(
                FeatureKey::new((self.model.lanes.len() + q) as u32, ANY_BIN),
                self.decisions.shift_options.len(),
                zero,
            );
        }
        p
    }

    /// Simulates steps `from..to` with every agent following `policy`.
    pub fn run_policy(&self, state: &mut TrafficState, policy: &Policy, from: u64, to: u64, rng: &mut StreamRng, keep_log: bool) -> Result<PolicyRun> {
        let model = &*self.model;
        let t0 = self.grid.time_of(from);
        model.catch_up(state, t0);
        let n = model.num_agents();
        let mut driver = Driver {
            problem: self,
            policy,
            rng: StreamRng::seed_from_u64(rng.random()),
            from,
            recorder: Recorder::resume(model, state, self.grid.tau, t0, keep_log),
            decisions: vec![Vec::new(); n],
        };
        let k = self.decisions.shift_options.len();
        for &q in &self.decisions.departure_activities {
            let mut changes = Vec::new();
            for agent in 0..n {
                let Some(planned) = model.base_schedule.time_of(q, agent) else {
                    continue;
                };
                if model.released(state, q, agent) {
                    continue;
                }
                let key = self.departure_key(q, planned);
                let a = policy.sample(key, k, &mut driver.rng);
                driver.decisions[agent].push(Decision {
                    step: 0,
                    key,
                    action: a as u16,
                    actions: k as u16,
                });
                changes.push((agent as u32, planned + self.decisions.shift_options[a]));
            }
            model.reschedule(state, q, &changes, t0);
        }
        model.catch_up(state, t0);
        for agent in 0..n {
            driver.choose_route(state, agent, from);
        }
        advance(model, state, &RouteWeights::default(), &self.grid, from, to, rng, &mut driver)?;
        Ok(PolicyRun {
            recorder: driver.recorder,
            decisions: driver.decisions,
        })
    }
}

impl ControlProblem for TrafficProblem {
    type State = TrafficState;

    fn num_actions(&self, key: FeatureKey) -> usize {
        match self.model.lanes.get(key.class as usize) {
            Some(l) => l.choices.len(),
            None => self.decisions.shift_options.len(),
        }
    }

    fn rollout(&self, start: &TrafficState, policy: &Policy, length: u64, rng: &mut StreamRng) -> Result<Rollout> {
        let mut state = start.clone();
        let from = self.start_step;
        let run = self.run_policy(&mut state, policy, from, from + length, rng, false)?;
        let t0 = self.grid.time_of(from);
        let window = (t0, self.grid.time_of(from + length + 1));
        let tau = self.grid.tau;
        let mut clamped = 0;
        let units = run
            .decisions
            .into_iter()
            .enumerate()
            .map(|(agent, decisions)| {
                let plan = &self.model.plans.agents[agent];
                let traj = &run.recorder.trajectories[agent];
                let rewards = rate_segments(plan, traj, &self.scoring, window)
                    .into_iter()
                    .filter_map(|s| {
                        let a = ((s.from - t0) / tau).round() as u64;
                        let b = ((s.to - t0) / tau).round() as u64;
                        let (p, c) = self.bounds.probability(s.rate);
                        clamped += c as u64;
                        (b > a).then_some(RewardSegment {
                            from: a,
                            to: b,
                            probability: p,
                        })
                    })
                    .collect();
                UnitTrace { decisions, rewards }
            })
            .collect();
        Ok(Rollout { length, units, clamped })
    }
}
