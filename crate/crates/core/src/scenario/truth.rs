use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::CompiledScenario;
use crate::kinetic::advance;
use crate::planner::{DecisionConfig, Policy, TrafficProblem};
use crate::rng::stream_rng;
use crate::traffic::{
    AgentTrajectory, EventKind, EventRecord, Recorder, RoadNetwork, RouteWeights, TrafficModel,
};
use crate::{Error, Result};

/// One simulated day.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Step 0 followed by every observation step.
    pub sample_steps: Vec<u64>,
    /// `counts[i][l]`: vehicles at location `l` at `sample_steps[i]`.
    pub counts: Vec<Vec<u32>>,
    pub observation_steps: Vec<u64>,
    /// `observations[i][j]`: probes at the `j`-th observed location.
    pub observations: Vec<Vec<u32>>,
    pub log: Vec<EventRecord>,
    pub trajectories: Vec<AgentTrajectory>,
}

impl GroundTruth {
    /// Row of `counts` for a sample step.
    pub fn counts_at(&self, step: u64) -> Option<&[u32]> {
        let i = self.sample_steps.binary_search(&step).ok()?;
        Some(&self.counts[i])
    }
}

/// Simulates the scenario over its whole grid. Without a policy undecided
/// vehicles split evenly over their downstream options and everybody
/// departs as planned.
pub fn simulate_ground_truth(scenario: &CompiledScenario, policy: Option<&Policy>, seed: u64) -> Result<GroundTruth> {
    let model = &*scenario.model;
    let grid = scenario.scenario.grid;
    let mut rng = stream_rng(seed, 0, 0);
    let mut state = model.initial();
    let recorder = match policy {
        None => {
            let mut rec = Recorder::new(model, grid.tau, true);
            advance(model, &mut state, &RouteWeights::default(), &grid, 0, grid.horizon, &mut rng, &mut rec)?;
            rec
        }
        Some(p) => {
            let problem = TrafficProblem::new(
                scenario.model.clone(),
                grid,
                0,
                scenario.scenario.scoring,
                DecisionConfig::default(),
            )?;
            problem.run_policy(&mut state, p, 0, grid.horizon, &mut rng, true)?.recorder
        }
    };
    let log = recorder.log.expect("log was requested");
    let observation_steps = scenario.scenario.observation_steps();
    let mut sample_steps = vec![0];
    sample_steps.extend(&observation_steps);
    let initial = model.initial().counts;
    let times: Vec<f64> = sample_steps.iter().map(|&s| grid.time_of(s)).collect();
    let counts = crate::traffic::replay_counts(&model.network, &initial, &log, &times)?;
    let obs_times: Vec<f64> = observation_steps.iter().map(|&s| grid.time_of(s)).collect();
    let observations = probe_observations(model, &scenario.observation.observed_locations, &log, &obs_times)?;
    Ok(GroundTruth {
        sample_steps,
        counts,
        observation_steps,
        observations,
        log,
        trajectories: recorder.trajectories,
    })
}

/// Probe counts at `observed` locations re-derived from an event log and
/// the plans' probe flags.
pub fn probe_observations(model: &TrafficModel, observed: &[usize], log: &[EventRecord], times: &[f64]) -> Result<Vec<Vec<u32>>> {
    let net = &model.network;
    let mut loc: Vec<usize> = (0..model.num_agents()).map(|a| model.agent_buildings(a)[0]).collect();
    let probe: Vec<bool> = model.plans.agents.iter().map(|p| p.is_probe).collect();
    let mut i = 0;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        while i < log.len() && log[i].time <= t {
            let row = &log[i];
            if matches!(row.event_kind, EventKind::EnterLink | EventKind::EnterBuilding) {
                let a = row.agent_id as usize;
                if a >= loc.len() {
                    return Err(Error::invalid(format!("event log names unknown agent {a}")));
                }
                loc[a] = net
                    .index_of(&row.location_id)
                    .ok_or_else(|| Error::invalid(format!("unknown location {}", row.location_id)))?;
            }
            i += 1;
        }
        let mut y = vec![0u32; observed.len()];
        for (a, &l) in loc.iter().enumerate() {
            if probe[a] {
                if let Some(j) = observed.iter().position(|&o| o == l) {
                    y[j] += 1;
                }
            }
        }
        out.push(y);
    }
    Ok(out)
}

/// Per-agent arrival and departure times rebuilt from an event log.
/// Distances are the lengths of the links entered.
pub fn trajectories_from_log(model: &TrafficModel, log: &[EventRecord]) -> Result<Vec<AgentTrajectory>> {
    let net = &model.network;
    let n = model.num_agents();
    let mut out: Vec<AgentTrajectory> = (0..n).map(|a| AgentTrajectory::new(model.agent_buildings(a).len())).collect();
    let mut activity = vec![0usize; n];
    for row in log {
        let a = row.agent_id as usize;
        let traj = out
            .get_mut(a)
            .ok_or_else(|| Error::invalid(format!("event log names unknown agent {a}")))?;
        let q = activity[a];
        let bad = || Error::invalid(format!("event log row at {} does not follow agent {a}'s plan", row.time));
        match row.event_kind {
            EventKind::LeaveBuilding => *traj.departures.get_mut(q).ok_or_else(bad)? = Some(row.time),
            EventKind::EnterBuilding => {
                activity[a] += 1;
                *traj.arrivals.get_mut(q + 1).ok_or_else(bad)? = Some(row.time);
            }
            EventKind::EnterLink => {
                let l = net
                    .index_of(&row.location_id)
                    .ok_or_else(|| Error::invalid(format!("unknown location {}", row.location_id)))?;
                *traj.distances.get_mut(q).ok_or_else(bad)? += model.link_length(l);
            }
            EventKind::LeaveLink => {}
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct CountRow {
    step: u64,
    location_id: String,
    count: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct ObservationRow {
    time_step: u64,
    location_id: String,
    probe_count: u32,
}

/// Long-format count matrix: `step,location_id,count`.
pub fn write_counts<W: Write>(w: W, network: &RoadNetwork, steps: &[u64], counts: &[Vec<u32>]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for (&step, row) in steps.iter().zip(counts) {
        for (l, &count) in row.iter().enumerate() {
            out.serialize(CountRow {
                step,
                location_id: network.locations[l].id.clone(),
                count,
            })?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a count matrix written by [`write_counts`]; locations missing from
/// a step are zero.
pub fn read_counts<R: Read>(r: R, network: &RoadNetwork) -> Result<(Vec<u64>, Vec<Vec<u32>>)> {
    let mut steps: Vec<u64> = Vec::new();
    let mut counts: Vec<Vec<u32>> = Vec::new();
    for row in csv::Reader::from_reader(r).deserialize() {
        let row: CountRow = row?;
        let l = network
            .index_of(&row.location_id)
            .ok_or_else(|| Error::invalid(format!("unknown location {}", row.location_id)))?;
        if steps.last() != Some(&row.step) {
            if steps.last().is_some_and(|&s| s > row.step) {
                return Err(Error::invalid("count rows must be sorted by step"));
            }
            steps.push(row.step);
            counts.push(vec![0; network.len()]);
        }
        counts.last_mut().expect("pushed")[l] = row.count;
    }
    Ok((steps, counts))
}

pub fn write_observations<W: Write>(w: W, network: &RoadNetwork, observed: &[usize], steps: &[u64], values: &[Vec<u32>]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for (&time_step, row) in steps.iter().zip(values) {
        for (&l, &probe_count) in observed.iter().zip(row) {
            out.serialize(ObservationRow {
                time_step,
                location_id: network.locations[l].id.clone(),
                probe_count,
            })?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads probe observations; each step must report every location in
/// `observed`.
pub fn read_observations<R: Read>(r: R, network: &RoadNetwork, observed: &[usize]) -> Result<(Vec<u64>, Vec<Vec<u32>>)> {
    let mut steps: Vec<u64> = Vec::new();
    let mut values: Vec<Vec<Option<u32>>> = Vec::new();
    for row in csv::Reader::from_reader(r).deserialize() {
        let row: ObservationRow = row?;
        let l = network
            .index_of(&row.location_id)
            .ok_or_else(|| Error::invalid(format!("unknown location {}", row.location_id)))?;
        let j = observed
            .iter()
            .position(|&o| o == l)
            .ok_or_else(|| Error::invalid(format!("location {} is not observed", row.location_id)))?;
        if steps.last() != Some(&row.time_step) {
            if steps.last().is_some_and(|&s| s > row.time_step) {
                return Err(Error::invalid("observation rows must be sorted by time_step"));
            }
            steps.push(row.time_step);
            values.push(vec![None; observed.len()]);
        }
        values.last_mut().expect("pushed")[j] = Some(row.probe_count);
    }
    let values = values
        .into_iter()
        .zip(&steps)
        .map(|(v, s)| {
            v.into_iter()
                .collect::<Option<Vec<u32>>>()
                .ok_or_else(|| Error::invalid(format!("step {s} misses an observed location")))
        })
        .collect::<Result<_>>()?;
    Ok((steps, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_synthtown, Scenario};

    fn small(agents: usize) -> CompiledScenario {
        let mut s: Scenario = generate_synthtown(3);
        s.plans.agents.truncate(agents);
        s.compile().unwrap()
    }

    #[test]
    fn zero_agents_give_an_empty_log() {
        let c = small(0);
        let gt = simulate_ground_truth(&c, None, 1).unwrap();
        assert!(gt.log.is_empty());
        assert!(gt.counts.iter().all(|r| r.iter().all(|&x| x == 0)));
    }

    #[test]
    fn log_rederivation_matches_direct_sampling() {
        let c = small(150);
        let model = &*c.model;
        let grid = c.scenario.grid;
        let steps: Vec<u64> = c.scenario.observation_steps().into_iter().take(1200).collect();
        let mut rng = stream_rng(9, 0, 0);
        let mut rec = Recorder::new(model, grid.tau, true);
        let mut s = model.initial();
        let mut from = 0;
        let mut direct_obs = Vec::new();
        let mut direct_counts = Vec::new();
        for &step in &steps {
            advance(model, &mut s, &RouteWeights::default(), &grid, from, step, &mut rng, &mut rec).unwrap();
            from = step;
            let y: Vec<u32> = c
                .observation
                .observed_locations
                .iter()
                .map(|&l| (0..model.num_agents()).filter(|&a| model.plans.agents[a].is_probe && s.loc[a] as usize == l).count() as u32)
                .collect();
            direct_obs.push(y);
            direct_counts.push(s.counts.clone());
        }
        let log = rec.log.unwrap();
        assert!(!log.is_empty());
        let times: Vec<f64> = steps.iter().map(|&s| grid.time_of(s)).collect();
        let obs = probe_observations(model, &c.observation.observed_locations, &log, &times).unwrap();
        assert_eq!(obs, direct_obs);
        let counts = crate::traffic::replay_counts(&model.network, &model.initial().counts, &log, &times).unwrap();
        assert_eq!(counts, direct_counts);
    }

    #[test]
    fn csv_round_trips() {
        let c = small(40);
        let gt = simulate_ground_truth(&c, None, 2).unwrap();
        let net = &c.model.network;
        let mut buf = Vec::new();
        write_counts(&mut buf, net, &gt.sample_steps, &gt.counts).unwrap();
        let (steps, counts) = read_counts(buf.as_slice(), net).unwrap();
        assert_eq!(steps, gt.sample_steps);
        assert_eq!(counts, gt.counts);
        let obs = &c.observation.observed_locations;
        let mut buf = Vec::new();
        write_observations(&mut buf, net, obs, &gt.observation_steps, &gt.observations).unwrap();
        let (steps, values) = read_observations(buf.as_slice(), net, obs).unwrap();
        assert_eq!(steps, gt.observation_steps);
        assert_eq!(values, gt.observations);
    }

    #[test]
    fn trajectories_rebuild_from_the_log() {
        let c = small(60);
        let gt = simulate_ground_truth(&c, None, 5).unwrap();
        assert_eq!(trajectories_from_log(&c.model, &gt.log).unwrap(), gt.trajectories);
    }
}
