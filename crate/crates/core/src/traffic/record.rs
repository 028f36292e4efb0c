use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{AgentTrajectory, RoadNetwork, TrafficModel, TrafficState};
use crate::kinetic::StepObserver;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    LeaveBuilding,
    EnterLink,
    LeaveLink,
    EnterBuilding,
}

impl EventKind {
    /// Change in the count at the row's location.
    pub fn count_delta(self) -> i64 {
        match self {
            EventKind::LeaveBuilding | EventKind::LeaveLink => -1,
            EventKind::EnterLink | EventKind::EnterBuilding => 1,
        }
    }
}

/// One row of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    pub agent_id: u32,
    pub event_kind: EventKind,
    pub location_id: String,
}

/// The log rows of one move: the location left and the location entered.
pub fn move_records(network: &RoadNetwork, time: f64, agent: usize, from: usize, to: usize) -> [EventRecord; 2] {
    let leave = if network.is_building(from) {
        EventKind::LeaveBuilding
    } else {
        EventKind::LeaveLink
    };
    let enter = if network.is_building(to) {
        EventKind::EnterBuilding
    } else {
        EventKind::EnterLink
    };
    let row = |kind, loc: usize| EventRecord {
        time,
        agent_id: agent as u32,
        event_kind: kind,
        location_id: network.locations[loc].id.clone(),
    };
    [row(leave, from), row(enter, to)]
}

pub fn write_event_log<W: Write>(w: W, rows: &[EventRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_event_log<R: Read>(r: R) -> Result<Vec<EventRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize().map(|row| Ok(row?)).collect()
}

/// Count matrix `[sample][location]` obtained by replaying `log` from the
/// initial locations; sample `i` includes every row with time at or before
/// `sample_times[i]`.
pub fn replay_counts(
    network: &RoadNetwork,
    initial: &[u32],
    log: &[EventRecord],
    sample_times: &[f64],
) -> Result<Vec<Vec<u32>>> {
    let mut counts: Vec<i64> = initial.iter().map(|&c| c as i64).collect();
    let mut out = Vec::with_capacity(sample_times.len());
    let mut i = 0;
    for &t in sample_times {
        while i < log.len() && log[i].time <= t {
            let row = &log[i];
            let loc = network
                .index_of(&row.location_id)
                .ok_or_else(|| Error::invalid(format!("unknown location {}", row.location_id)))?;
            counts[loc] += row.event_kind.count_delta();
            if counts[loc] < 0 {
                return Err(Error::invalid(format!(
                    "event log drives location {} negative at time {}",
                    row.location_id, row.time
                )));
            }
            i += 1;
        }
        out.push(counts.iter().map(|&c| c as u32).collect());
    }
    Ok(out)
}

/// Observer that records per-agent arrival/departure times and distances,
/// and optionally the event log.
#[derive(Debug, Clone)]
pub struct Recorder {
    pub tau: f64,
    pub trajectories: Vec<AgentTrajectory>,
    pub log: Option<Vec<EventRecord>>,
}

impl Recorder {
    pub fn new(model: &TrafficModel, tau: f64, keep_log: bool) -> Self {
        let trajectories = (0..model.num_agents())
            .map(|a| AgentTrajectory::new(model.agent_buildings(a).len()))
            .collect();
        Self {
            tau,
            trajectories,
            log: keep_log.then(Vec::new),
        }
    }

    /// Recorder for a run that starts from `state` at time `t`. Earlier
    /// arrivals and departures are unknown and recorded as happening at
    /// `t`, which leaves every score term inside a window starting at `t`
    /// unchanged.
    pub fn resume(model: &TrafficModel, state: &TrafficState, tau: f64, t: f64, keep_log: bool) -> Self {
        let mut rec = Self::new(model, tau, keep_log);
        for (agent, traj) in rec.trajectories.iter_mut().enumerate() {
            let q = state.activity(agent);
            for p in 1..=q {
                traj.arrivals[p] = Some(t);
            }
            for p in 0..q {
                traj.departures[p] = Some(t);
            }
            if state.on_road(agent) {
                traj.departures[q] = Some(t);
            }
        }
        rec
    }
}

impl StepObserver<TrafficModel> for Recorder {
    fn after_event(&mut self, model: &TrafficModel, step: u64, event: usize, state: &mut TrafficState) -> Result<()> {
        let t = step as f64 * self.tau;
        let (agent, from, to) = model.decode(event);
        let net = &model.network;
        let traj = &mut self.trajectories[agent];
        let q = state.activity(agent);
        if net.is_building(from) {
            traj.departures[q] = Some(t);
        }
        if net.is_building(to) {
            traj.arrivals[q] = Some(t);
        } else {
            let trip = if state.on_road(agent) { q } else { q - 1 };
            traj.distances[trip] += model.link_length(to);
        }
        if let Some(log) = &mut self.log {
            log.extend(move_records(net, t, agent, from, to));
        }
        Ok(())
    }
}
