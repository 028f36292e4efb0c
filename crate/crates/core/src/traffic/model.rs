use std::collections::HashMap;
use std::sync::Arc;

use super::{PlansFile, RoadNetwork};
use crate::kinetic::KineticModel;
use crate::{Error, Result};

/// `choice` value of an agent that has not committed to a downstream
/// location.
pub const NO_CHOICE: u8 = u8::MAX;
const NOT_IN_LANE: u32 = u32::MAX;
const NONE: u32 = u32::MAX;

/// Vehicles at one location heading for the same destination building.
/// They share a per-vehicle exit rate and a set of downstream choices.
#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub location: usize,
    pub dest: usize,
    pub choices: Vec<usize>,
    /// Global transition id of each choice.
    pub transitions: Vec<u32>,
}

/// Event numbering shared by all agents with the same activity buildings.
#[derive(Debug, Clone)]
struct Template {
    buildings: Vec<usize>,
    /// Global transition id -> local event index.
    local_of: Vec<u32>,
    /// Local event index -> global transition id.
    transitions: Vec<u32>,
}

/// Times at which agents become ready to leave each activity, in release
/// order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReleaseSchedule {
    /// Per activity index, `(time, agent)` sorted by time then agent.
    pub entries: Vec<Vec<(f64, u32)>>,
    rank: Vec<Vec<u32>>,
}

impl ReleaseSchedule {
    /// `times[q][agent]`: release from activity `q`, `None` if the agent has
    /// no activity after `q`.
    pub fn new(times: &[Vec<Option<f64>>]) -> Self {
        let mut entries = Vec::with_capacity(times.len());
        let mut rank = Vec::with_capacity(times.len());
        for per_agent in times {
            let mut e: Vec<(f64, u32)> = per_agent
                .iter()
                .enumerate()
                .filter_map(|(a, t)| t.map(|t| (t, a as u32)))
                .collect();
            e.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            let mut r = vec![NONE; per_agent.len()];
            for (i, &(_, a)) in e.iter().enumerate() {
                r[a as usize] = i as u32;
            }
            entries.push(e);
            rank.push(r);
        }
        Self { entries, rank }
    }

    pub fn time_of(&self, q: usize, agent: usize) -> Option<f64> {
        let r = *self.rank.get(q)?.get(agent)?;
        (r != NONE).then(|| self.entries[q][r as usize].0)
    }
}

/// Multipliers on the move rates, per `(transition, time bin)`. An empty
/// weight table means every multiplier is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteWeights {
    pub bin_width: f64,
    pub bins: usize,
    pub weights: Vec<f64>,
}

impl Default for RouteWeights {
    fn default() -> Self {
        Self {
            bin_width: f64::INFINITY,
            bins: 1,
            weights: Vec::new(),
        }
    }
}

impl RouteWeights {
    pub fn uniform(num_transitions: usize, bins: usize, bin_width: f64) -> Self {
        Self {
            bin_width,
            bins,
            weights: vec![1.0; num_transitions * bins],
        }
    }

    pub fn bin(&self, t: f64) -> usize {
        if self.bins <= 1 {
            return 0;
        }
        ((t / self.bin_width).floor().max(0.0) as usize).min(self.bins - 1)
    }

    pub fn weight(&self, transition: u32, bin: usize, num_transitions: usize) -> f64 {
        if self.weights.is_empty() {
            1.0
        } else {
            self.weights[bin * num_transitions + transition as usize]
        }
    }

    fn next_boundary(&self, t: f64) -> f64 {
        if self.bins <= 1 || self.weights.is_empty() {
            return f64::INFINITY;
        }
        let next = ((t / self.bin_width).floor() + 1.0) * self.bin_width;
        if next < self.bins as f64 * self.bin_width {
            next
        } else {
            f64::INFINITY
        }
    }
}

/// Where every agent is. Per-location counts and per-lane membership are
/// maintained incrementally alongside the per-agent locations.
#[derive(Debug)]
pub struct TrafficState {
    pub loc: Vec<u16>,
    /// `2 q` while at activity `q`, `2 q + 1` while travelling from it.
    pub phase: Vec<u8>,
    pub choice: Vec<u8>,
    slot: Vec<u32>,
    members: Vec<Vec<u32>>,
    decided: Vec<u32>,
    pub counts: Vec<u32>,
    cursor: Vec<u32>,
    pub schedule: Arc<ReleaseSchedule>,
}

impl Clone for TrafficState {
    fn clone(&self) -> Self {
        Self {
            loc: self.loc.clone(),
            phase: self.phase.clone(),
            choice: self.choice.clone(),
            slot: self.slot.clone(),
            members: self.members.clone(),
            decided: self.decided.clone(),
            counts: self.counts.clone(),
            cursor: self.cursor.clone(),
            schedule: self.schedule.clone(),
        }
    }

    fn clone_from(&mut self, src: &Self) {
        self.loc.clone_from(&src.loc);
        self.phase.clone_from(&src.phase);
        self.choice.clone_from(&src.choice);
        self.slot.clone_from(&src.slot);
        self.members.clone_from(&src.members);
        self.decided.clone_from(&src.decided);
        self.counts.clone_from(&src.counts);
        self.cursor.clone_from(&src.cursor);
        if !Arc::ptr_eq(&self.schedule, &src.schedule) {
            self.schedule = src.schedule.clone();
        }
    }
}

impl PartialEq for TrafficState {
    fn eq(&self, o: &Self) -> bool {
        // lane order is an implementation detail
        let norm = |m: &Vec<Vec<u32>>| {
            m.iter()
                .map(|l| {
                    let mut l = l.clone();
                    l.sort_unstable();
                    l
                })
                .collect::<Vec<_>>()
        };
        self.loc == o.loc
            && self.phase == o.phase
            && self.choice == o.choice
            && self.counts == o.counts
            && self.cursor == o.cursor
            && norm(&self.members) == norm(&o.members)
            && self.schedule == o.schedule
    }
}

impl TrafficState {
    pub fn num_agents(&self) -> usize {
        self.loc.len()
    }

    /// Activity index the agent is at or travelling towards the next of.
    pub fn activity(&self, agent: usize) -> usize {
        (self.phase[agent] / 2) as usize
    }

    pub fn on_road(&self, agent: usize) -> bool {
        self.phase[agent] % 2 == 1
    }

    pub fn lane_members(&self, lane: usize) -> &[u32] {
        &self.members[lane]
    }
}

/// The compiled traffic SKM: one move event per feasible
/// `(agent, from, to)` along the agent's activity chain.
#[derive(Debug, Clone)]
pub struct TrafficModel {
    pub network: Arc<RoadNetwork>,
    pub plans: Arc<PlansFile>,
    /// Distinct `(from, to)` location pairs used by any agent.
    pub transitions: Vec<(usize, usize)>,
    pub lanes: Vec<Lane>,
    lane_index: Vec<u32>,
    building_lanes: Vec<Vec<usize>>,
    templates: Vec<Template>,
    agent_template: Vec<u32>,
    event_offset: Vec<u64>,
    pub base_schedule: Arc<ReleaseSchedule>,
}

/// Builds the move-event model for `plans` on `network`.
pub fn compile_scenario(network: Arc<RoadNetwork>, plans: Arc<PlansFile>) -> Result<TrafficModel> {
    plans.validate(&network)?;
    let n_loc = network.len();
    if n_loc >= u16::MAX as usize {
        return Err(Error::invalid("too many locations"));
    }
    let mut hop_cache: HashMap<usize, Vec<u32>> = HashMap::new();
    let mut transitions: Vec<(usize, usize)> = Vec::new();
    let mut transition_index: HashMap<(usize, usize), u32> = HashMap::new();
    let mut lanes: Vec<Lane> = Vec::new();
    let mut lane_index = vec![NONE; n_loc * n_loc];
    let mut templates: Vec<Template> = Vec::new();
    let mut template_index: HashMap<Vec<usize>, u32> = HashMap::new();
    let mut template_moves: Vec<Vec<u32>> = Vec::new();
    let mut agent_template = Vec::with_capacity(plans.agents.len());

    for plan in &plans.agents {
        let buildings: Vec<usize> = plan
            .activities
            .iter()
            .map(|a| network.index_of(&a.location).expect("validated"))
            .collect();
        if let Some(&t) = template_index.get(&buildings) {
            agent_template.push(t);
            continue;
        }
        let mut moves: Vec<u32> = Vec::new();
        for leg in buildings.windows(2) {
            let (origin, dest) = (leg[0], leg[1]);
            let hops = hop_cache
                .entry(dest)
                .or_insert_with(|| network.hops_to(dest));
            if hops[origin] == u32::MAX {
                return Err(Error::UnreachableActivity {
                    agent: plan.agent_id.to_string(),
                    from: network.locations[origin].id.clone(),
                    to: network.locations[dest].id.clone(),
                });
            }
            let mut frontier = vec![origin];
            let mut seen = vec![false; n_loc];
            seen[origin] = true;
            while let Some(l) = frontier.pop() {
                let next = network.next_hops(l, hops);
                let li = l * n_loc + dest;
                if lane_index[li] == NONE {
                    lane_index[li] = lanes.len() as u32;
                    let ids = next
                        .iter()
                        .map(|&to| {
                            *transition_index.entry((l, to)).or_insert_with(|| {
                                transitions.push((l, to));
                                transitions.len() as u32 - 1
                            })
                        })
                        .collect();
                    lanes.push(Lane {
                        location: l,
                        dest,
                        choices: next.clone(),
                        transitions: ids,
                    });
                }
                for (c, &to) in next.iter().enumerate() {
                    let g = lanes[lane_index[li] as usize].transitions[c];
                    if !moves.contains(&g) {
                        moves.push(g);
                    }
                    if to != dest && !seen[to] {
                        seen[to] = true;
                        frontier.push(to);
                    }
                }
            }
        }
        let t = templates.len() as u32;
        template_index.insert(buildings.clone(), t);
        templates.push(Template {
            buildings,
            local_of: Vec::new(),
            transitions: Vec::new(),
        });
        template_moves.push(moves);
        agent_template.push(t);
    }
    for (tpl, moves) in templates.iter_mut().zip(template_moves) {
        tpl.local_of = vec![NONE; transitions.len()];
        for (i, &g) in moves.iter().enumerate() {
            tpl.local_of[g as usize] = i as u32;
        }
        tpl.transitions = moves;
    }
    let mut event_offset = Vec::with_capacity(agent_template.len() + 1);
    let mut acc = 0u64;
    event_offset.push(0);
    for &t in &agent_template {
        acc += templates[t as usize].transitions.len() as u64;
        event_offset.push(acc);
    }
    let mut building_lanes = vec![Vec::new(); n_loc];
    for (i, lane) in lanes.iter().enumerate() {
        if network.is_building(lane.location) {
            building_lanes[lane.location].push(i);
        }
    }
    let base_schedule = Arc::new(planned_schedule(&plans, &[]));
    Ok(TrafficModel {
        network,
        plans,
        transitions,
        lanes,
        lane_index,
        building_lanes,
        templates,
        agent_template,
        event_offset,
        base_schedule,
    })
}

/// Release schedule from the plans' planned departures, with per-activity
/// time shifts `shifts[q][agent]` applied where given.
pub fn planned_schedule(plans: &PlansFile, shifts: &[Vec<f64>]) -> ReleaseSchedule {
    let n_act = plans
        .agents
        .iter()
        .map(|p| p.activities.len())
        .max()
        .unwrap_or(0);
    let mut times = vec![vec![None; plans.agents.len()]; n_act.saturating_sub(1)];
    for (a, p) in plans.agents.iter().enumerate() {
        for q in 0..p.activities.len().saturating_sub(1) {
            let shift = shifts.get(q).and_then(|s| s.get(a)).copied().unwrap_or(0.0);
            times[q][a] = p.activities[q]
                .planned_departure()
                .map(|t| (t + shift).max(0.0));
        }
    }
    ReleaseSchedule::new(&times)
}

impl TrafficModel {
    pub fn num_agents(&self) -> usize {
        self.agent_template.len()
    }

    pub fn num_locations(&self) -> usize {
        self.network.len()
    }

    /// Move events available to `agent`.
    pub fn agent_event_count(&self, agent: usize) -> usize {
        (self.event_offset[agent + 1] - self.event_offset[agent]) as usize
    }

    /// Activity buildings of `agent` in order.
    pub fn agent_buildings(&self, agent: usize) -> &[usize] {
        &self.templates[self.agent_template[agent] as usize].buildings
    }

    pub fn lane(&self, location: usize, dest: usize) -> Option<usize> {
        let i = self.lane_index[location * self.num_locations() + dest];
        (i != NONE).then_some(i as usize)
    }

    /// `(agent, from, to)` of an event index.
    pub fn decode(&self, event: usize) -> (usize, usize, usize) {
        let e = event as u64;
        let agent = self.event_offset.partition_point(|&o| o <= e) - 1;
        let tpl = &self.templates[self.agent_template[agent] as usize];
        let g = tpl.transitions[(e - self.event_offset[agent]) as usize];
        let (from, to) = self.transitions[g as usize];
        (agent, from, to)
    }

    fn event_of(&self, agent: usize, transition: u32) -> usize {
        let tpl = &self.templates[self.agent_template[agent] as usize];
        let local = tpl.local_of[transition as usize];
        debug_assert!(local != NONE);
        (self.event_offset[agent] + local as u64) as usize
    }

    /// All agents at their first activity at time zero, using `schedule`
    /// for departures.
    pub fn initial_state(&self, schedule: Arc<ReleaseSchedule>) -> TrafficState {
        let n = self.num_agents();
        let mut counts = vec![0u32; self.num_locations()];
        let mut loc = Vec::with_capacity(n);
        for a in 0..n {
            let b = self.agent_buildings(a)[0];
            counts[b] += 1;
            loc.push(b as u16);
        }
        let mut state = TrafficState {
            loc,
            phase: vec![0; n],
            choice: vec![NO_CHOICE; n],
            slot: vec![NOT_IN_LANE; n],
            members: vec![Vec::new(); self.lanes.len()],
            decided: vec![0; self.lanes.len()],
            counts,
            cursor: vec![0; schedule.entries.len()],
            schedule,
        };
        self.catch_up(&mut state, 0.0);
        state
    }

    pub fn initial(&self) -> TrafficState {
        self.initial_state(self.base_schedule.clone())
    }

    /// Rebuilds a state at time `t` from per-agent locations, phases and
    /// choices.
    pub fn restore_state(
        &self,
        loc: Vec<u16>,
        phase: Vec<u8>,
        choice: &[u8],
        schedule: Arc<ReleaseSchedule>,
        t: f64,
    ) -> Result<TrafficState> {
        let n = self.num_agents();
        if loc.len() != n || phase.len() != n || choice.len() != n {
            return Err(Error::invalid("snapshot does not match the number of agents"));
        }
        let mut counts = vec![0u32; self.num_locations()];
        for a in 0..n {
            let l = loc[a] as usize;
            let b = self.agent_buildings(a);
            let q = (phase[a] / 2) as usize;
            let ok = l < counts.len()
                && q < b.len()
                && if phase[a] % 2 == 0 {
                    l == b[q]
                } else {
                    q + 1 < b.len() && self.lane(l, b[q + 1]).is_some()
                };
            if !ok {
                return Err(Error::invalid(format!("agent {a} has an inconsistent snapshot entry")));
            }
            counts[l] += 1;
        }
        let mut state = TrafficState {
            loc,
            phase,
            choice: vec![NO_CHOICE; n],
            slot: vec![NOT_IN_LANE; n],
            members: vec![Vec::new(); self.lanes.len()],
            decided: vec![0; self.lanes.len()],
            counts,
            cursor: vec![0; schedule.entries.len()],
            schedule,
        };
        for a in 0..n {
            if state.on_road(a) {
                let q = state.activity(a);
                let lane = self
                    .lane(state.loc[a] as usize, self.agent_buildings(a)[q + 1])
                    .expect("checked");
                self.add_to_lane(&mut state, a, lane);
            }
        }
        self.catch_up(&mut state, t);
        for (a, &c) in choice.iter().enumerate() {
            if c != NO_CHOICE {
                match self.agent_lane(&state, a) {
                    Some(l) if (c as usize) < self.lanes[l].choices.len() => self.set_choice(&mut state, a, c),
                    _ => return Err(Error::invalid(format!("agent {a} has an invalid route choice"))),
                }
            }
        }
        Ok(state)
    }

    /// Lane the agent is queued in, if any.
    pub fn agent_lane(&self, state: &TrafficState, agent: usize) -> Option<usize> {
        if state.slot[agent] == NOT_IN_LANE {
            return None;
        }
        let q = state.activity(agent);
        let dest = self.agent_buildings(agent)[q + 1];
        self.lane(state.loc[agent] as usize, dest)
    }

    /// Lane in which the agent still has to pick among several downstream
    /// locations.
    pub fn pending_decision(&self, state: &TrafficState, agent: usize) -> Option<usize> {
        if state.choice[agent] != NO_CHOICE {
            return None;
        }
        self.agent_lane(state, agent)
            .filter(|&l| self.lanes[l].choices.len() > 1)
    }

    /// Commits `agent` to choice `c` of its current lane.
    pub fn set_choice(&self, state: &mut TrafficState, agent: usize, c: u8) {
        let lane = self.agent_lane(state, agent).expect("agent not in a lane");
        debug_assert!((c as usize) < self.lanes[lane].choices.len());
        if state.choice[agent] == NO_CHOICE {
            state.decided[lane] += 1;
        }
        state.choice[agent] = c;
    }

    /// Whether the agent is past its release from activity `q`.
    pub fn released(&self, state: &TrafficState, q: usize, agent: usize) -> bool {
        match state.schedule.rank.get(q) {
            Some(r) => r[agent] != NONE && r[agent] < state.cursor[q],
            None => false,
        }
    }

    /// Replaces the release times from activity `q` of agents not yet
    /// released. Times before `now` are moved to `now`.
    pub fn reschedule(&self, state: &mut TrafficState, q: usize, changes: &[(u32, f64)], now: f64) {
        if changes.is_empty() {
            return;
        }
        let old = &state.schedule.entries[q];
        let cur = state.cursor[q] as usize;
        let mut times: HashMap<u32, f64> = old[cur..].iter().map(|&(t, a)| (a, t)).collect();
        for &(a, t) in changes {
            if let Some(slot) = times.get_mut(&a) {
                *slot = t.max(now);
            }
        }
        let mut tail: Vec<(f64, u32)> = times.into_iter().map(|(a, t)| (t, a)).collect();
        tail.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let mut sched = (*state.schedule).clone();
        sched.entries[q].truncate(cur);
        sched.entries[q].extend(tail);
        for (i, &(_, a)) in sched.entries[q].iter().enumerate() {
            sched.rank[q][a as usize] = i as u32;
        }
        state.schedule = Arc::new(sched);
    }

    fn add_to_lane(&self, state: &mut TrafficState, agent: usize, lane: usize) {
        state.slot[agent] = state.members[lane].len() as u32;
        state.members[lane].push(agent as u32);
    }

    fn remove_from_lane(&self, state: &mut TrafficState, agent: usize) {
        let Some(lane) = self.agent_lane(state, agent) else {
            return;
        };
        let s = state.slot[agent] as usize;
        let m = &mut state.members[lane];
        m.swap_remove(s);
        if let Some(&moved) = m.get(s) {
            state.slot[moved as usize] = s as u32;
        }
        if state.choice[agent] != NO_CHOICE {
            state.decided[lane] -= 1;
            state.choice[agent] = NO_CHOICE;
        }
        state.slot[agent] = NOT_IN_LANE;
    }

    fn ready_at(&self, state: &TrafficState, building: usize) -> usize {
        self.building_lanes[building]
            .iter()
            .map(|&l| state.members[l].len())
            .sum()
    }

    /// Per-vehicle exit rate of a lane's location.
    fn exit_rate(&self, state: &TrafficState, lane: usize) -> f64 {
        let loc = self.lanes[lane].location;
        let l = &self.network.locations[loc];
        if self.network.is_building(loc) {
            let ready = self.ready_at(state, loc) as f64;
            l.exit_rate * (l.exit_capacity / ready).min(1.0)
        } else {
            let x = state.counts[loc] as f64;
            l.free_speed / l.length * (l.capacity / x).min(1.0)
        }
    }

    /// Mean multiplier over the lane's choices; the rate factor of an
    /// undecided vehicle.
    fn lane_factor(&self, lane: usize, bin: usize, action: &RouteWeights) -> f64 {
        if action.weights.is_empty() {
            return 1.0;
        }
        let ln = &self.lanes[lane];
        let nt = self.transitions.len();
        ln.transitions
            .iter()
            .map(|&g| action.weight(g, bin, nt))
            .sum::<f64>()
            / ln.transitions.len() as f64
    }

    fn lane_hazard(&self, state: &TrafficState, lane: usize, bin: usize, action: &RouteWeights) -> (f64, f64, f64) {
        let n = state.members[lane].len();
        let r = self.exit_rate(state, lane);
        let f = self.lane_factor(lane, bin, action);
        let d = state.decided[lane] as f64;
        (r * (d + (n as f64 - d) * f), r, f)
    }

    /// Upper bound on the total hazard over all reachable states, with unit
    /// route multipliers.
    pub fn hazard_bound(&self) -> f64 {
        let mut used = vec![false; self.num_locations()];
        for lane in &self.lanes {
            used[lane.location] = true;
        }
        self.network
            .locations
            .iter()
            .zip(used)
            .filter(|(_, u)| *u)
            .map(|(l, _)| {
                if l.access.is_some() {
                    l.exit_rate * l.exit_capacity
                } else {
                    l.free_speed / l.length * l.capacity
                }
            })
            .sum()
    }

    /// Total length of links entered, for the distance score.
    pub fn link_length(&self, loc: usize) -> f64 {
        self.network.locations[loc].length
    }
}

impl KineticModel for TrafficModel {
    type State = TrafficState;
    type Action = RouteWeights;

    fn num_events(&self) -> usize {
        *self.event_offset.last().unwrap_or(&0) as usize
    }

    fn hazards(&self, state: &TrafficState, t: f64, action: &RouteWeights, out: &mut Vec<(usize, f64)>) {
        let bin = action.bin(t);
        let nt = self.transitions.len();
        for (li, lane) in self.lanes.iter().enumerate() {
            if state.members[li].is_empty() {
                continue;
            }
            let r = self.exit_rate(state, li);
            let k = lane.choices.len() as f64;
            for &a in &state.members[li] {
                let a = a as usize;
                match state.choice[a] {
                    NO_CHOICE => {
                        for &g in &lane.transitions {
                            let h = r * action.weight(g, bin, nt) / k;
                            if h > 0.0 {
                                out.push((self.event_of(a, g), h));
                            }
                        }
                    }
                    c => out.push((self.event_of(a, lane.transitions[c as usize]), r)),
                }
            }
        }
    }

    fn total_hazard(&self, state: &TrafficState, t: f64, action: &RouteWeights) -> f64 {
        let bin = action.bin(t);
        (0..self.lanes.len())
            .filter(|&l| !state.members[l].is_empty())
            .map(|l| self.lane_hazard(state, l, bin, action).0)
            .sum()
    }

    fn select_event(&self, state: &TrafficState, t: f64, action: &RouteWeights, target: f64) -> usize {
        let bin = action.bin(t);
        let nt = self.transitions.len();
        let mut acc = 0.0;
        let mut last = None;
        for li in 0..self.lanes.len() {
            let members = &state.members[li];
            if members.is_empty() {
                continue;
            }
            let (h, r, f) = self.lane_hazard(state, li, bin, action);
            if h <= 0.0 {
                continue;
            }
            last = Some(li);
            if target >= acc + h {
                acc += h;
                continue;
            }
            let mut rem = target - acc;
            let lane = &self.lanes[li];
            // walk members; weights are r (decided) or r * f (undecided)
            let pick = if state.decided[li] == 0 || f == 1.0 {
                let w = if state.decided[li] == 0 { r * f } else { r };
                let i = ((rem / w) as usize).min(members.len() - 1);
                rem -= i as f64 * w;
                (members[i] as usize, w)
            } else {
                let mut chosen = (*members.last().unwrap() as usize, r);
                for &a in members {
                    let w = if state.choice[a as usize] == NO_CHOICE { r * f } else { r };
                    if rem < w {
                        chosen = (a as usize, w);
                        break;
                    }
                    rem -= w;
                }
                chosen
            };
            let (agent, w) = pick;
            let c = match state.choice[agent] {
                NO_CHOICE if lane.choices.len() == 1 => 0,
                NO_CHOICE => {
                    // split w in proportion to the choice multipliers
                    let weights: Vec<f64> = lane
                        .transitions
                        .iter()
                        .map(|&g| action.weight(g, bin, nt))
                        .collect();
                    let total: f64 = weights.iter().sum();
                    let mut x = (rem / w).clamp(0.0, 1.0) * total;
                    let mut c = weights.len() - 1;
                    for (i, &wi) in weights.iter().enumerate() {
                        if x < wi {
                            c = i;
                            break;
                        }
                        x -= wi;
                    }
                    c
                }
                c => c as usize,
            };
            return self.event_of(agent, lane.transitions[c]);
        }
        // rounding at the top end
        let li = last.expect("select_event on zero hazard");
        let agent = *state.members[li].last().unwrap() as usize;
        let c = match state.choice[agent] {
            NO_CHOICE => 0,
            c => c as usize,
        };
        self.event_of(agent, self.lanes[li].transitions[c])
    }

    fn apply(&self, state: &mut TrafficState, event: usize) {
        let (agent, from, to) = self.decode(event);
        debug_assert_eq!(state.loc[agent] as usize, from);
        self.remove_from_lane(state, agent);
        state.counts[from] -= 1;
        state.counts[to] += 1;
        state.loc[agent] = to as u16;
        let buildings = self.agent_buildings(agent);
        let q = state.activity(agent);
        if self.network.is_building(to) {
            debug_assert_eq!(buildings[q + 1], to);
            let q = q + 1;
            state.phase[agent] = 2 * q as u8;
            if q + 1 < buildings.len() && self.released(state, q, agent) {
                let lane = self.lane(to, buildings[q + 1]).expect("lane exists");
                self.add_to_lane(state, agent, lane);
            }
        } else {
            if self.network.is_building(from) {
                state.phase[agent] = 2 * q as u8 + 1;
            }
            let lane = self.lane(to, buildings[q + 1]).expect("lane exists");
            self.add_to_lane(state, agent, lane);
        }
    }

    fn catch_up(&self, state: &mut TrafficState, t: f64) {
        for q in 0..state.cursor.len() {
            loop {
                let c = state.cursor[q] as usize;
                let Some(&(rt, a)) = state.schedule.entries[q].get(c) else {
                    break;
                };
                if rt > t + 1e-9 {
                    break;
                }
                state.cursor[q] += 1;
                let a = a as usize;
                if state.phase[a] as usize == 2 * q {
                    let b = self.agent_buildings(a);
                    let lane = self.lane(b[q], b[q + 1]).expect("lane exists");
                    self.add_to_lane(state, a, lane);
                }
            }
        }
    }

    fn next_rate_change(&self, state: &TrafficState, t: f64, action: &RouteWeights) -> f64 {
        let mut next = action.next_boundary(t);
        for (q, e) in state.schedule.entries.iter().enumerate() {
            if let Some(&(rt, _)) = e.get(state.cursor[q] as usize) {
                next = next.min(rt);
            }
        }
        next
    }

    fn describe(&self, state: &TrafficState) -> String {
        format!("counts {:?}", state.counts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetic::{advance, discrete_step_distribution, TimeGrid};
    use crate::rng::stream_rng;
    use crate::traffic::{Activity, AgentPlan, BuildingDef, LinkDef, NetworkFile, NodeDef};

    fn node(id: &str) -> NodeDef {
        NodeDef { id: id.into(), x: 0.0, y: 0.0 }
    }

    fn link(id: &str, from: &str, to: &str, length: f64) -> LinkDef {
        LinkDef {
            id: id.into(),
            from: from.into(),
            to: to.into(),
            length,
            free_speed: 10.0,
            capacity: 3.0,
        }
    }

    fn building(id: &str, link: &str) -> BuildingDef {
        BuildingDef {
            id: id.into(),
            link: link.into(),
            exit_rate: 0.05,
            exit_capacity: 5.0,
        }
    }

    fn commuter(id: u32, leave: f64) -> AgentPlan {
        let act = |loc: &str, arrival: Option<f64>, end: Option<f64>| Activity {
            location: loc.into(),
            desired_arrival: arrival,
            desired_duration: arrival.map(|_| 3600.0),
            end_time: end,
            opening: 0.0,
            closing: 108_000.0,
        };
        AgentPlan {
            agent_id: id,
            activities: vec![
                act("home", None, Some(leave)),
                act("work", Some(leave + 600.0), None),
                act("home", None, None),
            ],
            is_probe: id % 2 == 0,
        }
    }

    fn plans(agents: Vec<AgentPlan>) -> Arc<PlansFile> {
        Arc::new(PlansFile {
            format: PlansFile::FORMAT.into(),
            agents,
        })
    }

    fn single_link_net() -> Arc<RoadNetwork> {
        Arc::new(
            RoadNetwork::new(NetworkFile {
                format: NetworkFile::FORMAT.into(),
                nodes: vec![node("a"), node("b")],
                links: vec![link("l", "a", "b", 100.0)],
                buildings: vec![building("home", "l"), building("work", "l")],
            })
            .unwrap(),
        )
    }

    /// Two parallel routes from home to work and a single road back.
    fn diamond_net() -> Arc<RoadNetwork> {
        Arc::new(
            RoadNetwork::new(NetworkFile {
                format: NetworkFile::FORMAT.into(),
                nodes: ["a", "b", "c", "d"].into_iter().map(node).collect(),
                links: vec![
                    link("h", "a", "b", 100.0),
                    link("up", "b", "c", 200.0),
                    link("down", "b", "c", 300.0),
                    link("w", "c", "d", 100.0),
                    link("back", "d", "a", 400.0),
                ],
                buildings: vec![building("home", "h"), building("work", "w")],
            })
            .unwrap(),
        )
    }

    #[test]
    fn single_link_commute_has_four_moves() {
        let m = compile_scenario(single_link_net(), plans(vec![commuter(0, 100.0)])).unwrap();
        assert_eq!(m.num_events(), 4);
        let net = &m.network;
        let mut moves: Vec<(String, String)> = (0..4)
            .map(|e| {
                let (_, f, t) = m.decode(e);
                (net.locations[f].id.clone(), net.locations[t].id.clone())
            })
            .collect();
        moves.sort();
        let expect = [("home", "l"), ("l", "home"), ("l", "work"), ("work", "l")];
        let expect: Vec<(String, String)> = expect
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        assert_eq!(moves, expect);
    }

    #[test]
    fn zero_agents_have_no_events() {
        let m = compile_scenario(single_link_net(), plans(vec![])).unwrap();
        assert_eq!(m.num_events(), 0);
        let s = m.initial();
        assert_eq!(m.total_hazard(&s, 0.0, &RouteWeights::default()), 0.0);
    }

    #[test]
    fn unreachable_activity_is_reported() {
        let net = Arc::new(
            RoadNetwork::new(NetworkFile {
                format: NetworkFile::FORMAT.into(),
                nodes: ["a", "b", "c", "d"].into_iter().map(node).collect(),
                links: vec![link("x", "a", "b", 10.0), link("y", "c", "d", 10.0)],
                buildings: vec![building("home", "x"), building("work", "y")],
            })
            .unwrap(),
        );
        let err = compile_scenario(net, plans(vec![commuter(0, 10.0)])).unwrap_err();
        assert!(matches!(err, Error::UnreachableActivity { .. }));
    }

    #[test]
    fn diamond_branches_at_entry_link() {
        let m = compile_scenario(diamond_net(), plans(vec![commuter(0, 0.0)])).unwrap();
        let h = m.network.index_of("h").unwrap();
        let work = m.network.index_of("work").unwrap();
        let lane = m.lane(h, work).unwrap();
        assert_eq!(m.lanes[lane].choices.len(), 2);
        // home->h, h->up, h->down, up->w, down->w, w->work, work->w, w->back, back->h, h->home
        assert_eq!(m.num_events(), 10);
    }

    /// Checks that `select_event` samples exactly the listed hazards.
    fn check_selection(m: &TrafficModel, s: &TrafficState, t: f64, action: &RouteWeights) {
        let mut hs = Vec::new();
        m.hazards(s, t, action, &mut hs);
        let h0 = m.total_hazard(s, t, action);
        let listed: f64 = hs.iter().map(|x| x.1).sum();
        assert!((h0 - listed).abs() < 1e-12 * h0.max(1.0));
        let n = 20_000;
        let mut mass: HashMap<usize, f64> = HashMap::new();
        for i in 0..n {
            let target = (i as f64 + 0.5) / n as f64 * h0;
            *mass.entry(m.select_event(s, t, action, target)).or_default() += h0 / n as f64;
        }
        for (v, h) in hs {
            let got = mass.get(&v).copied().unwrap_or(0.0);
            assert!((got - h).abs() < 2.0 * h0 / n as f64 + 1e-12, "event {v}: {got} vs {h}");
        }
    }

    #[test]
    fn selection_matches_hazards() {
        let agents = (0..12).map(|i| commuter(i, i as f64 * 5.0)).collect();
        let m = compile_scenario(diamond_net(), plans(agents)).unwrap();
        let grid = TimeGrid::new(0.5, 400).unwrap();
        let mut weights = RouteWeights::uniform(m.transitions.len(), 1, f64::INFINITY);
        weights.weights[0] = 3.0;
        weights.weights[1] = 0.5;
        let mut s = m.initial();
        let mut rng = stream_rng(1, 0, 0);
        for k in 0..8 {
            advance(&m, &mut s, &weights, &grid, k * 50, (k + 1) * 50, &mut rng, &mut ()).unwrap();
            check_selection(&m, &s, grid.time_of((k + 1) * 50), &weights);
            // commit some agents to a route and check again
            for a in 0..m.num_agents() {
                if a % 3 == 0 && m.pending_decision(&s, a).is_some() {
                    m.set_choice(&mut s, a, 1);
                }
            }
            check_selection(&m, &s, grid.time_of((k + 1) * 50), &weights);
        }
    }

    #[test]
    fn counts_match_agent_locations_and_everyone_returns() {
        let agents = (0..30).map(|i| commuter(i, i as f64 * 20.0)).collect();
        let m = compile_scenario(diamond_net(), plans(agents)).unwrap();
        let grid = TimeGrid::new(0.5, 40_000).unwrap();
        let mut s = m.initial();
        let mut rng = stream_rng(2, 0, 0);
        for k in 0..40 {
            advance(&m, &mut s, &RouteWeights::default(), &grid, k * 1000, (k + 1) * 1000, &mut rng, &mut ()).unwrap();
            let mut hist = vec![0u32; m.num_locations()];
            for &l in &s.loc {
                hist[l as usize] += 1;
            }
            assert_eq!(hist, s.counts);
            assert_eq!(s.counts.iter().sum::<u32>(), 30);
        }
        let home = m.network.index_of("home").unwrap();
        assert_eq!(s.counts[home], 30);
        assert!(s.phase.iter().all(|&p| p == 4));
    }

    #[test]
    fn raising_a_route_multiplier_raises_its_probability() {
        let agents = (0..6).map(|i| commuter(i, 0.0)).collect();
        let m = compile_scenario(diamond_net(), plans(agents)).unwrap();
        let grid = TimeGrid::new(0.5, 2000).unwrap();
        let mut s = m.initial();
        let mut rng = stream_rng(3, 0, 0);
        let h = m.network.index_of("h").unwrap();
        for k in 0..2000 {
            if s.counts[h] > 0 {
                break;
            }
            advance(&m, &mut s, &RouteWeights::default(), &grid, k, k + 1, &mut rng, &mut ()).unwrap();
        }
        let up = m.network.index_of("up").unwrap();
        assert!(s.counts[h] > 0, "need vehicles on the branching link");
        let g = m.transitions.iter().position(|&x| x == (h, up)).unwrap();
        let prob = |lambda: f64| {
            let mut w = RouteWeights::uniform(m.transitions.len(), 1, f64::INFINITY);
            w.weights[g] = lambda;
            let d = discrete_step_distribution(&m, &s, 100.0, &w, 0.5).unwrap();
            d.events
                .iter()
                .filter(|(v, _)| {
                    let (_, f, t) = m.decode(*v);
                    (f, t) == (h, up)
                })
                .map(|x| x.1)
                .sum::<f64>()
        };
        assert!(prob(2.0) > prob(1.0));
        assert!(prob(1.0) > prob(0.5));
    }

    #[test]
    fn reschedule_moves_pending_departures() {
        let agents = (0..4).map(|i| commuter(i, 1000.0 + i as f64)).collect();
        let m = compile_scenario(single_link_net(), plans(agents)).unwrap();
        let mut s = m.initial();
        m.reschedule(&mut s, 0, &[(2, 10.0), (3, 2000.0)], 0.0);
        assert_eq!(s.schedule.time_of(0, 2), Some(10.0));
        assert_eq!(s.schedule.time_of(0, 3), Some(2000.0));
        assert_eq!(m.next_rate_change(&s, 0.0, &RouteWeights::default()), 10.0);
        m.catch_up(&mut s, 10.0);
        assert!(m.released(&s, 0, 2));
        assert!(!m.released(&s, 0, 0));
    }

    #[test]
    fn restored_state_has_the_same_hazards() {
        let agents = (0..20).map(|i| commuter(i, i as f64 * 15.0)).collect();
        let m = compile_scenario(diamond_net(), plans(agents)).unwrap();
        let grid = TimeGrid::new(0.5, 4000).unwrap();
        let w = RouteWeights::default();
        let mut s = m.initial();
        let mut rng = stream_rng(4, 0, 0);
        for k in 0..8 {
            advance(&m, &mut s, &w, &grid, k * 500, (k + 1) * 500, &mut rng, &mut ()).unwrap();
            let t = grid.time_of((k + 1) * 500);
            let r = m
                .restore_state(s.loc.clone(), s.phase.clone(), &s.choice, s.schedule.clone(), t)
                .unwrap();
            assert_eq!(r.counts, s.counts);
            let mut a = Vec::new();
            let mut b = Vec::new();
            m.hazards(&s, t, &w, &mut a);
            m.hazards(&r, t, &w, &mut b);
            a.sort_by(|x, y| x.0.cmp(&y.0));
            b.sort_by(|x, y| x.0.cmp(&y.0));
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x.0, y.0);
                assert!((x.1 - y.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn restore_rejects_bad_locations() {
        let m = compile_scenario(single_link_net(), plans(vec![commuter(0, 100.0)])).unwrap();
        let s = m.initial();
        let l = m.network.index_of("l").unwrap() as u16;
        let err = m.restore_state(vec![l], vec![0], &s.choice, s.schedule.clone(), 0.0);
        assert!(err.is_err());
    }
}
