//! The SynthTown benchmark: one home, one work place and 23 one-way links.
//!
//! Link 1 leaves the home node and fans out into nine parallel two-link
//! routes (links 2-10 then 11-19) that merge into link 20 at work. The way
//! back is link 20, then 21, 22, 23 and link 1 again. Homes sit on link 1
//! and the work place on link 20.

use rand::seq::index::sample;
use rand::Rng;

use super::{ObservationConfig, Scenario};
use crate::kinetic::TimeGrid;
use crate::rng::stream_rng;
use crate::traffic::{
    Activity, AgentPlan, BuildingDef, LinkDef, NetworkFile, NodeDef, PlansFile, ScoringConfig, DAY_SECONDS,
};

pub const SYNTHTOWN_AGENTS: usize = 2000;
pub const SYNTHTOWN_PROBES: usize = 200;
/// Free speed on every link (60 km/h).
pub const FREE_SPEED: f64 = 16.67;
pub const SYNTHTOWN_TAU: f64 = 0.1;

fn link(id: u32, from: u32, to: u32, length: f64, capacity: f64) -> LinkDef {
    LinkDef {
        id: id.to_string(),
        from: format!("n{from}"),
        to: format!("n{to}"),
        length,
        free_speed: FREE_SPEED,
        capacity,
    }
}

pub fn synthtown_network() -> NetworkFile {
    let nodes = (1..=15)
        .map(|i| {
            let a = i as f64 / 15.0 * std::f64::consts::TAU;
            NodeDef {
                id: format!("n{i}"),
                x: 10_000.0 * a.cos(),
                y: 10_000.0 * a.sin(),
            }
        })
        .collect();
    let mut links = vec![link(1, 1, 2, 6000.0, 200.0)];
    let route_len = |j: u32| 7000.0 + (j as f64 - 4.0).abs() * 1000.0;
    for j in 0..9 {
        links.push(link(2 + j, 2, 3 + j, route_len(j), 40.0));
    }
    for j in 0..9 {
        links.push(link(11 + j, 3 + j, 12, route_len(j), 40.0));
    }
    links.push(link(20, 12, 13, 6000.0, 200.0));
    links.push(link(21, 13, 14, 6000.0, 200.0));
    links.push(link(22, 14, 15, 10_000.0, 200.0));
    links.push(link(23, 15, 1, 6000.0, 200.0));
    let building = |id: &str, link: &str| BuildingDef {
        id: id.into(),
        link: link.into(),
        exit_rate: 1.0 / 60.0,
        exit_capacity: 60.0,
    };
    NetworkFile {
        format: NetworkFile::FORMAT.into(),
        nodes,
        links,
        buildings: vec![building("home", "1"), building("work", "20")],
    }
}

/// Desired work arrival uniform over 7:30-9:00 at minute resolution, leave
/// home 30 minutes earlier, stay 8 hours.
fn commuter(agent_id: u32, arrival: f64, is_probe: bool) -> AgentPlan {
    let home = |end_time: Option<f64>| Activity {
        location: "home".into(),
        desired_arrival: None,
        desired_duration: None,
        end_time,
        opening: 0.0,
        closing: DAY_SECONDS,
    };
    AgentPlan {
        agent_id,
        activities: vec![
            home(Some(arrival - 1800.0)),
            Activity {
                location: "work".into(),
                desired_arrival: Some(arrival),
                desired_duration: Some(8.0 * 3600.0),
                end_time: None,
                opening: 6.0 * 3600.0,
                closing: 20.0 * 3600.0,
            },
            home(None),
        ],
        is_probe,
    }
}

pub fn generate_synthtown(seed: u64) -> Scenario {
    let mut rng = stream_rng(seed, 0, 0);
    let arrivals: Vec<f64> = (0..SYNTHTOWN_AGENTS)
        .map(|_| rng.random_range(450..=540u32) as f64 * 60.0)
        .collect();
    let mut probe = vec![false; SYNTHTOWN_AGENTS];
    for i in sample(&mut rng, SYNTHTOWN_AGENTS, SYNTHTOWN_PROBES) {
        probe[i] = true;
    }
    let agents = (0..SYNTHTOWN_AGENTS)
        .map(|i| commuter(i as u32, arrivals[i], probe[i]))
        .collect();
    Scenario {
        format: Scenario::FORMAT.into(),
        network: synthtown_network(),
        plans: PlansFile {
            format: PlansFile::FORMAT.into(),
            agents,
        },
        scoring: ScoringConfig::default(),
        observation: ObservationConfig {
            observed_locations: vec!["1".into(), "20".into()],
            interval: 60.0,
        },
        grid: TimeGrid {
            tau: SYNTHTOWN_TAU,
            horizon: (DAY_SECONDS / SYNTHTOWN_TAU).round() as u64,
        },
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_match_the_published_table() {
        let s = generate_synthtown(1);
        let c = s.compile().unwrap();
        assert_eq!(c.model.num_locations(), 25);
        assert_eq!(s.network.links.len(), 23);
        assert_eq!(s.plans.agents.len(), 2000);
        assert_eq!(s.plans.probe_count(), 200);
        assert_eq!(c.observation.y_total, 200);
    }

    #[test]
    fn same_seed_same_file() {
        assert_eq!(generate_synthtown(5).to_json().unwrap(), generate_synthtown(5).to_json().unwrap());
        assert_ne!(generate_synthtown(5).plans, generate_synthtown(6).plans);
    }

    #[test]
    fn free_flow_commute_is_about_half_an_hour() {
        let s = generate_synthtown(1);
        let by = |id: &str| s.network.links.iter().find(|l| l.id == id).unwrap();
        let time = |ids: &[&str]| ids.iter().map(|&i| by(i).length / by(i).free_speed).sum::<f64>();
        let fastest = time(&["1", "6", "15", "20"]) / 60.0;
        assert!((25.0..=35.0).contains(&fastest), "{fastest}");
    }

    #[test]
    fn uniformization_bound_holds() {
        let c = generate_synthtown(1).compile().unwrap();
        assert!(c.model.hazard_bound() * SYNTHTOWN_TAU <= 1.0);
    }
}
