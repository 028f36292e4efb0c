use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDef {
    pub id: String,
    #[serde(default)]
    pub x: f64,
    #[serde(default)]
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkDef {
    pub id: String,
    pub from: String,
    pub to: String,
    /// meters
    pub length: f64,
    /// meters per second
    pub free_speed: f64,
    /// vehicles the link carries before its exit rate saturates
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingDef {
    pub id: String,
    /// Link that vehicles enter when leaving and leave when arriving.
    pub link: String,
    /// Per-vehicle departure rate once a vehicle is ready to leave (1/s).
    #[serde(default = "default_exit_rate")]
    pub exit_rate: f64,
    /// Ready vehicles that can leave at the full per-vehicle rate; beyond
    /// this the total departure rate saturates.
    #[serde(default = "default_exit_capacity")]
    pub exit_capacity: f64,
}

fn default_exit_rate() -> f64 {
    1.0 / 60.0
}

fn default_exit_capacity() -> f64 {
    60.0
}

/// Network file contents (`"format": "network/1"`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub format: String,
    pub nodes: Vec<NodeDef>,
    pub links: Vec<LinkDef>,
    pub buildings: Vec<BuildingDef>,
}

impl NetworkFile {
    pub const FORMAT: &'static str = "network/1";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationKind {
    Link,
    Building,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Location {
    pub id: String,
    pub kind: LocationKind,
    /// Links: meters. Buildings: 0.
    pub length: f64,
    pub free_speed: f64,
    pub capacity: f64,
    /// Buildings: index of the access link.
    pub access: Option<usize>,
    /// Buildings: per-vehicle departure rate and saturation count.
    pub exit_rate: f64,
    pub exit_capacity: f64,
}

/// Links and buildings as one indexed set of locations. Links come first in
/// file order, then buildings.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadNetwork {
    pub file: NetworkFile,
    pub locations: Vec<Location>,
    /// Downstream locations of each location.
    pub adjacency: Vec<Vec<usize>>,
    index: HashMap<String, usize>,
}

impl RoadNetwork {
    pub fn new(file: NetworkFile) -> Result<Self> {
        if file.format != NetworkFile::FORMAT {
            return Err(Error::invalid(format!(
                "unsupported network format {:?}",
                file.format
            )));
        }
        let nodes: HashMap<&str, usize> = file
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.as_str(), i))
            .collect();
        let mut locations = Vec::new();
        let mut index = HashMap::new();
        let mut link_nodes = Vec::new();
        for l in &file.links {
            if !(l.length > 0.0 && l.free_speed > 0.0 && l.capacity > 0.0) {
                return Err(Error::invalid(format!(
                    "link {}: length, free_speed and capacity must be positive",
                    l.id
                )));
            }
            let (Some(&a), Some(&b)) = (nodes.get(l.from.as_str()), nodes.get(l.to.as_str()))
            else {
                return Err(Error::invalid(format!("link {} references unknown node", l.id)));
            };
            link_nodes.push((a, b));
            if index.insert(l.id.clone(), locations.len()).is_some() {
                return Err(Error::invalid(format!("duplicate location id {}", l.id)));
            }
            locations.push(Location {
                id: l.id.clone(),
                kind: LocationKind::Link,
                length: l.length,
                free_speed: l.free_speed,
                capacity: l.capacity,
                access: None,
                exit_rate: 0.0,
                exit_capacity: 0.0,
            });
        }
        for b in &file.buildings {
            let Some(&access) = index.get(&b.link) else {
                return Err(Error::invalid(format!(
                    "building {} references unknown link {}",
                    b.id, b.link
                )));
            };
            if !(b.exit_rate > 0.0 && b.exit_capacity > 0.0) {
                return Err(Error::invalid(format!(
                    "building {}: exit rate and capacity must be positive",
                    b.id
                )));
            }
            if index.insert(b.id.clone(), locations.len()).is_some() {
                return Err(Error::invalid(format!("duplicate location id {}", b.id)));
            }
            locations.push(Location {
                id: b.id.clone(),
                kind: LocationKind::Building,
                length: 0.0,
                free_speed: 0.0,
                capacity: 0.0,
                access: Some(access),
                exit_rate: b.exit_rate,
                exit_capacity: b.exit_capacity,
            });
        }
        let mut adjacency = vec![Vec::new(); locations.len()];
        for (i, &(_, head)) in link_nodes.iter().enumerate() {
            for (j, &(tail, _)) in link_nodes.iter().enumerate() {
                if tail == head {
                    adjacency[i].push(j);
                }
            }
        }
        for (b, loc) in locations.iter().enumerate() {
            if let Some(a) = loc.access {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
        Ok(Self {
            file,
            locations,
            adjacency,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn is_building(&self, loc: usize) -> bool {
        self.locations[loc].kind == LocationKind::Building
    }

    pub fn buildings(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&l| self.is_building(l))
    }

    /// Hops from every location to `dest` (`u32::MAX` if unreachable).
    pub fn hops_to(&self, dest: usize) -> Vec<u32> {
        let n = self.len();
        let mut reverse = vec![Vec::new(); n];
        for (from, next) in self.adjacency.iter().enumerate() {
            for &to in next {
                reverse[to].push(from);
            }
        }
        let mut dist = vec![u32::MAX; n];
        dist[dest] = 0;
        let mut queue = VecDeque::from([dest]);
        while let Some(l) = queue.pop_front() {
            for &p in &reverse[l] {
                if dist[p] == u32::MAX {
                    dist[p] = dist[l] + 1;
                    // routes only pass through links
                    if !self.is_building(p) {
                        queue.push_back(p);
                    }
                }
            }
        }
        dist
    }

    /// Downstream locations that bring a vehicle at `from` one hop closer to
    /// `dest`, given hop counts from [`RoadNetwork::hops_to`].
    pub fn next_hops(&self, from: usize, hops: &[u32]) -> Vec<usize> {
        let d = hops[from];
        if d == 0 || d == u32::MAX {
            return Vec::new();
        }
        self.adjacency[from]
            .iter()
            .copied()
            .filter(|&to| hops[to] == d - 1)
            .collect()
    }
}
