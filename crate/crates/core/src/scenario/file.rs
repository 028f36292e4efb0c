use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::kinetic::TimeGrid;
use crate::traffic::{compile_scenario, NetworkFile, ObservationModel, PlansFile, RoadNetwork, ScoringConfig, TrafficModel};
use crate::{Error, Result};

/// Which locations report probe counts and how often.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationConfig {
    /// Location ids.
    pub observed_locations: Vec<String>,
    /// Seconds between reports.
    pub interval: f64,
}

/// Everything needed to simulate, track and plan one scenario
/// (`"format": "scenario/1"`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub format: String,
    pub network: NetworkFile,
    pub plans: PlansFile,
    #[serde(default)]
    pub scoring: ScoringConfig,
    pub observation: ObservationConfig,
    pub grid: TimeGrid,
    #[serde(default)]
    pub seed: u64,
}

/// A scenario with its network and model built.
#[derive(Debug, Clone)]
pub struct CompiledScenario {
    pub scenario: Scenario,
    pub model: Arc<TrafficModel>,
    pub observation: ObservationModel,
}

impl Scenario {
    pub const FORMAT: &'static str = "scenario/1";

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let s: Scenario = serde_json::from_str(&text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Checks formats, id references and the probe total.
    pub fn validate(&self) -> Result<()> {
        if self.format != Self::FORMAT {
            return Err(Error::invalid(format!("unsupported scenario format {:?}", self.format)));
        }
        let net = RoadNetwork::new(self.network.clone())?;
        self.plans.validate(&net)?;
        self.scoring.validate()?;
        self.observation_model(&net)?;
        if !(self.observation.interval > 0.0) {
            return Err(Error::invalid("observation interval must be positive"));
        }
        TimeGrid::new(self.grid.tau, self.grid.horizon)?;
        Ok(())
    }

    fn observation_model(&self, net: &RoadNetwork) -> Result<ObservationModel> {
        let locs = self
            .observation
            .observed_locations
            .iter()
            .map(|id| net.index_of(id).ok_or_else(|| Error::invalid(format!("unknown observed location {id:?}"))))
            .collect::<Result<Vec<_>>>()?;
        ObservationModel::new(self.plans.agents.len() as u32, self.plans.probe_count() as u32, locs)
    }

    pub fn compile(&self) -> Result<CompiledScenario> {
        self.validate()?;
        let net = Arc::new(RoadNetwork::new(self.network.clone())?);
        let observation = self.observation_model(&net)?;
        let model = compile_scenario(net, Arc::new(self.plans.clone()))?;
        Ok(CompiledScenario {
            scenario: self.clone(),
            model: Arc::new(model),
            observation,
        })
    }

    /// Grid steps at which probe reports arrive, excluding step 0.
    pub fn observation_steps(&self) -> Vec<u64> {
        let every = (self.observation.interval / self.grid.tau).round().max(1.0) as u64;
        (1..=self.grid.horizon / every).map(|i| i * every).collect()
    }
}
