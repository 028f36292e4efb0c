use std::io::Write;

use std::io::Read;

use serde::{Deserialize, Serialize};

use super::{compute_metrics, CompiledScenario, GroundTruth, MetricReport};
use crate::inference::{
    estimate_state, merge_stops, run_filter, FilterConfig, FilterOutput, LocationEstimate, ParticleEnsemble,
};
use crate::rng::derive_seed;
use crate::traffic::{Hypergeometric, RoadNetwork, RouteWeights, TrafficState};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrackConfig {
    pub filter: FilterConfig,
    /// Forecast offsets in grid steps; 0 is the nowcast.
    pub horizons: Vec<u64>,
    /// Estimates are reported at every multiple of this many steps.
    pub report_every: u64,
    /// Particles used for each forecast (all of them if `None`).
    pub forecast_subset: Option<usize>,
}

/// Estimates for one forecast offset.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonEstimates {
    pub horizon: u64,
    pub report_steps: Vec<u64>,
    /// `estimates[i][l]` is the forecast for `report_steps[i] + horizon`.
    pub estimates: Vec<Vec<LocationEstimate>>,
}

impl HorizonEstimates {
    pub fn target_steps(&self) -> Vec<u64> {
        self.report_steps.iter().map(|s| s + self.horizon).collect()
    }

    pub fn means(&self) -> Vec<Vec<f64>> {
        self.estimates.iter().map(|r| r.iter().map(|e| e.mean).collect()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrackOutput {
    pub horizons: Vec<HorizonEstimates>,
    pub filter: FilterOutput,
    /// The ensemble after the last stop.
    pub ensemble: ParticleEnsemble<TrafficState>,
}

/// Filters probe observations through the scenario and reports count
/// estimates at each report step for every configured offset. Forecasts
/// that would end past the grid are skipped.
pub fn track(scenario: &CompiledScenario, obs_steps: &[u64], observations: &[Vec<u32>], config: &TrackConfig) -> Result<TrackOutput> {
    if obs_steps.len() != observations.len() {
        return Err(Error::invalid("observation steps and values differ in length"));
    }
    if config.report_every == 0 {
        return Err(Error::invalid("report interval must be positive"));
    }
    let model = &*scenario.model;
    let grid = scenario.scenario.grid;
    let hyper = Hypergeometric::new(scenario.observation.clone());
    let reports: Vec<u64> = (1..=grid.horizon / config.report_every)
        .map(|i| i * config.report_every)
        .collect();
    let stops = merge_stops(obs_steps, &reports);
    let mut ensemble = ParticleEnsemble::replicate(model.initial(), config.filter.particles, 0)?;
    let mut horizons: Vec<HorizonEstimates> = config
        .horizons
        .iter()
        .map(|&h| HorizonEstimates {
            horizon: h,
            report_steps: Vec::new(),
            estimates: Vec::new(),
        })
        .collect();
    let action = RouteWeights::default();
    let forecast_seed = derive_seed(config.filter.seed, 3);
    let mut on_stop = |ens: &ParticleEnsemble<TrafficState>, _si: usize, _obs: &mut Vec<()>| -> Result<()> {
        let step = ens.step;
        if step % config.report_every != 0 {
            return Ok(());
        }
        for h in horizons.iter_mut() {
            if step + h.horizon > grid.horizon {
                continue;
            }
            let est = estimate_state(
                model,
                ens,
                &action,
                &grid,
                h.horizon,
                derive_seed(forecast_seed, step),
                config.forecast_subset,
                |x: &TrafficState| x.counts.as_slice(),
            )?;
            h.report_steps.push(step);
            h.estimates.push(est);
        }
        Ok(())
    };
    let describe = |oi: usize| format!("{:?} probes at step {}", observations[oi], obs_steps[oi]);
    let filter = run_filter(
        model,
        &mut ensemble,
        &action,
        &grid,
        &stops,
        |x: &TrafficState, oi| hyper.log_likelihood(&x.counts, &observations[oi]),
        &describe,
        &config.filter,
        &|| (),
        &mut on_stop,
    )?;
    Ok(TrackOutput {
        horizons,
        filter,
        ensemble,
    })
}

/// Forecast that every count stays as it is at the report step.
pub fn persistence_forecast(truth: &GroundTruth, report_steps: &[u64]) -> Result<Vec<Vec<f64>>> {
    report_steps
        .iter()
        .map(|&s| {
            truth
                .counts_at(s)
                .map(|r| r.iter().map(|&c| c as f64).collect())
                .ok_or_else(|| Error::invalid(format!("ground truth has no counts at step {s}")))
        })
        .collect()
}

/// Ground truth rows at the given steps.
pub fn truth_at(truth: &GroundTruth, steps: &[u64]) -> Result<Vec<Vec<f64>>> {
    persistence_forecast(truth, steps)
}

/// Accuracy of the filter's means and of the persistence forecast at one
/// offset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HorizonReport {
    pub horizon: u64,
    pub filter: MetricReport,
    pub persistence: MetricReport,
}

pub fn evaluate_tracking(scenario: &CompiledScenario, output: &TrackOutput, truth: &GroundTruth) -> Result<Vec<HorizonReport>> {
    let ids: Vec<String> = scenario.model.network.locations.iter().map(|l| l.id.clone()).collect();
    output
        .horizons
        .iter()
        .map(|h| {
            let targets = h.target_steps();
            let y = truth_at(truth, &targets)?;
            let base = persistence_forecast(truth, &h.report_steps)?;
            Ok(HorizonReport {
                horizon: h.horizon,
                filter: compute_metrics(ids.clone(), targets.clone(), &h.means(), &y, None),
                persistence: compute_metrics(ids.clone(), targets, &base, &y, None),
            })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct EstimateRow {
    report_step: u64,
    target_step: u64,
    location_id: String,
    mean: f64,
    p10: f64,
    p90: f64,
}

/// `report_step,target_step,location_id,mean,p10,p90`.
pub fn write_estimates<W: Write>(w: W, scenario: &CompiledScenario, h: &HorizonEstimates) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let locs = &scenario.model.network.locations;
    for (&step, row) in h.report_steps.iter().zip(&h.estimates) {
        for (l, e) in row.iter().enumerate() {
            out.serialize(EstimateRow {
                report_step: step,
                target_step: step + h.horizon,
                location_id: locs[l].id.clone(),
                mean: e.mean,
                p10: e.p10,
                p90: e.p90,
            })?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads estimates written by [`write_estimates`]. All rows must share one
/// forecast offset.
pub fn read_estimates<R: Read>(r: R, network: &RoadNetwork) -> Result<HorizonEstimates> {
    let mut h = HorizonEstimates {
        horizon: 0,
        report_steps: Vec::new(),
        estimates: Vec::new(),
    };
    let empty = LocationEstimate {
        mean: 0.0,
        p10: 0.0,
        p90: 0.0,
    };
    for row in csv::Reader::from_reader(r).deserialize() {
        let row: EstimateRow = row?;
        let l = network
            .index_of(&row.location_id)
            .ok_or_else(|| Error::invalid(format!("unknown location {}", row.location_id)))?;
        let offset = row
            .target_step
            .checked_sub(row.report_step)
            .ok_or_else(|| Error::invalid("estimate targets a step before its report"))?;
        if h.report_steps.last() != Some(&row.report_step) {
            if h.report_steps.is_empty() {
                h.horizon = offset;
            } else if h.report_steps.last().is_some_and(|&s| s > row.report_step) {
                return Err(Error::invalid("estimate rows must be sorted by report_step"));
            }
            h.report_steps.push(row.report_step);
            h.estimates.push(vec![empty; network.len()]);
        }
        if offset != h.horizon {
            return Err(Error::invalid("estimate file mixes forecast offsets"));
        }
        h.estimates.last_mut().expect("pushed")[l] = LocationEstimate {
            mean: row.mean,
            p10: row.p10,
            p90: row.p90,
        };
    }
    Ok(h)
}
