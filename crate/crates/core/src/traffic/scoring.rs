use serde::{Deserialize, Serialize};

use super::AgentPlan;
use crate::{Error, Result};

/// Linear activity/travel utility. All `beta_*` except `beta_dist` are per
/// hour; `beta_dist` is per meter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub beta_dur: f64,
    pub beta_wait: f64,
    pub beta_late: f64,
    pub beta_early: f64,
    pub beta_time: f64,
    pub beta_dist: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            beta_dur: 6.0,
            beta_wait: 0.0,
            beta_late: -18.0,
            beta_early: -6.0,
            beta_time: -6.0,
            beta_dist: 0.0,
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.beta_dur,
            self.beta_wait,
            self.beta_late,
            self.beta_early,
            self.beta_time,
            self.beta_dist,
        ];
        if all.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("scoring coefficients must be finite"));
        }
        Ok(())
    }

    /// Lowest and highest instantaneous score rate (per hour) an agent can
    /// have: one of activity/wait/travel, plus being late for the next
    /// activity and having left the previous one early.
    pub fn rate_bounds(&self) -> (f64, f64) {
        let base = [self.beta_dur, self.beta_wait, self.beta_time];
        let lo = base.iter().copied().fold(f64::INFINITY, f64::min)
            + self.beta_late.min(0.0)
            + self.beta_early.min(0.0);
        let hi = base.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            + self.beta_late.max(0.0)
            + self.beta_early.max(0.0);
        (lo, hi)
    }
}

/// What one agent did, aligned with its plan's activities. Times are
/// seconds.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentTrajectory {
    /// When the agent reached each activity; `None` for the first activity
    /// means it was there from the start of the window.
    pub arrivals: Vec<Option<f64>>,
    /// When the agent left each activity.
    pub departures: Vec<Option<f64>>,
    /// Meters driven on each trip `q -> q + 1`.
    pub distances: Vec<f64>,
}

impl AgentTrajectory {
    pub fn new(activities: usize) -> Self {
        Self {
            arrivals: vec![None; activities],
            departures: vec![None; activities],
            distances: vec![0.0; activities.saturating_sub(1)],
        }
    }

    /// Duration of trip `q -> q + 1` if it has been completed.
    pub fn trip_time(&self, q: usize) -> Option<f64> {
        Some(self.arrivals.get(q + 1).copied()?? - self.departures.get(q).copied()??)
    }
}

/// A constant score rate (per hour) over `[from, to)` seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSegment {
    pub from: f64,
    pub to: f64,
    pub rate: f64,
}

fn overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.1.min(b.1) - a.0.max(b.0)).max(0.0)
}

fn presence(traj: &AgentTrajectory, q: usize, window: (f64, f64)) -> Option<(f64, f64)> {
    let arrival = match traj.arrivals.get(q).copied().flatten() {
        Some(t) => t,
        None if q == 0 => f64::NEG_INFINITY,
        None => return None,
    };
    let departure = traj.departures.get(q).copied().flatten().unwrap_or(f64::INFINITY);
    Some((arrival.max(window.0), departure.min(window.1)))
}

/// Total utility over `window` (seconds):
/// `sum S_dur + S_wait + S_late.ar + S_early.dp + sum S_time + S_dist`.
/// Distances are charged in full regardless of the window.
pub fn score_trajectory(
    plan: &AgentPlan,
    traj: &AgentTrajectory,
    config: &ScoringConfig,
    window: (f64, f64),
) -> f64 {
    let h = 1.0 / 3600.0;
    let mut score = 0.0;
    let n = plan.activities.len();
    for (q, act) in plan.activities.iter().enumerate() {
        if let Some(stay) = presence(traj, q, window) {
            score += config.beta_dur * h * overlap(stay, (act.opening, act.closing));
            score += config.beta_wait * h * overlap(stay, (f64::NEG_INFINITY, act.opening));
        }
        if let Some(a_star) = act.desired_arrival {
            let arrived = traj.arrivals[q].unwrap_or(f64::INFINITY);
            score += config.beta_late * h * overlap((a_star, arrived), window);
        }
        if let (Some(end), Some(dep)) = (act.desired_end(), traj.departures[q]) {
            score += config.beta_early * h * overlap((dep, end), window);
        }
        if q + 1 < n {
            if let Some(dep) = traj.departures[q] {
                let arr = traj.arrivals[q + 1].unwrap_or(f64::INFINITY);
                score += config.beta_time * h * overlap((dep, arr), window);
            }
            score += config.beta_dist * traj.distances[q];
        }
    }
    score
}

/// The instantaneous score rate of [`score_trajectory`] as a piecewise
/// constant function over `window`. Distance terms are not included.
pub fn rate_segments(
    plan: &AgentPlan,
    traj: &AgentTrajectory,
    config: &ScoringConfig,
    window: (f64, f64),
) -> Vec<RateSegment> {
    let n = plan.activities.len();
    let mut cuts = vec![window.0, window.1];
    for (q, act) in plan.activities.iter().enumerate() {
        cuts.extend([act.opening, act.closing]);
        cuts.extend(act.desired_arrival);
        cuts.extend(act.desired_end());
        cuts.extend(traj.arrivals[q]);
        cuts.extend(traj.departures[q]);
    }
    cuts.retain(|&t| t >= window.0 && t <= window.1);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let rate_at = |t: f64| -> f64 {
        let mut r = 0.0;
        for (q, act) in plan.activities.iter().enumerate() {
            let arrival = traj.arrivals[q];
            let departure = traj.departures[q].unwrap_or(f64::INFINITY);
            let here = match arrival {
                Some(a) => a <= t && t < departure,
                None => q == 0 && t < departure,
            };
            if here {
                if act.opening <= t && t < act.closing {
                    r += config.beta_dur;
                } else if t < act.opening {
                    r += config.beta_wait;
                }
            }
            if let Some(a_star) = act.desired_arrival {
                if t >= a_star && arrival.is_none_or(|a| t < a) {
                    r += config.beta_late;
                }
            }
            if let (Some(end), Some(dep)) = (act.desired_end(), traj.departures[q]) {
                if dep <= t && t < end {
                    r += config.beta_early;
                }
            }
            if q + 1 < n {
                if let Some(dep) = traj.departures[q] {
                    let arr = traj.arrivals[q + 1].unwrap_or(f64::INFINITY);
                    if dep <= t && t < arr {
                        r += config.beta_time;
                    }
                }
            }
        }
        r
    };

    let mut out: Vec<RateSegment> = Vec::new();
    for w in cuts.windows(2) {
        let rate = rate_at(w[0]);
        match out.last_mut() {
            Some(last) if last.rate == rate => last.to = w[1],
            _ => out.push(RateSegment {
                from: w[0],
                to: w[1],
                rate,
            }),
        }
    }
    out
}

/// Normalization range for turning scores into reward probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBounds {
    pub min: f64,
    pub max: f64,
}

impl RewardBounds {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(max > min) || !min.is_finite() || !max.is_finite() {
            return Err(Error::DegenerateBounds(min));
        }
        Ok(Self { min, max })
    }

    /// `(clamp(score) - min) / (max - min)` and whether clamping happened.
    pub fn probability(&self, score: f64) -> (f64, bool) {
        let clamped = score < self.min || score > self.max;
        let s = score.clamp(self.min, self.max);
        ((s - self.min) / (self.max - self.min), clamped)
    }
}

/// Linear map of a score into `[0, 1]`.
pub fn reward_to_probability(score: f64, bounds: (f64, f64)) -> Result<f64> {
    Ok(RewardBounds::new(bounds.0, bounds.1)?.probability(score).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic::Activity;

    fn commute(a_star: f64, dur: f64) -> AgentPlan {
        AgentPlan {
            agent_id: 0,
            activities: vec![
                Activity {
                    location: "home".into(),
                    desired_arrival: None,
                    desired_duration: None,
                    end_time: Some(a_star - 1800.0),
                    opening: 0.0,
                    closing: 108_000.0,
                },
                Activity {
                    location: "work".into(),
                    desired_arrival: Some(a_star),
                    desired_duration: Some(dur),
                    end_time: None,
                    opening: 0.0,
                    closing: 108_000.0,
                },
            ],
            is_probe: false,
        }
    }

    #[test]
    fn instant_on_time_commute_scores_duration_only() {
        let (a, d) = (8.0 * 3600.0, 8.0 * 3600.0);
        let plan = commute(a, d);
        let traj = AgentTrajectory {
            arrivals: vec![None, Some(a)],
            departures: vec![Some(a), Some(a + d)],
            distances: vec![0.0],
        };
        let cfg = ScoringConfig::default();
        let s = score_trajectory(&plan, &traj, &cfg, (a, a + d));
        assert!((s - cfg.beta_dur * 8.0).abs() < 1e-12);
    }

    #[test]
    fn one_hour_of_travel() {
        let plan = commute(10.0 * 3600.0, 3600.0);
        let traj = AgentTrajectory {
            arrivals: vec![None, Some(9.0 * 3600.0)],
            departures: vec![Some(8.0 * 3600.0), None],
            distances: vec![5000.0],
        };
        let cfg = ScoringConfig {
            beta_dur: 0.0,
            ..ScoringConfig::default()
        };
        let s = score_trajectory(&plan, &traj, &cfg, (8.0 * 3600.0, 9.0 * 3600.0));
        assert!((s - cfg.beta_time).abs() < 1e-12);
    }

    #[test]
    fn half_hour_late_costs_nine() {
        let a = 8.0 * 3600.0;
        let plan = commute(a, 3600.0);
        let on_time = AgentTrajectory {
            arrivals: vec![None, Some(a)],
            departures: vec![Some(a), None],
            distances: vec![0.0],
        };
        let late = AgentTrajectory {
            arrivals: vec![None, Some(a + 1800.0)],
            departures: vec![Some(a + 1800.0), None],
            distances: vec![0.0],
        };
        let cfg = ScoringConfig {
            beta_dur: 0.0,
            ..ScoringConfig::default()
        };
        let w = (0.0, 12.0 * 3600.0);
        let diff = score_trajectory(&plan, &late, &cfg, w) - score_trajectory(&plan, &on_time, &cfg, w);
        assert!((diff + 9.0).abs() < 1e-12);
    }

    #[test]
    fn segments_integrate_to_score() {
        let a = 8.0 * 3600.0;
        let plan = commute(a, 8.0 * 3600.0);
        let traj = AgentTrajectory {
            arrivals: vec![None, Some(a + 600.0)],
            departures: vec![Some(a - 1200.0), Some(a + 7.0 * 3600.0)],
            distances: vec![0.0],
        };
        let cfg = ScoringConfig::default();
        let w = (0.0, 20.0 * 3600.0);
        let total: f64 = rate_segments(&plan, &traj, &cfg, w)
            .iter()
            .map(|s| s.rate * (s.to - s.from) / 3600.0)
            .sum();
        assert!((total - score_trajectory(&plan, &traj, &cfg, w)).abs() < 1e-9);
    }

    #[test]
    fn reward_probability_examples() {
        let b = (-30.0, 6.0);
        assert_eq!(reward_to_probability(6.0, b).unwrap(), 1.0);
        assert_eq!(reward_to_probability(-30.0, b).unwrap(), 0.0);
        assert!((reward_to_probability(-12.0, b).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(
            reward_to_probability(1.0, (2.0, 2.0)),
            Err(Error::DegenerateBounds(_))
        ));
        let (p, clamped) = RewardBounds::new(0.0, 1.0).unwrap().probability(3.0);
        assert_eq!((p, clamped), (1.0, true));
    }

    #[test]
    fn default_rate_bounds() {
        assert_eq!(ScoringConfig::default().rate_bounds(), (-30.0, 6.0));
    }
}
