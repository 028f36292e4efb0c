use serde::{Deserialize, Serialize};

use crate::traffic::{score_trajectory, AgentPlan, AgentTrajectory, ScoringConfig};

/// `1 - sum (f - y)^2 / sum (y - mean y)^2`, or `None` when `y` is
/// constant.
pub fn r_squared(estimate: &[f64], truth: &[f64]) -> Option<f64> {
    assert_eq!(estimate.len(), truth.len());
    if truth.is_empty() {
        return None;
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return None;
    }
    let ss_res: f64 = estimate.iter().zip(truth).map(|(f, y)| (f - y).powi(2)).sum();
    Some(1.0 - ss_res / ss_tot)
}

/// R² of each location's time series; `estimates[t][l]` and `truth[t][l]`.
pub fn r_squared_per_location(estimates: &[Vec<f64>], truth: &[Vec<f64>]) -> Vec<Option<f64>> {
    assert_eq!(estimates.len(), truth.len());
    let n = truth.first().map_or(0, |r| r.len());
    (0..n)
        .map(|l| {
            let f: Vec<f64> = estimates.iter().map(|r| r[l]).collect();
            let y: Vec<f64> = truth.iter().map(|r| r[l]).collect();
            r_squared(&f, &y)
        })
        .collect()
}

/// `(1/n) sum_l (y_l - f_l)^2` at each step.
pub fn mse_per_step(estimates: &[Vec<f64>], truth: &[Vec<f64>]) -> Vec<f64> {
    assert_eq!(estimates.len(), truth.len());
    estimates
        .iter()
        .zip(truth)
        .map(|(f, y)| {
            assert_eq!(f.len(), y.len());
            let n = y.len().max(1) as f64;
            f.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripMetrics {
    /// Minutes per trip. A trip still under way at the end of the window
    /// counts until the window end.
    pub average_trip_time: f64,
    /// Fraction of agents reaching every activity with a desired arrival no
    /// later than that time.
    pub on_time_ratio: f64,
    /// Mean score per agent per hour of the window.
    pub expected_reward: f64,
}

pub fn trip_metrics(plans: &[AgentPlan], trajectories: &[AgentTrajectory], scoring: &ScoringConfig, window: (f64, f64)) -> TripMetrics {
    assert_eq!(plans.len(), trajectories.len());
    let mut trip_total = 0.0;
    let mut trips = 0usize;
    let mut on_time = 0usize;
    let mut score = 0.0;
    for (plan, traj) in plans.iter().zip(trajectories) {
        for q in 0..plan.activities.len().saturating_sub(1) {
            if let Some(dep) = traj.departures[q] {
                let arr = traj.arrivals[q + 1].unwrap_or(window.1);
                trip_total += arr - dep;
                trips += 1;
            }
        }
        let punctual = plan.activities.iter().enumerate().all(|(q, a)| match a.desired_arrival {
            Some(want) => traj.arrivals[q].is_some_and(|t| t <= want),
            None => true,
        });
        on_time += punctual as usize;
        score += score_trajectory(plan, traj, scoring, window);
    }
    let n = plans.len().max(1) as f64;
    let hours = (window.1 - window.0) / 3600.0;
    TripMetrics {
        average_trip_time: if trips == 0 { 0.0 } else { trip_total / trips as f64 / 60.0 },
        on_time_ratio: on_time as f64 / n,
        expected_reward: score / n / hours,
    }
}

/// Accuracy of count estimates against ground truth, and optionally the
/// trip statistics of the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub location_ids: Vec<String>,
    /// `None` where the true series is constant.
    pub r_squared: Vec<Option<f64>>,
    pub steps: Vec<u64>,
    pub mse: Vec<f64>,
    pub mean_mse: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trips: Option<TripMetrics>,
}

pub fn compute_metrics(location_ids: Vec<String>, steps: Vec<u64>, estimates: &[Vec<f64>], truth: &[Vec<f64>], trips: Option<TripMetrics>) -> MetricReport {
    let mse = mse_per_step(estimates, truth);
    let mean_mse = if mse.is_empty() { 0.0 } else { mse.iter().sum::<f64>() / mse.len() as f64 };
    MetricReport {
        location_ids,
        r_squared: r_squared_per_location(estimates, truth),
        steps,
        mse,
        mean_mse,
        trips,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic::Activity;

    fn series() -> Vec<Vec<f64>> {
        vec![vec![1.0, 5.0], vec![2.0, 3.0], vec![6.0, 4.0], vec![3.0, 0.0]]
    }

    #[test]
    fn perfect_estimates() {
        let y = series();
        let r = compute_metrics(vec!["a".into(), "b".into()], vec![0, 1, 2, 3], &y, &y, None);
        assert!(r.mse.iter().all(|&m| m == 0.0));
        assert!(r.r_squared.iter().all(|&x| x == Some(1.0)));
    }

    #[test]
    fn temporal_mean_scores_zero() {
        let y = series();
        let means: Vec<f64> = (0..2).map(|l| y.iter().map(|r| r[l]).sum::<f64>() / 4.0).collect();
        let f = vec![means; 4];
        for r in r_squared_per_location(&f, &y) {
            assert!(r.unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn constant_offset() {
        let y = series();
        let c = 1.7;
        let f: Vec<Vec<f64>> = y.iter().map(|r| r.iter().map(|v| v + c).collect()).collect();
        for m in mse_per_step(&f, &y) {
            assert!((m - c * c).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_series_is_undefined() {
        assert_eq!(r_squared(&[1.0, 2.0], &[3.0, 3.0]), None);
    }

    #[test]
    fn trip_statistics() {
        let act = |a: Option<f64>| Activity {
            location: "x".into(),
            desired_arrival: a,
            desired_duration: None,
            end_time: None,
            opening: 0.0,
            closing: 7200.0,
        };
        let plan = AgentPlan {
            agent_id: 0,
            activities: vec![act(None), act(Some(1000.0))],
            is_probe: false,
        };
        let mut on = AgentTrajectory::new(2);
        on.departures[0] = Some(100.0);
        on.arrivals[1] = Some(700.0);
        let mut late = AgentTrajectory::new(2);
        late.departures[0] = Some(100.0);
        late.arrivals[1] = Some(1900.0);
        let plans = vec![plan.clone(), plan];
        let m = trip_metrics(&plans, &[on, late], &ScoringConfig::default(), (0.0, 7200.0));
        assert!((m.average_trip_time - 20.0).abs() < 1e-12);
        assert_eq!(m.on_time_ratio, 0.5);
    }
}
