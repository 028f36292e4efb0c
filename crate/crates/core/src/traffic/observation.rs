use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::{Error, Result};

/// Probe vehicles are a uniform subsample of `y_total` out of `x_total`
/// vehicles, so the probes seen at one location are hypergeometric given the
/// vehicles there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationModel {
    pub x_total: u32,
    pub y_total: u32,
    /// Location indices where probes are reported.
    pub observed_locations: Vec<usize>,
}

impl ObservationModel {
    pub fn new(x_total: u32, y_total: u32, observed_locations: Vec<usize>) -> Result<Self> {
        if y_total > x_total {
            return Err(Error::invalid(format!(
                "probe total {y_total} exceeds vehicle total {x_total}"
            )));
        }
        Ok(Self {
            x_total,
            y_total,
            observed_locations,
        })
    }
}

/// `ln n!` for `n` up to a fixed maximum.
#[derive(Debug, Clone)]
pub struct LogFactorials(Vec<f64>);

impl LogFactorials {
    pub fn new(max: u32) -> Self {
        Self((0..=max).map(|n| ln_gamma(n as f64 + 1.0)).collect())
    }

    pub fn ln_factorial(&self, n: u32) -> f64 {
        self.0[n as usize]
    }

    pub fn ln_choose(&self, n: u32, k: u32) -> f64 {
        if k > n {
            return f64::NEG_INFINITY;
        }
        self.0[n as usize] - self.0[k as usize] - self.0[(n - k) as usize]
    }
}

/// Hypergeometric log-likelihood with a cached factorial table.
#[derive(Debug, Clone)]
pub struct Hypergeometric {
    pub model: ObservationModel,
    table: LogFactorials,
    norm: f64,
}

impl Hypergeometric {
    pub fn new(model: ObservationModel) -> Self {
        let table = LogFactorials::new(model.x_total);
        let norm = table.ln_choose(model.x_total, model.y_total);
        Self { model, table, norm }
    }

    /// `log P(y probes | x vehicles)` at a single location.
    pub fn log_pmf(&self, x: u32, y: u32) -> f64 {
        let (xt, yt) = (self.model.x_total, self.model.y_total);
        if y > x || y > yt || x > xt || yt - y > xt - x {
            return f64::NEG_INFINITY;
        }
        self.table.ln_choose(x, y) + self.table.ln_choose(xt - x, yt - y) - self.norm
    }

    /// Sum over observed locations; `observed[i]` pairs with
    /// `model.observed_locations[i]`.
    pub fn log_likelihood(&self, counts: &[u32], observed: &[u32]) -> f64 {
        let mut acc = 0.0;
        for (&loc, &y) in self.model.observed_locations.iter().zip(observed) {
            acc += self.log_pmf(counts[loc], y);
            if acc == f64::NEG_INFINITY {
                break;
            }
        }
        acc
    }
}

/// `sum_l log[C(x_l, y_l) C(x_ttl - x_l, y_ttl - y_l) / C(x_ttl, y_ttl)]`
/// over the model's observed locations.
pub fn observation_log_likelihood(counts: &[u32], observed: &[u32], model: &ObservationModel) -> f64 {
    Hypergeometric::new(model.clone()).log_likelihood(counts, observed)
}
