use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::kinetic::sample_geometric;
use crate::{Error, Result};

/// Distribution over rollout lengths `p(T)` and reward steps `p(t)`.
///
/// Finite mode puts all mass on `T = H` with `p(t) = 1/(H+1)`. Discounted
/// mode draws `T ~ (1 - delta) delta^T` and weights steps by
/// `p(t) = (1 - rho) rho^t` with `rho = d / delta`, so that
/// `p(t) P(T >= t)` is proportional to `d^t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum HorizonMixture {
    Finite { horizon: u64 },
    Discounted { discount: f64, delta: f64 },
}

impl HorizonMixture {
    pub fn finite(horizon: u64) -> Self {
        HorizonMixture::Finite { horizon }
    }

    /// Discounted mixture with `delta = (1 + d) / 2`.
    pub fn discounted(discount: f64) -> Result<Self> {
        Self::discounted_with(discount, (1.0 + discount) / 2.0)
    }

    pub fn discounted_with(discount: f64, delta: f64) -> Result<Self> {
        let m = HorizonMixture::Discounted { discount, delta };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            HorizonMixture::Finite { .. } => Ok(()),
            HorizonMixture::Discounted { discount, delta } => {
                if discount > 0.0 && discount < delta && delta < 1.0 {
                    Ok(())
                } else {
                    Err(Error::invalid(format!(
                        "discounted mixture needs 0 < d < delta < 1, got d = {discount}, delta = {delta}"
                    )))
                }
            }
        }
    }

    pub fn sample_length<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match *self {
            HorizonMixture::Finite { horizon } => horizon,
            HorizonMixture::Discounted { delta, .. } => sample_geometric(1.0 - delta, rng) - 1,
        }
    }

    pub fn length_probability(&self, length: u64) -> f64 {
        match *self {
            HorizonMixture::Finite { horizon } => (length == horizon) as u8 as f64,
            HorizonMixture::Discounted { delta, .. } => (1.0 - delta) * delta.powf(length as f64),
        }
    }

    pub fn step_probability(&self, t: u64) -> f64 {
        match *self {
            HorizonMixture::Finite { horizon } => {
                if t <= horizon {
                    1.0 / (horizon as f64 + 1.0)
                } else {
                    0.0
                }
            }
            HorizonMixture::Discounted { discount, delta } => {
                let rho = discount / delta;
                (1.0 - rho) * rho.powf(t as f64)
            }
        }
    }

    /// `sum_{t = from}^{to - 1} p(t)`.
    pub fn step_mass(&self, from: u64, to: u64) -> f64 {
        if to <= from {
            return 0.0;
        }
        match *self {
            HorizonMixture::Finite { horizon } => {
                let to = to.min(horizon + 1);
                if to <= from {
                    0.0
                } else {
                    (to - from) as f64 / (horizon as f64 + 1.0)
                }
            }
            HorizonMixture::Discounted { discount, delta } => {
                let rho = discount / delta;
                rho.powf(from as f64) - rho.powf(to as f64)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn finite_steps_are_uniform() {
        let m = HorizonMixture::finite(2);
        let mut rng = stream_rng(0, 0, 0);
        assert_eq!(m.sample_length(&mut rng), 2);
        for t in 0..3 {
            assert!((m.step_probability(t) - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(m.step_probability(3), 0.0);
        assert_eq!(m.step_mass(0, 100), 1.0);
    }

    #[test]
    fn discounted_default_delta() {
        let m = HorizonMixture::discounted(0.9).unwrap();
        assert_eq!(
            m,
            HorizonMixture::Discounted {
                discount: 0.9,
                delta: 0.95
            }
        );
        assert!(HorizonMixture::discounted_with(0.9, 0.9).is_err());
        assert!(HorizonMixture::discounted_with(0.9, 1.0).is_err());
    }

    #[test]
    fn discounted_lengths_are_geometric() {
        let m = HorizonMixture::discounted_with(0.9, 0.95).unwrap();
        let mut rng = stream_rng(3, 0, 0);
        let n = 100_000;
        let mut hist = [0usize; 5];
        for _ in 0..n {
            let t = m.sample_length(&mut rng) as usize;
            if t < hist.len() {
                hist[t] += 1;
            }
        }
        for (t, &c) in hist.iter().enumerate() {
            let p = m.length_probability(t as u64);
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sd, "T = {t}: {c}");
        }
    }

    #[test]
    fn discounted_weights_follow_discount() {
        let m = HorizonMixture::discounted_with(0.8, 0.9).unwrap();
        // p(t) P(T >= t) / d^t is constant
        let ratio = |t: u64| {
            let tail: f64 = 1.0 - (0..t).map(|s| m.length_probability(s)).sum::<f64>();
            m.step_probability(t) * tail / 0.8f64.powi(t as i32)
        };
        for t in 1..=10 {
            assert!((ratio(t) - ratio(0)).abs() < 1e-12);
        }
        assert!((m.step_mass(0, 4000) - 1.0).abs() < 1e-12);
        let direct: f64 = (3..7).map(|t| m.step_probability(t)).sum();
        assert!((m.step_mass(3, 7) - direct).abs() < 1e-14);
    }
}
