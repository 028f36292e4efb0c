use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Bin value that matches any time bin of a class when no exact row
/// exists.
pub const ANY_BIN: u32 = u32::MAX;

/// State features a policy conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FeatureKey {
    pub class: u32,
    pub bin: u32,
}

impl FeatureKey {
    pub fn new(class: u32, bin: u32) -> Self {
        Self { class, bin }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PolicyRow {
    class: u32,
    bin: u32,
    probabilities: Vec<f64>,
}

/// Table of action distributions per feature key. Keys without a row fall
/// back to the class-wide `ANY_BIN` row, then to the uniform distribution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<PolicyRow>", into = "Vec<PolicyRow>")]
pub struct Policy {
    rows: BTreeMap<FeatureKey, Vec<f64>>,
}

impl From<Vec<PolicyRow>> for Policy {
    fn from(rows: Vec<PolicyRow>) -> Self {
        Self {
            rows: rows
                .into_iter()
                .map(|r| (FeatureKey::new(r.class, r.bin), r.probabilities))
                .collect(),
        }
    }
}

impl From<Policy> for Vec<PolicyRow> {
    fn from(p: Policy) -> Self {
        p.rows
            .into_iter()
            .map(|(k, probabilities)| PolicyRow {
                class: k.class,
                bin: k.bin,
                probabilities,
            })
            .collect()
    }
}

impl Policy {
    pub fn uniform() -> Self {
        Self::default()
    }

    /// Normalizes and stores a row.
    pub fn set_row(&mut self, key: FeatureKey, weights: Vec<f64>) -> Result<()> {
        let total: f64 = weights.iter().sum();
        if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0)) || !(total > 0.0) || !total.is_finite() {
            return Err(Error::invalid(format!("policy row {key:?} must be nonnegative with positive sum")));
        }
        self.rows.insert(key, weights.into_iter().map(|w| w / total).collect());
        Ok(())
    }

    /// Deterministic row choosing `action`.
    pub fn set_action(&mut self, key: FeatureKey, actions: usize, action: usize) {
        let mut row = vec![0.0; actions];
        row[action] = 1.0;
        self.rows.insert(key, row);
    }

    pub fn rows(&self) -> impl Iterator<Item = (&FeatureKey, &Vec<f64>)> {
        self.rows.iter()
    }

    pub fn explicit_row(&self, key: FeatureKey) -> Option<&[f64]> {
        self.rows.get(&key).map(Vec::as_slice)
    }

    fn lookup(&self, key: FeatureKey, actions: usize) -> Option<&[f64]> {
        self.rows
            .get(&key)
            .or_else(|| self.rows.get(&FeatureKey::new(key.class, ANY_BIN)))
            .map(Vec::as_slice)
            .filter(|r| r.len() == actions)
    }

    pub fn probability(&self, key: FeatureKey, actions: usize, action: usize) -> f64 {
        match self.lookup(key, actions) {
            Some(r) => r[action],
            None => 1.0 / actions as f64,
        }
    }

    pub fn row(&self, key: FeatureKey, actions: usize) -> Vec<f64> {
        match self.lookup(key, actions) {
            Some(r) => r.to_vec(),
            None => vec![1.0 / actions as f64; actions],
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, key: FeatureKey, actions: usize, rng: &mut R) -> usize {
        if actions <= 1 {
            return 0;
        }
        match self.lookup(key, actions) {
            Some(r) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (a, &p) in r.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return a;
                    }
                }
                r.iter().rposition(|&p| p > 0.0).unwrap_or(0)
            }
            None => rng.random_range(0..actions),
        }
    }

    /// Most probable action, lowest index on ties.
    pub fn greedy(&self, key: FeatureKey, actions: usize) -> usize {
        let r = self.row(key, actions);
        let mut best = 0;
        for (a, &p) in r.iter().enumerate() {
            if p > r[best] {
                best = a;
            }
        }
        best
    }

    /// Largest absolute difference between two policies over the union of
    /// their explicit rows.
    pub fn distance(&self, other: &Policy) -> f64 {
        let mut d: f64 = 0.0;
        for (k, r) in &self.rows {
            let o = other.row(*k, r.len());
            d = r.iter().zip(&o).map(|(a, b)| (a - b).abs()).fold(d, f64::max);
        }
        for (k, r) in &other.rows {
            let s = self.row(*k, r.len());
            d = r.iter().zip(&s).map(|(a, b)| (a - b).abs()).fold(d, f64::max);
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn missing_rows_are_uniform() {
        let p = Policy::uniform();
        assert_eq!(p.row(FeatureKey::new(3, 1), 4), vec![0.25; 4]);
    }

    #[test]
    fn class_fallback() {
        let mut p = Policy::uniform();
        p.set_action(FeatureKey::new(1, ANY_BIN), 3, 2);
        assert_eq!(p.greedy(FeatureKey::new(1, 7), 3), 2);
        p.set_row(FeatureKey::new(1, 7), vec![2.0, 1.0, 1.0]).unwrap();
        assert_eq!(p.row(FeatureKey::new(1, 7), 3), vec![0.5, 0.25, 0.25]);
        assert_eq!(p.greedy(FeatureKey::new(1, 8), 3), 2);
    }

    #[test]
    fn sampling_follows_row() {
        let mut p = Policy::uniform();
        p.set_row(FeatureKey::new(0, 0), vec![0.0, 1.0]).unwrap();
        let mut rng = stream_rng(1, 0, 0);
        assert!((0..100).all(|_| p.sample(FeatureKey::new(0, 0), 2, &mut rng) == 1));
    }

    #[test]
    fn json_round_trip() {
        let mut p = Policy::uniform();
        p.set_row(FeatureKey::new(4, 2), vec![1.0, 3.0]).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        let q: Policy = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn rejects_bad_rows() {
        let mut p = Policy::uniform();
        assert!(p.set_row(FeatureKey::new(0, 0), vec![0.0, 0.0]).is_err());
        assert!(p.set_row(FeatureKey::new(0, 0), vec![-1.0, 2.0]).is_err());
    }
}
