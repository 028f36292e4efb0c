use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::KineticModel;
use crate::{Error, Result};

/// One production `sum_m alpha_m X_m --c--> sum_m beta_m X_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSchema {
    pub name: String,
    /// `(species, alpha)` pairs with `alpha > 0`.
    pub reactants: Vec<(usize, u32)>,
    /// `(species, beta)` pairs with `beta > 0`.
    pub products: Vec<(usize, u32)>,
    pub rate_constant: f64,
    /// `beta - alpha` for every species where it is nonzero. Catalysts
    /// (equal counts on both sides) do not appear.
    pub delta: Vec<(usize, i64)>,
}

impl EventSchema {
    pub fn new(
        name: impl Into<String>,
        reactants: &[(usize, u32)],
        products: &[(usize, u32)],
        rate_constant: f64,
    ) -> Result<Self> {
        let name = name.into();
        if !(rate_constant >= 0.0 && rate_constant.is_finite()) {
            return Err(Error::invalid(format!(
                "event {name}: rate constant must be finite and nonnegative, got {rate_constant}"
            )));
        }
        let mut net: BTreeMap<usize, i64> = BTreeMap::new();
        let mut r: BTreeMap<usize, u32> = BTreeMap::new();
        let mut p: BTreeMap<usize, u32> = BTreeMap::new();
        for &(m, a) in reactants {
            *r.entry(m).or_default() += a;
            *net.entry(m).or_default() -= i64::from(a);
        }
        for &(m, b) in products {
            *p.entry(m).or_default() += b;
            *net.entry(m).or_default() += i64::from(b);
        }
        Ok(Self {
            name,
            reactants: r.into_iter().filter(|&(_, a)| a > 0).collect(),
            products: p.into_iter().filter(|&(_, b)| b > 0).collect(),
            rate_constant,
            delta: net.into_iter().filter(|&(_, d)| d != 0).collect(),
        })
    }

    /// Mass-action combinatorial factor `g_v(x) = prod_m x_m^alpha_m`,
    /// gated to zero when any reactant count is below its requirement.
    pub fn mass_action_factor(&self, counts: &[i64]) -> f64 {
        let mut g = 1.0;
        for &(m, a) in &self.reactants {
            let x = counts[m];
            if x < i64::from(a) {
                return 0.0;
            }
            g *= (x as f64).powi(a as i32);
        }
        g
    }

    pub fn has_reactants(&self, counts: &[i64]) -> bool {
        self.reactants.iter().all(|&(m, a)| counts[m] >= i64::from(a))
    }

    pub fn apply(&self, counts: &mut [i64]) {
        for &(m, d) in &self.delta {
            counts[m] += d;
        }
    }
}

/// Species populations at a point in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationState {
    pub counts: Vec<i64>,
    pub time: f64,
}

impl PopulationState {
    pub fn new(counts: Vec<i64>) -> Self {
        Self { counts, time: 0.0 }
    }
}

pub type CustomLaw = Arc<dyn Fn(&[i64], f64) -> f64 + Send + Sync>;

/// How an event's hazard is computed from the state and its effective rate
/// constant `c_v(a)`.
#[derive(Clone)]
pub enum RateLaw {
    /// `h = c_v(a) * prod_m x_m^alpha_m`.
    MassAction,
    /// Arbitrary law `(counts, c_v(a)) -> h`. Must return 0 when reactants
    /// are insufficient.
    Custom(CustomLaw),
}

impl fmt::Debug for RateLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateLaw::MassAction => write!(f, "MassAction"),
            RateLaw::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// General stochastic kinetic model over species counts.
///
/// The action is a slice of per-event multipliers on the rate constants;
/// an empty slice leaves every constant unchanged.
#[derive(Debug, Clone)]
pub struct Skm {
    pub species: Vec<String>,
    pub events: Vec<EventSchema>,
    pub laws: Vec<RateLaw>,
}

impl Skm {
    pub fn new(species: Vec<String>, events: Vec<EventSchema>) -> Result<Self> {
        for e in &events {
            for &(m, _) in e.reactants.iter().chain(&e.products) {
                if m >= species.len() {
                    return Err(Error::invalid(format!(
                        "event {} references species index {m} out of {}",
                        e.name,
                        species.len()
                    )));
                }
            }
        }
        let laws = vec![RateLaw::MassAction; events.len()];
        Ok(Self {
            species,
            events,
            laws,
        })
    }

    pub fn with_law(mut self, event: usize, law: RateLaw) -> Self {
        self.laws[event] = law;
        self
    }

    pub fn num_species(&self) -> usize {
        self.species.len()
    }

    pub fn species_index(&self, name: &str) -> Option<usize> {
        self.species.iter().position(|s| s == name)
    }

    /// Effective rate constant `c_v(a)`.
    pub fn rate_constant(&self, v: usize, action: &[f64]) -> f64 {
        let m = action.get(v).copied().unwrap_or(1.0);
        self.events[v].rate_constant * m
    }

    /// `h_v(x, a)`.
    pub fn hazard(&self, v: usize, counts: &[i64], action: &[f64]) -> f64 {
        let c = self.rate_constant(v, action);
        let ev = &self.events[v];
        match &self.laws[v] {
            RateLaw::MassAction => c * ev.mass_action_factor(counts),
            RateLaw::Custom(f) => {
                let h = f(counts, c);
                debug_assert!(
                    ev.has_reactants(counts) || h == 0.0,
                    "custom law for {} fires without reactants",
                    ev.name
                );
                debug_assert!(h >= 0.0, "negative hazard for {}", ev.name);
                h
            }
        }
    }
}

impl KineticModel for Skm {
    type State = Vec<i64>;
    type Action = [f64];

    fn num_events(&self) -> usize {
        self.events.len()
    }

    fn hazards(&self, state: &Vec<i64>, _t: f64, action: &[f64], out: &mut Vec<(usize, f64)>) {
        for v in 0..self.events.len() {
            let h = self.hazard(v, state, action);
            if h > 0.0 {
                out.push((v, h));
            }
        }
    }

    fn total_hazard(&self, state: &Vec<i64>, _t: f64, action: &[f64]) -> f64 {
        (0..self.events.len())
            .map(|v| self.hazard(v, state, action))
            .sum()
    }

    fn select_event(&self, state: &Vec<i64>, _t: f64, action: &[f64], target: f64) -> usize {
        let mut acc = 0.0;
        let mut last = None;
        for v in 0..self.events.len() {
            let h = self.hazard(v, state, action);
            if h > 0.0 {
                acc += h;
                last = Some(v);
                if target < acc {
                    return v;
                }
            }
        }
        last.expect("select_event on zero hazard")
    }

    fn apply(&self, state: &mut Vec<i64>, event: usize) {
        self.events[event].apply(state);
    }

    fn describe(&self, state: &Vec<i64>) -> String {
        format!("{state:?}")
    }
}

/// Event entry of an SKM definition file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventDef {
    pub name: String,
    #[serde(default)]
    pub reactants: BTreeMap<String, u32>,
    #[serde(default)]
    pub products: BTreeMap<String, u32>,
    pub rate_constant: f64,
}

/// JSON definition of a mass-action SKM (`"format": "skm/1"`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkmDefinition {
    pub format: String,
    pub species: Vec<String>,
    pub events: Vec<EventDef>,
    /// Initial populations; missing species start at zero.
    #[serde(default)]
    pub initial: BTreeMap<String, i64>,
}

impl SkmDefinition {
    pub const FORMAT: &'static str = "skm/1";

    pub fn from_model(model: &Skm, initial: &[i64]) -> Self {
        let name = |m: usize| model.species[m].clone();
        Self {
            format: Self::FORMAT.to_string(),
            species: model.species.clone(),
            events: model
                .events
                .iter()
                .map(|e| EventDef {
                    name: e.name.clone(),
                    reactants: e.reactants.iter().map(|&(m, a)| (name(m), a)).collect(),
                    products: e.products.iter().map(|&(m, b)| (name(m), b)).collect(),
                    rate_constant: e.rate_constant,
                })
                .collect(),
            initial: initial
                .iter()
                .enumerate()
                .filter(|(_, &x)| x != 0)
                .map(|(m, &x)| (name(m), x))
                .collect(),
        }
    }

    pub fn build(&self) -> Result<(Skm, Vec<i64>)> {
        if self.format != Self::FORMAT {
            return Err(Error::invalid(format!(
                "unsupported SKM format {:?}, expected {:?}",
                self.format,
                Self::FORMAT
            )));
        }
        let index = |name: &str| {
            self.species
                .iter()
                .position(|s| s == name)
                .ok_or_else(|| Error::invalid(format!("unknown species {name:?}")))
        };
        let mut events = Vec::with_capacity(self.events.len());
        for e in &self.events {
            let r = e
                .reactants
                .iter()
                .map(|(s, &a)| Ok((index(s)?, a)))
                .collect::<Result<Vec<_>>>()?;
            let p = e
                .products
                .iter()
                .map(|(s, &b)| Ok((index(s)?, b)))
                .collect::<Result<Vec<_>>>()?;
            events.push(EventSchema::new(e.name.clone(), &r, &p, e.rate_constant)?);
        }
        let mut x0 = vec![0i64; self.species.len()];
        for (s, &x) in &self.initial {
            if x < 0 {
                return Err(Error::invalid(format!("negative initial count for {s}")));
            }
            x0[index(s)?] = x;
        }
        Ok((Skm::new(self.species.clone(), events)?, x0))
    }
}
