use crate::{Error, Result};

/// Finite-state HMM. `initial` is the distribution of the first hidden state
/// `x_1`, which emits `y_1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteHmm {
    /// `transition[i][j] = P(x_{t+1} = j | x_t = i)`
    pub transition: Vec<Vec<f64>>,
    /// `observation[i][y] = P(y_t = y | x_t = i)`
    pub observation: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
}

fn stochastic(rows: &[Vec<f64>], width: usize, what: &str) -> Result<()> {
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width || r.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::invalid(format!("{what} row {i} malformed")));
        }
        let s: f64 = r.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("{what} row {i} sums to {s}")));
        }
    }
    Ok(())
}

impl DiscreteHmm {
    pub fn new(transition: Vec<Vec<f64>>, observation: Vec<Vec<f64>>, initial: Vec<f64>) -> Result<Self> {
        let n = initial.len();
        if transition.len() != n || observation.len() != n {
            return Err(Error::invalid("HMM dimensions disagree"));
        }
        stochastic(&transition, n, "transition")?;
        let m = observation.first().map_or(0, Vec::len);
        stochastic(&observation, m, "observation")?;
        stochastic(std::slice::from_ref(&initial), n, "initial")?;
        Ok(Self {
            transition,
            observation,
            initial,
        })
    }

    pub fn num_states(&self) -> usize {
        self.initial.len()
    }
}

/// Smoothing statistics; all vectors are indexed by `t = 0..T` for
/// observations `y_1..y_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardBackward {
    /// `P(x_t | y_{1:t})`
    pub alpha: Vec<Vec<f64>>,
    /// `P(y_{t+1:T} | x_t) / P(y_{t+1:T} | y_{1:t})`
    pub beta: Vec<Vec<f64>>,
    /// `P(x_t | y_{1:T})`
    pub gamma: Vec<Vec<f64>>,
    /// `P(x_t = i, x_{t+1} = j | y_{1:T})`, `T - 1` entries.
    pub xi: Vec<Vec<Vec<f64>>>,
    /// `P(y_t | y_{1:t-1})`
    pub step_likelihood: Vec<f64>,
    pub log_likelihood: f64,
}

impl ForwardBackward {
    pub fn likelihood(&self) -> f64 {
        self.log_likelihood.exp()
    }
}

pub fn forward_backward(hmm: &DiscreteHmm, observations: &[usize]) -> Result<ForwardBackward> {
    let n = hmm.num_states();
    let big_t = observations.len();
    let p = &hmm.transition;
    let o = |i: usize, y: usize| hmm.observation[i].get(y).copied().unwrap_or(0.0);

    let mut alpha = Vec::with_capacity(big_t);
    let mut c = Vec::with_capacity(big_t);
    for (t, &y) in observations.iter().enumerate() {
        let prior: Vec<f64> = if t == 0 {
            hmm.initial.clone()
        } else {
            let prev: &Vec<f64> = &alpha[t - 1];
            (0..n).map(|j| (0..n).map(|i| prev[i] * p[i][j]).sum()).collect()
        };
        let mut a: Vec<f64> = (0..n).map(|i| prior[i] * o(i, y)).collect();
        let ct: f64 = a.iter().sum();
        if ct <= 0.0 {
            return Err(Error::ImpossibleObservation(t + 1));
        }
        a.iter_mut().for_each(|x| *x /= ct);
        alpha.push(a);
        c.push(ct);
    }

    let mut beta = vec![vec![1.0; n]; big_t];
    for t in (0..big_t.saturating_sub(1)).rev() {
        let y = observations[t + 1];
        for i in 0..n {
            beta[t][i] = (0..n)
                .map(|j| p[i][j] * o(j, y) * beta[t + 1][j])
                .sum::<f64>()
                / c[t + 1];
        }
    }

    let gamma = (0..big_t)
        .map(|t| (0..n).map(|i| alpha[t][i] * beta[t][i]).collect())
        .collect();
    let xi = (0..big_t.saturating_sub(1))
        .map(|t| {
            let y = observations[t + 1];
            (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| alpha[t][i] * p[i][j] * o(j, y) * beta[t + 1][j] / c[t + 1])
                        .collect()
                })
                .collect()
        })
        .collect();
    let log_likelihood = c.iter().map(|x| x.ln()).sum();
    Ok(ForwardBackward {
        alpha,
        beta,
        gamma,
        xi,
        step_likelihood: c,
        log_likelihood,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> DiscreteHmm {
        DiscreteHmm::new(
            vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            vec![vec![0.7, 0.3], vec![0.3, 0.7]],
            vec![0.5, 0.5],
        )
        .unwrap()
    }

    fn brute_force(hmm: &DiscreteHmm, ys: &[usize]) -> f64 {
        let n = hmm.num_states();
        let t = ys.len();
        let mut total = 0.0;
        for code in 0..n.pow(t as u32) {
            let mut xs = Vec::with_capacity(t);
            let mut c = code;
            for _ in 0..t {
                xs.push(c % n);
                c /= n;
            }
            let mut p = hmm.initial[xs[0]] * hmm.observation[xs[0]][ys[0]];
            for k in 1..t {
                p *= hmm.transition[xs[k - 1]][xs[k]] * hmm.observation[xs[k]][ys[k]];
            }
            total += p;
        }
        total
    }

    #[test]
    fn likelihood_matches_path_sum() {
        let hmm = example();
        let ys = [0, 1, 1, 0, 1];
        let fb = forward_backward(&hmm, &ys).unwrap();
        assert!((fb.likelihood() - brute_force(&hmm, &ys)).abs() < 1e-12);
    }

    #[test]
    fn identity_observation_pins_the_state() {
        let hmm = DiscreteHmm::new(
            vec![vec![0.6, 0.4], vec![0.3, 0.7]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0.5, 0.5],
        )
        .unwrap();
        let ys = [1, 0, 0, 1];
        let fb = forward_backward(&hmm, &ys).unwrap();
        for (g, &y) in fb.gamma.iter().zip(&ys) {
            assert!((g[y] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_model_gives_uniform_posterior() {
        let hmm = DiscreteHmm::new(
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![0.5, 0.5],
        )
        .unwrap();
        let fb = forward_backward(&hmm, &[0, 1, 1]).unwrap();
        for g in &fb.gamma {
            assert!((g[0] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn xi_marginalizes_to_gamma() {
        let hmm = example();
        let ys = [1, 1, 0, 0, 1, 0, 1];
        let fb = forward_backward(&hmm, &ys).unwrap();
        for (t, xi) in fb.xi.iter().enumerate() {
            for i in 0..2 {
                let row: f64 = xi[i].iter().sum();
                let col: f64 = (0..2).map(|k| xi[k][i]).sum();
                assert!((row - fb.gamma[t][i]).abs() < 1e-12);
                assert!((col - fb.gamma[t + 1][i]).abs() < 1e-12);
            }
        }
        for g in &fb.gamma {
            assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn impossible_observation_is_an_error() {
        let hmm = DiscreteHmm::new(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![1.0, 0.0],
        )
        .unwrap();
        assert!(matches!(
            forward_backward(&hmm, &[0, 1]),
            Err(Error::ImpossibleObservation(2))
        ));
    }
}
