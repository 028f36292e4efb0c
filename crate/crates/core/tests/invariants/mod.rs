//! Randomized invariants shared by the property tests and the acceptance
//! run. Each property runs `CASES` cases through a seeded proptest runner.

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

use eventflow::kinetic::{advance, discrete_step_distribution, EventSchema, Skm, TimeGrid};
use eventflow::oracles::random_mdp;
use eventflow::planner::{e_step_posteriors, m_step_update, sample_rollouts, HorizonMixture, MdpProblem, Policy};
use eventflow::rng::stream_rng;
use eventflow::scenario::{generate_synthtown, simulate_ground_truth, write_counts, write_observations, CompiledScenario};
use eventflow::traffic::{write_event_log, Hypergeometric, ObservationModel};

pub const CASES: u32 = 1000;

fn runner(name: &str) -> TestRunner {
    let mut seed = [0u8; 32];
    for (i, b) in name.bytes().enumerate() {
        seed[i % 32] ^= b;
    }
    TestRunner::new_with_rng(
        Config {
            cases: CASES,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::from_seed(RngAlgorithm::ChaCha, &seed),
    )
}

fn check<S: Strategy>(name: &str, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    runner(name).run(&strategy, test).map_err(|e| e.to_string())
}

/// SynthTown cut down to its first `agents` commuters.
pub fn small_town(seed: u64, agents: usize) -> CompiledScenario {
    let mut s = generate_synthtown(seed);
    s.plans.agents.truncate(agents);
    if !s.plans.agents.iter().any(|a| a.is_probe) {
        s.plans.agents[0].is_probe = true;
    }
    s.compile().expect("truncated SynthTown compiles")
}

fn truth_bytes(c: &CompiledScenario, seed: u64) -> Vec<u8> {
    let gt = simulate_ground_truth(c, None, seed).expect("simulates");
    let net = &c.model.network;
    let mut bytes = Vec::new();
    write_event_log(&mut bytes, &gt.log).unwrap();
    write_counts(&mut bytes, net, &gt.sample_steps, &gt.counts).unwrap();
    write_observations(&mut bytes, net, &c.observation.observed_locations, &gt.observation_steps, &gt.observations).unwrap();
    bytes
}

fn birth_death(b: f64, d: f64) -> Skm {
    Skm::new(
        vec!["X".into()],
        vec![
            EventSchema::new("birth", &[(0, 1)], &[(0, 2)], b).unwrap(),
            EventSchema::new("death", &[(0, 1)], &[], d).unwrap(),
        ],
    )
    .unwrap()
}

/// Same seed, same bytes: traffic ground truth (events, counts, probe
/// observations) and SKM paths.
pub fn seed_reproducibility() -> Result<(), String> {
    check("seed", (any::<u64>(), 1usize..12, 0.0f64..0.3, 0.0f64..2.0), |(seed, agents, b, d)| {
        let c = small_town(seed % 16, agents);
        let first = truth_bytes(&c, seed);
        prop_assert_eq!(&first, &truth_bytes(&c, seed));

        let skm = birth_death(b, d);
        let grid = TimeGrid::new(0.001, 5000).unwrap();
        let run = || {
            let mut x = vec![20i64];
            let mut rng = stream_rng(seed, 0, 0);
            let mut path = Vec::new();
            for chunk in 0..5 {
                advance(&skm, &mut x, &[], &grid, chunk * 1000, (chunk + 1) * 1000, &mut rng, &mut ()).unwrap();
                path.push(x[0]);
            }
            path
        };
        prop_assert_eq!(run(), run());
        Ok(())
    })
}

/// Agents are neither created nor lost: every count vector sums to the
/// number of agents, and a closed SKM keeps its total.
pub fn count_conservation() -> Result<(), String> {
    check("conservation", (any::<u64>(), 1usize..40, 0.01f64..3.0, 0.01f64..3.0, 0i64..40), |(seed, agents, a, b, n)| {
        let c = small_town(seed % 16, agents);
        let gt = simulate_ground_truth(&c, None, seed).unwrap();
        for counts in &gt.counts {
            prop_assert_eq!(counts.iter().map(|&x| x as usize).sum::<usize>(), agents);
        }

        let skm = Skm::new(
            vec!["A".into(), "B".into()],
            vec![
                EventSchema::new("ab", &[(0, 1)], &[(1, 1)], a).unwrap(),
                EventSchema::new("ba", &[(1, 1)], &[(0, 1)], b).unwrap(),
            ],
        )
        .unwrap();
        let tau = 1.0 / ((a.max(b)) * n.max(1) as f64);
        let grid = TimeGrid::new(tau, 2000).unwrap();
        let mut x = vec![n, 0];
        let mut rng = stream_rng(seed, 1, 0);
        for k in 0..10 {
            advance(&skm, &mut x, &[], &grid, k * 200, (k + 1) * 200, &mut rng, &mut ()).unwrap();
            prop_assert!(x[0] >= 0 && x[1] >= 0);
            prop_assert_eq!(x[0] + x[1], n);
        }
        Ok(())
    })
}

/// Hypergeometric probe likelihoods sum to one over the probe count, and
/// the uniformized step kernel sums to one.
pub fn observation_normalization() -> Result<(), String> {
    check("observation", (1u32..300, any::<u32>(), any::<u32>(), 0.0f64..1.0, 0.0f64..5.0, 0.0f64..5.0, 0i64..50), |(xt, ys, xs, scale, b, d, x)| {
        let yt = ys % (xt + 1);
        let xl = xs % (xt + 1);
        let h = Hypergeometric::new(ObservationModel::new(xt, yt, vec![0]).unwrap());
        let total: f64 = (0..=yt).map(|y| h.log_pmf(xl, y).exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-9, "sum {} for x={} of {} with {} probes", total, xl, xt, yt);

        let skm = birth_death(b, d);
        let h0 = (b + d) * x as f64;
        let tau = if h0 > 0.0 { scale / h0 } else { scale.max(1e-3) };
        let dist = discrete_step_distribution(&skm, &vec![x], 0.0, &[], tau).unwrap();
        prop_assert!(dist.null >= -1e-15);
        prop_assert!((dist.total() - 1.0).abs() < 1e-12, "kernel sums to {}", dist.total());
        Ok(())
    })
}

/// M-step policy rows are distributions.
pub fn policy_row_normalization() -> Result<(), String> {
    check("policy", (any::<u64>(), 2usize..7, 1usize..4, 1usize..40, 0.5f64..0.95), |(seed, states, actions, rollouts, d)| {
        let problem = MdpProblem::new(random_mdp(seed, states, actions, d)).unwrap();
        let belief: Vec<usize> = (0..states).collect();
        let mixture = HorizonMixture::discounted(d).unwrap();
        let mut policy = Policy::uniform();
        for it in 0..3 {
            let batch = sample_rollouts(&problem, &belief, &policy, &mixture, rollouts, seed ^ it).unwrap();
            let post = match e_step_posteriors(&batch, &mixture) {
                Ok(p) => p,
                // every sampled reward was the table minimum
                Err(_) => return Ok(()),
            };
            policy = m_step_update(&post, &policy);
            for (_, row) in policy.rows() {
                prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12, "row {:?}", row);
            }
        }
        Ok(())
    })
}

/// `p(T)` and `p(t)` of both mixture modes are distributions.
pub fn mixture_normalization() -> Result<(), String> {
    check("mixture", (0u64..2000, 0.01f64..0.995, 0.0f64..1.0), |(horizon, d, u)| {
        let f = HorizonMixture::finite(horizon);
        let steps: f64 = (0..=horizon + 3).map(|t| f.step_probability(t)).sum();
        prop_assert!((steps - 1.0).abs() < 1e-9);
        prop_assert_eq!(f.length_probability(horizon), 1.0);
        prop_assert!((f.step_mass(0, u64::MAX) - 1.0).abs() < 1e-12);

        let delta = d + (1.0 - d) * (0.05 + 0.9 * u);
        let m = HorizonMixture::discounted_with(d, delta).unwrap();
        let rho = d / delta;
        let n_len = (1e-13f64.ln() / delta.ln()).ceil() as u64;
        let n_step = (1e-13f64.ln() / rho.ln()).ceil() as u64;
        let lengths: f64 = (0..n_len).map(|t| m.length_probability(t)).sum();
        let steps: f64 = (0..n_step).map(|t| m.step_probability(t)).sum();
        prop_assert!((lengths - 1.0).abs() < 1e-9, "p(T) sums to {}", lengths);
        prop_assert!((steps - 1.0).abs() < 1e-9, "p(t) sums to {}", steps);
        prop_assert!((m.step_mass(0, n_step) - steps).abs() < 1e-9);
        Ok(())
    })
}

#[allow(dead_code)]
pub const ALL: &[(&str, fn() -> Result<(), String>)] = &[
    ("seed reproducibility", seed_reproducibility),
    ("count conservation", count_conservation),
    ("observation normalization", observation_normalization),
    ("policy-row normalization", policy_row_normalization),
    ("mixture normalization", mixture_normalization),
];
