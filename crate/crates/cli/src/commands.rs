use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use eventflow::inference::{learn_rates, FilterConfig, LearnConfig, TiedSkm};
use eventflow::kinetic::{SkmDefinition, TimeGrid};
use eventflow::planner::{plan, DecisionConfig, HorizonMixture, PlanConfig, Policy, TrafficProblem};
use eventflow::scenario::{
    compute_metrics, evaluate_tracking, generate_synthtown, read_counts, read_estimates, read_observations,
    read_snapshot, simulate_ground_truth, track, trajectories_from_log, trip_metrics, write_counts,
    write_estimates, write_observations, write_snapshot, CompiledScenario, GroundTruth, Scenario, TrackConfig,
};
use eventflow::traffic::{read_event_log, write_event_log};

use crate::manifest::{hash_file, Outputs, RunManifest};
use crate::{Cli, CliError, Command, EvalArgs, LearnArgs, PlanArgs, SimulateArgs, TrackArgs};

struct Run {
    started: Instant,
    command: &'static str,
    config: serde_json::Value,
    seed: u64,
    inputs: Vec<std::path::PathBuf>,
    outputs: Outputs,
}

impl Run {
    fn new<T: Serialize>(command: &'static str, args: &T, seed: u64) -> Self {
        Self {
            started: Instant::now(),
            command,
            config: serde_json::to_value(args).unwrap_or(serde_json::Value::Null),
            seed,
            inputs: Vec::new(),
            outputs: Outputs::default(),
        }
    }

    fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    fn finish(self, out: &Path) -> Result<(), CliError> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            config: self.config,
            seed: self.seed,
            threads: rayon::current_num_threads(),
            inputs: self.inputs.iter().map(|p| hash_file(p)).collect::<Result<_, _>>()?,
            outputs: Vec::new(),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            engine_version: eventflow::VERSION.to_string(),
        };
        for p in self.outputs.commit(out, manifest)? {
            println!("{}", p.display());
        }
        Ok(())
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> eventflow::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn open(path: &Path) -> Result<std::fs::File, CliError> {
    std::fs::File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_scenario(path: &Path) -> Result<CompiledScenario, CliError> {
    Scenario::load(path)
        .and_then(|s| s.compile())
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Seconds in `now`, `90s`, `10m`, `1.5h` or a bare number of seconds.
pub fn parse_duration(s: &str) -> Result<f64, CliError> {
    let s = s.trim();
    if s == "now" {
        return Ok(0.0);
    }
    let (num, unit) = match s.char_indices().last() {
        Some((i, 's')) => (&s[..i], 1.0),
        Some((i, 'm')) => (&s[..i], 60.0),
        Some((i, 'h')) => (&s[..i], 3600.0),
        _ => (s, 1.0),
    };
    match num.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v * unit),
        _ => Err(CliError::Usage(format!("cannot read duration {s:?}"))),
    }
}

fn to_steps(seconds: f64, grid: &TimeGrid) -> u64 {
    (seconds / grid.tau).round() as u64
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let out = cli.global.out.clone();
    let seed = cli.global.seed;
    match cli.command {
        Command::Synthtown(args) => {
            let seed = seed.unwrap_or(0);
            let mut run = Run::new("synthtown", &args, seed);
            let s = generate_synthtown(seed);
            run.outputs.add("scenario.json", s.to_json()?.into_bytes());
            run.finish(&out)
        }
        Command::Simulate(args) => simulate(args, seed, &out),
        Command::Track(args) => track_cmd(args, seed, &out),
        Command::Learn(args) => learn(args, seed, &out),
        Command::Plan(args) => plan_cmd(args, seed, &out),
        Command::Eval(args) => eval(args, &out),
    }
}

fn simulate(args: SimulateArgs, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let c = load_scenario(&args.scenario)?;
    let seed = seed.unwrap_or(c.scenario.seed);
    let mut run = Run::new("simulate", &args, seed);
    run.input(&args.scenario);
    let policy: Option<Policy> = match &args.policy {
        Some(p) => {
            run.input(p);
            Some(load_json(p)?)
        }
        None => None,
    };
    let gt = simulate_ground_truth(&c, policy.as_ref(), seed)?;
    write_truth(&mut run, &c, &gt)?;
    let window = (0.0, c.scenario.grid.end_time());
    let trips = trip_metrics(&c.scenario.plans.agents, &gt.trajectories, &c.scenario.scoring, window);
    run.outputs.add_json("trips.json", &trips)?;
    run.finish(out)
}

fn write_truth(run: &mut Run, c: &CompiledScenario, gt: &GroundTruth) -> Result<(), CliError> {
    let net = &c.model.network;
    run.outputs.add("events.csv", csv_bytes(|b| write_event_log(b, &gt.log))?);
    run.outputs.add("counts.csv", csv_bytes(|b| write_counts(b, net, &gt.sample_steps, &gt.counts))?);
    let obs = &c.observation.observed_locations;
    run.outputs.add(
        "observations.csv",
        csv_bytes(|b| write_observations(b, net, obs, &gt.observation_steps, &gt.observations))?,
    );
    Ok(())
}

#[derive(Serialize)]
struct Evidence {
    log_evidence: f64,
    observations: usize,
    resample_count: usize,
    rejuvenations: usize,
}

fn track_cmd(args: TrackArgs, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let labels: Vec<String> = args.horizons.split(',').map(|s| s.trim().to_string()).collect();
    let offsets = labels.iter().map(|l| parse_duration(l)).collect::<Result<Vec<_>, _>>()?;
    let report_every = parse_duration(&args.report_every)?;
    let until = args.until.as_deref().map(parse_duration).transpose()?;
    let mut c = load_scenario(&args.scenario)?;
    if let Some(t) = until {
        let g = &mut c.scenario.grid;
        g.horizon = g.horizon.min(to_steps(t, g));
    }
    let grid = c.scenario.grid;
    let seed = seed.unwrap_or(c.scenario.seed);
    let horizons: Vec<u64> = offsets.iter().map(|&s| to_steps(s, &grid)).collect();
    let report_every = to_steps(report_every, &grid);
    if report_every == 0 {
        return Err(CliError::Usage("--report-every must be at least one grid step".into()));
    }
    if args.particles == 0 {
        return Err(CliError::Usage("--particles must be positive".into()));
    }
    let mut run = Run::new("track", &args, seed);
    run.input(&args.scenario);
    run.input(&args.observations);
    let (mut steps, mut values) =
        read_observations(open(&args.observations)?, &c.model.network, &c.observation.observed_locations)?;
    let keep = steps.partition_point(|&s| s <= grid.horizon);
    steps.truncate(keep);
    values.truncate(keep);
    let truth = match &args.truth {
        Some(p) => {
            run.input(p);
            Some(read_counts(open(p)?, &c.model.network)?)
        }
        None => None,
    };
    let mut filter = FilterConfig::new(args.particles, seed);
    filter.ess_threshold = args.ess_threshold;
    filter.rejuvenate = args.rejuvenate;
    let config = TrackConfig {
        filter,
        horizons,
        report_every,
        forecast_subset: args.forecast_subset,
    };
    let result = track(&c, &steps, &values, &config)?;
    for (label, h) in labels.iter().zip(&result.horizons) {
        run.outputs
            .add(&format!("estimates_{label}.csv"), csv_bytes(|b| write_estimates(b, &c, h))?);
    }
    run.outputs.add_json(
        "evidence.json",
        &Evidence {
            log_evidence: result.filter.log_evidence,
            observations: result.filter.increments.len(),
            resample_count: result.filter.resample_count,
            rejuvenations: result.filter.rejuvenations,
        },
    )?;
    if let Some((sample_steps, counts)) = truth {
        let gt = GroundTruth {
            sample_steps,
            counts,
            observation_steps: Vec::new(),
            observations: Vec::new(),
            log: Vec::new(),
            trajectories: Vec::new(),
        };
        let reports = evaluate_tracking(&c, &result, &gt)?;
        let named: BTreeMap<&str, _> = labels.iter().map(|l| l.as_str()).zip(reports).collect();
        run.outputs.add_json("metrics.json", &named)?;
    }
    if args.snapshot {
        run.outputs
            .add("ensemble.snap", csv_bytes(|b| write_snapshot(b, &result.ensemble, grid.tau))?);
    }
    run.finish(out)
}

#[derive(Debug, Deserialize)]
struct CountObservation {
    time_step: u64,
    location_id: String,
    probe_count: i64,
}

fn ln_binomial_pmf(x: i64, y: i64, p: f64) -> f64 {
    if y < 0 || y > x {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return if y == x { 0.0 } else { f64::NEG_INFINITY };
    }
    statrs::function::factorial::ln_binomial(x as u64, y as u64) + y as f64 * p.ln() + (x - y) as f64 * (1.0 - p).ln()
}

fn learn(args: LearnArgs, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let seed = seed.unwrap_or(0);
    if !(args.detection > 0.0 && args.detection <= 1.0) {
        return Err(CliError::Usage("--detection must lie in (0, 1]".into()));
    }
    let grid = TimeGrid::new(args.tau, args.horizon)?;
    let mut run = Run::new("learn", &args, seed);
    run.input(&args.model);
    run.input(&args.observations);
    let mut def: SkmDefinition = load_json(&args.model)?;
    if let Some(init) = &args.init {
        for part in init.split(',').filter(|p| !p.trim().is_empty()) {
            let (name, value) = part
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--init entry {part:?} is not name=value")))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("--init value {value:?} is not a number")))?;
            let e = def
                .events
                .iter_mut()
                .find(|e| e.name == name.trim())
                .ok_or_else(|| CliError::Usage(format!("--init names unknown event {name:?}")))?;
            e.rate_constant = value;
        }
    }
    let (skm, x0) = def.build()?;
    let mut steps: Vec<u64> = Vec::new();
    let mut obs: Vec<Vec<(usize, i64)>> = Vec::new();
    for row in csv::Reader::from_reader(open(&args.observations)?).deserialize() {
        let row: CountObservation = row.map_err(|e| CliError::Data(e.to_string()))?;
        let m = skm
            .species_index(&row.location_id)
            .ok_or_else(|| CliError::Data(format!("unknown species {:?}", row.location_id)))?;
        if row.time_step > grid.horizon {
            return Err(CliError::Data(format!("observation at step {} is past the horizon", row.time_step)));
        }
        if steps.last() != Some(&row.time_step) {
            if steps.last().is_some_and(|&s| s > row.time_step) {
                return Err(CliError::Data("observation rows must be sorted by time_step".into()));
            }
            steps.push(row.time_step);
            obs.push(Vec::new());
        }
        obs.last_mut().expect("pushed").push((m, row.probe_count));
    }
    let model = TiedSkm::untied(skm)?;
    let p = args.detection;
    let ll = |x: &Vec<i64>, oi: usize| obs[oi].iter().map(|&(m, y)| ln_binomial_pmf(x[m], y, p)).sum::<f64>();
    let describe = |oi: usize| format!("{:?} at step {}", obs[oi], steps[oi]);
    let config = LearnConfig {
        outer_iterations: args.iterations,
        inner_iterations: args.inner,
        filter: FilterConfig::new(args.particles, seed),
    };
    let (learned, trace) = learn_rates(&model, &[x0.clone()], &[], &grid, &steps, ll, &describe, &config)?;
    run.outputs.add_json("learned.json", &SkmDefinition::from_model(&learned.skm, &x0))?;
    run.outputs.add_json("trace.json", &trace)?;
    run.finish(out)
}

#[derive(Serialize)]
struct PlanSummary<'a> {
    status: eventflow::planner::PlanStatus,
    value: f64,
    mixture: HorizonMixture,
    start_step: u64,
    trace: &'a [eventflow::planner::PlanIteration],
}

fn plan_cmd(args: PlanArgs, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let c = load_scenario(&args.scenario)?;
    let grid = c.scenario.grid;
    let seed = seed.unwrap_or(c.scenario.seed);
    let mut run = Run::new("plan", &args, seed);
    run.input(&args.scenario);
    let (start, belief) = match &args.belief {
        Some(p) => {
            run.input(p);
            let ens = read_snapshot(open(p)?, &c.model, &grid)?;
            (ens.step, ens.particles)
        }
        None => (0, vec![c.model.initial()]),
    };
    let mixture = match args.mixture.as_str() {
        "finite" => HorizonMixture::finite(args.horizon.unwrap_or(grid.horizon.saturating_sub(start))),
        "discounted" => {
            let d = args
                .discount
                .ok_or_else(|| CliError::Usage("the discounted mixture needs --discount".into()))?;
            match args.delta {
                Some(delta) => HorizonMixture::discounted_with(d, delta),
                None => HorizonMixture::discounted(d),
            }
            .map_err(|e| CliError::Usage(e.to_string()))?
        }
        other => return Err(CliError::Usage(format!("unknown mixture {other:?}"))),
    };
    let initial: Policy = match &args.initial {
        Some(p) => {
            run.input(p);
            load_json(p)?
        }
        None => Policy::uniform(),
    };
    let problem = TrafficProblem::new(c.model.clone(), grid, start, c.scenario.scoring, DecisionConfig::default())?;
    let config = PlanConfig {
        rollouts: args.rollouts,
        max_iterations: args.iterations,
        tolerance: args.tolerance,
        window: args.window,
        seed,
    };
    let result = plan(&problem, &belief, &mixture, &initial, &config)?;
    run.outputs.add_json("policy.json", &result.policy)?;
    run.outputs.add_json(
        "plan.json",
        &PlanSummary {
            status: result.status,
            value: result.value,
            mixture,
            start_step: start,
            trace: &result.trace,
        },
    )?;
    run.finish(out)
}

fn eval(args: EvalArgs, out: &Path) -> Result<(), CliError> {
    let c = load_scenario(&args.scenario)?;
    let net = &c.model.network;
    let mut run = Run::new("eval", &args, 0);
    run.input(&args.scenario);
    if args.estimates.is_some() != args.truth.is_some() {
        return Err(CliError::Usage("--estimates and --truth go together".into()));
    }
    if args.estimates.is_none() && args.events.is_none() {
        return Err(CliError::Usage("nothing to evaluate: give --estimates with --truth, or --events".into()));
    }
    let trips = match &args.events {
        Some(p) => {
            run.input(p);
            let log = read_event_log(open(p)?)?;
            let traj = trajectories_from_log(&c.model, &log)?;
            let window = (0.0, c.scenario.grid.end_time());
            Some(trip_metrics(&c.scenario.plans.agents, &traj, &c.scenario.scoring, window))
        }
        None => None,
    };
    let report = match (&args.estimates, &args.truth) {
        (Some(e), Some(t)) => {
            run.input(e);
            run.input(t);
            let est = read_estimates(open(e)?, net)?;
            let (steps, counts) = read_counts(open(t)?, net)?;
            let targets = est.target_steps();
            let truth = targets
                .iter()
                .map(|s| {
                    let i = steps
                        .binary_search(s)
                        .map_err(|_| CliError::Data(format!("ground truth has no counts at step {s}")))?;
                    Ok(counts[i].iter().map(|&x| x as f64).collect())
                })
                .collect::<Result<Vec<Vec<f64>>, CliError>>()?;
            let ids = net.locations.iter().map(|l| l.id.clone()).collect();
            Some(compute_metrics(ids, targets, &est.means(), &truth, trips))
        }
        _ => None,
    };
    match report {
        Some(r) => {
            let mut r2 = String::from("location_id,r_squared\n");
            for (id, v) in r.location_ids.iter().zip(&r.r_squared) {
                r2.push_str(&format!("{id},{}\n", v.map(|x| x.to_string()).unwrap_or_default()));
            }
            let mut mse = String::from("step,mse\n");
            for (s, m) in r.steps.iter().zip(&r.mse) {
                mse.push_str(&format!("{s},{m}\n"));
            }
            run.outputs.add("r_squared.csv", r2.into_bytes());
            run.outputs.add("mse.csv", mse.into_bytes());
            run.outputs.add_json("metrics.json", &r)?;
        }
        None => run.outputs.add_json("metrics.json", &serde_json::json!({ "trips": trips }))?,
    }
    run.finish(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn durations() {
        assert_eq!(parse_duration("now").unwrap(), 0.0);
        assert_eq!(parse_duration("10m").unwrap(), 600.0);
        assert_eq!(parse_duration("1.5h").unwrap(), 5400.0);
        assert_eq!(parse_duration("90s").unwrap(), 90.0);
        assert_eq!(parse_duration("42").unwrap(), 42.0);
        assert!(parse_duration("ten").is_err());
        assert!(parse_duration("-1m").is_err());
    }
}
