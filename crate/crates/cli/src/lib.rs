//! Subcommand implementations behind the `toppo` binary.
//!
//! Every command returns a [`Failure`] on error; [`Failure::exit_code`] maps it
//! to the process status (1 usage/config, 2 invariant violation, 3 runtime).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{anyhow, Context};
use serde::Serialize;
use toppo_core::buffer::EpsilonMode;
use toppo_core::config::{Algorithm, ExperimentConfig};
use toppo_core::envs::TabularMdp;
use toppo_core::metrics::{read_metrics, write_metrics, write_selections, write_table, IterationMetrics, METRICS_COLUMNS};
use toppo_core::oracle::{evaluate, fuzz_bounds, vtrace_fixed_point, write_fuzz_csv, FuzzConfig, TabularPolicy};
use toppo_core::trainer::{train, RunResult};
use toppo_core::Error;

/// Environment variable bounding the number of concurrent training runs.
pub const THREADS_VAR: &str = "TOPPO_THREADS";

#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Violation(String),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Violation(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(e) => write!(f, "error: {e:#}"),
            Failure::Violation(msg) => write!(f, "invariant violation: {msg}"),
            Failure::Runtime(e) => write!(f, "runtime failure: {e:#}"),
        }
    }
}

/// Core errors that stem from bad input are usage errors; the rest are runtime.
impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::UnknownEnv(_) | Error::InvalidArgument(_) | Error::OracleLimit(_) => {
                Failure::Usage(e.into())
            }
            other => Failure::Runtime(other.into()),
        }
    }
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

pub type CmdResult<T> = Result<T, Failure>;

/// Command-line overrides applied on top of a config file.
#[derive(Clone, Debug, Default)]
pub struct TrainOverrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub algorithm: Option<Algorithm>,
    pub no_selection: bool,
    pub adaptive_epsilon: bool,
}

/// Reads `path` (or the defaults when absent) and applies `overrides`.
pub fn load_experiment(path: Option<&Path>, overrides: &TrainOverrides) -> CmdResult<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display())).map_err(Failure::Usage)?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = overrides.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &overrides.out {
        cfg.out_dir = out.clone();
    }
    if let Some(algorithm) = overrides.algorithm {
        cfg.algorithm = algorithm;
    }
    if overrides.no_selection {
        cfg.train.selection = false;
    }
    if overrides.adaptive_epsilon {
        cfg.train.epsilon_mode = EpsilonMode::Adaptive;
    }
    if cfg.seeds.is_empty() {
        return Err(Failure::Usage(anyhow!("config error in `experiment.seeds`: at least one seed is required")));
    }
    cfg.train.validate()?;
    Ok(cfg)
}

/// Fan-out width from [`THREADS_VAR`], defaulting to the available cores.
pub fn thread_count(var: Option<&str>) -> CmdResult<usize> {
    match var {
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
        Some(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Failure::Usage(anyhow!("{THREADS_VAR} must be a positive integer, got {v:?}"))),
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub final_return: Option<f64>,
    pub best_eval: Option<f64>,
    pub env_steps: usize,
    pub deletions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainSummary {
    pub algorithm: String,
    pub env: String,
    pub seeds: Vec<SeedSummary>,
    /// Mean and population std of the seeds' final returns.
    pub final_mean: Option<f64>,
    pub final_std: Option<f64>,
}

/// Stem shared by one seed's artifacts: `<out>/<algo>_seed<seed>`.
pub fn run_stem(out: &Path, algorithm: Algorithm, seed: u64) -> PathBuf {
    out.join(format!("{algorithm}_seed{seed}"))
}

fn write_run(out: &Path, algorithm: Algorithm, seed: u64, run: &RunResult) -> CmdResult<SeedSummary> {
    let stem = run_stem(out, algorithm, seed);
    write_metrics(&run.metrics, &stem.with_extension("csv"))?;
    write_selections(&run.selections, &stem.with_extension("deletions.csv"))?;
    run.policy.save(&stem.with_extension("policy"))?;
    Ok(SeedSummary {
        seed,
        final_return: run.final_return(),
        best_eval: run.best_eval(),
        env_steps: run.env_steps(),
        deletions: run.selections.iter().filter(|s| s.action == "deleted").count(),
    })
}

/// Trains every seed (up to `threads` at a time) and writes per-seed metrics,
/// deletion logs and snapshots plus `<algo>_summary.json` and the resolved
/// config.
pub fn cmd_train(cfg: &ExperimentConfig, threads: usize) -> CmdResult<TrainSummary> {
    std::fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating output directory {}", cfg.out_dir.display()))
        .map_err(Failure::Usage)?;
    let resolved = cfg.out_dir.join(format!("{}_config.cfg", cfg.algorithm));
    std::fs::write(&resolved, cfg.to_string())
        .with_context(|| format!("output directory {} is not writable", cfg.out_dir.display()))
        .map_err(Failure::Usage)?;

    let queue = Mutex::new(cfg.seeds.iter().copied().enumerate().collect::<Vec<_>>());
    let results: Mutex<Vec<(usize, CmdResult<SeedSummary>)>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, cfg.seeds.len()) {
            scope.spawn(|| loop {
                let Some((slot, seed)) = queue.lock().expect("queue lock").pop() else { break };
                let train_cfg = toppo_core::config::TrainConfig { seed, ..cfg.train.clone() };
                let outcome = train(cfg.algorithm, &train_cfg)
                    .map_err(Failure::from)
                    .and_then(|run| write_run(&cfg.out_dir, cfg.algorithm, seed, &run));
                results.lock().expect("results lock").push((slot, outcome));
            });
        }
    });
    let mut results = results.into_inner().expect("results lock");
    results.sort_by_key(|(slot, _)| *slot);
    let seeds = results.into_iter().map(|(_, r)| r).collect::<CmdResult<Vec<_>>>()?;

    let finals: Vec<f64> = seeds.iter().filter_map(|s| s.final_return).collect();
    let (final_mean, final_std) = match mean_std(&finals) {
        Some((m, s)) => (Some(m), Some(s)),
        None => (None, None),
    };
    let summary = TrainSummary {
        algorithm: cfg.algorithm.to_string(),
        env: cfg.train.env.to_string(),
        seeds,
        final_mean,
        final_std,
    };
    let path = cfg.out_dir.join(format!("{}_summary.json", cfg.algorithm));
    let json = serde_json::to_string_pretty(&summary).map_err(runtime)?;
    std::fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display())).map_err(runtime)?;
    Ok(summary)
}

/// Mean and population std; `None` for an empty slice.
pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FuzzSummary {
    pub instances: usize,
    /// `(instance, check)` for every failed check.
    pub violations: Vec<(usize, &'static str)>,
}

/// Runs the bound checks on `cfg.count` random instances and writes the
/// report. Any violation is returned as [`Failure::Violation`] after the
/// report is on disk.
pub fn cmd_fuzz_bounds(cfg: &FuzzConfig, out: &Path) -> CmdResult<FuzzSummary> {
    let rows = fuzz_bounds(cfg)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(Failure::Usage)?;
    }
    write_fuzz_csv(&rows, out)?;
    let violations: Vec<(usize, &'static str)> =
        rows.iter().flat_map(|r| r.violations().into_iter().map(move |v| (r.instance, v))).collect();
    if let Some((instance, check)) = violations.first() {
        return Err(Failure::Violation(format!(
            "{} failed checks over {} instances; first: {check} at instance {instance} (see {})",
            violations.len(),
            rows.len(),
            out.display()
        )));
    }
    Ok(FuzzSummary { instances: rows.len(), violations })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VtraceRow {
    pub state: usize,
    pub pi_rho_left: f64,
    pub pi_rho_right: f64,
    pub v_pi: f64,
    pub v_pi_rho: f64,
    /// `|(V^π − V^{π_ρ̄}) / V^π|`.
    pub v_ratio: f64,
}

const VTRACE_COLUMNS: [&str; 6] = ["state", "pi_rho_left", "pi_rho_right", "v_pi", "v_pi_rho", "v_ratio"];

/// Fixed-point bias of truncated importance weights on the two-state fixture
/// with `μ = (φ, 1−φ)` and `π = (1−φ, φ)`; `c̄ = ρ̄`.
pub fn vtrace_demo(phi: f64, rho_bar: f64) -> CmdResult<Vec<VtraceRow>> {
    if !(phi > 0.0 && phi < 1.0) {
        return Err(Failure::Usage(anyhow!("phi must lie strictly between 0 and 1, got {phi}")));
    }
    if !(rho_bar > 0.0 && rho_bar.is_finite()) {
        return Err(Failure::Usage(anyhow!("rho_bar must be positive and finite, got {rho_bar}")));
    }
    let mdp = TabularMdp::vtrace_fixture();
    let mu = TabularPolicy::constant(2, &[phi, 1.0 - phi])?;
    let pi = TabularPolicy::constant(2, &[1.0 - phi, phi])?;
    let (biased, v_biased) = vtrace_fixed_point(&mdp, &pi, &mu, rho_bar, rho_bar)?;
    let v_pi = evaluate(&mdp, &pi)?.v;
    Ok((0..mdp.states())
        .map(|s| VtraceRow {
            state: s,
            pi_rho_left: biased.prob(s, 0),
            pi_rho_right: biased.prob(s, 1),
            v_pi: v_pi[s],
            v_pi_rho: v_biased[s],
            v_ratio: ((v_pi[s] - v_biased[s]) / v_pi[s]).abs(),
        })
        .collect())
}

pub fn format_vtrace_table(rows: &[VtraceRow]) -> String {
    let mut s = format!("{:>5} {:>12} {:>12} {:>10} {:>10} {:>8}\n", "state", "pi_rho(L)", "pi_rho(R)", "V^pi", "V^pi_rho", "ratio");
    for r in rows {
        let _ = writeln!(
            s,
            "{:>5} {:>12.6} {:>12.6} {:>10.4} {:>10.4} {:>8.4}",
            r.state, r.pi_rho_left, r.pi_rho_right, r.v_pi, r.v_pi_rho, r.v_ratio
        );
    }
    s
}

pub fn cmd_vtrace_demo(phi: f64, rho_bar: f64, out: &Path) -> CmdResult<Vec<VtraceRow>> {
    let rows = vtrace_demo(phi, rho_bar)?;
    write_table(&rows, &VTRACE_COLUMNS, out)?;
    Ok(rows)
}

/// Per-timestep mean and std across runs.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub env_steps: usize,
    pub train_mean: f64,
    pub train_std: f64,
    pub eval_mean: f64,
    pub eval_std: f64,
    /// Runs that reported an evaluation at this step.
    pub eval_runs: usize,
}

fn check_schema(path: &Path) -> CmdResult<()> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display())).map_err(Failure::Usage)?;
    let header = reader.headers().with_context(|| format!("reading header of {}", path.display())).map_err(Failure::Usage)?;
    if header.iter().ne(METRICS_COLUMNS.iter().copied()) {
        return Err(Failure::Usage(anyhow!(
            "schema mismatch in {}: expected columns {}, found {}",
            path.display(),
            METRICS_COLUMNS.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

fn stats_or_nan(xs: &[f64]) -> (f64, f64) {
    mean_std(xs).unwrap_or((f64::NAN, f64::NAN))
}

/// Aggregates metrics CSVs that share one step grid.
pub fn aggregate_curves(inputs: &[PathBuf]) -> CmdResult<Vec<CurvePoint>> {
    if inputs.is_empty() {
        return Err(Failure::Usage(anyhow!("plot-data needs at least one metrics CSV")));
    }
    let mut runs: Vec<Vec<IterationMetrics>> = Vec::with_capacity(inputs.len());
    for path in inputs {
        check_schema(path)?;
        runs.push(read_metrics(path).map_err(|e| Failure::Usage(anyhow!("{}: {e}", path.display())))?);
    }
    let grid: Vec<usize> = runs[0].iter().map(|m| m.env_steps).collect();
    for (path, run) in inputs.iter().zip(&runs).skip(1) {
        if run.iter().map(|m| m.env_steps).ne(grid.iter().copied()) {
            return Err(Failure::Usage(anyhow!(
                "schema mismatch: {} has a different env_steps grid from {}",
                path.display(),
                inputs[0].display()
            )));
        }
    }
    Ok(grid
        .iter()
        .enumerate()
        .map(|(i, &env_steps)| {
            let train: Vec<f64> = runs.iter().filter_map(|r| r[i].mean_return).collect();
            let eval: Vec<f64> = runs.iter().filter_map(|r| r[i].eval_return).collect();
            let (train_mean, train_std) = stats_or_nan(&train);
            let (eval_mean, eval_std) = stats_or_nan(&eval);
            CurvePoint { env_steps, train_mean, train_std, eval_mean, eval_std, eval_runs: eval.len() }
        })
        .collect())
}

/// Whitespace-separated columns with a `#` header line; missing values are `NaN`.
pub fn format_curves(points: &[CurvePoint]) -> String {
    let mut s = String::from("# env_steps train_mean train_std eval_mean eval_std eval_runs\n");
    for p in points {
        let _ = writeln!(
            s,
            "{} {} {} {} {} {}",
            p.env_steps, p.train_mean, p.train_std, p.eval_mean, p.eval_std, p.eval_runs
        );
    }
    s
}

pub fn cmd_plotdata(inputs: &[PathBuf], out: &Path) -> CmdResult<Vec<CurvePoint>> {
    let points = aggregate_curves(inputs)?;
    std::fs::write(out, format_curves(&points)).with_context(|| format!("writing {}", out.display())).map_err(runtime)?;
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(Failure::from(Error::UnknownEnv("x".into())).exit_code(), 1);
        assert_eq!(Failure::Violation("v".into()).exit_code(), 2);
        assert_eq!(Failure::from(Error::Singular).exit_code(), 3);
    }

    #[test]
    fn thread_count_parsing() {
        assert_eq!(thread_count(Some("3")).unwrap(), 3);
        assert!(thread_count(Some("0")).is_err());
        assert!(thread_count(Some("many")).is_err());
        assert!(thread_count(None).unwrap() >= 1);
    }

    #[test]
    fn vtrace_demo_examples() {
        let rows = vtrace_demo(0.01, 1.0).unwrap();
        for r in &rows {
            assert!((r.pi_rho_left - 0.5).abs() < 1e-12 && (r.pi_rho_right - 0.5).abs() < 1e-12);
            assert!(r.v_ratio > 0.1);
        }
        assert!(vtrace_demo(0.5, 1.0).unwrap().iter().all(|r| r.v_ratio < 1e-12));
        assert!(vtrace_demo(0.01, 1e3).unwrap().iter().all(|r| r.v_ratio < 1e-9));
        for phi in [0.0, 1.0, -0.2, f64::NAN] {
            assert_eq!(vtrace_demo(phi, 1.0).unwrap_err().exit_code(), 1);
        }
    }

    #[test]
    fn population_std() {
        assert_eq!(mean_std(&[]), None);
        assert_eq!(mean_std(&[4.0]), Some((4.0, 0.0)));
        assert_eq!(mean_std(&[1.0, 3.0]), Some((2.0, 1.0)));
    }

    #[test]
    fn overrides_apply_after_the_file() {
        let o = TrainOverrides {
            seed: Some(9),
            out: Some("elsewhere".into()),
            algorithm: Some(Algorithm::Geppo),
            no_selection: true,
            adaptive_epsilon: true,
        };
        let cfg = load_experiment(None, &o).unwrap();
        assert_eq!(cfg.seeds, vec![9]);
        assert_eq!(cfg.out_dir, PathBuf::from("elsewhere"));
        assert_eq!(cfg.algorithm, Algorithm::Geppo);
        assert!(!cfg.train.selection);
        assert_eq!(cfg.train.epsilon_mode, EpsilonMode::Adaptive);
    }
}
