use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use toppo_cli::{
    cmd_fuzz_bounds, cmd_plotdata, cmd_train, cmd_vtrace_demo, format_vtrace_table, load_experiment, thread_count, CmdResult,
    TrainOverrides, THREADS_VAR,
};
use toppo_core::config::Algorithm;
use toppo_core::oracle::FuzzConfig;

#[derive(Parser, Debug)]
#[command(name = "toppo", version, about = "Transductive off-policy PPO experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one run per seed and write metrics, deletion logs, snapshots and a summary.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Replace the config's seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        algo: Option<Algorithm>,
        /// Keep every stored batch until it ages out of the buffer.
        #[arg(long)]
        no_selection: bool,
        /// Use the clip range 4/(N+4)·ε^PPO for N stored batches.
        #[arg(long)]
        adaptive_eps: bool,
    },
    /// Check the improvement bounds on random tabular MDPs with the exact oracle.
    FuzzBounds {
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 4)]
        states: usize,
        #[arg(long, default_value_t = 3)]
        actions: usize,
        #[arg(long, default_value_t = 0.9)]
        gamma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report path.
        #[arg(long, default_value = "fuzz_bounds.csv")]
        out: PathBuf,
    },
    /// Exact V-trace fixed point on the two-state fixture.
    VtraceDemo {
        #[arg(long, default_value_t = 0.01)]
        phi: f64,
        #[arg(long, default_value_t = 1.0)]
        rho_bar: f64,
        #[arg(long, default_value = "vtrace_demo.csv")]
        out: PathBuf,
    },
    /// Mean and std curves across metrics CSVs, as whitespace-separated columns.
    PlotData {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "curves.dat")]
        out: PathBuf,
    },
}

fn run(command: Command) -> CmdResult<()> {
    match command {
        Command::Train { config, seed, out, algo, no_selection, adaptive_eps } => {
            let overrides = TrainOverrides { seed, out, algorithm: algo, no_selection, adaptive_epsilon: adaptive_eps };
            let cfg = load_experiment(config.as_deref(), &overrides)?;
            let threads = thread_count(std::env::var(THREADS_VAR).ok().as_deref())?;
            let summary = cmd_train(&cfg, threads)?;
            for s in &summary.seeds {
                let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.1}"));
                println!(
                    "seed {:>3}: final {} best {} steps {} deletions {}",
                    s.seed,
                    fmt(s.final_return),
                    fmt(s.best_eval),
                    s.env_steps,
                    s.deletions
                );
            }
            if let (Some(m), Some(sd)) = (summary.final_mean, summary.final_std) {
                println!("{} on {}: final return {m:.1} ± {sd:.1} over {} seeds", summary.algorithm, summary.env, summary.seeds.len());
            }
            println!("artifacts in {}", cfg.out_dir.display());
        }
        Command::FuzzBounds { count, states, actions, gamma, seed, out } => {
            let cfg = FuzzConfig { count, states, actions, gamma, seed, vary_sizes: false };
            let summary = cmd_fuzz_bounds(&cfg, &out)?;
            println!("{} instances, no violations; report in {}", summary.instances, out.display());
        }
        Command::VtraceDemo { phi, rho_bar, out } => {
            let rows = cmd_vtrace_demo(phi, rho_bar, &out)?;
            print!("{}", format_vtrace_table(&rows));
        }
        Command::PlotData { inputs, out } => {
            let points = cmd_plotdata(&inputs, &out)?;
            println!("{} points from {} runs written to {}", points.len(), inputs.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("{failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
