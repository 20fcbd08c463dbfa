use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gfguide::config::ExperimentConfig;
use gfguide::harness::{Axis, Experiment, Report, RunOptions};
use gfguide::HarnessError;

#[derive(Parser)]
#[command(name = "gfguide", version, about = "Gradient-free reward guidance for toy video diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides $GFGUIDE_OUT and the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Experiment seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Replications run concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Endpoint for remote rewards (overrides $GFGUIDE_REMOTE_ENDPOINT).
    #[arg(long)]
    remote_endpoint: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    N,
    Window,
    Policy,
    Beta,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured comparator.
    Run(Common),
    /// One summary row per grid point along an axis.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: AxisArg,
    },
    /// Comparators matched to a fixed number of score evaluations.
    CompareNfe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        budget: usize,
    },
    /// Guided vs unguided reconstruction from a pooled observation.
    Inverse(Common),
}

fn experiment(c: &Common) -> Result<Experiment, HarnessError> {
    let cfg = ExperimentConfig::load(&c.config)?;
    Experiment::new(
        cfg,
        RunOptions {
            out_dir: c.out.clone(),
            seed: c.seed,
            jobs: c.jobs,
            endpoint: c.remote_endpoint.clone(),
        },
    )
}

fn print(report: &Report, per_run_mse: bool) {
    for note in &report.notes {
        eprintln!("note: {note}");
    }
    println!(
        "{:<24} {:>5} {:>14} {:>10} {:>9} {:>10} {:>8}",
        "method", "runs", "final_reward", "std_err", "mode_hit", "mse", "nfe"
    );
    let opt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
    for r in &report.rows {
        println!(
            "{:<24} {:>5} {:>14.4} {:>10.4} {:>9} {:>10} {:>8}",
            r.method,
            r.runs,
            r.mean_final_reward,
            r.std_error,
            opt(r.mode_hit_rate),
            opt(r.mean_mse),
            r.nfe_per_run
        );
    }
    if per_run_mse {
        for (row, runs) in report.rows.iter().zip(&report.outcomes) {
            let mses: Vec<String> = runs.iter().map(|o| format!("{:.4}", o.mse.unwrap_or(f64::NAN))).collect();
            println!("{} mse per replication: {}", row.method, mses.join(" "));
        }
    }
    println!("summary: {}", report.csv.display());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(c) => experiment(c).and_then(|e| e.run()).map(|r| print(&r, false)),
        Command::Ablate { common, axis } => {
            let axis = match axis {
                AxisArg::N => Axis::N,
                AxisArg::Window => Axis::Window,
                AxisArg::Policy => Axis::Policy,
                AxisArg::Beta => Axis::Beta,
            };
            experiment(common).and_then(|e| e.ablate(axis)).map(|r| print(&r, false))
        }
        Command::CompareNfe { common, budget } => {
            experiment(common).and_then(|e| e.compare_nfe(*budget)).map(|r| print(&r, false))
        }
        Command::Inverse(c) => experiment(c).and_then(|e| e.inverse()).map(|r| print(&r, true)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gfguide: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
