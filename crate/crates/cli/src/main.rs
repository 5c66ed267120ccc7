//! Command-line entry point: single planning sessions, Monte-Carlo runs
//! and scaling studies. Results are written to an output directory.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mrtamp::scenario::Scenario;
use mrtamp::sim::{
    monte_carlo, run_session, scaling_study, write_metrics_csv, write_scaling_csv,
    write_trajectory_csv, ScaleMode, SimError,
};

const EXIT_NO_PLAN: u8 = 2;
const EXIT_INVALID: u8 = 3;

#[derive(Parser)]
#[command(name = "mrtamp", version, about = "Multi-robot task-motion planning in belief space")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan and execute one session.
    Plan {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Disable robot-to-robot observations.
        #[arg(long)]
        no_mutual: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run many sessions and average their localization errors.
    Montecarlo {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 25)]
        sessions: usize,
        #[arg(long)]
        no_mutual: bool,
        #[arg(long, default_value_t = 0)]
        base_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure planning time against the number of rooms or robots.
    Scale {
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 25)]
        sessions: usize,
        /// Sizes to study; defaults to 2,4,6,8,10 rooms or 2,4,6 robots.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long, default_value_t = 0)]
        base_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Rooms,
    Robots,
}

enum Failure {
    NoPlan(String),
    Invalid(String),
    Io(std::io::Error),
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e)
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Io(e.into())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::AllSessionsFailed => Failure::NoPlan(e.to_string()),
            other => Failure::Invalid(other.to_string()),
        }
    }
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    Scenario::load(path).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Plan {
            scenario,
            seed,
            no_mutual,
            out,
        } => {
            let scenario = load(&scenario)?;
            let report = run_session(&scenario, seed, !no_mutual).map_err(|e| Failure::Invalid(e.to_string()))?;
            fs::create_dir_all(&out)?;
            serde_json::to_writer_pretty(create(&out, "report.json")?, &report)?;
            write_trajectory_csv(&report, create(&out, "trajectory.csv")?)?;
            write_metrics_csv(&report.robots, &report.errors, create(&out, "metrics.csv")?)?;
            if !report.success {
                return Err(Failure::NoPlan(report.failure.unwrap_or_default()));
            }
            let plan = report.plan.as_ref().expect("successful session has a plan");
            println!("plan with {} action(s), cost {:.4}", plan.steps.len(), plan.total_cost);
            for step in &plan.steps {
                println!("  {}  cost {:.4}", step.action, step.cost);
            }
            println!("planning time {:.3} s", report.planning_time);
        }
        Command::Montecarlo {
            scenario,
            sessions,
            no_mutual,
            base_seed,
            out,
        } => {
            let scenario = load(&scenario)?;
            let agg = monte_carlo(&scenario, sessions, !no_mutual, base_seed)?;
            fs::create_dir_all(&out)?;
            serde_json::to_writer_pretty(create(&out, "report.json")?, &agg)?;
            write_metrics_csv(&agg.robots, &agg.mean_errors, create(&out, "metrics.csv")?)?;
            println!("{}/{} sessions succeeded", agg.succeeded, agg.sessions);
            for (r, w) in agg.robots.iter().zip(&agg.worst_case_errors) {
                println!("  {r}: worst-case mean position error {w:.4} m");
            }
            println!(
                "planning time mean {:.3} s, max {:.3} s",
                agg.mean_planning_time, agg.max_planning_time
            );
        }
        Command::Scale {
            mode,
            scenario,
            sessions,
            sizes,
            base_seed,
            out,
        } => {
            let scenario = load(&scenario)?;
            let (mode, default_sizes) = match mode {
                Mode::Rooms => (ScaleMode::Rooms, vec![2, 4, 6, 8, 10]),
                Mode::Robots => (ScaleMode::Robots, vec![2, 4, 6]),
            };
            let sizes = sizes.unwrap_or(default_sizes);
            let rows = scaling_study(&scenario, mode, &sizes, sessions, base_seed)?;
            fs::create_dir_all(&out)?;
            serde_json::to_writer_pretty(create(&out, "report.json")?, &rows)?;
            write_scaling_csv(&rows, create(&out, "metrics.csv")?)?;
            for row in &rows {
                println!(
                    "size {:>2}: {}/{} planned, mean {:.3} s, max {:.3} s",
                    row.size, row.succeeded, row.sessions, row.mean_planning_time, row.max_planning_time
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::NoPlan(why)) => {
            eprintln!("no plan: {why}");
            ExitCode::from(EXIT_NO_PLAN)
        }
        Err(Failure::Invalid(why)) => {
            eprintln!("invalid input: {why}");
            ExitCode::from(EXIT_INVALID)
        }
        Err(Failure::Io(e)) => {
            eprintln!("i/o error: {e}");
            ExitCode::FAILURE
        }
    }
}
