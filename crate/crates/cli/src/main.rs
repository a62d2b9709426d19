use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use phygraph::bench::{
    aggregate_seeds, average_rank, gradcheck_suite, read_metrics_csv, timing_probe, worker_limit,
    write_metrics_csv, BenchmarkGrid, DEFAULT_TIMING_NODES, DEFAULT_TIMING_STEPS,
};
use phygraph::models::{Forecaster, ModelKind};
use phygraph::physics::EquationKind;
use phygraph::synthgen::{generate, SynthSpec};
use phygraph::temporal_graph::{load_dataset_with, Partition};
use phygraph::trainer::{evaluate, train, TrainConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_CHECK: u8 = 3;

/// Physics-informed temporal graph forecasting experiments
#[derive(Parser, Debug)]
#[command(name = "phygraph", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset (clean + noisy + manifest) from a spec file
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train one model and write its run report
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Save trained parameters as JSON
        #[arg(long)]
        params_out: Option<PathBuf>,
        /// Save per-epoch losses as CSV
        #[arg(long)]
        curve_out: Option<PathBuf>,
    },
    /// Score saved parameters on a dataset partition
    Evaluate {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = PartitionArg::Test)]
        partition: PartitionArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run datasets × models × {baseline, phynn} × seeds and write a metrics CSV
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        /// Dataset file; repeat for several
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        /// Comma-separated model kinds (gcn, gat, gru, lstm)
        #[arg(long, value_delimiter = ',', default_value = "gcn,gat,gru,lstm")]
        models: Vec<String>,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long)]
        out: PathBuf,
        /// Parallel cells; defaults to TGPHY_WORKERS or the CPU count
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Rank models from a metrics CSV and print a markdown summary
    Report {
        #[arg(long)]
        metrics: PathBuf,
        /// Also write the markdown summary here
        #[arg(long)]
        out_md: Option<PathBuf>,
        /// Also write the rank table as CSV here
        #[arg(long)]
        out_csv: Option<PathBuf>,
    },
    /// Finite-difference check of every model's total-loss gradient
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Measure physics-loss cost against N·T and fit the log-log slope
    Timing {
        #[arg(long, value_delimiter = ',')]
        nodes: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        steps: Option<Vec<usize>>,
        #[arg(long, value_enum, default_value_t = EquationArg::Both)]
        equation: EquationArg,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PartitionArg {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EquationArg {
    Lwr,
    Lienard,
    Both,
}

/// Outcome of a command that ran to completion.
enum Status {
    Ok,
    CheckFailed,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<Status> {
    match cli.command {
        Command::Simulate { spec, out_dir } => {
            let spec = SynthSpec::load(&spec)?;
            let manifest = generate(&spec)?.write(&out_dir)?;
            println!("clean: {}", manifest.clean.display());
            println!("noisy: {}", manifest.noisy.display());
        }
        Command::Train {
            config,
            data,
            out,
            params_out,
            curve_out,
        } => {
            let cfg = TrainConfig::load(&config)?;
            let ds = load_dataset_with(&data, cfg.lags, cfg.split)?;
            let (model, report) = train(&ds, &cfg)?;
            report.save(&out)?;
            if let Some(path) = params_out {
                model.save(&path)?;
            }
            if let Some(path) = curve_out {
                report.write_loss_curve(&path)?;
            }
            println!(
                "{} on {}: test MAE {:.6}, MSE {:.6}, {} steps in {:.2}s",
                cfg.model,
                ds.name(),
                report.test_mae,
                report.test_mse,
                report.optimizer_steps,
                report.train_seconds
            );
        }
        Command::Evaluate {
            params,
            config,
            data,
            partition,
            out,
        } => {
            let cfg = TrainConfig::load(&config)?;
            let model = Forecaster::load(&params)?;
            let ds = load_dataset_with(&data, model.features(), cfg.split)?;
            let spec = cfg.physics.resolve(ds.p_max())?;
            let partition = match partition {
                PartitionArg::Train => Partition::Train,
                PartitionArg::Test => Partition::Test,
            };
            let metrics = evaluate(&model, &ds, partition, &spec)?;
            let text = serde_json::to_string_pretty(&metrics)?;
            match out {
                Some(path) => write_text(&path, &text)?,
                None => println!("{text}"),
            }
        }
        Command::Benchmark {
            config,
            data,
            models,
            seeds,
            out,
            workers,
        } => {
            let base = TrainConfig::load(&config)?;
            let models = models
                .iter()
                .map(|m| m.parse::<ModelKind>())
                .collect::<Result<Vec<_>, _>>()?;
            let grid = BenchmarkGrid {
                datasets: data,
                models,
                seeds,
                base,
            };
            let rows = grid.run(workers.unwrap_or_else(worker_limit))?;
            write_metrics_csv(&rows, &out)?;
            println!("{} rows -> {}", rows.len(), out.display());
        }
        Command::Report {
            metrics,
            out_md,
            out_csv,
        } => {
            let rows = read_metrics_csv(&metrics)?;
            let table = average_rank(&aggregate_seeds(&rows))?;
            let md = table.to_markdown();
            print!("{md}");
            if let Some(path) = out_md {
                write_text(&path, &md)?;
            }
            if let Some(path) = out_csv {
                write_text(&path, &table.to_csv())?;
            }
        }
        Command::Gradcheck { seed, tolerance } => {
            let results = gradcheck_suite(seed)?;
            let mut ok = true;
            for r in &results {
                let pass = r.max_relative_error < tolerance;
                ok &= pass;
                println!(
                    "{:<5} {:<8} {:>4} entries  max rel err {:.3e}  {}",
                    r.model,
                    format!("{:?}", r.equation).to_lowercase(),
                    r.entries,
                    r.max_relative_error,
                    if pass { "ok" } else { "FAIL" }
                );
            }
            if !ok {
                return Ok(Status::CheckFailed);
            }
        }
        Command::Timing {
            nodes,
            steps,
            equation,
            repeats,
            out,
        } => {
            let nodes = nodes.unwrap_or_else(|| DEFAULT_TIMING_NODES.to_vec());
            let steps = steps.unwrap_or_else(|| DEFAULT_TIMING_STEPS.to_vec());
            let equations = match equation {
                EquationArg::Lwr => vec![EquationKind::Lwr],
                EquationArg::Lienard => vec![EquationKind::Lienard],
                EquationArg::Both => vec![EquationKind::Lwr, EquationKind::Lienard],
            };
            let mut reports = Vec::new();
            let mut ok = true;
            for eq in equations {
                let r = timing_probe(&nodes, &steps, eq, repeats)?;
                let pass = (0.8..=1.3).contains(&r.slope);
                ok &= pass;
                println!(
                    "{:<8} slope {:.3}  {}",
                    format!("{eq:?}").to_lowercase(),
                    r.slope,
                    if pass { "ok" } else { "outside [0.8, 1.3]" }
                );
                reports.push(r);
            }
            if let Some(path) = out {
                write_text(&path, &serde_json::to_string_pretty(&reports)?)?;
            }
            if !ok {
                return Ok(Status::CheckFailed);
            }
        }
    }
    Ok(Status::Ok)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::CheckFailed) => ExitCode::from(EXIT_CHECK),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
