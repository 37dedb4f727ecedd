use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sbldf::container::{read_arrays, write_arrays};
use sbldf::synth::{gen_tracking, TrackingDataset};
use sbldf_bench::config::{parse_override, Experiment, ExperimentConfig};
use sbldf_bench::experiments;
use sbldf_bench::plot::emit_plots;
use sbldf_bench::rows::{read_rows, ResultRow};
use sbldf_bench::write_outputs;

#[derive(Parser)]
#[command(
    name = "sbldf",
    version,
    about = "Sparse Bayesian learning with dynamic filtering: experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write CSV tables and plots.
    Run {
        /// measurements, coherence, tracking or runtime
        experiment: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Worker threads; 0 uses one per core.
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Override one config key, `key=value`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Draw SVG plots from a result table.
    Plot {
        table: PathBuf,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
    /// Write a synthetic dataset to a binary container.
    Generate {
        #[command(subcommand)]
        what: Generate,
    },
    /// Print the arrays stored in a binary container.
    Inspect { file: PathBuf },
}

#[derive(Subcommand)]
enum Generate {
    Tracking {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 25)]
        s: usize,
        #[arg(long, default_value_t = 30)]
        steps: usize,
        #[arg(long, default_value_t = 0.1)]
        p: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            experiment,
            config,
            out,
            threads,
            seed,
            set,
        } => {
            let experiment: Experiment = experiment.parse().map_err(config_err)?;
            let text = config
                .map(|p| {
                    std::fs::read_to_string(&p)
                        .map_err(|e| config_err(format!("{}: {e}", p.display())))
                })
                .transpose()?;
            let mut overrides = set
                .iter()
                .map(|s| parse_override(s))
                .collect::<Result<Vec<_>, _>>()
                .map_err(config_err)?;
            if let Some(s) = seed {
                overrides.push(("seed".into(), s.to_string()));
            }
            let cfg = ExperimentConfig::load(experiment, text.as_deref(), &overrides)
                .map_err(config_err)?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(runtime_err)?;
            let outcome = pool
                .install(|| experiments::run(&cfg))
                .map_err(runtime_err)?;
            for p in write_outputs(&out, experiment, &outcome).map_err(runtime_err)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Plot { table, out } => {
            let f =
                File::open(&table).map_err(|e| runtime_err(format!("{}: {e}", table.display())))?;
            let rows: Vec<ResultRow> = read_rows(f).map_err(runtime_err)?;
            if rows.is_empty() {
                eprintln!("warning: {} has no rows; nothing to plot", table.display());
                return Ok(());
            }
            for p in emit_plots(&rows, &out).map_err(runtime_err)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Generate {
            what:
                Generate::Tracking {
                    n,
                    s,
                    steps,
                    p,
                    seed,
                    out,
                },
        } => {
            let ds = gen_tracking(n, s, steps, p, seed).map_err(config_err)?;
            let f =
                File::create(&out).map_err(|e| runtime_err(format!("{}: {e}", out.display())))?;
            write_arrays(BufWriter::new(f), &ds.to_arrays()).map_err(runtime_err)?;
            println!("{}", out.display());
            Ok(())
        }
        Command::Inspect { file } => {
            let f =
                File::open(&file).map_err(|e| runtime_err(format!("{}: {e}", file.display())))?;
            let arrays = read_arrays(std::io::BufReader::new(f)).map_err(runtime_err)?;
            for a in &arrays {
                println!("{}\t{:?}", a.name, a.dims);
            }
            if let Ok(ds) = TrackingDataset::from_arrays(&arrays) {
                println!("tracking dataset: {} steps, n = {}", ds.steps(), ds.n());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
