use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use eti_cli::config::{Overrides, RunConfig, SuiteName};
use eti_cli::error::{CliError, Result};
use eti_cli::output::{self, Section};
use eti_cli::{run_suites, suites};

#[derive(Parser)]
#[command(name = "eti", version, about = "Numerical checks of entropic transport inequalities")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    #[arg(long, global = true)]
    t: Option<f64>,
    #[arg(long, global = true)]
    s: Option<f64>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    grid_n: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Write dual potentials and couplings with the solver dumps.
    #[arg(long, global = true)]
    full_output: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one suite, or `all` configured suites.
    Check { suite: Target },
    /// Run the small-noise ladder and print its tables.
    ConvergeW2,
    /// Repeat the configured suites over values of one parameter.
    Sweep {
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        values: Vec<f64>,
    },
    /// Write the reference kernel and its stationary measure as CSV.
    DumpKernel,
}

#[derive(Clone, Copy)]
enum Target {
    All,
    Suite(SuiteName),
}

impl std::str::FromStr for Target {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "all" {
            return Ok(Self::All);
        }
        SuiteName::from_str(s, false).map(Self::Suite)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepParam {
    Lambda,
    Epsilon,
    T,
}

fn load(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        epsilon: g.epsilon,
        t: g.t,
        s: g.s,
        lambda: g.lambda,
        grid_n: g.grid_n,
        seed: g.seed,
        tol: g.tol,
        out: g.out.clone(),
        full_output: g.full_output,
    });
    Ok(cfg)
}

/// Prints to stdout, ignoring a closed pipe.
fn say(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn finish(cfg: &RunConfig, command: &str, sections: &[Section], started: Instant) -> Result<i32> {
    let wall = started.elapsed().as_secs_f64();
    output::write_all(&cfg.out_dir, command, sections, wall)?;
    say(&format!("{}reports written to {}\n", output::summary(sections, wall), cfg.out_dir.display()));
    Ok(output::exit_code(sections))
}

fn run(cli: Cli) -> Result<i32> {
    let started = Instant::now();
    let mut cfg = load(&cli.global)?;
    let jobs = cli.global.jobs;
    match cli.command {
        Command::Check { suite } => {
            if let Target::Suite(s) = suite {
                cfg.suites = vec![s];
            }
            let cfg = cfg.resolve()?;
            let outcomes = run_suites(&cfg, jobs)?;
            let sections = [Section {
                label: String::new(),
                config: cfg.clone(),
                outcomes,
            }];
            finish(&cfg, "check", &sections, started)
        }
        Command::ConvergeW2 => {
            cfg.suites = vec![SuiteName::ConvergeW2];
            let cfg = cfg.resolve()?;
            let outcomes = run_suites(&cfg, jobs)?;
            for a in outcomes.iter().flat_map(|o| &o.artifacts) {
                if a.file.ends_with(".txt") {
                    say(&format!("{}\n", a.contents));
                }
            }
            let sections = [Section {
                label: String::new(),
                config: cfg.clone(),
                outcomes,
            }];
            finish(&cfg, "converge-w2", &sections, started)
        }
        Command::Sweep { param, values } => {
            let name = match param {
                SweepParam::Lambda => "lambda",
                SweepParam::Epsilon => "epsilon",
                SweepParam::T => "t",
            };
            let mut sections = Vec::with_capacity(values.len());
            for v in values {
                let mut point = cfg.clone();
                match param {
                    SweepParam::Lambda => point.lambda = Some(v),
                    SweepParam::Epsilon => point.epsilon = v,
                    SweepParam::T => point.t = v,
                }
                let point = point.resolve()?;
                let outcomes = run_suites(&point, jobs)?;
                sections.push(Section {
                    label: format!("{name}={v}"),
                    config: point,
                    outcomes,
                });
            }
            let cfg = cfg.resolve()?;
            finish(&cfg, "sweep", &sections, started)
        }
        Command::DumpKernel => {
            let cfg = cfg.resolve()?;
            let s = suites::setup(&cfg, cfg.grid_n, cfg.t)?;
            output::ensure_dir(&cfg.out_dir)?;
            let path = cfg.out_dir.join("kernel.csv");
            let file = File::create(&path).map_err(|source| CliError::Write { path: path.clone(), source })?;
            s.k.write_csv(BufWriter::new(file))
                .map_err(|source| CliError::Write { path: path.clone(), source })?;
            let mut w = csv::Writer::from_path(cfg.out_dir.join("stationary.csv"))?;
            w.write_record(["i", "x", "m"])?;
            let space = s.m.space();
            for (i, m) in s.m.weights().iter().enumerate() {
                w.write_record([i.to_string(), space.point(i)[0].to_string(), m.to_string()])?;
            }
            w.flush().map_err(|source| CliError::Write {
                path: cfg.out_dir.join("stationary.csv"),
                source,
            })?;
            say(&format!(
                "kernel on {} points: row-sum {:.2e}, reversibility {:.2e}, stationarity {:.2e}\n",
                s.k.len(),
                s.k.row_sum_residual(),
                s.k.reversibility_residual(),
                s.k.stationarity_residual()
            ));
            say(&format!("wrote {} and stationary.csv\n", path.display()));
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("eti: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

