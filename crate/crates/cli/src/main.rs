use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use contentflow::exec::Execution;
use contentflow::scenarios::{self, RunReport, ScenarioConfig};

/// Run ContentFlow scenarios on the simulated fabric.
#[derive(Parser)]
#[command(name = "contentflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and print per-request metrics as CSV.
    Run {
        config: PathBuf,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Measure miss, hit and direct delay for each content size.
    Sweep {
        config: PathBuf,
        /// Comma-separated sizes in bytes; K and M suffixes mean 10^3 and 10^6.
        #[arg(long, value_delimiter = ',', value_parser = parse_size, required = true)]
        sizes: Vec<usize>,
        /// Run sizes one after another instead of in parallel.
        #[arg(long)]
        sequential: bool,
    },
    /// Parse and check a scenario without running it.
    Validate { config: PathBuf },
    /// Run a scenario and print its event trace.
    Trace {
        config: PathBuf,
        /// Include per-hop packet events.
        #[arg(long)]
        verbose: bool,
    },
}

fn parse_size(s: &str) -> Result<usize, String> {
    let s = s.trim();
    let (digits, scale) = match s.char_indices().last() {
        Some((i, 'k' | 'K')) => (&s[..i], 1_000),
        Some((i, 'm' | 'M')) => (&s[..i], 1_000_000),
        _ => (s, 1),
    };
    digits
        .parse::<usize>()
        .map(|n| n * scale)
        .map_err(|_| format!("not a size: {s}"))
}

fn load(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let name = path
        .file_stem()
        .map_or("scenario".into(), |s| s.to_string_lossy().into_owned());
    ScenarioConfig::parse(&name, &text).with_context(|| format!("{}", path.display()))
}

fn report_violations(report: &RunReport) -> ExitCode {
    if report.is_clean() {
        return ExitCode::SUCCESS;
    }
    for v in &report.violations {
        eprintln!("violation: {v}");
    }
    ExitCode::from(1)
}

fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config, csv } => {
            let report = scenarios::run(&load(&config)?)?;
            match csv {
                Some(path) => {
                    let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                    report.metrics.write_csv(file)?;
                }
                None => report.metrics.write_csv(io::stdout().lock())?,
            }
            eprintln!(
                "{}: {} requests, {} events, trace digest {}",
                report.scenario,
                report.metrics.requests.len(),
                report.events,
                report.trace.digest()
            );
            Ok(report_violations(&report))
        }
        Command::Sweep {
            config,
            sizes,
            sequential,
        } => {
            let cfg = load(&config)?;
            let exec = if sequential {
                Execution::Sequential
            } else {
                Execution::available()
            };
            let rows = scenarios::sweep(&cfg, &sizes, exec)?;
            scenarios::write_sweep_csv(&rows, io::stdout().lock())?;
            for r in rows.iter().filter(|r| r.flagged) {
                eprintln!(
                    "flagged: size {} hit {} (hit delay {}, miss delay {})",
                    r.size, r.hit, r.hit_delay, r.miss_delay
                );
            }
            let violations: usize = rows.iter().map(|r| r.violations).sum();
            if violations > 0 {
                eprintln!("{violations} invariant violations; rerun a size with `run` to see them");
                return Ok(ExitCode::from(1));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            println!(
                "{}: ok ({} nodes, {} links, {} contents, {} requests)",
                cfg.name,
                cfg.nodes.len(),
                cfg.links.len(),
                cfg.contents.len(),
                cfg.workload.len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Trace { config, verbose } => {
            let report = scenarios::run(&load(&config)?)?;
            let mut out = io::stdout().lock();
            out.write_all(report.trace.render(verbose).as_bytes())?;
            out.flush()?;
            Ok(report_violations(&report))
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
