use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use plts_core::harness::{self, ExperimentConfig};
use plts_core::hazard::{self, DEFAULT_WINDOW};
use plts_core::Error;

#[derive(Parser)]
#[command(name = "plts", version, about = "Adaptive vaccine-trial simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded replications of an experiment and write summaries.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a baseline hazard from daily case counts and print it as CSV.
    Hazard {
        #[arg(long)]
        from_csv: PathBuf,
        #[arg(long)]
        population: u64,
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: usize,
        /// Days after day 0 to keep; defaults to the whole series.
        #[arg(long)]
        horizon: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, workers, out } => {
            let mut cfg = ExperimentConfig::from_json_file(&config)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let exp = harness::run_experiment(&cfg, workers)?;
            let dir = cfg.output_dir.clone();
            harness::emit_outputs(&exp, &dir)?;
            let s = &exp.summary;
            println!(
                "{}: B={} ISR={:.2} ({:.2}) BIP={:.1}% ({:.1}) EPR={:.3} ({:.3})",
                s.policy,
                s.replications,
                s.isr.mean,
                s.isr.se,
                100.0 * s.bip.mean,
                100.0 * s.bip.se,
                s.epr.mean,
                s.epr.se
            );
            println!("outputs written to {}", dir.display());
            Ok(())
        }
        Command::Hazard {
            from_csv,
            population,
            window,
            horizon,
        } => {
            let rows = hazard::read_counts_csv(&from_csv).map_err(|e| match e {
                Error::Io { path, source } => Error::Config(format!("{}: {source}", path.display())),
                other => other,
            })?;
            let horizon = match horizon {
                Some(h) => h,
                None => rows
                    .len()
                    .checked_sub(1)
                    .ok_or_else(|| Error::Hazard("no rows".into()))?,
            };
            let h = hazard::load_daily_counts(&rows, population, window, horizon)?;
            let peak = plts_core::argmax(h.values());
            eprintln!(
                "{} days, peak hazard {:.3e} on day {peak}",
                h.values().len(),
                h.values()[peak]
            );
            print!("{}", harness::hazard_csv(&h));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
