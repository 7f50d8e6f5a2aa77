use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tdsim_core::cli::{self, ModeSelection, RunOptions, SweepGrid};
use tdsim_core::scenario::{load_scenario, LoadedScenario};
use tdsim_core::Error;

/// Gated single-photon detector simulator with trigger-disabling feedback.
#[derive(Parser)]
#[command(name = "tdsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario with disabling ON and/or OFF and write its artifacts.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Seed the OFF run independently instead of sharing the photon train.
        #[arg(long)]
        independent_seeds: bool,
    },
    /// Load and check a scenario without running it.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a grid over mean photon number, efficiency and dead time.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        mu: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        eta: Vec<f64>,
        /// Dead times in seconds; cmp_value follows the slowest detector.
        #[arg(long, value_delimiter = ',')]
        dead_time: Vec<f64>,
        #[arg(long)]
        independent_seeds: bool,
    },
    /// Recompute key analyses from the event logs stored in an output directory.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        independent_seeds: bool,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the seed in the scenario file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "both", value_parser = parse_mode)]
    mode: ModeSelection,
    #[arg(long)]
    quiet: bool,
}

fn parse_mode(s: &str) -> Result<ModeSelection, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load(common: &Common) -> Result<LoadedScenario, Error> {
    let mut loaded = load_scenario(&common.scenario)?;
    if let Some(seed) = common.seed {
        loaded.scenario.seed = seed;
    }
    if !common.quiet {
        for a in &loaded.advisories {
            eprintln!("advisory [{}]: {}", a.code, a.message);
        }
    }
    Ok(loaded)
}

fn options(common: &Common, independent_seeds: bool) -> RunOptions {
    RunOptions {
        modes: common.mode,
        independent_seeds,
    }
}

fn say(quiet: bool, msg: impl AsRef<str>) {
    if !quiet {
        println!("{}", msg.as_ref());
    }
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Run { common, out, independent_seeds } => {
            let loaded = load(&common)?;
            let summary = cli::run_scenario(&loaded.scenario, &out, &options(&common, independent_seeds))?;
            for m in &summary.modes {
                let st = &m.stats;
                let mut line = format!(
                    "{} [{}]: {} edges, {} delivered, useful {:.3}%",
                    summary.scenario,
                    st.mode.label(),
                    st.total_edges,
                    st.delivered_gates,
                    st.useful_percentage
                );
                if let Some(f) = st.coincidence_fraction {
                    line += &format!(", coincidences {:.3}%", 100.0 * f);
                }
                if let Some(k) = &m.key {
                    line += &format!(", key {} bits, {} dead-time runs", k.key_length, k.run_count);
                }
                say(common.quiet, line);
            }
            if let Some(t) = summary.theory_pct {
                say(common.quiet, format!("theory useful percentage {t:.3}%"));
            }
            say(common.quiet, format!("wrote {} files to {}", summary.files.len(), out.display()));
        }
        Command::Validate { common } => {
            let loaded = load(&common)?;
            say(
                common.quiet,
                format!("{}: ok ({} advisories)", display(&common.scenario), loaded.advisories.len()),
            );
        }
        Command::Sweep { common, out, mu, eta, dead_time, independent_seeds } => {
            let loaded = load(&common)?;
            let grid = SweepGrid {
                mean_photon_number: mu,
                quantum_efficiency: eta,
                dead_time,
            };
            let rows = cli::sweep(&loaded.scenario, &grid, &out, &options(&common, independent_seeds))?;
            say(common.quiet, format!("wrote {} rows to {}", rows.len(), out.join("sweep.csv").display()));
        }
        Command::Report { common, out, independent_seeds } => {
            let loaded = load(&common)?;
            let files = cli::report(&loaded.scenario, &out, &options(&common, independent_seeds))?;
            say(common.quiet, format!("rewrote {}", files.join(", ")));
        }
    }
    Ok(())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
