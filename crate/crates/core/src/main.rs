use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use aggresim::analysis::{bridge_length, recenter_periodic, stability_onset};
use aggresim::cli_io::{
    configure_threads, parse_config, read_snapshot, run_simulation, snapshot_files,
    write_snapshot, RunConfig,
};
use aggresim::error::SimError;

#[derive(Parser)]
#[command(name = "aggresim", about = "Finite-element simulator of cellular aggregate formation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single simulation from a config file
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one simulation per value of a swept parameter
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Parameter to vary, as section.key=v1,v2,... (e.g. material.f_p=18,31,43)
        #[arg(long)]
        vary: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the phase-separation onset criterion for a config
    Stability {
        #[arg(long)]
        config: PathBuf,
    },
    /// Extract the bridge-length series h(t) from a snapshot directory
    Bridge {
        #[arg(long)]
        snapshot_dir: PathBuf,
        /// Axis along which the interface normal points (0 = x, 1 = y)
        #[arg(long, default_value_t = 1)]
        axis: usize,
    },
    /// Shift a snapshot so the density centroid sits at the domain center
    Recenter {
        #[arg(long)]
        snapshot: PathBuf,
    },
}

fn load_config(path: &PathBuf) -> Result<RunConfig, SimError> {
    let text = fs::read_to_string(path).map_err(|e| SimError::io(path.display().to_string(), e))?;
    let (cfg, warnings) = parse_config(&text)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), SimError> {
    configure_threads()?;
    match cli.command {
        Command::Run { config, out } => {
            let cfg = load_config(&config)?;
            let traj = run_simulation(&cfg, &out)?;
            let final_state = traj.states.last().unwrap();
            println!(
                "completed {} steps to t = {}",
                traj.reports.len(),
                final_state.time
            );
        }
        Command::Sweep { config, vary, out } => {
            let base_text =
                fs::read_to_string(&config).map_err(|e| SimError::io(config.display().to_string(), e))?;
            let (key, values) = vary.split_once('=').ok_or_else(|| {
                SimError::InvalidParameter(format!(
                    "--vary expects section.key=v1,v2,..., got `{vary}`"
                ))
            })?;
            let (section, field) = key.split_once('.').ok_or_else(|| {
                SimError::InvalidParameter(format!(
                    "--vary key must be section.key, got `{key}`"
                ))
            })?;
            for value in values.split(',') {
                // append the override so it is parsed and validated exactly
                // like a hand-written config line
                let text = format!("{base_text}\n[{section}]\n{field} = {value}\n");
                let (cfg, warnings) = parse_config(&text)?;
                for w in warnings {
                    eprintln!("warning: {w}");
                }
                let sub = out.join(format!("{field}_{value}"));
                let traj = run_simulation(&cfg, &sub)?;
                println!(
                    "{field} = {value}: {} steps to t = {}",
                    traj.reports.len(),
                    traj.states.last().unwrap().time
                );
            }
        }
        Command::Stability { config } => {
            let cfg = load_config(&config)?;
            let base = match cfg.ic {
                aggresim::cli_io::IcSpec::Uniform { base, .. } => base,
                aggresim::cli_io::IcSpec::TwoColony { base, .. } => base,
            };
            let (value, separates) = stability_onset(&cfg.params, base);
            let verdict = if separates { "separates" } else { "stable" };
            println!("onset value = {value:.6e} ({verdict})");
        }
        Command::Bridge { snapshot_dir, axis } => {
            let files = snapshot_files(&snapshot_dir)?;
            if files.is_empty() {
                return Err(SimError::InvalidParameter(format!(
                    "no snapshot files in {}",
                    snapshot_dir.display()
                )));
            }
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "time,h,detected").map_err(|e| SimError::io("stdout", e))?;
            for file in files {
                let (state, mesh, _) = read_snapshot(&file)?;
                let (h, found) = bridge_length(&state, &mesh, axis);
                writeln!(stdout, "{},{},{}", state.time, h, found)
                    .map_err(|e| SimError::io("stdout", e))?;
            }
        }
        Command::Recenter { snapshot } => {
            let (state, mesh, mode) = read_snapshot(&snapshot)?;
            let (shifted, shift) = recenter_periodic(&state, &mesh);
            eprintln!("applied shift ({}, {})", shift[0], shift[1]);
            let tmp = std::env::temp_dir().join(format!("aggresim_recenter_{}.txt", std::process::id()));
            write_snapshot(&shifted, &mesh, mode, 0, &tmp)?;
            let text = fs::read_to_string(&tmp).map_err(|e| SimError::io(tmp.display().to_string(), e))?;
            fs::remove_file(&tmp).ok();
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
