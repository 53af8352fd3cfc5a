use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use nsalpha_core::flowmap;
use nsalpha_core::harness::{self, ExperimentConfig, Format};

#[derive(Parser, Debug)]
#[command(name = "nsalpha", version, about = "Vortex-particle experiments for the stochastic NS-alpha model")]
struct Cli {
    /// Override the master seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output format for tables.
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Csv)]
    format: OutputFormat,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

impl From<OutputFormat> for Format {
    fn from(f: OutputFormat) -> Self {
        match f {
            OutputFormat::Csv => Format::Csv,
            OutputFormat::Json => Format::Json,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the invariant suite; exits nonzero when a check fails.
    Validate { config: PathBuf },
    /// Write solver and particle snapshots.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep the lattice sizes and tabulate errors against the solver.
    Converge {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare flow-map estimates of the vorticity modes with the solver.
    Flowmap {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(s) = seed {
        cfg.seeds.master = s;
    }
    Ok(cfg)
}

/// Create `out` and record the effective configuration in it.
fn prepare_out(out: &Path, cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.toml"), cfg.to_toml_string()?)?;
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let format = Format::from(cli.format);
    match cli.command {
        Command::Validate { config } => {
            let cfg = load(&config, cli.seed)?;
            let report = harness::validate(&cfg);
            match format {
                Format::Csv => print!("{report}"),
                Format::Json => println!("{}", serde_json::to_string_pretty(&report)?),
            }
            if report.passed() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("{} check(s) failed", report.failures().len());
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Simulate { config, out } => {
            let cfg = load(&config, cli.seed)?;
            prepare_out(&out, &cfg)?;
            let sim = harness::simulate(&cfg)?;
            sim.write(&out, &cfg)?;
            let failed = sim.particles.iter().filter(|(_, r)| r.is_err()).count();
            info!("wrote {} snapshot sets to {}", sim.particles.len() + 1 - failed, out.display());
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Converge { config, out } => {
            let cfg = load(&config, cli.seed)?;
            prepare_out(&out, &cfg)?;
            let table = harness::run_convergence(&cfg)?;
            let path = out.join(format!("errors.{}", format.extension()));
            table.emit(&path, format)?;
            println!("# {}", table.note);
            for r in &table.rows {
                match (r.sup_error, &r.failure) {
                    (Some(e), _) => println!("N = {:>6}  {:<8} {:.6e}", r.n, r.norm, e),
                    (None, Some(msg)) => println!("N = {:>6}  {:<8} failed: {msg}", r.n, r.norm),
                    (None, None) => unreachable!("rows without an error carry a failure"),
                }
            }
            info!("wrote {}", path.display());
            Ok(if table.rows.iter().any(|r| r.failed()) { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        Command::Flowmap { config, out } => {
            let cfg = load(&config, cli.seed)?;
            prepare_out(&out, &cfg)?;
            let report = harness::run_flowmap(&cfg)?;
            let path = out.join(format!("flowmap.{}", format.extension()));
            let file = std::io::BufWriter::new(fs::File::create(&path)?);
            match format {
                Format::Csv => flowmap::write_csv(&report.rows, file)?,
                Format::Json => serde_json::to_writer_pretty(file, &report.rows)?,
            }
            let t = cfg.flowmap.t_final;
            println!("max z at t = 0: {:.3}", report.max_z(0.0));
            println!("max z at t = {t}: {:.3}", report.max_z(t));
            println!("max |det J - 1| at t = {t}: {:.3e}", report.max_det_defect);
            info!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
