use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use inchworm_core::config::RunSpec;
use inchworm_core::harness;
use inchworm_core::Error;

#[derive(Parser)]
#[command(name = "inchworm", version, about = "Real-time spin-boson dynamics on the Keldysh contour")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve once and write ⟨O(τ)⟩ for τ = 0, dt, …, t_final.
    Single(Common),
    /// Error and observed order against a fine reference grid.
    Converge(Common),
    /// Bare series and inchworm columns side by side.
    Compare(Common),
    /// Bare-estimator variance against contour length.
    Variance(Common),
    /// Tabulated bath correlation function.
    DumpBath(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; baseline values when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV; overrides output.path, stdout when neither is set.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for Monte Carlo sampling.
    #[arg(long)]
    threads: Option<usize>,
}

fn load(common: &Common) -> Result<RunSpec, Error> {
    let mut spec = match &common.config {
        Some(path) => RunSpec::load(path)?,
        None => RunSpec::default(),
    };
    if let Some(seed) = common.seed {
        spec.run.seed = seed;
    }
    if let Some(out) = &common.out {
        spec.output.path = Some(out.clone());
    }
    Ok(spec)
}

fn sink(spec: &RunSpec) -> Result<Box<dyn Write>, Error> {
    Ok(match &spec.output.path {
        Some(path) => {
            let file = File::create(path).map_err(|e| {
                Error::Io(io::Error::new(e.kind(), format!("cannot create {}: {e}", path.display())))
            })?;
            Box::new(BufWriter::new(file))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(command: Command) -> Result<(), Error> {
    let common = match &command {
        Command::Single(c) | Command::Converge(c) | Command::Compare(c) | Command::Variance(c) | Command::DumpBath(c) => c,
    };
    if let Some(k) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| Error::Config(format!("--threads: {e}")))?;
    }
    let spec = load(common)?;
    let mut out = sink(&spec)?;
    match command {
        Command::Single(_) => {
            let result = harness::run_single(&spec)?;
            harness::write_single_csv(&mut out, &result)?;
            if let Some(dev) = result.reference {
                eprintln!("reference: max |dev| = {:.6e}, mean |dev| = {:.6e} over {} points", dev.max_abs, dev.mean_abs, dev.count);
            }
        }
        Command::Converge(_) => {
            let report = harness::run_convergence(&spec)?;
            harness::write_convergence_csv(&mut out, &report)?;
        }
        Command::Compare(_) => {
            let report = harness::run_compare(&spec)?;
            harness::write_compare_csv(&mut out, &report)?;
        }
        Command::Variance(_) => {
            let report = harness::run_variance(&spec)?;
            harness::write_variance_csv(&mut out, &report)?;
        }
        Command::DumpBath(_) => {
            harness::dump_bath(&spec, &mut out)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("inchworm: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("inchworm: {e}");
            ExitCode::from(3)
        }
    }
}
