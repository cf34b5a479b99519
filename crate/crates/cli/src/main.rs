//! `bhdimer`: experiments on the dissipative Bose-Hubbard dimer.

mod commands;
mod config;
mod error;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Format, Opts};
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "bhdimer", version, about = "Bose-Hubbard dimer spectra, dynamics, scans and atom loss")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Energies, overlaps of a coherent state and beat frequencies
    Spectrum(Opts),
    /// Time series of observables, unitary or with a loss schedule
    Evolve(Opts),
    /// Field over the (z, phi) sphere
    Scan(Opts),
    /// Exact, mean-field and perturbative frequencies over a Lambda sweep
    Frequencies(Opts),
    /// Fraction of coherent initial states with EPR > 0 over time
    EntangledFraction(Opts),
    /// Revival, parity and quantum-jump self-checks
    Verify(Opts),
}

impl Command {
    fn parts(self) -> (&'static str, Opts) {
        match self {
            Command::Spectrum(o) => ("spectrum", o),
            Command::Evolve(o) => ("evolve", o),
            Command::Scan(o) => ("scan", o),
            Command::Frequencies(o) => ("frequencies", o),
            Command::EntangledFraction(o) => ("entangled-fraction", o),
            Command::Verify(o) => ("verify", o),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (name, opts) = cli.command.parts();
    let opts = opts.merge_config_file()?;
    if let Some(n) = opts.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot set up {n} threads: {e}")))?;
    }
    let mut failed = 0;
    let out = match name {
        "spectrum" => commands::spectrum(&opts)?,
        "evolve" => commands::evolve(&opts)?,
        "scan" => commands::scan(&opts)?,
        "frequencies" => commands::frequencies(&opts)?,
        "entangled-fraction" => commands::entangled(&opts)?,
        _ => {
            let (out, f) = commands::verify(&opts)?;
            failed = f;
            out
        }
    };
    let format = opts.format.unwrap_or(Format::Csv);
    let path = output::default_path(opts.out.as_deref(), opts.out_dir.as_deref(), name, format);
    for p in output::write(name, &out, &path, format)? {
        eprintln!("wrote {}", p.display());
    }
    if failed > 0 {
        return Err(CliError::Verification(format!("{failed} check(s) failed, see {}", path.display())));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // usage errors are configuration errors; help and version are not errors
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bhdimer: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
