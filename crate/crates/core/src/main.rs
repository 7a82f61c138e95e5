use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fido_sidechan::harness::{
    calibrate, dump_wire, emit_report, fmt_f64, resolve_authenticator, resolve_client,
    run_scenario, HarnessError, Mode, Scenario, DEFAULT_SESSIONS, DEFAULT_TOLERANCE, SEED_ENV,
};

#[derive(Parser)]
#[command(version, about = "FIDO2 allowCredential timing side-channel simulator")]
struct Cli {
    /// Print the CTAP frames of the first attack call as hex.
    #[arg(long, global = true)]
    dump_wire: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit an authenticator profile to a per-probe delta and verify it.
    Calibrate {
        /// Preset name or path to a .profile file.
        #[arg(long)]
        profile: String,
        #[arg(long)]
        delta_us: f64,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Write the calibrated profile here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute a scenario file.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the attack against every mitigation toggle.
    Sweep {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "hyperfido")]
        profile: String,
        #[arg(long, default_value = "chromium_unpatched")]
        client: String,
        #[arg(long, default_value_t = 1)]
        subject: u8,
        #[arg(long, default_value_t = 60)]
        n: usize,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = DEFAULT_SESSIONS)]
        sessions: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn env_seed(seed: u64) -> Result<u64, HarnessError> {
    match std::env::var(SEED_ENV) {
        Ok(raw) => raw
            .trim()
            .parse()
            .map_err(|_| HarnessError::Config(format!("{SEED_ENV}={raw:?} is not a u64"))),
        Err(_) => Ok(seed),
    }
}

fn execute(s: &Scenario, out: &Path, dump: bool) -> Result<(), HarnessError> {
    if dump {
        print!("{}", dump_wire(s)?);
    }
    let report = run_scenario(s)?;
    for path in emit_report(&report, out)? {
        println!("wrote {}", path.display());
    }
    if let Some(v) = &report.verdict {
        println!(
            "linked {} (rate {}), error rate {}",
            v.linked,
            fmt_f64(v.linked_rate),
            fmt_f64(v.error_rate)
        );
    }
    println!("runtime {:.3} s", report.runtime.as_secs_f64());
    Ok(())
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Calibrate {
            profile,
            delta_us,
            tolerance,
            seed,
            out,
        } => {
            let base = resolve_authenticator(&profile, Path::new("."))?;
            let (fitted, samples) = calibrate(&base, delta_us, tolerance, env_seed(seed)?)?;
            println!(
                "measured delta {} us over {} probes per class (target {})",
                fmt_f64(samples.delta_us()),
                samples.random.len(),
                fmt_f64(delta_us)
            );
            match out {
                Some(path) => {
                    std::fs::write(&path, fitted.to_kv()).map_err(|source| HarnessError::Io {
                        path: path.clone(),
                        source,
                    })?;
                    println!("wrote {}", path.display());
                }
                None => print!("{}", fitted.to_kv()),
            }
            Ok(())
        }
        Command::Run { scenario, out } => {
            let mut s = Scenario::load(&scenario)?;
            s.apply_env_seed()?;
            execute(&s, &out, cli.dump_wire)
        }
        Command::Sweep {
            out,
            profile,
            client,
            subject,
            n,
            trials,
            sessions,
            seed,
        } => {
            let s = Scenario {
                id: "sweep".to_string(),
                seed: env_seed(seed)?,
                authenticator: resolve_authenticator(&profile, Path::new("."))?,
                client: resolve_client(&client, Path::new("."))?,
                subject,
                n,
                trials,
                sessions,
                mode: Mode::MitigationSweep,
                onset_error_us: 0.0,
                target_delta_us: None,
                tolerance: DEFAULT_TOLERANCE,
            };
            s.validate()?;
            execute(&s, &out, cli.dump_wire)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
