use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rotorbit::io::read_matrix;
use rotorbit::runner::{
    exit_code, run_solve, run_verify, setup, NormalFormReport, ProblemSpec,
};
use rotorbit::symplectic::{parse_preset, SymplecticRotation, DEFAULT_TOL};
use rotorbit::{Error, Result};

#[derive(Parser)]
#[command(name = "rotorbit", version, about = "Rotating periodic orbits of convex Hamiltonian systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline on a problem file and write the results.
    Solve {
        spec: PathBuf,
        /// Defaults to the problem file's `output_dir`, then $ROTORBIT_OUTPUT_DIR, then ./rotorbit-out.
        #[arg(short, long)]
        output_dir: Option<PathBuf>,
    },
    /// Re-check the orbit tables in a solve output directory.
    Verify { dir: PathBuf },
    /// Normal form of a matrix file (CSV or JSON rows) or preset.
    NormalForm {
        matrix: String,
        /// Plane count, needed by the `identity` and `neg-identity` presets.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
    },
    /// Pinching radii and the exponent chosen for a problem file.
    Pinch {
        spec: PathBuf,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn solve(spec_path: &Path, output_dir: Option<&Path>) -> Result<bool> {
    let spec = ProblemSpec::from_path(spec_path)?;
    let dir = spec.resolve_output_dir(output_dir);
    match run_solve(&spec, &dir) {
        Ok(outcome) => {
            let r = &outcome.report;
            for w in &r.warnings {
                log::warn!("{w}");
            }
            eprintln!(
                "{}: {} solutions, certificate count {}, ledger {}; written to {}",
                r.status,
                r.solutions.len(),
                r.certificate.as_ref().map_or(0, |c| c.count),
                match &r.ledger {
                    Some(l) if l.all_passed() => "passed",
                    Some(_) => "FAILED",
                    None => "unavailable",
                },
                dir.display()
            );
            Ok(outcome.completed)
        }
        Err(e) if exit_code(&e) == 3 => {
            // keep whatever context there is for the numerical failure
            std::fs::create_dir_all(&dir)?;
            let partial = serde_json::json!({
                "status": "failed",
                "error": e.to_string(),
                "spec": spec,
            });
            std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&partial)? + "\n")?;
            Err(e)
        }
        Err(e) => Err(e),
    }
}

fn normal_form(matrix: &str, n: Option<usize>, tol: f64) -> Result<()> {
    let path = Path::new(matrix);
    let q = if path.exists() {
        read_matrix(path)?
    } else {
        parse_preset(matrix, n)?
    };
    let sr = SymplecticRotation::with_tolerance(&q, tol)?;
    print_json(&NormalFormReport::new(&sr))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Solve { spec, output_dir } => solve(&spec, output_dir.as_deref()),
        Command::Verify { dir } => {
            if !dir.is_dir() {
                return Err(Error::Input(format!("{} is not a directory", dir.display())));
            }
            let report = run_verify(&dir)?;
            for o in &report.orbits {
                for f in &o.failures {
                    eprintln!("FAIL {}: {f}", o.file);
                }
            }
            if let (Some(a), Some(b)) = (report.certificate_count, report.reported_count) {
                if a != b {
                    eprintln!("FAIL certificate count {a} differs from the reported {b}");
                }
            }
            print_json(&report)?;
            Ok(report.passed)
        }
        Command::NormalForm { matrix, n, tol } => normal_form(&matrix, n, tol).map(|_| true),
        Command::Pinch { spec, trials } => {
            let spec = ProblemSpec::from_path(&spec)?;
            let su = setup(&spec, trials)?;
            for w in &su.warnings {
                log::warn!("{w}");
            }
            print_json(&su.pinch_report)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
