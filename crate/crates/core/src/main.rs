use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gyrolab::cli::{run_scenario_with, Overrides};
use gyrolab::config::validate_config;
use gyrolab::Error;

#[derive(Parser)]
#[command(name = "gyrolab", version, about = "Strong-field magnetic geodesic experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every stage declared in a scenario config.
    Run(RunArgs),
    /// Check a config and print all diagnostics.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Base integration tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Worker threads for ensembles (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Speed for every stage that takes one.
    #[arg(long)]
    s: Option<f64>,
    /// Section returns per direction for trap and saddle stages.
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    /// Shooting annulus as `lo,hi`.
    #[arg(long, value_delimiter = ',')]
    annulus: Option<Vec<f64>>,
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Validate { config } => match validate_config(&config) {
            Ok(d) if d.is_empty() => {
                println!("ok");
                ExitCode::SUCCESS
            }
            Ok(d) => {
                for x in &d {
                    println!("{x}");
                }
                ExitCode::from(2)
            }
            Err(e) => fail(&e),
        },
        Cmd::Run(a) => {
            if let Some(j) = a.jobs {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
                    eprintln!("warning: {e}");
                }
            }
            let annulus = match a.annulus.as_deref() {
                None => None,
                Some([lo, hi]) => Some([*lo, *hi]),
                Some(_) => return fail(&Error::Config("--annulus takes exactly two values lo,hi".into())),
            };
            let ov = Overrides {
                seed: a.seed,
                tol: a.tol,
                s: a.s,
                horizon: a.horizon,
                samples: a.samples,
                annulus,
            };
            match run_scenario_with(&a.config, &a.out, &ov) {
                Ok(m) => {
                    for f in &m.files {
                        println!("{}  {}", f.sha256, f.path);
                    }
                    for t in &m.wall_clock {
                        eprintln!("{}: {:.3} s", t.stage, t.seconds);
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
    }
}
