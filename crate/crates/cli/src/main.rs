use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use stretchlab_cli::{fig_suite, replay, run, RunError, Scenario, Summary};

/// Run a stretching experiment described by a `key = value` config file.
#[derive(Debug, Parser)]
#[command(name = "simulate", version)]
struct Args {
    /// Config file; required unless --fig-suite or --replay is given.
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "STRETCHLAB_OUT", default_value = "out")]
    out: PathBuf,
    /// Override `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Override `replicates`.
    #[arg(long)]
    replicates: Option<usize>,
    /// Override `dt`.
    #[arg(long)]
    dt: Option<f64>,
    /// Run the four bundled figure scenarios.
    #[arg(long, conflicts_with_all = ["config", "replay"])]
    fig_suite: bool,
    /// Re-run the config stored in a summary JSON.
    #[arg(long, value_name = "SUMMARY", conflicts_with = "config")]
    replay: Option<PathBuf>,
}

fn read_scenario(args: &Args, path: &PathBuf) -> Result<(Scenario, String), RunError> {
    let text = std::fs::read_to_string(path).map_err(|source| RunError::Io {
        path: path.clone(),
        source,
    })?;
    let mut s = Scenario::parse(&text)?;
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    if let Some(n) = args.replicates {
        s.replicates = n;
    }
    if let Some(dt) = args.dt {
        s.dt = dt;
    }
    s.validate()?;
    let stem = path.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
    Ok((s, stem))
}

fn execute(args: &Args) -> Result<Vec<Summary>, RunError> {
    if args.fig_suite {
        return fig_suite(&args.out);
    }
    if let Some(summary) = &args.replay {
        return Ok(vec![replay(summary, &args.out)?]);
    }
    let Some(path) = &args.config else {
        return Err(stretchlab_cli::ConfigError::invalid("config", "a config file, --fig-suite or --replay is required").into());
    };
    let (s, stem) = read_scenario(args, path)?;
    Ok(vec![run(&s, &args.out, &stem)?])
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(summaries) => {
            for s in summaries {
                for f in &s.files {
                    println!("{}", args.out.join(f).display());
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
