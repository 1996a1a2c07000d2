use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use shadowprice_cli::{run, RunConfig, RunError, RunOptions};

/// Solve the dual retirement problem and write solution, boundary, summary and checks.
#[derive(Debug, Parser)]
#[command(name = "shadowprice", version)]
struct Args {
    /// TOML config, or a previous summary.json to replay its config echo.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Single-threaded, bit-reproducible run.
    #[arg(long)]
    sequential: bool,
    /// Skip the Monte Carlo checks.
    #[arg(long)]
    skip_sim: bool,
    /// Comma-separated correlations to solve and compare with rho = 1.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    rho_sweep: Option<Vec<f64>>,
}

fn execute(args: &Args) -> Result<bool, RunError> {
    let config = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let options = RunOptions {
        out: args.out.clone(),
        sequential: args.sequential,
        skip_sim: args.skip_sim,
        rho_sweep: args.rho_sweep.clone(),
    };
    let report = run(&options.apply(config))?;
    for c in &report.checks.checks {
        println!("{}", c.line());
    }
    println!("wrote {}", report.out_dir.display());
    Ok(report.checks.all_pass)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(all_pass) => {
            if !all_pass {
                eprintln!("some checks failed; see checks.json");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.category.exit_code() as u8)
        }
    }
}
