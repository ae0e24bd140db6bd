use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use qpbem_cli::{checks, load_config, run, summary, CliError, Overrides};

/// Periodic multilayer scattering solver.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Args {
    /// Problem definition (TOML).
    #[arg(short, long, required_unless_present = "selfcheck")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
    /// Mesh refinement levels, replacing discretization.levels.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<usize>>,
    /// Gauss points per direction for separated element pairs.
    #[arg(long)]
    regular_order: Option<usize>,
    /// Gauss points per Duffy variable for touching element pairs.
    #[arg(long)]
    singular_order: Option<usize>,
    /// Gauss points per direction for near element pairs.
    #[arg(long)]
    near_order: Option<usize>,
    /// Ewald truncation tolerance (also used by --selfcheck).
    #[arg(long)]
    ewald_eps: Option<f64>,
    /// Worker threads for assembly (default: all cores).
    #[arg(short = 'j', long)]
    threads: Option<usize>,
    /// Run the built-in invariant checks instead of a study.
    #[arg(long)]
    selfcheck: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match real_main(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qpbem: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn real_main(args: Args) -> Result<(), CliError> {
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    if args.selfcheck {
        let eps = args.ewald_eps.unwrap_or(1e-14);
        let results = checks::selfcheck(eps);
        print!("{}", checks::report(&results));
        let failed: Vec<_> = results.iter().filter(|c| !c.passed()).map(|c| c.name.clone()).collect();
        if !failed.is_empty() {
            return Err(CliError::Check(failed.join(", ")));
        }
        return Ok(());
    }
    let overrides = Overrides {
        levels: args.levels,
        regular: args.regular_order,
        singular: args.singular_order,
        near: args.near_order,
        ewald_eps: args.ewald_eps,
    };
    let path = args.config.expect("clap enforces --config");
    let config = load_config(&path, &overrides)?;
    let outcome = run(&config, &args.out)?;
    print!("{}", summary(&outcome));
    println!("outputs in {}", args.out.display());
    Ok(())
}
