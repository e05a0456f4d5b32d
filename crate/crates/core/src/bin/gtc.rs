//! Command-line frontend.
//!
//! Subcommands: `forward`, `optimize`, `order-study`, `benchmark`,
//! `ce-verify`, `check-scheme`. A JSON configuration file (`--config`) fully
//! determines a run; flags override file values. Results land in `--out` as
//! CSV tables with the resolved configuration in a comment header.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gt_control::config::{RunConfig, SchemeSpec, BENCHMARK_DEFAULTS, ORDER_STUDY_DEFAULTS};
use gt_control::experiments::{
    run_benchmark, run_ce_verify, run_forward_experiment, run_optimize_experiment,
    run_order_study, write_benchmark_csv, write_ce_csv, write_order_csv,
};
use gt_control::tableau::{builtin_scheme, check_order2, classify};
use gt_control::Result;

#[derive(Parser)]
#[command(name = "gtc", version, about = "Boundary control of the Goldstein-Taylor model with asymptotic-preserving IMEX schemes")]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for CSV tables.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for sweep experiments (0 = automatic).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SweepArgs {
    /// Scheme name (registry) overriding the configuration file.
    #[arg(long)]
    scheme: Option<String>,
    /// Comma-separated relaxation parameters.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the state under the configured control and dump it.
    Forward {
        #[command(flatten)]
        sweep: SweepArgs,
    },
    /// Minimize the tracking objective by projected gradients.
    Optimize {
        #[command(flatten)]
        sweep: SweepArgs,
    },
    /// Temporal convergence study on the manufactured solution (dx = dt).
    OrderStudy {
        #[command(flatten)]
        sweep: SweepArgs,
        /// Comma-separated step counts.
        #[arg(long, value_delimiter = ',', default_values_t = vec![20usize, 40, 80, 160, 320])]
        n_list: Vec<usize>,
    },
    /// Optimization benchmark over a sweep of relaxation parameters.
    Benchmark {
        #[command(flatten)]
        sweep: SweepArgs,
        /// Scheme names to include (repeatable).
        #[arg(long = "schemes", value_delimiter = ',')]
        schemes: Option<Vec<String>>,
    },
    /// Verify the second-order decay of the relaxed-flux residual.
    CeVerify {
        #[command(flatten)]
        sweep: SweepArgs,
    },
    /// Print the structural classification of a scheme.
    CheckScheme { name: String },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    match &cli.config {
        Some(path) => RunConfig::from_file(path),
        None => Ok(RunConfig::default()),
    }
}

fn apply_sweep(run: &mut RunConfig, sweep: &SweepArgs) {
    if let Some(s) = &sweep.scheme {
        run.scheme = Some(SchemeSpec::Name(s.clone()));
    }
    if let Some(eps) = &sweep.eps {
        if eps.len() == 1 {
            run.eps = Some(eps[0]);
        }
        run.eps_list = Some(eps.clone());
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    if cli.workers.is_some() {
        cfg.workers = cli.workers;
    }
    let workers = cfg.workers;
    match &cli.command {
        Command::CheckScheme { name } => {
            let pair = builtin_scheme(name)?;
            let class = classify(&pair);
            println!("scheme     : {}", pair.name);
            println!("stages     : {}", pair.stages());
            println!("type A     : {}", class.type_a);
            println!("ISA        : {}", class.isa);
            println!("GSA        : {}", class.gsa);
            println!("order 2    : {}", check_order2(&pair));
            Ok(())
        }
        Command::Forward { sweep } => {
            apply_sweep(&mut cfg, sweep);
            let resolved = run_forward_experiment(&cfg, &cli.out)?;
            println!(
                "forward run complete: {} steps on {} cells -> {}",
                resolved.n_steps,
                resolved.grid.cells(),
                cli.out.join("state.csv").display()
            );
            Ok(())
        }
        Command::Optimize { sweep } => {
            apply_sweep(&mut cfg, sweep);
            let report = run_optimize_experiment(&cfg, &cli.out)?;
            println!(
                "optimize complete: J = {:.6e}, iterations = {}, converged = {}",
                report.j_star, report.iterations, report.converged
            );
            Ok(())
        }
        Command::OrderStudy { sweep, n_list } => {
            apply_sweep(&mut cfg, sweep);
            let scheme = sweep.scheme.clone().unwrap_or_else(|| "GSA342".to_string());
            let rows = run_order_study(&cfg, &scheme, n_list, workers)?;
            let mut sample = cfg.clone();
            sample.scheme = Some(SchemeSpec::Name(scheme.clone()));
            let resolved = sample.resolve(&ORDER_STUDY_DEFAULTS)?;
            let path = cli.out.join("order.csv");
            write_order_csv(&path, &resolved, &scheme, &rows)?;
            for row in &rows {
                match &row.outcome {
                    Ok(e) => println!(
                        "N = {:>4}: err_rho_l1 = {:.3e}, err_p_l1 = {:.3e}",
                        row.n_steps, e.err_rho_l1, e.err_p_l1
                    ),
                    Err(msg) => println!("N = {:>4}: failed ({msg})", row.n_steps),
                }
            }
            println!("table written to {}", path.display());
            Ok(())
        }
        Command::Benchmark { sweep, schemes } => {
            apply_sweep(&mut cfg, sweep);
            let schemes = schemes
                .clone()
                .unwrap_or_else(|| vec!["GSA342".to_string(), "SSP2332".to_string()]);
            let eps_list = cfg
                .eps_list
                .clone()
                .unwrap_or_else(|| vec![0.0, 0.1, 0.5, 0.8, 1.0]);
            let rows = run_benchmark(&cfg, &schemes, &eps_list, workers, Some(&cli.out))?;
            let resolved = cfg.resolve(&BENCHMARK_DEFAULTS)?;
            let path = cli.out.join("benchmark.csv");
            write_benchmark_csv(&path, &resolved, &rows)?;
            for row in &rows {
                println!(
                    "{} eps = {:>4}: J = {:.4e} ({})",
                    row.scheme, row.eps, row.j_star, row.status
                );
            }
            println!("table written to {}", path.display());
            Ok(())
        }
        Command::CeVerify { sweep } => {
            apply_sweep(&mut cfg, sweep);
            let eps_list = cfg
                .eps_list
                .clone()
                .unwrap_or_else(|| (0..6).map(|k| 0.05 / 2f64.powi(k)).collect());
            let rows = run_ce_verify(&cfg, &eps_list)?;
            let resolved = cfg.resolve(&BENCHMARK_DEFAULTS)?;
            let path = cli.out.join("ce_verify.csv");
            write_ce_csv(&path, &resolved, &rows)?;
            for row in &rows {
                println!(
                    "eps = {:.4e}: residual = {:.4e}{}",
                    row.eps,
                    row.residual,
                    row.observed_rate
                        .map(|r| format!(", rate = {r:.3}"))
                        .unwrap_or_default()
                );
            }
            println!("table written to {}", path.display());
            Ok(())
        }
    }
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
