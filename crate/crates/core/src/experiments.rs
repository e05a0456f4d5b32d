//! Experiment drivers: forward runs, optimization runs, the temporal order
//! study, the boundary-control benchmark, and the flux-cancellation check.
//!
//! Sweep rows (distinct `N` or `eps`) run concurrently on a rayon pool; each
//! row's solve chain is sequential and rows never share mutable state, so
//! outputs are deterministic. A failing row is reported in its table and the
//! remaining rows still run.

use std::path::Path;

use rayon::prelude::*;

use crate::adjoint::solve_adjoint;
use crate::config::{DataPreset, Defaults, RunConfig, BENCHMARK_DEFAULTS, ORDER_STUDY_DEFAULTS};
use crate::control::{objective, optimize, OptimizeOptions, OptimizeReport};
use crate::error::{Error, Result};
use crate::forward::{solve_forward, ControlSource, ForwardTrajectory, ProblemConfig, ProblemData};
use crate::grid::Field;
use crate::relaxation::verify_flux_cancellation;
use crate::report::{provenance, sci, write_atomic, write_csv};

/// Exact boundary control of the manufactured diffusion-limit problem
/// `rho(x, t) = exp(-t) cos x` on the unit interval.
pub fn exact_control(t: f64) -> f64 {
    (-t).exp() * (1f64.cos() - 1f64.sin())
}

pub fn exact_rho(x: f64, t: f64) -> f64 {
    (-t).exp() * x.cos()
}

/// Builds the initial/target data of a preset on the configured grid.
pub fn preset_data(preset: DataPreset, cfg: &ProblemConfig) -> ProblemData {
    let m = cfg.grid.cells();
    match preset {
        DataPreset::HeatCosine => ProblemData {
            rho0: Field::from_fn(&cfg.grid, |x| exact_rho(x, 0.0)),
            j0: Field::zeros(m),
            rho_d: Field::from_fn(&cfg.grid, |x| exact_rho(x, cfg.t_final)),
        },
        DataPreset::Benchmark => ProblemData {
            rho0: Field::zeros(m),
            j0: Field::zeros(m),
            rho_d: Field::from_fn(&cfg.grid, |x| 0.5 * (1.0 - x * x)),
        },
    }
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))
}

// ---------------------------------------------------------------------------
// Order study
// ---------------------------------------------------------------------------

/// Errors of one order-study row: the time maximum of the spatial norms of
/// the state error against the exact solution, and of the backward
/// multiplier (whose exact counterpart vanishes).
#[derive(Debug, Clone, Copy)]
pub struct OrderErrors {
    pub err_rho_l1: f64,
    pub err_rho_linf: f64,
    pub err_p_l1: f64,
    pub err_p_linf: f64,
}

impl OrderErrors {
    pub fn as_array(&self) -> [f64; 4] {
        [
            self.err_rho_l1,
            self.err_rho_linf,
            self.err_p_l1,
            self.err_p_linf,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct OrderRow {
    pub n_steps: usize,
    pub outcome: std::result::Result<OrderErrors, String>,
}

/// Runs one row of the order study: `N` steps, `M = N` cells (`dx = dt`),
/// exact control sampled at the stage abscissae, diffusion limit.
pub fn order_row(run: &RunConfig, scheme: &str, n: usize) -> Result<OrderErrors> {
    let mut run = run.clone();
    run.n_steps = Some(n);
    run.cells = Some(n);
    run.scheme = Some(crate::config::SchemeSpec::Name(scheme.to_string()));
    let defaults = Defaults {
        scheme: "GSA342",
        ..ORDER_STUDY_DEFAULTS
    };
    let cfg = run.resolve(&defaults)?;
    let data = preset_data(DataPreset::HeatCosine, &cfg);

    let f = exact_control;
    let traj = solve_forward(&cfg, &data.rho0, &data.j0, &ControlSource::Analytic(&f), false)?;

    let dx = cfg.grid.dx();
    let mut err_rho_l1 = 0.0f64;
    let mut err_rho_linf = 0.0f64;
    for (k, rho) in traj.rho.iter().enumerate() {
        let t = k as f64 * cfg.dt();
        let diff: Vec<f64> = (0..cfg.grid.cells())
            .map(|i| rho[i] - exact_rho(cfg.grid.center(i), t))
            .collect();
        let l1 = dx * diff.iter().map(|v| v.abs()).sum::<f64>();
        let linf = diff.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        err_rho_l1 = err_rho_l1.max(l1);
        err_rho_linf = err_rho_linf.max(linf);
    }

    let adj = solve_adjoint(&cfg, traj.terminal_rho(), &data.rho_d, false)?;
    let mut err_p_l1 = 0.0f64;
    let mut err_p_linf = 0.0f64;
    for p in &adj.p {
        err_p_l1 = err_p_l1.max(p.norm_l1(dx));
        err_p_linf = err_p_linf.max(p.norm_linf());
    }

    Ok(OrderErrors {
        err_rho_l1,
        err_rho_linf,
        err_p_l1,
        err_p_linf,
    })
}

pub fn run_order_study(
    run: &RunConfig,
    scheme: &str,
    n_list: &[usize],
    workers: Option<usize>,
) -> Result<Vec<OrderRow>> {
    let pool = pool(workers)?;
    let rows: Vec<OrderRow> = pool.install(|| {
        n_list
            .par_iter()
            .map(|&n| OrderRow {
                n_steps: n,
                outcome: order_row(run, scheme, n).map_err(|e| e.to_string()),
            })
            .collect()
    });
    Ok(rows)
}

/// `log2(err_{k-1} / err_k)` between consecutive successful rows.
pub fn order_rates(rows: &[OrderRow]) -> Vec<[Option<f64>; 4]> {
    let mut rates = vec![[None; 4]; rows.len()];
    for k in 1..rows.len() {
        if let (Ok(prev), Ok(cur)) = (&rows[k - 1].outcome, &rows[k].outcome) {
            let p = prev.as_array();
            let c = cur.as_array();
            for (slot, (pv, cv)) in rates[k].iter_mut().zip(p.iter().zip(c.iter())) {
                *slot = Some((pv / cv).log2());
            }
        }
    }
    rates
}

pub fn write_order_csv(
    path: &Path,
    cfg: &ProblemConfig,
    scheme: &str,
    rows: &[OrderRow],
) -> Result<()> {
    let rates = order_rates(rows);
    let block = provenance(
        cfg,
        &[
            ("experiment", "order-study".to_string()),
            ("scheme", scheme.to_string()),
            ("protocol", "cells = n_steps, exact boundary control".to_string()),
        ],
    );
    let header = "n_steps,err_rho_l1,rate_rho_l1,err_rho_linf,rate_rho_linf,err_p_l1,rate_p_l1,err_p_linf,rate_p_linf,status";
    let fmt_rate = |r: Option<f64>| r.map(|v| format!("{v:.4}")).unwrap_or_default();
    let lines: Vec<String> = rows
        .iter()
        .zip(&rates)
        .map(|(row, rate)| match &row.outcome {
            Ok(e) => format!(
                "{},{},{},{},{},{},{},{},{},ok",
                row.n_steps,
                sci(e.err_rho_l1),
                fmt_rate(rate[0]),
                sci(e.err_rho_linf),
                fmt_rate(rate[1]),
                sci(e.err_p_l1),
                fmt_rate(rate[2]),
                sci(e.err_p_linf),
                fmt_rate(rate[3]),
            ),
            Err(msg) => format!(
                "{},,,,,,,,,\"error: {}\"",
                row.n_steps,
                msg.replace('"', "'")
            ),
        })
        .collect();
    write_csv(path, &block, header, &lines)
}

// ---------------------------------------------------------------------------
// Benchmark
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BenchmarkRow {
    pub scheme: String,
    pub eps: f64,
    pub j_star: f64,
    pub iterations: usize,
    pub final_stationarity: f64,
    pub converged: bool,
    pub status: String,
}

/// One optimization run of the benchmark problem at a given `(scheme, eps)`.
pub fn benchmark_cell(
    run: &RunConfig,
    scheme: &str,
    eps: f64,
) -> Result<(ProblemConfig, ProblemData, OptimizeReport)> {
    let mut run = run.clone();
    run.scheme = Some(crate::config::SchemeSpec::Name(scheme.to_string()));
    run.eps = Some(eps);
    // The non-globally-stiffly-accurate pair is run with the finer step
    // count unless the file pins one.
    if run.n_steps.is_none() && scheme.eq_ignore_ascii_case("SSP2332") {
        run.n_steps = Some(200);
    }
    let cfg = run.resolve(&BENCHMARK_DEFAULTS)?;
    let data = preset_data(run.data.unwrap_or(DataPreset::Benchmark), &cfg);
    let u0 = vec![0.0; cfg.n_steps];
    let opts = OptimizeOptions {
        tol: run.tol.unwrap_or(crate::control::DEFAULT_TOL),
        max_iters: run.max_iters.unwrap_or(crate::control::DEFAULT_MAX_ITERS),
    };
    let report = optimize(&cfg, &data, &u0, opts)?;
    Ok((cfg, data, report))
}

pub fn run_benchmark(
    run: &RunConfig,
    schemes: &[String],
    eps_list: &[f64],
    workers: Option<usize>,
    out_dir: Option<&Path>,
) -> Result<Vec<BenchmarkRow>> {
    let cells: Vec<(String, f64)> = schemes
        .iter()
        .flat_map(|s| eps_list.iter().map(move |&e| (s.clone(), e)))
        .collect();
    let pool = pool(workers)?;
    let rows: Vec<BenchmarkRow> = pool.install(|| {
        cells
            .par_iter()
            .map(|(scheme, eps)| match benchmark_cell(run, scheme, *eps) {
                Ok((cfg, data, report)) => {
                    if let Some(dir) = out_dir {
                        // Solution dumps behind the optimal control.
                        let _ = dump_benchmark_solution(dir, &cfg, &data, scheme, *eps, &report);
                    }
                    BenchmarkRow {
                        scheme: scheme.clone(),
                        eps: *eps,
                        j_star: report.j_star,
                        iterations: report.iterations,
                        final_stationarity: report.grad_norm_history.last().copied().unwrap_or(f64::NAN),
                        converged: report.converged,
                        status: format!("{:?}", report.status),
                    }
                }
                Err(e) => BenchmarkRow {
                    scheme: scheme.clone(),
                    eps: *eps,
                    j_star: f64::NAN,
                    iterations: 0,
                    final_stationarity: f64::NAN,
                    converged: false,
                    status: format!("error: {e}"),
                },
            })
            .collect()
    });
    Ok(rows)
}

fn eps_tag(eps: f64) -> String {
    format!("{eps}").replace('.', "p")
}

fn dump_benchmark_solution(
    dir: &Path,
    cfg: &ProblemConfig,
    data: &ProblemData,
    scheme: &str,
    eps: f64,
    report: &OptimizeReport,
) -> Result<()> {
    let u = &report.u_star;
    let traj = solve_forward(cfg, &data.rho0, &data.j0, &ControlSource::PerStep(u), false)?;
    let block = provenance(
        cfg,
        &[
            ("experiment", "benchmark".to_string()),
            ("j_star", sci(report.j_star)),
            ("converged", report.converged.to_string()),
        ],
    );

    let control_rows: Vec<String> = u
        .iter()
        .enumerate()
        .map(|(n, v)| format!("{n},{},{}", sci(n as f64 * cfg.dt()), sci(*v)))
        .collect();
    write_csv(
        &dir.join(format!("control_{scheme}_eps{}.csv", eps_tag(eps))),
        &block,
        "n,t,u",
        &control_rows,
    )?;

    let terminal = traj.terminal_rho();
    let state_rows: Vec<String> = (0..cfg.grid.cells())
        .map(|i| {
            let x = cfg.grid.center(i);
            format!(
                "{},{},{}",
                sci(x),
                sci(terminal[i]),
                sci(terminal[i] - data.rho_d[i])
            )
        })
        .collect();
    write_csv(
        &dir.join(format!("state_{scheme}_eps{}.csv", eps_tag(eps))),
        &block,
        "x,rho_T,rho_T_minus_rho_d",
        &state_rows,
    )?;
    Ok(())
}

pub fn write_benchmark_csv(path: &Path, cfg: &ProblemConfig, rows: &[BenchmarkRow]) -> Result<()> {
    let block = provenance(cfg, &[("experiment", "benchmark".to_string())]);
    let header = "scheme,eps,j_star,iterations,final_stationarity,converged,status";
    let lines: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},\"{}\"",
                r.scheme,
                sci(r.eps),
                sci(r.j_star),
                r.iterations,
                sci(r.final_stationarity),
                r.converged,
                r.status.replace('"', "'")
            )
        })
        .collect();
    write_csv(path, &block, header, &lines)
}

// ---------------------------------------------------------------------------
// Flux-cancellation verification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct CancellationRow {
    pub eps: f64,
    pub residual: f64,
    pub observed_rate: Option<f64>,
}

pub fn run_ce_verify(run: &RunConfig, eps_list: &[f64]) -> Result<Vec<CancellationRow>> {
    let defaults = Defaults {
        // One large step against eps^2: the residual prefactor must sit in
        // its quadratic regime across the sweep.
        t_final: 0.2,
        n_steps: 1,
        nu: 0.0,
        ..BENCHMARK_DEFAULTS
    };
    let mut run = run.clone();
    // eps of the base configuration is irrelevant; each row overrides it.
    run.eps = Some(0.5);
    let cfg = run.resolve(&defaults)?;
    let rho0 = Field::from_fn(&cfg.grid, |x| x.cos());
    let j0 = Field::zeros(cfg.grid.cells());
    let residuals = verify_flux_cancellation(&cfg, &rho0, &j0, eps_list)?;
    let mut rows = Vec::with_capacity(residuals.len());
    for (k, (&eps, &res)) in eps_list.iter().zip(&residuals).enumerate() {
        let rate = if k > 0 {
            let ratio = eps_list[k - 1] / eps;
            Some((residuals[k - 1] / res).log2() / ratio.log2())
        } else {
            None
        };
        rows.push(CancellationRow {
            eps,
            residual: res,
            observed_rate: rate,
        });
    }
    Ok(rows)
}

pub fn write_ce_csv(path: &Path, cfg: &ProblemConfig, rows: &[CancellationRow]) -> Result<()> {
    let block = provenance(cfg, &[("experiment", "ce-verify".to_string())]);
    let lines: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{}",
                sci(r.eps),
                sci(r.residual),
                r.observed_rate.map(|v| format!("{v:.4}")).unwrap_or_default()
            )
        })
        .collect();
    write_csv(path, &block, "eps,residual,observed_rate", &lines)
}

// ---------------------------------------------------------------------------
// Plain forward / optimize runs
// ---------------------------------------------------------------------------

pub fn write_state_csv(path: &Path, cfg: &ProblemConfig, traj: &ForwardTrajectory) -> Result<()> {
    let block = provenance(cfg, &[("experiment", "forward".to_string())]);
    let mut rows = Vec::with_capacity(traj.rho.len() * cfg.grid.cells());
    for (n, (rho, j)) in traj.rho.iter().zip(&traj.j).enumerate() {
        let t = n as f64 * cfg.dt();
        for i in 0..cfg.grid.cells() {
            rows.push(format!(
                "{n},{},{},{},{}",
                sci(t),
                sci(cfg.grid.center(i)),
                sci(rho[i]),
                sci(j[i])
            ));
        }
    }
    write_csv(path, &block, "n,t,x,rho,j", &rows)
}

/// Stage multipliers of every backward step, one row per
/// (step, stage, cell).
pub fn write_adjoint_stage_csv(
    path: &Path,
    cfg: &ProblemConfig,
    adj: &crate::adjoint::AdjointTrajectory,
) -> Result<()> {
    let block = provenance(cfg, &[("experiment", "adjoint-stages".to_string())]);
    let stages = adj.stages.as_ref().ok_or_else(|| {
        Error::Config("adjoint trajectory was solved without stage records".into())
    })?;
    let mut rows = Vec::new();
    for (n, record) in stages.iter().enumerate() {
        for l in 0..record.p.len() {
            for i in 0..cfg.grid.cells() {
                rows.push(format!(
                    "{n},{l},{},{},{}",
                    sci(cfg.grid.center(i)),
                    sci(record.p[l][i]),
                    sci(record.q[l][i])
                ));
            }
        }
    }
    write_csv(path, &block, "n,stage,x,p_stage,q_stage", &rows)
}

pub fn write_adjoint_csv(
    path: &Path,
    cfg: &ProblemConfig,
    adj: &crate::adjoint::AdjointTrajectory,
) -> Result<()> {
    let block = provenance(cfg, &[("experiment", "adjoint".to_string())]);
    let mut rows = Vec::with_capacity(adj.p.len() * cfg.grid.cells());
    for (n, (p, q)) in adj.p.iter().zip(&adj.q).enumerate() {
        let t = n as f64 * cfg.dt();
        for i in 0..cfg.grid.cells() {
            rows.push(format!(
                "{n},{},{},{},{}",
                sci(t),
                sci(cfg.grid.center(i)),
                sci(p[i]),
                sci(q[i])
            ));
        }
    }
    write_csv(path, &block, "n,t,x,p,q", &rows)
}

/// Forward experiment: integrate under the configured control (defaults to
/// zero) and dump the state history.
pub fn run_forward_experiment(run: &RunConfig, out_dir: &Path) -> Result<ProblemConfig> {
    let cfg = run.resolve(&BENCHMARK_DEFAULTS)?;
    let data = preset_data(run.data.unwrap_or(DataPreset::Benchmark), &cfg);
    let zero;
    let u: &[f64] = match &run.control {
        Some(u) => u,
        None => {
            zero = vec![0.0; cfg.n_steps];
            &zero
        }
    };
    let traj = solve_forward(&cfg, &data.rho0, &data.j0, &ControlSource::PerStep(u), false)?;
    write_state_csv(&out_dir.join("state.csv"), &cfg, &traj)?;
    Ok(cfg)
}

/// Optimization experiment: minimize, then dump control, optimized state,
/// adjoint and a summary.
pub fn run_optimize_experiment(run: &RunConfig, out_dir: &Path) -> Result<OptimizeReport> {
    let cfg = run.resolve(&BENCHMARK_DEFAULTS)?;
    let data = preset_data(run.data.unwrap_or(DataPreset::Benchmark), &cfg);
    let u0 = vec![0.0; cfg.n_steps];
    let opts = OptimizeOptions {
        tol: run.tol.unwrap_or(crate::control::DEFAULT_TOL),
        max_iters: run.max_iters.unwrap_or(crate::control::DEFAULT_MAX_ITERS),
    };
    let report = optimize(&cfg, &data, &u0, opts)?;

    let block = provenance(
        &cfg,
        &[
            ("experiment", "optimize".to_string()),
            ("j_star", sci(report.j_star)),
            ("iterations", report.iterations.to_string()),
            ("converged", report.converged.to_string()),
        ],
    );
    let control_rows: Vec<String> = report
        .u_star
        .iter()
        .enumerate()
        .map(|(n, v)| format!("{n},{},{}", sci(n as f64 * cfg.dt()), sci(*v)))
        .collect();
    write_csv(&out_dir.join("control.csv"), &block, "n,t,u", &control_rows)?;

    let traj = solve_forward(
        &cfg,
        &data.rho0,
        &data.j0,
        &ControlSource::PerStep(&report.u_star),
        false,
    )?;
    write_state_csv(&out_dir.join("state.csv"), &cfg, &traj)?;
    let adj = solve_adjoint(&cfg, traj.terminal_rho(), &data.rho_d, false)?;
    write_adjoint_csv(&out_dir.join("adjoint.csv"), &cfg, &adj)?;

    let trace_rows: Vec<String> = report
        .trace
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{}",
                r.iter,
                sci(r.j),
                sci(r.stationarity),
                sci(r.step)
            )
        })
        .collect();
    write_csv(
        &out_dir.join("optimizer_trace.csv"),
        &block,
        "iter,J,grad_norm,step_size",
        &trace_rows,
    )?;

    if run.dump_stages.unwrap_or(false) {
        let adj_with_stages = solve_adjoint(&cfg, traj.terminal_rho(), &data.rho_d, true)?;
        write_adjoint_stage_csv(&out_dir.join("adjoint_stages.csv"), &cfg, &adj_with_stages)?;
    }

    let j_check = objective(&traj, &report.u_star, &cfg, &data.rho_d)?;
    let summary = format!(
        "{block}# ---\nJ_star = {}\nJ_recomputed = {}\niterations = {}\nconverged = {}\nstatus = {:?}\n",
        sci(report.j_star),
        sci(j_check),
        report.iterations,
        report.converged,
        report.status
    );
    write_atomic(&out_dir.join("summary.txt"), &summary)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_rows_show_second_order() {
        let run = RunConfig::default();
        let rows = run_order_study(&run, "GSA342", &[20, 40], Some(2)).unwrap();
        assert_eq!(rows.len(), 2);
        let rates = order_rates(&rows);
        for r in rates[1].iter().flatten() {
            assert!((1.6..=2.4).contains(r), "rate {r}");
        }
    }

    #[test]
    fn cancellation_rows_have_rates() {
        let run = RunConfig::default();
        let rows = run_ce_verify(&run, &[0.05, 0.025, 0.0125]).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows[0].observed_rate.is_none());
        for r in &rows[1..] {
            let rate = r.observed_rate.unwrap();
            assert!((1.8..=2.2).contains(&rate), "rate {rate}");
        }
    }

    #[test]
    fn benchmark_row_reports_failures_without_abort() {
        // eps just below the non-type-A floor is fine for the registry
        // schemes, so instead drive a failure with an invalid cell count.
        let mut run = RunConfig::default();
        run.cells = Some(1);
        let rows = run_benchmark(&run, &["GSA342".to_string()], &[0.0], Some(1), None).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(!rows[0].converged);
        assert!(rows[0].status.starts_with("error:"));
    }

    #[test]
    fn forward_experiment_writes_state() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = RunConfig::default();
        run.n_steps = Some(5);
        run.cells = Some(10);
        run.t_final = Some(0.05);
        run_forward_experiment(&run, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("state.csv")).unwrap();
        assert!(text.contains("n,t,x,rho,j"));
        // (N + 1) * cells data lines
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1 + 6 * 10);
    }
}
