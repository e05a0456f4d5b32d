//! Objective, reduced gradient, box projection and the projected-gradient
//! optimization loop.
//!
//! The reduced objective is evaluated on the trajectory induced by the
//! control,
//!
//! ```text
//! J(u) = dx/2 sum_i (rho^N_i - rho_d(x_i))^2 + dt nu/2 sum_n u_n^2 ,
//! ```
//!
//! and its exact gradient is `dt nu u_n` plus the boundary sensitivity that
//! the transposed backward sweep accumulates per step. The optimizer is a
//! monotone projected-gradient method: the trial step starts from the
//! previous accepted step (spectral/Barzilai-Borwein length, clamped), then
//! Armijo backtracking with `c = 1e-4` and halving on the projected arc. It
//! stops when the stationarity measure
//!
//! ```text
//! sqrt(dt) || u - proj_box(u - grad J) ||_2  <=  tol  (default 1e-6)
//! ```
//!
//! is met, or at the iteration cap (reported as `converged = false`, not an
//! error). A trial state that leaves the finite range (an unstable scheme
//! configuration) is treated as a rejected trial; if even the initial guess
//! is unstable the run is flagged.

use crate::adjoint::{solve_adjoint, AdjointTrajectory};
use crate::error::{Error, Result};
use crate::forward::{solve_forward, ControlSource, ForwardTrajectory, ProblemConfig, ProblemData};
use crate::grid::Field;

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITERS: usize = 10_000;
pub const ARMIJO_C: f64 = 1e-4;
const ALPHA_MIN: f64 = 1e-12;
const ALPHA_MAX: f64 = 1e12;
const MAX_BACKTRACKS: usize = 60;

/// A control vector with its box bounds.
#[derive(Debug, Clone)]
pub struct Control {
    pub u: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

impl Control {
    pub fn clamped(mut self) -> Result<Self> {
        self.u = project_box(&self.u, self.lo, self.hi)?;
        Ok(self)
    }
}

/// Discrete objective on a computed trajectory.
pub fn objective(
    traj: &ForwardTrajectory,
    u: &[f64],
    cfg: &ProblemConfig,
    rho_d: &Field,
) -> Result<f64> {
    let m = cfg.grid.cells();
    if rho_d.len() != m {
        return Err(Error::GridMismatch {
            expected: m,
            got: rho_d.len(),
        });
    }
    if u.len() != cfg.n_steps {
        return Err(Error::ControlLength {
            expected: cfg.n_steps,
            got: u.len(),
        });
    }
    let terminal = traj.terminal_rho();
    if terminal.len() != m {
        return Err(Error::GridMismatch {
            expected: m,
            got: terminal.len(),
        });
    }
    let dx = cfg.grid.dx();
    let tracking: f64 = terminal
        .iter()
        .zip(rho_d.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let penalty: f64 = u.iter().map(|v| v * v).sum();
    Ok(0.5 * dx * tracking + 0.5 * cfg.nu * cfg.dt() * penalty)
}

/// Gradient of the discrete objective with respect to the per-step control:
/// `dt nu u_n` plus the adjoint boundary sensitivity of step `n`.
pub fn reduced_gradient(
    cfg: &ProblemConfig,
    u: &[f64],
    adj: &AdjointTrajectory,
) -> Result<Vec<f64>> {
    if adj.fingerprint != cfg.fingerprint() {
        return Err(Error::StaleAdjoint(format!(
            "adjoint computed for {}, gradient requested for {}",
            adj.fingerprint,
            cfg.fingerprint()
        )));
    }
    if u.len() != cfg.n_steps || adj.boundary_sens.len() != cfg.n_steps {
        return Err(Error::ControlLength {
            expected: cfg.n_steps,
            got: u.len(),
        });
    }
    let dtnu = cfg.dt() * cfg.nu;
    Ok(u.iter()
        .zip(&adj.boundary_sens)
        .map(|(ui, si)| dtnu * ui + si)
        .collect())
}

/// Componentwise clamp onto `[lo, hi]`; idempotent.
pub fn project_box(v: &[f64], lo: f64, hi: f64) -> Result<Vec<f64>> {
    if lo > hi {
        return Err(Error::Config(format!("inverted box bounds [{lo}, {hi}]")));
    }
    Ok(v.iter().map(|x| x.clamp(lo, hi)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizeStatus {
    Converged,
    IterationCap,
    LineSearchStalled,
    Unstable,
}

/// One optimizer iteration for the trace table.
#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub iter: usize,
    pub j: f64,
    pub stationarity: f64,
    /// Step length accepted by the line search to reach this iterate
    /// (zero for the starting point).
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizeReport {
    pub u_star: Vec<f64>,
    pub j_star: f64,
    pub iterations: usize,
    pub grad_norm_history: Vec<f64>,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    pub status: OptimizeStatus,
}

#[derive(Debug, Clone, Copy)]
pub struct OptimizeOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

struct Evaluated {
    j: f64,
    traj: ForwardTrajectory,
}

fn eval(cfg: &ProblemConfig, data: &ProblemData, u: &[f64]) -> Result<Option<Evaluated>> {
    match solve_forward(cfg, &data.rho0, &data.j0, &ControlSource::PerStep(u), false) {
        Ok(traj) => {
            let j = objective(&traj, u, cfg, &data.rho_d)?;
            if j.is_finite() {
                Ok(Some(Evaluated { j, traj }))
            } else {
                Ok(None)
            }
        }
        Err(Error::NonFinite { .. }) | Err(Error::AtStep { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn gradient_at(
    cfg: &ProblemConfig,
    data: &ProblemData,
    u: &[f64],
    traj: &ForwardTrajectory,
) -> Result<Vec<f64>> {
    let adj = solve_adjoint(cfg, traj.terminal_rho(), &data.rho_d, false)?;
    reduced_gradient(cfg, u, &adj)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn stationarity(cfg: &ProblemConfig, u: &[f64], grad: &[f64]) -> Result<f64> {
    let moved = project_box(
        &u.iter().zip(grad).map(|(ui, gi)| ui - gi).collect::<Vec<_>>(),
        cfg.u_lo,
        cfg.u_hi,
    )?;
    let sq: f64 = u
        .iter()
        .zip(&moved)
        .map(|(ui, mi)| (ui - mi) * (ui - mi))
        .sum();
    Ok(cfg.dt().sqrt() * sq.sqrt())
}

/// Projected-gradient minimization of the reduced objective.
pub fn optimize(
    cfg: &ProblemConfig,
    data: &ProblemData,
    u0: &[f64],
    opts: OptimizeOptions,
) -> Result<OptimizeReport> {
    cfg.validate()?;
    if u0.len() != cfg.n_steps {
        return Err(Error::ControlLength {
            expected: cfg.n_steps,
            got: u0.len(),
        });
    }
    let mut u = project_box(u0, cfg.u_lo, cfg.u_hi)?;
    let mut history = Vec::new();
    let mut trace = Vec::new();

    let Some(mut cur) = eval(cfg, data, &u)? else {
        return Ok(OptimizeReport {
            u_star: u,
            j_star: f64::NAN,
            iterations: 0,
            grad_norm_history: history,
            trace,
            converged: false,
            status: OptimizeStatus::Unstable,
        });
    };
    let mut grad = gradient_at(cfg, data, &u, &cur.traj)?;
    let mut alpha = 1.0;
    let mut last_step = 0.0;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None; // (du, dgrad)

    for iter in 0..opts.max_iters {
        let stat = stationarity(cfg, &u, &grad)?;
        history.push(stat);
        trace.push(TraceRow {
            iter,
            j: cur.j,
            stationarity: stat,
            step: last_step,
        });
        if stat <= opts.tol {
            return Ok(OptimizeReport {
                u_star: u,
                j_star: cur.j,
                iterations: iter,
                grad_norm_history: history,
                trace,
                converged: true,
                status: OptimizeStatus::Converged,
            });
        }

        // Spectral step length from the previous accepted move.
        if let Some((du, dg)) = &prev {
            let sy = dot(du, dg);
            alpha = if sy > 0.0 {
                (dot(du, du) / sy).clamp(ALPHA_MIN, ALPHA_MAX)
            } else {
                ALPHA_MAX
            };
        }

        let mut step = alpha;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> = u.iter().zip(&grad).map(|(ui, gi)| ui - step * gi).collect();
            let cand = project_box(&trial, cfg.u_lo, cfg.u_hi)?;
            let dir: Vec<f64> = cand.iter().zip(&u).map(|(c, ui)| c - ui).collect();
            let decrease = dot(&grad, &dir);
            let moved = dir.iter().any(|d| *d != 0.0);
            if moved {
                if let Some(next) = eval(cfg, data, &cand)? {
                    if next.j <= cur.j + ARMIJO_C * decrease {
                        accepted = Some((cand, dir, next));
                        break;
                    }
                }
            }
            step *= 0.5;
        }

        let Some((cand, du, next)) = accepted else {
            return Ok(OptimizeReport {
                u_star: u,
                j_star: cur.j,
                iterations: iter,
                grad_norm_history: history,
                trace,
                converged: false,
                status: OptimizeStatus::LineSearchStalled,
            });
        };

        let next_grad = gradient_at(cfg, data, &cand, &next.traj)?;
        let dg: Vec<f64> = next_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        prev = Some((du, dg));
        alpha = (2.0 * step).clamp(ALPHA_MIN, ALPHA_MAX);
        last_step = step;
        u = cand;
        cur = next;
        grad = next_grad;
    }

    let stat = stationarity(cfg, &u, &grad)?;
    history.push(stat);
    trace.push(TraceRow {
        iter: opts.max_iters,
        j: cur.j,
        stationarity: stat,
        step: last_step,
    });
    Ok(OptimizeReport {
        u_star: u,
        j_star: cur.j,
        iterations: opts.max_iters,
        grad_norm_history: history,
        trace,
        converged: stat <= opts.tol,
        status: if stat <= opts.tol {
            OptimizeStatus::Converged
        } else {
            OptimizeStatus::IterationCap
        },
    })
}
