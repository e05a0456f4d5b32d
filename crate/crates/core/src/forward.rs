//! IMEX time stepping for the state system.
//!
//! One step advances `(rho, j)` through the stage systems
//!
//! ```text
//! R = rho^n e - dt Ae (Dx J + M D2 R) + dt Ai (M D2 R)
//! eps^2 J = eps^2 j^n e - dt Ai (Dx R + J)
//! ```
//!
//! followed by the weight updates; `Ae`/`Ai` are the explicit and implicit
//! coefficient matrices, `M = diag(mu_l)` the stage relaxation weights, and
//! `Dx` the blended first-derivative stencils. Stage `l` costs one
//! tridiagonal solve for `R_l` (the implicit diffusion) and one for `J_l`
//! (the relaxation term plus the implicitly weighted upwind correction,
//! whose blend couples `J_l` to its own second difference).
//!
//! The flux update never divides by `eps^2`: for type A pairs it is written
//! with the weights `w = A^{-T} b`, using that the stage equations give
//! `dt Ai (Dx R + J) = eps^2 (j^n e - J)`, so
//!
//! ```text
//! j^{n+1} = (1 - sum w) j^n + sum_l w_l J_l .
//! ```
//!
//! For stiffly accurate pairs `w = e_s` and this is just the last stage. The
//! same algebra makes the step well defined at `eps = 0`, where the stage
//! flux collapses to `J_l = -Dx R_l`; [`imex_step_limit`] implements that
//! reduction directly on the density alone (the diffusion limit: Robin data
//! at the controlled boundary, diffusion implicit, no parabolic step
//! restriction).
//!
//! The whole step is affine in `(rho^n, j^n, u)`. Boundary data enters only
//! through the ghost closures; each operator evaluation samples the control
//! at its stage abscissa (explicit terms at `c~_l`, implicit ones at `c_l`),
//! which keeps the boundary quadrature second order. A control given as one
//! value per step uses that value for every sample of the step.

use crate::error::{Error, Result};
use crate::grid::{self, ClosureCoeffs, Field, Grid1D};
use crate::relaxation::{RelaxationDiag, RelaxationPolicy};
use crate::tableau::SchemeCoeffs;
use crate::tridiag::solve_tridiag;

/// Threshold below which non-type-A pairs are refused: their stage algebra
/// divides by `eps^2`.
pub const NON_TYPE_A_EPS_FLOOR: f64 = 1e-6;

/// Blending weight selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhiSetting {
    /// Follow the policy `1 - eps^3` with the benchmark overrides.
    Auto,
    Fixed(f64),
}

/// All scalars of one control problem instance.
#[derive(Debug, Clone)]
pub struct ProblemConfig {
    pub scheme: SchemeCoeffs,
    pub grid: Grid1D,
    /// Relaxation parameter in `[0, 1]`; `0` selects the diffusion limit.
    pub eps: f64,
    /// Tikhonov weight on the control.
    pub nu: f64,
    pub t_final: f64,
    pub n_steps: usize,
    pub u_lo: f64,
    pub u_hi: f64,
    pub relaxation: RelaxationPolicy,
    pub phi: PhiSetting,
}

impl ProblemConfig {
    pub fn dt(&self) -> f64 {
        self.t_final / self.n_steps as f64
    }

    pub fn phi_value(&self) -> f64 {
        match self.phi {
            PhiSetting::Auto => grid::phi_policy(self.eps, &self.scheme.name),
            PhiSetting::Fixed(v) => v,
        }
    }

    pub fn with_eps(&self, eps: f64) -> Self {
        let mut cfg = self.clone();
        cfg.eps = eps;
        cfg
    }

    /// Stage relaxation weights under the configured policy.
    pub fn relaxation_weights(&self) -> Result<RelaxationDiag> {
        if self.eps == 0.0 {
            return Ok(RelaxationDiag::identity(self.scheme.s));
        }
        self.relaxation
            .weights(&self.scheme, self.eps, self.dt(), self.grid.dx())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0 && self.eps <= 1.0) {
            return Err(Error::Config(format!("eps = {} outside [0, 1]", self.eps)));
        }
        if self.nu < 0.0 {
            return Err(Error::Config(format!("nu = {} negative", self.nu)));
        }
        if !(self.t_final > 0.0) {
            return Err(Error::Config(format!("t_final = {} not positive", self.t_final)));
        }
        if self.u_lo > self.u_hi {
            return Err(Error::Config(format!(
                "inverted control bounds: [{}, {}]",
                self.u_lo, self.u_hi
            )));
        }
        let phi = self.phi_value();
        if !(0.0..=1.0).contains(&phi) {
            return Err(Error::Config(format!("phi = {phi} outside [0, 1]")));
        }
        if self.eps == 0.0 && phi < 1.0 {
            return Err(Error::DivisionGuard { phi });
        }
        if !self.scheme.class.type_a {
            if self.eps == 0.0 {
                return Err(Error::RequiresIsa(
                    "the stage flux J = -Dx R needs an invertible implicit matrix".into(),
                ));
            }
            if self.eps < NON_TYPE_A_EPS_FLOOR {
                return Err(Error::EpsTooSmall { eps: self.eps });
            }
        }
        Ok(())
    }

    /// Identifies the solve setup; trajectories carry it so that downstream
    /// consumers can detect mismatched pairings.
    pub fn fingerprint(&self) -> String {
        format!(
            "{}:m{}:n{}:eps{:e}:T{:e}:phi{:e}",
            self.scheme.name,
            self.grid.cells(),
            self.n_steps,
            self.eps,
            self.t_final,
            self.phi_value(),
        )
    }
}

/// Initial and target data of a problem instance.
#[derive(Debug, Clone)]
pub struct ProblemData {
    pub rho0: Field,
    pub j0: Field,
    pub rho_d: Field,
}

/// Where the boundary control comes from during a solve.
pub enum ControlSource<'a> {
    /// One value per step, held constant across the step (the optimizer's
    /// parametrization).
    PerStep(&'a [f64]),
    /// A time function, sampled at the stage abscissae. Used by the
    /// manufactured-solution studies.
    Analytic(&'a dyn Fn(f64) -> f64),
}

/// Control samples for one step: per stage, the value seen by the
/// explicitly weighted operators and by the implicitly weighted ones.
#[derive(Debug, Clone)]
pub struct StepSamples {
    pub exp: Vec<f64>,
    pub imp: Vec<f64>,
}

impl ControlSource<'_> {
    pub fn step_samples(&self, cfg: &ProblemConfig, n: usize) -> StepSamples {
        let s = cfg.scheme.s;
        match self {
            ControlSource::PerStep(u) => {
                let v = u[n];
                StepSamples {
                    exp: vec![v; s],
                    imp: vec![v; s],
                }
            }
            ControlSource::Analytic(f) => {
                let t = n as f64 * cfg.dt();
                let dt = cfg.dt();
                StepSamples {
                    exp: (0..s).map(|l| f(t + cfg.scheme.ct[l] * dt)).collect(),
                    imp: (0..s).map(|l| f(t + cfg.scheme.c[l] * dt)).collect(),
                }
            }
        }
    }

    pub fn len_ok(&self, n_steps: usize) -> Result<()> {
        if let ControlSource::PerStep(u) = self {
            if u.len() != n_steps {
                return Err(Error::ControlLength {
                    expected: n_steps,
                    got: u.len(),
                });
            }
        }
        Ok(())
    }
}

/// Stage fields of one step, retained for diagnostics: the relaxed-flux
/// cancellation check reads `j` and `dxr`, the residual checks everything.
#[derive(Debug, Clone)]
pub struct StageRecord {
    pub r: Vec<Field>,
    pub j: Vec<Field>,
    /// Blended density derivative per stage (implicit-sample ghosts).
    pub dxr: Vec<Field>,
}

/// Complete time history of a forward solve.
#[derive(Debug, Clone)]
pub struct ForwardTrajectory {
    pub rho: Vec<Field>,
    pub j: Vec<Field>,
    pub stages: Option<Vec<StageRecord>>,
    pub fingerprint: String,
}

impl ForwardTrajectory {
    pub fn terminal_rho(&self) -> &Field {
        self.rho.last().expect("trajectory holds at least the initial state")
    }
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Solves `(c0 I - g D2) x = rhs` in place, where `D2` is the second
/// difference closed with the density ghosts (reflection left, homogeneous
/// Robin right); the inhomogeneous ghost parts must already sit in `rhs`.
fn solve_shifted_lap_rho(cl: &ClosureCoeffs, c0: f64, g: f64, rhs: &mut [f64]) -> Result<()> {
    let m = rhs.len();
    let hh = cl.dx * cl.dx;
    let off = -g / hh;
    let sub = vec![off; m - 1];
    let sup = vec![off; m - 1];
    let mut diag = vec![c0 + 2.0 * g / hh; m];
    diag[0] = c0 + g / hh;
    diag[m - 1] = c0 + (2.0 - cl.alpha) * g / hh;
    solve_tridiag(&sub, &diag, &sup, rhs)
}

/// Solves `(c0 I - g D2) x = rhs` with the flux ghosts (odd reflection left,
/// trace closure right); companion terms must already sit in `rhs`.
fn solve_shifted_lap_j(cl: &ClosureCoeffs, c0: f64, g: f64, rhs: &mut [f64]) -> Result<()> {
    let m = rhs.len();
    let hh = cl.dx * cl.dx;
    let off = -g / hh;
    let sub = vec![off; m - 1];
    let sup = vec![off; m - 1];
    let mut diag = vec![c0 + 2.0 * g / hh; m];
    diag[0] = c0 + 3.0 * g / hh;
    diag[m - 1] = c0 + 3.0 * g / hh;
    solve_tridiag(&sub, &diag, &sup, rhs)
}

pub(crate) struct StepContext {
    pub cl: ClosureCoeffs,
    pub dt: f64,
    pub phi: f64,
    pub omega_r: f64,
    pub omega_j: f64,
}

impl StepContext {
    pub fn new(cfg: &ProblemConfig) -> Result<Self> {
        let cl = cfg.grid.closure_coeffs();
        let phi = cfg.phi_value();
        let (omega_r, omega_j) = grid::blend_weights(cfg.eps, phi, cfg.grid.dx())?;
        Ok(StepContext {
            cl,
            dt: cfg.dt(),
            phi,
            omega_r,
            omega_j,
        })
    }
}

/// One IMEX step of the full relaxation system, `eps > 0`.
pub fn imex_step(
    cfg: &ProblemConfig,
    mu: &RelaxationDiag,
    rho_n: &Field,
    j_n: &Field,
    samples: &StepSamples,
) -> Result<(Field, Field, StageRecord)> {
    debug_assert!(cfg.eps > 0.0);
    let ctx = StepContext::new(cfg)?;
    let sc = &cfg.scheme;
    let (s, m) = (sc.s, cfg.grid.cells());
    let (dt, eps2) = (ctx.dt, cfg.eps * cfg.eps);
    let hh = ctx.cl.dx * ctx.cl.dx;

    let mut r_st: Vec<Vec<f64>> = Vec::with_capacity(s);
    let mut j_st: Vec<Vec<f64>> = Vec::with_capacity(s);
    let mut dxr_st: Vec<Vec<f64>> = Vec::with_capacity(s);
    let mut lapri_st: Vec<Vec<f64>> = Vec::with_capacity(s);
    let mut g_st: Vec<Vec<f64>> = Vec::with_capacity(s);
    let mut e_st: Vec<Vec<f64>> = Vec::with_capacity(s);

    for l in 0..s {
        let (u_e, u_i) = (samples.exp[l], samples.imp[l]);
        let all = sc.diag(l);

        // Density stage: (I - dt a_ll mu_l D2) R_l = rho^n + accumulated
        // explicit and implicit stage terms.
        let mut rr = rho_n.values.clone();
        for k in 0..l {
            axpy(-dt * sc.at[l][k], &e_st[k], &mut rr);
            axpy(dt * sc.a[l][k] * mu.mu[k], &lapri_st[k], &mut rr);
        }
        let g_r = dt * all * mu.mu[l];
        rr[m - 1] += g_r * ctx.cl.beta / hh * u_i;
        solve_shifted_lap_rho(&ctx.cl, 1.0, g_r, &mut rr)?;
        let r_l = rr;

        let lapri = grid::lap_rho(&ctx.cl, &r_l, u_i);
        let dcri = grid::dc_rho(&ctx.cl, &r_l, u_i);

        // Flux stage: (eps^2 + dt a_ll) J_l + implicit upwind correction.
        let mut rj: Vec<f64> = j_n.values.iter().map(|v| eps2 * v).collect();
        for k in 0..l {
            axpy(-dt * sc.a[l][k], &g_st[k], &mut rj);
        }
        axpy(-dt * all, &dcri, &mut rj);
        let gamma = dt * all * ctx.omega_r;
        if gamma != 0.0 {
            rj[m - 1] += gamma * ctx.cl.kappa / hh * (r_l[m - 1] - u_i);
        }
        solve_shifted_lap_j(&ctx.cl, eps2 + dt * all, gamma, &mut rj)?;
        let j_l = rj;

        // Blended density derivative and the relaxed flux of this stage.
        let mut dxr = dcri;
        if ctx.omega_r != 0.0 {
            let lapj = grid::lap_j(&ctx.cl, &j_l, &r_l, u_i);
            axpy(-ctx.omega_r, &lapj, &mut dxr);
        }
        let mut g_vec = dxr.clone();
        axpy(1.0, &j_l, &mut g_vec);

        // Explicit-role evaluation of this stage's flux divergence.
        let lapre = if u_e == u_i {
            lapri.clone()
        } else {
            grid::lap_rho(&ctx.cl, &r_l, u_e)
        };
        let mut e_l = grid::dc_j(&ctx.cl, &j_l, &r_l, u_e);
        axpy(mu.mu[l] - ctx.omega_j, &lapre, &mut e_l);

        r_st.push(r_l);
        j_st.push(j_l);
        dxr_st.push(dxr);
        lapri_st.push(lapri);
        g_st.push(g_vec);
        e_st.push(e_l);
    }

    let mut rho_next = rho_n.values.clone();
    for l in 0..s {
        axpy(-dt * sc.bt[l], &e_st[l], &mut rho_next);
        axpy(dt * sc.b[l] * mu.mu[l], &lapri_st[l], &mut rho_next);
    }

    let mut j_next;
    if let Some(w) = &sc.w {
        let wsum: f64 = w.iter().sum();
        j_next = j_n.values.iter().map(|v| (1.0 - wsum) * v).collect::<Vec<_>>();
        for l in 0..s {
            axpy(w[l], &j_st[l], &mut j_next);
        }
    } else {
        if cfg.eps < NON_TYPE_A_EPS_FLOOR {
            return Err(Error::EpsTooSmall { eps: cfg.eps });
        }
        j_next = j_n.values.clone();
        for l in 0..s {
            axpy(-dt * sc.b[l] / eps2, &g_st[l], &mut j_next);
        }
    }

    let wrap = |v: Vec<Vec<f64>>| v.into_iter().map(|values| Field { values }).collect();
    Ok((
        Field { values: rho_next },
        Field { values: j_next },
        StageRecord {
            r: wrap(r_st),
            j: wrap(j_st),
            dxr: wrap(dxr_st),
        },
    ))
}

/// One step of the diffusion-limit scheme (`eps = 0`, weights all one).
///
/// The stage flux is eliminated, `J_l = -Dx R_l`, leaving one tridiagonal
/// solve per stage for the density with the Robin/Neumann closures active.
pub fn imex_step_limit(
    cfg: &ProblemConfig,
    rho_n: &Field,
    samples: &StepSamples,
) -> Result<(Field, StageRecord)> {
    if !cfg.scheme.class.type_a {
        return Err(Error::RequiresIsa(
            "the stage flux J = -Dx R needs an invertible implicit matrix".into(),
        ));
    }
    let ctx = StepContext::new(cfg)?;
    if ctx.phi < 1.0 {
        return Err(Error::DivisionGuard { phi: ctx.phi });
    }
    let sc = &cfg.scheme;
    let (s, m) = (sc.s, cfg.grid.cells());
    let dt = ctx.dt;
    let hh = ctx.cl.dx * ctx.cl.dx;

    let mut r_st: Vec<Vec<f64>> = Vec::with_capacity(s);
    let mut j_st: Vec<Vec<f64>> = Vec::with_capacity(s);
    let mut dxr_st: Vec<Vec<f64>> = Vec::with_capacity(s);
    let mut lapri_st: Vec<Vec<f64>> = Vec::with_capacity(s);
    let mut e_st: Vec<Vec<f64>> = Vec::with_capacity(s);

    for l in 0..s {
        let (u_e, u_i) = (samples.exp[l], samples.imp[l]);
        let all = sc.diag(l);

        let mut rr = rho_n.values.clone();
        for k in 0..l {
            axpy(-dt * sc.at[l][k], &e_st[k], &mut rr);
            axpy(dt * sc.a[l][k], &lapri_st[k], &mut rr);
        }
        let g_r = dt * all;
        rr[m - 1] += g_r * ctx.cl.beta / hh * u_i;
        solve_shifted_lap_rho(&ctx.cl, 1.0, g_r, &mut rr)?;
        let r_l = rr;

        let lapri = grid::lap_rho(&ctx.cl, &r_l, u_i);
        let dcri = grid::dc_rho(&ctx.cl, &r_l, u_i);
        let j_l: Vec<f64> = dcri.iter().map(|v| -v).collect();

        let lapre = if u_e == u_i {
            lapri.clone()
        } else {
            grid::lap_rho(&ctx.cl, &r_l, u_e)
        };
        let mut e_l = grid::dc_j(&ctx.cl, &j_l, &r_l, u_e);
        axpy(1.0, &lapre, &mut e_l);

        r_st.push(r_l);
        j_st.push(j_l);
        dxr_st.push(dcri);
        lapri_st.push(lapri);
        e_st.push(e_l);
    }

    let mut rho_next = rho_n.values.clone();
    for l in 0..s {
        axpy(-dt * sc.bt[l], &e_st[l], &mut rho_next);
        axpy(dt * sc.b[l], &lapri_st[l], &mut rho_next);
    }

    let wrap = |v: Vec<Vec<f64>>| v.into_iter().map(|values| Field { values }).collect();
    Ok((
        Field { values: rho_next },
        StageRecord {
            r: wrap(r_st),
            j: wrap(j_st),
            dxr: wrap(dxr_st),
        },
    ))
}

/// Integrates the full trajectory from `(rho0, j0)` under the given control.
pub fn solve_forward(
    cfg: &ProblemConfig,
    rho0: &Field,
    j0: &Field,
    source: &ControlSource,
    record_stages: bool,
) -> Result<ForwardTrajectory> {
    cfg.validate()?;
    source.len_ok(cfg.n_steps)?;
    let m = cfg.grid.cells();
    if rho0.len() != m || j0.len() != m {
        return Err(Error::GridMismatch {
            expected: m,
            got: rho0.len().max(j0.len()),
        });
    }
    let n = cfg.n_steps;
    if n == 0 {
        return Ok(ForwardTrajectory {
            rho: vec![rho0.clone()],
            j: vec![j0.clone()],
            stages: record_stages.then(Vec::new),
            fingerprint: cfg.fingerprint(),
        });
    }
    let mu = cfg.relaxation_weights()?;
    let limit = cfg.eps == 0.0;
    let w = cfg.scheme.w.clone();

    let mut rho = Vec::with_capacity(n + 1);
    let mut j = Vec::with_capacity(n + 1);
    let mut stages = if record_stages { Some(Vec::with_capacity(n)) } else { None };
    rho.push(rho0.clone());
    j.push(j0.clone());

    for step in 0..n {
        let samples = source.step_samples(cfg, step);
        let (rho_next, j_next, record) = if limit {
            let (rho_next, record) = imex_step_limit(cfg, &rho[step], &samples)
                .map_err(|e| e.at_step(step))?;
            // Diagnostic flux trajectory in the limit: the same weighted
            // stage combination as for eps > 0, which for stiffly accurate
            // pairs is just the last stage flux -Dx R_s.
            let j_next = if let Some(w) = &w {
                let wsum: f64 = w.iter().sum();
                let mut out: Vec<f64> = j[step].values.iter().map(|v| (1.0 - wsum) * v).collect();
                for l in 0..cfg.scheme.s {
                    axpy(w[l], &record.j[l], &mut out);
                }
                Field { values: out }
            } else {
                j[step].clone()
            };
            (rho_next, j_next, record)
        } else {
            imex_step(cfg, &mu, &rho[step], &j[step], &samples).map_err(|e| e.at_step(step))?
        };
        if !rho_next.is_finite() || !j_next.is_finite() {
            return Err(Error::NonFinite {
                context: "state".into(),
                step,
            });
        }
        rho.push(rho_next);
        j.push(j_next);
        if let Some(st) = stages.as_mut() {
            st.push(record);
        }
    }

    Ok(ForwardTrajectory {
        rho,
        j,
        stages,
        fingerprint: cfg.fingerprint(),
    })
}

/// Relative residuals of the stage systems: recomputes both defining
/// equations from the recorded stage fields and returns the worst
/// `||residual||_inf / (1 + ||state||_inf)` over stages, separately for the
/// density and flux equations.
pub fn stage_residuals(
    cfg: &ProblemConfig,
    mu: &RelaxationDiag,
    rho_n: &Field,
    j_n: &Field,
    samples: &StepSamples,
    record: &StageRecord,
) -> Result<(f64, f64)> {
    let ctx = StepContext::new(cfg)?;
    let sc = &cfg.scheme;
    let (s, m) = (sc.s, cfg.grid.cells());
    let (dt, eps2) = (ctx.dt, cfg.eps * cfg.eps);
    let limit = cfg.eps == 0.0;

    let scale = |f: &Field| 1.0 + f.norm_linf();
    let mut worst_r = 0.0f64;
    let mut worst_j = 0.0f64;

    // Reconstruct per-stage operator outputs.
    let mut e_st = Vec::with_capacity(s);
    let mut lapri_st = Vec::with_capacity(s);
    let mut g_st = Vec::with_capacity(s);
    for l in 0..s {
        let (u_e, u_i) = (samples.exp[l], samples.imp[l]);
        let r_l = &record.r[l];
        let j_l = &record.j[l];
        let lapri = grid::lap_rho(&ctx.cl, r_l, u_i);
        let lapre = grid::lap_rho(&ctx.cl, r_l, u_e);
        let mut e_l = grid::dc_j(&ctx.cl, j_l, r_l, u_e);
        let mul = if limit { 1.0 } else { mu.mu[l] };
        axpy(mul - ctx.omega_j, &lapre, &mut e_l);
        let mut dxr = grid::dc_rho(&ctx.cl, r_l, u_i);
        if ctx.omega_r != 0.0 {
            let lapj = grid::lap_j(&ctx.cl, j_l, r_l, u_i);
            axpy(-ctx.omega_r, &lapj, &mut dxr);
        }
        let mut g_vec = dxr;
        axpy(1.0, j_l, &mut g_vec);
        e_st.push(e_l);
        lapri_st.push(lapri);
        g_st.push(g_vec);
    }

    for l in 0..s {
        let (_, u_i) = (samples.exp[l], samples.imp[l]);
        let mul = if limit { 1.0 } else { mu.mu[l] };
        // Density equation residual.
        let mut rhs = rho_n.values.clone();
        for k in 0..l {
            axpy(-dt * sc.at[l][k], &e_st[k], &mut rhs);
            let muk = if limit { 1.0 } else { mu.mu[k] };
            axpy(dt * sc.a[l][k] * muk, &lapri_st[k], &mut rhs);
        }
        axpy(dt * sc.a[l][l] * mul, &lapri_st[l], &mut rhs);
        let mut res = 0.0f64;
        for i in 0..m {
            res = res.max((record.r[l][i] - rhs[i]).abs());
        }
        worst_r = worst_r.max(res / scale(&record.r[l]));
        let _ = u_i;

        // Flux equation residual (in the eps^2-scaled form).
        let mut resj = 0.0f64;
        if limit {
            for i in 0..m {
                resj = resj.max((record.j[l][i] + record.dxr[l][i]).abs());
            }
        } else {
            let mut rhs: Vec<f64> = j_n.values.iter().map(|v| eps2 * v).collect();
            for k in 0..=l {
                axpy(-dt * sc.a[l][k], &g_st[k], &mut rhs);
            }
            for i in 0..m {
                resj = resj.max((eps2 * record.j[l][i] - rhs[i]).abs());
            }
        }
        worst_j = worst_j.max(resj / scale(&record.j[l]));
    }
    Ok((worst_r, worst_j))
}


#[cfg(test)]
mod tests {
    use super::tests_support::*;
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn constant_state_is_steady_for_eps_positive() {
        let mut cfg = base_config("GSA342", 24, 10, 0.5);
        cfg.eps = 0.8;
        let c = 1.7;
        let rho0 = Field { values: vec![c; 24] };
        let j0 = Field::zeros(24);
        let u = vec![c; 10];
        let traj = solve_forward(&cfg, &rho0, &j0, &ControlSource::PerStep(&u), false).unwrap();
        for i in 0..24 {
            assert!((traj.rho[10][i] - c).abs() < 1e-12);
            assert!(traj.j[10][i].abs() < 1e-12);
        }
    }

    #[test]
    fn constant_state_is_steady_in_the_limit() {
        let mut cfg = base_config("SSP2332", 17, 8, 0.4);
        cfg.eps = 0.0;
        let c = -0.6;
        let rho0 = Field { values: vec![c; 17] };
        let j0 = Field::zeros(17);
        let u = vec![c; 8]; // Robin datum of the constant state
        let traj = solve_forward(&cfg, &rho0, &j0, &ControlSource::PerStep(&u), false).unwrap();
        for i in 0..17 {
            assert!((traj.rho[8][i] - c).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_steps_returns_initial_data() {
        let mut cfg = base_config("GSA342", 12, 1, 0.1);
        cfg.n_steps = 0;
        let rho0 = Field::from_fn(&cfg.grid, |x| x.cos());
        let j0 = Field::from_fn(&cfg.grid, |x| x);
        let traj = solve_forward(&cfg, &rho0, &j0, &ControlSource::PerStep(&[]), false).unwrap();
        assert_eq!(traj.rho.len(), 1);
        assert_eq!(traj.rho[0], rho0);
        assert_eq!(traj.j[0], j0);
    }

    #[test]
    fn stage_residuals_vanish() {
        for (name, eps) in [("GSA342", 1.0), ("GSA342", 0.3), ("SSP2332", 0.7), ("GSA342", 0.0)] {
            let mut cfg = base_config(name, 20, 5, 0.25);
            cfg.eps = eps;
            let mu = cfg.relaxation_weights().unwrap();
            let rho0 = Field::from_fn(&cfg.grid, |x| x.cos());
            let j0 = Field::from_fn(&cfg.grid, |x| 0.3 * x);
            let u = [0.2];
            let source = ControlSource::PerStep(&u);
            let samples = source.step_samples(&cfg, 0);
            let (record, rho_used, j_used) = if eps == 0.0 {
                let (_, rec) = imex_step_limit(&cfg, &rho0, &samples).unwrap();
                (rec, rho0.clone(), Field::zeros(20))
            } else {
                let (_, _, rec) = imex_step(&cfg, &mu, &rho0, &j0, &samples).unwrap();
                (rec, rho0.clone(), j0.clone())
            };
            let (res_r, res_j) =
                stage_residuals(&cfg, &mu, &rho_used, &j_used, &samples, &record).unwrap();
            assert!(res_r < 1e-12, "{name} eps={eps}: density residual {res_r}");
            assert!(res_j < 1e-12, "{name} eps={eps}: flux residual {res_j}");
        }
    }

    /// Independent oracle: assemble the full stage system of one step as a
    /// dense 2sm x 2sm linear system over (R_1..R_s, J_1..J_s), solve it by
    /// LU, apply the weight updates, and compare.
    #[test]
    fn one_step_matches_monolithic_dense_assembly() {
        let m = 20usize;
        let mut cfg = base_config("GSA342", m, 4, 0.2);
        cfg.eps = 1.0;
        cfg.phi = PhiSetting::Fixed(0.3);
        let sc = cfg.scheme.clone();
        let s = sc.s;
        let dt = cfg.dt();
        let eps2 = 1.0;
        let u = 0.37;
        let cl = cfg.grid.closure_coeffs();
        let (omega_r, omega_j) = grid::blend_weights(cfg.eps, 0.3, cfg.grid.dx()).unwrap();

        let rho0 = Field::from_fn(&cfg.grid, |x| x.cos());
        let j0 = Field::from_fn(&cfg.grid, |x| 0.1 * (3.0 * x).sin());

        // Dense operator matrices and u-columns obtained by probing the
        // closed stencils with unit vectors.
        let probe2 = |op: &dyn Fn(&[f64], f64) -> Vec<f64>| {
            let mut mat = DMatrix::zeros(m, m);
            let mut ucol = DVector::zeros(m);
            let zero = vec![0.0; m];
            let base = op(&zero, 0.0);
            for col in 0..m {
                let mut e = vec![0.0; m];
                e[col] = 1.0;
                let y = op(&e, 0.0);
                for row in 0..m {
                    mat[(row, col)] = y[row] - base[row];
                }
            }
            let yu = op(&zero, 1.0);
            for row in 0..m {
                ucol[row] = yu[row] - base[row];
            }
            (mat, ucol)
        };
        // dc_j and lap_j act on (j, r, u); probe each slot.
        let probe3 = |op: &dyn Fn(&[f64], &[f64], f64) -> Vec<f64>| {
            let zero = vec![0.0; m];
            let mut mj = DMatrix::zeros(m, m);
            let mut mr = DMatrix::zeros(m, m);
            let mut ucol = DVector::zeros(m);
            for col in 0..m {
                let mut e = vec![0.0; m];
                e[col] = 1.0;
                let yj = op(&e, &zero, 0.0);
                let yr = op(&zero, &e, 0.0);
                for row in 0..m {
                    mj[(row, col)] = yj[row];
                    mr[(row, col)] = yr[row];
                }
            }
            let yu = op(&zero, &zero, 1.0);
            for row in 0..m {
                ucol[row] = yu[row];
            }
            (mj, mr, ucol)
        };

        let (dcr_m, dcr_u) = probe2(&|r, u| grid::dc_rho(&cl, r, u));
        let (lapr_m, lapr_u) = probe2(&|r, u| grid::lap_rho(&cl, r, u));
        let (dcj_mj, dcj_mr, dcj_u) = probe3(&|j, r, u| grid::dc_j(&cl, j, r, u));
        let (lapj_mj, lapj_mr, lapj_u) = probe3(&|j, r, u| grid::lap_j(&cl, j, r, u));

        // E_k = DcJ J_k + DcJ_r R_k + (mu_k - omega_j) LapR R_k   (+ u parts)
        // G_k = DcR R_k - omega_r LapJ(J_k, R_k) + J_k            (+ u parts)
        let mu = cfg.relaxation_weights().unwrap();
        let id = DMatrix::<f64>::identity(m, m);
        let e_of_r = |k: usize| &dcj_mr + (mu.mu[k] - omega_j) * &lapr_m;
        let e_of_j = &dcj_mj;
        let e_of_u = |k: usize| &dcj_u + (mu.mu[k] - omega_j) * &lapr_u;
        let g_of_r = &dcr_m - omega_r * &lapj_mr;
        let g_of_j = &id - omega_r * &lapj_mj;
        let g_of_u = &dcr_u - omega_r * &lapj_u;

        let n_unknowns = 2 * s * m;
        let mut big = DMatrix::<f64>::zeros(n_unknowns, n_unknowns);
        let mut rhs = DVector::<f64>::zeros(n_unknowns);
        let r_block = |l: usize| l * m;
        let j_block = |l: usize| (s + l) * m;

        for l in 0..s {
            // R_l + dt sum_{k<l} at[l][k] E_k - dt sum_{k<=l} a[l][k] mu_k Lap R_k = rho0
            for row in 0..m {
                big[(r_block(l) + row, r_block(l) + row)] += 1.0;
                rhs[r_block(l) + row] = rho0[row];
            }
            for k in 0..l {
                let er = e_of_r(k);
                let eu = e_of_u(k);
                for row in 0..m {
                    for col in 0..m {
                        big[(r_block(l) + row, r_block(k) + col)] += dt * sc.at[l][k] * er[(row, col)];
                        big[(r_block(l) + row, j_block(k) + col)] +=
                            dt * sc.at[l][k] * e_of_j[(row, col)];
                        big[(r_block(l) + row, r_block(k) + col)] -=
                            dt * sc.a[l][k] * mu.mu[k] * lapr_m[(row, col)];
                    }
                    rhs[r_block(l) + row] -= dt * sc.at[l][k] * eu[row] * u;
                    rhs[r_block(l) + row] += dt * sc.a[l][k] * mu.mu[k] * lapr_u[row] * u;
                }
            }
            for row in 0..m {
                for col in 0..m {
                    big[(r_block(l) + row, r_block(l) + col)] -=
                        dt * sc.a[l][l] * mu.mu[l] * lapr_m[(row, col)];
                }
                rhs[r_block(l) + row] += dt * sc.a[l][l] * mu.mu[l] * lapr_u[row] * u;
            }
            // eps^2 J_l + dt sum_{k<=l} a[l][k] G_k = eps^2 j0
            for row in 0..m {
                big[(j_block(l) + row, j_block(l) + row)] += eps2;
                rhs[j_block(l) + row] = eps2 * j0[row];
            }
            for k in 0..=l {
                for row in 0..m {
                    for col in 0..m {
                        big[(j_block(l) + row, r_block(k) + col)] +=
                            dt * sc.a[l][k] * g_of_r[(row, col)];
                        big[(j_block(l) + row, j_block(k) + col)] +=
                            dt * sc.a[l][k] * g_of_j[(row, col)];
                    }
                    rhs[j_block(l) + row] -= dt * sc.a[l][k] * g_of_u[row] * u;
                }
            }
        }

        let lu = big.lu();
        let sol = lu.solve(&rhs).expect("dense stage system solvable");

        // Weight updates.
        let mut rho_dense = DVector::<f64>::zeros(m);
        for row in 0..m {
            rho_dense[row] = rho0[row];
        }
        for l in 0..s {
            let rl = sol.rows(r_block(l), m).into_owned();
            let jl = sol.rows(j_block(l), m).into_owned();
            let e_l = e_of_r(l) * &rl + e_of_j * &jl + e_of_u(l) * u;
            let lap_l = &lapr_m * &rl + &lapr_u * u;
            rho_dense -= dt * sc.bt[l] * e_l;
            rho_dense += dt * sc.b[l] * mu.mu[l] * lap_l;
        }
        let mut j_dense = DVector::<f64>::zeros(m);
        for row in 0..m {
            j_dense[row] = j0[row];
        }
        for l in 0..s {
            let rl = sol.rows(r_block(l), m).into_owned();
            let jl = sol.rows(j_block(l), m).into_owned();
            let g_l = &g_of_r * &rl + &g_of_j * &jl + &g_of_u * u;
            j_dense -= (dt * sc.b[l] / eps2) * g_l;
        }

        let uvec = [u; 1];
        let source = ControlSource::PerStep(&uvec);
        let samples = source.step_samples(&cfg, 0);
        let (rho1, j1, _) = imex_step(&cfg, &mu, &rho0, &j0, &samples).unwrap();
        for i in 0..m {
            assert!(
                (rho1[i] - rho_dense[i]).abs() < 1e-12,
                "rho mismatch at {i}: {} vs {}",
                rho1[i],
                rho_dense[i]
            );
            assert!(
                (j1[i] - j_dense[i]).abs() < 1e-12,
                "j mismatch at {i}: {} vs {}",
                j1[i],
                j_dense[i]
            );
        }
    }

    #[test]
    fn manufactured_solution_second_order_in_the_limit() {
        // rho = exp(-t) cos x with the exact boundary control; dx = dt.
        let mut errs = Vec::new();
        for &n in &[20usize, 40, 80] {
            let mut cfg = base_config("GSA342", n, n, 1.0);
            cfg.eps = 0.0;
            let rho0 = Field::from_fn(&cfg.grid, |x| exact_rho(x, 0.0));
            let j0 = Field::zeros(n);
            let f = exact_control;
            let traj =
                solve_forward(&cfg, &rho0, &j0, &ControlSource::Analytic(&f), false).unwrap();
            let mut err = 0.0f64;
            for (k, rho) in traj.rho.iter().enumerate() {
                let t = k as f64 * cfg.dt();
                for i in 0..n {
                    err = err.max((rho[i] - exact_rho(cfg.grid.center(i), t)).abs());
                }
            }
            errs.push(err);
        }
        for pair in errs.windows(2) {
            let rate = (pair[0] / pair[1]).log2();
            assert!(
                (1.6..=2.4).contains(&rate),
                "observed limit order {rate}, errors {errs:?}"
            );
        }
    }

    #[test]
    fn hyperbolic_step_size_is_stable_in_the_limit() {
        // dt = dx, 150 steps; an explicit heat discretization would need
        // dt ~ dx^2 and blow up immediately under this scaling.
        let n = 150usize;
        let mut cfg = base_config("GSA342", n, n, n as f64 * (1.0 / n as f64));
        cfg.eps = 0.0;
        cfg.t_final = 1.0;
        let rho0 = Field::from_fn(&cfg.grid, |x| exact_rho(x, 0.0));
        let j0 = Field::zeros(n);
        let f = exact_control;
        let traj = solve_forward(&cfg, &rho0, &j0, &ControlSource::Analytic(&f), false).unwrap();
        let umax = exact_control(0.0).abs();
        let bound = 1.0 + 5.0 * (1.0 + cfg.t_final) * umax;
        for rho in &traj.rho {
            assert!(rho.norm_linf() <= bound);
        }
    }

    #[test]
    fn relaxation_solves_approach_the_limit_solve() {
        let n = 40usize;
        let make = |eps: f64| {
            let mut cfg = base_config("GSA342", n, n, 1.0);
            cfg.eps = eps;
            let rho0 = Field::from_fn(&cfg.grid, |x| exact_rho(x, 0.0));
            let j0 = Field::zeros(n);
            let f = exact_control;
            solve_forward(&cfg, &rho0, &j0, &ControlSource::Analytic(&f), false).unwrap()
        };
        let limit = make(0.0);
        let mut prev = f64::INFINITY;
        for eps in [0.5, 0.1, 0.02] {
            let traj = make(eps);
            let mut dev = 0.0f64;
            for i in 0..n {
                dev = dev.max((traj.rho[n][i] - limit.rho[n][i]).abs());
            }
            assert!(dev < prev, "deviation not decreasing at eps = {eps}");
            prev = dev;
        }
    }

    #[test]
    fn step_map_is_affine() {
        let mut cfg = base_config("SSP2332", 15, 3, 0.15);
        cfg.eps = 0.4;
        let mu = cfg.relaxation_weights().unwrap();
        let f1 = Field::from_fn(&cfg.grid, |x| x.sin());
        let g1 = Field::from_fn(&cfg.grid, |x| x * x);
        let f2 = Field::from_fn(&cfg.grid, |x| (2.0 - x).cos());
        let g2 = Field::from_fn(&cfg.grid, |x| 1.0 - x);
        let sum_f = Field { values: (0..15).map(|i| f1[i] + f2[i]).collect() };
        let sum_g = Field { values: (0..15).map(|i| g1[i] + g2[i]).collect() };
        let mk = |u: f64| {
            let uv = [u];
            ControlSource::PerStep(&uv).step_samples(&cfg, 0)
        };
        let (r1, j1, _) = imex_step(&cfg, &mu, &f1, &g1, &mk(0.3)).unwrap();
        let (r2, j2, _) = imex_step(&cfg, &mu, &f2, &g2, &mk(-0.1)).unwrap();
        let (rs, js, _) = imex_step(&cfg, &mu, &sum_f, &sum_g, &mk(0.2)).unwrap();
        for i in 0..15 {
            assert!((rs[i] - (r1[i] + r2[i])).abs() < 1e-11);
            assert!((js[i] - (j1[i] + j2[i])).abs() < 1e-11);
        }
    }

    #[test]
    fn vanishing_eps_matches_the_limit_scheme() {
        let n = 50usize;
        let make = |eps: f64| {
            let mut cfg = base_config("GSA342", n, n, 1.0);
            cfg.eps = eps;
            let rho0 = Field::from_fn(&cfg.grid, |x| exact_rho(x, 0.0));
            let j0 = Field::zeros(n);
            let f = exact_control;
            solve_forward(&cfg, &rho0, &j0, &ControlSource::Analytic(&f), false).unwrap()
        };
        let tiny = make(1e-6);
        let limit = make(0.0);
        let mut dev = 0.0f64;
        for i in 0..n {
            dev = dev.max((tiny.rho[n][i] - limit.rho[n][i]).abs());
        }
        assert!(dev <= 1e-4, "asymptotic gap {dev}");
    }

    #[test]
    fn non_type_a_guards() {
        let mut pair = crate::tableau::builtin_scheme("SSP2332").unwrap();
        pair.exact = None;
        pair.implicit.a[0][0] = 0.0;
        pair.implicit.c[0] = 0.0;
        let sc = crate::tableau::SchemeCoeffs::from_pair(&pair).unwrap();
        let mut cfg = base_config("SSP2332", 12, 4, 0.2);
        cfg.scheme = sc;
        cfg.eps = 1e-8;
        assert!(matches!(cfg.validate(), Err(Error::EpsTooSmall { .. })));
        cfg.eps = 0.0;
        assert!(matches!(cfg.validate(), Err(Error::RequiresIsa(_))));
    }
}
