//! Backward multiplier sweeps.
//!
//! The implemented adjoint is the exact algebraic transpose of the forward
//! step: one forward step is an affine map `x^{n+1} = M x^n + g u^n` (with
//! `x = (rho, j)` for `eps > 0`, `x = rho` in the diffusion limit), assembled
//! from ghost closures, stencils and tridiagonal solves. [`adjoint_step`] and
//! [`adjoint_step_limit_transpose`] run the reverse-mode transposition of
//! exactly that statement sequence: every primitive is replayed backwards
//! with its hand-written transpose, and the tridiagonal stage matrices are
//! symmetric so their solves transpose to themselves. Consequences:
//!
//! * the multiplier recursion is `lambda^n = M^T lambda^{n+1}` to machine
//!   precision (checked against densely assembled transposes in the tests),
//! * the reduced gradient assembled from the per-step boundary
//!   sensitivities `g^T lambda^{n+1}` is the exact gradient of the discrete
//!   objective, and
//! * no forward stage values are needed: the dynamics are linear, so the
//!   backward sweep is self-contained given the terminal state.
//!
//! Multipliers are reported in the conventional normalization
//! `p^n = lambda_rho^n / dx` and `q^n = lambda_j^n / (dx eps^2)`, so that
//! `p^N = rho^N - rho_d` and `q^N = 0` hold exactly.
//!
//! [`limit_forms`] additionally implements the `eps = 0` multiplier system in
//! its two explicit stage arrangements (the algebraically resolved flux
//! multipliers, and the transformed system obtained through
//! `Qbar = dt A^T Q`); they are equivalent representations and the tests pin
//! them against each other to 1e-12 per step. [`reference`] holds the
//! corresponding stage-form system for `eps > 0`, used as a consistency
//! check of the transposed sweep under mesh refinement.

use crate::error::{Error, Result};
use crate::forward::{ProblemConfig, StepContext};
use crate::grid::{self, Field};
use crate::relaxation::RelaxationDiag;
use crate::tridiag::solve_tridiag;

/// Time history of the multipliers, plus the per-step sensitivity of the
/// objective to the step's control value.
#[derive(Debug, Clone)]
pub struct AdjointTrajectory {
    pub p: Vec<Field>,
    pub q: Vec<Field>,
    pub stages: Option<Vec<AdjointStageRecord>>,
    /// `d J / d u_n` through the boundary closures of step `n`; the reduced
    /// gradient is `dt nu u_n` plus this.
    pub boundary_sens: Vec<f64>,
    pub fingerprint: String,
}

/// Stage multipliers of one backward step (reverse-mode adjoints of the
/// stage equations, in the `p`-normalization).
#[derive(Debug, Clone)]
pub struct AdjointStageRecord {
    pub p: Vec<Field>,
    pub q: Vec<Field>,
}

/// Terminal conditions `p^N = rho^N - rho_d`, `q^N = 0`.
pub fn terminal_condition(rho_terminal: &Field, rho_d: &Field) -> Result<(Field, Field)> {
    if rho_terminal.len() != rho_d.len() {
        return Err(Error::GridMismatch {
            expected: rho_terminal.len(),
            got: rho_d.len(),
        });
    }
    let p: Vec<f64> = rho_terminal
        .iter()
        .zip(rho_d.iter())
        .map(|(a, b)| a - b)
        .collect();
    Ok((Field { values: p }, Field::zeros(rho_terminal.len())))
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Transpose solve of `(c0 I - g D2_rho)`; the matrix is symmetric, so this
/// is the forward solve with the same diagonals.
fn solve_shifted_lap_rho_t(
    cl: &grid::ClosureCoeffs,
    c0: f64,
    g: f64,
    rhs: &mut [f64],
) -> Result<()> {
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

fn solve_shifted_lap_j_t(
    cl: &grid::ClosureCoeffs,
    c0: f64,
    g: f64,
    rhs: &mut [f64],
) -> Result<()> {
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

/// Output of one transposed step: the incoming multipliers pulled back
/// through the step map, and the control sensitivity `g^T lambda`.
pub(crate) struct TransposedStep {
    pub lrho: Vec<f64>,
    pub lj: Vec<f64>,
    pub ubar: f64,
    pub stage_p: Vec<Vec<f64>>,
    pub stage_q: Vec<Vec<f64>>,
}

/// Reverse-mode transposition of `forward::imex_step` (constant-in-step
/// control parametrization), acting on raw multipliers `(lambda_rho,
/// lambda_j)`.
pub(crate) fn transpose_step(
    cfg: &ProblemConfig,
    mu: &RelaxationDiag,
    lrho_in: &[f64],
    lj_in: &[f64],
) -> Result<TransposedStep> {
    let ctx = StepContext::new(cfg)?;
    let sc = &cfg.scheme;
    let (s, m) = (sc.s, cfg.grid.cells());
    let (dt, eps2) = (ctx.dt, cfg.eps * cfg.eps);
    let hh = ctx.cl.dx * ctx.cl.dx;
    let w = sc
        .w
        .as_ref()
        .ok_or(Error::NotTypeA { stage: 0 })?;

    // Update-stage initialization.
    let mut lrho = lrho_in.to_vec();
    let wsum: f64 = w.iter().sum();
    let mut lj: Vec<f64> = lj_in.iter().map(|v| (1.0 - wsum) * v).collect();
    let mut eb: Vec<Vec<f64>> = (0..s)
        .map(|l| lrho_in.iter().map(|v| -dt * sc.bt[l] * v).collect())
        .collect();
    let mut lapb: Vec<Vec<f64>> = (0..s)
        .map(|l| lrho_in.iter().map(|v| dt * sc.b[l] * mu.mu[l] * v).collect())
        .collect();
    let mut jb: Vec<Vec<f64>> = (0..s)
        .map(|l| lj_in.iter().map(|v| w[l] * v).collect())
        .collect();
    let mut gb: Vec<Vec<f64>> = vec![vec![0.0; m]; s];
    let mut ubar = 0.0;
    let mut stage_p: Vec<Vec<f64>> = vec![Vec::new(); s];
    let mut stage_q: Vec<Vec<f64>> = vec![Vec::new(); s];

    for l in (0..s).rev() {
        let all = sc.diag(l);
        let mut rb = vec![0.0; m];

        // E_l = dc_j(J_l, R_l, u) + (mu_l - omega_j) LapR_l
        let y = std::mem::take(&mut eb[l]);
        grid::dc_j_t(&ctx.cl, &y, &mut jb[l], &mut rb, &mut ubar);
        axpy(mu.mu[l] - ctx.omega_j, &y, &mut lapb[l]);

        // G_l = DxR_l + J_l with DxR_l = DcR_l - omega_r LapJ_l
        let dxrb = std::mem::take(&mut gb[l]);
        axpy(1.0, &dxrb, &mut jb[l]);
        let mut dcrb = dxrb; // adjoint of DcR_l
        if ctx.omega_r != 0.0 {
            let lapjb: Vec<f64> = dcrb.iter().map(|v| -ctx.omega_r * v).collect();
            grid::lap_j_t(&ctx.cl, &lapjb, &mut jb[l], &mut rb, &mut ubar);
        }

        // J_l = Mj^{-1} (rj + gamma kappa/h^2 (R_l[m-1] - u) e_last)
        let gamma = dt * all * ctx.omega_r;
        let mut rjb = std::mem::take(&mut jb[l]);
        solve_shifted_lap_j_t(&ctx.cl, eps2 + dt * all, gamma, &mut rjb)?;
        if gamma != 0.0 {
            rb[m - 1] += gamma * ctx.cl.kappa / hh * rjb[m - 1];
            ubar -= gamma * ctx.cl.kappa / hh * rjb[m - 1];
        }

        // rj = eps^2 j^n - dt sum_{k<l} a[l][k] G_k - dt a_ll DcR_l
        axpy(eps2, &rjb, &mut lj);
        for k in 0..l {
            axpy(-dt * sc.a[l][k], &rjb, &mut gb[k]);
        }
        axpy(-dt * all, &rjb, &mut dcrb);

        // DcR_l and LapR_l pull back to R_l.
        grid::dc_rho_t(&ctx.cl, &dcrb, &mut rb, &mut ubar);
        let lapb_l = std::mem::take(&mut lapb[l]);
        grid::lap_rho_t(&ctx.cl, &lapb_l, &mut rb, &mut ubar);

        // R_l = Mrho^{-1} (rr + g_r beta/h^2 u e_last)
        let g_r = dt * all * mu.mu[l];
        let mut rrb = rb;
        solve_shifted_lap_rho_t(&ctx.cl, 1.0, g_r, &mut rrb)?;
        ubar += g_r * ctx.cl.beta / hh * rrb[m - 1];

        // rr = rho^n - dt sum at E_k + dt sum a mu_k LapR_k  (k < l)
        axpy(1.0, &rrb, &mut lrho);
        for k in 0..l {
            axpy(-dt * sc.at[l][k], &rrb, &mut eb[k]);
            axpy(dt * sc.a[l][k] * mu.mu[k], &rrb, &mut lapb[k]);
        }

        stage_p[l] = rrb;
        stage_q[l] = rjb;
    }

    Ok(TransposedStep {
        lrho,
        lj,
        ubar,
        stage_p,
        stage_q,
    })
}

/// Reverse-mode transposition of `forward::imex_step_limit`.
pub(crate) fn transpose_step_limit(
    cfg: &ProblemConfig,
    lrho_in: &[f64],
) -> Result<TransposedStep> {
    let ctx = StepContext::new(cfg)?;
    if ctx.phi < 1.0 {
        return Err(Error::DivisionGuard { phi: ctx.phi });
    }
    let sc = &cfg.scheme;
    let (s, m) = (sc.s, cfg.grid.cells());
    let dt = ctx.dt;
    let hh = ctx.cl.dx * ctx.cl.dx;

    let mut lrho = lrho_in.to_vec();
    let mut eb: Vec<Vec<f64>> = (0..s)
        .map(|l| lrho_in.iter().map(|v| -dt * sc.bt[l] * v).collect())
        .collect();
    let mut lapb: Vec<Vec<f64>> = (0..s)
        .map(|l| lrho_in.iter().map(|v| dt * sc.b[l] * v).collect())
        .collect();
    let mut ubar = 0.0;
    let mut stage_p: Vec<Vec<f64>> = vec![Vec::new(); s];
    let mut stage_q: Vec<Vec<f64>> = vec![Vec::new(); s];

    for l in (0..s).rev() {
        let all = sc.diag(l);
        let mut rb = vec![0.0; m];
        let mut jbar = vec![0.0; m];

        // E_l = dc_j(J_l, R_l, u) + LapR_l
        let y = std::mem::take(&mut eb[l]);
        grid::dc_j_t(&ctx.cl, &y, &mut jbar, &mut rb, &mut ubar);
        axpy(1.0, &y, &mut lapb[l]);

        // J_l = -DcR_l
        let dcrb: Vec<f64> = jbar.iter().map(|v| -v).collect();
        grid::dc_rho_t(&ctx.cl, &dcrb, &mut rb, &mut ubar);
        let lapb_l = std::mem::take(&mut lapb[l]);
        grid::lap_rho_t(&ctx.cl, &lapb_l, &mut rb, &mut ubar);

        // R_l solve and its boundary source.
        let g_r = dt * all;
        let mut rrb = rb;
        solve_shifted_lap_rho_t(&ctx.cl, 1.0, g_r, &mut rrb)?;
        ubar += g_r * ctx.cl.beta / hh * rrb[m - 1];

        axpy(1.0, &rrb, &mut lrho);
        for k in 0..l {
            axpy(-dt * sc.at[l][k], &rrb, &mut eb[k]);
            axpy(dt * sc.a[l][k], &rrb, &mut lapb[k]);
        }

        stage_p[l] = rrb;
        stage_q[l] = jbar;
    }

    Ok(TransposedStep {
        lrho,
        lj: Vec::new(),
        ubar,
        stage_p,
        stage_q,
    })
}

/// One backward step for `eps > 0`, in the `(p, q)` normalization.
pub fn adjoint_step(
    cfg: &ProblemConfig,
    mu: &RelaxationDiag,
    p_next: &Field,
    q_next: &Field,
) -> Result<(Field, Field, AdjointStageRecord)> {
    let dx = cfg.grid.dx();
    let eps2 = cfg.eps * cfg.eps;
    let lrho: Vec<f64> = p_next.iter().map(|v| dx * v).collect();
    let lj: Vec<f64> = q_next.iter().map(|v| dx * eps2 * v).collect();
    let out = transpose_step(cfg, mu, &lrho, &lj)?;
    let p = Field {
        values: out.lrho.iter().map(|v| v / dx).collect(),
    };
    let q = Field {
        values: out.lj.iter().map(|v| v / (dx * eps2)).collect(),
    };
    let record = AdjointStageRecord {
        p: out.stage_p.into_iter().map(|v| Field { values: v.iter().map(|x| x / dx).collect() }).collect(),
        q: out.stage_q.into_iter().map(|v| Field { values: v.iter().map(|x| x / dx).collect() }).collect(),
    };
    Ok((p, q, record))
}

/// One backward step of the `eps = 0` multiplier system in its explicit
/// stage form (flux multipliers resolved through the invertible implicit
/// matrix). Requires an implicit stiffly accurate type A pair; see
/// [`limit_forms`] for the equivalent transformed arrangement. The
/// transposed sweep used by [`solve_adjoint`] is the gradient-exact
/// counterpart; this form tracks the continuous limit system and the two
/// agree under mesh refinement.
pub fn adjoint_step_limit(
    cfg: &ProblemConfig,
    p_next: &Field,
) -> Result<(Field, AdjointStageRecord)> {
    let out = limit_forms::step_resolvent(cfg, p_next)?;
    Ok((
        out.p_prev,
        AdjointStageRecord {
            p: out.stage_p,
            q: out.stage_q,
        },
    ))
}

/// Full backward sweep from the terminal state; dispatches on `eps`.
pub fn solve_adjoint(
    cfg: &ProblemConfig,
    rho_terminal: &Field,
    rho_d: &Field,
    record_stages: bool,
) -> Result<AdjointTrajectory> {
    cfg.validate()?;
    let m = cfg.grid.cells();
    if rho_terminal.len() != m {
        return Err(Error::GridMismatch {
            expected: m,
            got: rho_terminal.len(),
        });
    }
    let (p_terminal, _) = terminal_condition(rho_terminal, rho_d)?;
    let n = cfg.n_steps;
    let dx = cfg.grid.dx();
    let eps2 = cfg.eps * cfg.eps;
    let limit = cfg.eps == 0.0;
    let mu = if limit {
        RelaxationDiag::identity(cfg.scheme.s)
    } else {
        cfg.relaxation_weights()?
    };

    let mut p = vec![Field::zeros(m); n + 1];
    let mut q = vec![Field::zeros(m); n + 1];
    let mut stages = record_stages.then(|| vec![None; n]);
    let mut boundary_sens = vec![0.0; n];

    p[n] = p_terminal;
    let mut lrho: Vec<f64> = p[n].iter().map(|v| dx * v).collect();
    let mut lj: Vec<f64> = vec![0.0; m];

    for step in (0..n).rev() {
        let out = if limit {
            transpose_step_limit(cfg, &lrho).map_err(|e| e.at_step(step))?
        } else {
            transpose_step(cfg, &mu, &lrho, &lj).map_err(|e| e.at_step(step))?
        };
        lrho = out.lrho;
        if !limit {
            lj = out.lj;
        }
        boundary_sens[step] = out.ubar;
        p[step] = Field {
            values: lrho.iter().map(|v| v / dx).collect(),
        };
        if !limit {
            q[step] = Field {
                values: lj.iter().map(|v| v / (dx * eps2)).collect(),
            };
        }
        if let Some(st) = stages.as_mut() {
            st[step] = Some(AdjointStageRecord {
                p: out
                    .stage_p
                    .into_iter()
                    .map(|v| Field { values: v.iter().map(|x| x / dx).collect() })
                    .collect(),
                q: out
                    .stage_q
                    .into_iter()
                    .map(|v| Field { values: v.iter().map(|x| x / dx).collect() })
                    .collect(),
            });
        }
        if !p[step].is_finite() {
            return Err(Error::NonFinite {
                context: "multiplier".into(),
                step,
            });
        }
    }

    Ok(AdjointTrajectory {
        p,
        q,
        stages: stages.map(|v| v.into_iter().map(Option::unwrap).collect()),
        boundary_sens,
        fingerprint: cfg.fingerprint(),
    })
}

/// Explicit stage arrangements of the `eps = 0` multiplier system.
///
/// Both require an implicit stiffly accurate type A pair. `step_resolvent`
/// keeps the flux multipliers `Q` and resolves them stage by stage through
/// the invertible implicit matrix; `step_transformed` eliminates them via
/// `Qbar = dt A^T Q`, which absorbs the terminal-stage density multiplier
/// into the update `p^n = p^{n+1} + e^T P`. The two are algebraically
/// equivalent; the acceptance tests check agreement to 1e-12 per step.
pub mod limit_forms {
    use super::*;

    pub struct LimitStage {
        pub p_prev: Field,
        pub stage_p: Vec<Field>,
        /// Flux multipliers: `Q` for the resolvent form, `Qbar` for the
        /// transformed form.
        pub stage_q: Vec<Field>,
    }

    fn require_isa_type_a(cfg: &ProblemConfig) -> Result<()> {
        if !(cfg.scheme.class.isa && cfg.scheme.class.type_a) {
            return Err(Error::RequiresIsa(format!(
                "scheme {} has isa = {}, type_a = {}",
                cfg.scheme.name, cfg.scheme.class.isa, cfg.scheme.class.type_a
            )));
        }
        Ok(())
    }

    /// `(I - dt_all D2_p) x = rhs` with an extra diagonal entry at the last
    /// row from the flux-multiplier ghost coupling.
    fn solve_p_stage(
        cl: &grid::ClosureCoeffs,
        dt_all: f64,
        extra_last: f64,
        rhs: &mut [f64],
    ) -> Result<()> {
        let m = rhs.len();
        let hh = cl.dx * cl.dx;
        let off = -dt_all / hh;
        let sub = vec![off; m - 1];
        let sup = vec![off; m - 1];
        let mut diag = vec![1.0 + 2.0 * dt_all / hh; m];
        diag[0] = 1.0 + dt_all / hh;
        diag[m - 1] = 1.0 + (2.0 - cl.alpha) * dt_all / hh + extra_last;
        solve_tridiag(&sub, &diag, &sup, rhs)
    }

    fn combine(fields: &[Vec<f64>], weights: impl Fn(usize) -> f64, m: usize) -> Vec<f64> {
        let mut out = vec![0.0; m];
        for (k, f) in fields.iter().enumerate() {
            let wk = weights(k);
            if wk != 0.0 && !f.is_empty() {
                axpy(wk, f, &mut out);
            }
        }
        out
    }

    /// Stage system with the flux multipliers kept: solved backwards, the
    /// flux stage is algebraic (`A^T Q = dx-terms`) and resolved by the
    /// diagonal, the density stage is one tridiagonal solve.
    pub fn step_resolvent(cfg: &ProblemConfig, p_next: &Field) -> Result<LimitStage> {
        require_isa_type_a(cfg)?;
        let cl = cfg.grid.closure_coeffs();
        let sc = &cfg.scheme;
        let (s, m) = (sc.s, cfg.grid.cells());
        let dt = cfg.dt();
        let h2 = 2.0 * cl.dx;

        // Source weights b~ - A~^T e_s; zero for globally stiffly accurate
        // pairs.
        let wsrc: Vec<f64> = (0..s).map(|l| sc.bt[l] - sc.at[s - 1][l]).collect();
        let dcp_next = grid::dc_rho(&cl, p_next, 0.0);
        let lapp_next = grid::lap_rho(&cl, p_next, 0.0);

        let mut p_st: Vec<Vec<f64>> = vec![Vec::new(); s];
        let mut q_st: Vec<Vec<f64>> = vec![Vec::new(); s];

        for l in (0..s).rev() {
            let all = sc.diag(l);
            // A^T Q = dx(A~^T P) + wsrc dx p^{n+1}, resolved for Q_l.
            let vp = combine(&p_st, |k| if k > l { sc.at[k][l] } else { 0.0 }, m);
            let mut rhs_q = grid::dc_rho(&cl, &vp, 0.0);
            axpy(wsrc[l], &dcp_next, &mut rhs_q);
            for k in l + 1..s {
                axpy(-sc.a[k][l], &q_st[k], &mut rhs_q);
            }
            let q_l: Vec<f64> = rhs_q.iter().map(|v| v / all).collect();
            q_st[l] = q_l;

            // Density stage.
            let wq = combine(&q_st, |k| if k >= l { sc.a[k][l] } else { 0.0 }, m);
            let y_known = combine(&p_st, |k| if k > l { sc.a[k][l] } else { 0.0 }, m);
            let mut rhs = vec![0.0; m];
            if l == s - 1 {
                axpy(1.0, p_next, &mut rhs);
            }
            // dt * dx_q(A^T Q) with the known part of the ghost companion;
            // the unknown a_ll P_l[m-1] part goes into the matrix diagonal.
            let dq = grid::dc_q(&cl, &wq, y_known[m - 1]);
            axpy(dt, &dq, &mut rhs);
            // - dt lap(A~^T P) + dt lap(A^T P)|_{known} - dt wsrc lap p^{n+1}
            let lap_vp = grid::lap_rho(&cl, &vp, 0.0);
            axpy(-dt, &lap_vp, &mut rhs);
            let lap_yk = grid::lap_rho(&cl, &y_known, 0.0);
            axpy(dt, &lap_yk, &mut rhs);
            axpy(-dt * wsrc[l], &lapp_next, &mut rhs);

            let extra_last = dt * cl.kappa * all / h2;
            solve_p_stage(&cl, dt * all, extra_last, &mut rhs)?;
            p_st[l] = rhs;
        }

        let p_prev = combine(&p_st, |_| 1.0, m);
        Ok(LimitStage {
            p_prev: Field { values: p_prev },
            stage_p: p_st.into_iter().map(|values| Field { values }).collect(),
            stage_q: q_st.into_iter().map(|values| Field { values }).collect(),
        })
    }

    /// Transformed stage system: the flux multipliers are replaced by
    /// `Qbar = dt A^T Q`, given explicitly per stage, and the update becomes
    /// `p^n = p^{n+1} + e^T P`.
    pub fn step_transformed(cfg: &ProblemConfig, p_next: &Field) -> Result<LimitStage> {
        require_isa_type_a(cfg)?;
        let cl = cfg.grid.closure_coeffs();
        let sc = &cfg.scheme;
        let (s, m) = (sc.s, cfg.grid.cells());
        let dt = cfg.dt();
        let h2 = 2.0 * cl.dx;

        let dcp_next = grid::dc_rho(&cl, p_next, 0.0);
        let lapp_next = grid::lap_rho(&cl, p_next, 0.0);

        let mut p_st: Vec<Vec<f64>> = vec![Vec::new(); s];
        let mut qbar_st: Vec<Vec<f64>> = vec![Vec::new(); s];

        for l in (0..s).rev() {
            let all = sc.diag(l);
            let vp = combine(&p_st, |k| if k > l { sc.at[k][l] } else { 0.0 }, m);
            // Qbar_l = dt dx(A~^T P) + dt b~_l dx p^{n+1}
            let mut qbar = grid::dc_rho(&cl, &vp, 0.0);
            axpy(sc.bt[l], &dcp_next, &mut qbar);
            for v in qbar.iter_mut() {
                *v *= dt;
            }
            qbar_st[l] = qbar;

            // P_l = dx Qbar_l - dt [lap(A~^T P) + b~_l lap p^{n+1}]
            //               + dt [lap(A^T P) + b_l lap p^{n+1}]
            // with the ghost companion of Qbar being dt (A^T P) + dt b p^{n+1}.
            let y_known = combine(&p_st, |k| if k > l { sc.a[k][l] } else { 0.0 }, m);
            let companion_known = dt * (y_known[m - 1] + sc.b[l] * p_next[m - 1]);
            let dq = grid::dc_q(&cl, &qbar_st[l], companion_known);
            let mut rhs = dq;
            let lap_vp = grid::lap_rho(&cl, &vp, 0.0);
            axpy(-dt, &lap_vp, &mut rhs);
            axpy(-dt * sc.bt[l], &lapp_next, &mut rhs);
            let lap_yk = grid::lap_rho(&cl, &y_known, 0.0);
            axpy(dt, &lap_yk, &mut rhs);
            axpy(dt * sc.b[l], &lapp_next, &mut rhs);

            let extra_last = dt * cl.kappa * all / h2;
            solve_p_stage(&cl, dt * all, extra_last, &mut rhs)?;
            p_st[l] = rhs;
        }

        let mut p_prev = p_next.values.clone();
        for st in &p_st {
            axpy(1.0, st, &mut p_prev);
        }
        Ok(LimitStage {
            p_prev: Field { values: p_prev },
            stage_p: p_st.into_iter().map(|values| Field { values }).collect(),
            stage_q: qbar_st.into_iter().map(|values| Field { values }).collect(),
        })
    }

    /// Backward trajectory of the resolved form; `p[n]` for `n = 0..=N`.
    pub fn solve_resolvent(cfg: &ProblemConfig, p_terminal: &Field) -> Result<Vec<Field>> {
        let n = cfg.n_steps;
        let mut p = vec![Field::zeros(cfg.grid.cells()); n + 1];
        p[n] = p_terminal.clone();
        for step in (0..n).rev() {
            let out = step_resolvent(cfg, &p[step + 1]).map_err(|e| e.at_step(step))?;
            p[step] = out.p_prev;
        }
        Ok(p)
    }

    pub fn solve_transformed(cfg: &ProblemConfig, p_terminal: &Field) -> Result<Vec<Field>> {
        let n = cfg.n_steps;
        let mut p = vec![Field::zeros(cfg.grid.cells()); n + 1];
        p[n] = p_terminal.clone();
        for step in (0..n).rev() {
            let out = step_transformed(cfg, &p[step + 1]).map_err(|e| e.at_step(step))?;
            p[step] = out.p_prev;
        }
        Ok(p)
    }
}

/// Stage-form backward system for `eps > 0`, with central stencils and the
/// mirrored trace closures. A consistency reference for the transposed
/// sweep: the two agree up to the spatial closure treatment and converge to
/// each other under mesh refinement.
pub mod reference {
    use super::*;

    pub fn step(
        cfg: &ProblemConfig,
        mu: &RelaxationDiag,
        p_next: &Field,
        q_next: &Field,
    ) -> Result<(Field, Field)> {
        let cl = cfg.grid.closure_coeffs();
        let sc = &cfg.scheme;
        let (s, m) = (sc.s, cfg.grid.cells());
        let dt = cfg.dt();
        let eps2 = cfg.eps * cfg.eps;
        let h2 = 2.0 * cl.dx;

        let dcp_next = grid::dc_rho(&cl, p_next, 0.0);
        let lapp_next = grid::lap_rho(&cl, p_next, 0.0);

        let mut p_st: Vec<Vec<f64>> = vec![Vec::new(); s];
        let mut q_st: Vec<Vec<f64>> = vec![Vec::new(); s];

        let combine = |fields: &[Vec<f64>], weights: &dyn Fn(usize) -> f64| {
            let mut out = vec![0.0; m];
            for (k, f) in fields.iter().enumerate() {
                let wk = weights(k);
                if wk != 0.0 && !f.is_empty() {
                    axpy(wk, f, &mut out);
                }
            }
            out
        };

        for l in (0..s).rev() {
            let all = sc.diag(l);
            // Flux multiplier stage, pointwise:
            // (eps^2 + dt a_ll) Q_l = -dt sum_{k>l} a_kl Q_k - dt b_l q^{n+1}
            //   + dt dx(A~^T P)_l + dt b~_l dx p^{n+1}
            let vp = combine(&p_st, &|k| if k > l { sc.at[k][l] } else { 0.0 });
            let mut rhs_q: Vec<f64> = grid::dc_rho(&cl, &vp, 0.0);
            axpy(sc.bt[l], &dcp_next, &mut rhs_q);
            for v in rhs_q.iter_mut() {
                *v *= dt;
            }
            for k in l + 1..s {
                axpy(-dt * sc.a[k][l], &q_st[k], &mut rhs_q);
            }
            axpy(-dt * sc.b[l], q_next, &mut rhs_q);
            let q_l: Vec<f64> = rhs_q.iter().map(|v| v / (eps2 + dt * all)).collect();
            q_st[l] = q_l;

            // Density multiplier stage:
            // (I - dt mu_l a_ll D2_p) P_l = dt dx_q((A^T Q)_l + b_l q^{n+1})
            //   - dt mu_l [lap(A~^T P)_l + b~_l lap p^{n+1}]
            //   + dt mu_l [lap(A^T P)_l|known + b_l lap p^{n+1}]  (+ diag term)
            let mut wq = combine(&q_st, &|k| if k >= l { sc.a[k][l] } else { 0.0 });
            axpy(sc.b[l], q_next, &mut wq);
            let y_known = combine(&p_st, &|k| if k > l { sc.a[k][l] } else { 0.0 });
            let companion_known = y_known[m - 1] + sc.b[l] * p_next[m - 1];
            let dq = grid::dc_q(&cl, &wq, companion_known);
            let mut rhs = vec![0.0; m];
            axpy(dt, &dq, &mut rhs);
            let lap_vp = grid::lap_rho(&cl, &vp, 0.0);
            axpy(-dt * mu.mu[l], &lap_vp, &mut rhs);
            axpy(-dt * mu.mu[l] * sc.bt[l], &lapp_next, &mut rhs);
            let lap_yk = grid::lap_rho(&cl, &y_known, 0.0);
            axpy(dt * mu.mu[l], &lap_yk, &mut rhs);
            axpy(dt * mu.mu[l] * sc.b[l], &lapp_next, &mut rhs);

            // Matrix: (I - dt mu_l a_ll D2_p) plus the ghost coupling of the
            // flux-multiplier derivative at the last row.
            let hh = cl.dx * cl.dx;
            let g = dt * mu.mu[l] * all;
            let off = -g / hh;
            let sub = vec![off; m - 1];
            let sup = vec![off; m - 1];
            let mut diag = vec![1.0 + 2.0 * g / hh; m];
            diag[0] = 1.0 + g / hh;
            diag[m - 1] = 1.0 + (2.0 - cl.alpha) * g / hh + dt * cl.kappa * all / h2;
            solve_tridiag(&sub, &diag, &sup, &mut rhs)?;
            p_st[l] = rhs;
        }

        let mut p_prev = p_next.values.clone();
        let mut q_prev = q_next.values.clone();
        for l in 0..s {
            axpy(1.0, &p_st[l], &mut p_prev);
            axpy(1.0, &q_st[l], &mut q_prev);
        }
        Ok((Field { values: p_prev }, Field { values: q_prev }))
    }

    pub fn solve(
        cfg: &ProblemConfig,
        rho_terminal: &Field,
        rho_d: &Field,
    ) -> Result<(Vec<Field>, Vec<Field>)> {
        let mu = cfg.relaxation_weights()?;
        let n = cfg.n_steps;
        let (p_terminal, q_terminal) = terminal_condition(rho_terminal, rho_d)?;
        let mut p = vec![Field::zeros(cfg.grid.cells()); n + 1];
        let mut q = vec![Field::zeros(cfg.grid.cells()); n + 1];
        p[n] = p_terminal;
        q[n] = q_terminal;
        for k in (0..n).rev() {
            let (pp, qp) = step(cfg, &mu, &p[k + 1], &q[k + 1]).map_err(|e| e.at_step(k))?;
            p[k] = pp;
            q[k] = qp;
        }
        Ok((p, q))
    }
}
