//! Per-stage relaxation weights splitting the diffusion term between the
//! explicit and implicit tableaux.
//!
//! The density equation is advanced as
//! `rho_t = -(j + mu rho_x)_x  [explicit]  +  mu rho_xx  [implicit]`
//! with a weight `mu_l` per stage. The optimal choice makes the explicitly
//! treated flux `J_l + mu_l dx R_l` vanish to `O(eps^2)`:
//!
//! ```text
//! mu_l = dt a_ll / (eps^2 + dt a_ll)
//! ```
//!
//! where `a_ll` are the implicit diagonal entries (hence the type A
//! requirement). The weights do not depend on the step index, so they are
//! computed once per `(eps, dt)` and reused, in the backward multiplier
//! sweeps as well. At `eps = 0` they all equal one and the diffusion is fully
//! implicit; as `dt -> 0` at fixed `eps > 0` they vanish and the splitting
//! degenerates to the plain explicit treatment.
//!
//! [`verify_flux_cancellation`] measures the residual flux after one step and
//! is exported through the `ce-verify` experiment: under eps-halving the
//! residual must drop at second order.

use crate::error::{Error, Result};
use crate::forward::{imex_step, ControlSource, ProblemConfig};
use crate::grid::Field;
use crate::tableau::SchemeCoeffs;

/// Diagonal stage relaxation weights, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxationDiag {
    pub mu: Vec<f64>,
}

impl RelaxationDiag {
    pub fn identity(stages: usize) -> Self {
        RelaxationDiag {
            mu: vec![1.0; stages],
        }
    }
}

/// The optimal weights `mu_l = dt a_ll / (eps^2 + dt a_ll)`.
///
/// Requires a type A pair; a zero implicit diagonal entry is reported with
/// the offending stage index. `eps = 0` yields the identity exactly.
pub fn optimal_relaxation(scheme: &SchemeCoeffs, eps: f64, dt: f64) -> Result<RelaxationDiag> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    if eps < 0.0 {
        return Err(Error::Config(format!("eps must be nonnegative, got {eps}")));
    }
    let mu = (0..scheme.s)
        .map(|l| {
            let all = scheme.diag(l);
            if all == 0.0 {
                return Err(Error::NotTypeA { stage: l });
            }
            Ok(dt * all / (eps * eps + dt * all))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RelaxationDiag { mu })
}

/// Alternative scalar policy `mu = exp(-eps / dx)`, applied to every stage.
pub fn mu_exponential(eps: f64, dx: f64) -> f64 {
    (-eps / dx).exp()
}

/// Which relaxation weights to use; selectable in the configuration file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelaxationPolicy {
    Optimal,
    Exponential,
}

impl RelaxationPolicy {
    pub fn weights(
        &self,
        scheme: &SchemeCoeffs,
        eps: f64,
        dt: f64,
        dx: f64,
    ) -> Result<RelaxationDiag> {
        match self {
            RelaxationPolicy::Optimal => optimal_relaxation(scheme, eps, dt),
            RelaxationPolicy::Exponential => Ok(RelaxationDiag {
                mu: vec![mu_exponential(eps, dx); scheme.s],
            }),
        }
    }
}

/// Residual of the explicitly treated flux after one step, per value of eps.
///
/// For each `eps` in `eps_list` this runs a single step from `(rho0, j0)`
/// with the optimal weights and zero control, and returns
/// `max_l || J_l + mu_l (Dx R)_l ||_inf` over the interior cells, excluding
/// the two cells next to each boundary (the closure rows do not follow the
/// interior expansion). The sequence scales as `O(eps^2)` under
/// eps-refinement.
pub fn verify_flux_cancellation(
    config: &ProblemConfig,
    rho0: &Field,
    j0: &Field,
    eps_list: &[f64],
) -> Result<Vec<f64>> {
    let m = config.grid.cells();
    if m < 5 {
        return Err(Error::GridTooSmall { cells: m });
    }
    let mut residuals = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        if !(eps > 0.0) {
            return Err(Error::Config(format!(
                "flux-cancellation check needs eps > 0, got {eps}"
            )));
        }
        let cfg = config.with_eps(eps);
        let mu = optimal_relaxation(&cfg.scheme, eps, cfg.dt())?;
        let zero = [0.0];
        let source = ControlSource::PerStep(&zero);
        let (_, _, record) = imex_step(&cfg, &mu, rho0, j0, &source.step_samples(&cfg, 0))?;
        let mut worst = 0.0f64;
        for l in 0..cfg.scheme.s {
            let jl = &record.j[l];
            let dxr = &record.dxr[l];
            for i in 2..m - 2 {
                worst = worst.max((jl[i] + mu.mu[l] * dxr[i]).abs());
            }
        }
        residuals.push(worst);
    }
    Ok(residuals)
}

/// Spec name kept as an alias: the check verifies the expansion argument
/// behind the optimal weights.
pub use verify_flux_cancellation as verify_chapman_enskog;
