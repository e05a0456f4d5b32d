//! Cell-centered 1-D grid, difference stencils, ghost-cell closures and the
//! eps-dependent stencil blending.
//!
//! The domain is `[0, 1]` split into `m` cells of width `dx = 1/m` with
//! centers `x_i = (i - 1/2) dx`. Boundary conditions are imposed through one
//! ghost cell per side: the boundary trace of a field is the arithmetic mean
//! of the last interior cell and the ghost cell, the boundary derivative the
//! one-sided difference `(ghost - last)/dx`. Every closure is then a 1x1
//! linear solve per side, and the resulting ghost values are affine in the
//! interior values and the control `u` - which is what makes the discrete
//! adjoint an exact transpose.
//!
//! Closure relations, written for the state pair `(rho, j)`:
//!
//! * left: `j(0) = 0` and `j(0) = -rho_x(0)`, hence `rho_x(0) = 0`;
//!   ghosts `rho_g = rho_1`, `j_g = -j_1`.
//! * right: `j(1) - rho(1) = -u` and `j(1) = -rho_x(1)`, which combine to the
//!   Robin relation `rho_x(1) + rho(1) = u`; ghosts
//!   `rho_g = alpha rho_m + beta u` and `j_g = kappa (rho_m - u) - j_m` with
//!   `alpha = (2-dx)/(2+dx)`, `beta = 2dx/(2+dx)`, `kappa = 4/(2+dx)`.
//!
//! The same formulas close the diffusion limit (`eps = 0`), where only the
//! Robin/Neumann relations on `rho` remain active and `j = -rho_x` defines
//! the flux ghosts.
//!
//! Each closed operator below comes with a hand-written transpose (`*_t`)
//! that scatters adjoint contributions back to its operands; the pairing
//! `<A x, y> = <x, A^T y>` is checked by tests for every operator.

use crate::error::{Error, Result};

/// Equidistant cell-centered grid on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    m: usize,
    dx: f64,
}

impl Grid1D {
    pub fn new(cells: usize) -> Result<Self> {
        if cells < 3 {
            return Err(Error::GridTooSmall { cells });
        }
        Ok(Grid1D {
            m: cells,
            dx: 1.0 / cells as f64,
        })
    }

    pub fn cells(&self) -> usize {
        self.m
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Center of cell `i` (0-based): `x_i = (i + 1/2) dx`.
    pub fn center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dx
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.m).map(|i| self.center(i)).collect()
    }

    pub(crate) fn closure_coeffs(&self) -> ClosureCoeffs {
        let dx = self.dx;
        ClosureCoeffs {
            dx,
            alpha: (2.0 - dx) / (2.0 + dx),
            beta: 2.0 * dx / (2.0 + dx),
            kappa: 4.0 / (2.0 + dx),
        }
    }
}

/// Cell values of a scalar quantity on a [`Grid1D`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub values: Vec<f64>,
}

impl Field {
    pub fn zeros(m: usize) -> Self {
        Field { values: vec![0.0; m] }
    }

    pub fn from_fn(grid: &Grid1D, f: impl Fn(f64) -> f64) -> Self {
        Field {
            values: (0..grid.cells()).map(|i| f(grid.center(i))).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Discrete `L^1` norm, `dx * sum |v_i|`.
    pub fn norm_l1(&self, dx: f64) -> f64 {
        dx * self.values.iter().map(|v| v.abs()).sum::<f64>()
    }

    pub fn norm_linf(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Deref for Field {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.values
    }
}

impl std::ops::DerefMut for Field {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Coefficients of the affine ghost-cell maps.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ClosureCoeffs {
    pub dx: f64,
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

// ---------------------------------------------------------------------------
// Raw stencils with caller-supplied ghosts.
// ---------------------------------------------------------------------------

/// Central difference `(f_{i+1} - f_{i-1}) / (2 dx)` with explicit ghosts.
pub fn d_central(grid: &Grid1D, f: &Field, ghost_left: f64, ghost_right: f64) -> Result<Field> {
    let m = check_len(grid, f)?;
    let h2 = 2.0 * grid.dx();
    let v = &f.values;
    let mut out = vec![0.0; m];
    out[0] = (v[1] - ghost_left) / h2;
    for i in 1..m - 1 {
        out[i] = (v[i + 1] - v[i - 1]) / h2;
    }
    out[m - 1] = (ghost_right - v[m - 2]) / h2;
    Ok(Field { values: out })
}

/// Second difference `(f_{i+1} - 2 f_i + f_{i-1}) / dx^2` with explicit ghosts.
pub fn d_second(grid: &Grid1D, f: &Field, ghost_left: f64, ghost_right: f64) -> Result<Field> {
    let m = check_len(grid, f)?;
    let hh = grid.dx() * grid.dx();
    let v = &f.values;
    let mut out = vec![0.0; m];
    out[0] = (v[1] - 2.0 * v[0] + ghost_left) / hh;
    for i in 1..m - 1 {
        out[i] = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / hh;
    }
    out[m - 1] = (ghost_right - 2.0 * v[m - 1] + v[m - 2]) / hh;
    Ok(Field { values: out })
}

fn check_len(grid: &Grid1D, f: &Field) -> Result<usize> {
    let m = grid.cells();
    if f.len() != m {
        return Err(Error::GridMismatch {
            expected: m,
            got: f.len(),
        });
    }
    Ok(m)
}

// ---------------------------------------------------------------------------
// Closed operators: ghosts folded in, plus hand-written transposes.
// The density family uses the reflection/Robin closure; the flux family the
// trace closures, whose right ghost couples to the density and the control.
// ---------------------------------------------------------------------------

pub(crate) fn rho_ghosts(cl: &ClosureCoeffs, r: &[f64], u: f64) -> (f64, f64) {
    let m = r.len();
    (r[0], cl.alpha * r[m - 1] + cl.beta * u)
}

pub(crate) fn j_ghosts(cl: &ClosureCoeffs, j: &[f64], r: &[f64], u: f64) -> (f64, f64) {
    let m = j.len();
    (-j[0], cl.kappa * (r[m - 1] - u) - j[m - 1])
}

pub(crate) fn dc_rho(cl: &ClosureCoeffs, r: &[f64], u: f64) -> Vec<f64> {
    let m = r.len();
    let h2 = 2.0 * cl.dx;
    let mut out = vec![0.0; m];
    out[0] = (r[1] - r[0]) / h2;
    for i in 1..m - 1 {
        out[i] = (r[i + 1] - r[i - 1]) / h2;
    }
    out[m - 1] = (cl.alpha * r[m - 1] + cl.beta * u - r[m - 2]) / h2;
    out
}

pub(crate) fn dc_rho_t(cl: &ClosureCoeffs, ybar: &[f64], rbar: &mut [f64], ubar: &mut f64) {
    let m = ybar.len();
    let h2 = 2.0 * cl.dx;
    rbar[0] -= ybar[0] / h2;
    rbar[1] += ybar[0] / h2;
    for i in 1..m - 1 {
        rbar[i - 1] -= ybar[i] / h2;
        rbar[i + 1] += ybar[i] / h2;
    }
    rbar[m - 2] -= ybar[m - 1] / h2;
    rbar[m - 1] += cl.alpha * ybar[m - 1] / h2;
    *ubar += cl.beta * ybar[m - 1] / h2;
}

pub(crate) fn lap_rho(cl: &ClosureCoeffs, r: &[f64], u: f64) -> Vec<f64> {
    let m = r.len();
    let hh = cl.dx * cl.dx;
    let mut out = vec![0.0; m];
    out[0] = (r[1] - r[0]) / hh;
    for i in 1..m - 1 {
        out[i] = (r[i + 1] - 2.0 * r[i] + r[i - 1]) / hh;
    }
    out[m - 1] = (r[m - 2] - (2.0 - cl.alpha) * r[m - 1] + cl.beta * u) / hh;
    out
}

pub(crate) fn lap_rho_t(cl: &ClosureCoeffs, ybar: &[f64], rbar: &mut [f64], ubar: &mut f64) {
    let m = ybar.len();
    let hh = cl.dx * cl.dx;
    rbar[0] -= ybar[0] / hh;
    rbar[1] += ybar[0] / hh;
    for i in 1..m - 1 {
        rbar[i - 1] += ybar[i] / hh;
        rbar[i] -= 2.0 * ybar[i] / hh;
        rbar[i + 1] += ybar[i] / hh;
    }
    rbar[m - 2] += ybar[m - 1] / hh;
    rbar[m - 1] -= (2.0 - cl.alpha) * ybar[m - 1] / hh;
    *ubar += cl.beta * ybar[m - 1] / hh;
}

pub(crate) fn dc_j(cl: &ClosureCoeffs, j: &[f64], r: &[f64], u: f64) -> Vec<f64> {
    let m = j.len();
    let h2 = 2.0 * cl.dx;
    let mut out = vec![0.0; m];
    out[0] = (j[1] + j[0]) / h2;
    for i in 1..m - 1 {
        out[i] = (j[i + 1] - j[i - 1]) / h2;
    }
    out[m - 1] = (cl.kappa * (r[m - 1] - u) - j[m - 1] - j[m - 2]) / h2;
    out
}

pub(crate) fn dc_j_t(
    cl: &ClosureCoeffs,
    ybar: &[f64],
    jbar: &mut [f64],
    rbar: &mut [f64],
    ubar: &mut f64,
) {
    let m = ybar.len();
    let h2 = 2.0 * cl.dx;
    jbar[0] += ybar[0] / h2;
    jbar[1] += ybar[0] / h2;
    for i in 1..m - 1 {
        jbar[i - 1] -= ybar[i] / h2;
        jbar[i + 1] += ybar[i] / h2;
    }
    jbar[m - 1] -= ybar[m - 1] / h2;
    jbar[m - 2] -= ybar[m - 1] / h2;
    rbar[m - 1] += cl.kappa * ybar[m - 1] / h2;
    *ubar -= cl.kappa * ybar[m - 1] / h2;
}

pub(crate) fn lap_j(cl: &ClosureCoeffs, j: &[f64], r: &[f64], u: f64) -> Vec<f64> {
    let m = j.len();
    let hh = cl.dx * cl.dx;
    let mut out = vec![0.0; m];
    out[0] = (j[1] - 3.0 * j[0]) / hh;
    for i in 1..m - 1 {
        out[i] = (j[i + 1] - 2.0 * j[i] + j[i - 1]) / hh;
    }
    out[m - 1] = (j[m - 2] - 3.0 * j[m - 1] + cl.kappa * (r[m - 1] - u)) / hh;
    out
}

pub(crate) fn lap_j_t(
    cl: &ClosureCoeffs,
    ybar: &[f64],
    jbar: &mut [f64],
    rbar: &mut [f64],
    ubar: &mut f64,
) {
    let m = ybar.len();
    let hh = cl.dx * cl.dx;
    jbar[0] -= 3.0 * ybar[0] / hh;
    jbar[1] += ybar[0] / hh;
    for i in 1..m - 1 {
        jbar[i - 1] += ybar[i] / hh;
        jbar[i] -= 2.0 * ybar[i] / hh;
        jbar[i + 1] += ybar[i] / hh;
    }
    jbar[m - 2] += ybar[m - 1] / hh;
    jbar[m - 1] -= 3.0 * ybar[m - 1] / hh;
    rbar[m - 1] += cl.kappa * ybar[m - 1] / hh;
    *ubar -= cl.kappa * ybar[m - 1] / hh;
}

// Multiplier-side stencils used by the explicit stage-form backward systems.
// The p family is the homogeneous density closure (u = 0); the q family
// mirrors the flux closure with the sign of the gradient link flipped
// (q(1) = +p_x(1)), so the right ghost is `-kappa p_m - q_m`. The companion
// value `p_m` is passed by the caller, which lets it split known and unknown
// parts when the companion contains the stage being solved for.

pub(crate) fn dc_q(cl: &ClosureCoeffs, q: &[f64], companion_last: f64) -> Vec<f64> {
    let m = q.len();
    let h2 = 2.0 * cl.dx;
    let mut out = vec![0.0; m];
    out[0] = (q[1] + q[0]) / h2;
    for i in 1..m - 1 {
        out[i] = (q[i + 1] - q[i - 1]) / h2;
    }
    out[m - 1] = (-cl.kappa * companion_last - q[m - 1] - q[m - 2]) / h2;
    out
}

// ---------------------------------------------------------------------------
// Blending between central and upwind-corrected stencils.
// ---------------------------------------------------------------------------

/// Weights of the upwind corrections in the blended stencils:
/// `omega_r = (1 - phi) eps dx / 2` multiplies the flux Laplacian inside the
/// density derivative, `omega_j = (1 - phi) dx / (2 eps)` the density
/// Laplacian inside the flux derivative. For `phi = 1` both corrections are
/// skipped outright, which keeps `eps = 0` free of the `1/eps` factor.
pub(crate) fn blend_weights(eps: f64, phi: f64, dx: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&phi) {
        return Err(Error::Config(format!("phi = {phi} outside [0, 1]")));
    }
    if phi == 1.0 {
        return Ok((0.0, 0.0));
    }
    if eps == 0.0 {
        return Err(Error::DivisionGuard { phi });
    }
    let w = 1.0 - phi;
    Ok((w * eps * dx / 2.0, w * dx / (2.0 * eps)))
}

/// Blended first derivatives of a state pair under the standard closures.
///
/// Returns `(D rho, D j)` where
/// `D rho = Dc rho - (1-phi)(eps dx/2) D2 j` and
/// `D j   = Dc j   - (1-phi)(dx/(2 eps)) D2 rho`,
/// all ghosts carrying the control value `u`.
pub fn blended_gradient(
    grid: &Grid1D,
    rho: &Field,
    j: &Field,
    u: f64,
    eps: f64,
    phi: f64,
) -> Result<(Field, Field)> {
    check_len(grid, rho)?;
    check_len(grid, j)?;
    let cl = grid.closure_coeffs();
    let (omega_r, omega_j) = blend_weights(eps, phi, grid.dx())?;
    let mut drho = dc_rho(&cl, rho, u);
    let mut dj = dc_j(&cl, j, rho, u);
    if omega_r != 0.0 || omega_j != 0.0 {
        let lap_flux = lap_j(&cl, j, rho, u);
        let lap_dens = lap_rho(&cl, rho, u);
        for i in 0..grid.cells() {
            drho[i] -= omega_r * lap_flux[i];
            dj[i] -= omega_j * lap_dens[i];
        }
    }
    Ok((Field { values: drho }, Field { values: dj }))
}

/// Blending weight policy: `1 - eps^3`, with the two benchmark overrides
/// (`0.3` for GSA342 at `eps = 1`, `0.385` for SSP2332 at `eps = 0.5`).
pub fn phi_policy(eps: f64, scheme: &str) -> f64 {
    let key: String = scheme
        .chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_ascii_uppercase();
    match (key.as_str(), eps) {
        ("GSA342", e) if e == 1.0 => 0.3,
        ("SSP2332" | "SSP332", e) if e == 0.5 => 0.385,
        _ => 1.0 - eps * eps * eps,
    }
}

// ---------------------------------------------------------------------------
// Declarative closure sets.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// One boundary relation. `u` is the control trace where applicable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClosureKind {
    /// `j = 0` at the boundary (uncontrolled kinetic trace).
    FluxTraceZero,
    /// `j - rho = -u` at the boundary (controlled kinetic trace).
    FluxDensityTrace { u: f64 },
    /// `j = -rho_x` (diffusive link; exact only in the limit).
    FluxGradientLink,
    /// `rho_x = 0` (Neumann).
    DensityGradZero,
    /// `rho_x + rho = u` (Robin carrying the control).
    RobinControl { u: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryClosure {
    pub side: Side,
    pub kind: ClosureKind,
}

/// Ghost values for both fields at both ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GhostValues {
    pub rho_left: f64,
    pub rho_right: f64,
    pub j_left: f64,
    pub j_right: f64,
}

/// A validated set of boundary relations resolving to one ghost value per
/// side and field.
#[derive(Debug, Clone, Copy)]
pub struct ClosureSet {
    u: f64,
}

impl ClosureSet {
    /// The standard closure set: kinetic traces plus diffusive links, which
    /// jointly determine all four ghosts. Valid for every `eps >= 0`.
    pub fn standard(u: f64) -> Self {
        ClosureSet { u }
    }

    pub fn control(&self) -> f64 {
        self.u
    }

    /// Builds and validates a closure set from individual relations.
    ///
    /// Each side must determine exactly one ghost value per field: the left
    /// side needs a density-gradient condition (given directly or implied by
    /// `FluxTraceZero` + `FluxGradientLink`) and a flux trace; the right side
    /// a Robin condition (direct or implied) and a flux relation. Conflicting
    /// or missing relations are rejected.
    pub fn from_closures(closures: &[BoundaryClosure]) -> Result<Self> {
        let mut left_flux_zero = false;
        let mut left_grad_zero = false;
        let mut left_link = false;
        let mut right_trace: Option<f64> = None;
        let mut right_robin: Option<f64> = None;
        let mut right_link = false;

        for c in closures {
            match (c.side, c.kind) {
                (Side::Left, ClosureKind::FluxTraceZero) => left_flux_zero = true,
                (Side::Left, ClosureKind::DensityGradZero) => left_grad_zero = true,
                (Side::Left, ClosureKind::FluxGradientLink) => left_link = true,
                (Side::Left, k) => {
                    return Err(Error::ClosureConflict(format!(
                        "unsupported relation {k:?} on the left boundary"
                    )))
                }
                (Side::Right, ClosureKind::FluxDensityTrace { u }) => {
                    if let Some(prev) = right_trace {
                        if prev != u {
                            return Err(Error::ClosureConflict(format!(
                                "two flux traces on the right boundary: u = {prev} and u = {u}"
                            )));
                        }
                    }
                    right_trace = Some(u);
                }
                (Side::Right, ClosureKind::RobinControl { u }) => {
                    if let Some(prev) = right_robin {
                        if prev != u {
                            return Err(Error::ClosureConflict(format!(
                                "two Robin data on the right boundary: u = {prev} and u = {u}"
                            )));
                        }
                    }
                    right_robin = Some(u);
                }
                (Side::Right, ClosureKind::FluxGradientLink) => right_link = true,
                (Side::Right, k) => {
                    return Err(Error::ClosureConflict(format!(
                        "unsupported relation {k:?} on the right boundary"
                    )))
                }
            }
        }

        // Left: rho ghost needs the Neumann condition, directly or implied.
        if !(left_grad_zero || (left_flux_zero && left_link)) {
            return Err(Error::ClosureConflict(
                "left density ghost undetermined: need rho_x = 0 or j = 0 plus j = -rho_x".into(),
            ));
        }
        if !(left_flux_zero || (left_grad_zero && left_link)) {
            return Err(Error::ClosureConflict(
                "left flux ghost undetermined: need a flux trace".into(),
            ));
        }

        // Right: the Robin condition, directly or from trace + link.
        let u = match (right_robin, right_trace, right_link) {
            (Some(ur), Some(ut), _) if ur != ut => {
                return Err(Error::ClosureConflict(format!(
                    "right boundary over-determined with inconsistent data: {ur} vs {ut}"
                )))
            }
            (Some(u), _, _) => u,
            (None, Some(u), true) => u,
            (None, Some(_), false) => {
                return Err(Error::ClosureConflict(
                    "right density ghost undetermined: flux trace given without gradient link".into(),
                ))
            }
            (None, None, _) => {
                return Err(Error::ClosureConflict(
                    "right boundary undetermined: no control-carrying relation".into(),
                ))
            }
        };
        Ok(ClosureSet { u })
    }

    pub fn ghosts(&self, grid: &Grid1D, rho: &Field, j: &Field) -> Result<GhostValues> {
        check_len(grid, rho)?;
        check_len(grid, j)?;
        let cl = grid.closure_coeffs();
        let (rl, rr) = rho_ghosts(&cl, rho, self.u);
        let (jl, jr) = j_ghosts(&cl, j, rho, self.u);
        Ok(GhostValues {
            rho_left: rl,
            rho_right: rr,
            j_left: jl,
            j_right: jr,
        })
    }
}

/// Ghost values of the state pair under a validated closure set.
pub fn ghost_values(
    grid: &Grid1D,
    rho: &Field,
    j: &Field,
    closures: &ClosureSet,
    _eps: f64,
) -> Result<GhostValues> {
    closures.ghosts(grid, rho, j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(m: usize) -> Grid1D {
        Grid1D::new(m).unwrap()
    }

    #[test]
    fn rejects_tiny_grids() {
        assert!(matches!(Grid1D::new(2), Err(Error::GridTooSmall { cells: 2 })));
    }

    #[test]
    fn centers_span_the_unit_interval() {
        let g = grid(8);
        assert!((g.center(0) - g.dx() / 2.0).abs() < 1e-15);
        assert!((g.center(7) - (1.0 - g.dx() / 2.0)).abs() < 1e-15);
    }

    #[test]
    fn central_difference_is_exact_on_linears() {
        let g = grid(16);
        let f = Field::from_fn(&g, |x| x);
        // Exact linear ghosts at the ghost-cell centers -dx/2 and 1 + dx/2.
        let d = d_central(&g, &f, -g.dx() / 2.0, 1.0 + g.dx() / 2.0).unwrap();
        for v in d.iter() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn central_difference_is_exact_on_quadratics_inside() {
        let g = grid(20);
        let f = Field::from_fn(&g, |x| x * x);
        let d = d_central(&g, &f, 0.0, 0.0).unwrap();
        for i in 1..g.cells() - 1 {
            assert!((d[i] - 2.0 * g.center(i)).abs() < 1e-12);
        }
    }

    #[test]
    fn second_difference_is_exact_on_quadratics_inside() {
        let g = grid(20);
        let lin = Field::from_fn(&g, |x| 3.0 * x - 1.0);
        let d = d_second(&g, &lin, 0.0, 0.0).unwrap();
        for i in 1..g.cells() - 1 {
            assert!(d[i].abs() < 1e-10);
        }
        let sq = Field::from_fn(&g, |x| x * x);
        let d = d_second(&g, &sq, 0.0, 0.0).unwrap();
        for i in 1..g.cells() - 1 {
            assert!((d[i] - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn second_difference_taylor_remainder_on_cosine() {
        // |D2 cos(x) + cos(x)| <= dx^2/12 * max|cos''''| = dx^2/12 inside.
        let g = grid(40);
        let f = Field::from_fn(&g, |x| x.cos());
        let d = d_second(&g, &f, 0.0, 0.0).unwrap();
        let bound = g.dx() * g.dx() / 12.0 + 1e-12;
        for i in 1..g.cells() - 1 {
            let x = g.center(i);
            assert!(
                (d[i] + x.cos()).abs() <= bound,
                "remainder {} exceeds {}",
                (d[i] + x.cos()).abs(),
                bound
            );
        }
    }

    #[test]
    fn closed_stencils_annihilate_consistent_constants() {
        // With u equal to the Robin datum of the constant, all ghosts equal
        // the constant state and every stencil output vanishes.
        let g = grid(12);
        let cl = g.closure_coeffs();
        let c = 0.7;
        let rho = vec![c; 12];
        let j = vec![0.0; 12];
        for v in dc_rho(&cl, &rho, c) {
            assert!(v.abs() < 1e-13);
        }
        for v in lap_rho(&cl, &rho, c) {
            assert!(v.abs() < 1e-11);
        }
        for v in dc_j(&cl, &j, &rho, c) {
            assert!(v.abs() < 1e-11);
        }
        for v in lap_j(&cl, &j, &rho, c) {
            assert!(v.abs() < 1e-10);
        }
    }

    #[test]
    fn ghost_examples() {
        let g = grid(10);
        let rho = Field::from_fn(&g, |x| (std::f64::consts::PI * x).cos());
        let j = Field::from_fn(&g, |x| x - 0.3);
        let set = ClosureSet::standard(0.0);
        let gh = set.ghosts(&g, &rho, &j).unwrap();
        // Left density ghost equals the first interior cell (rho_x(0) = 0).
        assert_eq!(gh.rho_left, rho[0]);
        // Left flux ghost is the odd reflection of the trace.
        assert_eq!(gh.j_left, -j[0]);

        // Constant density: the Robin ghost solves
        // (g - rho_m)/dx + (g + rho_m)/2 = u for g.
        let c = 1.3;
        let u = 0.4;
        let rho = Field {
            values: vec![c; 10],
        };
        let set = ClosureSet::standard(u);
        let gh = set.ghosts(&g, &rho, &j).unwrap();
        let dx = g.dx();
        let expected = (u * dx + c * (1.0 - dx / 2.0)) / (1.0 + dx / 2.0);
        assert!((gh.rho_right - expected).abs() < 1e-14);
        // And the implied trace relations hold.
        let trace = (gh.rho_right + c) / 2.0;
        let grad = (gh.rho_right - c) / dx;
        assert!((grad + trace - u).abs() < 1e-13);
    }

    #[test]
    fn closure_set_validation() {
        use ClosureKind::*;
        // The full kinetic + diffusive set resolves.
        let all = [
            BoundaryClosure { side: Side::Left, kind: FluxTraceZero },
            BoundaryClosure { side: Side::Left, kind: FluxGradientLink },
            BoundaryClosure { side: Side::Right, kind: FluxDensityTrace { u: 0.25 } },
            BoundaryClosure { side: Side::Right, kind: FluxGradientLink },
        ];
        let set = ClosureSet::from_closures(&all).unwrap();
        assert_eq!(set.control(), 0.25);

        // The limit set (Neumann + Robin + links) resolves to the same thing.
        let limit = [
            BoundaryClosure { side: Side::Left, kind: DensityGradZero },
            BoundaryClosure { side: Side::Left, kind: FluxGradientLink },
            BoundaryClosure { side: Side::Right, kind: RobinControl { u: 0.25 } },
            BoundaryClosure { side: Side::Right, kind: FluxGradientLink },
        ];
        assert_eq!(ClosureSet::from_closures(&limit).unwrap().control(), 0.25);

        // Conflicting trace data on one side is rejected.
        let conflict = [
            BoundaryClosure { side: Side::Left, kind: FluxTraceZero },
            BoundaryClosure { side: Side::Left, kind: FluxGradientLink },
            BoundaryClosure { side: Side::Right, kind: RobinControl { u: 0.1 } },
            BoundaryClosure { side: Side::Right, kind: FluxDensityTrace { u: 0.9 } },
        ];
        assert!(matches!(
            ClosureSet::from_closures(&conflict),
            Err(Error::ClosureConflict(_))
        ));

        // Underdetermined sets are rejected too.
        let missing = [BoundaryClosure { side: Side::Left, kind: FluxTraceZero }];
        assert!(ClosureSet::from_closures(&missing).is_err());
    }

    #[test]
    fn blend_collapses_at_phi_one_and_guards_eps_zero() {
        let g = grid(14);
        let rho = Field::from_fn(&g, |x| (2.0 * x).sin());
        let j = Field::from_fn(&g, |x| x * x);
        let u = 0.2;
        let (drho, dj) = blended_gradient(&g, &rho, &j, u, 0.0, 1.0).unwrap();
        let cl = g.closure_coeffs();
        assert_eq!(drho.values, dc_rho(&cl, &rho, u));
        assert_eq!(dj.values, dc_j(&cl, &j, &rho, u));

        assert!(matches!(
            blended_gradient(&g, &rho, &j, u, 0.0, 0.5),
            Err(Error::DivisionGuard { .. })
        ));
    }

    #[test]
    fn blend_at_phi_zero_matches_upwind_formulas() {
        let g = grid(14);
        let rho = Field::from_fn(&g, |x| (2.0 * x).sin());
        let j = Field::from_fn(&g, |x| 0.5 * x * x - x);
        let u = -0.1;
        let eps = 1.0;
        let (drho, dj) = blended_gradient(&g, &rho, &j, u, eps, 0.0).unwrap();
        let cl = g.closure_coeffs();
        let dx = g.dx();
        let lapj = lap_j(&cl, &j, &rho, u);
        let lapr = lap_rho(&cl, &rho, u);
        let dcr = dc_rho(&cl, &rho, u);
        let dcj = dc_j(&cl, &j, &rho, u);
        for i in 0..g.cells() {
            assert!((drho[i] - (dcr[i] - eps * dx / 2.0 * lapj[i])).abs() < 1e-14);
            assert!((dj[i] - (dcj[i] - dx / (2.0 * eps) * lapr[i])).abs() < 1e-14);
        }
    }

    #[test]
    fn phi_policy_values() {
        assert_eq!(phi_policy(0.0, "GSA342"), 1.0);
        assert_eq!(phi_policy(1.0, "GSA342"), 0.3);
        assert_eq!(phi_policy(0.5, "SSP2332"), 0.385);
        assert!((phi_policy(0.8, "GSA342") - 0.488).abs() < 1e-15);
        assert!((phi_policy(0.5, "GSA342") - 0.875).abs() < 1e-15);
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn pseudo(seed: &mut u64) -> f64 {
        *seed ^= *seed << 13;
        *seed ^= *seed >> 7;
        *seed ^= *seed << 17;
        (*seed % 10_000) as f64 / 5_000.0 - 1.0
    }

    #[test]
    fn transposes_match_their_operators() {
        // <A(x, u), y> == <x, A^T_field y> + u * A^T_u y for every closed op.
        let mut seed = 0x9e3779b97f4a7c15u64;
        for &m in &[3usize, 5, 17] {
            let g = grid(m);
            let cl = g.closure_coeffs();
            for _ in 0..8 {
                let r: Vec<f64> = (0..m).map(|_| pseudo(&mut seed)).collect();
                let j: Vec<f64> = (0..m).map(|_| pseudo(&mut seed)).collect();
                let y: Vec<f64> = (0..m).map(|_| pseudo(&mut seed)).collect();
                let u = pseudo(&mut seed);

                let check2 = |fwd: &dyn Fn(&[f64], f64) -> Vec<f64>,
                              adj: &dyn Fn(&[f64], &mut [f64], &mut f64)| {
                    let lhs = dot(&fwd(&r, u), &y);
                    let mut rbar = vec![0.0; m];
                    let mut ubar = 0.0;
                    adj(&y, &mut rbar, &mut ubar);
                    let rhs = dot(&r, &rbar) + u * ubar;
                    assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
                };
                check2(&|r, u| dc_rho(&cl, r, u), &|y, rb, ub| dc_rho_t(&cl, y, rb, ub));
                check2(&|r, u| lap_rho(&cl, r, u), &|y, rb, ub| lap_rho_t(&cl, y, rb, ub));

                let check3 = |fwd: &dyn Fn(&[f64], &[f64], f64) -> Vec<f64>,
                              adj: &dyn Fn(&[f64], &mut [f64], &mut [f64], &mut f64)| {
                    let lhs = dot(&fwd(&j, &r, u), &y);
                    let mut jbar = vec![0.0; m];
                    let mut rbar = vec![0.0; m];
                    let mut ubar = 0.0;
                    adj(&y, &mut jbar, &mut rbar, &mut ubar);
                    let rhs = dot(&j, &jbar) + dot(&r, &rbar) + u * ubar;
                    assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
                };
                check3(&|j, r, u| dc_j(&cl, j, r, u), &|y, jb, rb, ub| {
                    dc_j_t(&cl, y, jb, rb, ub)
                });
                check3(&|j, r, u| lap_j(&cl, j, r, u), &|y, jb, rb, ub| {
                    lap_j_t(&cl, y, jb, rb, ub)
                });
            }
        }
    }

    proptest! {
        /// Ghost values are affine in (rho, j, u): superposition holds, and
        /// the u-coefficient is field-independent.
        #[test]
        fn ghosts_are_affine(
            a in proptest::collection::vec(-5.0f64..5.0, 6),
            b in proptest::collection::vec(-5.0f64..5.0, 6),
            u1 in -3.0f64..3.0,
            u2 in -3.0f64..3.0,
        ) {
            let g = grid(3);
            let rho1 = Field { values: a[..3].to_vec() };
            let j1 = Field { values: a[3..].to_vec() };
            let rho2 = Field { values: b[..3].to_vec() };
            let j2 = Field { values: b[3..].to_vec() };
            let sum_rho = Field { values: (0..3).map(|i| rho1[i] + rho2[i]).collect() };
            let sum_j = Field { values: (0..3).map(|i| j1[i] + j2[i]).collect() };

            let g1 = ClosureSet::standard(u1).ghosts(&g, &rho1, &j1).unwrap();
            let g2 = ClosureSet::standard(u2).ghosts(&g, &rho2, &j2).unwrap();
            let gs = ClosureSet::standard(u1 + u2).ghosts(&g, &sum_rho, &sum_j).unwrap();
            let zero_rho = Field::zeros(3);
            let zero_j = Field::zeros(3);
            let g0 = ClosureSet::standard(0.0).ghosts(&g, &zero_rho, &zero_j).unwrap();

            prop_assert!((gs.rho_right - (g1.rho_right + g2.rho_right - g0.rho_right)).abs() < 1e-10);
            prop_assert!((gs.j_right - (g1.j_right + g2.j_right - g0.j_right)).abs() < 1e-10);
            prop_assert!((gs.rho_left - (g1.rho_left + g2.rho_left)).abs() < 1e-12);
            prop_assert!((gs.j_left - (g1.j_left + g2.j_left)).abs() < 1e-12);
        }
    }
}
