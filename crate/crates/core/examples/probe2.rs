// temporary probe: gradient formula vs dt(nu u + p-trace); q-scaling
use gt_control::adjoint::{reference, solve_adjoint};
use gt_control::forward::{solve_forward, ControlSource, PhiSetting, ProblemConfig};
use gt_control::grid::{Field, Grid1D};
use gt_control::relaxation::RelaxationPolicy;
use gt_control::tableau::{builtin_scheme, SchemeCoeffs};

fn cfg(scheme: &str, eps: f64, m: usize, n: usize, t: f64, nu: f64) -> ProblemConfig {
    ProblemConfig {
        scheme: SchemeCoeffs::from_pair(&builtin_scheme(scheme).unwrap()).unwrap(),
        grid: Grid1D::new(m).unwrap(),
        eps, nu, t_final: t, n_steps: n, u_lo: -1e9, u_hi: 1e9,
        relaxation: RelaxationPolicy::Optimal, phi: PhiSetting::Auto,
    }
}

fn main() {
    // (d) gradient vs the classical formula, eps = 0, refining
    for &n in &[20usize, 40, 80] {
        let c = cfg("GSA342", 0.0, n, n, 1.0, 1e-3);
        let rho0 = Field::from_fn(&c.grid, |x| x.cos());
        let j0 = Field::zeros(n);
        let u: Vec<f64> = (0..n).map(|k| 0.3 * ((k as f64) * 0.2).sin()).collect();
        let traj = solve_forward(&c, &rho0, &j0, &ControlSource::PerStep(&u), false).unwrap();
        let rho_d = Field::from_fn(&c.grid, |x| 0.5 * (1.0 - x * x));
        let adj = solve_adjoint(&c, traj.terminal_rho(), &rho_d, false).unwrap();
        let dt = c.dt();
        let alpha = (2.0 - c.grid.dx()) / (2.0 + c.grid.dx());
        // trace of p at x = 1 via ghost extrapolation, at level n and n+1
        let trace = |p: &Field| ((1.0 + alpha) / 2.0) * p[n - 1];
        let mut num = 0.0; let mut den = 0.0;
        let mut num0 = 0.0;
        for k in 0..n {
            let classical_next = dt * trace(&adj.p[k + 1]);
            let classical_cur = dt * trace(&adj.p[k]);
            let mine = adj.boundary_sens[k];
            num += (mine - classical_next).powi(2);
            num0 += (mine - classical_cur).powi(2);
            den += mine.powi(2);
        }
        println!("n={n:3} rel-gap(next)={:.3e} rel-gap(cur)={:.3e}", (num/den).sqrt(), (num0/den).sqrt());
    }
    // (e) q-scaling of the transpose vs the stage-form reference, interior
    for &m in &[20usize, 40, 80] {
        let c = cfg("GSA342", 0.2, m, 40, 0.2, 0.0);
        let rho_t = Field::from_fn(&c.grid, |x| 0.3 * (2.0 * x).cos());
        let zero = Field::zeros(m);
        let (_p_ref, q_ref) = reference::solve(&c, &rho_t, &zero).unwrap();
        let adj = solve_adjoint(&c, &rho_t, &zero, false).unwrap();
        let mut gap = 0.0f64; let mut scale = 0.0f64;
        for i in 2..m-2 {
            gap = gap.max((q_ref[0][i] - adj.q[0][i]).abs());
            scale = scale.max(q_ref[0][i].abs());
        }
        println!("m={m:3} q interior gap={gap:.3e} (scale {scale:.3e})");
    }
}
