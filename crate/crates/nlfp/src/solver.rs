//! Matrix-free GMRES and the Jacobian-free Newton iteration, with analytic
//! (AF) and central-difference (DF) Jacobian-vector products.
//!
//! The Newton step solves `DF[u](du) = -F(u)` with `F(u) = T u - u` and stops
//! when `||du||_p + ||F(u)||_p <= tol`. No preconditioning: the Jacobian is
//! identity-plus-compact-like, so plain GMRES converges in few iterations
//! away from bifurcation points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{norm, Field, NormP};
use crate::models::Problem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmresConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_krylov_dim: usize,
    pub restart: Option<usize>,
}

impl Default for GmresConfig {
    fn default() -> Self {
        Self { rel_tol: 1e-10, abs_tol: 1e-13, max_krylov_dim: 200, restart: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum JvpMode {
    /// Analytic Fréchet derivative of the map.
    Af,
    /// Central difference `(F(u + h phi) - F(u - h phi)) / (2h)`.
    Df { h: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonConfig {
    pub n_iters: usize,
    pub tol: f64,
    pub p: NormP,
    pub jvp: JvpMode,
    pub gmres: GmresConfig,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            n_iters: 20,
            tol: 1e-7,
            p: NormP::Inf,
            jvp: JvpMode::Af,
            gmres: GmresConfig::default(),
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Invalid("Newton tolerance must be positive".into()));
        }
        if let JvpMode::Df { h } = self.jvp {
            if !(h > 0.0) {
                return Err(Error::Invalid("central-difference step must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GmresReport {
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Per-Newton-iteration trace record.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct IterRecord {
    pub iteration: usize,
    pub residual_norm: f64,
    pub step_norm: f64,
    pub gmres_iterations: usize,
    pub mass: f64,
}

#[derive(Debug, Clone)]
pub struct NewtonResult {
    pub solution: Field,
    pub converged: bool,
    pub iterations: usize,
    pub final_residual: f64,
    pub final_step: f64,
    pub history: Vec<IterRecord>,
    /// Set when the iteration stopped for a reason other than the tolerance
    /// test or the iteration cap.
    pub failure: Option<String>,
}

/// Unpreconditioned GMRES on a linear action, stopping at
/// `||A x - b||_2 <= max(rel_tol ||b||_2, abs_tol)`. Restart is optional and
/// off by default. Returns the best iterate with a convergence report.
pub fn gmres_solve(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    rhs: &[f64],
    cfg: &GmresConfig,
) -> (Vec<f64>, GmresReport) {
    let n = rhs.len();
    let target = {
        let b = norm(rhs, NormP::Two);
        (cfg.rel_tol * b).max(cfg.abs_tol)
    };
    let mut x = vec![0.0; n];
    let mut total_iters = 0usize;
    let outer = match cfg.restart {
        Some(_) => 50,
        None => 1,
    };
    let m_max = cfg.restart.unwrap_or(cfg.max_krylov_dim).min(n);
    let mut residual = norm(rhs, NormP::Two);
    for _ in 0..outer {
        // r = b - A x
        let mut r = vec![0.0; n];
        apply(&x, &mut r);
        for (ri, (bi, _)) in r.iter_mut().zip(rhs.iter().zip(0..)) {
            *ri = bi - *ri;
        }
        let beta = norm(&r, NormP::Two);
        residual = beta;
        if beta <= target {
            return (x, GmresReport { residual: beta, iterations: total_iters, converged: true });
        }
        // Arnoldi with Givens rotations on the Hessenberg matrix
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut h: Vec<Vec<f64>> = Vec::new(); // h[j] has j + 2 entries
        let mut cs: Vec<f64> = Vec::new();
        let mut sn: Vec<f64> = Vec::new();
        let mut g = vec![beta];
        let mut converged = false;
        let mut m_used = 0;
        let mut w = vec![0.0; n];
        for j in 0..m_max {
            apply(&basis[j], &mut w);
            let mut hj = vec![0.0; j + 2];
            // modified Gram-Schmidt
            for (i, v) in basis.iter().enumerate() {
                let dot: f64 = w.iter().zip(v).map(|(a, b)| a * b).sum();
                hj[i] = dot;
                for (wk, vk) in w.iter_mut().zip(v) {
                    *wk -= dot * vk;
                }
            }
            let wnorm = norm(&w, NormP::Two);
            hj[j + 1] = wnorm;
            // apply stored rotations
            for i in 0..j {
                let t = cs[i] * hj[i] + sn[i] * hj[i + 1];
                hj[i + 1] = -sn[i] * hj[i] + cs[i] * hj[i + 1];
                hj[i] = t;
            }
            // new rotation to zero hj[j + 1]
            let denom = (hj[j] * hj[j] + hj[j + 1] * hj[j + 1]).sqrt();
            let (c, s) = if denom == 0.0 { (1.0, 0.0) } else { (hj[j] / denom, hj[j + 1] / denom) };
            cs.push(c);
            sn.push(s);
            hj[j] = c * hj[j] + s * hj[j + 1];
            hj[j + 1] = 0.0;
            g.push(-s * g[j]);
            g[j] *= c;
            h.push(hj);
            m_used = j + 1;
            total_iters += 1;
            residual = g[j + 1].abs();
            if residual <= target {
                converged = true;
                break;
            }
            if wnorm <= 1e-300 {
                // happy breakdown: the Krylov space is invariant
                converged = residual <= target;
                break;
            }
            basis.push(w.iter().map(|v| v / wnorm).collect());
        }
        // back-substitution for the least-squares coefficients
        let mut y = vec![0.0; m_used];
        for i in (0..m_used).rev() {
            let mut s = g[i];
            for (k, yk) in y.iter().enumerate().take(m_used).skip(i + 1) {
                s -= h[k][i] * yk;
            }
            y[i] = s / h[i][i];
        }
        for (i, yi) in y.iter().enumerate() {
            for (xk, vk) in x.iter_mut().zip(&basis[i]) {
                *xk += yi * vk;
            }
        }
        if converged {
            return (
                x,
                GmresReport { residual, iterations: total_iters, converged: true },
            );
        }
    }
    (x, GmresReport { residual, iterations: total_iters, converged: residual <= target })
}

/// Central-difference Jacobian-vector product of a map `f` at `u` in the
/// direction `phi`: `(f(u + h phi) - f(u - h phi)) / (2h)`.
pub fn central_difference_jvp(
    f: impl Fn(&Field) -> Result<Field>,
    u: &Field,
    phi: &Field,
    h: f64,
) -> Result<Field> {
    if !(h > 0.0) {
        return Err(Error::Invalid("central-difference step must be positive".into()));
    }
    let up = f(&(u + &(phi * h)))?;
    let um = f(&(u - &(phi * h)))?;
    let out = &(&up - &um) * (1.0 / (2.0 * h));
    if !out.is_finite() {
        return Err(Error::NonFinite("central-difference JVP".into()));
    }
    Ok(out)
}

/// Newton iteration for the fixed-point residual `F(u) = T u - u`.
pub fn newton_solve(problem: &Problem, u0: &Field, cfg: &NewtonConfig) -> Result<NewtonResult> {
    cfg.validate()?;
    if u0.grid() != problem.grid() {
        return Err(Error::GridMismatch { context: "initial guess grid".into() });
    }
    let mut u = u0.clone();
    let mut step_norm = 0.0f64;
    let mut history: Vec<IterRecord> = Vec::new();
    let mut failure = None;
    let mut converged = false;
    let mut residual_norm = f64::INFINITY;

    for it in 0..=cfg.n_iters {
        let tu = problem.apply(&u)?;
        let f = &tu - &u;
        if !f.is_finite() {
            return Err(Error::NewtonAbort(format!("non-finite residual at iteration {it}")));
        }
        residual_norm = norm(f.values(), cfg.p);
        let mass = crate::grid::integrate(&u).unwrap_or(f64::NAN);
        if step_norm + residual_norm <= cfg.tol {
            history.push(IterRecord {
                iteration: it,
                residual_norm,
                step_norm,
                gmres_iterations: 0,
                mass,
            });
            converged = true;
            break;
        }
        if it == cfg.n_iters {
            break;
        }
        let rhs: Vec<f64> = f.values().iter().map(|v| -v).collect();
        let grid = u.grid().clone();
        let apply_jac: Box<dyn FnMut(&[f64], &mut [f64])> = match cfg.jvp {
            JvpMode::Af => {
                let u_ref = &u;
                let tu_ref = &tu;
                Box::new(move |phi: &[f64], out: &mut [f64]| {
                    let phi_f = Field::new(grid.clone(), phi.to_vec()).expect("phi shape");
                    let d = problem
                        .frechet(u_ref, tu_ref, &phi_f)
                        .expect("Fréchet action");
                    for ((o, d), p) in out.iter_mut().zip(d.values()).zip(phi) {
                        *o = d - p;
                    }
                })
            }
            JvpMode::Df { h } => {
                let u_ref = &u;
                Box::new(move |phi: &[f64], out: &mut [f64]| {
                    let phi_f = Field::new(grid.clone(), phi.to_vec()).expect("phi shape");
                    let d = central_difference_jvp(
                        |v| problem.residual(v),
                        u_ref,
                        &phi_f,
                        h,
                    )
                    .expect("central-difference JVP");
                    out.copy_from_slice(d.values());
                })
            }
        };
        let (delta, report) = gmres_solve(apply_jac, &rhs, &cfg.gmres);
        history.push(IterRecord {
            iteration: it,
            residual_norm,
            step_norm,
            gmres_iterations: report.iterations,
            mass,
        });
        if !report.converged {
            failure = Some(format!(
                "GMRES stagnated at iteration {it}: residual {:.3e} after {} Krylov steps",
                report.residual, report.iterations
            ));
            break;
        }
        step_norm = norm(&delta, cfg.p);
        for (ui, di) in u.values_mut().iter_mut().zip(&delta) {
            *ui += di;
        }
        if !u.is_finite() {
            return Err(Error::NewtonAbort(format!("non-finite iterate at iteration {it}")));
        }
    }

    Ok(NewtonResult {
        iterations: history.len().saturating_sub(usize::from(converged)),
        solution: u,
        converged,
        final_residual: residual_norm,
        final_step: step_norm,
        history,
        failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{sub_norm, GridSpec};
    use crate::kernels::KernelSpec;
    use crate::models::ProblemSpec;
    use crate::reference::kuramoto_reference;
    use std::f64::consts::PI;

    fn dense_apply(a: &[Vec<f64>]) -> impl FnMut(&[f64], &mut [f64]) + '_ {
        move |x: &[f64], out: &mut [f64]| {
            for (i, row) in a.iter().enumerate() {
                out[i] = row.iter().zip(x).map(|(r, v)| r * v).sum();
            }
        }
    }

    fn lu_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        // plain Gaussian elimination with partial pivoting (test oracle)
        let n = b.len();
        let mut m: Vec<Vec<f64>> = a.to_vec();
        let mut x = b.to_vec();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
            m.swap(col, piv);
            x.swap(col, piv);
            for row in col + 1..n {
                let f = m[row][col] / m[col][col];
                for k in col..n {
                    m[row][k] -= f * m[col][k];
                }
                x[row] -= f * x[col];
            }
        }
        for col in (0..n).rev() {
            x[col] /= m[col][col];
            for row in 0..col {
                x[row] -= m[row][col] * x[col];
            }
        }
        x
    }

    fn rand_mat(n: usize, seed: u64, scale: f64) -> Vec<Vec<f64>> {
        let mut state = seed;
        let mut next = move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| if i == j { 1.0 + scale * next() } else { scale * next() })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn gmres_identity_in_one_iteration() {
        let b = vec![1.0, -2.0, 3.0];
        let (x, rep) = gmres_solve(
            |v, out| out.copy_from_slice(v),
            &b,
            &GmresConfig::default(),
        );
        assert!(rep.converged);
        assert_eq!(rep.iterations, 1);
        assert!(sub_norm(&x, &b, NormP::Inf) <= 1e-12);
    }

    #[test]
    fn gmres_diagonal() {
        let b = vec![2.0, 8.0];
        let (x, rep) = gmres_solve(
            |v, out| {
                out[0] = 2.0 * v[0];
                out[1] = 4.0 * v[1];
            },
            &b,
            &GmresConfig::default(),
        );
        assert!(rep.converged);
        assert!(sub_norm(&x, &[1.0, 2.0], NormP::Inf) <= 1e-12);
    }

    #[test]
    fn gmres_matches_dense_solve() {
        let n = 50;
        let a = rand_mat(n, 42, 0.1);
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let (x, rep) = gmres_solve(dense_apply(&a), &b, &GmresConfig::default());
        assert!(rep.converged, "residual {:.3e}", rep.residual);
        let oracle = lu_solve(&a, &b);
        assert!(sub_norm(&x, &oracle, NormP::Inf) <= 1e-8);
    }

    #[test]
    fn gmres_spd_matches_conjugate_gradient_oracle() {
        let n = 40;
        let raw = rand_mat(n, 7, 0.3);
        // A = R^T R + I is SPD
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                a[i][j] = (0..n).map(|k| raw[k][i] * raw[k][j]).sum::<f64>()
                    + if i == j { 1.0 } else { 0.0 };
            }
        }
        let b: Vec<f64> = (0..n).map(|i| ((i * i) as f64 * 0.13).cos()).collect();
        // conjugate-gradient oracle
        let mut x = vec![0.0; n];
        let mut r = b.clone();
        let mut p = r.clone();
        let mut rs: f64 = r.iter().map(|v| v * v).sum();
        for _ in 0..4 * n {
            let mut ap = vec![0.0; n];
            for i in 0..n {
                ap[i] = a[i].iter().zip(&p).map(|(m, v)| m * v).sum();
            }
            let alpha = rs / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rs_new: f64 = r.iter().map(|v| v * v).sum();
            if rs_new.sqrt() < 1e-14 {
                break;
            }
            let beta = rs_new / rs;
            rs = rs_new;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
        }
        let (g, rep) = gmres_solve(dense_apply(&a), &b, &GmresConfig::default());
        assert!(rep.converged);
        assert!(sub_norm(&g, &x, NormP::Inf) <= 1e-8);
    }

    #[test]
    fn gmres_reports_stagnation_when_dimension_exhausted() {
        let n = 30;
        let a = rand_mat(n, 9, 0.4);
        let b: Vec<f64> = (0..n).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let cfg = GmresConfig { max_krylov_dim: 3, ..GmresConfig::default() };
        let (_, rep) = gmres_solve(dense_apply(&a), &b, &cfg);
        assert!(!rep.converged);
        assert!(rep.iterations == 3);
    }

    #[test]
    fn gmres_with_restart_still_converges() {
        let n = 40;
        let a = rand_mat(n, 12, 0.05);
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let cfg = GmresConfig { restart: Some(8), ..GmresConfig::default() };
        let (x, rep) = gmres_solve(dense_apply(&a), &b, &cfg);
        assert!(rep.converged, "residual {:.3e}", rep.residual);
        let oracle = lu_solve(&a, &b);
        assert!(sub_norm(&x, &oracle, NormP::Inf) <= 1e-7);
    }

    #[test]
    fn central_difference_exact_for_linear_and_quadratic() {
        let grid = GridSpec::torus_pi(65).unwrap();
        let u = Field::constant(&grid, 1.0);
        let phi = Field::constant(&grid, 1.0);
        // linear map: exact for any h
        let lin = |v: &Field| Ok(v * 3.0);
        for h in [1e-1, 1e-5, 1e-9] {
            let d = central_difference_jvp(lin, &u, &phi, h).unwrap();
            for v in d.values() {
                assert!((v - 3.0).abs() <= 1e-9);
            }
        }
        // elementwise square at u = 1, phi = 1: derivative 2, exact for any h
        let sq = |v: &Field| Ok(v.map(|x| x * x));
        for h in [0.5, 1e-3, 1e-6] {
            let d = central_difference_jvp(sq, &u, &phi, h).unwrap();
            for v in d.values() {
                assert!((v - 2.0).abs() <= 1e-9, "h = {h}");
            }
        }
    }

    fn kuramoto_problem(kappa: f64, n: usize) -> Problem {
        Problem::new(ProblemSpec::Mv1d {
            kappa,
            sigma: 1.0,
            kernel: KernelSpec::CosineModes { modes: vec![(1.0, 1)] },
            grid: GridSpec::torus_pi(n).unwrap(),
        })
        .unwrap()
    }

    #[test]
    fn newton_on_a_root_stops_immediately() {
        let p = kuramoto_problem(2.0, 201);
        let u0 = Field::constant(p.grid(), 1.0 / PI);
        let res = newton_solve(&p, &u0, &NewtonConfig::default()).unwrap();
        assert!(res.converged);
        assert!(res.iterations <= 1);
        let err = sub_norm(res.solution.values(), u0.values(), NormP::Inf);
        assert!(err <= 1e-12);
    }

    #[test]
    fn newton_recovers_kuramoto_state_af() {
        let p = kuramoto_problem(3.0, 501);
        let u0 = Field::from_fn_1d(p.grid(), |x| 1.0 / PI + (2.0 * x).cos());
        let res = newton_solve(&p, &u0, &NewtonConfig::default()).unwrap();
        assert!(res.converged, "history: {:?}", res.history);
        let reference = kuramoto_reference(3.0, 1, p.grid()).unwrap().field;
        let err = sub_norm(res.solution.values(), reference.values(), NormP::Inf);
        assert!(err <= 1e-6, "err = {err:.3e}");
        // stopping test: step + residual below tolerance
        assert!(res.final_step + res.final_residual <= 1e-7);
    }

    #[test]
    fn newton_af_and_df_agree() {
        let p = kuramoto_problem(3.0, 501);
        let u0 = Field::from_fn_1d(p.grid(), |x| 1.0 / PI + (2.0 * x).cos());
        let af = newton_solve(&p, &u0, &NewtonConfig::default()).unwrap();
        let df_cfg = NewtonConfig { jvp: JvpMode::Df { h: 1e-5 }, ..NewtonConfig::default() };
        let df = newton_solve(&p, &u0, &df_cfg).unwrap();
        assert!(df.converged);
        let diff = sub_norm(af.solution.values(), df.solution.values(), NormP::Inf);
        assert!(diff <= 1e-5, "AF/DF difference {diff:.3e}");
    }

    #[test]
    fn newton_residual_decreases_near_convergence() {
        let p = kuramoto_problem(3.0, 501);
        let u0 = Field::from_fn_1d(p.grid(), |x| 1.0 / PI + (2.0 * x).cos());
        let res = newton_solve(&p, &u0, &NewtonConfig::default()).unwrap();
        let h = &res.history;
        assert!(h.len() >= 3);
        for w in h[h.len().saturating_sub(3)..].windows(2) {
            assert!(w[1].residual_norm < w[0].residual_norm);
        }
    }

    #[test]
    fn df_error_decays_quadratically_then_floors() {
        // JVP error vs the analytic action: h^2 decay until the rounding
        // floor takes over for very small h
        let p = kuramoto_problem(3.0, 257);
        let u = Field::from_fn_1d(p.grid(), |x| 1.0 / PI + 0.3 * (2.0 * x).cos());
        let tu = p.apply(&u).unwrap();
        let phi = Field::from_fn_1d(p.grid(), |x| (4.0 * x).cos() - 0.4 * (2.0 * x).sin() + 0.2);
        let exact = p.frechet(&u, &tu, &phi).unwrap();
        let mut errs = Vec::new();
        for h in [1e-2, 1e-3, 1e-4] {
            let d = central_difference_jvp(|v| p.residual(v), &u, &phi, h).unwrap();
            // compare against DT - I applied to phi
            let want = &exact - &phi;
            errs.push(sub_norm(d.values(), want.values(), NormP::Inf));
        }
        let r1 = errs[0] / errs[1];
        let r2 = errs[1] / errs[2];
        assert!(r1 > 50.0 && r1 < 200.0, "decade ratio {r1}");
        assert!(r2 > 50.0 && r2 < 200.0, "decade ratio {r2}");
        // far below the truncation-dominated regime the error is worse than
        // at a moderate step
        let tiny = central_difference_jvp(|v| p.residual(v), &u, &phi, 1e-12).unwrap();
        let want = &exact - &phi;
        let err_tiny = sub_norm(tiny.values(), want.values(), NormP::Inf);
        let mid = central_difference_jvp(|v| p.residual(v), &u, &phi, 1e-5).unwrap();
        let err_mid = sub_norm(mid.values(), want.values(), NormP::Inf);
        assert!(err_tiny > err_mid, "tiny-h {err_tiny:.3e} vs mid-h {err_mid:.3e}");
    }
}
