//! Infinite-horizon LQR around the goal state: numerical linearization,
//! continuous algebraic Riccati solve, and the resulting clamped linear
//! policy.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{ControlSystem, Controller, DynamicsError, Policy};

const FD_STEP: f64 = 1e-5;

/// Central finite-difference Jacobians of `f` at `(x0, u0)`.
pub fn linearize(
    system: &ControlSystem,
    x0: &[f64],
    u0: &[f64],
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = system.state_dim;
    let m = system.control_dim;
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, m);
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for j in 0..n {
        let mut xp = x0.to_vec();
        let mut xm = x0.to_vec();
        xp[j] += FD_STEP;
        xm[j] -= FD_STEP;
        system.eval(&xp, u0, &mut fp);
        system.eval(&xm, u0, &mut fm);
        for i in 0..n {
            a[(i, j)] = (fp[i] - fm[i]) / (2.0 * FD_STEP);
        }
    }
    for j in 0..m {
        let mut up = u0.to_vec();
        let mut um = u0.to_vec();
        up[j] += FD_STEP;
        um[j] -= FD_STEP;
        system.eval(x0, &up, &mut fp);
        system.eval(x0, &um, &mut fm);
        for i in 0..n {
            b[(i, j)] = (fp[i] - fm[i]) / (2.0 * FD_STEP);
        }
    }
    (a, b)
}

/// Steady input at the goal: a few Gauss-Newton steps on `|f(goal, u)|`,
/// clamped into the control bounds.
fn steady_input(system: &ControlSystem) -> Vec<f64> {
    let n = system.state_dim;
    let mut u = vec![0.0; system.control_dim];
    system.control_bounds.clamp(&mut u);
    let mut fx = vec![0.0; n];
    for _ in 0..20 {
        system.eval(&system.goal, &u, &mut fx);
        let norm: f64 = fx.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            break;
        }
        let (_, b) = linearize(system, &system.goal, &u);
        let rhs = DVector::from_column_slice(&fx);
        let svd = b.svd(true, true);
        match svd.solve(&rhs, 1e-10) {
            Ok(du) => {
                for (ui, d) in u.iter_mut().zip(du.iter()) {
                    *ui -= d;
                }
                system.control_bounds.clamp(&mut u);
            }
            Err(_) => break,
        }
    }
    u
}

/// Residual `A'P + PA - P B R^-1 B' P + Q` of the continuous algebraic
/// Riccati equation.
pub fn care_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r_inv: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    let res = a.transpose() * p + p * a - p * b * r_inv * b.transpose() * p + q;
    res.norm()
}

/// Solve the Lyapunov equation `A' P + P A = -Q` by Kronecker vectorization.
fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    let m = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_column_slice((-q).as_slice());
    let sol = m.lu().solve(&rhs)?;
    Some(DMatrix::from_column_slice(n, n, sol.as_slice()))
}

/// Stabilizing solution of the continuous algebraic Riccati equation:
/// integrate the Riccati ODE from `P = 0` until near stationarity, then
/// polish with Newton-Kleinman iterations (each one a Lyapunov solve).
pub fn solve_care(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>, DynamicsError> {
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| DynamicsError::InvalidParameter("R is not invertible".into()))?;
    let n = a.nrows();
    let deriv = |p: &DMatrix<f64>| -> DMatrix<f64> {
        a.transpose() * p + p * a - p * b * &r_inv * b.transpose() * p + q
    };
    let mut p = DMatrix::<f64>::zeros(n, n);
    let dt = 1e-3;
    let mut converged = false;
    for _ in 0..200_000 {
        let k1 = deriv(&p);
        if k1.norm() < 1e-6 {
            converged = true;
            break;
        }
        let k2 = deriv(&(&p + &k1 * (dt / 2.0)));
        let k3 = deriv(&(&p + &k2 * (dt / 2.0)));
        let k4 = deriv(&(&p + &k3 * dt));
        p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        if !p.iter().all(|v| v.is_finite()) {
            return Err(DynamicsError::RiccatiDiverged {
                residual: f64::INFINITY,
            });
        }
    }
    if !converged {
        let res = care_residual(a, b, q, &r_inv, &p);
        if !(res < 1e-2) {
            return Err(DynamicsError::RiccatiDiverged { residual: res });
        }
    }
    // Newton-Kleinman polish.
    for _ in 0..60 {
        let k = &r_inv * b.transpose() * &p;
        let ac = a - b * &k;
        let qk = q + k.transpose() * r * &k;
        match solve_lyapunov(&ac, &qk) {
            Some(next) => {
                let sym = (&next + next.transpose()) * 0.5;
                let diff = (&sym - &p).norm();
                p = sym;
                if diff < 1e-12 {
                    break;
                }
            }
            None => break,
        }
    }
    let residual = care_residual(a, b, q, &r_inv, &p);
    if residual > 1e-8 {
        return Err(DynamicsError::RiccatiDiverged { residual });
    }
    // The stabilizing solution must close the loop in the left half plane.
    let k = &r_inv * b.transpose() * &p;
    let ac = a - b * k;
    let stable = ac
        .complex_eigenvalues()
        .iter()
        .all(|ev| ev.re < 0.0);
    if !stable {
        return Err(DynamicsError::RiccatiDiverged { residual });
    }
    Ok(p)
}

struct LqrPolicy {
    k: DMatrix<f64>,
    goal: Vec<f64>,
    periodic: Vec<bool>,
    periods: Vec<f64>,
}

impl Policy for LqrPolicy {
    fn eval(&self, x: &[f64], u: &mut [f64]) {
        let n = self.goal.len();
        let mut err = DVector::zeros(n);
        for i in 0..n {
            let mut e = x[i] - self.goal[i];
            if self.periodic[i] {
                e = e.rem_euclid(self.periods[i]);
                if e >= self.periods[i] / 2.0 {
                    e -= self.periods[i];
                }
            }
            err[i] = e;
        }
        let out = -&self.k * err;
        for (ui, v) in u.iter_mut().zip(out.iter()) {
            *ui = *v;
        }
    }
}

/// Summary of the Riccati solve backing an LQR controller, for verification.
pub struct LqrSolution {
    pub controller: Controller,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub residual: f64,
}

/// Build an LQR controller by linearizing the plant at its goal and solving
/// the continuous algebraic Riccati equation; `u(x) = clamp(-K (x - goal))`
/// with shortest-angle differencing on periodic dimensions.
pub fn lqr_controller(
    system: &ControlSystem,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
) -> Result<LqrSolution, DynamicsError> {
    let u0 = steady_input(system);
    let (a, b) = linearize(system, &system.goal, &u0);
    let p = solve_care(&a, &b, &q, &r)?;
    let r_inv = r.clone().try_inverse().unwrap();
    let residual = care_residual(&a, &b, &q, &r_inv, &p);
    let k = &r_inv * b.transpose() * &p;
    let periods: Vec<f64> = (0..system.state_dim)
        .map(|i| system.state_bounds.hi[i] - system.state_bounds.lo[i])
        .collect();
    let controller = Controller::new(
        Arc::new(LqrPolicy {
            k: k.clone(),
            goal: system.goal.clone(),
            periodic: system.periodic.clone(),
            periods,
        }),
        system.control_bounds.clone(),
        "lqr",
    );
    Ok(LqrSolution {
        controller,
        a,
        b,
        k,
        p,
        residual,
    })
}
