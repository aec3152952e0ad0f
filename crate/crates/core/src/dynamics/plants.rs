//! The benchmark plants: pendulum, Ackermann car, Acrobot, plus linear test
//! systems used by the verification suites.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::grid::Orthotope;

use super::{ControlSystem, DynamicsError};

#[derive(Debug, Clone)]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub beta: f64,
    pub torque_limit: f64,
    /// Literal-replication switch: apply the friction term to the angle
    /// instead of the angular velocity.
    pub friction_on_angle: bool,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            length: 1.0,
            gravity: 1.0,
            beta: 0.1,
            torque_limit: 0.6372,
            friction_on_angle: false,
        }
    }
}

/// Torque-limited pendulum around the upright equilibrium:
/// `m l^2 θ'' = m G l sin θ - β θ' + u`, state `(θ, θ')` with θ periodic on
/// `[-π, π]` and `θ' ∈ [-2π, 2π]`, goal `(0, 0)`.
pub fn pendulum_system(params: PendulumParams) -> Result<ControlSystem, DynamicsError> {
    if !(params.mass > 0.0) || !(params.length > 0.0) {
        return Err(DynamicsError::InvalidParameter(
            "pendulum mass and length must be positive".into(),
        ));
    }
    let PendulumParams {
        mass: m,
        length: l,
        gravity: g,
        beta,
        torque_limit,
        friction_on_angle,
    } = params;
    let inertia = m * l * l;
    let field = Arc::new(move |x: &[f64], u: &[f64], dx: &mut [f64]| {
        let (theta, omega) = (x[0], x[1]);
        let friction = if friction_on_angle { beta * theta } else { beta * omega };
        dx[0] = omega;
        dx[1] = (m * g * l * theta.sin() - friction + u[0]) / inertia;
    });
    Ok(ControlSystem::new(
        "pendulum",
        Orthotope::new(vec![-PI, -2.0 * PI], vec![PI, 2.0 * PI]).unwrap(),
        Orthotope::new(vec![-torque_limit], vec![torque_limit]).unwrap(),
        vec![0.0, 0.0],
        vec![true, false],
        field,
    ))
}

#[derive(Debug, Clone)]
pub struct AckermannParams {
    pub wheelbase: f64,
}

impl Default for AckermannParams {
    fn default() -> Self {
        Self { wheelbase: 1.0 }
    }
}

/// First-order car with Ackermann steering and forward-only velocities:
/// state `(x, y, θ)`, controls `(δ, v)`, kinematics `x' = v cos θ`,
/// `y' = v sin θ`, `θ' = (v / W) tan δ`, goal `(0, 0, π/2)`.
pub fn ackermann_system(params: AckermannParams) -> Result<ControlSystem, DynamicsError> {
    if !(params.wheelbase > 0.0) {
        return Err(DynamicsError::InvalidParameter(
            "wheelbase must be positive".into(),
        ));
    }
    let w = params.wheelbase;
    let field = Arc::new(move |x: &[f64], u: &[f64], dx: &mut [f64]| {
        let theta = x[2];
        let (delta, v) = (u[0], u[1]);
        dx[0] = v * theta.cos();
        dx[1] = v * theta.sin();
        dx[2] = v / w * delta.tan();
    });
    Ok(ControlSystem::new(
        "ackermann",
        Orthotope::new(vec![-10.0, -10.0, -PI], vec![10.0, 10.0, PI]).unwrap(),
        Orthotope::new(vec![-1.05, 0.0], vec![1.05, 30.0]).unwrap(),
        vec![0.0, 0.0, PI / 2.0],
        vec![false, false, true],
        field,
    ))
}

#[derive(Debug, Clone)]
pub struct AcrobotParams {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub l2: f64,
    pub lc1: f64,
    pub lc2: f64,
    pub i1: f64,
    pub i2: f64,
    pub gravity: f64,
    pub torque_limit: f64,
}

impl Default for AcrobotParams {
    fn default() -> Self {
        Self {
            m1: 1.0,
            m2: 1.0,
            l1: 1.0,
            l2: 1.0,
            lc1: 0.5,
            lc2: 0.5,
            i1: 1.0 / 12.0,
            i2: 1.0 / 12.0,
            gravity: 9.8,
            torque_limit: 14.0,
        }
    }
}

/// Two-link underactuated Acrobot with torque on the second joint. Angles are
/// measured from the downward vertical (`q1`) and relative to the first link
/// (`q2`), both periodic; state `(q1, q2, q1', q2')` bounded by
/// `[0, 2π] × [-π, π] × [-6, 6]^2`, goal `(0, π, 0, 0)`.
pub fn acrobot_system(params: AcrobotParams) -> Result<ControlSystem, DynamicsError> {
    if !(params.m1 > 0.0 && params.m2 > 0.0 && params.l1 > 0.0 && params.l2 > 0.0) {
        return Err(DynamicsError::InvalidParameter(
            "acrobot masses and lengths must be positive".into(),
        ));
    }
    let p = params.clone();
    let field = Arc::new(move |x: &[f64], u: &[f64], dx: &mut [f64]| {
        let (q1, q2, v1, v2) = (x[0], x[1], x[2], x[3]);
        let c2 = q2.cos();
        let s2 = q2.sin();
        let d11 = p.m1 * p.lc1 * p.lc1
            + p.m2 * (p.l1 * p.l1 + p.lc2 * p.lc2 + 2.0 * p.l1 * p.lc2 * c2)
            + p.i1
            + p.i2;
        let d12 = p.m2 * (p.lc2 * p.lc2 + p.l1 * p.lc2 * c2) + p.i2;
        let d22 = p.m2 * p.lc2 * p.lc2 + p.i2;
        let h = -p.m2 * p.l1 * p.lc2 * s2;
        let c1 = 2.0 * h * v1 * v2 + h * v2 * v2;
        let c2t = -h * v1 * v1;
        let g1 = (p.m1 * p.lc1 + p.m2 * p.l1) * p.gravity * q1.sin()
            + p.m2 * p.lc2 * p.gravity * (q1 + q2).sin();
        let g2 = p.m2 * p.lc2 * p.gravity * (q1 + q2).sin();
        let rhs1 = -c1 - g1;
        let rhs2 = u[0] - c2t - g2;
        let det = d11 * d22 - d12 * d12;
        let a1 = (d22 * rhs1 - d12 * rhs2) / det;
        let a2 = (-d12 * rhs1 + d11 * rhs2) / det;
        dx[0] = v1;
        dx[1] = v2;
        dx[2] = a1;
        dx[3] = a2;
    });
    Ok(ControlSystem::new(
        "acrobot",
        Orthotope::new(vec![0.0, -PI, -6.0, -6.0], vec![2.0 * PI, PI, 6.0, 6.0]).unwrap(),
        Orthotope::new(vec![-params.torque_limit], vec![params.torque_limit]).unwrap(),
        vec![0.0, PI, 0.0, 0.0],
        vec![true, true, false, false],
        field,
    ))
}

/// Mass matrix of the Acrobot at relative elbow angle `q2`; used by the LQR
/// linearization checks and by energy oracles.
pub fn acrobot_mass_matrix(params: &AcrobotParams, q2: f64) -> [[f64; 2]; 2] {
    let c2 = q2.cos();
    let d11 = params.m1 * params.lc1 * params.lc1
        + params.m2 * (params.l1 * params.l1 + params.lc2 * params.lc2 + 2.0 * params.l1 * params.lc2 * c2)
        + params.i1
        + params.i2;
    let d12 = params.m2 * (params.lc2 * params.lc2 + params.l1 * params.lc2 * c2) + params.i2;
    let d22 = params.m2 * params.lc2 * params.lc2 + params.i2;
    [[d11, d12], [d12, d22]]
}

/// Diagonal linear plant `x_i' = a_i x_i` on `[-half_width, half_width]^n`
/// with a single ignored control channel. Used as a test plant with an
/// analytically known Lipschitz constant `exp(max a_i · τ)`.
pub fn linear_test_system(rates: Vec<f64>, half_width: f64) -> ControlSystem {
    let n = rates.len();
    let field = Arc::new(move |x: &[f64], _u: &[f64], dx: &mut [f64]| {
        for (i, &a) in rates.iter().enumerate() {
            dx[i] = a * x[i];
        }
    });
    ControlSystem::new(
        "linear",
        Orthotope::new(vec![-half_width; n], vec![half_width; n]).unwrap(),
        Orthotope::new(vec![-1.0], vec![1.0]).unwrap(),
        vec![0.0; n],
        vec![false; n],
        field,
    )
}

/// Planar spiral sink `x' = -a x - ω y`, `y' = ω x - a y` on
/// `[-half_width, half_width]²` with an ignored control channel. The time-τ
/// map is a rotation times the contraction `exp(-a τ)`, so its Lipschitz
/// constant is exactly `exp(-a τ)`; the rotation keeps cube images from
/// overlapping their own cube away from the origin.
pub fn spiral_test_system(decay: f64, omega: f64, half_width: f64) -> ControlSystem {
    let field = Arc::new(move |x: &[f64], _u: &[f64], dx: &mut [f64]| {
        dx[0] = -decay * x[0] - omega * x[1];
        dx[1] = omega * x[0] - decay * x[1];
    });
    ControlSystem::new(
        "spiral",
        Orthotope::new(vec![-half_width; 2], vec![half_width; 2]).unwrap(),
        Orthotope::new(vec![-1.0], vec![1.0]).unwrap(),
        vec![0.0, 0.0],
        vec![false, false],
        field,
    )
}
