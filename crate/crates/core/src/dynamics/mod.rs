//! Plants, controllers and the numerically integrated time-τ map.
//!
//! This is the only module that touches differential equations. Everything
//! downstream treats the closed loop as a black-box discrete map.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

use crate::grid::Orthotope;

pub mod controllers;
pub mod lqr;
pub mod plants;

pub use controllers::{
    constant_controller, corke_controller, hybrid_controller, tabulated_controller,
    zero_controller, CorkeGains, SwitchPredicate, TabulatedTable,
};
pub use lqr::{lqr_controller, LqrSolution};
pub use plants::{
    ackermann_system, acrobot_mass_matrix, acrobot_system, linear_test_system, pendulum_system,
    spiral_test_system, AckermannParams, AcrobotParams, PendulumParams,
};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("non-finite state encountered at integration step {step}")]
    NonFinite { step: usize },
    #[error("tau/step = {0} does not round to a positive integer number of steps")]
    BadStepRatio(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("singular mass matrix at state {0:?}")]
    SingularMassMatrix(Vec<f64>),
    #[error("Riccati iteration did not converge (residual {residual:.3e}); (A,B) may not be stabilizable")]
    RiccatiDiverged { residual: f64 },
    #[error("controller gains violate validity conditions: {0}")]
    InvalidGains(String),
    #[error("malformed controller table: {0}")]
    MalformedTable(String),
    #[error("controller table dimensions do not match the system")]
    TableDimMismatch,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
}

type VectorFieldFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;

/// A controlled plant: `dx/dt = f(x, u)` restricted to an orthotope state
/// space with per-dimension periodicity, plus the task goal.
#[derive(Clone)]
pub struct ControlSystem {
    pub name: String,
    pub state_dim: usize,
    pub control_dim: usize,
    pub state_bounds: Orthotope,
    pub control_bounds: Orthotope,
    pub goal: Vec<f64>,
    pub periodic: Vec<bool>,
    field: VectorFieldFn,
}

impl ControlSystem {
    pub fn new(
        name: impl Into<String>,
        state_bounds: Orthotope,
        control_bounds: Orthotope,
        goal: Vec<f64>,
        periodic: Vec<bool>,
        field: VectorFieldFn,
    ) -> Self {
        let state_dim = state_bounds.dims();
        let control_dim = control_bounds.dims();
        assert_eq!(goal.len(), state_dim);
        assert_eq!(periodic.len(), state_dim);
        Self {
            name: name.into(),
            state_dim,
            control_dim,
            state_bounds,
            control_bounds,
            goal,
            periodic,
            field,
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        (self.field)(x, u, dx)
    }

    /// Wrap periodic components into `[lower, upper)` in place.
    pub fn wrap(&self, x: &mut [f64]) {
        wrap_components(&self.state_bounds, &self.periodic, x);
    }

    /// Periodic-aware Euclidean distance in the state space.
    pub fn geodesic_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        geodesic_distance(&self.state_bounds, &self.periodic, a, b)
    }

    /// Shortest-difference `a - b`, geodesic along periodic dimensions.
    pub fn state_error(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        (0..self.state_dim)
            .map(|i| {
                let mut e = a[i] - b[i];
                if self.periodic[i] {
                    let per = self.state_bounds.hi[i] - self.state_bounds.lo[i];
                    e = e.rem_euclid(per);
                    if e >= per / 2.0 {
                        e -= per;
                    }
                }
                e
            })
            .collect()
    }
}

pub fn wrap_components(bounds: &Orthotope, periodic: &[bool], x: &mut [f64]) {
    for i in 0..x.len() {
        if periodic[i] {
            let per = bounds.hi[i] - bounds.lo[i];
            let mut v = (x[i] - bounds.lo[i]).rem_euclid(per) + bounds.lo[i];
            if v >= bounds.hi[i] {
                v = bounds.lo[i];
            }
            x[i] = v;
        }
    }
}

pub fn geodesic_distance(bounds: &Orthotope, periodic: &[bool], a: &[f64], b: &[f64]) -> f64 {
    let mut sum = 0.0;
    for i in 0..a.len() {
        let mut d = (a[i] - b[i]).abs();
        if periodic[i] {
            let per = bounds.hi[i] - bounds.lo[i];
            d = d.rem_euclid(per);
            d = d.min(per - d);
        }
        sum += d * d;
    }
    sum.sqrt()
}

/// State-feedback control policy. Implementations must be pure and reentrant.
pub trait Policy: Send + Sync {
    fn eval(&self, x: &[f64], u: &mut [f64]);
}

/// A policy together with the control bounds it is clamped into.
#[derive(Clone)]
pub struct Controller {
    policy: Arc<dyn Policy>,
    bounds: Orthotope,
    pub label: String,
}

impl Controller {
    pub fn new(policy: Arc<dyn Policy>, bounds: Orthotope, label: impl Into<String>) -> Self {
        Self {
            policy,
            bounds,
            label: label.into(),
        }
    }

    /// Evaluate the policy at `x`, clamping componentwise into the control
    /// bounds.
    #[inline]
    pub fn control_into(&self, x: &[f64], u: &mut [f64]) {
        self.policy.eval(x, u);
        self.bounds.clamp(u);
    }

    pub fn control(&self, x: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.bounds.dims()];
        self.control_into(x, &mut u);
        u
    }

    /// The policy output before clamping.
    pub fn raw_control(&self, x: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.bounds.dims()];
        self.policy.eval(x, &mut u);
        u
    }
}

/// The time-τ map of the closed loop: classical RK4 with a fixed step, the
/// control recomputed at every integration substage. Integration steps are
/// tallied in a shared counter (clones share it; use `fork_counter` for an
/// independent tally).
#[derive(Clone)]
pub struct TimeTauMap {
    pub system: ControlSystem,
    pub controller: Controller,
    pub tau: f64,
    pub step: f64,
    n_steps: usize,
    counter: Arc<AtomicU64>,
}

impl TimeTauMap {
    pub fn new(
        system: ControlSystem,
        controller: Controller,
        tau: f64,
        step: f64,
    ) -> Result<Self, DynamicsError> {
        if !(tau > 0.0) || !(step > 0.0) {
            return Err(DynamicsError::InvalidParameter(
                "tau and step must be positive".into(),
            ));
        }
        let ratio = tau / step;
        let n_steps = ratio.round();
        if n_steps < 1.0 || (ratio - n_steps).abs() > 1e-6 * ratio.max(1.0) {
            return Err(DynamicsError::BadStepRatio(ratio));
        }
        Ok(Self {
            system,
            controller,
            tau,
            step,
            n_steps: n_steps as usize,
            counter: Arc::new(AtomicU64::new(0)),
        })
    }

    pub fn steps_per_propagation(&self) -> usize {
        self.n_steps
    }

    pub fn steps_performed(&self) -> u64 {
        self.counter.load(Ordering::Relaxed)
    }

    pub fn reset_counter(&self) {
        self.counter.store(0, Ordering::Relaxed);
    }

    /// Clone with a fresh step counter.
    pub fn fork_counter(&self) -> Self {
        let mut m = self.clone();
        m.counter = Arc::new(AtomicU64::new(0));
        m
    }

    /// Integrate the closed loop for time τ from `x0`. Periodic components
    /// are wrapped into range at the end; non-periodic components are never
    /// clamped (escapes surface downstream through the grid's ball query).
    pub fn propagate(&self, x0: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        let n = self.system.state_dim;
        let m = self.system.control_dim;
        let h = self.step;
        let mut x = x0.to_vec();
        self.system.wrap(&mut x);
        let mut u = vec![0.0; m];
        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut xt = vec![0.0; n];
        for step_idx in 0..self.n_steps {
            self.stage(&x, &mut u, &mut k1);
            for i in 0..n {
                xt[i] = x[i] + 0.5 * h * k1[i];
            }
            self.stage(&xt, &mut u, &mut k2);
            for i in 0..n {
                xt[i] = x[i] + 0.5 * h * k2[i];
            }
            self.stage(&xt, &mut u, &mut k3);
            for i in 0..n {
                xt[i] = x[i] + h * k3[i];
            }
            self.stage(&xt, &mut u, &mut k4);
            for i in 0..n {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(DynamicsError::NonFinite { step: step_idx });
            }
        }
        self.system.wrap(&mut x);
        self.counter
            .fetch_add(self.n_steps as u64, Ordering::Relaxed);
        Ok(x)
    }

    #[inline]
    fn stage(&self, x: &[f64], u: &mut [f64], dx: &mut [f64]) {
        self.controller.control_into(x, u);
        self.system.eval(x, u, dx);
    }
}

/// Outcome of a goal-reaching simulation at integrator-step granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimOutcome {
    /// Entered the goal ball at this step index (0 = initial state).
    Reached(usize),
    /// Left the state space through a non-periodic bound at this step.
    Escaped(usize),
    Timeout,
}

/// Simulate the closed loop step by step, checking after every integration
/// step whether the state entered `B(goal, eps)` (geodesic distance) or left
/// the state space through a non-periodic bound. Returns the outcome and the
/// number of integration steps actually performed.
pub fn simulate_goal_reach(
    system: &ControlSystem,
    controller: &Controller,
    x0: &[f64],
    step: f64,
    max_steps: usize,
    eps: f64,
) -> (SimOutcome, usize) {
    let n = system.state_dim;
    let m = system.control_dim;
    let mut x = x0.to_vec();
    system.wrap(&mut x);
    if system.geodesic_distance(&x, &system.goal) <= eps {
        return (SimOutcome::Reached(0), 0);
    }
    let outside = |x: &[f64]| {
        (0..n).any(|i| {
            !system.periodic[i] && (x[i] < system.state_bounds.lo[i] || x[i] > system.state_bounds.hi[i])
        })
    };
    if outside(&x) {
        return (SimOutcome::Escaped(0), 0);
    }
    let h = step;
    let mut u = vec![0.0; m];
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut xt = vec![0.0; n];
    let stage = |x: &[f64], u: &mut [f64], dx: &mut [f64]| {
        controller.control_into(x, u);
        system.eval(x, u, dx);
    };
    for s in 1..=max_steps {
        stage(&x, &mut u, &mut k1);
        for i in 0..n {
            xt[i] = x[i] + 0.5 * h * k1[i];
        }
        stage(&xt, &mut u, &mut k2);
        for i in 0..n {
            xt[i] = x[i] + 0.5 * h * k2[i];
        }
        stage(&xt, &mut u, &mut k3);
        for i in 0..n {
            xt[i] = x[i] + h * k3[i];
        }
        stage(&xt, &mut u, &mut k4);
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) || outside(&x) {
            return (SimOutcome::Escaped(s), s);
        }
        system.wrap(&mut x);
        if system.geodesic_distance(&x, &system.goal) <= eps {
            return (SimOutcome::Reached(s), s);
        }
    }
    (SimOutcome::Timeout, max_steps)
}
