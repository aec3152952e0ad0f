//! TOML analysis configuration: plant and controller selectors with
//! overridable physical defaults, grid and map settings, and normalization
//! into fully resolved values for reproducible manifests.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    ackermann_system, acrobot_system, constant_controller, corke_controller, hybrid_controller,
    linear_test_system, lqr_controller, pendulum_system, spiral_test_system, tabulated_controller,
    zero_controller, AckermannParams, AcrobotParams, ControlSystem, Controller, CorkeGains,
    DynamicsError, PendulumParams, SwitchPredicate, TabulatedTable,
};
use crate::export::read_cube_set;
use crate::grid::CubicalGrid;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
    #[error(transparent)]
    Export(#[from] crate::export::ExportError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "plant", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemConfig {
    Pendulum {
        mass: Option<f64>,
        length: Option<f64>,
        gravity: Option<f64>,
        beta: Option<f64>,
        torque_limit: Option<f64>,
        friction_on_angle: Option<bool>,
    },
    Ackermann {
        wheelbase: Option<f64>,
    },
    Acrobot {
        m1: Option<f64>,
        m2: Option<f64>,
        l1: Option<f64>,
        l2: Option<f64>,
        lc1: Option<f64>,
        lc2: Option<f64>,
        i1: Option<f64>,
        i2: Option<f64>,
        gravity: Option<f64>,
        torque_limit: Option<f64>,
    },
    Linear {
        rates: Vec<f64>,
        half_width: f64,
    },
    Spiral {
        decay: f64,
        omega: f64,
        half_width: f64,
    },
}

impl SystemConfig {
    pub fn build(&self) -> Result<ControlSystem, ConfigError> {
        match self.clone() {
            SystemConfig::Pendulum {
                mass,
                length,
                gravity,
                beta,
                torque_limit,
                friction_on_angle,
            } => {
                let d = PendulumParams::default();
                Ok(pendulum_system(PendulumParams {
                    mass: mass.unwrap_or(d.mass),
                    length: length.unwrap_or(d.length),
                    gravity: gravity.unwrap_or(d.gravity),
                    beta: beta.unwrap_or(d.beta),
                    torque_limit: torque_limit.unwrap_or(d.torque_limit),
                    friction_on_angle: friction_on_angle.unwrap_or(d.friction_on_angle),
                })?)
            }
            SystemConfig::Ackermann { wheelbase } => {
                let d = AckermannParams::default();
                Ok(ackermann_system(AckermannParams {
                    wheelbase: wheelbase.unwrap_or(d.wheelbase),
                })?)
            }
            SystemConfig::Acrobot {
                m1,
                m2,
                l1,
                l2,
                lc1,
                lc2,
                i1,
                i2,
                gravity,
                torque_limit,
            } => {
                let d = AcrobotParams::default();
                Ok(acrobot_system(AcrobotParams {
                    m1: m1.unwrap_or(d.m1),
                    m2: m2.unwrap_or(d.m2),
                    l1: l1.unwrap_or(d.l1),
                    l2: l2.unwrap_or(d.l2),
                    lc1: lc1.unwrap_or(d.lc1),
                    lc2: lc2.unwrap_or(d.lc2),
                    i1: i1.unwrap_or(d.i1),
                    i2: i2.unwrap_or(d.i2),
                    gravity: gravity.unwrap_or(d.gravity),
                    torque_limit: torque_limit.unwrap_or(d.torque_limit),
                })?)
            }
            SystemConfig::Linear { rates, half_width } => {
                Ok(linear_test_system(rates, half_width))
            }
            SystemConfig::Spiral {
                decay,
                omega,
                half_width,
            } => Ok(spiral_test_system(decay, omega, half_width)),
        }
    }

    /// Wheelbase the polar pose regulator should assume.
    fn wheelbase(&self) -> f64 {
        match self {
            SystemConfig::Ackermann { wheelbase } => {
                wheelbase.unwrap_or(AckermannParams::default().wheelbase)
            }
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SwitchConfig {
    Always,
    GoalBall {
        center: Option<Vec<f64>>,
        radius: f64,
    },
    CubeSet {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerConfig {
    Zero,
    Constant {
        value: Vec<f64>,
    },
    /// Infinite-horizon state-feedback regulator about the system goal with
    /// diagonal weight vectors (defaults: all ones).
    Lqr {
        q: Option<Vec<f64>>,
        r: Option<Vec<f64>>,
    },
    /// Polar-coordinate pose regulator for the steered car.
    Corke {
        k_rho: Option<f64>,
        k_alpha: Option<f64>,
        k_beta: Option<f64>,
        goal: Option<[f64; 3]>,
    },
    Tabulated {
        table: PathBuf,
    },
    Hybrid {
        primary: Box<ControllerConfig>,
        fallback: Box<ControllerConfig>,
        switch: SwitchConfig,
    },
}

impl ControllerConfig {
    pub fn build(
        &self,
        system: &ControlSystem,
        system_cfg: &SystemConfig,
    ) -> Result<Controller, ConfigError> {
        match self {
            ControllerConfig::Zero => Ok(zero_controller(system)),
            ControllerConfig::Constant { value } => {
                if value.len() != system.control_dim {
                    return Err(bad("constant controller value has wrong dimension"));
                }
                Ok(constant_controller(system, value.clone()))
            }
            ControllerConfig::Lqr { q, r } => {
                let qv = q.clone().unwrap_or_else(|| vec![1.0; system.state_dim]);
                let rv = r.clone().unwrap_or_else(|| vec![1.0; system.control_dim]);
                if qv.len() != system.state_dim || rv.len() != system.control_dim {
                    return Err(bad("lqr weight vectors have wrong dimension"));
                }
                let qm = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(qv));
                let rm = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(rv));
                Ok(lqr_controller(system, qm, rm)?.controller)
            }
            ControllerConfig::Corke {
                k_rho,
                k_alpha,
                k_beta,
                goal,
            } => {
                let d = CorkeGains::default();
                let gains = CorkeGains {
                    k_rho: k_rho.unwrap_or(d.k_rho),
                    k_alpha: k_alpha.unwrap_or(d.k_alpha),
                    k_beta: k_beta.unwrap_or(d.k_beta),
                };
                let pose = goal.unwrap_or_else(|| {
                    let g = &system.goal;
                    [g[0], g[1], g[2]]
                });
                Ok(corke_controller(
                    system,
                    gains,
                    pose,
                    system_cfg.wheelbase(),
                )?)
            }
            ControllerConfig::Tabulated { table } => {
                let t = TabulatedTable::load(table)?;
                Ok(tabulated_controller(system, t)?)
            }
            ControllerConfig::Hybrid {
                primary,
                fallback,
                switch,
            } => {
                let a = primary.build(system, system_cfg)?;
                let b = fallback.build(system, system_cfg)?;
                let pred = match switch {
                    SwitchConfig::Always => SwitchPredicate::Always,
                    SwitchConfig::GoalBall { center, radius } => {
                        let c = center.clone().unwrap_or_else(|| system.goal.clone());
                        if c.len() != system.state_dim {
                            return Err(bad("switch ball center has wrong dimension"));
                        }
                        SwitchPredicate::GoalBall {
                            bounds: system.state_bounds.clone(),
                            periodic: system.periodic.clone(),
                            center: c,
                            radius: *radius,
                        }
                    }
                    SwitchConfig::CubeSet { path } => {
                        let (grid, member) = read_cube_set(path)?;
                        if grid.dims() != system.state_dim {
                            return Err(bad("switch cube set has wrong dimension"));
                        }
                        SwitchPredicate::CubeSet {
                            grid: Arc::new(grid),
                            member: Arc::new(member),
                        }
                    }
                };
                Ok(hybrid_controller(system, a, b, pred))
            }
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Per-dimension subdivision exponents; cells per dim = 2^k_i.
    pub subdiv_exp: Option<Vec<u32>>,
    /// Total exponent, split as evenly as possible across dimensions.
    pub total_exp: Option<u32>,
    /// Domain overrides; default to the plant's state bounds.
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub periodic: Option<Vec<bool>>,
}

pub const DEFAULT_TOTAL_EXP: u32 = 14;

impl GridConfig {
    pub fn build(&self, system: &ControlSystem) -> Result<CubicalGrid, ConfigError> {
        let n = system.state_dim;
        let exp = match (&self.subdiv_exp, &self.total_exp) {
            (Some(_), Some(_)) => {
                return Err(bad("grid: give subdiv_exp or total_exp, not both"));
            }
            (Some(e), None) => {
                if e.len() != n {
                    return Err(bad("grid.subdiv_exp has wrong dimension"));
                }
                e.clone()
            }
            (None, Some(t)) => CubicalGrid::split_exponent(*t, n),
            (None, None) => CubicalGrid::split_exponent(DEFAULT_TOTAL_EXP, n),
        };
        let lower = self
            .lower
            .clone()
            .unwrap_or_else(|| system.state_bounds.lo.clone());
        let upper = self
            .upper
            .clone()
            .unwrap_or_else(|| system.state_bounds.hi.clone());
        let periodic = self
            .periodic
            .clone()
            .unwrap_or_else(|| system.periodic.clone());
        Ok(CubicalGrid::new(lower, upper, exp, periodic)?)
    }

    fn normalized(&self, system: &ControlSystem, grid: &CubicalGrid) -> GridConfig {
        let _ = system;
        GridConfig {
            subdiv_exp: Some(grid.subdiv_exp().to_vec()),
            total_exp: None,
            lower: Some(grid.lower().to_vec()),
            upper: Some(grid.upper().to_vec()),
            periodic: Some(grid.periodic().to_vec()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LipschitzEstimateConfig {
    pub pairs: usize,
    pub safety: f64,
    pub seed: u64,
}

impl Default for LipschitzEstimateConfig {
    fn default() -> Self {
        Self {
            pairs: 4096,
            safety: 1.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapConfig {
    /// Sampling period of the discrete-time map.
    pub tau: f64,
    /// Fixed integrator step; tau/step must be integral.
    pub step: f64,
    /// Lattice refinement per cube edge.
    pub refine: u32,
    /// Explicit Lipschitz constant; mutually exclusive with `estimate`.
    pub lipschitz: Option<f64>,
    pub estimate: Option<LipschitzEstimateConfig>,
    /// Dump / reuse the propagated image cache at this path.
    pub cache: Option<PathBuf>,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            step: 0.01,
            refine: 1,
            lipschitz: None,
            estimate: None,
            cache: None,
        }
    }
}

impl MapConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.lipschitz.is_some() && self.estimate.is_some() {
            return Err(bad("map: give lipschitz or estimate, not both"));
        }
        if let Some(l) = self.lipschitz {
            if !(l > 0.0) {
                return Err(bad("map.lipschitz must be positive"));
            }
        }
        if self.refine == 0 {
            return Err(bad("map.refine must be >= 1"));
        }
        Ok(())
    }

    /// Estimation spec to use when no explicit constant is given.
    pub fn estimate_spec(&self) -> LipschitzEstimateConfig {
        self.estimate.clone().unwrap_or_default()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruthConfig {
    /// Evaluation lattice points per dimension.
    pub counts: Vec<usize>,
    pub horizon: usize,
    pub eps: f64,
    /// Goal point; defaults to the plant goal.
    pub goal: Option<Vec<f64>>,
}

impl Default for TruthConfig {
    fn default() -> Self {
        Self {
            counts: Vec::new(),
            horizon: 500,
            eps: 0.1,
            goal: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HybridEvalConfig {
    pub samples: usize,
    pub horizon: usize,
    pub eps: f64,
    pub seed: u64,
}

impl Default for HybridEvalConfig {
    fn default() -> Self {
        Self {
            samples: 1000,
            horizon: 500,
            eps: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub system: SystemConfig,
    pub controller: ControllerConfig,
    pub grid: GridConfig,
    pub map: MapConfig,
    pub truth: TruthConfig,
    pub hybrid_eval: HybridEvalConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            system: SystemConfig::Pendulum {
                mass: None,
                length: None,
                gravity: None,
                beta: None,
                torque_limit: None,
                friction_on_angle: None,
            },
            controller: ControllerConfig::Lqr { q: None, r: None },
            grid: GridConfig::default(),
            map: MapConfig::default(),
            truth: TruthConfig::default(),
            hybrid_eval: HybridEvalConfig::default(),
        }
    }
}

impl AnalysisConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: AnalysisConfig = toml::from_str(text)?;
        cfg.map.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn build_system(&self) -> Result<ControlSystem, ConfigError> {
        self.system.build()
    }

    pub fn build_controller(&self, system: &ControlSystem) -> Result<Controller, ConfigError> {
        self.controller.build(system, &self.system)
    }

    pub fn build_grid(&self, system: &ControlSystem) -> Result<CubicalGrid, ConfigError> {
        self.grid.build(system)
    }

    /// Copy of the config with every defaulted value made explicit, suitable
    /// as a reproducibility manifest.
    pub fn normalized(
        &self,
        system: &ControlSystem,
        grid: &CubicalGrid,
        lipschitz: f64,
    ) -> AnalysisConfig {
        let mut out = self.clone();
        out.grid = self.grid.normalized(system, grid);
        // Pin the resolved constant and drop the estimation spec so the
        // manifest replays the run without re-sampling.
        out.map.lipschitz = Some(lipschitz);
        out.map.estimate = None;
        if out.truth.goal.is_none() {
            out.truth.goal = Some(system.goal.clone());
        }
        out
    }

    pub fn manifest_toml(
        &self,
        system: &ControlSystem,
        grid: &CubicalGrid,
        lipschitz: f64,
    ) -> String {
        toml::to_string_pretty(&self.normalized(system, grid, lipschitz))
            .expect("manifest serialization")
    }
}
