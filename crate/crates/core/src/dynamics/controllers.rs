//! Controllers other than LQR: the Corke polar pose regulator, tabulated
//! (interpolated) policies, state-feedback hybrid switching, and trivial
//! constant policies.

use std::f64::consts::PI;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use crate::grid::{CubicalGrid, Orthotope};

use super::{ControlSystem, Controller, DynamicsError, Policy};

struct ConstantPolicy {
    u: Vec<f64>,
}

impl Policy for ConstantPolicy {
    fn eval(&self, _x: &[f64], u: &mut [f64]) {
        u.copy_from_slice(&self.u);
    }
}

pub fn constant_controller(system: &ControlSystem, u: Vec<f64>) -> Controller {
    assert_eq!(u.len(), system.control_dim);
    Controller::new(
        Arc::new(ConstantPolicy { u }),
        system.control_bounds.clone(),
        "constant",
    )
}

pub fn zero_controller(system: &ControlSystem) -> Controller {
    constant_controller(system, vec![0.0; system.control_dim])
}

#[derive(Debug, Clone, Copy)]
pub struct CorkeGains {
    pub k_rho: f64,
    pub k_alpha: f64,
    pub k_beta: f64,
}

impl Default for CorkeGains {
    fn default() -> Self {
        Self {
            k_rho: 1.0,
            k_alpha: 4.0,
            k_beta: -1.5,
        }
    }
}

struct CorkePolicy {
    gains: CorkeGains,
    goal: [f64; 3],
    wheelbase: f64,
    v_max: f64,
}

fn wrap_pi(a: f64) -> f64 {
    let mut v = a.rem_euclid(2.0 * PI);
    if v >= PI {
        v -= 2.0 * PI;
    }
    v
}

impl Policy for CorkePolicy {
    fn eval(&self, x: &[f64], u: &mut [f64]) {
        let dx = self.goal[0] - x[0];
        let dy = self.goal[1] - x[1];
        let rho = dx.hypot(dy);
        let bearing = dy.atan2(dx);
        let alpha = wrap_pi(bearing - x[2]);
        let beta = wrap_pi(self.goal[2] - bearing);
        let v = (self.gains.k_rho * rho).clamp(0.0, self.v_max);
        let omega = self.gains.k_alpha * alpha + self.gains.k_beta * beta;
        let delta = if v > 1e-12 {
            (self.wheelbase * omega / v).atan()
        } else {
            0.0
        };
        u[0] = delta;
        u[1] = v;
    }
}

/// Polar-coordinate pose regulator `v = Kρ·ρ`, `ω = Kα·α + Kβ·β` converted to
/// Ackermann steering `δ = atan(W ω / v)` with forward-only velocity.
/// Construction rejects gains violating `Kρ > 0`, `Kβ < 0`, `Kα - Kρ > 0`.
pub fn corke_controller(
    system: &ControlSystem,
    gains: CorkeGains,
    goal_pose: [f64; 3],
    wheelbase: f64,
) -> Result<Controller, DynamicsError> {
    if !(gains.k_rho > 0.0) {
        return Err(DynamicsError::InvalidGains(format!(
            "K_rho = {} must be positive",
            gains.k_rho
        )));
    }
    if !(gains.k_beta < 0.0) {
        return Err(DynamicsError::InvalidGains(format!(
            "K_beta = {} must be negative",
            gains.k_beta
        )));
    }
    if !(gains.k_alpha - gains.k_rho > 0.0) {
        return Err(DynamicsError::InvalidGains(format!(
            "K_alpha - K_rho = {} must be positive",
            gains.k_alpha - gains.k_rho
        )));
    }
    let v_max = system.control_bounds.hi[1];
    Ok(Controller::new(
        Arc::new(CorkePolicy {
            gains,
            goal: goal_pose,
            wheelbase,
            v_max,
        }),
        system.control_bounds.clone(),
        "corke",
    ))
}

/// Per-vertex control values over a cubical grid, evaluated by multilinear
/// interpolation (wrapping on periodic dimensions). Stand-in for externally
/// trained policies.
#[derive(Clone)]
pub struct TabulatedTable {
    grid: CubicalGrid,
    /// Row-major over the deduplicated vertex lattice, `control_dim` values
    /// per vertex.
    values: Vec<f64>,
    control_dim: usize,
}

impl TabulatedTable {
    pub fn new(grid: CubicalGrid, control_dim: usize, values: Vec<f64>) -> Result<Self, DynamicsError> {
        if values.len() != grid.lattice_size(1) * control_dim {
            return Err(DynamicsError::MalformedTable(format!(
                "expected {} values, got {}",
                grid.lattice_size(1) * control_dim,
                values.len()
            )));
        }
        Ok(Self {
            grid,
            values,
            control_dim,
        })
    }

    /// Build a table by sampling a function at every lattice vertex.
    pub fn from_fn(
        grid: CubicalGrid,
        control_dim: usize,
        f: impl Fn(&[f64]) -> Vec<f64>,
    ) -> Self {
        let mut values = Vec::with_capacity(grid.lattice_size(1) * control_dim);
        for idx in 0..grid.lattice_size(1) {
            let x = grid.lattice_point(1, idx);
            let u = f(&x);
            assert_eq!(u.len(), control_dim);
            values.extend_from_slice(&u);
        }
        Self {
            grid,
            values,
            control_dim,
        }
    }

    pub fn grid(&self) -> &CubicalGrid {
        &self.grid
    }

    /// Plain-text table format: `dims n m`, one `lower upper subdiv_exp
    /// periodic` line per dimension, then one line of `m` values per vertex
    /// in row-major order.
    pub fn save(&self, path: &Path) -> Result<(), DynamicsError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "dims {} {}", self.grid.dims(), self.control_dim)?;
        for i in 0..self.grid.dims() {
            writeln!(
                f,
                "{} {} {} {}",
                self.grid.lower()[i],
                self.grid.upper()[i],
                self.grid.subdiv_exp()[i],
                u8::from(self.grid.periodic()[i]),
            )?;
        }
        for v in self.values.chunks(self.control_dim) {
            let line: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
            writeln!(f, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DynamicsError> {
        let f = BufReader::new(std::fs::File::open(path)?);
        let mut lines = f.lines();
        let header = lines
            .next()
            .ok_or_else(|| DynamicsError::MalformedTable("empty file".into()))??;
        let toks: Vec<&str> = header.split_whitespace().collect();
        if toks.len() != 3 || toks[0] != "dims" {
            return Err(DynamicsError::MalformedTable(
                "header must be `dims n m`".into(),
            ));
        }
        let parse_err = |what: &str| DynamicsError::MalformedTable(format!("bad {what}"));
        let n: usize = toks[1].parse().map_err(|_| parse_err("state dim"))?;
        let m: usize = toks[2].parse().map_err(|_| parse_err("control dim"))?;
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        let mut exp = Vec::new();
        let mut periodic = Vec::new();
        for _ in 0..n {
            let line = lines
                .next()
                .ok_or_else(|| parse_err("dimension line count"))??;
            let t: Vec<&str> = line.split_whitespace().collect();
            if t.len() != 4 {
                return Err(parse_err("dimension line"));
            }
            lower.push(t[0].parse::<f64>().map_err(|_| parse_err("lower bound"))?);
            upper.push(t[1].parse::<f64>().map_err(|_| parse_err("upper bound"))?);
            exp.push(t[2].parse::<u32>().map_err(|_| parse_err("subdiv exponent"))?);
            periodic.push(match t[3] {
                "0" => false,
                "1" => true,
                _ => return Err(parse_err("periodic flag")),
            });
        }
        let grid = CubicalGrid::new(lower, upper, exp, periodic)?;
        let mut values = Vec::with_capacity(grid.lattice_size(1) * m);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            for tok in line.split_whitespace() {
                values.push(tok.parse::<f64>().map_err(|_| parse_err("value"))?);
            }
        }
        Self::new(grid, m, values)
    }

    /// Multilinear interpolation of the vertex values at `x`, wrapping on
    /// periodic dimensions and clamping onto the grid elsewhere.
    pub fn interpolate(&self, x: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let n = g.dims();
        let counts = g.lattice_counts(1);
        let mut base = vec![0usize; n];
        let mut frac = vec![0.0f64; n];
        for i in 0..n {
            let w = g.cell_width()[i];
            let mut t = (x[i] - g.lower()[i]) / w;
            if g.periodic()[i] {
                t = t.rem_euclid(g.cells_per_dim()[i] as f64);
            } else {
                t = t.clamp(0.0, g.cells_per_dim()[i] as f64);
            }
            let mut j = t.floor() as usize;
            if j >= g.cells_per_dim()[i] {
                j = g.cells_per_dim()[i] - 1;
            }
            base[i] = j;
            frac[i] = t - j as f64;
        }
        let mut out = vec![0.0; self.control_dim];
        for mask in 0..1usize << n {
            let mut weight = 1.0;
            let mut idx = 0usize;
            for i in 0..n {
                let hi = mask >> i & 1 == 1;
                weight *= if hi { frac[i] } else { 1.0 - frac[i] };
                let mut j = base[i] + usize::from(hi);
                if g.periodic()[i] {
                    j %= counts[i];
                }
                idx = idx * counts[i] + j;
            }
            if weight == 0.0 {
                continue;
            }
            let vals = &self.values[idx * self.control_dim..(idx + 1) * self.control_dim];
            for (o, v) in out.iter_mut().zip(vals) {
                *o += weight * v;
            }
        }
        out
    }
}

struct TabulatedPolicy {
    table: TabulatedTable,
}

impl Policy for TabulatedPolicy {
    fn eval(&self, x: &[f64], u: &mut [f64]) {
        u.copy_from_slice(&self.table.interpolate(x));
    }
}

pub fn tabulated_controller(
    system: &ControlSystem,
    table: TabulatedTable,
) -> Result<Controller, DynamicsError> {
    if table.grid.dims() != system.state_dim || table.control_dim != system.control_dim {
        return Err(DynamicsError::TableDimMismatch);
    }
    Ok(Controller::new(
        Arc::new(TabulatedPolicy { table }),
        system.control_bounds.clone(),
        "tabulated",
    ))
}

/// State predicate selecting which controller of a hybrid pair applies.
#[derive(Clone)]
pub enum SwitchPredicate {
    Always,
    /// Geodesic membership in `B(center, radius)`.
    GoalBall {
        bounds: Orthotope,
        periodic: Vec<bool>,
        center: Vec<f64>,
        radius: f64,
    },
    /// Membership in an explicit cube set over a grid (for example a maximal
    /// RoA loaded from a prior analysis export). Points outside the grid are
    /// not members.
    CubeSet {
        grid: Arc<CubicalGrid>,
        member: Arc<Vec<bool>>,
    },
}

impl SwitchPredicate {
    pub fn test(&self, x: &[f64]) -> bool {
        match self {
            SwitchPredicate::Always => true,
            SwitchPredicate::GoalBall {
                bounds,
                periodic,
                center,
                radius,
            } => super::geodesic_distance(bounds, periodic, x, center) <= *radius,
            SwitchPredicate::CubeSet { grid, member } => grid
                .cube_of_point(x)
                .ok()
                .flatten()
                .map(|id| member[id.0])
                .unwrap_or(false),
        }
    }
}

struct HybridPolicy {
    primary: Controller,
    fallback: Controller,
    switch: SwitchPredicate,
}

impl Policy for HybridPolicy {
    fn eval(&self, x: &[f64], u: &mut [f64]) {
        if self.switch.test(x) {
            self.primary.control_into(x, u);
        } else {
            self.fallback.control_into(x, u);
        }
    }
}

/// Memoryless state-feedback switching: `primary` where the predicate holds,
/// `fallback` elsewhere.
pub fn hybrid_controller(
    system: &ControlSystem,
    primary: Controller,
    fallback: Controller,
    switch: SwitchPredicate,
) -> Controller {
    let label = format!("hybrid({}/{})", primary.label, fallback.label);
    Controller::new(
        Arc::new(HybridPolicy {
            primary,
            fallback,
            switch,
        }),
        system.control_bounds.clone(),
        label,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ackermann_system, simulate_goal_reach, AckermannParams, SimOutcome};
    use crate::grid::CubicalGrid;
    use approx::assert_abs_diff_eq;

    fn car() -> ControlSystem {
        ackermann_system(AckermannParams::default()).unwrap()
    }

    #[test]
    fn constant_controller_clamps_into_bounds() {
        let sys = car();
        let ctrl = constant_controller(&sys, vec![3.0, -5.0]);
        assert_eq!(ctrl.control(&[0.0, 0.0, 0.0]), vec![1.05, 0.0]);
        assert_eq!(ctrl.raw_control(&[0.0, 0.0, 0.0]), vec![3.0, -5.0]);
    }

    #[test]
    fn corke_gain_validation() {
        let sys = car();
        let ok = CorkeGains {
            k_rho: 1.0,
            k_alpha: 3.0,
            k_beta: -1.0,
        };
        assert!(corke_controller(&sys, ok, [0.0; 3], 1.0).is_ok());
        let bad_alpha = CorkeGains {
            k_rho: 1.0,
            k_alpha: 0.5,
            k_beta: -1.0,
        };
        assert!(matches!(
            corke_controller(&sys, bad_alpha, [0.0; 3], 1.0),
            Err(DynamicsError::InvalidGains(_))
        ));
        let bad_beta = CorkeGains {
            k_beta: 0.5,
            ..Default::default()
        };
        assert!(corke_controller(&sys, bad_beta, [0.0; 3], 1.0).is_err());
        let bad_rho = CorkeGains {
            k_rho: -1.0,
            ..Default::default()
        };
        assert!(corke_controller(&sys, bad_rho, [0.0; 3], 1.0).is_err());
    }

    #[test]
    fn corke_drives_straight_when_aligned() {
        let sys = car();
        // Goal dead ahead along the heading: alpha = beta = 0, so no steering.
        let ctrl = corke_controller(
            &sys,
            CorkeGains::default(),
            [5.0, 0.0, 0.0],
            1.0,
        )
        .unwrap();
        let u = ctrl.control(&[0.0, 0.0, 0.0]);
        assert_abs_diff_eq!(u[0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(u[1], 5.0, epsilon = 1e-12);
    }

    #[test]
    fn corke_velocity_scales_with_distance_and_clamps() {
        let sys = car();
        let gains = CorkeGains {
            k_rho: 10.0,
            k_alpha: 12.0,
            k_beta: -1.0,
        };
        let ctrl = corke_controller(&sys, gains, [0.0, 0.0, PI / 2.0], 1.0).unwrap();
        let near = ctrl.control(&[0.3, 0.0, 0.0]);
        assert_abs_diff_eq!(near[1], 3.0, epsilon = 1e-12);
        let far = ctrl.control(&[9.0, 0.0, 0.0]);
        assert_eq!(far[1], 30.0);
    }

    #[test]
    fn corke_reaches_goal_pose_in_simulation() {
        let sys = car();
        let ctrl = corke_controller(
            &sys,
            CorkeGains::default(),
            [0.0, 0.0, PI / 2.0],
            1.0,
        )
        .unwrap();
        let (out, _) = simulate_goal_reach(&sys, &ctrl, &[4.0, -4.0, 0.0], 0.01, 5000, 0.2);
        assert!(matches!(out, SimOutcome::Reached(_)), "{out:?}");
    }

    fn small_grid() -> CubicalGrid {
        CubicalGrid::new(
            vec![-1.0, -2.0],
            vec![1.0, 2.0],
            vec![2, 2],
            vec![false, false],
        )
        .unwrap()
    }

    #[test]
    fn tabulated_rejects_wrong_value_count() {
        let g = small_grid();
        assert!(matches!(
            TabulatedTable::new(g, 1, vec![0.0; 7]),
            Err(DynamicsError::MalformedTable(_))
        ));
    }

    /// Multilinear interpolation reproduces affine functions exactly.
    #[test]
    fn tabulated_interpolation_is_exact_on_affine_data() {
        let g = small_grid();
        let f = |x: &[f64]| vec![2.0 * x[0] - 0.5 * x[1] + 0.25];
        let table = TabulatedTable::from_fn(g, 1, f);
        for p in [
            [0.0, 0.0],
            [0.13, -1.2],
            [-0.99, 1.99],
            [1.0, 2.0],
            [-1.0, -2.0],
        ] {
            assert_abs_diff_eq!(table.interpolate(&p)[0], f(&p)[0], epsilon = 1e-12);
        }
    }

    /// Independent oracle: accumulate the 2^n vertex weights directly from
    /// the per-axis barycentric coordinates.
    #[test]
    fn tabulated_interpolation_matches_weight_oracle() {
        let g = small_grid();
        let f = |x: &[f64]| vec![(3.0 * x[0]).sin() + x[1] * x[1]];
        let table = TabulatedTable::from_fn(g.clone(), 1, f);
        let p = [0.37, -0.81];
        let w = g.cell_width();
        let tx = (p[0] - g.lower()[0]) / w[0];
        let ty = (p[1] - g.lower()[1]) / w[1];
        let (ix, iy) = (tx.floor() as usize, ty.floor() as usize);
        let (fx, fy) = (tx - ix as f64, ty - iy as f64);
        let vertex = |dx: usize, dy: usize| {
            let x = g.lower()[0] + (ix + dx) as f64 * w[0];
            let y = g.lower()[1] + (iy + dy) as f64 * w[1];
            f(&[x, y])[0]
        };
        let expect = (1.0 - fx) * (1.0 - fy) * vertex(0, 0)
            + fx * (1.0 - fy) * vertex(1, 0)
            + (1.0 - fx) * fy * vertex(0, 1)
            + fx * fy * vertex(1, 1);
        assert_abs_diff_eq!(table.interpolate(&p)[0], expect, epsilon = 1e-12);
    }

    #[test]
    fn tabulated_wraps_periodic_dimensions() {
        let g = CubicalGrid::new(vec![-PI], vec![PI], vec![3], vec![true]).unwrap();
        let table = TabulatedTable::from_fn(g, 1, |x| vec![x[0].sin()]);
        // Just past the seam the interpolant must blend the last and first
        // lattice vertices, not read out of bounds.
        let a = table.interpolate(&[PI - 1e-9])[0];
        let b = table.interpolate(&[-PI + 1e-9])[0];
        assert_abs_diff_eq!(a, b, epsilon = 1e-6);
    }

    #[test]
    fn tabulated_round_trips_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.txt");
        let g = CubicalGrid::new(
            vec![-PI, -2.0],
            vec![PI, 2.0],
            vec![2, 3],
            vec![true, false],
        )
        .unwrap();
        let table = TabulatedTable::from_fn(g, 2, |x| vec![x[0] * 0.5, x[1] - 1.0]);
        table.save(&path).unwrap();
        let loaded = TabulatedTable::load(&path).unwrap();
        assert_eq!(loaded.control_dim, table.control_dim);
        assert_eq!(loaded.values, table.values);
        assert_eq!(loaded.grid.cells_per_dim(), table.grid.cells_per_dim());
    }

    #[test]
    fn tabulated_load_rejects_malformed_input() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "dims 2\n").unwrap();
        assert!(TabulatedTable::load(&path).is_err());
        std::fs::write(&path, "dims 1 1\n0.0 1.0 2 0\n0.1 0.2\n").unwrap();
        assert!(matches!(
            TabulatedTable::load(&path),
            Err(DynamicsError::MalformedTable(_))
        ));
    }

    #[test]
    fn tabulated_controller_checks_dimensions() {
        let sys = car();
        let table = TabulatedTable::from_fn(small_grid(), 1, |_| vec![0.0]);
        assert!(matches!(
            tabulated_controller(&sys, table),
            Err(DynamicsError::TableDimMismatch)
        ));
    }

    #[test]
    fn hybrid_always_equals_primary() {
        let sys = car();
        let a = constant_controller(&sys, vec![0.5, 2.0]);
        let b = constant_controller(&sys, vec![-0.5, 7.0]);
        let h = hybrid_controller(&sys, a.clone(), b, SwitchPredicate::Always);
        for p in [[0.0, 0.0, 0.0], [3.0, -2.0, 1.0]] {
            assert_eq!(h.control(&p), a.control(&p));
        }
    }

    #[test]
    fn hybrid_goal_ball_switches() {
        let sys = car();
        let a = constant_controller(&sys, vec![0.5, 2.0]);
        let b = constant_controller(&sys, vec![-0.5, 7.0]);
        let pred = SwitchPredicate::GoalBall {
            bounds: sys.state_bounds.clone(),
            periodic: sys.periodic.clone(),
            center: vec![0.0, 0.0, PI / 2.0],
            radius: 1.0,
        };
        let h = hybrid_controller(&sys, a.clone(), b.clone(), pred);
        assert_eq!(h.control(&[0.1, 0.1, PI / 2.0]), a.control(&[0.0; 3]));
        assert_eq!(h.control(&[5.0, 5.0, 0.0]), b.control(&[0.0; 3]));
        // The heading seam must count geodesically: (0, 0, -pi) is close to
        // nothing here, but (0.1, 0, pi) is within the ball of pi/2 center
        // only through the interior, so check a seam-adjacent pair instead.
        let pred2 = SwitchPredicate::GoalBall {
            bounds: sys.state_bounds.clone(),
            periodic: sys.periodic.clone(),
            center: vec![0.0, 0.0, PI - 0.05],
            radius: 0.2,
        };
        let h2 = hybrid_controller(&sys, a.clone(), b, pred2);
        assert_eq!(h2.control(&[0.0, 0.0, -PI + 0.05]), a.control(&[0.0; 3]));
    }

    #[test]
    fn hybrid_cube_set_membership() {
        let g = Arc::new(
            CubicalGrid::new(
                vec![-10.0, -10.0, -PI],
                vec![10.0, 10.0, PI],
                vec![1, 1, 1],
                vec![false, false, true],
            )
            .unwrap(),
        );
        let mut member = vec![false; g.cube_count()];
        let inside = g.cube_of_point(&[5.0, 5.0, 0.5]).unwrap().unwrap();
        member[inside.0] = true;
        let pred = SwitchPredicate::CubeSet {
            grid: g,
            member: Arc::new(member),
        };
        assert!(pred.test(&[5.0, 5.0, 0.5]));
        assert!(!pred.test(&[-5.0, 5.0, 0.5]));
        assert!(!pred.test(&[50.0, 0.0, 0.0]));
    }
}
