//! Ground-truth regions of attraction by exhaustive forward simulation, and
//! the metrics comparing them against the combinatorial estimates.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::dynamics::{simulate_goal_reach, ControlSystem, Controller, SimOutcome};
use crate::grid::CubicalGrid;
use crate::morse::MorseGraph;
use crate::roa::RoAAssignment;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("truth lattice and analysis grid cover different domains")]
    DomainMismatch,
    #[error("no minimal Morse node meets the goal ball")]
    NoGoalNode,
    #[error("several minimal Morse nodes meet the goal ball: {0:?}")]
    AmbiguousGoalNode(Vec<usize>),
    #[error("malformed ground-truth file: {0}")]
    MalformedFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Regular evaluation lattice: `counts[i]` cell centers per dimension over
/// the same domain as the analysis grid. Centers keep the lattice symmetric
/// under the domain's point reflections.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalLattice {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub counts: Vec<usize>,
}

impl EvalLattice {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, counts: Vec<usize>) -> Result<Self, BenchError> {
        if lower.len() != upper.len() || lower.len() != counts.len() || counts.is_empty() {
            return Err(BenchError::InvalidParameter(
                "lattice dimension mismatch".into(),
            ));
        }
        if counts.iter().any(|&c| c == 0) {
            return Err(BenchError::InvalidParameter(
                "lattice counts must be positive".into(),
            ));
        }
        Ok(Self {
            lower,
            upper,
            counts,
        })
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dims(&self) -> usize {
        self.counts.len()
    }

    /// Point at a row-major index (first dimension most significant).
    pub fn point(&self, mut idx: usize) -> Vec<f64> {
        let n = self.dims();
        let mut coords = vec![0usize; n];
        for i in (0..n).rev() {
            coords[i] = idx % self.counts[i];
            idx /= self.counts[i];
        }
        (0..n)
            .map(|i| {
                let w = (self.upper[i] - self.lower[i]) / self.counts[i] as f64;
                self.lower[i] + (coords[i] as f64 + 0.5) * w
            })
            .collect()
    }
}

/// Exhaustively simulated RoA: one reached/non-reached bit per lattice
/// point.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRoA {
    pub lattice: EvalLattice,
    pub reached: Vec<bool>,
    pub horizon: usize,
    pub eps: f64,
}

impl GroundTruthRoA {
    pub fn reached_count(&self) -> usize {
        self.reached.iter().filter(|&&r| r).count()
    }

    pub fn reached_fraction(&self) -> f64 {
        self.reached_count() as f64 / self.reached.len() as f64
    }

    /// Binary format: magic, system hash, lattice dims/counts, horizon, ε,
    /// then the reached bits packed into little-endian words.
    pub fn save(&self, path: &Path, system_hash: u64) -> Result<(), BenchError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(b"GTRA0001")?;
        f.write_all(&system_hash.to_le_bytes())?;
        f.write_all(&(self.lattice.dims() as u64).to_le_bytes())?;
        for i in 0..self.lattice.dims() {
            f.write_all(&self.lattice.lower[i].to_le_bytes())?;
            f.write_all(&self.lattice.upper[i].to_le_bytes())?;
            f.write_all(&(self.lattice.counts[i] as u64).to_le_bytes())?;
        }
        f.write_all(&(self.horizon as u64).to_le_bytes())?;
        f.write_all(&self.eps.to_le_bytes())?;
        let mut words = vec![0u64; self.reached.len().div_ceil(64)];
        for (i, &r) in self.reached.iter().enumerate() {
            if r {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        for w in words {
            f.write_all(&w.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: &Path, expect_hash: u64) -> Result<Self, BenchError> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut buf = [0u8; 8];
        f.read_exact(&mut buf)?;
        if &buf != b"GTRA0001" {
            return Err(BenchError::MalformedFile("bad magic".into()));
        }
        f.read_exact(&mut buf)?;
        if u64::from_le_bytes(buf) != expect_hash {
            return Err(BenchError::MalformedFile(
                "ground truth was computed for a different system".into(),
            ));
        }
        f.read_exact(&mut buf)?;
        let n = u64::from_le_bytes(buf) as usize;
        let (mut lower, mut upper, mut counts) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..n {
            f.read_exact(&mut buf)?;
            lower.push(f64::from_le_bytes(buf));
            f.read_exact(&mut buf)?;
            upper.push(f64::from_le_bytes(buf));
            f.read_exact(&mut buf)?;
            counts.push(u64::from_le_bytes(buf) as usize);
        }
        f.read_exact(&mut buf)?;
        let horizon = u64::from_le_bytes(buf) as usize;
        f.read_exact(&mut buf)?;
        let eps = f64::from_le_bytes(buf);
        let lattice = EvalLattice::new(lower, upper, counts)?;
        let total = lattice.len();
        let mut reached = Vec::with_capacity(total);
        for _ in 0..total.div_ceil(64) {
            f.read_exact(&mut buf)?;
            let w = u64::from_le_bytes(buf);
            for b in 0..64 {
                if reached.len() < total {
                    reached.push(w >> b & 1 == 1);
                }
            }
        }
        Ok(Self {
            lattice,
            reached,
            horizon,
            eps,
        })
    }
}

/// Simulate every lattice point forward (fixed 0.01 s step) until it enters
/// the geodesic goal ball, leaves the domain through a non-periodic bound,
/// or exhausts the horizon. Data-parallel over the lattice.
pub fn brute_force_roa(
    system: &ControlSystem,
    controller: &Controller,
    lattice: EvalLattice,
    horizon: usize,
    eps: f64,
) -> Result<GroundTruthRoA, BenchError> {
    if !(eps > 0.0) || horizon < 1 {
        return Err(BenchError::InvalidParameter(
            "need eps > 0 and horizon >= 1".into(),
        ));
    }
    let reached: Vec<bool> = (0..lattice.len())
        .into_par_iter()
        .map(|idx| {
            let x0 = lattice.point(idx);
            let (out, _) = simulate_goal_reach(system, controller, &x0, 0.01, horizon, eps);
            matches!(out, SimOutcome::Reached(_))
        })
        .collect();
    Ok(GroundTruthRoA {
        lattice,
        reached,
        horizon,
        eps,
    })
}

/// Volume-fraction metrics of an estimated RoA against ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    /// Fraction of the truth's reached volume covered by estimate cubes all
    /// of whose lattice points reached.
    pub tp_ratio: f64,
    /// Fraction of the domain left without a single-minimal-node assignment.
    pub unidentified_ratio: f64,
    /// Estimate cubes containing at least one non-reaching lattice point.
    pub fp_count: usize,
    pub propagation_steps: u64,
}

impl ComparisonReport {
    /// Flat `key=value` lines, one metric per line.
    pub fn save(&self, path: &Path) -> Result<(), BenchError> {
        std::fs::write(path, self.to_key_values())?;
        Ok(())
    }

    pub fn to_key_values(&self) -> String {
        format!(
            "tp_ratio={}\nunidentified_ratio={}\nfp_count={}\npropagation_steps={}\n",
            self.tp_ratio, self.unidentified_ratio, self.fp_count, self.propagation_steps
        )
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)?;
        let mut report = ComparisonReport {
            tp_ratio: f64::NAN,
            unidentified_ratio: f64::NAN,
            fp_count: usize::MAX,
            propagation_steps: u64::MAX,
        };
        for line in text.lines() {
            let Some((k, v)) = line.split_once('=') else {
                continue;
            };
            let bad = |w: &str| BenchError::MalformedFile(format!("bad {w}"));
            match k {
                "tp_ratio" => report.tp_ratio = v.parse().map_err(|_| bad(k))?,
                "unidentified_ratio" => {
                    report.unidentified_ratio = v.parse().map_err(|_| bad(k))?
                }
                "fp_count" => report.fp_count = v.parse().map_err(|_| bad(k))?,
                "propagation_steps" => {
                    report.propagation_steps = v.parse().map_err(|_| bad(k))?
                }
                _ => {}
            }
        }
        if report.tp_ratio.is_nan()
            || report.unidentified_ratio.is_nan()
            || report.fp_count == usize::MAX
            || report.propagation_steps == u64::MAX
        {
            return Err(BenchError::MalformedFile("missing metric".into()));
        }
        Ok(report)
    }
}

impl std::fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "  metric              value")?;
        writeln!(f, "  tp_ratio            {:.4}", self.tp_ratio)?;
        writeln!(f, "  unidentified_ratio  {:.4}", self.unidentified_ratio)?;
        writeln!(f, "  fp_count            {}", self.fp_count)?;
        writeln!(f, "  propagation_steps   {}", self.propagation_steps)
    }
}

/// Is a cube's assignment something other than a single minimal node?
fn is_unidentified(assign: &RoAAssignment, minimal: &[usize], cube: usize) -> bool {
    let a = assign.active(cube);
    a.len() != 1 || !minimal.contains(&(a[0] as usize))
}

/// Compare the maximal RoA of `node` against the simulated ground truth.
/// A cube counts as a true positive only when every lattice point inside it
/// reached the goal; any non-reaching point makes it a false positive.
pub fn compare(
    assign: &RoAAssignment,
    mg: &MorseGraph,
    node: usize,
    truth: &GroundTruthRoA,
    grid: &CubicalGrid,
    propagation_steps: u64,
) -> Result<ComparisonReport, BenchError> {
    if truth.lattice.dims() != grid.dims()
        || (0..grid.dims()).any(|i| {
            (truth.lattice.lower[i] - grid.lower()[i]).abs() > 1e-9
                || (truth.lattice.upper[i] - grid.upper()[i]).abs() > 1e-9
        })
    {
        return Err(BenchError::DomainMismatch);
    }
    let roa = assign
        .maximal_roa(node)
        .map_err(|_| BenchError::NoGoalNode)?;
    let mut in_roa = vec![false; grid.cube_count()];
    for &c in roa {
        in_roa[c] = true;
    }
    // Per-cube tallies of lattice points and reached points.
    let mut points = vec![0u32; grid.cube_count()];
    let mut reached = vec![0u32; grid.cube_count()];
    let mut total_reached = 0usize;
    for idx in 0..truth.lattice.len() {
        let x = truth.lattice.point(idx);
        let Ok(Some(cube)) = grid.cube_of_point(&x) else {
            continue;
        };
        points[cube.0] += 1;
        if truth.reached[idx] {
            reached[cube.0] += 1;
            total_reached += 1;
        }
    }
    let mut tp_points = 0usize;
    let mut fp_count = 0usize;
    for &c in roa {
        if points[c] > 0 && reached[c] == points[c] {
            tp_points += points[c] as usize;
        } else if points[c] > reached[c] {
            fp_count += 1;
        }
    }
    let tp_ratio = if total_reached == 0 {
        0.0
    } else {
        tp_points as f64 / total_reached as f64
    };
    let minimal = mg.minimal_nodes();
    let unidentified = (0..grid.cube_count())
        .filter(|&c| is_unidentified(assign, &minimal, c))
        .count();
    Ok(ComparisonReport {
        tp_ratio,
        unidentified_ratio: unidentified as f64 / grid.cube_count() as f64,
        fp_count,
        propagation_steps,
    })
}

/// The minimal Morse node whose cell meets the goal ball, or an error when
/// none or several do.
pub fn goal_node(
    mg: &MorseGraph,
    grid: &CubicalGrid,
    goal: &[f64],
    eps: f64,
) -> Result<usize, BenchError> {
    let (ball_cubes, _) = grid.cubes_intersecting_ball(goal, eps);
    let mut hits = Vec::new();
    for node in mg.minimal_nodes() {
        if Some(node) == mg.star_node() {
            continue;
        }
        let cubes = &mg.nodes[node].cubes;
        if ball_cubes.iter().any(|id| cubes.binary_search(&id.0).is_ok()) {
            hits.push(node);
        }
    }
    match hits.len() {
        0 => Err(BenchError::NoGoalNode),
        1 => Ok(hits[0]),
        _ => Err(BenchError::AmbiguousGoalNode(hits)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{
        linear_test_system, lqr_controller, pendulum_system, spiral_test_system, zero_controller,
        PendulumParams,
        TimeTauMap,
    };
    use crate::morse::{compute_scc, morse_graph};
    use crate::outer::{ExplicitMap, MultivaluedMap};
    use crate::roa::regions_of_attraction;
    use nalgebra::DMatrix;

    #[test]
    fn lattice_points_are_cell_centers() {
        let lat = EvalLattice::new(vec![0.0, -1.0], vec![1.0, 1.0], vec![2, 2]).unwrap();
        assert_eq!(lat.len(), 4);
        assert_eq!(lat.point(0), vec![0.25, -0.5]);
        assert_eq!(lat.point(1), vec![0.25, 0.5]);
        assert_eq!(lat.point(3), vec![0.75, 0.5]);
    }

    #[test]
    fn goal_point_reaches_immediately() {
        let sys = linear_test_system(vec![-1.0, -1.0], 1.0);
        let ctrl = zero_controller(&sys);
        // 1-point lattice centered on the goal.
        let lat = EvalLattice::new(vec![-0.01, -0.01], vec![0.01, 0.01], vec![1, 1]).unwrap();
        let truth = brute_force_roa(&sys, &ctrl, lat, 10, 0.1).unwrap();
        assert_eq!(truth.reached, vec![true]);
    }

    #[test]
    fn contraction_truth_is_all_reached() {
        let sys = linear_test_system(vec![-1.0, -1.0], 1.0);
        let ctrl = zero_controller(&sys);
        let lat = EvalLattice::new(vec![-1.0, -1.0], vec![1.0, 1.0], vec![11, 11]).unwrap();
        let truth = brute_force_roa(&sys, &ctrl, lat, 1000, 0.1).unwrap();
        assert!(truth.reached.iter().all(|&r| r));
        assert_eq!(truth.reached_fraction(), 1.0);
    }

    /// The symmetric pendulum + LQR closed loop commutes with the state
    /// reflection (θ, θ') -> (-θ, -θ'), so the reached raster must too.
    #[test]
    fn pendulum_truth_respects_reflection_symmetry() {
        let sys = pendulum_system(PendulumParams::default()).unwrap();
        let ctrl = lqr_controller(&sys, DMatrix::identity(2, 2), DMatrix::identity(1, 1))
            .unwrap()
            .controller;
        let counts = vec![21, 41];
        let lat = EvalLattice::new(
            sys.state_bounds.lo.clone(),
            sys.state_bounds.hi.clone(),
            counts.clone(),
        )
        .unwrap();
        let truth = brute_force_roa(&sys, &ctrl, lat, 500, 0.1).unwrap();
        assert!(truth.reached_count() > 0);
        for i in 0..counts[0] {
            for j in 0..counts[1] {
                let a = i * counts[1] + j;
                let b = (counts[0] - 1 - i) * counts[1] + (counts[1] - 1 - j);
                assert_eq!(truth.reached[a], truth.reached[b], "({i},{j})");
            }
        }
    }

    #[test]
    fn ground_truth_round_trips_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.bin");
        let lat = EvalLattice::new(vec![0.0], vec![1.0], vec![130]).unwrap();
        let truth = GroundTruthRoA {
            lattice: lat,
            reached: (0..130).map(|i| i % 3 == 0).collect(),
            horizon: 500,
            eps: 0.1,
        };
        truth.save(&path, 0xfeed).unwrap();
        let loaded = GroundTruthRoA::load(&path, 0xfeed).unwrap();
        assert_eq!(loaded, truth);
        assert!(GroundTruthRoA::load(&path, 0xbeef).is_err());
    }

    /// Hand-built 1-D scenario over 4 cubes: cube 0 and 3 are attractors,
    /// cube 1 drains into 0, cube 2 is uncertain between both.
    fn fixture() -> (CubicalGrid, MorseGraph, crate::roa::RoAAssignment) {
        let grid =
            CubicalGrid::new(vec![0.0], vec![4.0], vec![2], vec![false]).unwrap();
        let f = ExplicitMap::new(vec![vec![0], vec![0], vec![0, 3], vec![3]]);
        let cg = compute_scc(&f);
        let mg = morse_graph(&cg);
        let assign = regions_of_attraction(&mg, &cg);
        (grid, mg, assign)
    }

    fn truth_from_bits(bits: &[bool]) -> GroundTruthRoA {
        GroundTruthRoA {
            lattice: EvalLattice::new(vec![0.0], vec![4.0], vec![bits.len()]).unwrap(),
            reached: bits.to_vec(),
            horizon: 1,
            eps: 0.1,
        }
    }

    #[test]
    fn compare_exact_estimate_scores_perfectly() {
        let (grid, mg, assign) = fixture();
        // Two lattice points per cube; truth: cubes 0 and 1 reach node 0's
        // attractor, cubes 2 and 3 do not.
        let truth = truth_from_bits(&[true, true, true, true, false, false, false, false]);
        let report = compare(&assign, &mg, 0, &truth, &grid, 123).unwrap();
        assert_eq!(report.tp_ratio, 1.0);
        assert_eq!(report.fp_count, 0);
        // Cube 2 is the only shared-basin cube.
        assert_eq!(report.unidentified_ratio, 0.25);
        assert_eq!(report.propagation_steps, 123);
    }

    #[test]
    fn compare_flags_false_positives_conservatively() {
        let (grid, mg, assign) = fixture();
        // One point of cube 1 fails to reach: the cube is no longer a true
        // positive and counts as a false positive.
        let truth = truth_from_bits(&[true, true, true, false, false, false, false, false]);
        let report = compare(&assign, &mg, 0, &truth, &grid, 0).unwrap();
        assert_eq!(report.fp_count, 1);
        // TP volume: cube 0's two points out of three reached points.
        assert!((report.tp_ratio - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn compare_empty_estimate_scores_zero() {
        let (grid, mg, assign) = fixture();
        // Node 3 is minimal with RoA = {3}; score it against a truth where
        // nothing reaches.
        let truth = truth_from_bits(&[false; 8]);
        let node = mg
            .nodes
            .iter()
            .position(|n| n.cubes == vec![3])
            .unwrap();
        let report = compare(&assign, &mg, node, &truth, &grid, 0).unwrap();
        assert_eq!(report.tp_ratio, 0.0);
    }

    #[test]
    fn compare_rejects_mismatched_domains() {
        let (grid, mg, assign) = fixture();
        let truth = GroundTruthRoA {
            lattice: EvalLattice::new(vec![0.0], vec![5.0], vec![8]).unwrap(),
            reached: vec![false; 8],
            horizon: 1,
            eps: 0.1,
        };
        assert!(matches!(
            compare(&assign, &mg, 0, &truth, &grid, 0),
            Err(BenchError::DomainMismatch)
        ));
    }

    #[test]
    fn report_round_trips_through_key_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.txt");
        let report = ComparisonReport {
            tp_ratio: 0.9749,
            unidentified_ratio: 0.0166,
            fp_count: 0,
            propagation_steps: 6_579_200,
        };
        report.save(&path).unwrap();
        assert_eq!(ComparisonReport::load(&path).unwrap(), report);
    }

    #[test]
    fn goal_node_selection() {
        let (grid, mg, _) = fixture();
        // Goal in cube 0's attractor.
        let n = goal_node(&mg, &grid, &[0.5], 0.1).unwrap();
        assert_eq!(mg.nodes[n].cubes, vec![0]);
        // Goal in the non-recurrent cube 1, ball too small to touch a cell.
        assert!(matches!(
            goal_node(&mg, &grid, &[1.5], 0.1),
            Err(BenchError::NoGoalNode)
        ));
        // Huge ball touches both attractors.
        assert!(matches!(
            goal_node(&mg, &grid, &[2.0], 3.0),
            Err(BenchError::AmbiguousGoalNode(_))
        ));
    }

    /// Doubling the grid resolution never hurts coverage on the spiral
    /// contraction plant. A non-rotating contraction would not do: its cube
    /// images overlap their own cube in a scale-free band around the origin,
    /// creating spurious recurrent sets that cap the identified RoA at every
    /// resolution. The rotation sweeps images off their own cube.
    #[test]
    fn refinement_is_monotone_on_contraction() {
        // decay > omega makes the square forward-invariant (the inward pull
        // beats the rotational push on every face), so nothing escapes.
        let sys = spiral_test_system(2.0, 1.0, 1.0);
        let ctrl = zero_controller(&sys);
        let map = TimeTauMap::new(sys.clone(), ctrl.clone(), 1.0, 0.01).unwrap();
        let lat =
            EvalLattice::new(vec![-1.0, -1.0], vec![1.0, 1.0], vec![48, 48]).unwrap();
        let truth = brute_force_roa(&sys, &ctrl, lat, 2000, 0.05).unwrap();
        assert_eq!(truth.reached_fraction(), 1.0);
        let mut prev = -1.0;
        for k in [3u32, 4, 5] {
            let grid = CubicalGrid::new(
                vec![-1.0, -1.0],
                vec![1.0, 1.0],
                vec![k, k],
                vec![false, false],
            )
            .unwrap();
            let f = MultivaluedMap::build(grid.clone(), map.fork_counter(), (-2.0f64).exp(), 1).unwrap();
            let cg = compute_scc(&f);
            let mg = morse_graph(&cg);
            let assign = regions_of_attraction(&mg, &cg);
            let node = goal_node(&mg, &grid, &[0.0, 0.0], 0.05).unwrap();
            let report = compare(&assign, &mg, node, &truth, &grid, 0).unwrap();
            assert!(
                report.tp_ratio >= prev,
                "k={k}: {} < {prev}",
                report.tp_ratio
            );
            assert_eq!(report.fp_count, 0);
            prev = report.tp_ratio;
        }
        assert!(prev > 0.5);
    }
}
