//! Uniform cubical decomposition of an orthotope state space with optional
//! periodic dimensions.
//!
//! The grid splits `X = Π [lower_i, upper_i]` into `Π 2^{k_i}` axis-aligned
//! cells and provides the geometry queries the rest of the pipeline is built
//! on: point location, cell corners, the cell diameter and closed-ball
//! intersection with wrap-around on periodic dimensions.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("point has {got} components, grid has {expected} dimensions")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid bounds in dimension {dim}: [{lo}, {hi}]")]
    InvalidBounds { dim: usize, lo: f64, hi: f64 },
    #[error("mismatched field lengths in grid construction")]
    MismatchedFields,
    #[error("grid would contain {0} cubes, exceeding the supported maximum")]
    TooManyCubes(u128),
}

/// Closed axis-aligned box, `lo[i] <= hi[i]` per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Orthotope {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Orthotope {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, GridError> {
        if lo.len() != hi.len() {
            return Err(GridError::MismatchedFields);
        }
        for (dim, (&a, &b)) in lo.iter().zip(&hi).enumerate() {
            if !(b >= a) {
                return Err(GridError::InvalidBounds { dim, lo: a, hi: b });
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn dims(&self) -> usize {
        self.lo.len()
    }

    /// Closed containment test.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dims()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&v, (&a, &b))| v >= a && v <= b)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (&a, &b)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *v = v.clamp(a, b);
        }
    }
}

/// Index of one cube, row-major over per-dimension cell indices
/// (dimension 0 is the most significant).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CubeId(pub usize);

#[derive(Debug, Clone)]
pub struct CubicalGrid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    subdiv_exp: Vec<u32>,
    periodic: Vec<bool>,
    cells: Vec<usize>,
    width: Vec<f64>,
    strides: Vec<usize>,
    total: usize,
}

impl CubicalGrid {
    pub fn new(
        lower: Vec<f64>,
        upper: Vec<f64>,
        subdiv_exp: Vec<u32>,
        periodic: Vec<bool>,
    ) -> Result<Self, GridError> {
        let n = lower.len();
        if upper.len() != n || subdiv_exp.len() != n || periodic.len() != n {
            return Err(GridError::MismatchedFields);
        }
        for (dim, (&a, &b)) in lower.iter().zip(&upper).enumerate() {
            if !(b > a) {
                return Err(GridError::InvalidBounds { dim, lo: a, hi: b });
            }
        }
        let mut total: u128 = 1;
        for &k in &subdiv_exp {
            total = total.checked_shl(k).ok_or(GridError::TooManyCubes(u128::MAX))?;
        }
        if total > usize::MAX as u128 / 2 {
            return Err(GridError::TooManyCubes(total));
        }
        let cells: Vec<usize> = subdiv_exp.iter().map(|&k| 1usize << k).collect();
        let width: Vec<f64> = (0..n).map(|i| (upper[i] - lower[i]) / cells[i] as f64).collect();
        let mut strides = vec![1usize; n];
        for i in (0..n.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * cells[i + 1];
        }
        Ok(Self {
            lower,
            upper,
            subdiv_exp,
            periodic,
            cells,
            width,
            strides,
            total: total as usize,
        })
    }

    /// Spread a total subdivision budget `2^k_total` as evenly as possible
    /// over `n` dimensions, extra subdivisions going to the first dimensions.
    pub fn split_exponent(k_total: u32, n: usize) -> Vec<u32> {
        let base = k_total / n as u32;
        let extra = (k_total % n as u32) as usize;
        (0..n).map(|i| base + u32::from(i < extra)).collect()
    }

    pub fn dims(&self) -> usize {
        self.lower.len()
    }

    pub fn cube_count(&self) -> usize {
        self.total
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn subdiv_exp(&self) -> &[u32] {
        &self.subdiv_exp
    }

    pub fn periodic(&self) -> &[bool] {
        &self.periodic
    }

    pub fn cells_per_dim(&self) -> &[usize] {
        &self.cells
    }

    pub fn cell_width(&self) -> &[f64] {
        &self.width
    }

    pub fn period(&self, dim: usize) -> f64 {
        self.upper[dim] - self.lower[dim]
    }

    pub fn domain(&self) -> Orthotope {
        Orthotope {
            lo: self.lower.clone(),
            hi: self.upper.clone(),
        }
    }

    pub fn index_of(&self, coords: &[usize]) -> CubeId {
        debug_assert_eq!(coords.len(), self.dims());
        let mut idx = 0;
        for (i, &c) in coords.iter().enumerate() {
            debug_assert!(c < self.cells[i]);
            idx += c * self.strides[i];
        }
        CubeId(idx)
    }

    pub fn coords_of(&self, id: CubeId) -> Vec<usize> {
        debug_assert!(id.0 < self.total);
        let mut rem = id.0;
        let mut coords = vec![0usize; self.dims()];
        for i in 0..self.dims() {
            coords[i] = rem / self.strides[i];
            rem %= self.strides[i];
        }
        coords
    }

    /// Wrap the periodic components of `x` into `[lower, upper)` in place.
    pub fn wrap_point(&self, x: &mut [f64]) {
        for i in 0..self.dims() {
            if self.periodic[i] {
                let per = self.period(i);
                let mut v = (x[i] - self.lower[i]).rem_euclid(per) + self.lower[i];
                // rem_euclid can return exactly `per` for tiny negatives
                if v >= self.upper[i] {
                    v = self.lower[i];
                }
                x[i] = v;
            }
        }
    }

    /// Geodesic (periodic-aware) Euclidean distance between two points.
    pub fn geodesic_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut sum = 0.0;
        for i in 0..self.dims() {
            let mut d = (a[i] - b[i]).abs();
            if self.periodic[i] {
                let per = self.period(i);
                d = d.rem_euclid(per);
                d = d.min(per - d);
            }
            sum += d * d;
        }
        sum.sqrt()
    }

    /// Locate the cube containing `x`. Cells are lower-closed/upper-open, the
    /// topmost cell along a non-periodic dimension is closed above. Periodic
    /// components are wrapped first. `None` iff some non-periodic component
    /// lies outside the bounds.
    pub fn cube_of_point(&self, x: &[f64]) -> Result<Option<CubeId>, GridError> {
        if x.len() != self.dims() {
            return Err(GridError::DimensionMismatch {
                expected: self.dims(),
                got: x.len(),
            });
        }
        let mut coords = vec![0usize; self.dims()];
        for i in 0..self.dims() {
            let v = x[i];
            if self.periodic[i] {
                let per = self.period(i);
                let mut w = (v - self.lower[i]).rem_euclid(per);
                if w >= per {
                    w = 0.0;
                }
                let j = ((w / self.width[i]) as usize).min(self.cells[i] - 1);
                coords[i] = j;
            } else {
                if v < self.lower[i] || v > self.upper[i] || v.is_nan() {
                    return Ok(None);
                }
                let j = (((v - self.lower[i]) / self.width[i]) as usize).min(self.cells[i] - 1);
                coords[i] = j;
            }
        }
        Ok(Some(self.index_of(&coords)))
    }

    /// Closed bounds of one cell, in geometric (unwrapped) coordinates.
    pub fn cube_bounds(&self, id: CubeId) -> Orthotope {
        let coords = self.coords_of(id);
        let lo: Vec<f64> = (0..self.dims())
            .map(|i| self.lower[i] + coords[i] as f64 * self.width[i])
            .collect();
        let hi: Vec<f64> = (0..self.dims())
            .map(|i| self.lower[i] + (coords[i] + 1) as f64 * self.width[i])
            .collect();
        Orthotope { lo, hi }
    }

    /// All `2^n` corner points of a cell in a deterministic order: corner `m`
    /// takes the upper bound in dimension `i` iff bit `i` of `m` is set.
    /// Periodic dimensions report geometric (unwrapped) coordinates.
    pub fn corners(&self, id: CubeId) -> Vec<Vec<f64>> {
        let b = self.cube_bounds(id);
        let n = self.dims();
        (0..1usize << n)
            .map(|mask| {
                (0..n)
                    .map(|i| if mask >> i & 1 == 1 { b.hi[i] } else { b.lo[i] })
                    .collect()
            })
            .collect()
    }

    /// Euclidean length of one cell's main diagonal. For a uniform grid this
    /// equals the maximal cell diameter over the whole decomposition.
    pub fn diameter(&self) -> f64 {
        self.width.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    /// All cubes whose closed cell meets the closed Euclidean ball `B(c, r)`,
    /// with wrap-around on periodic dimensions, plus an escape flag set iff
    /// the ball (or `c` itself) extends outside `X` along a non-periodic
    /// dimension. The returned ids are sorted and distinct.
    pub fn cubes_intersecting_ball(&self, c: &[f64], r: f64) -> (Vec<CubeId>, bool) {
        debug_assert_eq!(c.len(), self.dims());
        debug_assert!(r >= 0.0);
        let n = self.dims();
        let mut escape = false;
        // Per-dimension candidate cells with their 1-D distance to c.
        let mut cand: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        for i in 0..n {
            let w = self.width[i];
            let nc = self.cells[i];
            let lo = self.lower[i];
            let mut list: Vec<(usize, f64)> = Vec::new();
            if self.periodic[i] {
                let per = self.period(i);
                let jlo = ((c[i] - r - lo) / w).floor() as i64 - 1;
                let jhi = ((c[i] + r - lo) / w).floor() as i64 + 1;
                if jhi - jlo + 1 >= nc as i64 {
                    // Ball wraps most of the circle; take every cell at its
                    // geodesic 1-D distance.
                    for j in 0..nc {
                        let a = lo + j as f64 * w;
                        let b = a + w;
                        let mut d = f64::INFINITY;
                        for k in -1..=1 {
                            let cc = c[i] - k as f64 * per;
                            d = d.min(interval_distance(cc, a, b));
                        }
                        if d <= r {
                            list.push((j, d));
                        }
                    }
                } else {
                    for j in jlo..=jhi {
                        let idx = j.rem_euclid(nc as i64) as usize;
                        let a = lo + j as f64 * w;
                        let d = interval_distance(c[i], a, a + w);
                        if d <= r {
                            list.push((idx, d));
                        }
                    }
                    list.sort_by_key(|&(idx, _)| idx);
                    list.dedup_by(|a, b| {
                        if a.0 == b.0 {
                            b.1 = b.1.min(a.1);
                            true
                        } else {
                            false
                        }
                    });
                }
            } else {
                if c[i] - r < self.lower[i] || c[i] + r > self.upper[i] || c[i].is_nan() {
                    escape = true;
                }
                if c[i].is_nan() {
                    return (Vec::new(), true);
                }
                let jlo = (((c[i] - r - lo) / w).floor() as i64 - 1).max(0);
                let jhi = (((c[i] + r - lo) / w).floor() as i64 + 1).min(nc as i64 - 1);
                for j in jlo..=jhi {
                    let a = lo + j as f64 * w;
                    let d = interval_distance(c[i], a, a + w);
                    if d <= r {
                        list.push((j as usize, d));
                    }
                }
            }
            if list.is_empty() {
                return (Vec::new(), escape);
            }
            cand.push(list);
        }
        // Cartesian product, pruning on the accumulated squared distance.
        let r2 = r * r;
        let mut out = Vec::new();
        let mut choice = vec![0usize; n];
        let mut acc = vec![0.0f64; n + 1];
        let mut dim = 0usize;
        loop {
            if choice[dim] < cand[dim].len() {
                let (_, d) = cand[dim][choice[dim]];
                let s = acc[dim] + d * d;
                if s <= r2 {
                    if dim + 1 == n {
                        let mut idx = 0usize;
                        for i in 0..n {
                            idx += cand[i][choice[i]].0 * self.strides[i];
                        }
                        out.push(CubeId(idx));
                        choice[dim] += 1;
                    } else {
                        acc[dim + 1] = s;
                        dim += 1;
                        choice[dim] = 0;
                    }
                } else {
                    choice[dim] += 1;
                }
            } else if dim == 0 {
                break;
            } else {
                dim -= 1;
                choice[dim] += 1;
            }
        }
        out.sort_unstable();
        out.dedup();
        (out, escape)
    }

    /// Per-dimension vertex counts of the refined sample lattice: `refine`
    /// samples per cell edge, corners included, periodically identified.
    pub fn lattice_counts(&self, refine: usize) -> Vec<usize> {
        (0..self.dims())
            .map(|i| {
                let base = refine * self.cells[i];
                if self.periodic[i] {
                    base
                } else {
                    base + 1
                }
            })
            .collect()
    }

    /// Total number of distinct sample points on the refined lattice.
    pub fn lattice_size(&self, refine: usize) -> usize {
        self.lattice_counts(refine).iter().product()
    }

    /// Geometric coordinates of lattice point `idx` (row-major over the
    /// lattice counts).
    pub fn lattice_point(&self, refine: usize, idx: usize) -> Vec<f64> {
        let counts = self.lattice_counts(refine);
        let mut rem = idx;
        let mut x = vec![0.0; self.dims()];
        for i in (0..self.dims()).rev() {
            let j = rem % counts[i];
            rem /= counts[i];
            x[i] = self.lower[i] + j as f64 * self.width[i] / refine as f64;
        }
        x
    }

    /// Lattice indices of the `(refine+1)^n` sample points of one cube
    /// (its corners plus the refined interior face/edge samples).
    pub fn cube_lattice_points(&self, refine: usize, id: CubeId) -> Vec<usize> {
        let counts = self.lattice_counts(refine);
        let coords = self.coords_of(id);
        let n = self.dims();
        let m = refine + 1;
        let total = m.pow(n as u32);
        let mut flat = Vec::with_capacity(total);
        // Dimension 0 varies fastest, matching the corner enumeration order.
        for p in 0..total {
            let mut rem = p;
            let mut digits = vec![0usize; n];
            for d in digits.iter_mut() {
                *d = rem % m;
                rem /= m;
            }
            let mut idx = 0usize;
            for i in 0..n {
                let mut j = refine * coords[i] + digits[i];
                if self.periodic[i] {
                    j %= counts[i];
                }
                idx = idx * counts[i] + j;
            }
            flat.push(idx);
        }
        flat
    }
}

/// Distance from a scalar to the closed interval `[a, b]`.
fn interval_distance(c: f64, a: f64, b: f64) -> f64 {
    if c < a {
        a - c
    } else if c > b {
        c - b
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid_1d() -> CubicalGrid {
        CubicalGrid::new(vec![0.0], vec![1.0], vec![1], vec![false]).unwrap()
    }

    fn pendulum_grid(k: u32) -> CubicalGrid {
        CubicalGrid::new(
            vec![-std::f64::consts::PI, -2.0 * std::f64::consts::PI],
            vec![std::f64::consts::PI, 2.0 * std::f64::consts::PI],
            vec![k, k],
            vec![true, false],
        )
        .unwrap()
    }

    #[test]
    fn cube_of_point_first_half_interval() {
        let g = grid_1d();
        assert_eq!(g.cube_of_point(&[0.25]).unwrap(), Some(CubeId(0)));
        assert_eq!(g.cube_of_point(&[0.75]).unwrap(), Some(CubeId(1)));
        // Topmost cell closed above.
        assert_eq!(g.cube_of_point(&[1.0]).unwrap(), Some(CubeId(1)));
        assert_eq!(g.cube_of_point(&[1.0001]).unwrap(), None);
        assert_eq!(g.cube_of_point(&[-0.0001]).unwrap(), None);
    }

    #[test]
    fn cube_of_point_periodic_wrap() {
        let g = pendulum_grid(3);
        let pi = std::f64::consts::PI;
        // theta = pi wraps to -pi, the lowest theta-cell.
        let at_pi = g.cube_of_point(&[pi, 0.0]).unwrap().unwrap();
        let at_neg_pi = g.cube_of_point(&[-pi, 0.0]).unwrap().unwrap();
        assert_eq!(at_pi, at_neg_pi);
        assert_eq!(g.coords_of(at_pi)[0], 0);
    }

    #[test]
    fn cube_of_point_dimension_mismatch() {
        let g = grid_1d();
        assert!(g.cube_of_point(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn corners_unit_square() {
        let g = CubicalGrid::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![1, 1], vec![false, false])
            .unwrap();
        let mut cs = g.corners(CubeId(0));
        cs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(
            cs,
            vec![
                vec![0.0, 0.0],
                vec![0.0, 0.5],
                vec![0.5, 0.0],
                vec![0.5, 0.5]
            ]
        );
    }

    #[test]
    fn corners_k0() {
        let g = CubicalGrid::new(vec![-1.0], vec![1.0], vec![0], vec![false]).unwrap();
        let cs = g.corners(CubeId(0));
        assert_eq!(cs, vec![vec![-1.0], vec![1.0]]);
    }

    #[test]
    fn corners_lie_on_cube_bounds() {
        let g = CubicalGrid::new(
            vec![0.0, -1.0, 2.0, 0.0],
            vec![1.0, 1.0, 4.0, 8.0],
            vec![1, 2, 1, 2],
            vec![false, true, false, false],
        )
        .unwrap();
        let id = CubeId(g.cube_count() / 3);
        let b = g.cube_bounds(id);
        let cs = g.corners(id);
        assert_eq!(cs.len(), 16);
        let mut distinct = cs.clone();
        distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
        distinct.dedup();
        assert_eq!(distinct.len(), 16);
        for c in &cs {
            assert!(b.contains(c));
            // Each corner touches the cell boundary in every dimension.
            for i in 0..4 {
                assert!(c[i] == b.lo[i] || c[i] == b.hi[i]);
            }
        }
    }

    #[test]
    fn diameter_examples() {
        let g = CubicalGrid::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![1, 1], vec![false, false])
            .unwrap();
        assert!((g.diameter() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        let g1 = CubicalGrid::new(vec![0.0], vec![2.0], vec![1], vec![false]).unwrap();
        assert!((g1.diameter() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diameter_matches_corner_pair_brute_force() {
        let g = CubicalGrid::new(
            vec![-3.0, 0.5, 1.0],
            vec![2.0, 0.75, 9.0],
            vec![2, 1, 3],
            vec![false, false, false],
        )
        .unwrap();
        let mut best: f64 = 0.0;
        for id in 0..g.cube_count() {
            let cs = g.corners(CubeId(id));
            for a in &cs {
                for b in &cs {
                    let d: f64 = a
                        .iter()
                        .zip(b)
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                        .sqrt();
                    best = best.max(d);
                }
            }
        }
        assert!((g.diameter() - best).abs() < 1e-12);
    }

    #[test]
    fn ball_r0_interior_point() {
        let g = CubicalGrid::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![2, 2], vec![false, false])
            .unwrap();
        let (cubes, escape) = g.cubes_intersecting_ball(&[0.1, 0.1], 0.0);
        assert_eq!(cubes, vec![CubeId(0)]);
        assert!(!escape);
    }

    #[test]
    fn ball_r0_shared_face() {
        let g = grid_1d();
        let (cubes, escape) = g.cubes_intersecting_ball(&[0.5], 0.0);
        assert_eq!(cubes, vec![CubeId(0), CubeId(1)]);
        assert!(!escape);
    }

    #[test]
    fn ball_escape_flag() {
        let g = grid_1d();
        let (_, escape) = g.cubes_intersecting_ball(&[0.9], 0.2);
        assert!(escape);
        let (cubes, escape) = g.cubes_intersecting_ball(&[1.5], 0.1);
        assert!(cubes.is_empty());
        assert!(escape);
        // Periodic dim never escapes.
        let g2 = CubicalGrid::new(vec![0.0], vec![1.0], vec![1], vec![true]).unwrap();
        let (cubes, escape) = g2.cubes_intersecting_ball(&[0.99], 0.3);
        assert_eq!(cubes, vec![CubeId(0), CubeId(1)]);
        assert!(!escape);
    }

    /// Exhaustive ball-box oracle: per-cube closest-point distance computed
    /// independently via the min over 3^p periodic images.
    fn oracle_ball(g: &CubicalGrid, c: &[f64], r: f64) -> Vec<CubeId> {
        let n = g.dims();
        let mut out = Vec::new();
        'cube: for id in 0..g.cube_count() {
            let b = g.cube_bounds(CubeId(id));
            // enumerate image shifts per periodic dim
            let shifts: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    if g.periodic()[i] {
                        let p = g.period(i);
                        vec![-p, 0.0, p]
                    } else {
                        vec![0.0]
                    }
                })
                .collect();
            let mut combos = vec![vec![]];
            for s in &shifts {
                let mut next = Vec::new();
                for c0 in &combos {
                    for &v in s {
                        let mut c1: Vec<f64> = c0.clone();
                        c1.push(v);
                        next.push(c1);
                    }
                }
                combos = next;
            }
            for sh in &combos {
                let mut d2 = 0.0;
                for i in 0..n {
                    let ci = c[i] + sh[i];
                    let d = if ci < b.lo[i] {
                        b.lo[i] - ci
                    } else if ci > b.hi[i] {
                        ci - b.hi[i]
                    } else {
                        0.0
                    };
                    d2 += d * d;
                }
                if d2.sqrt() <= r {
                    out.push(CubeId(id));
                    continue 'cube;
                }
            }
        }
        out
    }

    proptest! {
        #[test]
        fn ball_matches_exhaustive_oracle(
            cx in -4.0f64..4.0, cy in -7.0f64..7.0, r in 0.0f64..2.5
        ) {
            let g = CubicalGrid::new(
                vec![-3.0, -6.0],
                vec![3.0, 6.0],
                vec![3, 2],
                vec![true, false],
            ).unwrap();
            let (got, _) = g.cubes_intersecting_ball(&[cx, cy], r);
            let want = oracle_ball(&g, &[cx, cy], r);
            prop_assert_eq!(got, want);
        }

        #[test]
        fn ball_monotone_in_radius(
            cx in -3.0f64..3.0, cy in -6.0f64..6.0,
            r1 in 0.0f64..2.0, dr in 0.0f64..1.0
        ) {
            let g = CubicalGrid::new(
                vec![-3.0, -6.0],
                vec![3.0, 6.0],
                vec![2, 3],
                vec![true, false],
            ).unwrap();
            let (small, _) = g.cubes_intersecting_ball(&[cx, cy], r1);
            let (big, _) = g.cubes_intersecting_ball(&[cx, cy], r1 + dr);
            for id in &small {
                prop_assert!(big.contains(id));
            }
        }

        #[test]
        fn cube_of_point_matches_containment_scan(
            x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0
        ) {
            let g = CubicalGrid::new(
                vec![-1.0, -1.0, -1.0],
                vec![1.0, 1.0, 1.0],
                vec![2, 1, 2],
                vec![false, true, false],
            ).unwrap();
            let p = [x, y, z];
            let got = g.cube_of_point(&p).unwrap().unwrap();
            // Brute-force scan over all cube bounds, half-open along each dim
            // (with the topmost non-periodic cell closed above).
            let mut hits = Vec::new();
            for id in 0..g.cube_count() {
                let b = g.cube_bounds(CubeId(id));
                let mut inside = true;
                for i in 0..3 {
                    let topmost = !g.periodic()[i]
                        && (b.hi[i] - g.upper()[i]).abs() < 1e-12;
                    let hi_ok = if topmost { p[i] <= b.hi[i] } else { p[i] < b.hi[i] };
                    if !(p[i] >= b.lo[i] && hi_ok) {
                        inside = false;
                        break;
                    }
                }
                if inside {
                    hits.push(CubeId(id));
                }
            }
            prop_assert_eq!(hits, vec![got]);
        }

        #[test]
        fn periodic_translation_invariance(th in -10.0f64..10.0, om in -6.0f64..6.0) {
            let g = pendulum_grid(4);
            let tau = 2.0 * std::f64::consts::PI;
            let a = g.cube_of_point(&[th, om]).unwrap();
            let b = g.cube_of_point(&[th + tau, om]).unwrap();
            let c = g.cube_of_point(&[th - 2.0 * tau, om]).unwrap();
            prop_assert_eq!(a, b);
            prop_assert_eq!(a, c);
        }

        #[test]
        fn corners_within_cube_bounds(id in 0usize..64) {
            let g = CubicalGrid::new(
                vec![-2.0, 0.0],
                vec![2.0, 10.0],
                vec![3, 3],
                vec![true, false],
            ).unwrap();
            let b = g.cube_bounds(CubeId(id));
            for c in g.corners(CubeId(id)) {
                prop_assert!(b.contains(&c));
            }
        }
    }

    #[test]
    fn cube_bounds_round_trip_on_centers() {
        let g = CubicalGrid::new(vec![0.0], vec![1.0], vec![1], vec![false]).unwrap();
        assert_eq!(
            g.cube_bounds(CubeId(1)),
            Orthotope::new(vec![0.5], vec![1.0]).unwrap()
        );
        let g2 = pendulum_grid(3);
        for id in 0..g2.cube_count() {
            let b = g2.cube_bounds(CubeId(id));
            let center: Vec<f64> =
                b.lo.iter().zip(&b.hi).map(|(a, c)| 0.5 * (a + c)).collect();
            assert_eq!(g2.cube_of_point(&center).unwrap(), Some(CubeId(id)));
        }
    }

    #[test]
    fn cells_tile_domain_with_disjoint_interiors() {
        let g = CubicalGrid::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![2, 1], vec![false, false])
            .unwrap();
        for a in 0..g.cube_count() {
            for b in (a + 1)..g.cube_count() {
                let ba = g.cube_bounds(CubeId(a));
                let bb = g.cube_bounds(CubeId(b));
                // Interiors overlap iff strict overlap in every dim.
                let overlap = (0..2).all(|i| ba.lo[i] < bb.hi[i] && bb.lo[i] < ba.hi[i]);
                assert!(!overlap, "cubes {a} and {b} overlap");
            }
        }
    }

    #[test]
    fn lattice_counts_pendulum() {
        let g = pendulum_grid(8);
        assert_eq!(g.lattice_counts(1), vec![256, 257]);
        assert_eq!(g.lattice_size(1), 65_792);
    }

    #[test]
    fn cube_lattice_points_are_cell_corners_at_refine_1() {
        let g = pendulum_grid(2);
        let id = CubeId(5);
        let pts = g.cube_lattice_points(1, id);
        assert_eq!(pts.len(), 4);
        let corners = g.corners(id);
        for (latt, corner) in pts.iter().zip(&corners) {
            let mut p = g.lattice_point(1, *latt);
            let mut c = corner.clone();
            g.wrap_point(&mut p);
            g.wrap_point(&mut c);
            assert!(g.geodesic_distance(&p, &c) < 1e-12);
        }
    }

    #[test]
    fn split_exponent_spreads_evenly() {
        assert_eq!(CubicalGrid::split_exponent(16, 2), vec![8, 8]);
        assert_eq!(CubicalGrid::split_exponent(15, 3), vec![5, 5, 5]);
        assert_eq!(CubicalGrid::split_exponent(20, 3), vec![7, 7, 6]);
        assert_eq!(CubicalGrid::split_exponent(20, 4), vec![5, 5, 5, 5]);
    }
}
