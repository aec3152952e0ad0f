//! Regions of attraction: per-cube assignments of maximal (O^•) and minimal
//! (O_•) reachable Morse nodes, the maximal RoAs of minimal nodes, and the
//! escape-aware variant that subtracts the exclusive basin of ⋆.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dynamics::TimeTauMap;
use crate::grid::{CubeId, CubicalGrid};
use crate::morse::{CondensationGraph, MorseGraph};

#[derive(Debug, Error)]
pub enum RoaError {
    #[error("node {0} is not a minimal Morse node")]
    NotMinimal(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoaMode {
    /// No escape: maximal RoAs read from O^•.
    Standard,
    /// ⋆ present: assignments use O_• semantics and R_⋆ is subtracted.
    Escape,
}

/// Per-cube Morse-node assignments. Both directions are always computed;
/// `mode` records which one defines the maximal RoAs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoAAssignment {
    pub mode: RoaMode,
    /// O^• and O_• per SCC, as sorted Morse-node index lists; cube-level
    /// values are read through `scc_of_cube`.
    sharp_of_scc: Vec<Vec<u32>>,
    flat_of_scc: Vec<Vec<u32>>,
    scc_of_cube: Vec<usize>,
    cube_count: usize,
    /// (minimal node, its maximal RoA cube set), star excluded.
    pub maximal_roas: Vec<(usize, Vec<usize>)>,
    /// Cubes assigned exclusively to ⋆ (escape mode only).
    pub r_star: Vec<usize>,
    pub star_node: Option<usize>,
}

fn bit(set: &[u64], i: usize) -> bool {
    set[i / 64] >> (i % 64) & 1 == 1
}

fn intersects(a: &[u64], b: &[u64]) -> bool {
    a.iter().zip(b).any(|(x, y)| x & y != 0)
}

/// Compute O^•/O_• for every cube and the maximal RoAs of the minimal Morse
/// nodes. A cube's reachable Morse set comes from the condensation sweep in
/// the Morse graph; the assignment keeps its maximal (respectively minimal)
/// elements under the Morse order.
pub fn regions_of_attraction(mg: &MorseGraph, cg: &CondensationGraph) -> RoAAssignment {
    let p = mg.node_count();
    let words = mg.bitset_words();
    // strictly_above[p] = nodes r ≠ p with p ≤ r; strictly_below dually.
    let mut above = vec![vec![0u64; words]; p];
    let mut below = vec![vec![0u64; words]; p];
    for a in 0..p {
        for b in 0..p {
            if a != b && mg.leq(a, b) {
                // a ≤ b: b is strictly above a.
                above[a][b / 64] |= 1 << (b % 64);
                below[b][a / 64] |= 1 << (a % 64);
            }
        }
    }
    let reduce = |reach: &[u64], strict: &[Vec<u64>]| -> Vec<u32> {
        (0..p)
            .filter(|&q| bit(reach, q) && !intersects(reach, &strict[q]))
            .map(|q| q as u32)
            .collect()
    };
    let mut sharp_of_scc = Vec::with_capacity(cg.scc_count);
    let mut flat_of_scc = Vec::with_capacity(cg.scc_count);
    for s in 0..cg.scc_count {
        let reach = mg.reachable_nodes(s);
        sharp_of_scc.push(reduce(reach, &above));
        flat_of_scc.push(reduce(reach, &below));
    }

    let mode = if cg.star_scc.is_some() {
        RoaMode::Escape
    } else {
        RoaMode::Standard
    };
    let star_node = mg.star_node();
    let cube_count = cg.cube_count();
    let active = match mode {
        RoaMode::Standard => &sharp_of_scc,
        RoaMode::Escape => &flat_of_scc,
    };
    let mut r_star = Vec::new();
    if let Some(star) = star_node {
        for cube in 0..cube_count {
            if active[cg.scc_of_cube[cube]].as_slice() == [star as u32] {
                r_star.push(cube);
            }
        }
    }
    let mut maximal_roas = Vec::new();
    for node in mg.minimal_nodes() {
        if Some(node) == star_node {
            continue;
        }
        let want = [node as u32];
        // Singleton assignment {p}; R_⋆ cubes can never satisfy this, so the
        // R − R_⋆ subtraction is implicit.
        let cubes: Vec<usize> = (0..cube_count)
            .filter(|&c| active[cg.scc_of_cube[c]].as_slice() == want)
            .collect();
        maximal_roas.push((node, cubes));
    }
    RoAAssignment {
        mode,
        sharp_of_scc,
        flat_of_scc,
        scc_of_cube: cg.scc_of_cube.clone(),
        cube_count,
        maximal_roas,
        r_star,
        star_node,
    }
}

impl RoAAssignment {
    pub fn cube_count(&self) -> usize {
        self.cube_count
    }

    /// O^•(ξ): maximal Morse nodes reachable from the cube.
    pub fn o_sharp(&self, cube: usize) -> &[u32] {
        &self.sharp_of_scc[self.scc_of_cube[cube]]
    }

    /// O_•(ξ): minimal Morse nodes reachable from the cube.
    pub fn o_flat(&self, cube: usize) -> &[u32] {
        &self.flat_of_scc[self.scc_of_cube[cube]]
    }

    /// The assignment the current mode uses for maximal RoAs.
    pub fn active(&self, cube: usize) -> &[u32] {
        match self.mode {
            RoaMode::Standard => self.o_sharp(cube),
            RoaMode::Escape => self.o_flat(cube),
        }
    }

    /// The maximal RoA of a minimal Morse node.
    pub fn maximal_roa(&self, node: usize) -> Result<&[usize], RoaError> {
        self.maximal_roas
            .iter()
            .find(|(n, _)| *n == node)
            .map(|(_, cubes)| cubes.as_slice())
            .ok_or(RoaError::NotMinimal(node))
    }
}

/// Hit-rate report for one Morse node: of `samples` random starts inside
/// cubes assigned exclusively to the node, how many trajectories entered one
/// of the node's cubes within the horizon.
#[derive(Debug, Clone)]
pub struct NodeHitRate {
    pub node: usize,
    pub samples: usize,
    pub hits: usize,
}

impl NodeHitRate {
    pub fn rate(&self) -> f64 {
        if self.samples == 0 {
            1.0
        } else {
            self.hits as f64 / self.samples as f64
        }
    }
}

/// Direct-simulation check of the attraction property: for each minimal
/// Morse node p, sample states in cubes with O^•(ξ) = {p} and iterate the
/// time-τ map up to `horizon` times, recording whether the trajectory enters
/// a cube of M(p). Cubes with multi-valued assignments are excluded.
pub fn theorem1_check(
    map: &TimeTauMap,
    grid: &CubicalGrid,
    mg: &MorseGraph,
    assign: &RoAAssignment,
    samples: usize,
    horizon: usize,
    seed: u64,
) -> Vec<NodeHitRate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for node in mg.minimal_nodes() {
        if Some(node) == mg.star_node() {
            continue;
        }
        let want = [node as u32];
        let basin: Vec<usize> = (0..assign.cube_count())
            .filter(|&c| assign.o_sharp(c) == want)
            .collect();
        let target: Vec<usize> = mg.nodes[node].cubes.clone();
        let mut hits = 0;
        let mut attempted = 0;
        if !basin.is_empty() {
            for _ in 0..samples {
                let cube = basin[rng.gen_range(0..basin.len())];
                let b = grid.cube_bounds(CubeId(cube));
                let x0: Vec<f64> = (0..grid.dims())
                    .map(|i| rng.gen_range(b.lo[i]..b.hi[i]))
                    .collect();
                attempted += 1;
                let mut x = x0;
                let mut hit = target.binary_search(&cube).is_ok();
                for _ in 0..horizon {
                    if hit {
                        break;
                    }
                    match map.propagate(&x) {
                        Ok(y) => x = y,
                        Err(_) => break,
                    }
                    match grid.cube_of_point(&x) {
                        Ok(Some(id)) => {
                            if target.binary_search(&id.0).is_ok() {
                                hit = true;
                            }
                        }
                        _ => break,
                    }
                }
                if hit {
                    hits += 1;
                }
            }
        }
        out.push(NodeHitRate {
            node,
            samples: attempted,
            hits,
        });
    }
    out
}
