//! Artifact writers: DOT rendering of the Morse graph, per-cube CSV of the
//! node assignments, plain PPM rasters, and the cube-set files that feed the
//! hybrid controller's switching predicate.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use thiserror::Error;

use crate::bench::GroundTruthRoA;
use crate::grid::{CubeId, CubicalGrid};
use crate::morse::{CondensationGraph, MorseGraph};
use crate::roa::RoAAssignment;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("state space has fewer than two dimensions to rasterize")]
    NotRasterizable,
    #[error("projection axes {0} and {1} are invalid or equal")]
    BadProjection(usize, usize),
    #[error("malformed cube-set file: {0}")]
    MalformedCubeSet(String),
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// DOT digraph of the Morse graph: one node per recurrent set labeled with
/// its cube count (`escape` for ⋆), edges directed from larger to smaller.
pub fn morse_graph_dot(mg: &MorseGraph) -> String {
    let mut out = String::from("digraph morse_graph {\n");
    out.push_str("  rankdir=TB;\n  node [shape=box];\n");
    for (i, node) in mg.nodes.iter().enumerate() {
        if node.is_star {
            let _ = writeln!(out, "  n{i} [label=\"{i}: escape\"];");
        } else {
            let _ = writeln!(out, "  n{i} [label=\"{i}: {}\"];", node.cubes.len());
        }
    }
    for &(p, q) in &mg.hasse_edges {
        let _ = writeln!(out, "  n{p} -> n{q};");
    }
    out.push_str("}\n");
    out
}

pub fn write_morse_graph_dot(mg: &MorseGraph, path: &Path) -> Result<(), ExportError> {
    std::fs::write(path, morse_graph_dot(mg))?;
    Ok(())
}

/// Per-cube CSV: `cube_index, scc_id, morse_nodes` with the assigned node
/// indices semicolon-joined and ⋆ printed as -1.
pub fn write_roa_csv(
    assign: &RoAAssignment,
    cg: &CondensationGraph,
    path: &Path,
) -> Result<(), ExportError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "cube_index, scc_id, morse_nodes")?;
    for cube in 0..assign.cube_count() {
        let nodes: Vec<String> = assign
            .active(cube)
            .iter()
            .map(|&n| {
                if Some(n as usize) == assign.star_node {
                    "-1".to_string()
                } else {
                    n.to_string()
                }
            })
            .collect();
        writeln!(f, "{}, {}, {}", cube, cg.scc_of_cube[cube], nodes.join(";"))?;
    }
    Ok(())
}

/// Plain-text cube-set file: grid header plus one member cube index per
/// line. Loadable as a hybrid-controller switching region.
pub fn write_cube_set(
    grid: &CubicalGrid,
    cubes: &[usize],
    path: &Path,
) -> Result<(), ExportError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "cubeset {}", grid.dims())?;
    for i in 0..grid.dims() {
        writeln!(
            f,
            "{} {} {} {}",
            grid.lower()[i],
            grid.upper()[i],
            grid.subdiv_exp()[i],
            u8::from(grid.periodic()[i]),
        )?;
    }
    for &c in cubes {
        writeln!(f, "{c}")?;
    }
    Ok(())
}

/// Read a cube-set file back as its grid and membership mask.
pub fn read_cube_set(path: &Path) -> Result<(CubicalGrid, Vec<bool>), ExportError> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut lines = f.lines();
    let bad = |w: &str| ExportError::MalformedCubeSet(w.into());
    let header = lines.next().ok_or_else(|| bad("empty file"))??;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 2 || toks[0] != "cubeset" {
        return Err(bad("header must be `cubeset n`"));
    }
    let n: usize = toks[1].parse().map_err(|_| bad("dimension count"))?;
    let (mut lower, mut upper, mut exp, mut periodic) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let line = lines.next().ok_or_else(|| bad("missing dimension line"))??;
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 4 {
            return Err(bad("dimension line"));
        }
        lower.push(t[0].parse::<f64>().map_err(|_| bad("lower"))?);
        upper.push(t[1].parse::<f64>().map_err(|_| bad("upper"))?);
        exp.push(t[2].parse::<u32>().map_err(|_| bad("subdiv_exp"))?);
        periodic.push(t[3] == "1");
    }
    let grid = CubicalGrid::new(lower, upper, exp, periodic)?;
    let mut member = vec![false; grid.cube_count()];
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let c: usize = line.trim().parse().map_err(|_| bad("cube index"))?;
        if c >= member.len() {
            return Err(bad("cube index out of range"));
        }
        member[c] = true;
    }
    Ok((grid, member))
}

/// Fixed palette for minimal-node basins.
const PALETTE: [[u8; 3]; 10] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [188, 189, 34],
    [23, 190, 207],
    [127, 127, 127],
];

const WHITE: [u8; 3] = [255, 255, 255];
const GRAY: [u8; 3] = [176, 176, 176];

fn write_ppm(path: &Path, width: usize, height: usize, pixels: &[[u8; 3]]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "P3")?;
    writeln!(f, "{width} {height}")?;
    writeln!(f, "255")?;
    for row in pixels.chunks(width) {
        let line: Vec<String> = row
            .iter()
            .map(|p| format!("{} {} {}", p[0], p[1], p[2]))
            .collect();
        writeln!(f, "{}", line.join(" "))?;
    }
    Ok(())
}

/// Rasterize the RoA assignment over a 2-D projection (axes `ax0` across,
/// `ax1` up), one pixel per projected cell. Hidden dimensions are max-pooled
/// with precedence basin color > shared-basin gray > escape white, so a
/// column showing any identified basin keeps its color.
pub fn write_roa_ppm(
    assign: &RoAAssignment,
    grid: &CubicalGrid,
    ax0: usize,
    ax1: usize,
    path: &Path,
) -> Result<(), ExportError> {
    if grid.dims() < 2 {
        return Err(ExportError::NotRasterizable);
    }
    if ax0 == ax1 || ax0 >= grid.dims() || ax1 >= grid.dims() {
        return Err(ExportError::BadProjection(ax0, ax1));
    }
    // Rank per cube: 0 escape/white, 1 shared/gray, 2 + k for the k-th
    // minimal-node RoA.
    let mut rank_of_cube = vec![1u32; grid.cube_count()];
    for &c in &assign.r_star {
        rank_of_cube[c] = 0;
    }
    for (k, (_, cubes)) in assign.maximal_roas.iter().enumerate() {
        for &c in cubes {
            rank_of_cube[c] = 2 + k as u32;
        }
    }
    let width = grid.cells_per_dim()[ax0];
    let height = grid.cells_per_dim()[ax1];
    let mut rank = vec![0u32; width * height];
    for cube in 0..grid.cube_count() {
        let coords = grid.coords_of(CubeId(cube));
        let (x, y) = (coords[ax0], coords[ax1]);
        let pix = (height - 1 - y) * width + x;
        rank[pix] = rank[pix].max(rank_of_cube[cube]);
    }
    let pixels: Vec<[u8; 3]> = rank
        .iter()
        .map(|&r| match r {
            0 => WHITE,
            1 => GRAY,
            k => PALETTE[(k as usize - 2) % PALETTE.len()],
        })
        .collect();
    write_ppm(path, width, height, &pixels)?;
    Ok(())
}

/// Rasterize a 2-D ground-truth lattice: reached points dark green,
/// non-reached white.
pub fn write_truth_ppm(truth: &GroundTruthRoA, path: &Path) -> Result<(), ExportError> {
    if truth.lattice.dims() != 2 {
        return Err(ExportError::NotRasterizable);
    }
    let (width, height) = (truth.lattice.counts[0], truth.lattice.counts[1]);
    let mut pixels = vec![WHITE; width * height];
    for idx in 0..truth.lattice.len() {
        // Row-major lattice: idx = x * height + y.
        let (x, y) = (idx / height, idx % height);
        if truth.reached[idx] {
            pixels[(height - 1 - y) * width + x] = [0, 128, 0];
        }
    }
    write_ppm(path, width, height, &pixels)?;
    Ok(())
}

/// Machine-readable run summary.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RunSummary {
    pub system: String,
    pub controller: String,
    pub cube_count: usize,
    pub scc_count: usize,
    pub morse_node_count: usize,
    pub minimal_nodes: Vec<usize>,
    pub node_cube_counts: Vec<usize>,
    pub has_escape_node: bool,
    pub lipschitz: f64,
    pub propagation_steps: u64,
    pub wall_seconds: f64,
}

pub fn write_summary(summary: &RunSummary, path: &Path) -> Result<(), ExportError> {
    let json = serde_json::to_string_pretty(summary).expect("summary serialization");
    std::fs::write(path, json)?;
    Ok(())
}
