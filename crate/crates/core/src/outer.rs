//! The combinatorial multivalued map: an outer approximation of the time-τ
//! map built by propagating shared lattice sample points and dilating each
//! image by a Lipschitz ball.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::dynamics::{DynamicsError, TimeTauMap};
use crate::grid::{CubeId, CubicalGrid};

#[derive(Debug, Error)]
pub enum OuterError {
    #[error("propagation failed at sample point {point}: {source}")]
    Propagation {
        point: usize,
        source: DynamicsError,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed image cache: {0}")]
    MalformedCache(String),
    #[error("cache was built for a different grid or map (hash mismatch)")]
    CacheMismatch,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A total cube-to-cube-set map. `image` returns the sorted image cubes and
/// whether the image escapes the domain (an edge to the synthetic ⋆ sink).
pub trait CubeMapSource: Sync {
    fn cube_count(&self) -> usize;
    fn has_star(&self) -> bool;
    fn image(&self, cube: usize) -> (Vec<usize>, bool);
}

/// Hand-built map for tests and worked examples.
#[derive(Debug, Clone)]
pub struct ExplicitMap {
    pub images: Vec<Vec<usize>>,
    pub star: Vec<bool>,
}

impl ExplicitMap {
    pub fn new(mut images: Vec<Vec<usize>>) -> Self {
        for img in &mut images {
            img.sort_unstable();
            img.dedup();
        }
        let star = vec![false; images.len()];
        Self { images, star }
    }

    pub fn with_star(mut self, star: Vec<bool>) -> Self {
        assert_eq!(star.len(), self.images.len());
        self.star = star;
        self
    }
}

impl CubeMapSource for ExplicitMap {
    fn cube_count(&self) -> usize {
        self.images.len()
    }

    fn has_star(&self) -> bool {
        self.star.iter().any(|&s| s)
    }

    fn image(&self, cube: usize) -> (Vec<usize>, bool) {
        (self.images[cube].clone(), self.star[cube])
    }
}

/// Per-cube images stored as a compact CSR adjacency plus a star bit per
/// cube.
#[derive(Debug, Clone)]
pub struct ImageCache {
    offsets: Vec<u64>,
    targets: Vec<u32>,
    star_bits: Vec<u64>,
}

impl ImageCache {
    fn image(&self, cube: usize) -> (Vec<usize>, bool) {
        let lo = self.offsets[cube] as usize;
        let hi = self.offsets[cube + 1] as usize;
        let cubes = self.targets[lo..hi].iter().map(|&t| t as usize).collect();
        let star = self.star_bits[cube / 64] >> (cube % 64) & 1 == 1;
        (cubes, star)
    }
}

/// Outer approximation F of the time-τ map over a cubical grid: the image of
/// a cube is every cube meeting the closed ball of radius `L·d/(2·refine)`
/// around the propagated sample points (`(refine+1)^n` lattice points per
/// cube, corners at refine = 1). Sample points shared between cubes are
/// propagated exactly once.
pub struct MultivaluedMap {
    grid: CubicalGrid,
    pub map: TimeTauMap,
    pub lipschitz: f64,
    pub refine: usize,
    /// Ball cover of each deduplicated lattice point's propagated image.
    point_balls: Vec<(Vec<CubeId>, bool)>,
    cache: Option<ImageCache>,
    has_star: bool,
}

impl MultivaluedMap {
    /// Propagate every deduplicated lattice sample point and record its
    /// dilated cube cover. Data-parallel over the sample set.
    pub fn build(
        grid: CubicalGrid,
        map: TimeTauMap,
        lipschitz: f64,
        refine: usize,
    ) -> Result<Self, OuterError> {
        if !(lipschitz > 0.0) {
            return Err(OuterError::InvalidParameter(
                "Lipschitz estimate must be positive".into(),
            ));
        }
        if refine < 1 {
            return Err(OuterError::InvalidParameter("refine must be >= 1".into()));
        }
        let radius = lipschitz * grid.diameter() / (2.0 * refine as f64);
        let n_points = grid.lattice_size(refine);
        let point_balls: Vec<(Vec<CubeId>, bool)> = (0..n_points)
            .into_par_iter()
            .map(|idx| {
                let v = grid.lattice_point(refine, idx);
                let y = map
                    .propagate(&v)
                    .map_err(|source| OuterError::Propagation { point: idx, source })?;
                Ok(grid.cubes_intersecting_ball(&y, radius))
            })
            .collect::<Result<_, OuterError>>()?;
        let has_star = point_balls.iter().any(|(_, esc)| *esc);
        Ok(Self {
            grid,
            map,
            lipschitz,
            refine,
            point_balls,
            cache: None,
            has_star,
        })
    }

    pub fn grid(&self) -> &CubicalGrid {
        &self.grid
    }

    fn assemble_image(&self, cube: usize) -> (Vec<usize>, bool) {
        let mut out: Vec<usize> = Vec::new();
        let mut star = false;
        for pt in self.grid.cube_lattice_points(self.refine, CubeId(cube)) {
            let (cubes, esc) = &self.point_balls[pt];
            out.extend(cubes.iter().map(|id| id.0));
            star |= esc;
        }
        out.sort_unstable();
        out.dedup();
        (out, star)
    }

    /// Materialize the per-cube CSR cache (data-parallel across cubes).
    /// Without it, images are assembled on demand from the point covers.
    pub fn build_cache(&mut self) {
        let count = self.grid.cube_count();
        let images: Vec<(Vec<usize>, bool)> = (0..count)
            .into_par_iter()
            .map(|c| self.assemble_image(c))
            .collect();
        let mut offsets = Vec::with_capacity(count + 1);
        let mut targets = Vec::new();
        let mut star_bits = vec![0u64; count.div_ceil(64)];
        offsets.push(0u64);
        for (c, (cubes, star)) in images.iter().enumerate() {
            targets.extend(cubes.iter().map(|&t| t as u32));
            offsets.push(targets.len() as u64);
            if *star {
                star_bits[c / 64] |= 1 << (c % 64);
            }
        }
        self.cache = Some(ImageCache {
            offsets,
            targets,
            star_bits,
        });
    }

    pub fn is_cached(&self) -> bool {
        self.cache.is_some()
    }

    fn header_hash(&self) -> u64 {
        let mut h = fnv1a(0xcbf2_9ce4_8422_2325, &self.grid.cube_count().to_le_bytes());
        for i in 0..self.grid.dims() {
            h = fnv1a(h, &self.grid.lower()[i].to_le_bytes());
            h = fnv1a(h, &self.grid.upper()[i].to_le_bytes());
            h = fnv1a(h, &self.grid.subdiv_exp()[i].to_le_bytes());
            h = fnv1a(h, &[u8::from(self.grid.periodic()[i])]);
        }
        h = fnv1a(h, &self.map.tau.to_le_bytes());
        h = fnv1a(h, &self.lipschitz.to_le_bytes());
        h = fnv1a(h, &(self.refine as u64).to_le_bytes());
        h
    }

    /// Write the materialized cache: a header binding it to this grid, τ, L
    /// and refine, then the CSR arrays.
    pub fn dump_cache(&self, path: &Path) -> Result<(), OuterError> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| OuterError::InvalidParameter("no cache built".into()))?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(b"MVMC0001")?;
        f.write_all(&self.header_hash().to_le_bytes())?;
        f.write_all(&(cache.offsets.len() as u64).to_le_bytes())?;
        f.write_all(&(cache.targets.len() as u64).to_le_bytes())?;
        for v in &cache.offsets {
            f.write_all(&v.to_le_bytes())?;
        }
        for v in &cache.targets {
            f.write_all(&v.to_le_bytes())?;
        }
        for v in &cache.star_bits {
            f.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Load a cache previously written by `dump_cache`, verifying it matches
    /// this map's grid and parameters.
    pub fn load_cache(&mut self, path: &Path) -> Result<(), OuterError> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic)?;
        if &magic != b"MVMC0001" {
            return Err(OuterError::MalformedCache("bad magic".into()));
        }
        let mut w = [0u8; 8];
        f.read_exact(&mut w)?;
        if u64::from_le_bytes(w) != self.header_hash() {
            return Err(OuterError::CacheMismatch);
        }
        f.read_exact(&mut w)?;
        let n_off = u64::from_le_bytes(w) as usize;
        f.read_exact(&mut w)?;
        let n_tgt = u64::from_le_bytes(w) as usize;
        if n_off != self.grid.cube_count() + 1 {
            return Err(OuterError::MalformedCache("offset count mismatch".into()));
        }
        let mut offsets = Vec::with_capacity(n_off);
        for _ in 0..n_off {
            f.read_exact(&mut w)?;
            offsets.push(u64::from_le_bytes(w));
        }
        let mut targets = Vec::with_capacity(n_tgt);
        let mut w4 = [0u8; 4];
        for _ in 0..n_tgt {
            f.read_exact(&mut w4)?;
            targets.push(u32::from_le_bytes(w4));
        }
        let n_words = self.grid.cube_count().div_ceil(64);
        let mut star_bits = Vec::with_capacity(n_words);
        for _ in 0..n_words {
            f.read_exact(&mut w)?;
            star_bits.push(u64::from_le_bytes(w));
        }
        if offsets.last().copied() != Some(n_tgt as u64) {
            return Err(OuterError::MalformedCache("truncated targets".into()));
        }
        self.cache = Some(ImageCache {
            offsets,
            targets,
            star_bits,
        });
        Ok(())
    }
}

impl CubeMapSource for MultivaluedMap {
    fn cube_count(&self) -> usize {
        self.grid.cube_count()
    }

    fn has_star(&self) -> bool {
        self.has_star
    }

    fn image(&self, cube: usize) -> (Vec<usize>, bool) {
        match &self.cache {
            Some(cache) => cache.image(cube),
            None => self.assemble_image(cube),
        }
    }
}

fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Sampled estimate of the Lipschitz ratio of the time-τ map: the maximum of
/// `|φτ(x) - φτ(x')| / |x - x'|` over `sample_pairs` nearby random pairs
/// (geodesic distances on periodic dimensions), times a safety factor.
/// Deterministic given the seed; enlarging `sample_pairs` only extends the
/// sample sequence, so the estimate is monotone nondecreasing in it.
pub fn estimate_lipschitz(
    map: &TimeTauMap,
    grid: &CubicalGrid,
    sample_pairs: usize,
    safety: f64,
    seed: u64,
) -> Result<f64, OuterError> {
    if sample_pairs == 0 {
        return Err(OuterError::InvalidParameter(
            "sample_pairs must be >= 1".into(),
        ));
    }
    if !(safety >= 1.0) {
        return Err(OuterError::InvalidParameter("safety must be >= 1".into()));
    }
    let n = grid.dims();
    let d = grid.diameter();
    // Offsets confined to a box of half-width d/(2√n) keep |x - x'| <= d.
    let half = d / (2.0 * (n as f64).sqrt());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: f64 = 0.0;
    for k in 0..sample_pairs {
        let mut x = vec![0.0; n];
        let mut xp = vec![0.0; n];
        for i in 0..n {
            x[i] = rng.gen_range(grid.lower()[i]..grid.upper()[i]);
        }
        loop {
            for i in 0..n {
                let lo = if grid.periodic()[i] {
                    x[i] - half
                } else {
                    (x[i] - half).max(grid.lower()[i])
                };
                let hi = if grid.periodic()[i] {
                    x[i] + half
                } else {
                    (x[i] + half).min(grid.upper()[i])
                };
                xp[i] = rng.gen_range(lo..hi);
            }
            grid.wrap_point(&mut xp);
            if grid.geodesic_distance(&x, &xp) > 1e-12 {
                break;
            }
        }
        let dist = grid.geodesic_distance(&x, &xp);
        let y = map
            .propagate(&x)
            .map_err(|source| OuterError::Propagation { point: k, source })?;
        let yp = map
            .propagate(&xp)
            .map_err(|source| OuterError::Propagation { point: k, source })?;
        let ratio = grid.geodesic_distance(&y, &yp) / dist;
        best = best.max(ratio);
    }
    Ok(best * safety)
}
