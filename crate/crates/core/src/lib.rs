//! Combinatorial analysis of the global dynamics of closed-loop robot
//! controllers: outer approximations of the time-τ map over a cubical
//! decomposition, Morse graphs, and regions of attraction.

pub mod bench;
pub mod config;
pub mod dynamics;
pub mod export;
pub mod grid;
pub mod morse;
pub mod outer;
pub mod roa;

pub use grid::{CubeId, CubicalGrid, Orthotope};
pub use outer::{CubeMapSource, ExplicitMap, MultivaluedMap};
