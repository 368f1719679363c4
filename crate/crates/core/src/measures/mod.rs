//! Measures on a periodic window: atoms, grid densities, curve densities,
//! and their quantization into mass elements.

mod elements;
mod measure;
mod window;

pub use elements::{
    ball_mass, default_tie_tolerance, elementize, radius_search, MassElement, RadiusSearch,
};
pub use measure::{
    Atom, AtomMeasure, Component, CurveDensity, CurvePiece, GridDensity, Measure, TorusBox,
};
pub(crate) use window::lex_cmp;
pub use window::{torus_distance, Point, Window, MAX_DIM};
