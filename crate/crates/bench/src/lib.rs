//! Benchmarks live in `benches/`; this crate only hosts the shared fixtures.

use switchflow::{presets, DensityGrid, FieldPair};

pub fn conjugated() -> FieldPair {
    presets::conjugated_pair(0.1).expect("preset is valid")
}

pub fn smooth_density(n: usize) -> DensityGrid {
    let tau = std::f64::consts::TAU;
    DensityGrid::from_fn(n, |x| 1.0 + 0.5 * (tau * x[0]).sin() * (tau * x[1]).cos())
}
