//! Fixtures shared by the benchmarks.

use mlbpgd::linops::{blur_operator, equidistant_angles, parallel_beam};
use mlbpgd::{GridVector, LinearOperator};

/// Smooth positive test image on a `side x side` grid.
pub fn ramp_image(side: usize) -> GridVector {
    let values = (0..side * side)
        .map(|i| {
            let (r, c) = ((i / side) as f64, (i % side) as f64);
            1.0 + 0.5 * ((r + 1.0) / side as f64) + 0.25 * ((c + 1.0) / side as f64)
        })
        .collect();
    GridVector::square(values, side)
}

pub fn blur(side: usize) -> LinearOperator {
    blur_operator(side, 9, 1.5).expect("blur operator")
}

pub fn projector(side: usize, angles: usize) -> LinearOperator {
    parallel_beam(side, &equidistant_angles(angles), side).expect("projector")
}
