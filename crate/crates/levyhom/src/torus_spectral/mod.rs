//! Fourier-side representation of functions on the torus T^d.
//!
//! Convention: f(x) = sum_k f^(k) e^{2 pi i k.x} with k in the integer
//! lattice {-N/2 .. N/2-1}^d, f^(k) = int f(x) e^{-2 pi i k.x} dx. The dyadic
//! Littlewood-Paley partition is tabulated per grid and all block
//! decompositions, Besov norms and homogeneous seminorms are evaluated on the
//! truncated lattice.

mod fft;
mod field;
mod grid;
mod io;

pub use field::{
    l2_inner, multiply, pairing, random_band_limited, HomogeneousKind, Lp, Lq, PeriodicField,
    VectorField, HERMITIAN_TOL, TWO_PI,
};
pub use grid::{
    block_profile, SpectralGrid, BLOCK_INNER_RADIUS, BLOCK_OUTER_RADIUS, PARTITION_TOL,
};
pub use io::FieldData;
