//! Numerical laboratory for local smoothing of fractional Schrodinger
//! propagators: extension operators, wave packets, polynomial partitioning,
//! broad/narrow splitting, tube geometry and the pseudo-conformal reduction.
//!
//! Conventions: `e(t) = exp(2 pi i t)`, frequencies live in `[-1,1]^(n-1)`,
//! the last coordinate of a space-time point is `x_n` (or `t`).

pub mod broad;
pub mod error;
pub mod extension;
pub mod field;
pub mod fourier;
pub mod geometry;
pub mod iteration;
pub mod par;
pub mod params;
pub mod partition;
pub mod poly;
pub mod profile;
pub mod pseudoconformal;
pub mod quad;
pub mod rng;
pub mod surface;
pub mod wavepackets;

pub use error::{LabError, Result};
pub use num_complex::Complex64 as C64;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// `e(t) = exp(2 pi i t)`, with the argument reduced mod 1 first.
#[inline]
pub fn e(t: f64) -> C64 {
    let f = t - t.round();
    let (s, c) = (std::f64::consts::TAU * f).sin_cos();
    C64::new(c, s)
}
