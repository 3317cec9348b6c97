//! Equivariant spherical-harmonic convolutions with the SO(2) reduction,
//! plus the supporting math: real spherical harmonics about the y axis,
//! Wigner-D rotations, exact Clebsch-Gordan tables, and a small forward-only
//! equivariant message-passing model for atomic structures.

pub mod cg;
pub mod conv;
pub mod error;
pub mod model;
pub mod rotations;
pub mod sphere;

pub use error::{Error, Result};
pub use sphere::{Direction, GridKind, IrrepsCoeffs, SphereGrid};

use rand::Rng;

/// Standard normal variate by Box-Muller; keeps the crate off the
/// rand_distr dependency for the one distribution it needs.
pub(crate) fn rng_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen();
        if u1 > f64::MIN_POSITIVE {
            return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}
