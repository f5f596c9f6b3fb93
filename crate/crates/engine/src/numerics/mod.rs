//! Generic numerical helpers shared across the engine.
//!
//! Nothing in here knows about contracts or market models; these are the
//! low-level tools (quadrature rules, compensated summation) the rest of the
//! crate builds on.

mod gauss_hermite;
mod simpson;
mod sum;

pub use gauss_hermite::{gauss_hermite, GaussHermite};
pub use simpson::adaptive_simpson;
pub use sum::KahanSum;
