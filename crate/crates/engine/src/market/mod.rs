//! Market models: parameters, transition laws, discount factors, special
//! functions, estimation, and path simulation.
//!
//! Two models of the *discounted* equity index are supported:
//!
//! * **Black-Scholes** ([`BsmParams`]): geometric Brownian motion. Under the
//!   real-world measure the drift equals the variance `sigma^2`, which makes
//!   the realized index ratio `S(t)/S(u)` the pricing kernel; equivalently,
//!   prices are risk-neutral expectations of the driftless index.
//! * **Minimal market model** ([`MmmParams`]): the index is a squared-Bessel
//!   process of dimension four around an exponential trend
//!   `alpha0 e^{eta t}/eta`. The normalized level `Y(t)` transitions as a
//!   scaled noncentral chi-squared (four degrees of freedom), and the
//!   benchmarked savings account is a *strict* supermartingale — discounted
//!   payoffs are systematically cheaper than any risk-neutral model would
//!   make them.

mod estimate;
mod params;
mod simulate;
mod special;
mod transition;

pub use estimate::{estimate_bsm, estimate_mmm, BsmEstimate, MmmEstimate};
pub use params::{BsmParams, MmmParams, ModelKind, ModelParams, RiskFactorState};
pub use simulate::{simulate_paths, PathSet};
pub use special::{
    bessel_i1, log_bessel_i1_scaled, ncx2_cdf, ncx2_mean, ncx2_pdf, ncx2_sf, ncx2_variance,
};
pub use transition::{
    bsm_transition, mmm_expected_sdf, mmm_transition, sdf, BsmTransition, MmmTransition,
    TransitionKind, TransitionLaw,
};
