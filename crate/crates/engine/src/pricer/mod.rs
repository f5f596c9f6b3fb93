//! Lattice pricing of the withdrawal guarantee by backward induction.
//!
//! The module is organized as:
//!
//! * [`grid`] — axes, tensors, interpolation;
//! * [`kernel`] — per-model quadrature of the one-period expectation;
//! * [`solver`] — terminal condition, withdrawal optimization, and the
//!   backward induction driver [`price`];
//! * [`export`] — CSV dumps of value grids.

mod export;
mod grid;
mod kernel;
mod solver;

pub use export::write_grid_csv;
pub use grid::{interpolate_value, GridSide, GridSpec, Tensor3, ValueGrid};
pub use kernel::BsmMeasure;
pub use solver::{
    backward_step, continuation_value, optimal_withdrawal_at, optimize_withdrawal, price,
    price_with_options, terminal_condition, PricingDiagnostics, PricingOptions, PricingOutcome,
    Strategy, WithdrawalChoice,
};
pub(crate) use solver::validate_static_schedule;
