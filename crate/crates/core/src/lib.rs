//! Numerical engine for stochastic calculus under a sublinear expectation
//! generated by a diagonal volatility box.
//!
//! The crate is `no_std` (it needs `alloc`) and is organised bottom-up:
//!
//! * [`gtensor`]: the colon product, stacked diagonal tensors and the
//!   generator `G` of the volatility box, plus the correlated-covariance
//!   bounds.
//! * [`scenario`]: a recombining state lattice on which conditional
//!   sublinear expectations are computed by backward induction, maximising
//!   over a finite volatility grid at every node.
//! * [`calculus`]: simulated paths with their quadratic variation, discrete
//!   stochastic integrals, weighted `M_G^{2,β}` norms and the ratio-decay
//!   machinery used to choose exponential weights.
//! * [`solver`]: martingale representation `(Z, η, K)` of a conditional
//!   G-expectation and Picard iteration for G-BSDEs.
//! * [`harness`]: numerical checks of the a-priori estimates.
//!
//! Enable the `parallel` feature (which implies `std`) to evaluate the nodes
//! of each backward layer concurrently. Results do not depend on the thread
//! count.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;
#[cfg(all(test, not(feature = "std")))]
extern crate std;

pub mod calculus;
pub mod error;
pub mod gtensor;
pub mod harness;
mod math;
mod par;
pub mod rng;
pub mod scenario;
pub mod solver;

pub use error::{Error, Result};

/// Crate version.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
