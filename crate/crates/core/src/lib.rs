//! Sup-norm goodness-of-fit testing for Poisson count vectors and
//! multinomials.
//!
//! The crate computes local minimax separation rates for a given null,
//! runs the matching max-type tests, builds the priors behind the matching
//! lower bounds, and verifies both sides numerically: exact divergences on
//! small instances and seeded Monte Carlo risk estimates on larger ones.
//!
//! Nulls are stored sorted non-increasingly and every index is 1-based in
//! that order. [`model::RateVector::from_unsorted`] and
//! [`model::SimplexVector::from_unsorted`] return the permutation needed to
//! map results back.
//!
//! ```
//! use supnorm_gof::{model::RateVector, rates::poisson_rate};
//!
//! let mu = RateVector::new(vec![1.0]).unwrap();
//! let profile = poisson_rate(&mu).unwrap();
//! assert_eq!(profile.j_star, 1);
//! assert!((profile.epsilon_star - 2.0).abs() < 1e-12);
//! ```

pub mod core_math;
pub mod divergence;
pub mod error;
pub mod model;
pub mod priors;
pub mod rates;
pub mod risk;
pub mod testing;

pub use error::{Error, Result};
