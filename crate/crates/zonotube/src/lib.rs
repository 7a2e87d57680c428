//! Tube-based zonotopic data-driven predictive control.
//!
//! From a single noisy input-state trajectory of an unknown linear system
//! `x⁺ = A₀x + B₀u + w` with `w` bounded by a zonotope, this crate
//!
//! 1. builds the matrix zonotope of all models consistent with the data
//!    ([`reach::build_consistent_set`]),
//! 2. verifies or synthesizes a feedback gain `K` that stabilizes every
//!    model in that set with a probabilistic certificate ([`gains`]),
//! 3. propagates an over-approximated tube around the nominal error
//!    dynamics ([`tube`]), and
//! 4. runs a receding-horizon convex controller whose constraints are
//!    tightened by the tube so that the true closed loop respects state
//!    and input constraints under adversarial bounded noise ([`ocp`]).
//!
//! All set arithmetic lives in [`setalg`]. Every random routine takes an
//! explicit seeded RNG; identical seeds give bit-identical results.

pub mod error;
pub mod gains;
pub mod ocp;
pub mod reach;
pub mod seed;
pub mod setalg;
pub mod solver;
pub mod tube;

pub use error::Error;
pub type Result<T> = std::result::Result<T, Error>;
