//! Inclusive vote aggregation over a height-2 tree overlay.
//!
//! The crate models a committee-based voting round end to end: an
//! indivisible multi-signature algebra with integer multiplicities
//! ([`sigagg`]), a deterministic per-view shuffle and tree ([`overlay`]), the
//! per-process aggregation state machine with 2nd-chance fallback
//! ([`protocol`]), a discrete-event network that drives it ([`simnet`]), the
//! multiplicity-decoded reward scheme ([`rewards`]), strategy-dominance
//! analysis of that scheme ([`incentives`]), and Monte-Carlo attack
//! simulators for targeted vote omission ([`adversary`]).
//!
//! Reward and threshold arithmetic is generic over the scalar type
//! (`f64` for sampling, exact rationals wherever an invariant must hold
//! bit-exactly); the aliases below pick the concrete types used throughout.

pub mod adversary;
pub mod incentives;
pub mod overlay;
pub mod protocol;
pub mod rewards;
pub mod sigagg;
pub mod simnet;

/// Arbitrary-precision rational; the scalar for all exact reward math.
pub type Rational = num::BigRational;

/// Machine-word rational; the scalar for closed-form incentive thresholds.
pub type Fraction = num::rational::Ratio<i64>;

/// Exact reward parameters.
pub type ExactRewardParams = rewards::RewardParams<Rational>;

/// Exact reward distribution.
pub type ExactRewardVector = rewards::RewardVector<Rational>;

pub use sigagg::{MessageDigest, SignerId};
