//! Human-in-the-loop regression test selection.
//!
//! A test manager labels a few tests as in or out of a release's regression
//! set, a logistic model ranks the rest, and randomized verification labels
//! decide whether the ranking is trustworthy enough to cut. The workflow is
//! a persisted state machine ([`session`]); [`evaluation`] backtests the
//! approach on past releases with APFD.

pub mod datamodel;
pub mod digest;
pub mod evaluation;
pub mod features;
pub mod fixtures;
pub mod ranker;
pub mod rng;
pub mod session;
pub mod verification;
pub mod workflow;
