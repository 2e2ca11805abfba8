//! Energy regression detection for test suites.
//!
//! The pipeline selects the tests covering a diff, measures them
//! repeatedly on both program versions, weights per-test deltas by how
//! often each changed line is executed, and ranks changed lines by
//! suspiciousness when the weighted delta flags a regression.

pub mod delta;
pub mod diff;
pub mod faultloc;
pub mod model;
pub mod mutator;
pub mod pipeline;
pub mod probes;
pub mod report;
pub mod rng;
pub mod runner;
pub mod select;
pub mod simlab;
pub mod stats;
