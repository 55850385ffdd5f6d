//! Joint model provisioning, bandwidth and GPU-frequency allocation for users
//! that download a model layer by layer and start inference on the layers
//! already received.
//!
//! The crate is organized bottom-up: [`profiles`] and [`channel`] hold the
//! inputs, [`timeline`] evaluates latency and energy, [`layer_solver`] picks
//! per-layer GPU scales, [`min_bandwidth`] finds each user's smallest
//! feasible bandwidth share and [`scheduler`] admits users. [`oracle`] has
//! brute-force references and [`harness`] generates scenarios and sweeps.

// `!(x > 0.0)` also rejects NaN; layer loops index several parallel slices
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod certify;
pub mod channel;
pub mod error;
pub mod harness;
pub mod layer_solver;
pub mod min_bandwidth;
pub mod oracle;
pub mod profiles;
pub mod rng;
pub mod scenario;
pub mod scheduler;
pub mod timeline;

pub use error::{Result, SlideError};
