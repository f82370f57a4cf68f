#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Event-based optical camera communication (OCC) toolkit.
//!
//! The crate models the whole optical link end to end:
//!
//! ```txt
//! payload -> 8b/10b + framing -> NRZ OOK LED -> channel -> EVS pixel array
//!         -> crop -> bin -> smooth -> peaks -> toggle demod (+ DPLL) -> align -> decode
//! ```
//!
//! Every stage is a pure function of its inputs and an explicit seed, so a
//! whole BER sweep is reproducible bit for bit from one master seed.

pub mod channel;
pub mod config;
pub mod demod;
mod error;
pub mod evs;
pub mod harness;
pub mod line_coding;
pub mod rng;
pub mod signal;
pub mod transmitter;

pub use error::{Error, Result};
