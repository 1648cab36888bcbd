//! Robust linear precoding for the downlink of cell-free MU-MIMO networks.
//!
//! The crate covers the whole simulation chain: geometry and large-scale
//! fading ([`channel`]), AP selection and user clustering ([`selection`]),
//! conventional and robust MMSE precoders ([`precoders`]), SINR and ergodic
//! sum-rate ([`metrics`]), and the Monte Carlo experiment driver
//! ([`harness`]) behind the `cellfree` command-line tool ([`cli`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod cli;
pub mod config;
pub mod error;
pub mod exec;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod precoders;
pub mod rng;
pub mod selection;
pub mod units;

pub use error::{Error, Result};
