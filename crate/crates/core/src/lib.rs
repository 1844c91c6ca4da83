//! Device-independent bounds for Hardy's nonlocality test.

pub mod behavior;
pub mod cli;
pub mod error;
pub mod jordan;
pub mod npa;
pub mod quantum;
pub mod qubitopt;
pub mod sdp;
pub mod selftest;

pub use error::{Error, Result};
