#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod apg;
pub mod baselines;
pub mod cli;
pub mod constants;
pub mod error;
pub mod instance;
pub mod metrics;
pub mod np;
pub mod problem;
pub mod qcqp;
pub mod qpalm;
pub mod rng;
pub mod surrogate;
pub mod trace;
pub mod validate;

pub use error::{Error, Result};
pub use problem::{BoxSet, Moduli, Problem, Vector};
