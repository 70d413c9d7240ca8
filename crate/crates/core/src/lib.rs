//! Numerical laboratory for transport and stretching SPDEs driven by
//! Kraichnan noise on the torus, their Young measures, and the diffusive
//! limits they converge to.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod experiments;
pub mod io;
pub mod lagrangian;
pub mod noise;
pub mod par;
pub mod rng;
pub mod scalar;
pub mod spectral;
pub mod stats;
pub mod vector;
pub mod vlasov;
pub mod young;

pub use error::{Error, Result};
