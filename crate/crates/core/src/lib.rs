#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod curve;
pub mod data;
pub mod epimodel;
pub mod error;
pub mod fitkit;
pub mod format;
pub mod identify;
pub mod io;
pub mod ode;
pub mod pheno;
pub mod spectral;
pub mod spline;

pub use curve::Curve;
pub use error::{Error, Result};
