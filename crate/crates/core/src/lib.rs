//! Critical embeddings of fully-connected networks.
//!
//! The crate trains small MLPs to empirical critical points, grows them with
//! width-increasing embeddings that preserve outputs and criticality, and
//! inspects the Hessian degeneracy that each embedding step adds.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod data_io;
pub mod embedding;
pub mod error;
pub mod network;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
pub use network::{Activation, Architecture, Dataset, Loss, NetParams};
pub use numerics::{DenseMatrix, DenseVector};
