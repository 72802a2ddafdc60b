//! Desk-scale numerics for quantitative unique continuation of planar
//! second-order elliptic equations.
//!
//! The crate follows one pipeline: solve the equation, perforate the domain
//! around the nodal set, build a positive multiplier, reduce to a Beltrami
//! equation with a quasiconformal change of variables, gauge the result into
//! a non-homogeneous d-bar equation and finally measure Carleman ratios and
//! vanishing orders.

pub mod error;
pub mod field_core;
pub mod sparse;
pub mod elliptic;
pub mod perforation;
pub mod max_principle;
pub mod singular_integrals;
pub mod quasiconformal;
pub mod gauge_stream;
pub mod carleman;
pub mod pipeline;

pub use error::{Error, Result};
