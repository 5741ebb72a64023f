//! Bandwidth-snooping-adjusted inference for kernel estimators.

// Validation is written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod poly;

pub mod bands;
pub mod critval;
pub mod kernels;
pub mod locpoly;
pub mod mc;
pub mod treatment;
