//! Algorithmic core of `xfl`: fixed-point ring arithmetic, Paillier and
//! secure-aggregation primitives, data preparation and metrics, horizontal
//! model training and aggregation, and the building blocks of vertical
//! logistic regression and vertical gradient boosting.
//!
//! The crate is `no_std` and needs only `alloc`. Transport, file formats and
//! protocol drivers live in the `xfl` crate.

#![no_std]
// Parameter checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod crypto;
pub mod data;
pub mod horizontal;
pub mod numeric;
pub mod secagg;
pub mod vertical;

pub use numeric::{fp_decode, fp_encode, ring_add, sigmoid, FixedPointParams, NumericError, RingVector};
