//! Building blocks of vertical logistic regression and vertical gradient
//! boosting. Message exchange lives in the protocol drivers of the `xfl`
//! crate; everything here is local computation of one role.

mod goss;
mod lr;
mod xgb;

use thiserror::Error;

use crate::crypto::CryptoError;
use crate::numeric::NumericError;

pub use goss::{goss_select, GossSample, GossSpec};
pub use lr::{
    batch_schedule, ct_mul_signed, encrypt_residuals, encrypted_gradient, mask_gradient, plain_gradient,
    residuals, unmask_gradient, VlrParams, VlrPartyState, RESIDUAL_SCALE_BITS,
};
pub use xgb::{
    build_encrypted_histogram, compute_grad_pairs, decrypt_histogram, encrypt_grad_pairs, find_best_split,
    leaf_weight, plain_histogram, quantize_pairs, split_gain, BinStat, BoostedModel, EncryptedHistogram, GradPair,
    SplitCandidate, SplitRule, SplitTable, TreeModel, TreeNode, XgbParams,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerticalError {
    #[error("invalid goss rates a = {a}, b = {b}")]
    InvalidGoss { a: f64, b: f64 },
    #[error("empty node")]
    EmptyNode,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("unknown split ref {0}")]
    UnknownSplitRef(u64),
    #[error("malformed tree: {0}")]
    MalformedTree(&'static str),
    #[error("invalid parameters: {0}")]
    InvalidParams(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}
