//! Role-side drivers for the federated protocols, run over a transport
//! [`Channel`](crate::transport::Channel).

pub mod horizontal;
pub mod secagg;
pub mod vlr;
pub mod vxgb;

use thiserror::Error;
use xfl_core::crypto::wire::{Reader, WireError, Writer};
use xfl_core::crypto::{CryptoError, PaillierCiphertext};
use xfl_core::data::DataError;
use xfl_core::horizontal::HorizontalError;
use xfl_core::numeric::NumericError;
use xfl_core::secagg::SecAggError;
use xfl_core::vertical::VerticalError;

use crate::transport::TransportError;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    SecAgg(#[from] SecAggError),
    #[error(transparent)]
    Horizontal(#[from] HorizontalError),
    #[error(transparent)]
    Vertical(#[from] VerticalError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("malformed message: {0}")]
    Wire(#[from] WireError),
    #[error("protocol violation: {0}")]
    Violation(String),
}

pub(crate) fn write_cts(w: &mut Writer, cts: &[PaillierCiphertext]) {
    w.u64(cts.len() as u64);
    for c in cts {
        c.write(w);
    }
}

pub(crate) fn read_cts(r: &mut Reader<'_>) -> Result<Vec<PaillierCiphertext>, WireError> {
    let n = r.u64()? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        out.push(PaillierCiphertext::read(r)?);
    }
    Ok(out)
}

pub(crate) fn write_opt_cts(w: &mut Writer, cts: &[Option<PaillierCiphertext>]) {
    w.u64(cts.len() as u64);
    for c in cts {
        match c {
            Some(c) => {
                w.u8(1);
                c.write(w);
            }
            None => {
                w.u8(0);
            }
        }
    }
}

pub(crate) fn read_opt_cts(r: &mut Reader<'_>) -> Result<Vec<Option<PaillierCiphertext>>, WireError> {
    let n = r.u64()? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        out.push(match r.u8()? {
            0 => None,
            _ => Some(PaillierCiphertext::read(r)?),
        });
    }
    Ok(out)
}

pub(crate) fn write_indices(w: &mut Writer, idx: &[usize]) {
    let v: Vec<u64> = idx.iter().map(|&i| i as u64).collect();
    w.u64_slice(&v);
}

pub(crate) fn read_indices(r: &mut Reader<'_>) -> Result<Vec<usize>, WireError> {
    Ok(r.u64_vec()?.into_iter().map(|i| i as usize).collect())
}
