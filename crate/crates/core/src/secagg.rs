//! Pairwise-mask secure aggregation.
//!
//! Every pair of parties `(i, j)` shares a 32-byte seed derived from a
//! Diffie-Hellman secret. For round `r`, each pair expands its seed with an
//! HMAC_DRBG into a ring vector `PRG_ij(r)`; the lower-ordinal party adds it
//! and the higher-ordinal party subtracts it. Summing every party's masked
//! vector cancels the masks exactly, so the aggregator learns only the sum.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::drbg::HmacDrbg;
use crate::crypto::wire::{Reader, WireError, Writer};
use crate::crypto::{dh_keygen, dh_shared, kdf, CryptoError, DhParams};
use crate::numeric::{FixedPointParams, NumericError, RingVector};

const MASK_PERSONALIZATION: &[u8] = b"xfl-secagg-mask";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SecAggError {
    #[error("no masked vector from party {0}")]
    MissingParty(String),
    #[error("unexpected masked vector from party {0}")]
    UnexpectedParty(String),
    #[error("party {0} contributed more than one vector")]
    DuplicateParty(String),
    #[error("round mismatch: expected {expected}, got {got} from {party}")]
    RoundMismatch { expected: u64, got: u64, party: String },
    #[error("vector length {got} does not match negotiated length {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("no mask seed shared with {0}")]
    MissingSeed(String),
    #[error("nothing to aggregate")]
    Empty,
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// Participant identity; `ordinal` gives the total order used for mask signs.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PartyId {
    pub ordinal: u32,
    pub name: String,
}

impl PartyId {
    pub fn new(ordinal: u32, name: impl Into<String>) -> Self {
        Self { ordinal, name: name.into() }
    }
}

/// KDF context binding a pair seed to the session and the unordered pair.
pub fn pair_context(session_id: &[u8], a: u32, b: u32) -> Vec<u8> {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let mut ctx = Vec::with_capacity(session_id.len() + 8);
    ctx.extend_from_slice(session_id);
    ctx.extend_from_slice(&lo.to_be_bytes());
    ctx.extend_from_slice(&hi.to_be_bytes());
    ctx
}

pub fn derive_pair_seed(shared: &[u8], session_id: &[u8], a: u32, b: u32) -> Result<[u8; 32], SecAggError> {
    Ok(kdf(shared, &pair_context(session_id, a, b))?)
}

/// Per-party mask material for one session.
#[derive(Clone)]
pub struct MaskPlan {
    self_id: PartyId,
    session_id: Vec<u8>,
    peer_seeds: BTreeMap<PartyId, [u8; 32]>,
    vector_len: Option<usize>,
}

impl core::fmt::Debug for MaskPlan {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("MaskPlan")
            .field("self_id", &self.self_id)
            .field("peers", &self.peer_seeds.keys().collect::<Vec<_>>())
            .finish_non_exhaustive()
    }
}

impl MaskPlan {
    pub fn new(self_id: PartyId, session_id: &[u8], peer_seeds: BTreeMap<PartyId, [u8; 32]>) -> Self {
        Self { self_id, session_id: session_id.to_vec(), peer_seeds, vector_len: None }
    }

    /// Pins the vector length every masked update must have.
    pub fn with_vector_len(mut self, len: usize) -> Self {
        self.vector_len = Some(len);
        self
    }

    pub fn self_id(&self) -> &PartyId {
        &self.self_id
    }

    pub fn peers(&self) -> impl Iterator<Item = &PartyId> {
        self.peer_seeds.keys()
    }

    pub fn seed_for(&self, peer: &PartyId) -> Option<&[u8; 32]> {
        self.peer_seeds.get(peer)
    }

    /// `session_id || round` as big-endian u64.
    pub fn round_context(&self, round: u64) -> Vec<u8> {
        let mut ctx = self.session_id.clone();
        ctx.extend_from_slice(&round.to_be_bytes());
        ctx
    }
}

/// Expands a pair seed into `len` ring elements for one round.
pub fn mask_stream(
    seed: &[u8; 32],
    round_context: &[u8],
    len: usize,
    params: FixedPointParams,
) -> Result<RingVector, SecAggError> {
    let mut drbg = HmacDrbg::new(seed, round_context, MASK_PERSONALIZATION);
    let width = params.element_bytes();
    let bytes = drbg.generate_stream(len * width)?;
    Ok(RingVector::from_bytes(&bytes, params)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedVector {
    pub data: RingVector,
    pub sender: PartyId,
    pub round: u64,
}

impl MaskedVector {
    pub fn to_bytes(&self) -> Vec<u8> {
        let params = self.data.params();
        let mut w = Writer::new();
        w.u32(self.sender.ordinal)
            .str(&self.sender.name)
            .u64(self.round)
            .u32(params.scale_bits())
            .u32(params.ring_bits())
            .bytes(&self.data.to_bytes());
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SecAggError> {
        let mut r = Reader::new(bytes);
        let ordinal = r.u32()?;
        let name = r.string()?;
        let round = r.u64()?;
        let params = FixedPointParams::new(r.u32()?, r.u32()?)?;
        let data = RingVector::from_bytes(r.bytes()?, params)?;
        r.finish()?;
        Ok(Self { data, sender: PartyId { ordinal, name }, round })
    }
}

/// `update + sum_{j > self} PRG_ij - sum_{j < self} PRG_ij (mod 2^k)`.
pub fn mask_update(update: &RingVector, plan: &MaskPlan, round: u64) -> Result<MaskedVector, SecAggError> {
    if let Some(expected) = plan.vector_len {
        if expected != update.len() {
            return Err(SecAggError::LengthMismatch { expected, got: update.len() });
        }
    }
    let ctx = plan.round_context(round);
    let mut data = update.clone();
    for (peer, seed) in &plan.peer_seeds {
        let mask = mask_stream(seed, &ctx, update.len(), update.params())?;
        if plan.self_id.ordinal < peer.ordinal {
            data.add_assign(&mask)?;
        } else {
            data.sub_assign(&mask)?;
        }
    }
    Ok(MaskedVector { data, sender: plan.self_id.clone(), round })
}

/// Sums one masked vector per expected party; masks cancel pairwise.
pub fn aggregate_masked(
    vectors: &[MaskedVector],
    expected: &[PartyId],
    round: u64,
) -> Result<RingVector, SecAggError> {
    let first = vectors.first().ok_or(SecAggError::Empty)?;
    let mut seen: BTreeMap<&PartyId, ()> = BTreeMap::new();
    for v in vectors {
        if !expected.contains(&v.sender) {
            return Err(SecAggError::UnexpectedParty(v.sender.name.clone()));
        }
        if seen.insert(&v.sender, ()).is_some() {
            return Err(SecAggError::DuplicateParty(v.sender.name.clone()));
        }
        if v.round != round {
            return Err(SecAggError::RoundMismatch { expected: round, got: v.round, party: v.sender.name.clone() });
        }
    }
    if let Some(missing) = expected.iter().find(|p| !seen.contains_key(p)) {
        return Err(SecAggError::MissingParty(missing.name.clone()));
    }
    let mut sum = RingVector::zeros(first.data.len(), first.data.params());
    for v in vectors {
        if v.data.len() != sum.len() {
            return Err(SecAggError::LengthMismatch { expected: sum.len(), got: v.data.len() });
        }
        sum.add_assign(&v.data)?;
    }
    Ok(sum)
}

/// Runs the pairwise key agreement for co-located parties (simulation and
/// tests). Returns one plan per party plus the number of DH agreements.
pub fn local_mask_plans<R: RngCore + ?Sized>(
    parties: &[PartyId],
    session_id: &[u8],
    rng: &mut R,
) -> Result<(Vec<MaskPlan>, usize), SecAggError> {
    let params = DhParams::ffdhe2048();
    let keys: Vec<_> = parties.iter().map(|_| dh_keygen(&params, rng)).collect();
    let mut seeds: Vec<BTreeMap<PartyId, [u8; 32]>> = parties.iter().map(|_| BTreeMap::new()).collect();
    let mut exchanges = 0;
    for i in 0..parties.len() {
        for j in (i + 1)..parties.len() {
            let shared = dh_shared(&keys[i].0, &keys[j].1, &params)?;
            let seed = derive_pair_seed(&shared, session_id, parties[i].ordinal, parties[j].ordinal)?;
            seeds[i].insert(parties[j].clone(), seed);
            seeds[j].insert(parties[i].clone(), seed);
            exchanges += 1;
        }
    }
    let plans = parties
        .iter()
        .zip(seeds)
        .map(|(p, s)| MaskPlan::new(p.clone(), session_id, s))
        .collect();
    Ok((plans, exchanges))
}
