use std::collections::BTreeMap;

use num_bigint::BigUint;
use rand::RngCore;
use xfl_core::crypto::dh::to_fixed_width;
use xfl_core::crypto::{dh_keygen, dh_shared, DhParams};
use xfl_core::secagg::{derive_pair_seed, MaskPlan, PartyId};

use super::ProtocolError;
use crate::transport::Channel;

pub const DH_PUB: &str = "secagg/dh_pub";
pub const MASKED_UPDATE: &str = "secagg/masked_update";

/// One FFDHE2048 exchange with every other party in `parties`; pair seeds
/// are derived from the shared secret, the session id and both ordinals.
pub fn negotiate_masks<R: RngCore + ?Sized>(
    ch: &Channel,
    parties: &[PartyId],
    me: &PartyId,
    session_id: &str,
    rng: &mut R,
) -> Result<MaskPlan, ProtocolError> {
    if !parties.contains(me) {
        return Err(ProtocolError::Violation(format!("{} is not a mask participant", me.name)));
    }
    let params = DhParams::ffdhe2048();
    let (private, public) = dh_keygen(&params, rng);
    let peers: Vec<String> = parties.iter().filter(|p| *p != me).map(|p| p.name.clone()).collect();
    ch.broadcast(&peers, DH_PUB, &to_fixed_width(&public, params.element_bytes()))?;
    let received = ch.gather(&peers, DH_PUB)?;
    let mut seeds = BTreeMap::new();
    for peer in parties.iter().filter(|p| *p != me) {
        let bytes = &received[&peer.name];
        if bytes.len() != params.element_bytes() {
            return Err(ProtocolError::Violation(format!("DH public from {} has {} bytes", peer.name, bytes.len())));
        }
        let shared = dh_shared(&private, &BigUint::from_bytes_be(bytes), &params)?;
        seeds.insert(peer.clone(), derive_pair_seed(&shared, session_id.as_bytes(), me.ordinal, peer.ordinal)?);
    }
    Ok(MaskPlan::new(me.clone(), session_id.as_bytes(), seeds))
}
