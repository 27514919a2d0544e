//! Reliable, addressed message channels between parties.
//!
//! Every message is an [`Envelope`] addressed by `(session_id, stage_key,
//! sender, receiver, seq)`. An [`Endpoint`] turns a best-effort [`Link`] into
//! exactly-once, per-stream FIFO delivery with application-level acks
//! (stage key `ack/<stage_key>`, empty payload) and exponential-backoff
//! retransmission.
//!
//! Backends: [`InProcHub`] for standalone mode, [`tcp`] for multi-process
//! runs, and [`FaultyLink`] to inject seeded loss and latency in tests.
//!
//! Stage keys used by the protocols. Protocol keys are prefixed with the
//! stage (`s0/hfl/global`); scheduler keys are not.
//!
//! | key | direction | payload |
//! |-----|-----------|---------|
//! | `sched/stage` | scheduler → party | JSON stage order or finish |
//! | `sched/done` | party → scheduler | JSON stage report |
//! | `sched/abort` | scheduler → party | reason text |
//! | `align/ids` | trainer → label trainer | row count and id digest |
//! | `secagg/dh_pub` | party → party | DH public value |
//! | `secagg/masked_update` | party → assist trainer | masked ring vector |
//! | `hfl/schema` | party → assist trainer | feature names |
//! | `hfl/global` | assist trainer → party | global model and control |
//! | `vlr/public_key` | label trainer → trainer | Paillier public key |
//! | `vlr/partial_score` | trainer → label trainer | `X_k·w_k` per row |
//! | `vlr/enc_residual` | label trainer → trainer | `E(d_i)` per row |
//! | `vlr/enc_grad` | trainer → label trainer | `E(grad + r)` |
//! | `vlr/masked_grad` | label trainer → trainer | decrypted `grad + r` |
//! | `vlr/predict` | trainer → label trainer | partial scores for inference |
//! | `vxgb/public_key` | label trainer → trainer | Paillier public key |
//! | `vxgb/enc_grads` | label trainer → trainer | packed `E(g, h)` per row |
//! | `vxgb/hist` | both ways | node request, encrypted histograms |
//! | `vxgb/split` | label trainer → owner | chosen `(feature, bin)` |
//! | `vxgb/partition` | owner → label trainer, label trainer → all | left row set |
//! | `vxgb/predict` | label trainer ↔ owner | routing queries and answers |

mod endpoint;
mod fault;
pub mod frame;
mod inproc;
pub mod tcp;

use std::time::Duration;

use thiserror::Error;

pub use endpoint::{Channel, Endpoint, Link, SendTicket};
pub use fault::{FaultSpec, FaultyLink};
pub use inproc::InProcHub;

pub const ACK_PREFIX: &str = "ack/";
pub const ABORT_KEY: &str = "sched/abort";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub session_id: String,
    pub stage_key: String,
    pub sender: String,
    pub receiver: String,
    pub seq: u64,
    pub payload: Vec<u8>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("timed out waiting for {stage_key:?} from {from}")]
    Timeout { stage_key: String, from: String },
    #[error("delivery of {stage_key:?} #{seq} to {to} failed after {attempts} attempts")]
    DeliveryFailed { to: String, stage_key: String, seq: u64, attempts: u32 },
    #[error("broadcast of {stage_key:?} failed for {members:?}")]
    BroadcastFailed { stage_key: String, members: Vec<String> },
    #[error("gather of {stage_key:?} timed out after {received} payloads; missing {missing:?}")]
    GatherTimeout { stage_key: String, missing: Vec<String>, received: usize },
    #[error("frame payload of {len} bytes exceeds limit {max}")]
    FrameTooLarge { len: u64, max: u64 },
    #[error("malformed frame: {0}")]
    BadFrame(String),
    #[error("unknown peer {0:?}")]
    UnknownPeer(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("session aborted")]
    Aborted,
    #[error("invalid channel config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    pub connect_timeout: Duration,
    /// Retransmissions after the first attempt.
    pub send_retry_limit: u32,
    pub backoff_base: Duration,
    pub backoff_factor: u32,
    pub backoff_cap: Duration,
    pub max_frame_bytes: u64,
    /// Default wait for protocol receives.
    pub recv_timeout: Duration,
    /// Undelivered payloads held per (sender, stage_key) before new frames are
    /// refused unacknowledged.
    pub inbox_capacity: usize,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            connect_timeout: Duration::from_secs(5),
            send_retry_limit: 16,
            backoff_base: Duration::from_millis(100),
            backoff_factor: 2,
            backoff_cap: Duration::from_secs(5),
            max_frame_bytes: 64 << 20,
            recv_timeout: Duration::from_secs(600),
            inbox_capacity: 1 << 16,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), TransportError> {
        if self.send_retry_limit < 1 {
            return Err(TransportError::InvalidConfig("send_retry_limit must be at least 1"));
        }
        if self.max_frame_bytes < 1 << 20 {
            return Err(TransportError::InvalidConfig("max_frame_bytes must be at least 2^20"));
        }
        if self.backoff_factor < 1 {
            return Err(TransportError::InvalidConfig("backoff_factor must be at least 1"));
        }
        if self.inbox_capacity < 1 {
            return Err(TransportError::InvalidConfig("inbox_capacity must be at least 1"));
        }
        Ok(())
    }

    /// Wait before retransmission number `attempt` (1-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let mut d = self.backoff_base;
        for _ in 1..attempt {
            d = d.saturating_mul(self.backoff_factor);
            if d >= self.backoff_cap {
                return self.backoff_cap;
            }
        }
        d.min(self.backoff_cap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_then_caps() {
        let c = ChannelConfig::default();
        let ms: Vec<u128> = (1..=8).map(|k| c.backoff(k).as_millis()).collect();
        assert_eq!(ms, [100, 200, 400, 800, 1600, 3200, 5000, 5000]);
    }

    #[test]
    fn config_bounds() {
        let mut c = ChannelConfig::default();
        assert!(c.validate().is_ok());
        c.send_retry_limit = 0;
        assert!(c.validate().is_err());
        c = ChannelConfig { max_frame_bytes: (1 << 20) - 1, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
