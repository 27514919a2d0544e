use std::collections::HashMap;
use std::sync::{Arc, Mutex, Weak};

use super::endpoint::Inner;
use super::{frame, ChannelConfig, Endpoint, Envelope, FaultSpec, FaultyLink, Link, TransportError};

/// In-process switchboard for standalone mode. Frames are handed straight to
/// the receiving endpoint; wrap with a [`FaultSpec`] to inject loss and
/// latency.
#[derive(Clone, Default)]
pub struct InProcHub {
    inner: Arc<HubInner>,
}

type Tap = Arc<dyn Fn(&Envelope) + Send + Sync>;

#[derive(Default)]
struct HubInner {
    peers: Mutex<HashMap<String, Weak<Inner>>>,
    faults: Option<FaultSpec>,
    registered: Mutex<u64>,
    tap: Mutex<Option<Tap>>,
}

struct HubLink {
    hub: Arc<HubInner>,
}

impl Link for HubLink {
    fn transmit(&self, to: &str, frame: Vec<u8>) -> Result<(), TransportError> {
        let target = self
            .hub
            .peers
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(to)
            .and_then(Weak::upgrade)
            .ok_or_else(|| TransportError::UnknownPeer(to.to_owned()))?;
        let tap = self.hub.tap.lock().unwrap_or_else(|e| e.into_inner()).clone();
        if let Some(tap) = tap {
            if let Ok(env) = frame::decode(&frame, u64::MAX) {
                tap(&env);
            }
        }
        Endpoint::from_inner(target).deliver_frame(&frame);
        Ok(())
    }
}

impl InProcHub {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every endpoint's outgoing traffic passes through a [`FaultyLink`]
    /// seeded from `spec.seed` and the registration index.
    pub fn with_faults(spec: FaultSpec) -> Self {
        Self { inner: Arc::new(HubInner { faults: Some(spec), ..Default::default() }) }
    }

    /// Observes every frame handed to a receiver, acks included.
    pub fn set_tap<F: Fn(&Envelope) + Send + Sync + 'static>(&self, tap: F) {
        *self.inner.tap.lock().unwrap_or_else(|e| e.into_inner()) = Some(Arc::new(tap));
    }

    pub fn endpoint(&self, name: &str, session_id: &str, config: ChannelConfig) -> Result<Endpoint, TransportError> {
        let base: Arc<dyn Link> = Arc::new(HubLink { hub: self.inner.clone() });
        let link: Arc<dyn Link> = match &self.inner.faults {
            Some(spec) => {
                let mut idx = self.inner.registered.lock().unwrap_or_else(|e| e.into_inner());
                let spec = FaultSpec { seed: spec.seed ^ (*idx).wrapping_mul(0x9e37_79b9_7f4a_7c15), ..spec.clone() };
                *idx += 1;
                Arc::new(FaultyLink::new(base, spec)?)
            }
            None => base,
        };
        let ep = Endpoint::new(name, session_id, config, link)?;
        self.inner
            .peers
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(name.to_owned(), ep.downgrade());
        Ok(ep)
    }
}
