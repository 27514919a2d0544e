use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{Link, TransportError};

/// Seeded loss and latency for test harnesses.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultSpec {
    pub drop_probability: f64,
    /// Per-frame latency drawn uniformly from `[min, max]`.
    pub latency_min: Duration,
    pub latency_max: Duration,
    pub seed: u64,
}

impl FaultSpec {
    pub fn validate(&self) -> Result<(), TransportError> {
        if !(0.0..1.0).contains(&self.drop_probability) {
            return Err(TransportError::InvalidConfig("drop_probability must be in [0, 1)"));
        }
        if self.latency_min > self.latency_max {
            return Err(TransportError::InvalidConfig("latency_min exceeds latency_max"));
        }
        Ok(())
    }
}

struct Delayed {
    due: Instant,
    order: u64,
    to: String,
    frame: Vec<u8>,
}

impl PartialEq for Delayed {
    fn eq(&self, o: &Self) -> bool {
        (self.due, self.order) == (o.due, o.order)
    }
}
impl Eq for Delayed {}
impl PartialOrd for Delayed {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Delayed {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        (self.due, self.order).cmp(&(o.due, o.order))
    }
}

/// Wraps a link, dropping frames with probability `drop_probability` and
/// delaying the rest. Latency jitter reorders frames.
pub struct FaultyLink {
    state: Mutex<(ChaCha20Rng, u64)>,
    spec: FaultSpec,
    tx: Mutex<Sender<Delayed>>,
}

impl FaultyLink {
    pub fn new(inner: Arc<dyn Link>, spec: FaultSpec) -> Result<Self, TransportError> {
        spec.validate()?;
        let (tx, rx) = mpsc::channel::<Delayed>();
        thread::Builder::new()
            .name("xfl-fault-timer".into())
            .spawn(move || {
                let mut heap = BinaryHeap::new();
                loop {
                    let timeout = heap
                        .peek()
                        .map(|Reverse(d): &Reverse<Delayed>| d.due.saturating_duration_since(Instant::now()))
                        .unwrap_or(Duration::from_secs(3600));
                    match rx.recv_timeout(timeout) {
                        Ok(d) => heap.push(Reverse(d)),
                        Err(RecvTimeoutError::Timeout) => {}
                        Err(RecvTimeoutError::Disconnected) if heap.is_empty() => return,
                        Err(RecvTimeoutError::Disconnected) => {
                            let Reverse(d) = heap.pop().unwrap();
                            thread::sleep(d.due.saturating_duration_since(Instant::now()));
                            let _ = inner.transmit(&d.to, d.frame);
                            continue;
                        }
                    }
                    let now = Instant::now();
                    while heap.peek().is_some_and(|Reverse(d)| d.due <= now) {
                        let Reverse(d) = heap.pop().unwrap();
                        let _ = inner.transmit(&d.to, d.frame);
                    }
                }
            })
            .map_err(|e| TransportError::Io(e.to_string()))?;
        Ok(Self { state: Mutex::new((ChaCha20Rng::seed_from_u64(spec.seed), 0)), spec, tx: Mutex::new(tx) })
    }
}

impl Link for FaultyLink {
    fn transmit(&self, to: &str, frame: Vec<u8>) -> Result<(), TransportError> {
        let (drop, delay, order) = {
            let mut st = self.state.lock().unwrap_or_else(|e| e.into_inner());
            let (rng, counter) = &mut *st;
            *counter += 1;
            let drop = rng.random::<f64>() < self.spec.drop_probability;
            let span = self.spec.latency_max - self.spec.latency_min;
            let delay = self.spec.latency_min + span.mul_f64(rng.random::<f64>());
            (drop, delay, *counter)
        };
        if drop {
            return Ok(());
        }
        let d = Delayed { due: Instant::now() + delay, order, to: to.to_owned(), frame };
        let _ = self.tx.lock().unwrap_or_else(|e| e.into_inner()).send(d);
        Ok(())
    }
}
