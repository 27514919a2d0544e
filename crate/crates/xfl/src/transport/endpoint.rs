use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard, Weak};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, trace, warn};

use super::{frame, ChannelConfig, Envelope, TransportError, ABORT_KEY, ACK_PREFIX};

/// Best-effort frame carrier. Loss and reordering are allowed; the endpoint
/// recovers both.
pub trait Link: Send + Sync {
    fn transmit(&self, to: &str, frame: Vec<u8>) -> Result<(), TransportError>;
}

type StreamKey = (String, String);
type SendKey = (String, String, u64);

struct Pending {
    frame: Vec<u8>,
    attempts: u32,
    next_due: Instant,
}

#[derive(Default)]
struct Outbox {
    next_seq: HashMap<StreamKey, u64>,
    pending: HashMap<SendKey, Pending>,
    failed: HashMap<SendKey, u32>,
}

#[derive(Default)]
struct Stream {
    next: u64,
    held: BTreeMap<u64, Vec<u8>>,
    ready: VecDeque<Vec<u8>>,
}

#[derive(Default)]
struct Inbox {
    streams: HashMap<StreamKey, Stream>,
    delivered: u64,
    duplicates: u64,
}

pub(super) struct Inner {
    name: String,
    session_id: String,
    config: ChannelConfig,
    link: Arc<dyn Link>,
    out: Mutex<Outbox>,
    out_cv: Condvar,
    inbox: Mutex<Inbox>,
    in_cv: Condvar,
    aborted: AtomicBool,
}

/// Handle to one party's side of a session. Cheap to clone; all clones share
/// sequence counters and queues.
#[derive(Clone)]
pub struct Endpoint {
    inner: Arc<Inner>,
}

/// Outstanding send, resolved by [`Endpoint::wait`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SendTicket {
    pub to: String,
    pub stage_key: String,
    pub seq: u64,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl Endpoint {
    pub fn new(
        name: &str,
        session_id: &str,
        config: ChannelConfig,
        link: Arc<dyn Link>,
    ) -> Result<Self, TransportError> {
        config.validate()?;
        let inner = Arc::new(Inner {
            name: name.to_owned(),
            session_id: session_id.to_owned(),
            config,
            link,
            out: Mutex::new(Outbox::default()),
            out_cv: Condvar::new(),
            inbox: Mutex::new(Inbox::default()),
            in_cv: Condvar::new(),
            aborted: AtomicBool::new(false),
        });
        let weak = Arc::downgrade(&inner);
        thread::Builder::new()
            .name(format!("xfl-retx-{name}"))
            .spawn(move || retransmit_loop(weak))
            .map_err(|e| TransportError::Io(e.to_string()))?;
        Ok(Self { inner })
    }

    pub(super) fn downgrade(&self) -> Weak<Inner> {
        Arc::downgrade(&self.inner)
    }

    pub(super) fn from_inner(inner: Arc<Inner>) -> Self {
        Self { inner }
    }

    pub fn name(&self) -> &str {
        &self.inner.name
    }

    pub fn session_id(&self) -> &str {
        &self.inner.session_id
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.inner.config
    }

    /// Payloads handed to the application so far, and duplicate frames dropped.
    pub fn delivery_counts(&self) -> (u64, u64) {
        let ib = lock(&self.inner.inbox);
        (ib.delivered, ib.duplicates)
    }

    /// Marks the session aborted locally; blocked protocol calls return
    /// [`TransportError::Aborted`]. Scheduler stage keys keep working.
    pub fn abort(&self) {
        self.inner.aborted.store(true, Ordering::SeqCst);
        self.inner.in_cv.notify_all();
        self.inner.out_cv.notify_all();
    }

    pub fn is_aborted(&self) -> bool {
        self.inner.aborted.load(Ordering::SeqCst)
    }

    fn check_abort(&self, stage_key: &str) -> Result<(), TransportError> {
        if self.is_aborted() && !stage_key.starts_with("sched/") {
            return Err(TransportError::Aborted);
        }
        Ok(())
    }

    /// Queues a payload and transmits it once; retransmission continues in
    /// the background until acknowledged.
    pub fn post(&self, to: &str, stage_key: &str, payload: Vec<u8>) -> Result<SendTicket, TransportError> {
        self.check_abort(stage_key)?;
        if payload.len() as u64 > self.inner.config.max_frame_bytes {
            return Err(TransportError::FrameTooLarge {
                len: payload.len() as u64,
                max: self.inner.config.max_frame_bytes,
            });
        }
        let frame_bytes;
        let seq;
        {
            let mut out = lock(&self.inner.out);
            let counter = out.next_seq.entry((to.to_owned(), stage_key.to_owned())).or_insert(0);
            seq = *counter;
            *counter += 1;
            frame_bytes = frame::encode(&Envelope {
                session_id: self.inner.session_id.clone(),
                stage_key: stage_key.to_owned(),
                sender: self.inner.name.clone(),
                receiver: to.to_owned(),
                seq,
                payload,
            })?;
            out.pending.insert(
                (to.to_owned(), stage_key.to_owned(), seq),
                Pending {
                    frame: frame_bytes.clone(),
                    attempts: 1,
                    next_due: Instant::now() + self.inner.config.backoff(1),
                },
            );
        }
        if let Err(e) = self.inner.link.transmit(to, frame_bytes) {
            debug!("{}: first transmission of {stage_key}#{seq} to {to} failed: {e}", self.inner.name);
        }
        Ok(SendTicket { to: to.to_owned(), stage_key: stage_key.to_owned(), seq })
    }

    /// Blocks until the ticket is acknowledged or its retries are exhausted.
    pub fn wait(&self, ticket: &SendTicket) -> Result<(), TransportError> {
        let key = (ticket.to.clone(), ticket.stage_key.clone(), ticket.seq);
        let mut out = lock(&self.inner.out);
        loop {
            if let Some(attempts) = out.failed.remove(&key) {
                return Err(TransportError::DeliveryFailed {
                    to: ticket.to.clone(),
                    stage_key: ticket.stage_key.clone(),
                    seq: ticket.seq,
                    attempts,
                });
            }
            if !out.pending.contains_key(&key) {
                return Ok(());
            }
            if self.is_aborted() && !ticket.stage_key.starts_with("sched/") {
                out.pending.remove(&key);
                return Err(TransportError::Aborted);
            }
            out = self
                .inner
                .out_cv
                .wait_timeout(out, Duration::from_millis(200))
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    /// Sends and waits for the acknowledgment.
    pub fn send(&self, to: &str, stage_key: &str, payload: Vec<u8>) -> Result<(), TransportError> {
        let t = self.post(to, stage_key, payload)?;
        self.wait(&t)
    }

    /// Sends the same payload to every member; failures are collected.
    pub fn broadcast(&self, members: &[String], stage_key: &str, payload: &[u8]) -> Result<(), TransportError> {
        let mut tickets = Vec::with_capacity(members.len());
        let mut failed = Vec::new();
        for m in members {
            match self.post(m, stage_key, payload.to_vec()) {
                Ok(t) => tickets.push(t),
                Err(TransportError::Aborted) => return Err(TransportError::Aborted),
                Err(_) => failed.push(m.clone()),
            }
        }
        for t in &tickets {
            match self.wait(t) {
                Ok(()) => {}
                Err(TransportError::Aborted) => return Err(TransportError::Aborted),
                Err(_) => failed.push(t.to.clone()),
            }
        }
        if failed.is_empty() {
            Ok(())
        } else {
            failed.sort();
            Err(TransportError::BroadcastFailed { stage_key: stage_key.to_owned(), members: failed })
        }
    }

    pub fn recv(&self, stage_key: &str, from: &str) -> Result<Vec<u8>, TransportError> {
        self.recv_timeout(stage_key, from, self.inner.config.recv_timeout)
    }

    /// Next payload of the `(from, stage_key)` stream, in sequence order.
    pub fn recv_timeout(&self, stage_key: &str, from: &str, timeout: Duration) -> Result<Vec<u8>, TransportError> {
        let deadline = Instant::now() + timeout;
        let key = (from.to_owned(), stage_key.to_owned());
        let mut ib = lock(&self.inner.inbox);
        loop {
            self.check_abort(stage_key)?;
            if let Some(p) = ib.streams.get_mut(&key).and_then(|s| s.ready.pop_front()) {
                return Ok(p);
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(TransportError::Timeout { stage_key: stage_key.to_owned(), from: from.to_owned() });
            }
            ib = self.inner.in_cv.wait_timeout(ib, deadline - now).unwrap_or_else(|e| e.into_inner()).0;
        }
    }

    /// Next payload from `from` on whichever of `stage_keys` has one first;
    /// earlier keys win when several are ready.
    pub fn recv_any(&self, stage_keys: &[&str], from: &str) -> Result<(String, Vec<u8>), TransportError> {
        let deadline = Instant::now() + self.inner.config.recv_timeout;
        let mut ib = lock(&self.inner.inbox);
        loop {
            for k in stage_keys {
                self.check_abort(k)?;
                let key = (from.to_owned(), (*k).to_owned());
                if let Some(p) = ib.streams.get_mut(&key).and_then(|s| s.ready.pop_front()) {
                    return Ok(((*k).to_owned(), p));
                }
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(TransportError::Timeout { stage_key: stage_keys.join("|"), from: from.to_owned() });
            }
            ib = self.inner.in_cv.wait_timeout(ib, deadline - now).unwrap_or_else(|e| e.into_inner()).0;
        }
    }

    /// Next payload on `stage_key` from whichever of `members` has one first;
    /// earlier members win when several are ready.
    pub fn recv_from_any(
        &self,
        stage_key: &str,
        members: &[String],
        timeout: Duration,
    ) -> Result<(String, Vec<u8>), TransportError> {
        let deadline = Instant::now() + timeout;
        let mut ib = lock(&self.inner.inbox);
        loop {
            self.check_abort(stage_key)?;
            for m in members {
                let key = (m.clone(), stage_key.to_owned());
                if let Some(p) = ib.streams.get_mut(&key).and_then(|s| s.ready.pop_front()) {
                    return Ok((m.clone(), p));
                }
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(TransportError::Timeout { stage_key: stage_key.to_owned(), from: members.join("|") });
            }
            ib = self.inner.in_cv.wait_timeout(ib, deadline - now).unwrap_or_else(|e| e.into_inner()).0;
        }
    }

    pub fn gather(&self, members: &[String], stage_key: &str) -> Result<BTreeMap<String, Vec<u8>>, TransportError> {
        self.gather_timeout(members, stage_key, self.inner.config.recv_timeout)
    }

    /// One payload from each member, in whatever order they arrive.
    pub fn gather_timeout(
        &self,
        members: &[String],
        stage_key: &str,
        timeout: Duration,
    ) -> Result<BTreeMap<String, Vec<u8>>, TransportError> {
        let deadline = Instant::now() + timeout;
        let mut got = BTreeMap::new();
        let mut ib = lock(&self.inner.inbox);
        loop {
            self.check_abort(stage_key)?;
            for m in members {
                if got.contains_key(m) {
                    continue;
                }
                let key = (m.clone(), stage_key.to_owned());
                if let Some(p) = ib.streams.get_mut(&key).and_then(|s| s.ready.pop_front()) {
                    got.insert(m.clone(), p);
                }
            }
            if got.len() == members.len() {
                return Ok(got);
            }
            let now = Instant::now();
            if now >= deadline {
                let missing = members.iter().filter(|m| !got.contains_key(*m)).cloned().collect();
                return Err(TransportError::GatherTimeout {
                    stage_key: stage_key.to_owned(),
                    missing,
                    received: got.len(),
                });
            }
            ib = self.inner.in_cv.wait_timeout(ib, deadline - now).unwrap_or_else(|e| e.into_inner()).0;
        }
    }

    /// Waits until no sends are outstanding or `timeout` passes. Returns
    /// whether the outbox drained.
    pub fn flush(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut out = lock(&self.inner.out);
        loop {
            if out.pending.is_empty() {
                return true;
            }
            let now = Instant::now();
            if now >= deadline {
                return false;
            }
            out = self.inner.out_cv.wait_timeout(out, deadline - now).unwrap_or_else(|e| e.into_inner()).0;
        }
    }

    /// Entry point for link backends.
    pub fn deliver_frame(&self, bytes: &[u8]) {
        match frame::decode(bytes, self.inner.config.max_frame_bytes) {
            Ok(env) => self.inner.handle(env),
            Err(e) => warn!("{}: dropping frame: {e}", self.inner.name),
        }
    }

    pub fn deliver(&self, env: Envelope) {
        self.inner.handle(env);
    }

    /// View that prefixes every stage key with `prefix/`.
    pub fn channel(&self, prefix: &str) -> Channel {
        Channel { ep: self.clone(), prefix: prefix.to_owned() }
    }
}

impl Inner {
    fn handle(&self, env: Envelope) {
        if env.session_id != self.session_id || env.receiver != self.name {
            debug!("{}: dropping misaddressed frame {}->{} ({})", self.name, env.sender, env.receiver, env.session_id);
            return;
        }
        if let Some(acked) = env.stage_key.strip_prefix(ACK_PREFIX) {
            let mut out = lock(&self.out);
            if out.pending.remove(&(env.sender, acked.to_owned(), env.seq)).is_some() {
                self.out_cv.notify_all();
            }
            return;
        }
        {
            let mut ib = lock(&self.inbox);
            let cap = self.config.inbox_capacity;
            let stream = ib.streams.entry((env.sender.clone(), env.stage_key.clone())).or_default();
            let duplicate = env.seq < stream.next || stream.held.contains_key(&env.seq);
            if duplicate {
                ib.duplicates += 1;
                trace!("{}: duplicate {}#{} from {}", self.name, env.stage_key, env.seq, env.sender);
            } else if stream.held.len() + stream.ready.len() >= cap {
                // refuse without ack; the sender retries later
                return;
            } else {
                stream.held.insert(env.seq, env.payload);
                let mut moved = 0;
                while let Some(p) = stream.held.remove(&stream.next) {
                    stream.ready.push_back(p);
                    stream.next += 1;
                    moved += 1;
                }
                ib.delivered += moved;
                if env.stage_key == ABORT_KEY {
                    self.aborted.store(true, Ordering::SeqCst);
                    self.out_cv.notify_all();
                }
                self.in_cv.notify_all();
            }
        }
        let ack = Envelope {
            session_id: self.session_id.clone(),
            stage_key: format!("{ACK_PREFIX}{}", env.stage_key),
            sender: self.name.clone(),
            receiver: env.sender.clone(),
            seq: env.seq,
            payload: Vec::new(),
        };
        if let Ok(bytes) = frame::encode(&ack) {
            if let Err(e) = self.link.transmit(&env.sender, bytes) {
                debug!("{}: ack to {} failed: {e}", self.name, env.sender);
            }
        }
    }
}

fn retransmit_loop(weak: Weak<Inner>) {
    loop {
        let Some(inner) = weak.upgrade() else { return };
        let mut due = Vec::new();
        let wake;
        {
            let mut out = lock(&inner.out);
            let now = Instant::now();
            let mut next = now + Duration::from_millis(50);
            let mut exhausted = Vec::new();
            for (key, p) in out.pending.iter_mut() {
                if p.next_due <= now {
                    if p.attempts > inner.config.send_retry_limit {
                        exhausted.push((key.clone(), p.attempts));
                        continue;
                    }
                    p.attempts += 1;
                    p.next_due = now + inner.config.backoff(p.attempts);
                    due.push((key.0.clone(), p.frame.clone()));
                }
                next = next.min(p.next_due);
            }
            if !exhausted.is_empty() {
                for (key, attempts) in exhausted {
                    warn!("{}: giving up on {}#{} to {} after {attempts} attempts", inner.name, key.1, key.2, key.0);
                    out.pending.remove(&key);
                    out.failed.insert(key, attempts);
                }
                inner.out_cv.notify_all();
            }
            wake = next;
        }
        for (to, bytes) in due {
            let _ = inner.link.transmit(&to, bytes);
        }
        drop(inner);
        let now = Instant::now();
        if wake > now {
            thread::sleep((wake - now).min(Duration::from_millis(50)));
        }
    }
}

/// Stage-scoped view of an [`Endpoint`]; keys become `prefix/key`.
#[derive(Clone)]
pub struct Channel {
    ep: Endpoint,
    prefix: String,
}

impl Channel {
    fn key(&self, k: &str) -> String {
        format!("{}/{k}", self.prefix)
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.ep
    }

    pub fn name(&self) -> &str {
        self.ep.name()
    }

    pub fn send(&self, to: &str, stage_key: &str, payload: Vec<u8>) -> Result<(), TransportError> {
        self.ep.send(to, &self.key(stage_key), payload)
    }

    pub fn recv(&self, stage_key: &str, from: &str) -> Result<Vec<u8>, TransportError> {
        self.ep.recv(&self.key(stage_key), from)
    }

    pub fn broadcast(&self, members: &[String], stage_key: &str, payload: &[u8]) -> Result<(), TransportError> {
        self.ep.broadcast(members, &self.key(stage_key), payload)
    }

    pub fn gather(&self, members: &[String], stage_key: &str) -> Result<BTreeMap<String, Vec<u8>>, TransportError> {
        self.ep.gather(members, &self.key(stage_key))
    }

    /// Like [`Endpoint::recv_any`]; the returned key has the prefix removed.
    pub fn recv_any(&self, stage_keys: &[&str], from: &str) -> Result<(String, Vec<u8>), TransportError> {
        let keys: Vec<String> = stage_keys.iter().map(|k| self.key(k)).collect();
        let refs: Vec<&str> = keys.iter().map(String::as_str).collect();
        let (k, p) = self.ep.recv_any(&refs, from)?;
        Ok((k[self.prefix.len() + 1..].to_owned(), p))
    }
}
