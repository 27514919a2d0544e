//! TCP backend: one outbound connection per peer, one reader thread per
//! accepted connection.

use std::collections::HashMap;
use std::io::{BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex, Weak};
use std::thread;
use std::time::Duration;

use log::{debug, warn};

use super::endpoint::Inner;
use super::{frame, ChannelConfig, Endpoint, Link, TransportError};

struct TcpLink {
    peers: HashMap<String, (SocketAddr, Mutex<Option<TcpStream>>)>,
    connect_timeout: Duration,
}

impl Link for TcpLink {
    fn transmit(&self, to: &str, frame: Vec<u8>) -> Result<(), TransportError> {
        let (addr, slot) = self.peers.get(to).ok_or_else(|| TransportError::UnknownPeer(to.to_owned()))?;
        let mut slot = slot.lock().unwrap_or_else(|e| e.into_inner());
        if slot.is_none() {
            let s = TcpStream::connect_timeout(addr, self.connect_timeout)
                .map_err(|e| TransportError::Io(format!("connect {to} at {addr}: {e}")))?;
            let _ = s.set_nodelay(true);
            *slot = Some(s);
        }
        let stream = slot.as_mut().expect("connected above");
        if let Err(e) = stream.write_all(&frame).and_then(|_| stream.flush()) {
            *slot = None;
            return Err(TransportError::Io(format!("write to {to}: {e}")));
        }
        Ok(())
    }
}

/// Resolves `host:port` to the first socket address.
pub fn resolve(addr: &str) -> Result<SocketAddr, TransportError> {
    addr.to_socket_addrs()
        .map_err(|e| TransportError::Io(format!("resolve {addr}: {e}")))?
        .next()
        .ok_or_else(|| TransportError::Io(format!("resolve {addr}: no addresses")))
}

/// Binds `listen` and returns an endpoint that reaches `peers` over TCP.
pub fn bind(
    name: &str,
    session_id: &str,
    config: ChannelConfig,
    listen: SocketAddr,
    peers: &HashMap<String, SocketAddr>,
) -> Result<Endpoint, TransportError> {
    let listener = TcpListener::bind(listen).map_err(|e| TransportError::Io(format!("bind {listen}: {e}")))?;
    listener.set_nonblocking(true).map_err(|e| TransportError::Io(e.to_string()))?;
    let link = TcpLink {
        peers: peers.iter().map(|(k, a)| (k.clone(), (*a, Mutex::new(None)))).collect(),
        connect_timeout: config.connect_timeout,
    };
    let max_frame = config.max_frame_bytes;
    let ep = Endpoint::new(name, session_id, config, Arc::new(link))?;
    let weak = ep.downgrade();
    thread::Builder::new()
        .name(format!("xfl-accept-{name}"))
        .spawn(move || accept_loop(listener, weak, max_frame))
        .map_err(|e| TransportError::Io(e.to_string()))?;
    Ok(ep)
}

fn accept_loop(listener: TcpListener, weak: Weak<Inner>, max_frame: u64) {
    loop {
        if weak.strong_count() == 0 {
            return;
        }
        match listener.accept() {
            Ok((stream, peer)) => {
                debug!("accepted connection from {peer}");
                let _ = stream.set_nonblocking(false);
                let w = weak.clone();
                let _ = thread::Builder::new()
                    .name("xfl-tcp-reader".into())
                    .spawn(move || read_loop(stream, w, max_frame));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
            Err(e) => {
                warn!("accept failed: {e}");
                thread::sleep(Duration::from_millis(50));
            }
        }
    }
}

fn read_loop(stream: TcpStream, weak: Weak<Inner>, max_frame: u64) {
    // Periodic timeouts let the thread notice a dropped endpoint.
    let _ = stream.set_read_timeout(Some(Duration::from_millis(500)));
    let mut reader = BufReader::new(stream);
    loop {
        if weak.strong_count() == 0 {
            return;
        }
        match frame::read_frame(&mut TimeoutRetry { inner: &mut reader, weak: &weak }, max_frame) {
            Ok(Some(env)) => match weak.upgrade() {
                Some(inner) => Endpoint::from_inner(inner).deliver(env),
                None => return,
            },
            Ok(None) => return,
            Err(e) => {
                debug!("closing connection: {e}");
                return;
            }
        }
    }
}

/// Retries reads that hit the socket timeout while the endpoint is alive, so
/// a frame split across a timeout is not torn.
struct TimeoutRetry<'a, R> {
    inner: &'a mut R,
    weak: &'a Weak<Inner>,
}

impl<R: std::io::Read> std::io::Read for TimeoutRetry<'_, R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        loop {
            match self.inner.read(buf) {
                Err(e)
                    if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut)
                        && self.weak.strong_count() > 0 =>
                {
                    continue
                }
                Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {
                    return Ok(0)
                }
                r => return r,
            }
        }
    }
}
