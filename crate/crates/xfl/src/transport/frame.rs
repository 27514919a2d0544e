//! Wire framing for envelopes.
//!
//! ```text
//! "XFL1" | u32 header_len | header | u64 payload_len | payload | u32 crc32(payload)
//! ```
//!
//! All integers are big-endian. The header is UTF-8 `key:value` lines, one per
//! field, in the order `session_id`, `stage_key`, `sender`, `receiver`, `seq`.

use std::io::Read;

use super::{Envelope, TransportError};

pub const MAGIC: &[u8; 4] = b"XFL1";

const FIELDS: [&str; 5] = ["session_id", "stage_key", "sender", "receiver", "seq"];
const MAX_HEADER: u32 = 64 * 1024;

pub fn encode(env: &Envelope) -> Result<Vec<u8>, TransportError> {
    for (name, value) in [
        ("session_id", &env.session_id),
        ("stage_key", &env.stage_key),
        ("sender", &env.sender),
        ("receiver", &env.receiver),
    ] {
        if value.contains('\n') {
            return Err(TransportError::BadFrame(format!("{name} contains a newline")));
        }
    }
    let header = format!(
        "session_id:{}\nstage_key:{}\nsender:{}\nreceiver:{}\nseq:{}\n",
        env.session_id, env.stage_key, env.sender, env.receiver, env.seq
    );
    let mut out = Vec::with_capacity(4 + 4 + header.len() + 8 + env.payload.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_be_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&(env.payload.len() as u64).to_be_bytes());
    out.extend_from_slice(&env.payload);
    out.extend_from_slice(&crc32fast::hash(&env.payload).to_be_bytes());
    Ok(out)
}

/// Decodes exactly one frame occupying all of `buf`.
pub fn decode(buf: &[u8], max_frame: u64) -> Result<Envelope, TransportError> {
    let mut cursor = buf;
    let env = read_frame(&mut cursor, max_frame)?
        .ok_or_else(|| TransportError::BadFrame("empty buffer".into()))?;
    if !cursor.is_empty() {
        return Err(TransportError::BadFrame(format!("{} trailing bytes", cursor.len())));
    }
    Ok(env)
}

/// Reads one frame from a stream. `Ok(None)` on a clean end of stream before
/// the first magic byte.
pub fn read_frame<R: Read>(r: &mut R, max_frame: u64) -> Result<Option<Envelope>, TransportError> {
    let mut magic = [0u8; 4];
    match read_full(r, &mut magic)? {
        0 => return Ok(None),
        4 => {}
        n => return Err(TransportError::BadFrame(format!("truncated magic ({n} bytes)"))),
    }
    if &magic != MAGIC {
        return Err(TransportError::BadFrame("bad magic".into()));
    }
    let header_len = u32::from_be_bytes(read_array(r)?);
    if header_len > MAX_HEADER {
        return Err(TransportError::BadFrame(format!("header length {header_len}")));
    }
    let mut header = vec![0u8; header_len as usize];
    read_exact(r, &mut header)?;
    let header =
        String::from_utf8(header).map_err(|_| TransportError::BadFrame("header not UTF-8".into()))?;
    let mut values: [Option<&str>; 5] = [None; 5];
    for line in header.lines() {
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| TransportError::BadFrame(format!("header line {line:?}")))?;
        let slot = FIELDS
            .iter()
            .position(|f| *f == key)
            .ok_or_else(|| TransportError::BadFrame(format!("unknown header key {key:?}")))?;
        if values[slot].replace(value).is_some() {
            return Err(TransportError::BadFrame(format!("duplicate header key {key:?}")));
        }
    }
    let get = |i: usize| {
        values[i]
            .map(str::to_owned)
            .ok_or_else(|| TransportError::BadFrame(format!("missing header key {:?}", FIELDS[i])))
    };
    let seq = get(4)?
        .parse::<u64>()
        .map_err(|_| TransportError::BadFrame("seq is not an integer".into()))?;

    let payload_len = u64::from_be_bytes(read_array(r)?);
    if payload_len > max_frame {
        return Err(TransportError::FrameTooLarge { len: payload_len, max: max_frame });
    }
    let mut payload = vec![0u8; payload_len as usize];
    read_exact(r, &mut payload)?;
    let crc = u32::from_be_bytes(read_array(r)?);
    if crc != crc32fast::hash(&payload) {
        return Err(TransportError::BadFrame("payload checksum mismatch".into()));
    }
    Ok(Some(Envelope {
        session_id: get(0)?,
        stage_key: get(1)?,
        sender: get(2)?,
        receiver: get(3)?,
        seq,
        payload,
    }))
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize, TransportError> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(TransportError::Io(e.to_string())),
        }
    }
    Ok(filled)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), TransportError> {
    if read_full(r, buf)? != buf.len() {
        return Err(TransportError::BadFrame("truncated frame".into()));
    }
    Ok(())
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N], TransportError> {
    let mut a = [0u8; N];
    read_exact(r, &mut a)?;
    Ok(a)
}
