//! Framed wire protocol and transports for the classical channel.
//!
//! Every message is one frame: a 4-byte magic, a version byte, a type byte,
//! a 4-byte big-endian payload length, then the payload. All multi-byte
//! integers are big-endian. Payloads:
//!
//! | type         | tag  | payload                                        |
//! |--------------|------|------------------------------------------------|
//! | `PARAM_M`    | 0x01 | 8-byte unsigned m                              |
//! | `TB_LIST`    | 0x02 | 4-byte count, then count × 2-byte block index  |
//! | `T_LIST`     | 0x03 | 4-byte bit count, packed bits MSB-first, 1=plus|
//! | `CIPHERTEXT` | 0x04 | 4-byte bit count, packed bits MSB-first        |
//! | `RETRY`      | 0x05 | 8-byte unsigned new m                          |
//! | `ABORT`      | 0x06 | 2-byte reason code                             |
//!
//! The same codec drives the TCP transport, the in-memory loopback used by
//! tests, and the transcript files consumed by the attack harness.

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use thiserror::Error;

use crate::keyder::{BlockIndexList, Mark, MatchList};
use crate::vernam::BitString;

pub const MAGIC: [u8; 4] = *b"BC12";
pub const VERSION: u8 = 0x01;
const HEADER_LEN: usize = 10;

/// Abort reason codes carried by `ABORT` frames.
pub mod abort_code {
    pub const RETRIES_EXHAUSTED: u16 = 1;
    pub const UNEXPECTED_FRAME: u16 = 2;
    pub const NO_MATCH: u16 = 3;
    pub const INTERNAL: u16 = 4;
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unknown version 0x{0:02x}")]
    UnknownVersion(u8),
    #[error("unknown frame type 0x{0:02x}")]
    UnknownType(u8),
    #[error("truncated frame: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("payload length mismatch for {frame}: declared {declared}, implied {implied}")]
    LengthMismatch {
        frame: &'static str,
        declared: usize,
        implied: usize,
    },
    #[error("payload of {0} bytes exceeds the 2^32-1 limit")]
    PayloadTooLarge(usize),
}

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("frame codec error: {0}")]
    Frame(#[from] FrameError),
    #[error("peer closed the channel")]
    PeerClosed,
    #[error("channel timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Io(#[from] io::Error),
}

/// One protocol message.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Frame {
    /// The sequence-length parameter opening a session.
    ParamM(u64),
    /// The responder's full block-index list.
    TbList(BlockIndexList),
    /// The comparison record (bit set = plus).
    TList(MatchList),
    /// The encrypted message bits.
    Ciphertext(BitString),
    /// A fresh sequence-length parameter after a short key.
    Retry(u64),
    /// Session teardown with a reason code.
    Abort(u16),
}

impl Frame {
    pub fn type_tag(&self) -> u8 {
        match self {
            Frame::ParamM(_) => 0x01,
            Frame::TbList(_) => 0x02,
            Frame::TList(_) => 0x03,
            Frame::Ciphertext(_) => 0x04,
            Frame::Retry(_) => 0x05,
            Frame::Abort(_) => 0x06,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Frame::ParamM(_) => "PARAM_M",
            Frame::TbList(_) => "TB_LIST",
            Frame::TList(_) => "T_LIST",
            Frame::Ciphertext(_) => "CIPHERTEXT",
            Frame::Retry(_) => "RETRY",
            Frame::Abort(_) => "ABORT",
        }
    }
}

fn pack_bits(bits: impl Iterator<Item = bool>, count: usize, out: &mut Vec<u8>) {
    out.extend_from_slice(&(count as u32).to_be_bytes());
    let start = out.len();
    out.resize(start + count.div_ceil(8), 0);
    for (i, bit) in bits.enumerate() {
        if bit {
            out[start + i / 8] |= 0x80 >> (i % 8);
        }
    }
}

/// Encodes one frame to wire bytes.
pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>, FrameError> {
    let mut payload = Vec::new();
    match frame {
        Frame::ParamM(m) | Frame::Retry(m) => payload.extend_from_slice(&m.to_be_bytes()),
        Frame::TbList(list) => {
            payload.extend_from_slice(&(list.len() as u32).to_be_bytes());
            for &j in list.as_slice() {
                payload.extend_from_slice(&j.to_be_bytes());
            }
        }
        Frame::TList(t) => pack_bits(
            t.marks().iter().map(|m| *m == Mark::Plus),
            t.len(),
            &mut payload,
        ),
        Frame::Ciphertext(bits) => pack_bits(bits.iter(), bits.len(), &mut payload),
        Frame::Abort(code) => payload.extend_from_slice(&code.to_be_bytes()),
    }
    if payload.len() > u32::MAX as usize {
        return Err(FrameError::PayloadTooLarge(payload.len()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(frame.type_tag());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

fn be_u32(bytes: &[u8]) -> u32 {
    u32::from_be_bytes(bytes.try_into().unwrap())
}

fn decode_payload(tag: u8, payload: &[u8]) -> Result<Frame, FrameError> {
    let fixed = |frame, expected: usize| {
        if payload.len() == expected {
            Ok(())
        } else {
            Err(FrameError::LengthMismatch {
                frame,
                declared: payload.len(),
                implied: expected,
            })
        }
    };
    match tag {
        0x01 | 0x05 => {
            let name = if tag == 0x01 { "PARAM_M" } else { "RETRY" };
            fixed(name, 8)?;
            let m = u64::from_be_bytes(payload.try_into().unwrap());
            Ok(if tag == 0x01 {
                Frame::ParamM(m)
            } else {
                Frame::Retry(m)
            })
        }
        0x02 => {
            if payload.len() < 4 {
                return Err(FrameError::LengthMismatch {
                    frame: "TB_LIST",
                    declared: payload.len(),
                    implied: 4,
                });
            }
            let count = be_u32(&payload[..4]) as usize;
            fixed("TB_LIST", 4 + 2 * count)?;
            let indices = payload[4..]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect();
            Ok(Frame::TbList(BlockIndexList::new(indices)))
        }
        0x03 | 0x04 => {
            let name = if tag == 0x03 { "T_LIST" } else { "CIPHERTEXT" };
            if payload.len() < 4 {
                return Err(FrameError::LengthMismatch {
                    frame: name,
                    declared: payload.len(),
                    implied: 4,
                });
            }
            let count = be_u32(&payload[..4]) as usize;
            fixed(name, 4 + count.div_ceil(8))?;
            let bits = BitString::from_packed(&payload[4..], count);
            Ok(if tag == 0x03 {
                let marks = bits
                    .iter()
                    .map(|b| if b { Mark::Plus } else { Mark::Minus })
                    .collect();
                Frame::TList(MatchList::new(marks))
            } else {
                Frame::Ciphertext(bits)
            })
        }
        0x06 => {
            fixed("ABORT", 2)?;
            Ok(Frame::Abort(u16::from_be_bytes([payload[0], payload[1]])))
        }
        other => Err(FrameError::UnknownType(other)),
    }
}

/// Decodes one complete frame from the front of `bytes`, returning it with
/// the unconsumed remainder. Incomplete input is a [`FrameError::Truncated`].
pub fn decode_frame(bytes: &[u8]) -> Result<(Frame, &[u8]), FrameError> {
    let (frame, used) = match try_decode(bytes)? {
        Some(hit) => hit,
        None => {
            return Err(FrameError::Truncated {
                needed: needed_len(bytes),
                have: bytes.len(),
            })
        }
    };
    Ok((frame, &bytes[used..]))
}

fn needed_len(bytes: &[u8]) -> usize {
    if bytes.len() < HEADER_LEN {
        HEADER_LEN
    } else {
        HEADER_LEN + be_u32(&bytes[6..10]) as usize
    }
}

/// Streaming decode: `Ok(None)` when more bytes are required.
fn try_decode(bytes: &[u8]) -> Result<Option<(Frame, usize)>, FrameError> {
    if bytes.len() < HEADER_LEN {
        return Ok(None);
    }
    if bytes[..4] != MAGIC {
        return Err(FrameError::BadMagic(bytes[..4].try_into().unwrap()));
    }
    if bytes[4] != VERSION {
        return Err(FrameError::UnknownVersion(bytes[4]));
    }
    let payload_len = be_u32(&bytes[6..10]) as usize;
    let total = HEADER_LEN + payload_len;
    if bytes.len() < total {
        return Ok(None);
    }
    let frame = decode_payload(bytes[5], &bytes[HEADER_LEN..total])?;
    Ok(Some((frame, total)))
}

/// Decodes a byte buffer holding zero or more concatenated frames.
pub fn decode_all(mut bytes: &[u8]) -> Result<Vec<Frame>, FrameError> {
    let mut frames = Vec::new();
    while !bytes.is_empty() {
        let (frame, rest) = decode_frame(bytes)?;
        frames.push(frame);
        bytes = rest;
    }
    Ok(frames)
}

/// Incremental decoder that reassembles frames from arbitrary stream chunks.
#[derive(Default, Debug)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_bytes(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Pops the next complete frame, if the buffer holds one.
    pub fn try_next(&mut self) -> Result<Option<Frame>, FrameError> {
        match try_decode(&self.buf)? {
            Some((frame, used)) => {
                self.buf.drain(..used);
                Ok(Some(frame))
            }
            None => Ok(None),
        }
    }

    /// Bytes buffered but not yet consumed by a complete frame.
    pub fn pending(&self) -> usize {
        self.buf.len()
    }
}

/// A bidirectional, ordered frame transport.
pub trait FrameChannel: Send {
    fn send(&mut self, frame: &Frame) -> Result<(), ChannelError>;
    fn recv(&mut self) -> Result<Frame, ChannelError>;
}

/// Frame transport over any reliable byte stream.
pub struct StreamChannel<S> {
    stream: S,
    decoder: FrameDecoder,
}

impl<S: Read + Write + Send> StreamChannel<S> {
    pub fn new(stream: S) -> Self {
        StreamChannel {
            stream,
            decoder: FrameDecoder::new(),
        }
    }

    pub fn get_ref(&self) -> &S {
        &self.stream
    }
}

impl<S: Read + Write + Send> FrameChannel for StreamChannel<S> {
    fn send(&mut self, frame: &Frame) -> Result<(), ChannelError> {
        let bytes = encode_frame(frame)?;
        self.stream.write_all(&bytes)?;
        self.stream.flush()?;
        Ok(())
    }

    fn recv(&mut self) -> Result<Frame, ChannelError> {
        let mut chunk = [0u8; 4096];
        loop {
            if let Some(frame) = self.decoder.try_next()? {
                return Ok(frame);
            }
            let read = match self.stream.read(&mut chunk) {
                Ok(0) => return Err(ChannelError::PeerClosed),
                Ok(n) => n,
                Err(e) if e.kind() == io::ErrorKind::TimedOut => return Err(ChannelError::Timeout),
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    return Err(ChannelError::Timeout)
                }
                Err(e) => return Err(ChannelError::Io(e)),
            };
            self.decoder.push_bytes(&chunk[..read]);
        }
    }
}

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Connects to a TCP peer and applies the read timeout.
pub fn connect_tcp(
    addr: &str,
    timeout: Option<Duration>,
) -> Result<StreamChannel<TcpStream>, ChannelError> {
    let stream = TcpStream::connect(addr)?;
    stream.set_read_timeout(Some(timeout.unwrap_or(DEFAULT_TIMEOUT)))?;
    stream.set_nodelay(true)?;
    Ok(StreamChannel::new(stream))
}

/// Wraps an accepted TCP stream and applies the read timeout.
pub fn accept_tcp(
    stream: TcpStream,
    timeout: Option<Duration>,
) -> Result<StreamChannel<TcpStream>, ChannelError> {
    stream.set_read_timeout(Some(timeout.unwrap_or(DEFAULT_TIMEOUT)))?;
    stream.set_nodelay(true)?;
    Ok(StreamChannel::new(stream))
}

// ---------------------------------------------------------------------------
// In-memory loopback

#[derive(Default)]
struct PipeState {
    buf: VecDeque<u8>,
    closed: bool,
}

#[derive(Default)]
struct Pipe {
    state: Mutex<PipeState>,
    readable: Condvar,
}

/// One end of an in-memory duplex byte pipe.
///
/// Reads block until data arrives, the peer closes, or the timeout elapses,
/// mirroring socket semantics closely enough that the protocol drive loops
/// run unchanged over TCP and loopback.
pub struct PipeEnd {
    incoming: Arc<Pipe>,
    outgoing: Arc<Pipe>,
    timeout: Duration,
}

impl Read for PipeEnd {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        let mut state = self.incoming.state.lock().unwrap();
        while state.buf.is_empty() {
            if state.closed {
                return Ok(0);
            }
            let (next, wait) = self
                .incoming
                .readable
                .wait_timeout(state, self.timeout)
                .unwrap();
            state = next;
            if wait.timed_out() && state.buf.is_empty() && !state.closed {
                return Err(io::Error::new(io::ErrorKind::TimedOut, "loopback read"));
            }
        }
        let n = out.len().min(state.buf.len());
        for slot in out.iter_mut().take(n) {
            *slot = state.buf.pop_front().unwrap();
        }
        Ok(n)
    }
}

impl Write for PipeEnd {
    fn write(&mut self, data: &[u8]) -> io::Result<usize> {
        let mut state = self.outgoing.state.lock().unwrap();
        if state.closed {
            return Err(io::Error::new(io::ErrorKind::BrokenPipe, "loopback write"));
        }
        state.buf.extend(data);
        self.outgoing.readable.notify_all();
        Ok(data.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl Drop for PipeEnd {
    fn drop(&mut self) {
        for pipe in [&self.outgoing, &self.incoming] {
            pipe.state.lock().unwrap().closed = true;
            pipe.readable.notify_all();
        }
    }
}

pub type LoopbackChannel = StreamChannel<PipeEnd>;

/// A connected pair of in-memory frame channels.
pub fn loopback_pair() -> (LoopbackChannel, LoopbackChannel) {
    loopback_pair_with_timeout(DEFAULT_TIMEOUT)
}

pub fn loopback_pair_with_timeout(timeout: Duration) -> (LoopbackChannel, LoopbackChannel) {
    let a_to_b = Arc::new(Pipe::default());
    let b_to_a = Arc::new(Pipe::default());
    let a = PipeEnd {
        incoming: Arc::clone(&b_to_a),
        outgoing: Arc::clone(&a_to_b),
        timeout,
    };
    let b = PipeEnd {
        incoming: a_to_b,
        outgoing: b_to_a,
        timeout,
    };
    (StreamChannel::new(a), StreamChannel::new(b))
}
