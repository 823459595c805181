//! The nine-step key-agreement session between Alice and Bob.
//!
//! Alice derives the sequence length `m` from her message length and the
//! amplification parameter, both parties classify `m` private uniform draws
//! into block-index lists, Bob's list crosses the wire, Alice compares and
//! derives the key, and — when the key is long enough — sends the match list
//! and the encrypted message so Bob can derive the same key and decrypt.
//! A short key triggers a retry with a fresh (optionally doubled) `m`.
//!
//! The state machines here are transport-free; [`drive_alice`] and
//! [`drive_bob`] bind them to a [`FrameChannel`], and [`run_session`] runs
//! both ends over an in-memory loopback and records the transcript.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::channel::{abort_code, encode_frame, ChannelError, Frame, FrameChannel, FrameError};
use crate::keyder::{
    classify_sequence, compare_lists, derive_key, BlockIndexList, KeyError, KeyMaterial, MatchList,
};
use crate::partition::SetPartition;
use crate::vernam::{xor_cipher, BitString, VernamError};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("message must not be empty")]
    EmptyMessage,
    #[error("amplification parameter must be at least 1")]
    InvalidAmplification,
    #[error("sequence length parameter must be at least 1")]
    InvalidParam,
    #[error("operation out of order: {op} while {phase}")]
    OutOfOrder {
        op: &'static str,
        phase: &'static str,
    },
    #[error("list has {got} entries, session expects m={expected}")]
    WrongListLength { expected: u64, got: usize },
    #[error("retries exhausted after {attempts} attempts")]
    RetriesExhausted { attempts: u32 },
    #[error("fixed draw source exhausted: needed {needed}, only {available} left")]
    FixtureExhausted { needed: u64, available: usize },
    #[error("ciphertext of {ciphertext} bits exceeds the {key} derived key bits")]
    CiphertextTooLong { ciphertext: usize, key: usize },
    #[error("peer aborted with code {0}")]
    PeerAborted(u16),
    #[error("unexpected frame {got}, expected {expected}")]
    UnexpectedFrame {
        expected: &'static str,
        got: &'static str,
    },
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error(transparent)]
    Vernam(#[from] VernamError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("session thread panicked")]
    SessionPanicked,
}

/// Where a party's "random" draws come from: a seeded generator, or an
/// explicit sequence injected for replay.
#[derive(Clone, Debug)]
pub enum SequenceSource {
    Seeded(u64),
    Fixed(Vec<u16>),
}

/// Retry behavior for the sequence length.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MPolicy {
    Keep,
    Double,
}

pub const DEFAULT_MAX_RETRIES: u32 = 8;

/// Per-party session parameters. Both parties must hold the same partition.
#[derive(Clone, Debug)]
pub struct SessionConfig {
    pub partition: SetPartition,
    pub amplification: u32,
    pub source: SequenceSource,
    pub max_retries: u32,
    pub m_policy: MPolicy,
}

impl SessionConfig {
    pub fn new(partition: SetPartition, amplification: u32, source: SequenceSource) -> Self {
        SessionConfig {
            partition,
            amplification,
            source,
            max_retries: DEFAULT_MAX_RETRIES,
            m_policy: MPolicy::Double,
        }
    }
}

enum DrawStream {
    Rng(Box<ChaCha12Rng>),
    Fixed { draws: Vec<u16>, used: usize },
}

impl DrawStream {
    fn new(source: SequenceSource) -> Self {
        match source {
            SequenceSource::Seeded(seed) => {
                DrawStream::Rng(Box::new(ChaCha12Rng::seed_from_u64(seed)))
            }
            SequenceSource::Fixed(draws) => DrawStream::Fixed { draws, used: 0 },
        }
    }

    fn draw_sequence(&mut self, m: u64, n: u16) -> Result<Vec<u16>, ProtocolError> {
        match self {
            DrawStream::Rng(rng) => Ok((0..m).map(|_| rng.random_range(1..=n)).collect()),
            DrawStream::Fixed { draws, used } => {
                let available = draws.len() - *used;
                if (available as u64) < m {
                    return Err(ProtocolError::FixtureExhausted {
                        needed: m,
                        available,
                    });
                }
                let seq = draws[*used..*used + m as usize].to_vec();
                *used += m as usize;
                Ok(seq)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Alice

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum AlicePhase {
    AwaitingTbList,
    Done,
    Failed,
}

impl AlicePhase {
    fn name(self) -> &'static str {
        match self {
            AlicePhase::AwaitingTbList => "awaiting TB_LIST",
            AlicePhase::Done => "done",
            AlicePhase::Failed => "failed",
        }
    }
}

/// Alice's next move after seeing Bob's list.
#[derive(Debug)]
pub enum Decision {
    /// The key is long enough: publish the match list and the ciphertext.
    Proceed {
        match_list: MatchList,
        ciphertext: BitString,
    },
    /// The key fell short: rerun with a fresh sequence of `new_m` draws.
    Retry { new_m: u64 },
}

pub struct AliceState {
    partition: SetPartition,
    message_bits: BitString,
    m: u64,
    own_list: BlockIndexList,
    draws: DrawStream,
    retries_left: u32,
    attempts: u32,
    m_policy: MPolicy,
    phase: AlicePhase,
    key: Option<KeyMaterial>,
}

/// Steps 1–4: fix `m = L_M × S`, draw the private sequence, classify it, and
/// hand back the `m` to send.
pub fn alice_start(
    cfg: SessionConfig,
    message_bits: &BitString,
) -> Result<(AliceState, u64), ProtocolError> {
    if message_bits.is_empty() {
        return Err(ProtocolError::EmptyMessage);
    }
    if cfg.amplification == 0 {
        return Err(ProtocolError::InvalidAmplification);
    }
    let m = message_bits.len() as u64 * cfg.amplification as u64;
    let mut draws = DrawStream::new(cfg.source);
    let seq = draws.draw_sequence(m, cfg.partition.n())?;
    let own_list = classify_sequence(&cfg.partition, &seq)?;
    Ok((
        AliceState {
            partition: cfg.partition,
            message_bits: message_bits.clone(),
            m,
            own_list,
            draws,
            retries_left: cfg.max_retries,
            attempts: 1,
            m_policy: cfg.m_policy,
            phase: AlicePhase::AwaitingTbList,
            key: None,
        },
        m,
    ))
}

impl AliceState {
    pub fn m(&self) -> u64 {
        self.m
    }

    pub fn phase(&self) -> AlicePhase {
        self.phase
    }

    pub fn attempts(&self) -> u32 {
        self.attempts
    }

    /// The derived key, once the session reached `Done`.
    pub fn key_material(&self) -> Option<&KeyMaterial> {
        self.key.as_ref()
    }

    /// Steps 7–9: compare the lists, derive the key, and either encrypt or
    /// ask for a retry. On retry the state already holds the fresh sequence
    /// for the new `m`.
    pub fn on_tb_list(&mut self, tb: &BlockIndexList) -> Result<Decision, ProtocolError> {
        if self.phase != AlicePhase::AwaitingTbList {
            return Err(ProtocolError::OutOfOrder {
                op: "on_tb_list",
                phase: self.phase.name(),
            });
        }
        if tb.len() as u64 != self.m {
            return Err(ProtocolError::WrongListLength {
                expected: self.m,
                got: tb.len(),
            });
        }
        let match_list = compare_lists(&self.own_list, tb)?;
        let key_bits = 8 * match_list.plus_count();
        if key_bits >= self.message_bits.len() {
            let key = derive_key(&self.partition, &self.own_list, &match_list)?;
            let ciphertext = xor_cipher(&self.message_bits, key.bits())?;
            self.key = Some(key);
            self.phase = AlicePhase::Done;
            return Ok(Decision::Proceed {
                match_list,
                ciphertext,
            });
        }
        if self.retries_left == 0 {
            self.phase = AlicePhase::Failed;
            return Err(ProtocolError::RetriesExhausted {
                attempts: self.attempts,
            });
        }
        self.retries_left -= 1;
        self.attempts += 1;
        let new_m = match self.m_policy {
            MPolicy::Keep => self.m,
            MPolicy::Double => self.m * 2,
        };
        let seq = self.draws.draw_sequence(new_m, self.partition.n())?;
        self.own_list = classify_sequence(&self.partition, &seq)?;
        self.m = new_m;
        Ok(Decision::Retry { new_m })
    }
}

// ---------------------------------------------------------------------------
// Bob

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BobPhase {
    AwaitingMatchList,
    Done,
    Failed,
}

impl BobPhase {
    fn name(self) -> &'static str {
        match self {
            BobPhase::AwaitingMatchList => "awaiting T_LIST",
            BobPhase::Done => "done",
            BobPhase::Failed => "failed",
        }
    }
}

pub struct BobState {
    partition: SetPartition,
    m: u64,
    own_list: BlockIndexList,
    draws: DrawStream,
    phase: BobPhase,
    key: Option<KeyMaterial>,
}

/// Steps 5–6: draw Bob's private sequence of length `m`, classify it, and
/// hand back the list to send.
pub fn bob_on_param(
    cfg: SessionConfig,
    m: u64,
) -> Result<(BobState, BlockIndexList), ProtocolError> {
    if m == 0 {
        return Err(ProtocolError::InvalidParam);
    }
    let mut draws = DrawStream::new(cfg.source);
    let seq = draws.draw_sequence(m, cfg.partition.n())?;
    let own_list = classify_sequence(&cfg.partition, &seq)?;
    Ok((
        BobState {
            partition: cfg.partition,
            m,
            own_list: own_list.clone(),
            draws,
            phase: BobPhase::AwaitingMatchList,
            key: None,
        },
        own_list,
    ))
}

impl BobState {
    pub fn m(&self) -> u64 {
        self.m
    }

    pub fn phase(&self) -> BobPhase {
        self.phase
    }

    pub fn key_material(&self) -> Option<&KeyMaterial> {
        self.key.as_ref()
    }

    /// Redraws for a new `m` after Alice's retry.
    pub fn on_retry(&mut self, new_m: u64) -> Result<BlockIndexList, ProtocolError> {
        if self.phase != BobPhase::AwaitingMatchList {
            return Err(ProtocolError::OutOfOrder {
                op: "on_retry",
                phase: self.phase.name(),
            });
        }
        if new_m == 0 {
            return Err(ProtocolError::InvalidParam);
        }
        let seq = self.draws.draw_sequence(new_m, self.partition.n())?;
        self.own_list = classify_sequence(&self.partition, &seq)?;
        self.m = new_m;
        Ok(self.own_list.clone())
    }

    /// Step 9: derive the same key from the published match list and decrypt.
    pub fn on_match_list(
        &mut self,
        t: &MatchList,
        ciphertext: &BitString,
    ) -> Result<BitString, ProtocolError> {
        if self.phase != BobPhase::AwaitingMatchList {
            return Err(ProtocolError::OutOfOrder {
                op: "on_match_list",
                phase: self.phase.name(),
            });
        }
        if t.len() as u64 != self.m {
            return Err(ProtocolError::WrongListLength {
                expected: self.m,
                got: t.len(),
            });
        }
        let key = match derive_key(&self.partition, &self.own_list, t) {
            Ok(key) => key,
            Err(e) => {
                self.phase = BobPhase::Failed;
                return Err(e.into());
            }
        };
        if ciphertext.len() > key.bit_len() {
            self.phase = BobPhase::Failed;
            return Err(ProtocolError::CiphertextTooLong {
                ciphertext: ciphertext.len(),
                key: key.bit_len(),
            });
        }
        let plaintext = xor_cipher(ciphertext, key.bits())?;
        self.key = Some(key);
        self.phase = BobPhase::Done;
        Ok(plaintext)
    }
}

// ---------------------------------------------------------------------------
// Transcript

/// Who emitted a frame.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Direction {
    AliceToBob,
    BobToAlice,
}

impl Direction {
    pub fn opposite(self) -> Direction {
        match self {
            Direction::AliceToBob => Direction::BobToAlice,
            Direction::BobToAlice => Direction::AliceToBob,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TranscriptEntry {
    pub direction: Direction,
    pub frame: Frame,
}

/// Everything visible on the channel, in wire order. Holds only what crossed
/// the wire: never the partition, the raw draws, or the key.
#[derive(Clone, Debug, Default)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn frames(&self) -> impl Iterator<Item = &Frame> {
        self.entries.iter().map(|e| &e.frame)
    }

    /// The concatenated wire encoding of every frame, in order. This is the
    /// transcript file format consumed by the attack harness.
    pub fn to_wire_bytes(&self) -> Result<Vec<u8>, FrameError> {
        let mut out = Vec::new();
        for entry in &self.entries {
            out.extend(encode_frame(&entry.frame)?);
        }
        Ok(out)
    }
}

/// Shared frame log. One recording endpoint sees every frame of a session
/// (each is either sent or received there), and the strict alternation of
/// the protocol makes the observed order the wire order.
#[derive(Clone, Default)]
pub struct TranscriptRecorder {
    log: Arc<Mutex<Vec<(u64, TranscriptEntry)>>>,
    counter: Arc<AtomicU64>,
}

impl TranscriptRecorder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn wrap<C: FrameChannel>(&self, inner: C, sends_as: Direction) -> RecordingChannel<C> {
        RecordingChannel {
            inner,
            recorder: self.clone(),
            direction: sends_as,
        }
    }

    fn record(&self, direction: Direction, frame: Frame) {
        let seq = self.counter.fetch_add(1, Ordering::SeqCst);
        self.log
            .lock()
            .unwrap()
            .push((seq, TranscriptEntry { direction, frame }));
    }

    pub fn into_transcript(self) -> Transcript {
        let mut entries = std::mem::take(&mut *self.log.lock().unwrap());
        entries.sort_by_key(|(seq, _)| *seq);
        Transcript {
            entries: entries.into_iter().map(|(_, e)| e).collect(),
        }
    }
}

/// A [`FrameChannel`] that logs every frame crossing it, in either direction.
pub struct RecordingChannel<C> {
    inner: C,
    recorder: TranscriptRecorder,
    direction: Direction,
}

impl<C: FrameChannel> FrameChannel for RecordingChannel<C> {
    fn send(&mut self, frame: &Frame) -> Result<(), ChannelError> {
        self.inner.send(frame)?;
        self.recorder.record(self.direction, frame.clone());
        Ok(())
    }

    fn recv(&mut self) -> Result<Frame, ChannelError> {
        let frame = self.inner.recv()?;
        self.recorder
            .record(self.direction.opposite(), frame.clone());
        Ok(frame)
    }
}

// ---------------------------------------------------------------------------
// Drive loops

#[derive(Debug)]
pub struct AliceOutcome {
    pub key: KeyMaterial,
    pub match_list: MatchList,
    pub ciphertext: BitString,
    pub m: u64,
    pub attempts: u32,
}

#[derive(Debug)]
pub struct BobOutcome {
    pub plaintext: BitString,
    pub key: KeyMaterial,
}

fn abort(ch: &mut dyn FrameChannel, code: u16) {
    // best effort; the session is already failing
    let _ = ch.send(&Frame::Abort(code));
}

/// Runs Alice's side of a session over a channel.
pub fn drive_alice(
    cfg: SessionConfig,
    message_bits: &BitString,
    ch: &mut dyn FrameChannel,
) -> Result<AliceOutcome, ProtocolError> {
    let (mut state, m) = alice_start(cfg, message_bits)?;
    ch.send(&Frame::ParamM(m))?;
    loop {
        match ch.recv()? {
            Frame::TbList(tb) => match state.on_tb_list(&tb) {
                Ok(Decision::Proceed {
                    match_list,
                    ciphertext,
                }) => {
                    ch.send(&Frame::TList(match_list.clone()))?;
                    ch.send(&Frame::Ciphertext(ciphertext.clone()))?;
                    let key = state
                        .key_material()
                        .expect("key present after Proceed")
                        .clone();
                    return Ok(AliceOutcome {
                        key,
                        match_list,
                        ciphertext,
                        m: state.m(),
                        attempts: state.attempts(),
                    });
                }
                Ok(Decision::Retry { new_m }) => {
                    ch.send(&Frame::Retry(new_m))?;
                }
                Err(e) => {
                    let code = match &e {
                        ProtocolError::RetriesExhausted { .. } => abort_code::RETRIES_EXHAUSTED,
                        _ => abort_code::INTERNAL,
                    };
                    abort(ch, code);
                    return Err(e);
                }
            },
            Frame::Abort(code) => return Err(ProtocolError::PeerAborted(code)),
            other => {
                abort(ch, abort_code::UNEXPECTED_FRAME);
                return Err(ProtocolError::UnexpectedFrame {
                    expected: "TB_LIST",
                    got: other.type_name(),
                });
            }
        }
    }
}

/// Runs Bob's side of one session over a channel.
pub fn drive_bob(
    cfg: SessionConfig,
    ch: &mut dyn FrameChannel,
) -> Result<BobOutcome, ProtocolError> {
    let mut state = match ch.recv()? {
        Frame::ParamM(m) => {
            let (state, tb) = bob_on_param(cfg, m)?;
            ch.send(&Frame::TbList(tb))?;
            state
        }
        Frame::Abort(code) => return Err(ProtocolError::PeerAborted(code)),
        other => {
            abort(ch, abort_code::UNEXPECTED_FRAME);
            return Err(ProtocolError::UnexpectedFrame {
                expected: "PARAM_M",
                got: other.type_name(),
            });
        }
    };
    loop {
        match ch.recv()? {
            Frame::Retry(new_m) => {
                let tb = state.on_retry(new_m)?;
                ch.send(&Frame::TbList(tb))?;
            }
            Frame::TList(t) => {
                let ciphertext = match ch.recv()? {
                    Frame::Ciphertext(ct) => ct,
                    Frame::Abort(code) => return Err(ProtocolError::PeerAborted(code)),
                    other => {
                        abort(ch, abort_code::UNEXPECTED_FRAME);
                        return Err(ProtocolError::UnexpectedFrame {
                            expected: "CIPHERTEXT",
                            got: other.type_name(),
                        });
                    }
                };
                let plaintext = match state.on_match_list(&t, &ciphertext) {
                    Ok(p) => p,
                    Err(e) => {
                        let code = match &e {
                            ProtocolError::Key(KeyError::NoMatch) => abort_code::NO_MATCH,
                            _ => abort_code::INTERNAL,
                        };
                        abort(ch, code);
                        return Err(e);
                    }
                };
                let key = state
                    .key_material()
                    .expect("key present after decrypt")
                    .clone();
                return Ok(BobOutcome { plaintext, key });
            }
            Frame::Abort(code) => return Err(ProtocolError::PeerAborted(code)),
            other => {
                abort(ch, abort_code::UNEXPECTED_FRAME);
                return Err(ProtocolError::UnexpectedFrame {
                    expected: "RETRY or T_LIST",
                    got: other.type_name(),
                });
            }
        }
    }
}

/// Runs a complete two-party session over an in-memory loopback, returning
/// Bob's recovered plaintext and the recorded transcript.
///
/// The message is treated as raw bytes; both parties must be configured with
/// the same partition for the recovered bytes to equal the input.
pub fn run_session(
    cfg_alice: SessionConfig,
    cfg_bob: SessionConfig,
    message: &[u8],
) -> Result<(Vec<u8>, Transcript), ProtocolError> {
    let (alice_end, mut bob_ch) = crate::channel::loopback_pair();
    let recorder = TranscriptRecorder::new();
    let mut alice_ch = recorder.wrap(alice_end, Direction::AliceToBob);
    let message_bits = BitString::from_bytes(message);

    let (alice_result, bob_result) = std::thread::scope(|scope| {
        let alice = scope.spawn(move || drive_alice(cfg_alice, &message_bits, &mut alice_ch));
        let bob = scope.spawn(move || drive_bob(cfg_bob, &mut bob_ch));
        (
            alice.join().map_err(|_| ProtocolError::SessionPanicked),
            bob.join().map_err(|_| ProtocolError::SessionPanicked),
        )
    });
    let _alice_outcome = alice_result??;
    let bob_outcome = bob_result??;
    let plaintext = bob_outcome.plaintext.to_bytes()?;
    Ok((plaintext, recorder.into_transcript()))
}
