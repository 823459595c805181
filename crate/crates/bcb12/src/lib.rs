//! Key agreement from a shared set partition, over a classical channel.
//!
//! Two parties holding the same ordered partition of `{1,…,n}` into `k`
//! blocks can grow a shared secret key by exchanging only block indices and
//! a plus/minus comparison record: positions where both parties' private
//! uniform draws landed in the same block contribute one aggregated block
//! value each to the key. The key then drives a one-time-pad exchange.
//!
//! Module map:
//!
//! - [`partition`] — set-partition representation, generation, enumeration
//!   in restricted-growth-string order, and Stirling counts
//! - [`keyder`] — classification, list comparison, and key derivation
//! - [`vernam`] — bit strings and the XOR cipher
//! - [`channel`] — the framed wire protocol, TCP and loopback transports
//! - [`protocol`] — Alice/Bob state machines, drive loops and transcripts
//! - [`randstat`] — monobit/runs tests and byte entropy for derived keys
//! - [`eve`] — the exhaustive-search adversary and feasibility reporting
//! - [`golden`] — reference vectors pinning one complete session

pub mod channel;
pub mod eve;
pub mod golden;
pub mod keyder;
pub mod partition;
pub mod protocol;
pub mod randstat;
pub mod vernam;

pub use channel::{Frame, FrameChannel};
pub use keyder::{BlockIndexList, FKind, KeyMaterial, MatchList};
pub use partition::{stirling2, SetPartition};
pub use protocol::{run_session, SequenceSource, SessionConfig, Transcript};
pub use vernam::{xor_cipher, BitString};
