//! The exhaustive-search adversary.
//!
//! An eavesdropper sees `m`, the responder's block-index list, the match
//! list, and the ciphertext — but not the partition. Recovering the key
//! means enumerating every `k`-block partition of `[n]` for growing `n`,
//! deriving the candidate key each one implies from the intercepted lists,
//! and testing candidates against a known-plaintext crib. The per-`n` level
//! size is the Stirling number `S(n,k)`, which is what makes the search
//! infeasible at real parameter sizes; [`attack_report`] quantifies that.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use num_traits::ToPrimitive;
use thiserror::Error;

use crate::channel::{decode_all, Frame, FrameError};
use crate::keyder::{derive_key, BlockIndexList, KeyError, MatchList};
use crate::partition::{enumerate_unguarded, stirling2, PartitionError, SetPartition};
use crate::protocol::Transcript;
use crate::vernam::{xor_cipher, BitString};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("attack budget must be positive: {0}")]
    InvalidBudget(&'static str),
    #[error("transcript is missing a {0} frame")]
    IncompleteTranscript(&'static str),
    #[error("transcript session aborted with code {0}")]
    AbortedSession(u16),
    #[error("crib of {crib} bits exceeds the {ciphertext}-bit ciphertext")]
    CribTooLong { crib: usize, ciphertext: usize },
    #[error(transparent)]
    Decode(#[from] FrameError),
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
}

/// Caps on the search: largest ground set, candidate count, and wall clock.
#[derive(Clone, Debug)]
pub struct AttackBudget {
    pub n_max: u16,
    pub max_candidates: u64,
    pub time_limit: Duration,
}

impl AttackBudget {
    pub fn new(n_max: u16, max_candidates: u64, time_limit: Duration) -> Result<Self, AttackError> {
        if n_max == 0 {
            return Err(AttackError::InvalidBudget("n_max"));
        }
        if max_candidates == 0 {
            return Err(AttackError::InvalidBudget("max_candidates"));
        }
        if time_limit.is_zero() {
            return Err(AttackError::InvalidBudget("time_limit"));
        }
        Ok(AttackBudget {
            n_max,
            max_candidates,
            time_limit,
        })
    }
}

/// The wire data an eavesdropper extracts from a recorded session.
///
/// Retried attempts are unwound the same way the honest parties do: a
/// `RETRY` frame resets the expected list, and the last complete set wins.
#[derive(Clone, Debug)]
pub struct InterceptedSession {
    pub m: u64,
    pub responder_list: BlockIndexList,
    pub match_list: MatchList,
    pub ciphertext: BitString,
}

impl InterceptedSession {
    pub fn from_frames(frames: &[Frame]) -> Result<Self, AttackError> {
        let mut m = None;
        let mut responder_list = None;
        let mut match_list = None;
        let mut ciphertext = None;
        for frame in frames {
            match frame {
                Frame::ParamM(v) => {
                    m = Some(*v);
                    responder_list = None;
                }
                Frame::Retry(v) => {
                    m = Some(*v);
                    responder_list = None;
                }
                Frame::TbList(list) => responder_list = Some(list.clone()),
                Frame::TList(t) => match_list = Some(t.clone()),
                Frame::Ciphertext(ct) => ciphertext = Some(ct.clone()),
                Frame::Abort(code) => return Err(AttackError::AbortedSession(*code)),
            }
        }
        Ok(InterceptedSession {
            m: m.ok_or(AttackError::IncompleteTranscript("PARAM_M"))?,
            responder_list: responder_list.ok_or(AttackError::IncompleteTranscript("TB_LIST"))?,
            match_list: match_list.ok_or(AttackError::IncompleteTranscript("T_LIST"))?,
            ciphertext: ciphertext.ok_or(AttackError::IncompleteTranscript("CIPHERTEXT"))?,
        })
    }

    pub fn from_transcript(transcript: &Transcript) -> Result<Self, AttackError> {
        let frames: Vec<Frame> = transcript.frames().cloned().collect();
        Self::from_frames(&frames)
    }

    /// Parses a transcript file: concatenated wire frames.
    pub fn from_wire_bytes(bytes: &[u8]) -> Result<Self, AttackError> {
        Self::from_frames(&decode_all(bytes)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    /// Every level up to `n_max` was enumerated.
    Exhausted,
    /// A candidate decrypted the ciphertext prefix to the crib.
    Hit,
    CandidateLimit,
    TimeLimit,
}

/// Search progress at one ground-set size.
#[derive(Clone, Debug)]
pub struct LevelCount {
    pub n: u16,
    pub examined: u64,
    pub stirling: BigUint,
}

/// A candidate that matched the crib.
#[derive(Clone, Debug)]
pub struct AttackHit {
    pub n: u16,
    pub partition: SetPartition,
    pub key_prefix: BitString,
}

#[derive(Debug)]
pub struct AttackResult {
    pub k: u16,
    pub partitions_examined: u64,
    /// Distinct ciphertext-length key prefixes, in discovery order.
    pub candidate_keys: Vec<BitString>,
    pub levels: Vec<LevelCount>,
    pub elapsed: Duration,
    pub hit: Option<AttackHit>,
    pub stopped: StopReason,
}

impl AttackResult {
    pub fn throughput(&self) -> Option<f64> {
        let secs = self.elapsed.as_secs_f64();
        (secs > 0.0 && self.partitions_examined > 0).then(|| self.partitions_examined as f64 / secs)
    }
}

/// Sweeps every `k`-block partition of `[n]` for `n = k, k+1, …, n_max`,
/// deriving the key each candidate implies from the intercepted lists.
///
/// For the true partition the derived candidate equals the session key
/// exactly, since the responder's list and the match list are public. A crib
/// (known-plaintext prefix) marks the first candidate whose key decrypts the
/// matching ciphertext prefix, and stops the search.
pub fn enumerate_keys(
    session: &InterceptedSession,
    k: u16,
    budget: &AttackBudget,
    crib: Option<&BitString>,
) -> Result<AttackResult, AttackError> {
    if let Some(crib) = crib {
        if crib.len() > session.ciphertext.len() {
            return Err(AttackError::CribTooLong {
                crib: crib.len(),
                ciphertext: session.ciphertext.len(),
            });
        }
    }
    let started = Instant::now();
    let ct_len = session.ciphertext.len();
    let mut seen = std::collections::HashSet::new();
    let mut result = AttackResult {
        k,
        partitions_examined: 0,
        candidate_keys: Vec::new(),
        levels: Vec::new(),
        elapsed: Duration::ZERO,
        hit: None,
        stopped: StopReason::Exhausted,
    };

    for n in k..=budget.n_max {
        let mut level = LevelCount {
            n,
            examined: 0,
            stirling: stirling2(n as u32, k as u32),
        };
        let mut stop = None;
        for candidate in enumerate_unguarded(n, k)? {
            if result.partitions_examined >= budget.max_candidates {
                stop = Some(StopReason::CandidateLimit);
                break;
            }
            if started.elapsed() >= budget.time_limit {
                stop = Some(StopReason::TimeLimit);
                break;
            }
            result.partitions_examined += 1;
            level.examined += 1;

            let key = derive_key(&candidate, &session.responder_list, &session.match_list)?;
            let prefix = key.bits().prefix(ct_len);
            if seen.insert(prefix.clone()) {
                result.candidate_keys.push(prefix.clone());
            }
            if let Some(crib) = crib {
                let decrypted = xor_cipher(&session.ciphertext.prefix(crib.len()), key.bits())
                    .expect("key at least as long as ciphertext prefix");
                if &decrypted == crib {
                    result.hit = Some(AttackHit {
                        n,
                        partition: candidate,
                        key_prefix: prefix,
                    });
                    stop = Some(StopReason::Hit);
                    break;
                }
            }
        }
        result.levels.push(level);
        if let Some(reason) = stop {
            result.stopped = reason;
            break;
        }
    }
    result.elapsed = started.elapsed();
    Ok(result)
}

fn human_duration(seconds: f64) -> String {
    const YEAR: f64 = 365.25 * 86400.0;
    if !seconds.is_finite() {
        "beyond measure".to_string()
    } else if seconds >= 100.0 * YEAR {
        format!("{:.2e} years", seconds / YEAR)
    } else if seconds >= YEAR {
        format!("{:.1} years", seconds / YEAR)
    } else if seconds >= 86400.0 {
        format!("{:.1} days", seconds / 86400.0)
    } else if seconds >= 3600.0 {
        format!("{:.1} hours", seconds / 3600.0)
    } else if seconds >= 60.0 {
        format!("{:.1} minutes", seconds / 60.0)
    } else if seconds >= 1.0 {
        format!("{seconds:.1} s")
    } else {
        format!("{:.1} ms", seconds * 1e3)
    }
}

/// Renders the search outcome plus a recurrence-based projection of the
/// work required for ground sets up to `n = 20` at the measured throughput.
pub fn attack_report(result: &AttackResult) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "exhaustive key search: k={}, {} partitions examined, {} distinct candidate keys",
        result.k,
        result.partitions_examined,
        result.candidate_keys.len()
    );
    let stopped = match result.stopped {
        StopReason::Exhausted => "all levels exhausted".to_string(),
        StopReason::Hit => {
            let hit = result.hit.as_ref().expect("hit recorded");
            format!("crib hit at n={}", hit.n)
        }
        StopReason::CandidateLimit => "candidate budget reached".to_string(),
        StopReason::TimeLimit => "time budget reached".to_string(),
    };
    let _ = writeln!(
        out,
        "stopped: {stopped}; elapsed {:.3} s",
        result.elapsed.as_secs_f64()
    );

    let _ = writeln!(
        out,
        "{:>4}  {:>16}  {:>12}  {:>16}",
        "n", "S(n,k)", "examined", "cumulative"
    );
    let mut cumulative = 0u64;
    for level in &result.levels {
        cumulative += level.examined;
        let _ = writeln!(
            out,
            "{:>4}  {:>16}  {:>12}  {:>16}",
            level.n, level.stirling, level.examined, cumulative
        );
    }

    if let Some(hit) = &result.hit {
        let _ = writeln!(
            out,
            "hit: n={}, key prefix {}, partition:\n{}",
            hit.n,
            hit.key_prefix,
            hit.partition.to_text().trim_end()
        );
    }

    let horizon = result
        .levels
        .last()
        .map(|l| l.n)
        .unwrap_or(result.k)
        .max(20);
    let throughput = result.throughput();
    match throughput {
        Some(rate) => {
            let _ = writeln!(
                out,
                "projection at the measured {rate:.0} candidates/s, by the recurrence:"
            );
        }
        None => {
            let _ = writeln!(
                out,
                "projection by the recurrence (no throughput measured):"
            );
        }
    }
    let _ = writeln!(
        out,
        "{:>4}  {:>24}  {:>24}  est. time",
        "n", "S(n,k)", "cumulative"
    );
    let mut total = BigUint::ZERO;
    for n in result.k..=horizon {
        let count = stirling2(n as u32, result.k as u32);
        total += &count;
        let estimate = match throughput {
            Some(rate) => human_duration(total.to_f64().unwrap_or(f64::INFINITY) / rate),
            None => "-".to_string(),
        };
        let _ = writeln!(out, "{:>4}  {:>24}  {:>24}  {}", n, count, total, estimate);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{run_session, SequenceSource, SessionConfig};
    use num_traits::One;

    fn toy_session(seed: u64) -> (InterceptedSession, BitString, SetPartition) {
        // a true partition on [4] into 2 blocks, embedded in a short session
        let partition = SetPartition::random(4, 2, seed).unwrap();
        let message = b"hi";
        let cfg_a = SessionConfig::new(partition.clone(), 4, SequenceSource::Seeded(seed + 1));
        let cfg_b = SessionConfig::new(partition.clone(), 4, SequenceSource::Seeded(seed + 2));
        let (plaintext, transcript) = run_session(cfg_a, cfg_b, message).unwrap();
        assert_eq!(plaintext, message);
        let session = InterceptedSession::from_transcript(&transcript).unwrap();
        (session, BitString::from_bytes(message), partition)
    }

    fn budget(n_max: u16) -> AttackBudget {
        AttackBudget::new(n_max, 1_000_000, Duration::from_secs(30)).unwrap()
    }

    #[test]
    fn budget_validation() {
        assert!(AttackBudget::new(0, 1, Duration::from_secs(1)).is_err());
        assert!(AttackBudget::new(1, 0, Duration::from_secs(1)).is_err());
        assert!(AttackBudget::new(1, 1, Duration::ZERO).is_err());
    }

    #[test]
    fn toy_search_contains_true_key_and_crib_hits() {
        let (session, crib, partition) = toy_session(7);
        let true_key = derive_key(&partition, &session.responder_list, &session.match_list)
            .unwrap()
            .bits()
            .prefix(session.ciphertext.len());

        let result = enumerate_keys(&session, 2, &budget(4), Some(&crib)).unwrap();
        // levels n = 2, 3, 4 hold at most S(2,2) + S(3,2) + S(4,2) = 11 partitions
        assert!(result.partitions_examined <= 11);
        assert_eq!(result.stopped, StopReason::Hit);
        let hit = result.hit.as_ref().unwrap();
        assert_eq!(hit.key_prefix, true_key);
        assert!(result.candidate_keys.contains(&true_key));
    }

    #[test]
    fn search_without_crib_covers_all_levels() {
        let (session, _, _) = toy_session(21);
        let result = enumerate_keys(&session, 2, &budget(4), None).unwrap();
        assert_eq!(result.stopped, StopReason::Exhausted);
        assert_eq!(result.partitions_examined, 11);
        let examined: Vec<u64> = result.levels.iter().map(|l| l.examined).collect();
        assert_eq!(examined, vec![1, 3, 7]);
        for level in &result.levels {
            assert_eq!(BigUint::from(level.examined), level.stirling);
        }
        assert!(result.candidate_keys.len() as u64 <= result.partitions_examined);
    }

    #[test]
    fn single_level_at_n_equals_k() {
        let (session, _, _) = toy_session(33);
        let result = enumerate_keys(&session, 2, &budget(2), None).unwrap();
        assert_eq!(result.partitions_examined, 1); // S(k,k) = 1
        assert_eq!(result.levels.len(), 1);
        assert_eq!(result.levels[0].stirling, BigUint::one());
    }

    #[test]
    fn candidate_limit_stops_search() {
        let (session, _, _) = toy_session(5);
        let tight = AttackBudget::new(6, 5, Duration::from_secs(30)).unwrap();
        let result = enumerate_keys(&session, 2, &tight, None).unwrap();
        assert_eq!(result.stopped, StopReason::CandidateLimit);
        assert_eq!(result.partitions_examined, 5);
    }

    #[test]
    fn level_counts_match_stirling_for_larger_sweeps() {
        let (session, _, _) = toy_session(12);
        let result = enumerate_keys(&session, 2, &budget(10), None).unwrap();
        for level in &result.levels {
            assert_eq!(
                BigUint::from(level.examined),
                level.stirling,
                "level n={}",
                level.n
            );
        }
    }

    #[test]
    fn crib_too_long_rejected() {
        let (session, _, _) = toy_session(9);
        let long: BitString = (0..session.ciphertext.len() + 8).map(|_| true).collect();
        assert!(matches!(
            enumerate_keys(&session, 2, &budget(4), Some(&long)),
            Err(AttackError::CribTooLong { .. })
        ));
    }

    #[test]
    fn transcript_parsing_requires_all_frames() {
        let frames = vec![Frame::ParamM(8)];
        assert!(matches!(
            InterceptedSession::from_frames(&frames),
            Err(AttackError::IncompleteTranscript("TB_LIST"))
        ));
        let aborted = vec![Frame::ParamM(8), Frame::Abort(3)];
        assert!(matches!(
            InterceptedSession::from_frames(&aborted),
            Err(AttackError::AbortedSession(3))
        ));
    }

    #[test]
    fn wire_bytes_round_trip_into_session() {
        let (_, transcript) = {
            let p = SetPartition::random(6, 3, 2).unwrap();
            let cfg_a = SessionConfig::new(p.clone(), 4, SequenceSource::Seeded(50));
            let cfg_b = SessionConfig::new(p, 4, SequenceSource::Seeded(51));
            run_session(cfg_a, cfg_b, b"ok").unwrap()
        };
        let bytes = transcript.to_wire_bytes().unwrap();
        let session = InterceptedSession::from_wire_bytes(&bytes).unwrap();
        assert_eq!(session.m, 64);
        assert_eq!(session.responder_list.len(), 64);
        assert_eq!(session.ciphertext.len(), 16);
    }

    #[test]
    fn report_covers_projection_to_twenty() {
        let (session, crib, _) = toy_session(64);
        let result = enumerate_keys(&session, 2, &budget(4), Some(&crib)).unwrap();
        let report = attack_report(&result);
        assert!(report.contains("exhaustive key search: k=2"));
        assert!(
            report.contains(" 20 "),
            "projection reaches n=20:\n{report}"
        );

        // the matching candidate is called out with the level it surfaced at
        let hit_n = result.hit.as_ref().unwrap().n;
        assert!(
            report.contains(&format!("crib hit at n={hit_n}")),
            "{report}"
        );
        assert!(report.contains("hit: n="), "{report}");

        // the n=20, k=2 level holds S(20,2) = 2^19 - 1 partitions
        assert!(report.contains("524287"), "{report}");
    }

    #[test]
    fn empty_result_report_renders() {
        let empty = AttackResult {
            k: 13,
            partitions_examined: 0,
            candidate_keys: Vec::new(),
            levels: Vec::new(),
            elapsed: Duration::ZERO,
            hit: None,
            stopped: StopReason::Exhausted,
        };
        let report = attack_report(&empty);
        assert!(report.contains("0 partitions examined"));
        assert!(report.contains("no throughput measured"));
    }
}
