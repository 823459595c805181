//! Key derivation from matched block indices.
//!
//! Each party classifies its random draws into block indices, the lists are
//! compared position by position into a plus/minus match list, and every
//! matching position contributes one aggregated block value to the key. The
//! aggregation function is picked from the low two bits of the first matching
//! block index, so both parties select the same function without exchanging it.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::partition::SetPartition;
use crate::vernam::BitString;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeyError {
    #[error("sequence entry {value} out of range 1..={n}")]
    EntryOutOfRange { value: u16, n: u16 },
    #[error("list length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("block index {j} out of range 1..={k}")]
    BlockIndexOutOfRange { j: u16, k: u16 },
    #[error("invalid mark character {0:?} (expected '+' or '-')")]
    InvalidMark(char),
    #[error("no matching position: every mark is minus")]
    NoMatch,
}

/// Per-position block indices of one party's random draws.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct BlockIndexList {
    indices: Vec<u16>,
}

impl BlockIndexList {
    pub fn new(indices: Vec<u16>) -> Self {
        BlockIndexList { indices }
    }

    pub fn as_slice(&self) -> &[u16] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

impl From<Vec<u16>> for BlockIndexList {
    fn from(indices: Vec<u16>) -> Self {
        BlockIndexList { indices }
    }
}

/// Outcome of comparing the two lists at one position.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Mark {
    Plus,
    Minus,
}

/// The per-position comparison record; plus marks carry key material.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct MatchList {
    marks: Vec<Mark>,
}

impl MatchList {
    pub fn new(marks: Vec<Mark>) -> Self {
        MatchList { marks }
    }

    pub fn marks(&self) -> &[Mark] {
        &self.marks
    }

    pub fn len(&self) -> usize {
        self.marks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }

    pub fn plus_count(&self) -> usize {
        self.marks.iter().filter(|m| **m == Mark::Plus).count()
    }

    pub fn first_plus(&self) -> Option<usize> {
        self.marks.iter().position(|m| *m == Mark::Plus)
    }

    pub fn plus_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.marks
            .iter()
            .enumerate()
            .filter(|(_, m)| **m == Mark::Plus)
            .map(|(i, _)| i)
    }

    /// Parses a run of `+`/`-` characters; whitespace is ignored.
    pub fn from_chars(text: &str) -> Result<Self, KeyError> {
        let mut marks = Vec::new();
        for c in text.chars() {
            match c {
                '+' => marks.push(Mark::Plus),
                '-' => marks.push(Mark::Minus),
                c if c.is_ascii_whitespace() => {}
                c => return Err(KeyError::InvalidMark(c)),
            }
        }
        Ok(MatchList { marks })
    }
}

impl fmt::Display for MatchList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in &self.marks {
            f.write_str(if *m == Mark::Plus { "+" } else { "-" })?;
        }
        Ok(())
    }
}

/// The block-aggregation function used for key values.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FKind {
    Sum,
    Product,
    Max,
}

impl fmt::Display for FKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FKind::Sum => "SUM",
            FKind::Product => "PRODUCT",
            FKind::Max => "MAX",
        })
    }
}

impl FromStr for FKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "SUM" => Ok(FKind::Sum),
            "PRODUCT" => Ok(FKind::Product),
            "MAX" => Ok(FKind::Max),
            other => Err(format!("unknown function kind {other:?}")),
        }
    }
}

/// The derived key: chosen function, one aggregated value per plus mark, and
/// the value stream rendered as bits.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct KeyMaterial {
    f_kind: FKind,
    values: Vec<u64>,
    bits: BitString,
}

impl KeyMaterial {
    pub fn f_kind(&self) -> FKind {
        self.f_kind
    }

    pub fn values(&self) -> &[u64] {
        &self.values
    }

    pub fn bits(&self) -> &BitString {
        &self.bits
    }

    /// Key length in bits (8 per value).
    pub fn bit_len(&self) -> usize {
        self.bits.len()
    }

    /// Three-line dump: function kind, decimal values, bit string.
    pub fn to_dump(&self) -> String {
        let values: Vec<String> = self.values.iter().map(|v| v.to_string()).collect();
        format!("f={}\n{}\n{}\n", self.f_kind, values.join(" "), self.bits)
    }

    pub fn from_dump(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        let f_line = lines.next().ok_or("empty key dump")?;
        let f_kind: FKind = f_line
            .strip_prefix("f=")
            .ok_or_else(|| format!("bad function line {f_line:?}"))?
            .parse()?;
        let values: Vec<u64> = lines
            .next()
            .ok_or("missing values line")?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| format!("bad value {t:?}")))
            .collect::<Result<_, _>>()?;
        let bits = BitString::from_bit_str(lines.next().ok_or("missing bits line")?)
            .map_err(|e| e.to_string())?;
        if bits.len() != 8 * values.len() {
            return Err(format!(
                "bit length {} does not match {} values",
                bits.len(),
                values.len()
            ));
        }
        Ok(KeyMaterial {
            f_kind,
            values,
            bits,
        })
    }
}

/// Maps each draw to the index of the block containing it.
pub fn classify_sequence(
    partition: &SetPartition,
    seq: &[u16],
) -> Result<BlockIndexList, KeyError> {
    let indices = seq
        .iter()
        .map(|&e| {
            partition
                .block_index_of(e)
                .map_err(|_| KeyError::EntryOutOfRange {
                    value: e,
                    n: partition.n(),
                })
        })
        .collect::<Result<Vec<u16>, _>>()?;
    Ok(BlockIndexList { indices })
}

/// Positionwise comparison: plus where the indices agree.
pub fn compare_lists(a: &BlockIndexList, b: &BlockIndexList) -> Result<MatchList, KeyError> {
    if a.len() != b.len() {
        return Err(KeyError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let marks = a
        .indices
        .iter()
        .zip(&b.indices)
        .map(|(x, y)| if x == y { Mark::Plus } else { Mark::Minus })
        .collect();
    Ok(MatchList { marks })
}

/// Chooses the aggregation function from the low two bits of the block index
/// at the first plus: `00`/`11` pick the sum, `10` the product, `01` the max.
pub fn select_f(j: u16) -> FKind {
    match j % 4 {
        0 | 3 => FKind::Sum,
        2 => FKind::Product,
        _ => FKind::Max,
    }
}

/// Applies the aggregation function to the elements of block `j`.
///
/// Products are computed in wrapping (mod 2^64) arithmetic; as 256 divides
/// 2^64, the encoded key bits are unaffected by the reduction.
pub fn eval_f(kind: FKind, partition: &SetPartition, j: u16) -> Result<u64, KeyError> {
    if j == 0 || j > partition.k() {
        return Err(KeyError::BlockIndexOutOfRange {
            j,
            k: partition.k(),
        });
    }
    let elements = partition.block(j);
    Ok(match kind {
        FKind::Sum => elements.iter().map(|&e| e as u64).sum(),
        FKind::Product => elements
            .iter()
            .fold(1u64, |acc, &e| acc.wrapping_mul(e as u64)),
        FKind::Max => elements.iter().copied().max().unwrap_or(0) as u64,
    })
}

/// Renders values as key bits: 8 bits per value, value mod 256, MSB first.
pub fn encode_values(values: &[u64]) -> BitString {
    let mut bits = BitString::with_capacity(values.len() * 8);
    for &v in values {
        bits.push_byte((v % 256) as u8);
    }
    bits
}

/// Derives the key from one party's own index list and the match list.
///
/// Both parties hold identical indices at every plus position, so either
/// side's list produces the same key. Fails with [`KeyError::NoMatch`] when
/// the match list has no plus at all, which signals a protocol retry.
pub fn derive_key(
    partition: &SetPartition,
    own: &BlockIndexList,
    t: &MatchList,
) -> Result<KeyMaterial, KeyError> {
    if own.len() != t.len() {
        return Err(KeyError::LengthMismatch {
            left: own.len(),
            right: t.len(),
        });
    }
    let first = t.first_plus().ok_or(KeyError::NoMatch)?;
    let f_kind = select_f(own.indices[first]);
    let values = t
        .plus_positions()
        .map(|i| eval_f(f_kind, partition, own.indices[i]))
        .collect::<Result<Vec<u64>, _>>()?;
    let bits = encode_values(&values);
    Ok(KeyMaterial {
        f_kind,
        values,
        bits,
    })
}
