//! Ordered set partitions of `[n] = {1,…,n}` into `k` labelled blocks.
//!
//! The shared secret of the key-agreement protocol is such a partition. Block
//! labels are 1-based and significant: the aggregation function applied during
//! key derivation is chosen from the numeric value of a block index, so two
//! partitions with the same blocks in a different order behave differently.
//!
//! Besides the representation itself this module provides seeded random
//! generation, canonical enumeration in restricted-growth-string order,
//! Stirling numbers of the second kind (the per-`n` search-space size an
//! exhaustive attacker faces), the analytic per-position match probability,
//! and the text serialization used by the CLI.

use num_bigint::BigUint;
use num_rational::Ratio;
use num_traits::{One, Zero};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

/// Enumeration refuses to start when more results than this would be yielded.
pub const ENUMERATION_LIMIT: u64 = 10_000_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PartitionError {
    #[error("invalid parameters: n={n}, k={k} (need 1 <= k <= n)")]
    InvalidParams { n: u16, k: u16 },
    #[error("block assignment has length {got}, expected n={expected}")]
    WrongLength { expected: u16, got: usize },
    #[error("block index {index} out of range 1..={k}")]
    BlockIndexOutOfRange { index: u16, k: u16 },
    #[error("element {element} out of range 1..={n}")]
    ElementOutOfRange { element: u16, n: u16 },
    #[error("block {0} is empty")]
    EmptyBlock(u16),
    #[error("element {0} appears in more than one block")]
    DuplicateElement(u16),
    #[error("element {0} is missing from every block")]
    MissingElement(u16),
    #[error("malformed partition text: {0}")]
    Malformed(String),
    #[error("enumeration of {count} partitions exceeds the limit of {limit}")]
    TooManyPartitions { count: BigUint, limit: u64 },
}

/// An ordered partition of `{1,…,n}` into `k` nonempty blocks.
///
/// Stored as the block index (1-based) of each element. Immutable after
/// construction, so values can be shared freely across threads.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SetPartition {
    n: u16,
    k: u16,
    block_of: Vec<u16>,
}

impl SetPartition {
    /// Validates and builds a partition from per-element block indices.
    ///
    /// `block_of[i]` is the block containing element `i + 1`. Every index must
    /// lie in `1..=k` and every block must be nonempty.
    pub fn new(n: u16, k: u16, block_of: Vec<u16>) -> Result<Self, PartitionError> {
        if n == 0 || k == 0 || k > n {
            return Err(PartitionError::InvalidParams { n, k });
        }
        if block_of.len() != n as usize {
            return Err(PartitionError::WrongLength {
                expected: n,
                got: block_of.len(),
            });
        }
        let mut seen = vec![false; k as usize];
        for &j in &block_of {
            if j == 0 || j > k {
                return Err(PartitionError::BlockIndexOutOfRange { index: j, k });
            }
            seen[j as usize - 1] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(PartitionError::EmptyBlock(missing as u16 + 1));
        }
        Ok(SetPartition { n, k, block_of })
    }

    pub fn n(&self) -> u16 {
        self.n
    }

    pub fn k(&self) -> u16 {
        self.k
    }

    /// The 1-based index of the block containing `element`.
    pub fn block_index_of(&self, element: u16) -> Result<u16, PartitionError> {
        if element == 0 || element > self.n {
            return Err(PartitionError::ElementOutOfRange { element, n: self.n });
        }
        Ok(self.block_of[element as usize - 1])
    }

    /// The elements of block `j`, ascending. Empty when `j` is out of range.
    pub fn block(&self, j: u16) -> Vec<u16> {
        self.block_of
            .iter()
            .enumerate()
            .filter(|&(_, &b)| b == j)
            .map(|(i, _)| i as u16 + 1)
            .collect()
    }

    pub fn size_profile(&self) -> BlockSizeProfile {
        let mut sizes = vec![0u16; self.k as usize];
        for &j in &self.block_of {
            sizes[j as usize - 1] += 1;
        }
        BlockSizeProfile { sizes }
    }

    /// Probability that two independent uniform draws from `[n]` land in the
    /// same block: `Σ (|A_j| / n)²`, returned exactly.
    pub fn match_probability(&self) -> Ratio<u64> {
        let profile = self.size_profile();
        let sum_sq: u64 = profile.sizes.iter().map(|&s| (s as u64) * (s as u64)).sum();
        Ratio::new(sum_sq, (self.n as u64) * (self.n as u64))
    }

    /// Seeded random generation with exactly `k` nonempty blocks.
    ///
    /// Samples the block assignment uniformly from `{1..k}^n` and rejects
    /// assignments with an empty block, which is uniform over ordered
    /// `k`-block partitions. When `k` is close to `n` rejection stalls, so
    /// after 200 failed attempts one element is planted in each block and the
    /// rest assigned uniformly (not uniform over partitions, but always valid).
    pub fn random(n: u16, k: u16, seed: u64) -> Result<Self, PartitionError> {
        if n == 0 || k == 0 || k > n {
            return Err(PartitionError::InvalidParams { n, k });
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        const MAX_REJECTIONS: u32 = 200;
        for _ in 0..MAX_REJECTIONS {
            let block_of: Vec<u16> = (0..n).map(|_| rng.random_range(1..=k)).collect();
            let mut seen = vec![false; k as usize];
            for &j in &block_of {
                seen[j as usize - 1] = true;
            }
            if seen.iter().all(|&s| s) {
                return Ok(SetPartition { n, k, block_of });
            }
        }
        // Fallback: partial Fisher-Yates picks k distinct elements, one per
        // block; everything else is assigned uniformly.
        let mut elements: Vec<u16> = (0..n).collect();
        for i in 0..k as usize {
            let j = rng.random_range(i..n as usize);
            elements.swap(i, j);
        }
        let mut block_of = vec![0u16; n as usize];
        for (label, &pos) in elements[..k as usize].iter().enumerate() {
            block_of[pos as usize] = label as u16 + 1;
        }
        for slot in block_of.iter_mut().filter(|s| **s == 0) {
            *slot = rng.random_range(1..=k);
        }
        Ok(SetPartition { n, k, block_of })
    }

    /// Serializes to the partition text format:
    ///
    /// ```text
    /// n=<int> k=<int>
    /// <j>: e1 e2 ... em
    /// ```
    ///
    /// one line per block, blocks ascending by index, elements ascending.
    pub fn to_text(&self) -> String {
        let mut out = format!("n={} k={}\n", self.n, self.k);
        for j in 1..=self.k {
            out.push_str(&j.to_string());
            out.push(':');
            for e in self.block(j) {
                out.push(' ');
                out.push_str(&e.to_string());
            }
            out.push('\n');
        }
        out
    }

    /// Parses the text format produced by [`SetPartition::to_text`].
    pub fn from_text(text: &str) -> Result<Self, PartitionError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| PartitionError::Malformed("empty input".into()))?;
        let (n, k) = parse_header(header)?;
        if n == 0 || k == 0 || k > n {
            return Err(PartitionError::InvalidParams { n, k });
        }
        let mut block_of = vec![0u16; n as usize];
        for expect_j in 1..=k {
            let line = lines.next().ok_or_else(|| {
                PartitionError::Malformed(format!("missing line for block {expect_j}"))
            })?;
            let (label, rest) = line.split_once(':').ok_or_else(|| {
                PartitionError::Malformed(format!("block line without ':': {line:?}"))
            })?;
            let j: u16 = label
                .trim()
                .parse()
                .map_err(|_| PartitionError::Malformed(format!("bad block label {label:?}")))?;
            if j != expect_j {
                return Err(PartitionError::Malformed(format!(
                    "expected block {expect_j}, found {j}"
                )));
            }
            for tok in rest.split_whitespace() {
                let e: u16 = tok
                    .parse()
                    .map_err(|_| PartitionError::Malformed(format!("bad element {tok:?}")))?;
                if e == 0 || e > n {
                    return Err(PartitionError::ElementOutOfRange { element: e, n });
                }
                if block_of[e as usize - 1] != 0 {
                    return Err(PartitionError::DuplicateElement(e));
                }
                block_of[e as usize - 1] = j;
            }
        }
        if let Some(extra) = lines.find(|l| !l.trim().is_empty()) {
            return Err(PartitionError::Malformed(format!(
                "unexpected trailing line {extra:?}"
            )));
        }
        if let Some(missing) = block_of.iter().position(|&j| j == 0) {
            return Err(PartitionError::MissingElement(missing as u16 + 1));
        }
        SetPartition::new(n, k, block_of)
    }
}

fn parse_header(line: &str) -> Result<(u16, u16), PartitionError> {
    let bad = || PartitionError::Malformed(format!("bad header {line:?}"));
    let mut parts = line.split_whitespace();
    let n = parts
        .next()
        .and_then(|p| p.strip_prefix("n="))
        .and_then(|v| v.parse().ok())
        .ok_or_else(bad)?;
    let k = parts
        .next()
        .and_then(|p| p.strip_prefix("k="))
        .and_then(|v| v.parse().ok())
        .ok_or_else(bad)?;
    if parts.next().is_some() {
        return Err(bad());
    }
    Ok((n, k))
}

/// Block sizes of a partition; sums to `n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockSizeProfile {
    sizes: Vec<u16>,
}

impl BlockSizeProfile {
    pub fn sizes(&self) -> &[u16] {
        &self.sizes
    }

    pub fn n(&self) -> u32 {
        self.sizes.iter().map(|&s| s as u32).sum()
    }
}

/// Stirling number of the second kind `S(n, k)`: the number of partitions of
/// an `n`-set into exactly `k` nonempty blocks.
///
/// Computed by the recurrence `S(n,k) = k·S(n−1,k) + S(n−1,k−1)` with
/// `S(0,0) = 1` and `S(n,0) = 0` for `n > 0`. Returns 0 when `k > n`.
pub fn stirling2(n: u32, k: u32) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let width = k as usize + 1;
    let mut row = vec![BigUint::zero(); width];
    row[0] = BigUint::one();
    for _ in 1..=n {
        for j in (1..width).rev() {
            let carried = std::mem::take(&mut row[j]);
            row[j] = carried * j as u32 + &row[j - 1];
        }
        row[0] = BigUint::zero();
    }
    row.pop().unwrap()
}

/// Iterator over every `k`-block partition of `[n]`, in restricted-growth-
/// string lexicographic order with blocks labelled by first appearance.
///
/// Fails upfront when `S(n,k)` exceeds [`ENUMERATION_LIMIT`].
pub fn enumerate_partitions(n: u16, k: u16) -> Result<KBlockPartitions, PartitionError> {
    if n == 0 || k == 0 || k > n {
        return Err(PartitionError::InvalidParams { n, k });
    }
    let count = stirling2(n as u32, k as u32);
    if count > BigUint::from(ENUMERATION_LIMIT) {
        return Err(PartitionError::TooManyPartitions {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    Ok(KBlockPartitions::new(n, k))
}

pub(crate) fn enumerate_unguarded(n: u16, k: u16) -> Result<KBlockPartitions, PartitionError> {
    if n == 0 || k == 0 || k > n {
        return Err(PartitionError::InvalidParams { n, k });
    }
    Ok(KBlockPartitions::new(n, k))
}

/// See [`enumerate_partitions`].
pub struct KBlockPartitions {
    n: usize,
    k: u16,
    // rgs[i] in 0..k is the 0-based label of element i+1
    rgs: Vec<u16>,
    exhausted: bool,
}

impl KBlockPartitions {
    fn new(n: u16, k: u16) -> Self {
        // Lexicographically least RGS with exactly k labels: zeros followed
        // by the forced climb 1, 2, …, k−1.
        let n = n as usize;
        let mut rgs = vec![0u16; n];
        for (offset, slot) in rgs[n - (k as usize - 1)..].iter_mut().enumerate() {
            *slot = offset as u16 + 1;
        }
        KBlockPartitions {
            n,
            k,
            rgs,
            exhausted: false,
        }
    }

    fn emit(&self) -> SetPartition {
        SetPartition {
            n: self.n as u16,
            k: self.k,
            block_of: self.rgs.iter().map(|&l| l + 1).collect(),
        }
    }

    /// Advances to the lexicographic successor; false when exhausted.
    fn advance(&mut self) -> bool {
        let k = self.k;
        // prefix_max[i] = max label among rgs[0..=i]
        let mut prefix_max = vec![0u16; self.n];
        for i in 1..self.n {
            prefix_max[i] = prefix_max[i - 1].max(self.rgs[i]);
        }
        for i in (1..self.n).rev() {
            let cap = (prefix_max[i - 1] + 1).min(k - 1);
            if self.rgs[i] >= cap {
                continue;
            }
            let candidate = self.rgs[i] + 1;
            let max_after = prefix_max[i - 1].max(candidate);
            // Labels max_after+1 .. k-1 must still fit into the suffix.
            let missing = (k - 1 - max_after) as usize;
            let suffix = self.n - 1 - i;
            if missing > suffix {
                continue;
            }
            self.rgs[i] = candidate;
            // Lexicographically least completion: zeros, then the forced climb.
            for j in i + 1..self.n - missing {
                self.rgs[j] = 0;
            }
            for (offset, j) in (self.n - missing..self.n).enumerate() {
                self.rgs[j] = max_after + 1 + offset as u16;
            }
            return true;
        }
        false
    }
}

impl Iterator for KBlockPartitions {
    type Item = SetPartition;

    fn next(&mut self) -> Option<SetPartition> {
        if self.exhausted {
            return None;
        }
        let item = self.emit();
        if !self.advance() {
            self.exhausted = true;
        }
        Some(item)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn blocks_of(p: &SetPartition) -> Vec<Vec<u16>> {
        (1..=p.k()).map(|j| p.block(j)).collect()
    }

    #[test]
    fn all_singletons_is_valid() {
        let p = SetPartition::new(3, 3, vec![1, 2, 3]).unwrap();
        assert_eq!(p.block_index_of(3).unwrap(), 3);
    }

    #[test]
    fn empty_block_rejected() {
        assert_eq!(
            SetPartition::new(3, 2, vec![1, 1, 1]),
            Err(PartitionError::EmptyBlock(2))
        );
    }

    #[test]
    fn out_of_range_rejected() {
        assert_eq!(
            SetPartition::new(3, 2, vec![1, 2, 3]),
            Err(PartitionError::BlockIndexOutOfRange { index: 3, k: 2 })
        );
        assert_eq!(
            SetPartition::new(2, 3, vec![1, 2]),
            Err(PartitionError::InvalidParams { n: 2, k: 3 })
        );
        assert_eq!(
            SetPartition::new(3, 2, vec![1, 2]),
            Err(PartitionError::WrongLength {
                expected: 3,
                got: 2
            })
        );
    }

    #[test]
    fn element_lookup_bounds() {
        let p = SetPartition::new(5, 5, vec![1, 2, 3, 4, 5]).unwrap();
        assert_eq!(p.block_index_of(5).unwrap(), 5);
        assert!(matches!(
            p.block_index_of(0),
            Err(PartitionError::ElementOutOfRange { .. })
        ));
        assert!(matches!(
            p.block_index_of(6),
            Err(PartitionError::ElementOutOfRange { .. })
        ));
    }

    #[test]
    fn random_forced_shapes() {
        for seed in 0..10 {
            let p = SetPartition::random(5, 5, seed).unwrap();
            assert!(p.size_profile().sizes().iter().all(|&s| s == 1));
            let q = SetPartition::random(5, 1, seed).unwrap();
            assert_eq!(q.size_profile().sizes(), &[5]);
        }
    }

    #[test]
    fn random_is_seed_deterministic() {
        let a = SetPartition::random(20, 13, 42).unwrap();
        let b = SetPartition::random(20, 13, 42).unwrap();
        assert_eq!(a, b);
        let c = SetPartition::random(20, 13, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn random_rejects_bad_params() {
        assert!(SetPartition::random(3, 4, 0).is_err());
        assert!(SetPartition::random(0, 0, 0).is_err());
    }

    #[test]
    fn enumerate_3_choose_2_in_canonical_order() {
        let parts: Vec<_> = enumerate_partitions(3, 2).unwrap().collect();
        assert_eq!(parts.len(), 3);
        assert_eq!(blocks_of(&parts[0]), vec![vec![1, 2], vec![3]]);
        assert_eq!(blocks_of(&parts[1]), vec![vec![1, 3], vec![2]]);
        assert_eq!(blocks_of(&parts[2]), vec![vec![1], vec![2, 3]]);
    }

    #[test]
    fn enumerate_degenerate_cases() {
        assert_eq!(enumerate_partitions(4, 4).unwrap().count(), 1);
        assert_eq!(enumerate_partitions(4, 1).unwrap().count(), 1);
        assert_eq!(enumerate_partitions(4, 2).unwrap().count(), 7);
    }

    #[test]
    fn enumeration_guard_trips() {
        // S(30, 15) is astronomically past the limit
        assert!(matches!(
            enumerate_partitions(30, 15),
            Err(PartitionError::TooManyPartitions { .. })
        ));
    }

    #[test]
    fn stirling_small_values() {
        assert_eq!(stirling2(0, 0), BigUint::one());
        assert_eq!(stirling2(1, 0), BigUint::zero());
        assert_eq!(stirling2(4, 2), BigUint::from(7u32));
        assert_eq!(stirling2(10, 3), BigUint::from(9330u32));
        for n in 0..12 {
            assert_eq!(stirling2(n, n), BigUint::one());
        }
        assert_eq!(stirling2(3, 5), BigUint::zero());
    }

    /// Independent oracle: every labelling [n] -> [k], filtered to surjective
    /// ones, relabelled canonically by first appearance, then deduplicated.
    fn brute_force_rgs(n: u16, k: u16) -> BTreeSet<Vec<u16>> {
        let mut out = BTreeSet::new();
        let total = (k as u64).pow(n as u32);
        for code in 0..total {
            let mut labelling = Vec::with_capacity(n as usize);
            let mut c = code;
            for _ in 0..n {
                labelling.push((c % k as u64) as u16);
                c /= k as u64;
            }
            let mut seen: Vec<u16> = Vec::new();
            let mut canonical = Vec::with_capacity(n as usize);
            for &l in &labelling {
                let idx = match seen.iter().position(|&s| s == l) {
                    Some(i) => i,
                    None => {
                        seen.push(l);
                        seen.len() - 1
                    }
                };
                canonical.push(idx as u16 + 1);
            }
            if seen.len() == k as usize {
                out.insert(canonical);
            }
        }
        out
    }

    #[test]
    fn enumeration_matches_brute_force_oracle() {
        for n in 1..=6u16 {
            for k in 1..=n {
                let oracle = brute_force_rgs(n, k);
                let enumerated: BTreeSet<Vec<u16>> = enumerate_partitions(n, k)
                    .unwrap()
                    .map(|p| p.block_of.clone())
                    .collect();
                assert_eq!(enumerated, oracle, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn enumeration_count_matches_recurrence() {
        for n in 1..=10u16 {
            for k in 1..=n {
                let count = enumerate_partitions(n, k).unwrap().count();
                assert_eq!(
                    BigUint::from(count),
                    stirling2(n as u32, k as u32),
                    "n={n} k={k}"
                );
            }
        }
    }

    #[test]
    fn enumeration_is_strictly_increasing() {
        let mut prev: Option<Vec<u16>> = None;
        for p in enumerate_partitions(7, 3).unwrap() {
            let rgs = p.block_of.clone();
            if let Some(prev) = &prev {
                assert!(prev < &rgs);
            }
            // first-appearance labelling: a label j+1 only after j
            let mut max = 0;
            for &l in &rgs {
                assert!(l <= max + 1);
                max = max.max(l);
            }
            prev = Some(rgs);
        }
    }

    #[test]
    fn match_probability_extremes() {
        let singles = SetPartition::new(4, 4, vec![1, 2, 3, 4]).unwrap();
        assert_eq!(singles.match_probability(), Ratio::new(1, 4));
        let single_block = SetPartition::new(4, 1, vec![1, 1, 1, 1]).unwrap();
        assert_eq!(single_block.match_probability(), Ratio::new(1, 1));
    }

    #[test]
    fn text_round_trip() {
        let p = SetPartition::random(20, 13, 7).unwrap();
        let q = SetPartition::from_text(&p.to_text()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn parse_rejects_duplicates_and_gaps() {
        let dup = "n=3 k=2\n1: 1 2\n2: 2\n";
        assert_eq!(
            SetPartition::from_text(dup),
            Err(PartitionError::DuplicateElement(2))
        );
        let missing = "n=3 k=2\n1: 1\n2: 3\n";
        assert_eq!(
            SetPartition::from_text(missing),
            Err(PartitionError::MissingElement(2))
        );
        assert!(SetPartition::from_text("bogus\n").is_err());
        assert!(SetPartition::from_text("n=3 k=2\n1: 1 2\n").is_err());
    }

    proptest! {
        #[test]
        fn random_partitions_serialize_round_trip(
            n in 1u16..=64,
            k_frac in 0.0f64..1.0,
            seed in any::<u64>(),
        ) {
            let k = 1 + ((n - 1) as f64 * k_frac) as u16;
            let p = SetPartition::random(n, k, seed).unwrap();
            prop_assert_eq!(p.k(), k);
            let q = SetPartition::from_text(&p.to_text()).unwrap();
            prop_assert_eq!(p, q);
        }
    }

    #[test]
    fn empirical_match_rate_tracks_analytic_probability() {
        use rand::Rng;
        use rand::SeedableRng;
        let p = SetPartition::random(12, 5, 99).unwrap();
        let q: f64 = {
            use num_traits::ToPrimitive;
            let r = p.match_probability();
            *r.numer() as f64 / (*r.denom()).to_f64().unwrap()
        };
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(1234);
        let trials = 100_000u32;
        let mut hits = 0u32;
        for _ in 0..trials {
            let a: u16 = rng.random_range(1..=12);
            let b: u16 = rng.random_range(1..=12);
            if p.block_index_of(a).unwrap() == p.block_index_of(b).unwrap() {
                hits += 1;
            }
        }
        let freq = hits as f64 / trials as f64;
        let se = (q * (1.0 - q) / trials as f64).sqrt();
        assert!(
            (freq - q).abs() <= 3.0 * se,
            "freq={freq} expected={q} se={se}"
        );
    }
}
