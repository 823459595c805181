//! Statistical evaluation of derived keys.
//!
//! Two classic bit-level tests (frequency and runs) plus a byte-entropy
//! measure. Key bytes come from at most `k` distinct block values per
//! session, so entropy is structurally capped at `log2(k)` bits per byte —
//! the reports surface this rather than certify randomness.

use libm::erfc;
use thiserror::Error;

use crate::vernam::BitString;

pub const DEFAULT_ALPHA: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum StatError {
    #[error("input is empty")]
    EmptyInput,
    #[error("input of {got} bits is shorter than the required {needed}")]
    TooShort { needed: usize, got: usize },
    #[error("bit length {0} is not a multiple of 8")]
    NotByteAligned(usize),
}

/// One test's outcome; `pass` holds exactly when `p_value >= alpha`.
#[derive(Clone, Debug, PartialEq)]
pub struct TestReport {
    pub name: &'static str,
    pub statistic: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub pass: bool,
}

impl TestReport {
    fn new(name: &'static str, statistic: f64, p_value: f64, alpha: f64) -> Self {
        TestReport {
            name,
            statistic,
            p_value,
            alpha,
            pass: p_value >= alpha,
        }
    }
}

/// Frequency (monobit) test: `S = Σ(2b − 1)`, `p = erfc(|S| / √(2L))`.
pub fn monobit(bits: &BitString, alpha: f64) -> Result<TestReport, StatError> {
    if bits.is_empty() {
        return Err(StatError::EmptyInput);
    }
    let sum: i64 = bits.iter().map(|b| if b { 1i64 } else { -1 }).sum();
    let l = bits.len() as f64;
    let p = erfc(sum.abs() as f64 / (2.0 * l).sqrt());
    Ok(TestReport::new("monobit", sum as f64, p, alpha))
}

/// Runs-test outcome: the test only applies when the ones fraction is close
/// enough to one half.
#[derive(Clone, Debug, PartialEq)]
pub enum RunsOutcome {
    Report(TestReport),
    NotApplicable { ones_fraction: f64, threshold: f64 },
}

/// Runs test: `V` counts maximal same-bit runs;
/// `p = erfc(|V − 2Lπ̂(1−π̂)| / (2√(2L)·π̂(1−π̂)))` with `π̂` the ones
/// fraction, applicable only when `|π̂ − 1/2| < 2/√L`.
pub fn runs_test(bits: &BitString, alpha: f64) -> Result<RunsOutcome, StatError> {
    if bits.is_empty() {
        return Err(StatError::EmptyInput);
    }
    if bits.len() < 2 {
        return Err(StatError::TooShort {
            needed: 2,
            got: bits.len(),
        });
    }
    let l = bits.len() as f64;
    let ones = bits.iter().filter(|&b| b).count() as f64;
    let pi = ones / l;
    let threshold = 2.0 / l.sqrt();
    if (pi - 0.5).abs() >= threshold {
        return Ok(RunsOutcome::NotApplicable {
            ones_fraction: pi,
            threshold,
        });
    }
    let mut runs = 1u64;
    let mut prev = bits.get(0).unwrap();
    for bit in bits.iter().skip(1) {
        if bit != prev {
            runs += 1;
            prev = bit;
        }
    }
    let v = runs as f64;
    let p =
        erfc((v - 2.0 * l * pi * (1.0 - pi)).abs() / (2.0 * (2.0 * l).sqrt() * pi * (1.0 - pi)));
    Ok(RunsOutcome::Report(TestReport::new("runs", v, p, alpha)))
}

/// Shannon entropy of the byte histogram, in bits per byte.
pub fn byte_entropy(bits: &BitString) -> Result<f64, StatError> {
    if !bits.len().is_multiple_of(8) {
        return Err(StatError::NotByteAligned(bits.len()));
    }
    let bytes = bits.to_bytes().expect("aligned length");
    if bytes.is_empty() {
        return Err(StatError::EmptyInput);
    }
    let mut histogram = [0u64; 256];
    for &b in &bytes {
        histogram[b as usize] += 1;
    }
    let total = bytes.len() as f64;
    let entropy = histogram
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum();
    Ok(entropy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::golden;
    use proptest::prelude::*;

    fn alternating(len: usize) -> BitString {
        (0..len).map(|i| i % 2 == 1).collect()
    }

    #[test]
    fn monobit_balanced_input_is_perfect() {
        let report = monobit(&alternating(100), 0.01).unwrap();
        assert_eq!(report.statistic, 0.0);
        assert_eq!(report.p_value, 1.0);
        assert!(report.pass);
    }

    #[test]
    fn monobit_constant_input_fails_hard() {
        let zeros: BitString = (0..100).map(|_| false).collect();
        let report = monobit(&zeros, 0.01).unwrap();
        assert_eq!(report.statistic, -100.0);
        assert!(report.p_value < 1e-15);
        assert!(!report.pass);
    }

    #[test]
    fn monobit_rejects_empty() {
        assert_eq!(monobit(&BitString::new(), 0.01), Err(StatError::EmptyInput));
    }

    #[test]
    fn monobit_on_reference_key_reports_a_probability() {
        let report = monobit(&golden::key_bits(), 0.01).unwrap();
        assert!((0.0..=1.0).contains(&report.p_value));
    }

    #[test]
    fn runs_on_ten_alternating_bits() {
        let outcome = runs_test(&alternating(10), 0.01).unwrap();
        let report = match outcome {
            RunsOutcome::Report(r) => r,
            RunsOutcome::NotApplicable { .. } => panic!("balanced input is applicable"),
        };
        assert_eq!(report.statistic, 10.0);
        // erfc(5 / (2 * sqrt(20) * 0.25)) = erfc(2.2360…) ≈ 0.00157
        assert!(
            (report.p_value - 0.00157).abs() < 1e-4,
            "p={}",
            report.p_value
        );
    }

    #[test]
    fn runs_inapplicable_when_biased() {
        let ones: BitString = (0..64).map(|_| true).collect();
        match runs_test(&ones, 0.01).unwrap() {
            RunsOutcome::NotApplicable { ones_fraction, .. } => {
                assert_eq!(ones_fraction, 1.0)
            }
            RunsOutcome::Report(_) => panic!("all-ones must be inapplicable"),
        }
    }

    #[test]
    fn runs_needs_two_bits() {
        let one: BitString = std::iter::once(true).collect();
        assert_eq!(
            runs_test(&one, 0.01),
            Err(StatError::TooShort { needed: 2, got: 1 })
        );
        assert_eq!(
            runs_test(&BitString::new(), 0.01),
            Err(StatError::EmptyInput)
        );
    }

    #[test]
    fn entropy_extremes() {
        let constant = BitString::from_bytes(&[0x41; 64]);
        assert_eq!(byte_entropy(&constant).unwrap(), 0.0);

        let all: Vec<u8> = (0..=255).collect();
        let full = byte_entropy(&BitString::from_bytes(&all)).unwrap();
        assert!((full - 8.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_requires_whole_bytes() {
        let ragged: BitString = (0..9).map(|_| true).collect();
        assert_eq!(byte_entropy(&ragged), Err(StatError::NotByteAligned(9)));
    }

    #[test]
    fn reference_key_entropy_capped_by_block_count() {
        let h = byte_entropy(&golden::key_bits()).unwrap();
        assert!(h <= (golden::BLOCK_COUNT as f64).log2(), "h={h}");
        assert!(h > 0.0);
    }

    proptest! {
        /// Both tests are invariant under bit complementation.
        #[test]
        fn complement_invariance(pattern in proptest::collection::vec(any::<bool>(), 16..512)) {
            let bits: BitString = pattern.iter().copied().collect();
            let flipped: BitString = pattern.iter().map(|b| !b).collect();

            let a = monobit(&bits, 0.01).unwrap();
            let b = monobit(&flipped, 0.01).unwrap();
            prop_assert!((a.p_value - b.p_value).abs() < 1e-12);

            match (runs_test(&bits, 0.01).unwrap(), runs_test(&flipped, 0.01).unwrap()) {
                (RunsOutcome::Report(x), RunsOutcome::Report(y)) => {
                    prop_assert_eq!(x.statistic, y.statistic);
                    prop_assert!((x.p_value - y.p_value).abs() < 1e-12);
                }
                (RunsOutcome::NotApplicable { .. }, RunsOutcome::NotApplicable { .. }) => {}
                _ => prop_assert!(false, "applicability must be symmetric"),
            }
        }

        #[test]
        fn p_values_stay_in_range(seed in any::<u64>(), len in 16usize..2048) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let bits: BitString = (0..len).map(|_| rng.random_bool(0.5)).collect();
            let m = monobit(&bits, 0.01).unwrap();
            prop_assert!((0.0..=1.0).contains(&m.p_value));
            if let RunsOutcome::Report(r) = runs_test(&bits, 0.01).unwrap() {
                prop_assert!((0.0..=1.0).contains(&r.p_value));
            }
        }
    }
}
