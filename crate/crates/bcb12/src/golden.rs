//! Reference vectors for one complete session on a 20-element ground set
//! partitioned into 13 blocks.
//!
//! The fixtures pin every intermediate of the protocol — both parties' draw
//! sequences, their classified index lists, the match list, the derived key
//! (values and bits) and the ciphertext of a 27-byte message — so the entire
//! pipeline can be replayed bit for bit. The raw files live under
//! `fixtures/` and double as inputs for the CLI's draw-injection flags.

use crate::keyder::{BlockIndexList, MatchList};
use crate::partition::SetPartition;
use crate::vernam::BitString;

pub const PARTITION_TEXT: &str = include_str!("../fixtures/partition.txt");
pub const ALICE_DRAWS_TEXT: &str = include_str!("../fixtures/alice_draws.txt");
pub const BOB_DRAWS_TEXT: &str = include_str!("../fixtures/bob_draws.txt");
pub const ALICE_LIST_TEXT: &str = include_str!("../fixtures/alice_list.txt");
pub const BOB_LIST_TEXT: &str = include_str!("../fixtures/bob_list.txt");
pub const MATCH_LIST_TEXT: &str = include_str!("../fixtures/match_list.txt");
pub const KEY_VALUES_TEXT: &str = include_str!("../fixtures/key_values.txt");
pub const KEY_BITS_TEXT: &str = include_str!("../fixtures/key_bits.txt");
pub const CIPHERTEXT_BITS_TEXT: &str = include_str!("../fixtures/ciphertext_bits.txt");
pub const MESSAGE: &[u8] = include_bytes!("../fixtures/message.txt");

/// Session parameters of the reference run.
pub const GROUND_SET_SIZE: u16 = 20;
pub const BLOCK_COUNT: u16 = 13;
pub const AMPLIFICATION: u32 = 2;
pub const SEQUENCE_LEN: u64 = 432;
pub const MESSAGE_BIT_LEN: usize = 216;
pub const KEY_BIT_LEN: usize = 312;
pub const MATCH_COUNT: usize = 39;

pub fn partition() -> SetPartition {
    SetPartition::from_text(PARTITION_TEXT).expect("fixture partition parses")
}

fn parse_u16s(text: &str) -> Vec<u16> {
    text.split_whitespace()
        .map(|t| t.parse().expect("fixture integer"))
        .collect()
}

/// Alice's 432 draws from `1..=20`.
pub fn alice_draws() -> Vec<u16> {
    parse_u16s(ALICE_DRAWS_TEXT)
}

/// Bob's 432 draws from `1..=20`.
pub fn bob_draws() -> Vec<u16> {
    parse_u16s(BOB_DRAWS_TEXT)
}

/// Alice's classified block-index list.
pub fn alice_list() -> BlockIndexList {
    BlockIndexList::new(parse_u16s(ALICE_LIST_TEXT))
}

/// Bob's classified block-index list.
pub fn bob_list() -> BlockIndexList {
    BlockIndexList::new(parse_u16s(BOB_LIST_TEXT))
}

/// The 432-mark comparison record (39 plus marks).
pub fn match_list() -> MatchList {
    MatchList::from_chars(MATCH_LIST_TEXT).expect("fixture match list parses")
}

/// The 39 derived key values.
pub fn key_values() -> Vec<u64> {
    KEY_VALUES_TEXT
        .split_whitespace()
        .map(|t| t.parse().expect("fixture key value"))
        .collect()
}

/// The 312-bit key.
pub fn key_bits() -> BitString {
    BitString::from_bit_str(KEY_BITS_TEXT).expect("fixture key bits parse")
}

/// The 216-bit message.
pub fn message_bits() -> BitString {
    BitString::from_bytes(MESSAGE)
}

/// The 216-bit ciphertext (message XOR leading key bits).
pub fn ciphertext_bits() -> BitString {
    BitString::from_bit_str(CIPHERTEXT_BITS_TEXT).expect("fixture ciphertext parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_shapes() {
        let p = partition();
        assert_eq!(p.n(), GROUND_SET_SIZE);
        assert_eq!(p.k(), BLOCK_COUNT);
        assert_eq!(p.block(7), vec![6, 8, 12]);
        assert_eq!(p.block_index_of(12).unwrap(), 7);
        assert_eq!(p.block_index_of(1).unwrap(), 1);

        assert_eq!(alice_draws().len() as u64, SEQUENCE_LEN);
        assert_eq!(bob_draws().len() as u64, SEQUENCE_LEN);
        assert_eq!(match_list().len() as u64, SEQUENCE_LEN);
        assert_eq!(match_list().plus_count(), MATCH_COUNT);
        assert_eq!(key_values().len(), MATCH_COUNT);
        assert_eq!(key_bits().len(), KEY_BIT_LEN);
        assert_eq!(message_bits().len(), MESSAGE_BIT_LEN);
        assert_eq!(ciphertext_bits().len(), MESSAGE_BIT_LEN);
        assert_eq!(MESSAGE, b"It rains take the umbrella.");
    }

    #[test]
    fn block_size_profile_is_8_3_2() {
        // eight singletons, three 2-blocks, two 3-blocks
        let mut sizes: Vec<u16> = partition().size_profile().sizes().to_vec();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![1, 1, 1, 1, 1, 1, 1, 1, 2, 2, 2, 3, 3]);
    }
}
