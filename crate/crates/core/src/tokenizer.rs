//! Byte-level tokenizer: ids 0..=255 are raw bytes, followed by a few
//! reserved specials.

pub const PAD: u32 = 256;
/// Teacher label for the positive class.
pub const LABEL_POS: u32 = 257;
/// Teacher label for the negative class.
pub const LABEL_NEG: u32 = 258;
pub const VOCAB_SIZE: usize = 259;

pub fn encode(text: &str) -> Vec<u32> {
    encode_bytes(text.as_bytes())
}

pub fn encode_bytes(bytes: &[u8]) -> Vec<u32> {
    bytes.iter().map(|&b| b as u32).collect()
}

/// Inverse of [`encode_bytes`]; special tokens are dropped.
pub fn decode_bytes(ids: &[u32]) -> Vec<u8> {
    ids.iter().filter(|&&t| t < 256).map(|&t| t as u8).collect()
}

pub fn decode(ids: &[u32]) -> String {
    String::from_utf8_lossy(&decode_bytes(ids)).into_owned()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn five_bytes_give_five_ids() {
        assert_eq!(encode("hello"), vec![104, 101, 108, 108, 111]);
        assert!(encode("").is_empty());
    }

    proptest! {
        #[test]
        fn byte_round_trip(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            prop_assert_eq!(decode_bytes(&encode_bytes(&bytes)), bytes);
        }
    }
}
