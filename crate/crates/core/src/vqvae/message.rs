//! Feedback message wire format.
//!
//! Quantized variants pack `N_L` indices of `log2(C)` bits each, most
//! significant bit first, zero-padded to a byte boundary. The AE baseline
//! sends its latents as big-endian IEEE-754 `f32`.

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum FeedbackMessage {
    Indices {
        indices: Vec<u32>,
        bits_per_index: u32,
    },
    Raw(Vec<f32>),
}

impl FeedbackMessage {
    /// Payload length in bits, excluding byte padding.
    pub fn bit_len(&self) -> usize {
        match self {
            FeedbackMessage::Indices {
                indices,
                bits_per_index,
            } => indices.len() * *bits_per_index as usize,
            FeedbackMessage::Raw(v) => 32 * v.len(),
        }
    }

    pub fn indices(&self) -> Option<&[u32]> {
        match self {
            FeedbackMessage::Indices { indices, .. } => Some(indices),
            FeedbackMessage::Raw(_) => None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            FeedbackMessage::Indices {
                indices,
                bits_per_index,
            } => {
                let mut out = vec![0u8; self.bit_len().div_ceil(8)];
                let mut pos = 0usize;
                for &idx in indices {
                    for b in (0..*bits_per_index).rev() {
                        if (idx >> b) & 1 == 1 {
                            out[pos / 8] |= 0x80 >> (pos % 8);
                        }
                        pos += 1;
                    }
                }
                out
            }
            FeedbackMessage::Raw(v) => v.iter().flat_map(|x| x.to_be_bytes()).collect(),
        }
    }

    pub fn indices_from_bytes(bytes: &[u8], count: usize, bits_per_index: u32) -> Result<Self> {
        let need = (count * bits_per_index as usize).div_ceil(8);
        if bytes.len() != need {
            return Err(Error::dim("feedback message bytes", need, bytes.len()));
        }
        let mut pos = 0usize;
        let indices = (0..count)
            .map(|_| {
                let mut v = 0u32;
                for _ in 0..bits_per_index {
                    let bit = (bytes[pos / 8] >> (7 - pos % 8)) & 1;
                    v = (v << 1) | bit as u32;
                    pos += 1;
                }
                v
            })
            .collect();
        Ok(FeedbackMessage::Indices {
            indices,
            bits_per_index,
        })
    }

    pub fn raw_from_bytes(bytes: &[u8], count: usize) -> Result<Self> {
        if bytes.len() != 4 * count {
            return Err(Error::dim("feedback message bytes", 4 * count, bytes.len()));
        }
        Ok(FeedbackMessage::Raw(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_be_bytes(c.try_into().unwrap()))
                .collect(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn packing_layout() {
        let m = FeedbackMessage::Indices {
            indices: vec![0b101, 0b011, 0b111],
            bits_per_index: 3,
        };
        assert_eq!(m.bit_len(), 9);
        assert_eq!(m.to_bytes(), vec![0b1010_1111, 0b1000_0000]);
    }

    #[test]
    fn raw_layout() {
        let m = FeedbackMessage::Raw(vec![1.0, -2.5]);
        assert_eq!(m.bit_len(), 64);
        let b = m.to_bytes();
        assert_eq!(&b[0..4], &1.0f32.to_be_bytes());
        assert_eq!(FeedbackMessage::raw_from_bytes(&b, 2).unwrap(), m);
    }

    proptest! {
        #[test]
        fn pack_unpack_round_trip(bits in 1u32..=8, raw in proptest::collection::vec(any::<u32>(), 1..40)) {
            let indices: Vec<u32> = raw.iter().map(|v| v & ((1 << bits) - 1)).collect();
            let m = FeedbackMessage::Indices { indices: indices.clone(), bits_per_index: bits };
            let bytes = m.to_bytes();
            prop_assert_eq!(bytes.len(), (indices.len() * bits as usize).div_ceil(8));
            prop_assert_eq!(FeedbackMessage::indices_from_bytes(&bytes, indices.len(), bits).unwrap(), m);
        }
    }
}
