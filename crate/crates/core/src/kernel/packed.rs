use crate::error::{PotError, Result};
use crate::pot::{BitWidth, Code};

/// n-bit slots packed LSB-first into 32-bit words, `32 / n` slots per word.
/// Bits not covered by a slot are always zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedCodes {
    bits: BitWidth,
    len: usize,
    words: Vec<u32>,
}

#[inline]
pub fn slots_per_word(bits: BitWidth) -> usize {
    32 / bits.get() as usize
}

pub fn words_for(len: usize, bits: BitWidth) -> usize {
    len.div_ceil(slots_per_word(bits))
}

impl PackedCodes {
    /// Packs raw slot values, each below `2^n`.
    pub fn pack_slots(slots: &[u8], bits: BitWidth) -> Result<Self> {
        let n = bits.get();
        let per_word = slots_per_word(bits);
        let mut words = vec![0u32; words_for(slots.len(), bits)];
        for (i, &s) in slots.iter().enumerate() {
            if s as u32 >= bits.slot_count() {
                return Err(PotError::ExponentOutOfRange {
                    exponent: s,
                    bits: n,
                });
            }
            words[i / per_word] |= (s as u32) << ((i % per_word) as u32 * n);
        }
        Ok(PackedCodes {
            bits,
            len: slots.len(),
            words,
        })
    }

    pub fn pack(codes: &[Code], bits: BitWidth) -> Result<Self> {
        let q_max = bits.q_max();
        let slots: Vec<u8> = codes
            .iter()
            .map(|c| {
                if c.exponent > q_max {
                    Err(PotError::ExponentOutOfRange {
                        exponent: c.exponent,
                        bits: bits.get(),
                    })
                } else {
                    Ok(c.to_slot(bits))
                }
            })
            .collect::<Result<_>>()?;
        Self::pack_slots(&slots, bits)
    }

    /// Adopts an existing word stream, rejecting non-zero padding.
    pub fn from_words(bits: BitWidth, len: usize, words: Vec<u32>) -> Result<Self> {
        if words.len() != words_for(len, bits) {
            return Err(PotError::DimensionMismatch(format!(
                "{} words cannot hold exactly {len} {}-bit codes",
                words.len(),
                bits.get()
            )));
        }
        let n = bits.get() as usize;
        let per_word = slots_per_word(bits);
        for (w, &word) in words.iter().enumerate() {
            let used = per_word.min(len - w * per_word);
            let mask = if used * n == 32 {
                u32::MAX
            } else {
                (1u32 << (used * n)) - 1
            };
            if word & !mask != 0 {
                return Err(PotError::NonCanonicalPadding(w));
            }
        }
        Ok(PackedCodes { bits, len, words })
    }

    pub fn bits(&self) -> BitWidth {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u32] {
        &self.words
    }

    #[inline]
    pub fn slot(&self, i: usize) -> u8 {
        debug_assert!(i < self.len);
        let n = self.bits.get();
        let per_word = slots_per_word(self.bits);
        let word = self.words[i / per_word];
        ((word >> ((i % per_word) as u32 * n)) & ((1 << n) - 1)) as u8
    }

    pub fn unpack_slots(&self) -> Vec<u8> {
        (0..self.len).map(|i| self.slot(i)).collect()
    }

    pub fn unpack(&self) -> Vec<Code> {
        (0..self.len)
            .map(|i| Code::from_slot(self.slot(i), self.bits))
            .collect()
    }
}
