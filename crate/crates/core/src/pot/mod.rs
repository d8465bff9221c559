//! Power-of-two quantization: per-weight codes, per-group scale search and
//! the uniform round-to-nearest baseline.
//!
//! A weight `w` in a group with scale `s` is represented as
//! `s * sign(w) * 2^E` with `E = clamp(round(log2(|w| / s)), 0, q_max)`.
//! `round` is nearest with ties away from zero and `sign(0) = +1`, so a zero
//! weight reconstructs to `+s`.

mod config;
mod matrix;
mod search;
mod uniform;

pub use config::{BitWidth, QuantConfig};
pub use matrix::QuantizedMatrix;
pub use search::{
    base_scale, candidate_scale, naive_group_scale, quantize_naive, quantize_step1,
    quantize_with_scales, search_all_groups, search_group_scale, GroupScale,
};
pub use uniform::{quantize_rtn_uniform, UniformGroup, UniformQuantized};

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use crate::error::{PotError, Result};

/// Sign and exponent of one quantized weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Code {
    pub negative: bool,
    pub exponent: u8,
}

impl Code {
    pub const fn new(negative: bool, exponent: u8) -> Self {
        Code { negative, exponent }
    }

    /// Code for weight `w` under scale `s`.
    pub fn quantize(w: f64, s: f64, q_max: u8) -> Result<Self> {
        Ok(Code {
            negative: w < 0.0,
            exponent: compute_exponent(w.abs(), s, q_max)?,
        })
    }

    /// `±1` as a float.
    #[inline]
    pub fn sign(self) -> f64 {
        if self.negative {
            -1.0
        } else {
            1.0
        }
    }

    /// The n-bit slot: sign in the most significant bit, exponent below it.
    #[inline]
    pub fn to_slot(self, bits: BitWidth) -> u8 {
        ((self.negative as u8) << (bits.get() - 1)) | self.exponent
    }

    #[inline]
    pub fn from_slot(slot: u8, bits: BitWidth) -> Self {
        Code {
            negative: (slot >> (bits.get() - 1)) & 1 == 1,
            exponent: slot & bits.exponent_mask(),
        }
    }
}

/// `clamp(round(log2(w_abs / s)), 0, q_max)`. Zero maps to 0.
pub fn compute_exponent(w_abs: f64, s: f64, q_max: u8) -> Result<u8> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(PotError::NonPositiveScale(s));
    }
    Ok(exponent_unchecked(w_abs, s, q_max))
}

/// Rounding `log2(r)` to nearest moves up at `r = sqrt(2) * 2^k`. Comparing
/// against those thresholds is exact: the f64 nearest to `sqrt(2)` lies above
/// it, so no double falls between the true and the rounded threshold.
#[inline]
pub(crate) fn exponent_unchecked(w_abs: f64, s: f64, q_max: u8) -> u8 {
    exponent_and_clamp(w_abs, s, q_max).0
}

/// The exponent, and whether the clamp to `[0, q_max]` changed it. Zero
/// weights count as clamped.
#[inline]
pub(crate) fn exponent_and_clamp(w_abs: f64, s: f64, q_max: u8) -> (u8, bool) {
    if w_abs == 0.0 {
        return (0, true);
    }
    let r = w_abs / s;
    if r < FRAC_1_SQRT_2 {
        return (0, true);
    }
    let mut e = 0;
    let mut threshold = SQRT_2;
    while e < q_max {
        if r < threshold {
            return (e, false);
        }
        e += 1;
        threshold *= 2.0;
    }
    (q_max, r >= threshold)
}

/// `s * p * 2^e`, exact for the exponent range in use.
#[inline]
pub fn reconstruct(s: f64, negative: bool, e: u8) -> f64 {
    let v = s * (1u32 << e) as f64;
    if negative {
        -v
    } else {
        v
    }
}

/// Squared reconstruction error of a group under scale `s`.
pub fn group_loss(w_group: &[f64], s: f64, q_max: u8) -> Result<f64> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(PotError::NonPositiveScale(s));
    }
    Ok(group_loss_unchecked(w_group, s, q_max))
}

#[inline]
pub(crate) fn group_loss_unchecked(w_group: &[f64], s: f64, q_max: u8) -> f64 {
    w_group
        .iter()
        .map(|&w| {
            let e = exponent_unchecked(w.abs(), s, q_max);
            let d = w - reconstruct(s, w < 0.0, e);
            d * d
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponent_examples() {
        assert_eq!(compute_exponent(3.0, 1.0, 3).unwrap(), 2);
        assert_eq!(compute_exponent(100.0, 1.0, 3).unwrap(), 3);
        assert_eq!(compute_exponent(0.0, 1.0, 3).unwrap(), 0);
        assert_eq!(compute_exponent(0.1, 1.0, 3).unwrap(), 0);
        assert!(matches!(
            compute_exponent(1.0, 0.0, 3),
            Err(PotError::NonPositiveScale(_))
        ));
        assert!(compute_exponent(1.0, -2.0, 3).is_err());
    }

    #[test]
    fn exponent_rounds_in_log_domain() {
        // 2^1.5 is the boundary between E=1 and E=2
        let mid = 2f64.powf(1.5);
        assert_eq!(compute_exponent(mid * 0.999, 1.0, 3).unwrap(), 1);
        assert_eq!(compute_exponent(mid * 1.001, 1.0, 3).unwrap(), 2);
        // the largest double below the boundary still rounds down
        let sqrt2 = std::f64::consts::SQRT_2;
        let below = f64::from_bits(sqrt2.to_bits() - 1);
        assert_eq!(compute_exponent(sqrt2, 1.0, 3).unwrap(), 1);
        assert_eq!(compute_exponent(below, 1.0, 3).unwrap(), 0);
        assert!(below < 2f64.sqrt() && 2.0 < sqrt2 * sqrt2);
    }

    #[test]
    fn thresholds_agree_with_log2_away_from_boundaries() {
        for k in 0..20_000 {
            let r = 0.01 * 1.001f64.powi(k);
            for q_max in [1u8, 3, 7] {
                let log_rule = r.log2().round().clamp(0.0, q_max as f64) as u8;
                assert_eq!(exponent_unchecked(r, 1.0, q_max), log_rule, "r = {r}");
            }
        }
    }

    #[test]
    fn clamp_flags() {
        assert_eq!(exponent_and_clamp(0.0, 1.0, 3), (0, true));
        assert_eq!(exponent_and_clamp(0.5, 1.0, 3), (0, true));
        assert_eq!(exponent_and_clamp(0.75, 1.0, 3), (0, false));
        assert_eq!(exponent_and_clamp(11.0, 1.0, 3), (3, false));
        assert_eq!(exponent_and_clamp(12.0, 1.0, 3), (3, true));
    }

    #[test]
    fn reconstruct_examples() {
        assert_eq!(reconstruct(0.25, false, 2), 1.0);
        assert_eq!(reconstruct(1.0, true, 0), -1.0);
        assert_eq!(reconstruct(0.5, false, 3), 4.0);
    }

    #[test]
    fn group_loss_examples() {
        assert_eq!(group_loss(&[1.0, 2.0, 4.0, 8.0], 1.0, 3).unwrap(), 0.0);
        let s = 0.375;
        assert_eq!(group_loss(&[0.0, 0.0], s, 3).unwrap(), 2.0 * s * s);
        assert_eq!(group_loss(&[0.7], 0.7, 1).unwrap(), 0.0);
        assert_eq!(group_loss(&[-3.0], 1.0, 3).unwrap(), 1.0);
        assert!(group_loss(&[1.0], 0.0, 3).is_err());
    }

    #[test]
    fn slot_layout() {
        let b3 = BitWidth::new(3).unwrap();
        assert_eq!(Code::new(true, 3).to_slot(b3), 0b111);
        assert_eq!(Code::new(false, 2).to_slot(b3), 0b010);
        assert_eq!(Code::new(true, 0).to_slot(b3), 0b100);
        for bits in 2..=4 {
            let b = BitWidth::new(bits).unwrap();
            for slot in 0..b.slot_count() as u8 {
                assert_eq!(Code::from_slot(slot, b).to_slot(b), slot);
            }
        }
    }

    #[test]
    fn sign_of_zero_is_positive() {
        let c = Code::quantize(-0.0, 1.0, 3).unwrap();
        assert!(!c.negative);
        assert_eq!(c.exponent, 0);
        assert!(Code::quantize(-2.0, 1.0, 3).unwrap().negative);
    }
}
