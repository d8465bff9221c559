//! IEEE 754 binary16 codec.
//!
//! A [`Half`] is a raw 16-bit pattern `S EEEEE MMMMMMMMMM` (sign, 5-bit
//! exponent with bias 15, 10-bit mantissa). Conversion from `f64` rounds to
//! nearest with ties to even; conversion to `f64` is exact for every pattern.
//! No arithmetic is defined on `Half`: the dequantization kernel operates on
//! the raw bits directly.

use std::fmt;

pub const EXPONENT_BIAS: i32 = 15;
pub const MANTISSA_BITS: u32 = 10;
pub const EXPONENT_MASK: u16 = 0x7C00;
pub const MANTISSA_MASK: u16 = 0x03FF;
pub const SIGN_MASK: u16 = 0x8000;

/// Largest exponent field of a finite value.
pub const MAX_FINITE_EXPONENT_FIELD: u16 = 30;

/// A half-precision value stored as its bit pattern.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
#[repr(transparent)]
pub struct Half(u16);

impl Half {
    pub const ZERO: Half = Half(0x0000);
    pub const NEG_ZERO: Half = Half(0x8000);
    pub const ONE: Half = Half(0x3C00);
    pub const INFINITY: Half = Half(0x7C00);
    pub const NEG_INFINITY: Half = Half(0xFC00);
    /// Canonical quiet NaN produced by [`Half::encode`].
    pub const NAN: Half = Half(0x7E00);
    /// Smallest positive normal value, 2^-14.
    pub const MIN_POSITIVE_NORMAL: Half = Half(0x0400);
    /// Largest finite value, 65504.
    pub const MAX: Half = Half(0x7BFF);

    #[inline]
    pub const fn from_bits(bits: u16) -> Self {
        Half(bits)
    }

    #[inline]
    pub const fn to_bits(self) -> u16 {
        self.0
    }

    /// Builds a pattern from its three fields. Out-of-range fields are masked.
    #[inline]
    pub const fn compose(sign: u16, exponent: u16, mantissa: u16) -> Self {
        Half(((sign & 1) << 15) | ((exponent & 0x1F) << 10) | (mantissa & MANTISSA_MASK))
    }

    /// Splits the pattern into `(sign, exponent_field, mantissa)`.
    #[inline]
    pub const fn decompose(self) -> (u16, u16, u16) {
        (self.sign(), self.exponent_field(), self.mantissa())
    }

    #[inline]
    pub const fn sign(self) -> u16 {
        self.0 >> 15
    }

    #[inline]
    pub const fn exponent_field(self) -> u16 {
        (self.0 & EXPONENT_MASK) >> MANTISSA_BITS
    }

    #[inline]
    pub const fn mantissa(self) -> u16 {
        self.0 & MANTISSA_MASK
    }

    #[inline]
    pub const fn is_finite(self) -> bool {
        self.exponent_field() != 0x1F
    }

    #[inline]
    pub const fn is_nan(self) -> bool {
        self.exponent_field() == 0x1F && self.mantissa() != 0
    }

    /// True iff the sign is clear and the exponent field is in `1..=30`.
    #[inline]
    pub const fn is_normal_positive(self) -> bool {
        let e = self.exponent_field();
        self.sign() == 0 && e > 0 && e < 0x1F
    }

    /// Rounds `x` to the nearest representable half, ties to even.
    ///
    /// Magnitudes at or beyond 65520 become infinity; magnitudes below half
    /// the smallest subnormal become a zero of the same sign. Every NaN maps
    /// to [`Half::NAN`].
    pub fn encode(x: f64) -> Half {
        if x.is_nan() {
            return Half::NAN;
        }
        let sign = if x.is_sign_negative() { SIGN_MASK } else { 0 };
        let abs = x.abs();
        if abs.is_infinite() {
            return Half(sign | EXPONENT_MASK);
        }

        // Unbiased binary exponent of `abs`; f64 subnormals are far below the
        // half subnormal range and are treated as such.
        let biased = ((abs.to_bits() >> 52) & 0x7FF) as i32;
        let exp = if biased == 0 { -1023 } else { biased - 1023 };

        // The spacing of half values in this binade. Below 2^-14 all
        // subnormals share the spacing 2^-24.
        let quantum_exp = exp.max(1 - EXPONENT_BIAS) - MANTISSA_BITS as i32;
        let scaled = abs * pow2(-quantum_exp);
        let steps = scaled.round_ties_even() as u32;

        // `steps` counts quanta including the implicit leading bit, so adding
        // the field offset yields a contiguous encoding: a carry out of the
        // mantissa bumps the exponent, and a carry out of the top binade
        // lands on the infinity pattern.
        let bits = if exp < 1 - EXPONENT_BIAS {
            steps
        } else {
            let field = (exp + EXPONENT_BIAS) as u32;
            (field << MANTISSA_BITS) + steps - (1 << MANTISSA_BITS)
        };
        if bits >= EXPONENT_MASK as u32 {
            Half(sign | EXPONENT_MASK)
        } else {
            Half(sign | bits as u16)
        }
    }

    /// Exact value of the pattern. NaN patterns decode to `f64::NAN`.
    pub fn decode(self) -> f64 {
        let (s, e, m) = self.decompose();
        let magnitude = match e {
            0 => m as f64 * pow2(-24),
            0x1F if m == 0 => f64::INFINITY,
            0x1F => return f64::NAN,
            _ => (m as f64 + 1024.0) * pow2(e as i32 - EXPONENT_BIAS - MANTISSA_BITS as i32),
        };
        if s == 1 {
            -magnitude
        } else {
            magnitude
        }
    }

    #[inline]
    pub fn from_f32(x: f32) -> Half {
        Half::encode(x as f64)
    }

    /// Decoded value as `f32`; exact, since every half is an `f32`.
    #[inline]
    pub fn to_f32(self) -> f32 {
        self.decode() as f32
    }
}

/// Exact `2^k` for `k` in the normal `f64` exponent range.
#[inline]
pub(crate) fn pow2(k: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&k));
    f64::from_bits(((k + 1023) as u64) << 52)
}

impl fmt::Debug for Half {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Half({:#06x} = {})", self.0, self.decode())
    }
}

impl fmt::Display for Half {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.decode(), f)
    }
}

impl From<Half> for f64 {
    fn from(h: Half) -> f64 {
        h.decode()
    }
}

impl From<Half> for f32 {
    fn from(h: Half) -> f32 {
        h.to_f32()
    }
}
