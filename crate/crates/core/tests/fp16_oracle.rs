use half::f16;
use potq_core::Half;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn decode_agrees_on_every_pattern() {
    for raw in 0..=u16::MAX {
        let ours = Half::from_bits(raw).decode();
        let theirs = f16::from_bits(raw).to_f64();
        if theirs.is_nan() {
            assert!(ours.is_nan(), "{raw:#06x}");
        } else {
            assert_eq!(ours.to_bits(), theirs.to_bits(), "{raw:#06x}");
        }
    }
}

/// Nearest half by exact distance comparison, ties to even. The `half`
/// crate's own `from_f64` is not used here since it can round twice.
fn nearest_half(x: f64) -> u16 {
    let sign = if x.is_sign_negative() { 0x8000 } else { 0 };
    let a = x.abs();
    if a >= 65520.0 {
        return sign | 0x7C00;
    }
    // largest non-negative finite half <= a; positive halves order like their bits
    let (mut lo, mut hi) = (0u16, 0x7BFFu16);
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if f16::from_bits(mid).to_f64() <= a {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let below = lo;
    if f16::from_bits(below).to_f64() == a || below == 0x7BFF {
        return sign | below;
    }
    let above = below + 1;
    // both differences are exact in f64
    let d_lo = a - f16::from_bits(below).to_f64();
    let d_hi = f16::from_bits(above).to_f64() - a;
    let pick = if d_lo < d_hi {
        below
    } else if d_hi < d_lo {
        above
    } else if below % 2 == 0 {
        below
    } else {
        above
    };
    sign | pick
}

#[test]
fn oracle_sanity() {
    assert_eq!(nearest_half(1.0), 0x3C00);
    assert_eq!(nearest_half(65504.0), 0x7BFF);
    assert_eq!(nearest_half(65519.99), 0x7BFF);
    assert_eq!(nearest_half(-1e6), 0xFC00);
    assert_eq!(nearest_half(1.7601251796659073e-4), 0x09C5);
}

#[test]
fn encode_agrees_on_random_doubles() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200_000 {
        // magnitudes from deep subnormal to past overflow
        let x =
            rng.random_range(-30.0..17.0f64).exp2() * if rng.random::<bool>() { 1.0 } else { -1.0 };
        assert_eq!(Half::encode(x).to_bits(), nearest_half(x), "{x:e}");
    }
}

#[test]
fn encode_agrees_on_halfway_points() {
    // midpoints between neighbouring halves exercise ties-to-even
    for raw in 0..0x7BFFu16 {
        let lo = f16::from_bits(raw).to_f64();
        let hi = f16::from_bits(raw + 1).to_f64();
        let mid = (lo + hi) / 2.0;
        assert_eq!(Half::encode(mid).to_bits(), nearest_half(mid), "{raw:#06x}");
        assert_eq!(
            Half::encode(-mid).to_bits(),
            nearest_half(-mid),
            "-{raw:#06x}"
        );
    }
}

#[test]
fn from_f32_agrees() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100_000 {
        let x = f32::from_bits(rng.random::<u32>());
        if x.is_nan() {
            continue;
        }
        assert_eq!(
            Half::from_f32(x).to_bits(),
            f16::from_f32(x).to_bits(),
            "{x:e}"
        );
    }
}
