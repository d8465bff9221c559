use half::f16;
use potq_core::kernel::{assemble_signed_exponent, dequant_code, max_scale, scale_is_valid};
use potq_core::{BitWidth, Half};

/// `±s * 2^E` rounded by an independent FP16 implementation.
fn oracle(slot: u8, bits: BitWidth, scale: Half) -> u16 {
    let n = bits.get();
    let negative = slot >> (n - 1) == 1;
    let e = slot & ((1 << (n - 1)) - 1);
    let s = f16::from_bits(scale.to_bits()).to_f64();
    let v = s * f64::powi(2.0, e as i32) * if negative { -1.0 } else { 1.0 };
    f16::from_f64(v).to_bits()
}

#[test]
fn every_valid_scale_and_slot() {
    for n in 2..=4 {
        let bits = BitWidth::new(n).unwrap();
        let mut checked = 0usize;
        for raw in 0..=u16::MAX {
            let scale = Half::from_bits(raw);
            if !scale_is_valid(scale, bits.q_max()) {
                continue;
            }
            for slot in 0..bits.slot_count() as u8 {
                let got = dequant_code(slot, bits, scale).to_bits();
                assert_eq!(
                    got,
                    oracle(slot, bits, scale),
                    "n={n} scale={raw:#06x} slot={slot:#b}"
                );
            }
            checked += 1;
        }
        // positive normals with exponent field 1..=30-q_max
        assert_eq!(checked, (30 - bits.q_max() as usize) * 1024);
    }
}

#[test]
fn validity_is_exactly_the_headroom_rule() {
    for n in 2..=4 {
        let bits = BitWidth::new(n).unwrap();
        for raw in 0..=u16::MAX {
            let h = Half::from_bits(raw);
            let expect = h.sign() == 0
                && h.exponent_field() >= 1
                && h.exponent_field() as u32 + bits.q_max() as u32 <= 30;
            assert_eq!(scale_is_valid(h, bits.q_max()), expect, "{raw:#06x}");
        }
    }
}

#[test]
fn addition_never_reaches_sign_or_infinity() {
    for n in 2..=4 {
        let bits = BitWidth::new(n).unwrap();
        let top = max_scale(bits.q_max());
        assert_eq!(top.exponent_field() as u32, 30 - bits.q_max() as u32);
        for slot in 0..bits.slot_count() as u8 {
            let r = dequant_code(slot, bits, top);
            assert!(r.is_finite());
            assert!(r.exponent_field() <= 30);
            assert_eq!(r.sign() as u8, slot >> (n - 1));
            let addend = assemble_signed_exponent(slot, bits);
            assert_eq!(addend & 0x03FF, 0, "mantissa bits untouched");
        }
    }
}
