//! PoT dequantization on raw FP16 bit patterns.
//!
//! A code slot `S E..E` is turned into the 16-bit addend `(S << 15) | (E << 10)`
//! and added to the scale's bit pattern. Adding `E << 10` increments the
//! exponent field by `E`, i.e. multiplies by `2^E`; adding `1 << 15` sets the
//! (clear) sign bit. The mantissa passes through untouched, so the result is
//! exactly `±s * 2^E` as long as the scale is a positive normal with
//! `exponent_field + q_max <= 30`.

mod packed;
pub mod potq;

pub use packed::{slots_per_word, words_for, PackedCodes};

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{PotError, Result};
use crate::fp16::{Half, MAX_FINITE_EXPONENT_FIELD};
use crate::pot::{BitWidth, QuantizedMatrix, UniformQuantized};
use crate::tensor::Tensor;

/// Width of the intermediate signed-exponent field: sign at bit 5, exponent
/// in the low bits.
const SIGNED_EXPONENT_SIGN_BIT: u32 = 5;
/// Shift that aligns the signed-exponent field with FP16 bits 15 and 14..10.
const FP16_EXPONENT_SHIFT: u32 = 10;

/// True iff `scale` is a positive normal whose exponent field leaves room for
/// `q_max` more.
#[inline]
pub fn scale_is_valid(scale: Half, q_max: u8) -> bool {
    scale.is_normal_positive() && scale.exponent_field() + q_max as u16 <= MAX_FINITE_EXPONENT_FIELD
}

pub fn check_scale(scale: Half, q_max: u8) -> Result<()> {
    if !scale.is_normal_positive() {
        return Err(PotError::InvalidScale {
            bits: scale.to_bits(),
            reason: "scale must be a positive normal half",
        });
    }
    if !scale_is_valid(scale, q_max) {
        return Err(PotError::InvalidScale {
            bits: scale.to_bits(),
            reason: "exponent field leaves no headroom for the largest code",
        });
    }
    Ok(())
}

/// Largest scale that still satisfies the headroom rule.
pub fn max_scale(q_max: u8) -> Half {
    Half::compose(0, MAX_FINITE_EXPONENT_FIELD - q_max as u16, 0x3FF)
}

/// Builds the 16-bit addend for an n-bit slot.
#[inline]
pub fn assemble_signed_exponent(slot: u8, bits: BitWidth) -> u16 {
    let slot = slot as u16;
    // exponent bits: AND with 0..011
    let exponent = slot & bits.exponent_mask() as u16;
    // move the slot's sign bit up to bit 5 and isolate it with 100000
    let sign =
        (slot << (SIGNED_EXPONENT_SIGN_BIT + 1 - bits.get())) & (1 << SIGNED_EXPONENT_SIGN_BIT);
    // S0000E..E, then onto FP16 bit 15 and the exponent field
    let signed_exponent = sign | exponent;
    signed_exponent << FP16_EXPONENT_SHIFT
}

/// Dequantizes one slot with a single 16-bit integer addition.
#[inline]
pub fn dequant_code(slot: u8, bits: BitWidth, scale: Half) -> Half {
    debug_assert!(
        scale_is_valid(scale, bits.q_max()),
        "invalid scale {scale:?}"
    );
    Half::from_bits(
        scale
            .to_bits()
            .wrapping_add(assemble_signed_exponent(slot, bits)),
    )
}

/// `±s * 2^E` computed through decode, float multiply and re-encode.
pub fn dequant_code_reference(slot: u8, bits: BitWidth, scale: Half) -> Half {
    let code = crate::pot::Code::from_slot(slot, bits);
    Half::encode(crate::pot::reconstruct(
        scale.decode(),
        code.negative,
        code.exponent,
    ))
}

fn dequant_rows<F>(q: &QuantizedMatrix, f: F) -> Vec<Half>
where
    F: Fn(u8, BitWidth, Half) -> Half + Sync,
{
    let (rows, cols) = (q.d_out(), q.d_in());
    let layout = q.layout();
    let bits = q.bits();
    let mut out = vec![Half::ZERO; rows * cols];
    out.par_chunks_mut(cols).enumerate().for_each(|(i, row)| {
        let g = layout.group_of_row(i);
        for (j, dst) in row.iter_mut().enumerate() {
            let slot = q.columns()[j].slot(i);
            *dst = f(slot, bits, q.scales()[layout.scale_index(g, j)]);
        }
    });
    debug_assert!(rows > 0);
    out
}

/// Dequantizes the whole matrix with the integer-addition kernel.
pub fn dequant_matrix(q: &QuantizedMatrix) -> Tensor {
    let data = dequant_rows(q, dequant_code);
    Tensor::from_f16(vec![q.d_out(), q.d_in()], data).expect("dequantized values are finite")
}

/// Same as [`dequant_matrix`] through the floating-point reference path.
pub fn dequant_matrix_reference(q: &QuantizedMatrix) -> Tensor {
    let data = dequant_rows(q, dequant_code_reference);
    Tensor::from_f16(vec![q.d_out(), q.d_in()], data).expect("dequantized values are finite")
}

/// `(q + Z) * S` per element in `f32`, rounded to FP16.
pub fn dequant_uniform(u: &UniformQuantized) -> Tensor {
    let (rows, cols) = (u.layout.d_out(), u.layout.d_in());
    let scales: Vec<(f32, f32)> = u
        .groups
        .iter()
        .map(|g| (g.scale.to_f32(), g.zero as f32))
        .collect();
    let mut out = vec![Half::ZERO; rows * cols];
    out.par_chunks_mut(cols).enumerate().for_each(|(i, row)| {
        let g = u.layout.group_of_row(i);
        for (j, dst) in row.iter_mut().enumerate() {
            let (s, z) = scales[u.layout.scale_index(g, j)];
            let code = u.columns[j].slot(i) as f32;
            *dst = Half::from_f32((code + z) * s);
        }
    });
    Tensor::from_f16(vec![rows, cols], out).expect("uniform dequantization stays finite")
}

/// `X · dequant(q)` with `f32` accumulation. `x` is `m x d_out`.
pub fn gemm_dequant(q: &QuantizedMatrix, x: &Tensor) -> Result<Tensor> {
    let (m, k) = x.shape2()?;
    if k != q.d_out() {
        return Err(PotError::DimensionMismatch(format!(
            "input has {k} columns, weight has {} rows",
            q.d_out()
        )));
    }
    let w: Vec<f32> = dequant_matrix(q).to_f32_vec();
    let w = ArrayView2::from_shape((q.d_out(), q.d_in()), &w).expect("shape checked");
    let xs = x.to_f32_vec();
    let xs = ArrayView2::from_shape((m, k), &xs).expect("shape checked");
    let y: Array2<f32> = xs.dot(&w);
    Tensor::from_f32(vec![m, q.d_in()], y.iter().copied().collect())
}
