//! Asymmetric uniform round-to-nearest quantization, the baseline whose
//! dequantization is `(q + Z) * S` in floating point.

use crate::error::{PotError, Result};
use crate::fp16::Half;
use crate::kernel::PackedCodes;
use crate::tensor::{GroupLayout, Tensor};

use super::BitWidth;

/// Scale and zero point of one group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformGroup {
    pub scale: Half,
    pub zero: i32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniformQuantized {
    pub layout: GroupLayout,
    pub bits: BitWidth,
    /// Column-major group order, as for [`super::QuantizedMatrix`].
    pub groups: Vec<UniformGroup>,
    /// Raw n-bit codes in `0..2^n`, one packed column each.
    pub columns: Vec<PackedCodes>,
}

impl UniformQuantized {
    pub fn group(&self, row: usize, column: usize) -> UniformGroup {
        self.groups[self.layout.scale_index_of(row, column)]
    }

    pub fn code(&self, row: usize, column: usize) -> u8 {
        self.columns[column].slot(row)
    }
}

/// Scale/zero point for a group. A constant group `c != 0` gets `S = |c|`
/// and `Z = sign(c)`, so it reconstructs exactly; an all-zero group gets
/// `S = 1`, `Z = 0`.
pub(crate) fn uniform_params(values: &[f64], bits: BitWidth) -> UniformGroup {
    let levels = (bits.slot_count() - 1) as f64;
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let raw = if hi > lo {
        (hi - lo) / levels
    } else {
        lo.abs()
    };
    let mut scale = Half::encode(raw);
    if !scale.is_normal_positive() {
        scale = if raw > 1.0 {
            Half::MAX
        } else if raw == 0.0 {
            Half::ONE
        } else {
            Half::MIN_POSITIVE_NORMAL
        };
    }
    let zero = (lo / scale.decode()).round() as i32;
    UniformGroup { scale, zero }
}

/// Per-group asymmetric RTN: `S = (max - min) / (2^n - 1)`, `Z = round(min / S)`,
/// `q = clamp(round(w / S) - Z, 0, 2^n - 1)`. `S` is stored as FP16 and all
/// rounding is to nearest, ties away from zero.
pub fn quantize_rtn_uniform(
    w: &Tensor,
    bits: BitWidth,
    group_size: usize,
) -> Result<UniformQuantized> {
    let (rows, cols) = w.shape2()?;
    let layout = GroupLayout::new(rows, cols, group_size)?;
    let levels = bits.slot_count() as i64 - 1;
    let mut groups = Vec::with_capacity(layout.num_groups());
    let mut columns = Vec::with_capacity(cols);
    for j in 0..cols {
        let mut slots = Vec::with_capacity(rows);
        for g in 0..layout.groups_per_column() {
            let values = layout.group_values(w, g, j);
            let p = uniform_params(&values, bits);
            let s = p.scale.decode();
            for v in values {
                let q = (v / s).round() as i64 - p.zero as i64;
                slots.push(q.clamp(0, levels) as u8);
            }
            groups.push(p);
        }
        columns.push(PackedCodes::pack_slots(&slots, bits)?);
    }
    if groups.iter().any(|g| !g.scale.decode().is_finite()) {
        return Err(PotError::NonFiniteIntermediate("uniform scale"));
    }
    Ok(UniformQuantized {
        layout,
        bits,
        groups,
        columns,
    })
}
