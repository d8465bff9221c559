use crate::error::{PotError, Result};
use crate::fp16::Half;
use crate::kernel::{check_scale, PackedCodes};
use crate::tensor::GroupLayout;

use super::{reconstruct, BitWidth, Code};

/// A weight matrix in PoT form: one FP16 scale per (group, column) and one
/// packed n-bit code per weight, stored column by column.
///
/// Every scale is positive, normal and leaves `q_max` of exponent headroom,
/// so the integer-addition dequantization never overflows.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMatrix {
    layout: GroupLayout,
    bits: BitWidth,
    scales: Vec<Half>,
    columns: Vec<PackedCodes>,
}

impl QuantizedMatrix {
    pub fn new(
        layout: GroupLayout,
        bits: BitWidth,
        scales: Vec<Half>,
        columns: Vec<PackedCodes>,
    ) -> Result<Self> {
        if scales.len() != layout.num_groups() {
            return Err(PotError::DimensionMismatch(format!(
                "{} scales for {} groups",
                scales.len(),
                layout.num_groups()
            )));
        }
        if columns.len() != layout.d_in() {
            return Err(PotError::DimensionMismatch(format!(
                "{} code columns for {} columns",
                columns.len(),
                layout.d_in()
            )));
        }
        for col in &columns {
            if col.len() != layout.d_out() || col.bits() != bits {
                return Err(PotError::DimensionMismatch(format!(
                    "code column holds {} {}-bit codes, expected {} {}-bit codes",
                    col.len(),
                    col.bits().get(),
                    layout.d_out(),
                    bits.get()
                )));
            }
        }
        for &s in &scales {
            check_scale(s, bits.q_max())?;
        }
        Ok(QuantizedMatrix {
            layout,
            bits,
            scales,
            columns,
        })
    }

    pub fn layout(&self) -> &GroupLayout {
        &self.layout
    }

    pub fn bits(&self) -> BitWidth {
        self.bits
    }

    pub fn d_out(&self) -> usize {
        self.layout.d_out()
    }

    pub fn d_in(&self) -> usize {
        self.layout.d_in()
    }

    /// Scales in column-major group order.
    pub fn scales(&self) -> &[Half] {
        &self.scales
    }

    pub fn scale(&self, group: usize, column: usize) -> Half {
        self.scales[self.layout.scale_index(group, column)]
    }

    pub fn columns(&self) -> &[PackedCodes] {
        &self.columns
    }

    pub fn code(&self, row: usize, column: usize) -> Code {
        Code::from_slot(self.columns[column].slot(row), self.bits)
    }

    /// Reconstructed weight `s * p * 2^e` in `f64`.
    pub fn value(&self, row: usize, column: usize) -> f64 {
        let c = self.code(row, column);
        let s = self.scales[self.layout.scale_index_of(row, column)].decode();
        reconstruct(s, c.negative, c.exponent)
    }

    /// Row-major reconstruction in `f64`.
    pub fn to_f64_matrix(&self) -> Vec<f64> {
        let (r, c) = (self.d_out(), self.d_in());
        let mut out = vec![0.0; r * c];
        for j in 0..c {
            let codes = self.columns[j].unpack();
            for (i, code) in codes.iter().enumerate() {
                let s = self.scales[self.layout.scale_index_of(i, j)].decode();
                out[i * c + j] = reconstruct(s, code.negative, code.exponent);
            }
        }
        out
    }

    /// Code bits plus amortized FP16 scale bits per weight.
    pub fn bits_per_weight(&self) -> f64 {
        let n = (self.d_out() * self.d_in()) as f64;
        (self.bits.get() as f64 * n + 16.0 * self.scales.len() as f64) / n
    }

    /// Replaces the scales without touching the codes.
    pub fn with_scales(&self, scales: Vec<Half>) -> Result<Self> {
        QuantizedMatrix::new(self.layout, self.bits, scales, self.columns.clone())
    }

    /// Splits into consecutive row blocks of `rows` each. `rows` must be a
    /// multiple of the group size so no group straddles two blocks.
    pub fn split_rows(&self, rows: usize) -> Result<Vec<QuantizedMatrix>> {
        let g = self.layout.group_size();
        if rows == 0 || rows % g != 0 || self.d_out() % rows != 0 {
            return Err(PotError::DimensionMismatch(format!(
                "cannot split {} rows into blocks of {rows} with group size {g}",
                self.d_out()
            )));
        }
        let gpb = rows / g;
        let gpc = self.layout.groups_per_column();
        (0..self.d_out() / rows)
            .map(|k| {
                let layout = GroupLayout::new(rows, self.d_in(), g)?;
                let scales = (0..self.d_in())
                    .flat_map(|j| (k * gpb..(k + 1) * gpb).map(move |gi| j * gpc + gi))
                    .map(|idx| self.scales[idx])
                    .collect();
                let columns = self
                    .columns
                    .iter()
                    .map(|col| {
                        let codes = col.unpack();
                        PackedCodes::pack(&codes[k * rows..(k + 1) * rows], self.bits)
                    })
                    .collect::<Result<_>>()?;
                QuantizedMatrix::new(layout, self.bits, scales, columns)
            })
            .collect()
    }

    /// Inverse of [`QuantizedMatrix::split_rows`].
    pub fn stack_rows(parts: &[QuantizedMatrix]) -> Result<QuantizedMatrix> {
        let first = parts
            .first()
            .ok_or_else(|| PotError::InvalidShape("nothing to stack".into()))?;
        let (g, d_in, bits) = (first.layout.group_size(), first.d_in(), first.bits);
        for p in parts {
            if p.layout.group_size() != g
                || p.d_in() != d_in
                || p.bits != bits
                || p.d_out() % g != 0
            {
                return Err(PotError::DimensionMismatch(
                    "stacked parts must share group size, width and bit-width, with whole groups"
                        .into(),
                ));
            }
        }
        let d_out = parts.iter().map(|p| p.d_out()).sum();
        let layout = GroupLayout::new(d_out, d_in, g)?;
        let mut scales = Vec::with_capacity(layout.num_groups());
        let mut columns = Vec::with_capacity(d_in);
        for j in 0..d_in {
            let mut codes = Vec::with_capacity(d_out);
            for p in parts {
                let gpc = p.layout.groups_per_column();
                scales.extend_from_slice(&p.scales[j * gpc..(j + 1) * gpc]);
                codes.extend(p.columns[j].unpack());
            }
            columns.push(PackedCodes::pack(&codes, bits)?);
        }
        QuantizedMatrix::new(layout, bits, scales, columns)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pot::{quantize_step1, QuantConfig};
    use crate::tensor::Tensor;

    fn sample(rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols)
            .map(|k| ((k * 7919 % 101) as f32 - 50.0) / 17.0)
            .collect();
        Tensor::from_f32(vec![rows, cols], data).unwrap()
    }

    #[test]
    fn split_then_stack_is_identity() {
        let w = sample(12, 3);
        let q = quantize_step1(&w, &QuantConfig::new(3, 2).unwrap()).unwrap();
        let parts = q.split_rows(4).unwrap();
        assert_eq!(parts.len(), 3);
        assert_eq!(parts[1].value(0, 2), q.value(4, 2));
        assert_eq!(QuantizedMatrix::stack_rows(&parts).unwrap(), q);
    }

    #[test]
    fn split_equals_quantizing_blocks() {
        let w = sample(8, 2);
        let cfg = QuantConfig::new(2, 4).unwrap();
        let q = quantize_step1(&w, &cfg).unwrap();
        let lower = Tensor::from_f32(vec![4, 2], w.to_f32_vec()[8..].to_vec()).unwrap();
        assert_eq!(
            q.split_rows(4).unwrap()[1],
            quantize_step1(&lower, &cfg).unwrap()
        );
    }

    #[test]
    fn split_rejects_straddling_groups() {
        let q = quantize_step1(&sample(8, 1), &QuantConfig::new(2, 4).unwrap()).unwrap();
        assert!(q.split_rows(2).is_err());
        assert!(q.split_rows(3).is_err());
    }

    #[test]
    fn rejects_invalid_scales() {
        let q = quantize_step1(&sample(4, 1), &QuantConfig::new(4, 4).unwrap()).unwrap();
        assert!(q.with_scales(vec![Half::from_bits(0x03FF)]).is_err());
        assert!(q.with_scales(vec![Half::from_bits(0xBC00)]).is_err());
        // exponent field 24 + q_max 7 > 30
        assert!(q.with_scales(vec![Half::compose(0, 24, 0)]).is_err());
        assert!(q.with_scales(vec![Half::compose(0, 23, 0x3FF)]).is_ok());
    }

    #[test]
    fn bits_per_weight_counts_scales() {
        let q = quantize_step1(&sample(128, 2), &QuantConfig::new(3, 128).unwrap()).unwrap();
        assert_eq!(q.bits_per_weight(), 3.125);
    }
}
