use rayon::prelude::*;

use crate::error::{PotError, Result};
use crate::fp16::Half;
use crate::kernel::{scale_is_valid, PackedCodes};
use crate::tensor::{GroupLayout, Tensor};

use super::{group_loss_unchecked, Code, QuantConfig, QuantizedMatrix};

/// Outcome of the scale search for one group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupScale {
    /// The FP16 scale stored for the group.
    pub scale: Half,
    /// Selected grid multiplier.
    pub b_star: f64,
    /// Reconstruction error at `scale`.
    pub q1: f64,
}

/// `max|w| / (2^q_max - 1)`.
pub fn base_scale(w_group: &[f64], q_max: u8) -> f64 {
    let max_abs = w_group.iter().fold(0.0f64, |m, &w| m.max(w.abs()));
    max_abs / ((1u32 << q_max) - 1) as f64
}

/// The FP16 scale for `s0 * b`, or `None` when it would break the kernel's
/// exponent headroom. Scales below the smallest normal are raised to it.
pub fn candidate_scale(s0: f64, b: f64, q_max: u8) -> Option<Half> {
    let h = Half::encode(s0 * b);
    let h = if h.to_bits() < Half::MIN_POSITIVE_NORMAL.to_bits() {
        Half::MIN_POSITIVE_NORMAL
    } else {
        h
    };
    scale_is_valid(h, q_max).then_some(h)
}

/// Grid search for the group scale minimizing `‖w - w̃(b)‖²`.
///
/// Candidates are `s0 * b` for `b = grid_step * i`, `i = 1..=grid_count`,
/// each rounded to FP16 before evaluation so the reported loss is the one
/// the dequantization kernel reproduces. The first strictly smaller loss
/// wins, so ties resolve to the smallest multiplier.
pub fn search_group_scale(w_group: &[f64], cfg: &QuantConfig) -> Result<GroupScale> {
    if w_group.is_empty() {
        return Err(PotError::InvalidShape("empty group".into()));
    }
    let q_max = cfg.q_max();
    let s0 = base_scale(w_group, q_max);
    let mut best: Option<GroupScale> = None;
    for b in cfg.multipliers() {
        let Some(scale) = candidate_scale(s0, b, q_max) else {
            continue;
        };
        let q1 = group_loss_unchecked(w_group, scale.decode(), q_max);
        if best.map_or(true, |cur| q1 < cur.q1) {
            best = Some(GroupScale {
                scale,
                b_star: b,
                q1,
            });
        }
    }
    best.ok_or(PotError::ScaleOutOfRange {
        group: 0,
        column: 0,
        max_abs: s0 * ((1u32 << q_max) - 1) as f64,
    })
}

/// The scale with multiplier fixed at `b = 1`, i.e. without grid search.
pub fn naive_group_scale(w_group: &[f64], cfg: &QuantConfig) -> Result<GroupScale> {
    if w_group.is_empty() {
        return Err(PotError::InvalidShape("empty group".into()));
    }
    let q_max = cfg.q_max();
    let s0 = base_scale(w_group, q_max);
    let scale = candidate_scale(s0, 1.0, q_max).ok_or(PotError::ScaleOutOfRange {
        group: 0,
        column: 0,
        max_abs: s0 * ((1u32 << q_max) - 1) as f64,
    })?;
    Ok(GroupScale {
        scale,
        b_star: 1.0,
        q1: group_loss_unchecked(w_group, scale.decode(), q_max),
    })
}

fn layout_for(w: &Tensor, cfg: &QuantConfig) -> Result<GroupLayout> {
    cfg.validate()?;
    let (rows, cols) = w.shape2()?;
    GroupLayout::new(rows, cols, cfg.group_size)
}

fn per_group<F>(w: &Tensor, cfg: &QuantConfig, f: F) -> Result<Vec<GroupScale>>
where
    F: Fn(&[f64], &QuantConfig) -> Result<GroupScale> + Sync,
{
    let layout = layout_for(w, cfg)?;
    let gpc = layout.groups_per_column();
    // index order == scale order, so the collected result is independent of
    // the schedule
    (0..layout.num_groups())
        .into_par_iter()
        .map(|idx| {
            let (column, group) = (idx / gpc, idx % gpc);
            let values = layout.group_values(w, group, column);
            f(&values, cfg).map_err(|e| match e {
                PotError::ScaleOutOfRange { max_abs, .. } => PotError::ScaleOutOfRange {
                    group,
                    column,
                    max_abs,
                },
                other => other,
            })
        })
        .collect()
}

/// Runs [`search_group_scale`] on every group of `w`, in scale order.
pub fn search_all_groups(w: &Tensor, cfg: &QuantConfig) -> Result<Vec<GroupScale>> {
    per_group(w, cfg, search_group_scale)
}

/// Encodes `w` with the given per-group scales.
pub fn quantize_with_scales(
    w: &Tensor,
    layout: GroupLayout,
    bits: super::BitWidth,
    scales: Vec<Half>,
) -> Result<QuantizedMatrix> {
    layout.check_matrix(w)?;
    if scales.len() != layout.num_groups() {
        return Err(PotError::DimensionMismatch(format!(
            "{} scales for {} groups",
            scales.len(),
            layout.num_groups()
        )));
    }
    let q_max = bits.q_max();
    for &s in &scales {
        crate::kernel::check_scale(s, q_max)?;
    }
    let d_in = layout.d_in();
    let columns = (0..d_in)
        .into_par_iter()
        .map(|j| {
            let codes: Vec<Code> = (0..layout.d_out())
                .map(|i| {
                    let s = scales[layout.scale_index_of(i, j)].decode();
                    Code::quantize(w.get_flat(i * d_in + j), s, q_max)
                })
                .collect::<Result<_>>()?;
            PackedCodes::pack(&codes, bits)
        })
        .collect::<Result<Vec<_>>>()?;
    QuantizedMatrix::new(layout, bits, scales, columns)
}

/// Data-agnostic quantization: grid-searched scale per group, then codes.
pub fn quantize_step1(w: &Tensor, cfg: &QuantConfig) -> Result<QuantizedMatrix> {
    let layout = layout_for(w, cfg)?;
    let scales = search_all_groups(w, cfg)?
        .into_iter()
        .map(|g| g.scale)
        .collect();
    quantize_with_scales(w, layout, cfg.bits, scales)
}

/// Quantization with `b = 1` for every group (no scale search).
pub fn quantize_naive(w: &Tensor, cfg: &QuantConfig) -> Result<QuantizedMatrix> {
    let layout = layout_for(w, cfg)?;
    let scales = per_group(w, cfg, naive_group_scale)?
        .into_iter()
        .map(|g| g.scale)
        .collect();
    quantize_with_scales(w, layout, cfg.bits, scales)
}
