//! Data-dependent refinement of group scales.
//!
//! Each group scale `S` gets a learnable residual `γ`, giving `Ŝ = S (1 + γ)`.
//! Every step recomputes the exponents from `Ŝ`, reconstructs the weights,
//! and takes a plain gradient step on
//! `‖F(W, X) - F(W̃(Γ), X)‖² + (λ/2) ‖Γ‖²`.
//! Rounding is bridged with a straight-through estimator; see [`GradMode`].

mod model;

pub use model::{
    block_forward, gelu, gelu_grad, linear_forward, softmax_rows, BlockWeights, Model,
};

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};

use crate::error::{PotError, Result};
use crate::fp16::Half;
use crate::kernel::max_scale;
use crate::pot::{
    exponent_and_clamp, quantize_with_scales, reconstruct, BitWidth, Code, QuantizedMatrix,
};
use crate::tensor::{GroupLayout, Tensor};

/// How `∂W̃/∂Ŝ` treats the exponent `E(Ŝ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradMode {
    /// `E` held constant within a step: `∂W̃/∂Ŝ = P 2^E`.
    #[default]
    DetachExponent,
    /// `∂E/∂Ŝ` replaced by `∂ log2(|W| / Ŝ) / ∂Ŝ` where the clamp is
    /// inactive. The two chain-rule terms then cancel, leaving gradient only
    /// on clamped weights.
    LiteralSte,
}

impl FromStr for GradMode {
    type Err = PotError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "detach-exponent" => Ok(GradMode::DetachExponent),
            "literal-ste" => Ok(GradMode::LiteralSte),
            other => Err(PotError::UnknownGradMode(other.to_string())),
        }
    }
}

impl fmt::Display for GradMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GradMode::DetachExponent => "detach-exponent",
            GradMode::LiteralSte => "literal-ste",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub grad_mode: GradMode,
}

impl CalibConfig {
    pub const DEFAULT_LR: f64 = 1e-3;
    pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-1;

    /// Defaults for a bit-width: 40 epochs at 2 bits, 10 otherwise.
    pub fn for_bits(bits: BitWidth) -> Self {
        CalibConfig {
            lr: Self::DEFAULT_LR,
            weight_decay: Self::DEFAULT_WEIGHT_DECAY,
            epochs: if bits.get() == 2 { 40 } else { 10 },
            grad_mode: GradMode::DetachExponent,
        }
    }

    /// `epochs == 0` is accepted and leaves the scales unchanged.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(PotError::InvalidConfig(format!(
                "learning rate must be >= 0, got {}",
                self.lr
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(PotError::InvalidConfig(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// One residual per (group, column), in scale order.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaResidual {
    layout: GroupLayout,
    values: Vec<f64>,
}

impl GammaResidual {
    pub fn zeros(layout: GroupLayout) -> Self {
        GammaResidual {
            layout,
            values: vec![0.0; layout.num_groups()],
        }
    }

    pub fn from_values(layout: GroupLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.num_groups() {
            return Err(PotError::DimensionMismatch(format!(
                "{} residuals for {} groups",
                values.len(),
                layout.num_groups()
            )));
        }
        Ok(GammaResidual { layout, values })
    }

    pub fn layout(&self) -> &GroupLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sum_sq(&self) -> f64 {
        self.values.iter().map(|g| g * g).sum()
    }
}

/// `Ŝ = S ∘ (1 + Γ)`.
pub fn adjust_scales(scales: &[f64], gamma: &GammaResidual) -> Result<Vec<f64>> {
    if scales.len() != gamma.values.len() {
        return Err(PotError::DimensionMismatch(format!(
            "{} scales, {} residuals",
            scales.len(),
            gamma.values.len()
        )));
    }
    scales
        .iter()
        .zip(&gamma.values)
        .map(|(&s, &g)| {
            let adj = s * (1.0 + g);
            if adj > 0.0 && adj.is_finite() {
                Ok(adj)
            } else {
                Err(PotError::NonPositiveScale(adj))
            }
        })
        .collect()
}

/// Weights reconstructed from fresh exponents under adjusted scales.
#[derive(Debug, Clone, PartialEq)]
pub struct Requantized {
    pub weights: Array2<f64>,
    /// Row-major codes.
    pub codes: Vec<Code>,
    /// Whether the clamp to `[0, q_max]` was active (zero weights included).
    pub clamped: Vec<bool>,
}

/// `E = clamp(round(log2(|W| / Ŝ)), 0, q_max)` and `W̃ = Ŝ P 2^E`.
pub fn requantize(
    w: ArrayView2<f64>,
    layout: &GroupLayout,
    scales: &[f64],
    q_max: u8,
) -> Result<Requantized> {
    if w.dim() != (layout.d_out(), layout.d_in()) || scales.len() != layout.num_groups() {
        return Err(PotError::DimensionMismatch(format!(
            "weight {:?} / {} scales do not match layout {}x{} (G={})",
            w.dim(),
            scales.len(),
            layout.d_out(),
            layout.d_in(),
            layout.group_size()
        )));
    }
    if let Some(&s) = scales.iter().find(|&&s| !(s > 0.0 && s.is_finite())) {
        return Err(PotError::NonPositiveScale(s));
    }
    let (rows, cols) = w.dim();
    let mut weights = Array2::zeros((rows, cols));
    let mut codes = Vec::with_capacity(rows * cols);
    let mut clamped = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let v = w[[i, j]];
            let s = scales[layout.scale_index_of(i, j)];
            let (e, was_clamped) = exponent_and_clamp(v.abs(), s, q_max);
            let code = Code::new(v < 0.0, e);
            weights[[i, j]] = reconstruct(s, code.negative, e);
            codes.push(code);
            clamped.push(was_clamped);
        }
    }
    Ok(Requantized {
        weights,
        codes,
        clamped,
    })
}

/// A weight matrix being calibrated: its full-precision values and the
/// Step-1 (or naive) scales that `Γ` adjusts.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantLayer {
    pub weight: Array2<f64>,
    pub layout: GroupLayout,
    pub bits: BitWidth,
    pub scales: Vec<f64>,
}

impl QuantLayer {
    pub fn new(weight: Array2<f64>, q: &QuantizedMatrix) -> Result<Self> {
        if weight.dim() != (q.d_out(), q.d_in()) {
            return Err(PotError::DimensionMismatch(format!(
                "weights are {:?}, quantized matrix is {}x{}",
                weight.dim(),
                q.d_out(),
                q.d_in()
            )));
        }
        Ok(QuantLayer {
            weight,
            layout: *q.layout(),
            bits: q.bits(),
            scales: q.scales().iter().map(|h| h.decode()).collect(),
        })
    }

    pub fn from_tensor(w: &Tensor, q: &QuantizedMatrix) -> Result<Self> {
        let (r, c) = w.shape2()?;
        let weight = Array2::from_shape_vec((r, c), w.to_f64_vec()).expect("shape checked");
        QuantLayer::new(weight, q)
    }

    pub fn q_max(&self) -> u8 {
        self.bits.q_max()
    }

    pub fn requantize(&self, gamma: &GammaResidual) -> Result<Requantized> {
        let adjusted = adjust_scales(&self.scales, gamma)?;
        requantize(self.weight.view(), &self.layout, &adjusted, self.q_max())
    }

    /// Admissible range of `γ` per group: keeps `Ŝ` a positive normal FP16
    /// value with exponent headroom.
    fn gamma_bounds(&self) -> Vec<(f64, f64)> {
        let lo = Half::MIN_POSITIVE_NORMAL.decode();
        let hi = max_scale(self.q_max()).decode();
        self.scales
            .iter()
            .map(|&s| (lo / s - 1.0, hi / s - 1.0))
            .collect()
    }
}

/// Data and regularizer parts of the calibration loss.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub data: f64,
    pub reg: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.data + self.reg
    }
}

fn reg_term(gammas: &[GammaResidual], weight_decay: f64) -> f64 {
    0.5 * weight_decay * gammas.iter().map(GammaResidual::sum_sq).sum::<f64>()
}

fn check_layers(model: Model, layers: &[QuantLayer], gammas: &[GammaResidual]) -> Result<()> {
    if layers.len() != model.num_weights() || gammas.len() != layers.len() {
        return Err(PotError::DimensionMismatch(format!(
            "model takes {} weights, got {} layers and {} residual sets",
            model.num_weights(),
            layers.len(),
            gammas.len()
        )));
    }
    Ok(())
}

/// `‖F(W, X) - F(W̃, X)‖_F² + (λ/2) ‖Γ‖_F²` for already reconstructed `W̃`.
pub fn loss_q2(
    model: Model,
    original: &[Array2<f64>],
    quantized: &[Array2<f64>],
    x: ArrayView3<f64>,
    gammas: &[GammaResidual],
    weight_decay: f64,
) -> Result<LossTerms> {
    let target = model.forward(original, x)?;
    let out = model.forward(quantized, x)?;
    Ok(LossTerms {
        data: (&out - &target).mapv(|d| d * d).sum(),
        reg: reg_term(gammas, weight_decay),
    })
}

/// Loss and `∂Q2/∂Γ` for one batch against a precomputed target output.
pub fn grad_gamma(
    model: Model,
    layers: &[QuantLayer],
    gammas: &[GammaResidual],
    x: ArrayView3<f64>,
    target: ArrayView3<f64>,
    weight_decay: f64,
    mode: GradMode,
) -> Result<(LossTerms, Vec<Vec<f64>>)> {
    check_layers(model, layers, gammas)?;
    let requantized: Vec<Requantized> = layers
        .iter()
        .zip(gammas)
        .map(|(l, g)| l.requantize(g))
        .collect::<Result<_>>()?;
    let weights: Vec<Array2<f64>> = requantized.iter().map(|r| r.weights.clone()).collect();
    let out = model.forward(&weights, x)?;
    if out.dim() != target.dim() {
        return Err(PotError::DimensionMismatch(format!(
            "output {:?} vs target {:?}",
            out.dim(),
            target.dim()
        )));
    }
    let diff = &out - &target;
    let terms = LossTerms {
        data: diff.mapv(|d| d * d).sum(),
        reg: reg_term(gammas, weight_decay),
    };
    let grad_out = diff * 2.0;
    let grad_w = model.backward(&weights, x, grad_out.view())?;

    let grads = layers
        .iter()
        .zip(gammas)
        .zip(requantized.iter().zip(&grad_w))
        .map(|((layer, gamma), (rq, gw))| {
            let layout = &layer.layout;
            let cols = layout.d_in();
            let mut g = vec![0.0; layout.num_groups()];
            for i in 0..layout.d_out() {
                for j in 0..cols {
                    let k = i * cols + j;
                    let code = rq.codes[k];
                    let factor = match mode {
                        GradMode::DetachExponent => 1.0,
                        GradMode::LiteralSte if rq.clamped[k] => 1.0,
                        GradMode::LiteralSte => 0.0,
                    };
                    // ∂W̃/∂γ = S · P · 2^E (· STE factor)
                    let idx = layout.scale_index_of(i, j);
                    let dw_dgamma =
                        reconstruct(layer.scales[idx], code.negative, code.exponent) * factor;
                    g[idx] += gw[[i, j]] * dw_dgamma;
                }
            }
            for (gi, &v) in g.iter_mut().zip(gamma.values()) {
                *gi += weight_decay * v;
            }
            g
        })
        .collect();
    Ok((terms, grads))
}

/// Loss after one epoch, summed over all calibration batches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
    pub data_term: f64,
    pub reg_term: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibOutcome {
    pub gammas: Vec<GammaResidual>,
    /// `Ŝ = S ∘ (1 + Γ)` per layer.
    pub refined_scales: Vec<Vec<f64>>,
    /// Loss at `Γ = 0`.
    pub initial: LossTerms,
    pub history: Vec<EpochLoss>,
}

impl CalibOutcome {
    pub fn final_loss(&self) -> LossTerms {
        self.history.last().map_or(self.initial, |e| LossTerms {
            data: e.data_term,
            reg: e.reg_term,
        })
    }

    /// Refined scales rounded to FP16.
    pub fn refined_halves(&self, layer: usize) -> Vec<Half> {
        self.refined_scales[layer]
            .iter()
            .map(|&s| Half::encode(s))
            .collect()
    }

    /// Re-encodes `w` with the refined scales of `layer`.
    pub fn to_quantized(
        &self,
        layer: usize,
        w: &Tensor,
        q: &QuantizedMatrix,
    ) -> Result<QuantizedMatrix> {
        quantize_with_scales(w, *q.layout(), q.bits(), self.refined_halves(layer))
    }
}

/// Full-set loss for the given residuals.
pub fn evaluate(
    model: Model,
    layers: &[QuantLayer],
    gammas: &[GammaResidual],
    batches: &[Array3<f64>],
    targets: &[Array3<f64>],
    weight_decay: f64,
) -> Result<LossTerms> {
    check_layers(model, layers, gammas)?;
    let weights: Vec<Array2<f64>> = layers
        .iter()
        .zip(gammas)
        .map(|(l, g)| l.requantize(g).map(|r| r.weights))
        .collect::<Result<_>>()?;
    let mut data = 0.0;
    for (x, t) in batches.iter().zip(targets) {
        let out = model.forward(&weights, x.view())?;
        data += (&out - t).mapv(|d| d * d).sum();
    }
    Ok(LossTerms {
        data,
        reg: reg_term(gammas, weight_decay),
    })
}

/// Full-precision outputs for each batch.
pub fn targets(
    model: Model,
    layers: &[QuantLayer],
    batches: &[Array3<f64>],
) -> Result<Vec<Array3<f64>>> {
    let original: Vec<Array2<f64>> = layers.iter().map(|l| l.weight.clone()).collect();
    batches
        .iter()
        .map(|x| model.forward(&original, x.view()))
        .collect()
}

/// Runs `epochs` passes of gradient descent over `batches`, one step per
/// batch: `Γ ← Γ - η ∇Q2`, then projects `Γ` so every adjusted scale stays a
/// valid FP16 kernel scale.
pub fn calibrate(
    model: Model,
    layers: &[QuantLayer],
    batches: &[Array3<f64>],
    cfg: &CalibConfig,
) -> Result<CalibOutcome> {
    cfg.validate()?;
    let mut gammas: Vec<GammaResidual> = layers
        .iter()
        .map(|l| GammaResidual::zeros(l.layout))
        .collect();
    check_layers(model, layers, &gammas)?;
    let targets = targets(model, layers, batches)?;
    let bounds: Vec<Vec<(f64, f64)>> = layers.iter().map(QuantLayer::gamma_bounds).collect();

    let initial = evaluate(model, layers, &gammas, batches, &targets, cfg.weight_decay)?;
    if !initial.total().is_finite() {
        return Err(PotError::Divergence {
            epoch: 0,
            batch: 0,
            loss: initial.total(),
        });
    }
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        for (bi, (x, t)) in batches.iter().zip(&targets).enumerate() {
            let (terms, grads) = grad_gamma(
                model,
                layers,
                &gammas,
                x.view(),
                t.view(),
                cfg.weight_decay,
                cfg.grad_mode,
            )?;
            let grad_finite = grads.iter().flatten().all(|g| g.is_finite());
            if !terms.total().is_finite() || !grad_finite {
                return Err(PotError::Divergence {
                    epoch,
                    batch: bi,
                    loss: terms.total(),
                });
            }
            for ((gamma, grad), bound) in gammas.iter_mut().zip(&grads).zip(&bounds) {
                for ((v, g), &(lo, hi)) in gamma.values.iter_mut().zip(grad).zip(bound) {
                    *v = (*v - cfg.lr * g).clamp(lo, hi);
                }
            }
        }
        let terms = evaluate(model, layers, &gammas, batches, &targets, cfg.weight_decay)?;
        if !terms.total().is_finite() {
            return Err(PotError::Divergence {
                epoch,
                batch: batches.len(),
                loss: terms.total(),
            });
        }
        history.push(EpochLoss {
            epoch,
            loss: terms.total(),
            data_term: terms.data,
            reg_term: terms.reg,
        });
    }
    let refined_scales = layers
        .iter()
        .zip(&gammas)
        .map(|(l, g)| adjust_scales(&l.scales, g))
        .collect::<Result<_>>()?;
    Ok(CalibOutcome {
        gammas,
        refined_scales,
        initial,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn one_by_one(w: f64, s: f64) -> QuantLayer {
        QuantLayer {
            weight: arr2(&[[w]]),
            layout: GroupLayout::new(1, 1, 1).unwrap(),
            bits: BitWidth::new(3).unwrap(),
            scales: vec![s],
        }
    }

    fn gamma1(v: f64) -> GammaResidual {
        GammaResidual::from_values(GroupLayout::new(1, 1, 1).unwrap(), vec![v]).unwrap()
    }

    #[test]
    fn adjust_examples() {
        assert_eq!(adjust_scales(&[0.5], &gamma1(0.0)).unwrap(), vec![0.5]);
        assert!((adjust_scales(&[0.5], &gamma1(0.1)).unwrap()[0] - 0.55).abs() < 1e-15);
        assert!(matches!(
            adjust_scales(&[0.5], &gamma1(-1.0)),
            Err(PotError::NonPositiveScale(_))
        ));
    }

    #[test]
    fn requantize_examples() {
        let l = one_by_one(3.0, 1.0);
        let r = l.requantize(&gamma1(0.2)).unwrap();
        assert_eq!(r.codes[0].exponent, 1);
        assert!((r.weights[[0, 0]] - 2.4).abs() < 1e-12);
        let r0 = l.requantize(&gamma1(0.0)).unwrap();
        assert_eq!(r0.weights[[0, 0]], 4.0);
        let z = one_by_one(0.0, 0.75).requantize(&gamma1(0.0)).unwrap();
        assert_eq!(z.weights[[0, 0]], 0.75);
        assert!(z.clamped[0]);
    }

    #[test]
    fn linear_loss_and_gradient_by_hand() {
        let l = one_by_one(3.0, 1.0);
        let x = Array3::from_elem((1, 1, 1), 1.0);
        let target = Model::Linear
            .forward(std::slice::from_ref(&l.weight), x.view())
            .unwrap();
        let (terms, g) = grad_gamma(
            Model::Linear,
            std::slice::from_ref(&l),
            &[gamma1(0.0)],
            x.view(),
            target.view(),
            0.0,
            GradMode::DetachExponent,
        )
        .unwrap();
        assert_eq!(terms.data, 1.0);
        assert_eq!(g[0][0], 8.0);

        let (_, g) = grad_gamma(
            Model::Linear,
            std::slice::from_ref(&l),
            &[gamma1(0.0)],
            x.view(),
            target.view(),
            0.0,
            GradMode::LiteralSte,
        )
        .unwrap();
        assert_eq!(g[0][0], 0.0);
    }

    #[test]
    fn literal_ste_keeps_gradient_on_clamped_weights() {
        // |w| / S = 100 saturates at q_max = 3
        let l = one_by_one(100.0, 1.0);
        let x = Array3::from_elem((1, 1, 1), 1.0);
        let target = Model::Linear
            .forward(std::slice::from_ref(&l.weight), x.view())
            .unwrap();
        let run = |mode| {
            grad_gamma(
                Model::Linear,
                std::slice::from_ref(&l),
                &[gamma1(0.0)],
                x.view(),
                target.view(),
                0.0,
                mode,
            )
            .unwrap()
            .1[0][0]
        };
        // d = 8 - 100, dQ/dγ = 2 d * 8
        assert_eq!(run(GradMode::LiteralSte), 2.0 * -92.0 * 8.0);
        assert_eq!(run(GradMode::LiteralSte), run(GradMode::DetachExponent));
    }

    #[test]
    fn regularizer_gradient() {
        let l = one_by_one(4.0, 1.0);
        let x = Array3::from_elem((1, 1, 1), 1.0);
        let target = Model::Linear
            .forward(std::slice::from_ref(&l.weight), x.view())
            .unwrap();
        let (terms, g) = grad_gamma(
            Model::Linear,
            std::slice::from_ref(&l),
            &[gamma1(0.0)],
            x.view(),
            target.view(),
            0.1,
            GradMode::DetachExponent,
        )
        .unwrap();
        assert_eq!((terms.total(), g[0][0]), (0.0, 0.0));
        let (terms, _) = grad_gamma(
            Model::Linear,
            std::slice::from_ref(&l),
            &[gamma1(0.02)],
            x.view(),
            target.view(),
            0.1,
            GradMode::DetachExponent,
        )
        .unwrap();
        assert_eq!(terms.reg, 0.5 * 0.1 * 0.02 * 0.02);
    }

    #[test]
    fn loss_q2_cases() {
        let x = Array3::from_elem((1, 1, 1), 1.0);
        let w = arr2(&[[3.0]]);
        let g = [gamma1(0.0)];
        let t = loss_q2(Model::Linear, std::slice::from_ref(&w), std::slice::from_ref(&w), x.view(), &g, 0.1).unwrap();
        assert_eq!(t.total(), 0.0);
        let t = loss_q2(
            Model::Linear,
            std::slice::from_ref(&w),
            std::slice::from_ref(&w),
            x.view(),
            &[gamma1(0.3)],
            0.0,
        )
        .unwrap();
        assert_eq!(t.total(), 0.0);
        let t = loss_q2(Model::Linear, &[w], &[arr2(&[[4.0]])], x.view(), &g, 0.0).unwrap();
        assert_eq!(t.total(), 1.0);
    }

    #[test]
    fn grad_mode_parsing() {
        assert_eq!(
            "detach-exponent".parse::<GradMode>().unwrap(),
            GradMode::DetachExponent
        );
        assert_eq!(
            "literal-ste".parse::<GradMode>().unwrap(),
            GradMode::LiteralSte
        );
        assert!(matches!(
            "adam".parse::<GradMode>(),
            Err(PotError::UnknownGradMode(_))
        ));
        assert_eq!(GradMode::LiteralSte.to_string(), "literal-ste");
    }

    #[test]
    fn no_batches_or_zero_lr_keep_gamma_zero() {
        let l = one_by_one(3.0, 1.0);
        let cfg = CalibConfig::for_bits(l.bits);
        let out = calibrate(Model::Linear, std::slice::from_ref(&l), &[], &cfg).unwrap();
        assert_eq!(out.gammas[0].values(), &[0.0]);
        assert_eq!(out.refined_scales[0], l.scales);
        assert_eq!(out.history.len(), 10);

        let x = Array3::from_elem((1, 1, 1), 1.0);
        let cfg = CalibConfig { lr: 0.0, ..cfg };
        let out = calibrate(Model::Linear, std::slice::from_ref(&l), &[x], &cfg).unwrap();
        assert_eq!(out.gammas[0].values(), &[0.0]);
        assert_eq!(out.refined_scales[0], l.scales);
    }

    #[test]
    fn default_epochs_per_width() {
        assert_eq!(CalibConfig::for_bits(BitWidth::new(2).unwrap()).epochs, 40);
        assert_eq!(CalibConfig::for_bits(BitWidth::new(3).unwrap()).epochs, 10);
        let c = CalibConfig::for_bits(BitWidth::new(3).unwrap());
        assert_eq!((c.lr, c.weight_decay), (1e-3, 1e-1));
    }

    #[test]
    fn gamma_projection_keeps_scales_valid() {
        // a huge learning rate would drive γ below -1 without projection
        let l = one_by_one(3.0, 1.0);
        let x = Array3::from_elem((1, 4, 1), 10.0);
        let cfg = CalibConfig {
            lr: 10.0,
            weight_decay: 0.0,
            epochs: 3,
            grad_mode: GradMode::DetachExponent,
        };
        let out = calibrate(Model::Linear, std::slice::from_ref(&l), &[x], &cfg).unwrap();
        let s = out.refined_scales[0][0];
        assert!(s >= Half::MIN_POSITIVE_NORMAL.decode());
        assert!(crate::kernel::scale_is_valid(Half::encode(s), 3));
    }
}
