//! Forward passes the calibration loss is measured through, with hand-written
//! reverse-mode gradients with respect to the weights.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};

use crate::error::{PotError, Result};

/// Weights of a single-head transformer block `MLP(X + Attn(X))`.
///
/// `wq`, `wk`, `wv` are `d x d`; `w1` is `d x f` and `w2` is `f x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
}

impl BlockWeights {
    pub fn hidden(&self) -> usize {
        self.wq.nrows()
    }

    pub fn check(&self) -> Result<()> {
        let d = self.hidden();
        let f = self.w1.ncols();
        let ok = self.wq.dim() == (d, d)
            && self.wk.dim() == (d, d)
            && self.wv.dim() == (d, d)
            && self.w1.nrows() == d
            && self.w2.dim() == (f, d);
        if !ok {
            return Err(PotError::DimensionMismatch(format!(
                "inconsistent block shapes: wq {:?} wk {:?} wv {:?} w1 {:?} w2 {:?}",
                self.wq.dim(),
                self.wk.dim(),
                self.wv.dim(),
                self.w1.dim(),
                self.w2.dim()
            )));
        }
        Ok(())
    }

    /// Weights in calibration order: `[wq, wk, wv, w1, w2]`.
    pub fn to_vec(&self) -> Vec<Array2<f64>> {
        vec![
            self.wq.clone(),
            self.wk.clone(),
            self.wv.clone(),
            self.w1.clone(),
            self.w2.clone(),
        ]
    }

    pub fn from_slice(ws: &[Array2<f64>]) -> Result<Self> {
        match ws {
            [wq, wk, wv, w1, w2] => {
                let b = BlockWeights {
                    wq: wq.clone(),
                    wk: wk.clone(),
                    wv: wv.clone(),
                    w1: w1.clone(),
                    w2: w2.clone(),
                };
                b.check()?;
                Ok(b)
            }
            _ => Err(PotError::DimensionMismatch(format!(
                "a block needs 5 weight matrices, got {}",
                ws.len()
            ))),
        }
    }
}

/// Which function of the weights the calibration loss compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    /// One weight matrix, `Y = X W`.
    Linear,
    /// Transformer block over `[wq, wk, wv, w1, w2]`.
    Block,
}

impl Model {
    pub fn num_weights(self) -> usize {
        match self {
            Model::Linear => 1,
            Model::Block => 5,
        }
    }

    /// Output for `x` of shape `B x T x d`.
    pub fn forward(self, weights: &[Array2<f64>], x: ArrayView3<f64>) -> Result<Array3<f64>> {
        match self {
            Model::Linear => {
                let w = single(weights)?;
                let (b, t, d) = x.dim();
                let x2 = x.to_shape((b * t, d)).expect("contiguous view");
                let y = linear_forward(w.view(), x2.view())?;
                Ok(y.into_shape_with_order((b, t, w.ncols()))
                    .expect("sizes match"))
            }
            Model::Block => block_forward(&BlockWeights::from_slice(weights)?, x),
        }
    }

    /// `dL/dW` for each weight, given `dL/dY`.
    pub fn backward(
        self,
        weights: &[Array2<f64>],
        x: ArrayView3<f64>,
        grad_out: ArrayView3<f64>,
    ) -> Result<Vec<Array2<f64>>> {
        match self {
            Model::Linear => {
                let w = single(weights)?;
                let (b, t, d) = x.dim();
                let x2 = x.to_shape((b * t, d)).expect("contiguous view");
                let g2 = grad_out
                    .to_shape((b * t, w.ncols()))
                    .expect("contiguous view");
                Ok(vec![x2.t().dot(&g2)])
            }
            Model::Block => block_backward(&BlockWeights::from_slice(weights)?, x, grad_out),
        }
    }
}

fn single(weights: &[Array2<f64>]) -> Result<&Array2<f64>> {
    match weights {
        [w] => Ok(w),
        _ => Err(PotError::DimensionMismatch(format!(
            "linear mode takes one weight matrix, got {}",
            weights.len()
        ))),
    }
}

/// `X · W`.
pub fn linear_forward(w: ArrayView2<f64>, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    if x.ncols() != w.nrows() {
        return Err(PotError::DimensionMismatch(format!(
            "input has {} features, weight has {} rows",
            x.ncols(),
            w.nrows()
        )));
    }
    Ok(x.dot(&w))
}

/// Exact GELU, `z * Φ(z)`.
#[inline]
pub fn gelu(z: f64) -> f64 {
    0.5 * z * (1.0 + libm::erf(z * FRAC_1_SQRT_2))
}

#[inline]
pub fn gelu_grad(z: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(z * FRAC_1_SQRT_2));
    let pdf = (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
    cdf + z * pdf
}

/// Row-wise softmax.
pub fn softmax_rows(s: &Array2<f64>) -> Array2<f64> {
    let mut a = s.clone();
    for mut row in a.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    a
}

/// Per-sequence intermediates kept for the backward pass.
struct BlockCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Array2<f64>,
    h: Array2<f64>,
    z: Array2<f64>,
    u: Array2<f64>,
}

fn block_sequence(w: &BlockWeights, x: ArrayView2<f64>) -> (Array2<f64>, BlockCache) {
    let inv_sqrt_d = 1.0 / (w.hidden() as f64).sqrt();
    let q = x.dot(&w.wq);
    let k = x.dot(&w.wk);
    let v = x.dot(&w.wv);
    let attn = softmax_rows(&(q.dot(&k.t()) * inv_sqrt_d));
    let h = &x + &attn.dot(&v);
    let z = h.dot(&w.w1);
    let u = z.mapv(gelu);
    let y = u.dot(&w.w2);
    (
        y,
        BlockCache {
            q,
            k,
            v,
            attn,
            h,
            z,
            u,
        },
    )
}

fn check_block_input(w: &BlockWeights, x: &ArrayView3<f64>) -> Result<()> {
    w.check()?;
    if x.dim().2 != w.hidden() {
        return Err(PotError::DimensionMismatch(format!(
            "input hidden size {} does not match block hidden size {}",
            x.dim().2,
            w.hidden()
        )));
    }
    Ok(())
}

/// `MLP(X + Attn(X))` per sequence, with `Attn(X) = softmax(Q Kᵀ / √d) V`
/// (no mask) and `MLP(H) = GELU(H W1) W2`.
pub fn block_forward(w: &BlockWeights, x: ArrayView3<f64>) -> Result<Array3<f64>> {
    check_block_input(w, &x)?;
    let (b, t, d) = x.dim();
    let mut out = Array3::zeros((b, t, d));
    for (bi, xs) in x.axis_iter(Axis(0)).enumerate() {
        let (y, _) = block_sequence(w, xs);
        out.slice_mut(s![bi, .., ..]).assign(&y);
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(PotError::NonFiniteIntermediate("block forward"));
    }
    Ok(out)
}

fn block_backward(
    w: &BlockWeights,
    x: ArrayView3<f64>,
    grad_out: ArrayView3<f64>,
) -> Result<Vec<Array2<f64>>> {
    check_block_input(w, &x)?;
    let inv_sqrt_d = 1.0 / (w.hidden() as f64).sqrt();
    let mut grads: Vec<Array2<f64>> = w.to_vec().iter().map(|m| Array2::zeros(m.dim())).collect();
    for (xs, dy) in x.axis_iter(Axis(0)).zip(grad_out.axis_iter(Axis(0))) {
        let (_, c) = block_sequence(w, xs);
        // MLP
        grads[4] += &c.u.t().dot(&dy);
        let du = dy.dot(&w.w2.t());
        let dz = &du * &c.z.mapv(gelu_grad);
        grads[3] += &c.h.t().dot(&dz);
        // residual: dH flows to the attention output; X itself is constant
        let dh = dz.dot(&w.w1.t());
        let dv = c.attn.t().dot(&dh);
        let da = dh.dot(&c.v.t());
        // softmax: dS = A ⊙ (dA - rowsum(dA ⊙ A))
        let row_dot = (&da * &c.attn).sum_axis(Axis(1)).insert_axis(Axis(1));
        let ds = &c.attn * &(&da - &row_dot) * inv_sqrt_d;
        let dq = ds.dot(&c.k);
        let dk = ds.t().dot(&c.q);
        grads[0] += &xs.t().dot(&dq);
        grads[1] += &xs.t().dot(&dk);
        grads[2] += &xs.t().dot(&dv);
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array};

    fn block(d: usize, f: usize, fill: impl Fn(usize) -> f64) -> BlockWeights {
        let mut k = 0;
        let mut next = |r, c| {
            Array::from_shape_fn((r, c), |_| {
                k += 1;
                fill(k)
            })
        };
        BlockWeights {
            wq: next(d, d),
            wk: next(d, d),
            wv: next(d, d),
            w1: next(d, f),
            w2: next(f, d),
        }
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let w = block(4, 6, |k| ((k * 13 % 7) as f64 - 3.0) * 0.1);
        let x = Array3::zeros((2, 3, 4));
        let y = block_forward(&w, x.view()).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_block_by_hand() {
        // d = 1, T = 1: softmax of a single score is 1, so H = x + x*wv
        let w = BlockWeights {
            wq: arr2(&[[0.7]]),
            wk: arr2(&[[-1.3]]),
            wv: arr2(&[[0.5]]),
            w1: arr2(&[[2.0]]),
            w2: arr2(&[[-0.25]]),
        };
        let x = Array3::from_elem((1, 1, 1), 0.8);
        let y = block_forward(&w, x.view()).unwrap()[[0, 0, 0]];
        let h = 0.8 + 0.8 * 0.5;
        let z = h * 2.0;
        let expect = 0.5 * z * (1.0 + libm::erf(z / 2f64.sqrt())) * -0.25;
        assert_eq!(y, expect);
        assert!((gelu(2.4) - 2.380_325_9).abs() < 1e-6);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let s = Array::from_shape_fn((5, 7), |(i, j)| ((i * 7 + j) as f64 * 1.37).sin() * 20.0);
        let a = softmax_rows(&s);
        for row in a.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn linear_forward_cases() {
        let eye = Array2::<f64>::eye(3);
        let x = Array::from_shape_fn((2, 3), |(i, j)| (i * 3 + j) as f64);
        assert_eq!(linear_forward(eye.view(), x.view()).unwrap(), x);
        assert_eq!(
            linear_forward(arr2(&[[3.0]]).view(), arr2(&[[-2.0]]).view()).unwrap()[[0, 0]],
            -6.0
        );
        assert!(linear_forward(eye.view(), arr2(&[[1.0, 2.0]]).view()).is_err());
    }

    #[test]
    fn linear_forward_matches_triple_loop() {
        let w = Array::from_shape_fn((4, 4), |(i, j)| ((i * 5 + j * 3) % 7) as f64 - 3.0);
        let x = Array::from_shape_fn((4, 4), |(i, j)| ((i * 2 + j * 7) % 5) as f64 * 0.5);
        let y = linear_forward(w.view(), x.view()).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += x[[i, k]] * w[[k, j]];
                }
                assert_eq!(y[[i, j]], acc);
            }
        }
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for z in [-3.0, -0.5, 0.0, 0.3, 2.0] {
            let h = 1e-6;
            let fd = (gelu(z + h) - gelu(z - h)) / (2.0 * h);
            assert!((fd - gelu_grad(z)).abs() < 1e-8);
        }
    }

    #[test]
    fn shape_errors() {
        let mut w = block(4, 6, |_| 0.1);
        let x = Array3::zeros((1, 2, 3));
        assert!(block_forward(&w, x.view()).is_err());
        w.w2 = Array2::zeros((5, 4));
        assert!(block_forward(&w, Array3::zeros((1, 2, 4)).view()).is_err());
    }
}
