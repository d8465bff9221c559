//! Seeded synthetic weights and activations.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{PotError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightDist {
    #[default]
    Gaussian,
    Laplace,
}

impl FromStr for WeightDist {
    type Err = PotError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(WeightDist::Gaussian),
            "laplace" => Ok(WeightDist::Laplace),
            other => Err(PotError::InvalidConfig(format!(
                "unknown distribution {other:?} (expected gaussian or laplace)"
            ))),
        }
    }
}

impl fmt::Display for WeightDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightDist::Gaussian => "gaussian",
            WeightDist::Laplace => "laplace",
        })
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One zero-mean sample with standard deviation `std`.
pub fn sample<R: Rng + ?Sized>(rng: &mut R, dist: WeightDist, std: f64) -> f64 {
    match dist {
        WeightDist::Gaussian => {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        }
        WeightDist::Laplace => {
            // Var = 2 b²
            let e: f64 = Exp1.sample(rng);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            sign * e * std / std::f64::consts::SQRT_2
        }
    }
}

pub fn weights(rows: usize, cols: usize, dist: WeightDist, std: f64, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_simple_fn((rows, cols), || sample(&mut r, dist, std))
}

/// The same draw as [`weights`], rounded to f32 as stored in a tensor file.
pub fn weight_tensor(
    rows: usize,
    cols: usize,
    dist: WeightDist,
    std: f64,
    seed: u64,
) -> Result<Tensor> {
    let w = weights(rows, cols, dist, std, seed);
    Tensor::from_f32(vec![rows, cols], w.iter().map(|&v| v as f32).collect())
}

/// Shape of synthetic calibration activations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationProfile {
    pub std: f64,
    /// Probability that an input channel is an outlier channel.
    pub outlier_fraction: f64,
    /// Standard deviation multiplier of outlier channels.
    pub outlier_gain: f64,
}

impl Default for ActivationProfile {
    fn default() -> Self {
        ActivationProfile {
            std: 1.0,
            outlier_fraction: 0.0,
            outlier_gain: 1.0,
        }
    }
}

impl ActivationProfile {
    /// A few channels much louder than the rest, as seen in transformer
    /// activations.
    pub fn with_outliers(std: f64) -> Self {
        ActivationProfile {
            std,
            outlier_fraction: 0.125,
            outlier_gain: 20.0,
        }
    }
}

/// Gaussian activations of shape `(batch, tokens, d)`.
pub fn activations(
    batch: usize,
    tokens: usize,
    d: usize,
    profile: ActivationProfile,
    seed: u64,
) -> Array3<f64> {
    let mut r = rng(seed);
    let channel_std: Vec<f64> = (0..d)
        .map(|_| {
            if r.random::<f64>() < profile.outlier_fraction {
                profile.std * profile.outlier_gain
            } else {
                profile.std
            }
        })
        .collect();
    let mut x = Array3::zeros((batch, tokens, d));
    for ((_, _, k), v) in x.indexed_iter_mut() {
        let z: f64 = StandardNormal.sample(&mut r);
        *v = z * channel_std[k];
    }
    x
}
