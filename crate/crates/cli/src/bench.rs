use std::time::{Duration, Instant};

use anyhow::{bail, Context};

use potq_core::kernel::{dequant_matrix, dequant_matrix_reference, dequant_uniform};
use potq_core::pot::{quantize_naive, quantize_rtn_uniform, UniformQuantized};
use potq_core::synth::{weight_tensor, WeightDist};
use potq_core::tensor::TensorData;
use potq_core::{QuantConfig, QuantizedMatrix, Tensor};

use crate::report::BenchRow;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub rows: usize,
    pub cols: usize,
    pub quant: QuantConfig,
    pub threads: Vec<usize>,
    pub runs: usize,
    pub seed: u64,
}

pub struct BenchInputs {
    pub pot: QuantizedMatrix,
    pub uniform: UniformQuantized,
}

pub fn prepare(cfg: &BenchConfig) -> anyhow::Result<BenchInputs> {
    let w = weight_tensor(cfg.rows, cfg.cols, WeightDist::Gaussian, 0.02, cfg.seed)?;
    // the search does not affect dequantization cost
    let pot = quantize_naive(&w, &cfg.quant)?;
    let uniform = quantize_rtn_uniform(&w, cfg.quant.bits, cfg.quant.group_size)?;
    Ok(BenchInputs { pot, uniform })
}

fn f16_bits(t: &Tensor) -> Vec<u16> {
    match t.data() {
        TensorData::F16(v) => v.iter().map(|h| h.to_bits()).collect(),
        TensorData::F32(_) => unreachable!("dequantization produces FP16"),
    }
}

/// The integer path must match decode / multiply / encode bit for bit.
pub fn correctness_gate(inputs: &BenchInputs) -> anyhow::Result<()> {
    let fast = f16_bits(&dequant_matrix(&inputs.pot));
    let slow = f16_bits(&dequant_matrix_reference(&inputs.pot));
    if let Some(i) = fast.iter().zip(&slow).position(|(a, b)| a != b) {
        bail!(
            "integer dequantization differs from the reference at element {i}: {:#06x} vs {:#06x}",
            fast[i],
            slow[i]
        );
    }
    Ok(())
}

fn median(mut xs: Vec<Duration>) -> Duration {
    xs.sort();
    xs[xs.len() / 2]
}

fn time_runs<T>(runs: usize, mut f: impl FnMut() -> T) -> Duration {
    // one untimed warm-up
    std::hint::black_box(f());
    let samples = (0..runs)
        .map(|_| {
            let t = Instant::now();
            std::hint::black_box(f());
            t.elapsed()
        })
        .collect();
    median(samples)
}

/// Gate, then time both paths at each thread count.
pub fn run(cfg: &BenchConfig) -> anyhow::Result<Vec<BenchRow>> {
    if cfg.runs < 5 {
        bail!("at least 5 runs are needed for a median, got {}", cfg.runs);
    }
    let inputs = prepare(cfg)?;
    correctness_gate(&inputs)?;

    let elements = (cfg.rows * cfg.cols) as f64;
    let bytes_out = elements * 2.0;
    let bits = cfg.quant.bits.get();
    let mut rows = Vec::new();
    for &threads in &cfg.threads {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .context("building thread pool")?;
        let (pot, uni) = pool.install(|| {
            (
                time_runs(cfg.runs, || dequant_matrix(&inputs.pot)),
                time_runs(cfg.runs, || dequant_uniform(&inputs.uniform)),
            )
        });
        let (pot_s, uni_s) = (pot.as_secs_f64(), uni.as_secs_f64());
        let ratio = uni_s / pot_s;
        for (path, secs) in [("pot-int-add", pot_s), ("uniform-float", uni_s)] {
            rows.push(BenchRow {
                path: path.to_string(),
                bits,
                rows: cfg.rows,
                cols: cfg.cols,
                threads,
                gbps: bytes_out / secs / 1e9,
                elements_per_sec: elements / secs,
                ratio,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_bench_reports_both_paths() {
        let cfg = BenchConfig {
            rows: 64,
            cols: 32,
            quant: QuantConfig::new(2, 16).unwrap(),
            threads: vec![1, 2],
            runs: 5,
            seed: 1,
        };
        let rows = run(&cfg).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].path, "pot-int-add");
        assert_eq!(rows[1].path, "uniform-float");
        assert_eq!(rows[0].ratio, rows[1].ratio);
        assert!(rows.iter().all(|r| r.gbps > 0.0 && r.ratio.is_finite()));
    }

    #[test]
    fn too_few_runs() {
        let cfg = BenchConfig {
            rows: 8,
            cols: 8,
            quant: QuantConfig::new(3, 8).unwrap(),
            threads: vec![1],
            runs: 3,
            seed: 0,
        };
        assert!(run(&cfg).is_err());
    }
}
