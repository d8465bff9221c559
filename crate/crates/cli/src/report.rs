use std::io::{self, Write};
use std::path::Path;

use anyhow::{bail, Context};
use serde::Serialize;

use potq_core::calib::EpochLoss;

pub const HIST_BINS: usize = 200;
pub const HIST_WIDTH: f64 = 0.01;

/// Counts of scale multipliers on the grid `0.01, 0.02, ..., 2.00`.
///
/// Bin `i` is centred on `(i + 1) * 0.01`; values outside the grid land in
/// the first or last bin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub counts: Vec<u64>,
}

impl Default for Histogram {
    fn default() -> Self {
        Histogram {
            bin_width: HIST_WIDTH,
            counts: vec![0; HIST_BINS],
        }
    }
}

impl Histogram {
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Self {
        let mut h = Histogram::default();
        for v in values {
            h.add(v);
        }
        h
    }

    pub fn bin_of(&self, b: f64) -> usize {
        let i = (b / self.bin_width).round() - 1.0;
        if i.is_nan() {
            return 0;
        }
        i.clamp(0.0, (self.counts.len() - 1) as f64) as usize
    }

    pub fn add(&mut self, b: f64) {
        let i = self.bin_of(b);
        self.counts[i] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_lower(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.bin_width
    }

    /// Fraction of entries whose bin is not the one holding `b`.
    pub fn fraction_outside(&self, b: f64) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        1.0 - self.counts[self.bin_of(b)] as f64 / total as f64
    }

    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "bin_lower,count")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(w, "{:.3},{c}", self.bin_lower(i))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerReport {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub weight_mse: f64,
    pub max_abs_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_mse_before_step2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OutputReport {
    pub mse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse_before_step2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub data_term: f64,
    pub reg_term: f64,
}

impl From<&EpochLoss> for EpochRecord {
    fn from(e: &EpochLoss) -> Self {
        EpochRecord {
            epoch: e.epoch,
            loss: e.loss,
            data_term: e.data_term,
            reg_term: e.reg_term,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub path: String,
    pub bits: u32,
    pub rows: usize,
    pub cols: usize,
    pub threads: usize,
    pub gbps: f64,
    pub elements_per_sec: f64,
    /// Integer-path throughput over float-path throughput at this thread count.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RunReport {
    pub command: String,
    pub bits: u32,
    pub group_size: usize,
    pub bits_per_weight: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub layers: Vec<LayerReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub epochs: Vec<EpochRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub histogram: Option<Histogram>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub bench: Vec<BenchRow>,
}

impl RunReport {
    fn metrics(&self) -> Vec<f64> {
        let mut m = vec![self.bits_per_weight];
        for l in &self.layers {
            m.extend([l.weight_mse, l.max_abs_error]);
            m.extend(l.weight_mse_before_step2);
        }
        if let Some(o) = self.output {
            m.push(o.mse);
            m.extend(o.mse_before_step2);
        }
        for e in &self.epochs {
            m.extend([e.loss, e.data_term, e.reg_term]);
        }
        for b in &self.bench {
            m.extend([b.gbps, b.elements_per_sec, b.ratio]);
        }
        m
    }

    pub fn check_finite(&self) -> anyhow::Result<()> {
        if let Some(v) = self.metrics().into_iter().find(|v| !v.is_finite()) {
            bail!("report contains a non-finite metric ({v})");
        }
        Ok(())
    }

    pub fn to_json(&self) -> anyhow::Result<String> {
        self.check_finite()?;
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn write_loss_csv(mut w: impl Write, epochs: &[EpochRecord]) -> io::Result<()> {
    writeln!(w, "epoch,loss,data_term,reg_term")?;
    for e in epochs {
        writeln!(
            w,
            "{},{:e},{:e},{:e}",
            e.epoch, e.loss, e.data_term, e.reg_term
        )?;
    }
    Ok(())
}

pub fn write_bench_csv(mut w: impl Write, rows: &[BenchRow]) -> io::Result<()> {
    writeln!(w, "path,bits,rows,cols,threads,gbps,elements_per_sec,ratio")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{:.3},{:.4e},{:.3}",
            r.path, r.bits, r.rows, r.cols, r.threads, r.gbps, r.elements_per_sec, r.ratio
        )?;
    }
    Ok(())
}

/// Writes a CSV through `f` to `path`.
pub fn save_with(
    path: &Path,
    f: impl FnOnce(&mut Vec<u8>) -> io::Result<()>,
) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    std::fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}
