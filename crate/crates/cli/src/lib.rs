//! The `potq` command-line tool.

pub mod args;
pub mod bench;
pub mod report;

use std::fmt;
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, Context};
use ndarray::{s, Array2, Array3, Axis};

use potq_core::calib::{calibrate, CalibConfig, Model, QuantLayer};
use potq_core::kernel::dequant_matrix;
use potq_core::kernel::potq::{
    read_potq, write_potq, PotqFile, FLAG_CALIBRATED, FLAG_NO_SCALE_SEARCH,
};
use potq_core::pot::{base_scale, naive_group_scale, quantize_with_scales, search_group_scale};
use potq_core::synth::{activations, weight_tensor, ActivationProfile};
use potq_core::tensor::pten::{read_tensor, write_tensor};
use potq_core::{GroupLayout, PotError, QuantConfig, QuantizedMatrix, Tensor};

use args::{
    BenchArgs, CalibrateArgs, Cli, Command, DequantizeArgs, EvalArgs, GenCommand, ModeArg,
    QuantizeArgs,
};
use report::{save_with, EpochRecord, Histogram, LayerReport, OutputReport, RunReport};

pub const BLOCK_LAYERS: [&str; 5] = ["wq", "wk", "wv", "w1", "w2"];

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or flag combinations.
    Usage(String),
    /// Unreadable input, shape mismatch, invariant violation.
    Data(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Data(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Data(e)
    }
}

impl From<PotError> for CliError {
    fn from(e: PotError) -> Self {
        CliError::Data(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.into())
    }
}

fn usage(e: impl fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

type CliResult<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    let mut buf = Vec::new();
    let res = dispatch(cli, &mut buf);
    out.write_all(&buf)?;
    res
}

fn dispatch(cli: Cli, out: &mut Vec<u8>) -> CliResult<()> {
    match cli.command {
        Command::Quantize(a) => with_threads(a.threads, || cmd_quantize(&a, out)),
        Command::Calibrate(a) => with_threads(a.threads, || cmd_calibrate(&a, out)),
        Command::Dequantize(a) => with_threads(a.threads, || cmd_dequantize(&a, out)),
        Command::Eval(a) => with_threads(a.threads, || cmd_eval(&a, out)),
        Command::Bench(a) => cmd_bench(&a, out),
        Command::Gen(g) => cmd_gen(&g, out),
    }
}

fn with_threads<T>(threads: Option<usize>, f: impl FnOnce() -> CliResult<T> + Send) -> CliResult<T>
where
    T: Send,
{
    match threads {
        None => f(),
        Some(0) => Err(usage("--threads must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Data(e.into()))?;
            pool.install(f)
        }
    }
}

fn load(path: &Path) -> anyhow::Result<Tensor> {
    read_tensor(path).with_context(|| format!("reading {}", path.display()))
}

fn load_potq(path: &Path) -> anyhow::Result<PotqFile> {
    read_potq(path).with_context(|| format!("reading {}", path.display()))
}

fn to_array2(t: &Tensor) -> anyhow::Result<Array2<f64>> {
    let (r, c) = t.shape2()?;
    Ok(Array2::from_shape_vec((r, c), t.to_f64_vec())?)
}

/// `(samples, d)` becomes `(samples, 1, d)`.
fn to_array3(t: &Tensor) -> anyhow::Result<Array3<f64>> {
    let dims = t.dims();
    let shape = match *dims {
        [n, d] => (n, 1, d),
        [b, tk, d] => (b, tk, d),
        _ => return Err(anyhow!("activations must be 2-D or 3-D, got {dims:?}")),
    };
    Ok(Array3::from_shape_vec(shape, t.to_f64_vec())?)
}

fn split_batches(x: &Array3<f64>, batch_size: usize) -> Vec<Array3<f64>> {
    let n = x.len_of(Axis(0));
    (0..n)
        .step_by(batch_size)
        .map(|start| {
            x.slice(s![start..(start + batch_size).min(n), .., ..])
                .to_owned()
        })
        .collect()
}

fn write_report(report: &RunReport, path: Option<&Path>, out: &mut Vec<u8>) -> CliResult<()> {
    let json = report.to_json()?;
    if let Some(p) = path {
        std::fs::write(p, &json).with_context(|| format!("writing {}", p.display()))?;
    }
    writeln!(out, "{json}")?;
    Ok(())
}

fn cmd_quantize(a: &QuantizeArgs, out: &mut Vec<u8>) -> CliResult<()> {
    let cfg = QuantConfig::new(a.bits, a.group_size)
        .and_then(|c| c.with_grid(a.grid_step, a.grid_count))
        .map_err(usage)?;
    let w = load(&a.input)?;
    let (rows, cols) = w.shape2()?;
    let layout = GroupLayout::new(rows, cols, cfg.group_size)?;

    let pick = if a.skip_step1 {
        naive_group_scale
    } else {
        search_group_scale
    };
    let groups = group_scales(&w, &layout, &cfg, pick)?;
    let q = quantize_with_scales(
        &w,
        layout,
        cfg.bits,
        groups.iter().map(|g| g.scale).collect(),
    )?;
    let flags = if a.skip_step1 {
        FLAG_NO_SCALE_SEARCH
    } else {
        0
    };
    write_potq(&a.output, &PotqFile::new(q.clone(), flags))
        .with_context(|| format!("writing {}", a.output.display()))?;

    let hist = Histogram::from_values(groups.iter().map(|g| g.b_star));
    if let Some(p) = &a.histogram {
        save_with(p, |b| hist.write_csv(b))?;
    }
    let report = RunReport {
        command: "quantize".into(),
        bits: a.bits,
        group_size: a.group_size,
        bits_per_weight: q.bits_per_weight(),
        layers: vec![layer_report("w", &w, &q, None)?],
        histogram: Some(hist),
        ..Default::default()
    };
    write_report(&report, a.report.as_deref(), out)
}

fn group_scales(
    w: &Tensor,
    layout: &GroupLayout,
    cfg: &QuantConfig,
    pick: fn(&[f64], &QuantConfig) -> potq_core::Result<potq_core::GroupScale>,
) -> CliResult<Vec<potq_core::GroupScale>> {
    use rayon::prelude::*;
    let groups: Vec<_> = layout.iter_groups(w)?.collect();
    let scales = groups
        .par_iter()
        .map(|g| {
            pick(&g.values, cfg).map_err(|e| match e {
                PotError::ScaleOutOfRange { max_abs, .. } => PotError::ScaleOutOfRange {
                    group: g.group,
                    column: g.column,
                    max_abs,
                },
                other => other,
            })
        })
        .collect::<potq_core::Result<Vec<_>>>()?;
    Ok(scales)
}

fn layer_report(
    name: &str,
    w: &Tensor,
    q: &QuantizedMatrix,
    before: Option<f64>,
) -> anyhow::Result<LayerReport> {
    let orig = w.to_f64_vec();
    let rec = q.to_f64_matrix();
    if orig.len() != rec.len() {
        return Err(anyhow!(
            "{name}: {} weights vs {} quantized",
            orig.len(),
            rec.len()
        ));
    }
    let (mut sq, mut max_abs) = (0.0f64, 0.0f64);
    for (a, b) in orig.iter().zip(&rec) {
        let d = (a - b).abs();
        sq += d * d;
        max_abs = max_abs.max(d);
    }
    Ok(LayerReport {
        name: name.to_string(),
        rows: q.d_out(),
        cols: q.d_in(),
        weight_mse: sq / orig.len() as f64,
        max_abs_error: max_abs,
        weight_mse_before_step2: before,
    })
}

/// Weight matrices and their quantized counterparts in model order.
struct Layers {
    model: Model,
    names: Vec<&'static str>,
    weights: Vec<Tensor>,
    quantized: Vec<QuantizedMatrix>,
}

fn split_layers(mode: ModeArg, w: &Tensor, q: &QuantizedMatrix) -> CliResult<Layers> {
    let (rows, cols) = w.shape2()?;
    if (rows, cols) != (q.d_out(), q.d_in()) {
        return Err(CliError::Data(anyhow!(
            "weights are {rows}x{cols} but the quantized matrix is {}x{}",
            q.d_out(),
            q.d_in()
        )));
    }
    match mode {
        ModeArg::Linear => Ok(Layers {
            model: Model::Linear,
            names: vec!["w"],
            weights: vec![w.clone()],
            quantized: vec![q.clone()],
        }),
        ModeArg::Block => {
            if rows != 5 * cols {
                return Err(CliError::Data(anyhow!(
                    "block mode expects [wq; wk; wv; w1; w2] stacked as a {}x{cols} matrix, got {rows}x{cols}",
                    5 * cols
                )));
            }
            let data = w.to_f64_vec();
            let weights = (0..5)
                .map(|k| {
                    Tensor::from_f64(
                        vec![cols, cols],
                        &data[k * cols * cols..(k + 1) * cols * cols],
                    )
                })
                .collect::<potq_core::Result<_>>()?;
            Ok(Layers {
                model: Model::Block,
                names: BLOCK_LAYERS.to_vec(),
                weights,
                quantized: q.split_rows(cols)?,
            })
        }
    }
}

fn dense(q: &QuantizedMatrix) -> Array2<f64> {
    Array2::from_shape_vec((q.d_out(), q.d_in()), q.to_f64_matrix())
        .expect("row-major reconstruction")
}

fn output_mse(
    model: Model,
    original: &[Array2<f64>],
    quantized: &[Array2<f64>],
    x: &Array3<f64>,
) -> CliResult<f64> {
    let a = model.forward(original, x.view())?;
    let b = model.forward(quantized, x.view())?;
    Ok((&a - &b).mapv(|d| d * d).mean().unwrap_or(0.0))
}

fn cmd_calibrate(a: &CalibrateArgs, out: &mut Vec<u8>) -> CliResult<()> {
    if a.batch_size == 0 {
        return Err(usage("--batch-size must be at least 1"));
    }
    let file = load_potq(&a.model)?;
    let w = load(&a.weights)?;
    let x = to_array3(&load(&a.calib)?)?;
    let q = &file.matrix;

    let mut cfg = CalibConfig::for_bits(q.bits());
    cfg.lr = a.lr;
    cfg.weight_decay = a.weight_decay;
    cfg.grad_mode = a.grad_mode;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    cfg.validate().map_err(usage)?;

    let layers = split_layers(a.mode, &w, q)?;
    let quant_layers = layers
        .weights
        .iter()
        .zip(&layers.quantized)
        .map(|(w, q)| QuantLayer::from_tensor(w, q))
        .collect::<potq_core::Result<Vec<_>>>()?;
    let d_in_model = quant_layers[0].weight.nrows();
    if x.len_of(Axis(2)) != d_in_model {
        return Err(CliError::Data(anyhow!(
            "activations have {} features, the weights expect {d_in_model}",
            x.len_of(Axis(2))
        )));
    }
    let batches = split_batches(&x, a.batch_size);
    let outcome = calibrate(layers.model, &quant_layers, &batches, &cfg)?;

    let refined = (0..quant_layers.len())
        .map(|k| outcome.to_quantized(k, &layers.weights[k], &layers.quantized[k]))
        .collect::<potq_core::Result<Vec<_>>>()?;
    let merged = match layers.model {
        Model::Linear => refined[0].clone(),
        Model::Block => QuantizedMatrix::stack_rows(&refined)?,
    };
    write_potq(
        &a.output,
        &PotqFile::new(merged.clone(), file.flags | FLAG_CALIBRATED),
    )
    .with_context(|| format!("writing {}", a.output.display()))?;

    let epochs: Vec<EpochRecord> = outcome.history.iter().map(EpochRecord::from).collect();
    if let Some(p) = &a.loss_csv {
        save_with(p, |b| report::write_loss_csv(b, &epochs))?;
    }

    let original: Vec<Array2<f64>> = quant_layers.iter().map(|l| l.weight.clone()).collect();
    let before: Vec<Array2<f64>> = layers.quantized.iter().map(dense).collect();
    let after: Vec<Array2<f64>> = refined.iter().map(dense).collect();
    let output = OutputReport {
        mse: output_mse(layers.model, &original, &after, &x)?,
        mse_before_step2: Some(output_mse(layers.model, &original, &before, &x)?),
    };
    let layer_reports = (0..refined.len())
        .map(|k| {
            let pre = layer_report(
                layers.names[k],
                &layers.weights[k],
                &layers.quantized[k],
                None,
            )?;
            layer_report(
                layers.names[k],
                &layers.weights[k],
                &refined[k],
                Some(pre.weight_mse),
            )
        })
        .collect::<anyhow::Result<_>>()?;
    let report = RunReport {
        command: "calibrate".into(),
        bits: q.bits().get(),
        group_size: q.layout().group_size(),
        bits_per_weight: merged.bits_per_weight(),
        layers: layer_reports,
        output: Some(output),
        epochs,
        ..Default::default()
    };
    write_report(&report, a.report.as_deref(), out)
}

fn cmd_dequantize(a: &DequantizeArgs, out: &mut Vec<u8>) -> CliResult<()> {
    let file = load_potq(&a.input)?;
    let t = dequant_matrix(&file.matrix);
    write_tensor(&a.output, &t).with_context(|| format!("writing {}", a.output.display()))?;
    writeln!(
        out,
        "wrote {}x{} fp16 tensor to {}",
        file.matrix.d_out(),
        file.matrix.d_in(),
        a.output.display()
    )?;
    Ok(())
}

/// `stored scale / (max|w| / (2^q_max - 1))` for every group, in scale order.
pub fn effective_multipliers(w: &Tensor, q: &QuantizedMatrix) -> potq_core::Result<Vec<f64>> {
    let layout = q.layout();
    let q_max = q.bits().q_max();
    Ok(layout
        .iter_groups(w)?
        .map(|g| {
            let s0 = base_scale(&g.values, q_max);
            let s = q.scale(g.group, g.column).decode();
            if s0 > 0.0 {
                s / s0
            } else {
                0.0
            }
        })
        .collect())
}

fn cmd_eval(a: &EvalArgs, out: &mut Vec<u8>) -> CliResult<()> {
    let w = load(&a.original)?;
    let file = load_potq(&a.model)?;
    let q = &file.matrix;
    let layers = split_layers(a.mode, &w, q)?;
    let layer_reports = layers
        .names
        .iter()
        .zip(layers.weights.iter().zip(&layers.quantized))
        .map(|(n, (w, q))| layer_report(n, w, q, None))
        .collect::<anyhow::Result<_>>()?;

    let output = match &a.inputs {
        None => None,
        Some(p) => {
            let x = to_array3(&load(p)?)?;
            let original = layers
                .weights
                .iter()
                .map(to_array2)
                .collect::<anyhow::Result<Vec<_>>>()?;
            let quant: Vec<_> = layers.quantized.iter().map(dense).collect();
            if x.len_of(Axis(2)) != original[0].nrows() {
                return Err(CliError::Data(anyhow!(
                    "inputs have {} features, the weights expect {}",
                    x.len_of(Axis(2)),
                    original[0].nrows()
                )));
            }
            Some(OutputReport {
                mse: output_mse(layers.model, &original, &quant, &x)?,
                mse_before_step2: None,
            })
        }
    };

    let hist = Histogram::from_values(effective_multipliers(&w, q)?);
    if let Some(p) = &a.histogram {
        save_with(p, |b| hist.write_csv(b))?;
    }
    let report = RunReport {
        command: "eval".into(),
        bits: q.bits().get(),
        group_size: q.layout().group_size(),
        bits_per_weight: q.bits_per_weight(),
        layers: layer_reports,
        output,
        histogram: Some(hist),
        ..Default::default()
    };
    write_report(&report, a.report.as_deref(), out)
}

fn cmd_bench(a: &BenchArgs, out: &mut Vec<u8>) -> CliResult<()> {
    let quant = QuantConfig::new(a.bits, a.group_size).map_err(usage)?;
    if a.rows == 0 || a.cols == 0 {
        return Err(usage("--rows and --cols must be positive"));
    }
    if a.runs < 5 {
        return Err(usage(format!("--runs must be at least 5, got {}", a.runs)));
    }
    let threads = if a.threads.is_empty() {
        let all = std::thread::available_parallelism().map_or(1, |n| n.get());
        if all > 1 {
            vec![1, all]
        } else {
            vec![1]
        }
    } else {
        a.threads.clone()
    };
    if threads.contains(&0) {
        return Err(usage("thread counts must be at least 1"));
    }
    let cfg = bench::BenchConfig {
        rows: a.rows,
        cols: a.cols,
        quant,
        threads,
        runs: a.runs,
        seed: a.seed,
    };
    let rows = bench::run(&cfg)?;
    if let Some(p) = &a.csv {
        save_with(p, |b| report::write_bench_csv(b, &rows))?;
    }
    report::write_bench_csv(&mut *out, &rows)?;
    if let Some(p) = &a.report {
        let r = RunReport {
            command: "bench".into(),
            bits: a.bits,
            group_size: a.group_size,
            bits_per_weight: quant.bits_per_weight(),
            bench: rows,
            ..Default::default()
        };
        std::fs::write(p, r.to_json()?).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn cmd_gen(g: &GenCommand, out: &mut Vec<u8>) -> CliResult<()> {
    match g {
        GenCommand::Weights(a) => {
            if !(a.std > 0.0 && a.std.is_finite()) {
                return Err(usage("--std must be positive"));
            }
            if a.rows == 0 || a.cols == 0 {
                return Err(usage("--rows and --cols must be positive"));
            }
            let t = weight_tensor(a.rows, a.cols, a.dist.into(), a.std, a.seed)?;
            write_tensor(&a.output, &t)
                .with_context(|| format!("writing {}", a.output.display()))?;
            writeln!(
                out,
                "wrote {}x{} weights to {}",
                a.rows,
                a.cols,
                a.output.display()
            )?;
        }
        GenCommand::Acts(a) => {
            if !(a.std > 0.0 && a.std.is_finite() && a.outlier_gain > 0.0) {
                return Err(usage("--std and --outlier-gain must be positive"));
            }
            if !(0.0..=1.0).contains(&a.outlier_fraction) {
                return Err(usage("--outlier-fraction must lie in [0, 1]"));
            }
            if a.batch == 0 || a.tokens == 0 || a.dim == 0 {
                return Err(usage("--batch, --tokens and --dim must be positive"));
            }
            let profile = ActivationProfile {
                std: a.std,
                outlier_fraction: a.outlier_fraction,
                outlier_gain: a.outlier_gain,
            };
            let x = activations(a.batch, a.tokens, a.dim, profile, a.seed);
            let t = Tensor::from_f32(
                vec![a.batch, a.tokens, a.dim],
                x.iter().map(|&v| v as f32).collect(),
            )?;
            write_tensor(&a.output, &t)
                .with_context(|| format!("writing {}", a.output.display()))?;
            writeln!(
                out,
                "wrote {}x{}x{} activations to {}",
                a.batch,
                a.tokens,
                a.dim,
                a.output.display()
            )?;
        }
    }
    Ok(())
}
