//! Diagnostics: weight noise versus width and granularity, error growth with
//! depth, max-activation spread, agreement across precisions, storage size,
//! hosting arithmetic and an integer-matmul micro-benchmark.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::calibrate::ActivationStats;
use crate::error::{Error, Result};
use crate::model::{self, Engine, ModelBundle, QuantScheme};
use crate::numerics::{self, matmul, mean_std, Rng, Tensor};
use crate::quantizer::{self, Granularity};

/// Fraction of probe positions whose argmax token matches between two engines.
pub fn top1_agreement(reference: &Engine, candidate: &Engine, probe: &[Vec<u32>]) -> Result<f64> {
    let (agree, total) = compare_logits(reference, candidate, probe)?
        .into_iter()
        .fold((0usize, 0usize), |(a, t), c| (a + c.agree, t + c.positions));
    if total == 0 {
        return Err(Error::EmptyInput("probe set"));
    }
    Ok(agree as f64 / total as f64)
}

struct LogitComparison {
    agree: usize,
    positions: usize,
    sq_err: f64,
    elements: usize,
}

fn compare_logits(reference: &Engine, candidate: &Engine, probe: &[Vec<u32>]) -> Result<Vec<LogitComparison>> {
    probe
        .par_iter()
        .map(|seq| {
            let a = reference.forward(seq)?.logits;
            let b = candidate.forward(seq)?.logits;
            let (_, vocab) = a.dims2()?;
            let (a, b) = (a.as_f32()?, b.as_f32()?);
            let agree = a
                .chunks_exact(vocab)
                .zip(b.chunks_exact(vocab))
                .filter(|(x, y)| model::argmax_index(x) == model::argmax_index(y))
                .count();
            Ok(LogitComparison {
                agree,
                positions: seq.len(),
                sq_err: numerics::mse(a, b) * a.len() as f64,
                elements: a.len(),
            })
        })
        .collect()
}

/// Seeded uniform random token sequences.
pub fn probe_set(count: usize, len: usize, vocab: usize, seed: u64) -> Vec<Vec<u32>> {
    let root = Rng::new(seed);
    (0..count)
        .map(|i| {
            let mut rng = root.fork(i as u64);
            (0..len).map(|_| rng.below(vocab as u64) as u32).collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrecisionRow {
    pub scheme: String,
    pub agreement: f64,
    pub logit_mse: f64,
}

/// Top-1 agreement and logit MSE against fp32 for each scheme.
pub fn precision_grid(fp: &ModelBundle, schemes: &[QuantScheme], probe: &[Vec<u32>]) -> Result<Vec<PrecisionRow>> {
    let reference = Engine::new(fp, QuantScheme::fp32())?;
    schemes
        .iter()
        .map(|scheme| {
            let candidate = Engine::new(fp, *scheme)?;
            let cmp = compare_logits(&reference, &candidate, probe)?;
            let agree: usize = cmp.iter().map(|c| c.agree).sum();
            let positions: usize = cmp.iter().map(|c| c.positions).sum();
            let sq: f64 = cmp.iter().map(|c| c.sq_err).sum();
            let elements: usize = cmp.iter().map(|c| c.elements).sum();
            if positions == 0 {
                return Err(Error::EmptyInput("probe set"));
            }
            Ok(PrecisionRow {
                scheme: scheme.label(),
                agreement: agree as f64 / positions as f64,
                logit_mse: sq / elements as f64,
            })
        })
        .collect()
}

/// Number of planted outliers in a `width`-wide synthetic matrix.
pub fn outlier_count(width: usize) -> usize {
    width.div_ceil(256)
}

/// `width × width` standard-normal matrix with `⌈width/256⌉` outliers of
/// magnitude `0.05·width` (random sign) at distinct seeded positions.
pub fn synth_outlier_matrix(width: usize, seed: u64) -> Result<Tensor> {
    if width < 8 {
        return Err(Error::param(format!("matrix width {width} must be at least 8")));
    }
    let n = width * width;
    let root = Rng::new(seed);
    let mut values_rng = root.fork(width as u64);
    let mut data: Vec<f32> = (0..n).map(|_| values_rng.gaussian() as f32).collect();
    let mut pos_rng = root.fork(!(width as u64));
    let magnitude = 0.05 * width as f32;
    let mut planted = Vec::with_capacity(outlier_count(width));
    while planted.len() < outlier_count(width) {
        let p = pos_rng.below(n as u64) as usize;
        if planted.contains(&p) {
            continue;
        }
        planted.push(p);
        data[p] = if pos_rng.bernoulli(0.5) { magnitude } else { -magnitude };
    }
    Tensor::from_f32(vec![width, width], data)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseSweepRow {
    pub width: usize,
    pub granularity: Granularity,
    pub q_a: f64,
}

/// Relative weight noise of the synthetic outlier matrix per (width, granularity).
pub fn noise_sweep(
    widths: &[usize],
    granularities: &[Granularity],
    bitwidth: u8,
    seed: u64,
) -> Result<Vec<NoiseSweepRow>> {
    if widths.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::param("widths must be ascending"));
    }
    let per_width: Vec<Vec<NoiseSweepRow>> = widths
        .par_iter()
        .map(|&width| {
            let t = synth_outlier_matrix(width, seed)?;
            granularities
                .iter()
                .map(|&g| {
                    let qt = quantizer::quantize(&t, g, bitwidth, 1.0)?;
                    Ok(NoiseSweepRow {
                        width,
                        granularity: g,
                        q_a: quantizer::quant_noise(&t, &qt)?.q_a,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_width.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthRow {
    /// 1-based block index.
    pub layer: usize,
    pub mse: f64,
    /// `None` when either side has zero variance.
    pub pearson: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthProfile {
    pub rows: Vec<DepthRow>,
}

impl DepthProfile {
    /// Mean MSE over the 1-based inclusive block range.
    pub fn mean_mse(&self, first: usize, last: usize) -> f64 {
        let sel: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| (first..=last).contains(&r.layer))
            .map(|r| r.mse)
            .collect();
        sel.iter().sum::<f64>() / sel.len().max(1) as f64
    }
}

/// Per-block MSE and Pearson r between fp32 and `scheme` hidden states over
/// the whole probe batch.
pub fn depth_profile(fp: &ModelBundle, scheme: &QuantScheme, probe: &[Vec<u32>]) -> Result<DepthProfile> {
    if probe.is_empty() {
        return Err(Error::EmptyInput("probe set"));
    }
    let reference = Engine::new(fp, QuantScheme::fp32())?;
    let candidate = Engine::new(fp, *scheme)?;
    let runs: Vec<(Vec<Tensor>, Vec<Tensor>)> = probe
        .par_iter()
        .map(|seq| Ok((reference.forward(seq)?.hidden, candidate.forward(seq)?.hidden)))
        .collect::<Result<_>>()?;
    let layers = fp.config().n_layers;
    let rows = (0..layers)
        .map(|l| {
            let mut a = Vec::new();
            let mut b = Vec::new();
            for (ra, rb) in &runs {
                a.extend_from_slice(ra[l].as_f32()?);
                b.extend_from_slice(rb[l].as_f32()?);
            }
            Ok(DepthRow {
                layer: l + 1,
                mse: numerics::mse(&a, &b),
                pearson: numerics::pearson(&a, &b),
            })
        })
        .collect::<Result<_>>()?;
    Ok(DepthProfile { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaxActivationRow {
    pub layer: String,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub stddev: f64,
}

/// Spread of the per-example max activation per layer, layer order preserved.
pub fn max_activation_report(stats: &ActivationStats) -> Result<Vec<MaxActivationRow>> {
    if stats.layers.is_empty() || stats.examples() == 0 {
        return Err(Error::EmptyInput("activation statistics"));
    }
    Ok(stats
        .layers
        .iter()
        .map(|l| {
            let values: Vec<f64> = l.maxes.iter().map(|&v| v as f64).collect();
            let (mean, stddev) = mean_std(&values);
            MaxActivationRow {
                layer: l.layer.clone(),
                min: values.iter().copied().fold(f64::INFINITY, f64::min),
                max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                mean,
                stddev,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeReport {
    pub fp_bytes: u64,
    pub q_bytes: u64,
    pub ratio: f64,
}

/// Byte sizes of two bundle files, both of which must parse.
pub fn size_report(fp_path: impl AsRef<Path>, q_path: impl AsRef<Path>) -> Result<SizeReport> {
    let fp_bytes = bundle_file_size(fp_path.as_ref())?;
    let q_bytes = bundle_file_size(q_path.as_ref())?;
    Ok(SizeReport {
        fp_bytes,
        q_bytes,
        ratio: q_bytes as f64 / fp_bytes as f64,
    })
}

fn bundle_file_size(path: &Path) -> Result<u64> {
    model::load_bundle(path)?;
    Ok(std::fs::metadata(path).map_err(|e| Error::from(e).in_file(path))?.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HostingConfig {
    /// gCO₂eq per hour of host time.
    pub carbon_rate: f64,
    /// Currency per hour of host time.
    pub price_rate: f64,
    /// Seconds per prediction.
    pub latency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HostingEstimate {
    pub hours: f64,
    pub g_co2eq: f64,
    pub cost: f64,
}

/// Sequential-prediction hosting cost; linear in latency, rates and count.
pub fn hosting_estimate(cfg: &HostingConfig, predictions: f64) -> Result<HostingEstimate> {
    let inputs = [
        ("carbon rate", cfg.carbon_rate),
        ("price rate", cfg.price_rate),
        ("latency", cfg.latency),
        ("predictions", predictions),
    ];
    if let Some((name, v)) = inputs.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::param(format!("{name} must be non-negative, got {v}")));
    }
    let hours = cfg.latency * predictions / 3600.0;
    Ok(HostingEstimate {
        hours,
        g_co2eq: hours * cfg.carbon_rate,
        cost: hours * cfg.price_rate,
    })
}

/// FFN input projections of the 2B/6B code models: `[1, d] × [d, 4d]`.
pub const DEFAULT_BENCH_DIMS: [(usize, usize, usize); 2] = [(1, 2560, 10240), (1, 4096, 16384)];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub repeats: usize,
    pub fp32_mean_s: f64,
    pub fp32_std_s: f64,
    pub int8_mean_s: f64,
    pub int8_std_s: f64,
}

/// Wall-clock comparison of the fp32 and int8 (including dynamic activation
/// quantization) matmul paths. One warm-up run per path is discarded.
/// Informational only; timings depend on the host.
pub fn int_matmul_bench(dims: &[(usize, usize, usize)], repeats: usize, seed: u64) -> Result<Vec<BenchRow>> {
    if repeats < 3 {
        return Err(Error::param(format!("repeats {repeats} must be at least 3")));
    }
    let root = Rng::new(seed);
    dims.iter()
        .enumerate()
        .map(|(i, &(m, k, n))| {
            let mut rng = root.fork(i as u64);
            let a = Tensor::from_f32(vec![m, k], (0..m * k).map(|_| rng.gaussian() as f32).collect())?;
            let w = Tensor::from_f32(vec![k, n], (0..k * n).map(|_| rng.normal(0.0, 0.02) as f32).collect())?;
            let wq = quantizer::quantize(&w, Granularity::PerColumn, 8, 1.0)?;

            let fp_times = time_runs(repeats, || matmul(&a, &w).map(drop))?;
            let int_times = time_runs(repeats, || {
                let aq = quantizer::quantize(&a, Granularity::PerTensor, 8, 1.0)?;
                quantizer::int_matmul(&aq, &wq, None).map(drop)
            })?;
            let (fp32_mean_s, fp32_std_s) = mean_std(&fp_times);
            let (int8_mean_s, int8_std_s) = mean_std(&int_times);
            Ok(BenchRow {
                m,
                k,
                n,
                repeats,
                fp32_mean_s,
                fp32_std_s,
                int8_mean_s,
                int8_std_s,
            })
        })
        .collect()
}

fn time_runs(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<Vec<f64>> {
    f()?;
    (0..repeats)
        .map(|_| {
            let start = Instant::now();
            f()?;
            Ok(start.elapsed().as_secs_f64())
        })
        .collect()
}
