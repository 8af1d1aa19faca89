//! Static activation calibration.
//!
//! Activation statistics come from fp32 forwards over a calibration set. Each
//! quantizable layer then gets the clip range, from a grid of ratios of its
//! observed max, that minimizes the summed squared error between quantized
//! and full-precision activations.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Engine, ModelBundle, QuantScheme};
use crate::numerics::Rng;
use crate::quantizer::{fake_quant, Granularity};

pub const DEFAULT_GRID: usize = 80;
pub const DEFAULT_SAMPLE_CAP: usize = 4096;
pub const MIN_RATIO: f32 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub layer: String,
    /// Max-abs of the layer input, one entry per calibration example.
    pub maxes: Vec<f32>,
    /// Number of activation values offered to the reservoir.
    pub seen: u64,
    pub reservoir: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationStats {
    /// One record per quantizable layer, in forward order.
    pub layers: Vec<LayerStats>,
}

impl ActivationStats {
    pub fn examples(&self) -> usize {
        self.layers.first().map_or(0, |l| l.maxes.len())
    }
}

/// Records per-example input max-abs and a seeded reservoir sample for every
/// quantizable layer of `m`, using fp32 forwards.
pub fn collect_stats(m: &ModelBundle, data: &[Vec<u32>], sample_cap: usize, seed: u64) -> Result<ActivationStats> {
    if data.is_empty() {
        return Err(Error::param("calibration data is empty"));
    }
    let engine = Engine::new(m, QuantScheme::fp32())?;
    let names = m.config().linear_layers();
    let index: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let root = Rng::new(seed);
    let mut rngs: Vec<Rng> = (0..names.len()).map(|i| root.fork(i as u64)).collect();
    let mut layers: Vec<LayerStats> = names
        .iter()
        .map(|n| LayerStats {
            layer: n.clone(),
            maxes: Vec::with_capacity(data.len()),
            seen: 0,
            reservoir: Vec::with_capacity(sample_cap),
        })
        .collect();

    for seq in data {
        let mut observe = |layer: &str, values: &[f32]| {
            let Some(&i) = index.get(layer) else { return };
            let stats = &mut layers[i];
            let rng = &mut rngs[i];
            stats.maxes.push(values.iter().fold(0.0f32, |m, &v| m.max(v.abs())));
            for &v in values {
                stats.seen += 1;
                if stats.reservoir.len() < sample_cap {
                    stats.reservoir.push(v);
                } else {
                    let j = rng.below(stats.seen) as usize;
                    if j < sample_cap {
                        stats.reservoir[j] = v;
                    }
                }
            }
        };
        engine.forward_observed(seq, &mut observe)?;
    }
    Ok(ActivationStats { layers })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerScale {
    pub alpha: f32,
    pub ratio: f32,
}

/// Calibrated activation clip range per layer, for one activation bitwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleTable {
    pub bitwidth: u8,
    pub layers: BTreeMap<String, LayerScale>,
}

impl ScaleTable {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::parse("scale table", e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
        Self::from_json(&s).map_err(|e| e.in_file(path))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::from(e).in_file(path))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub ratio: f32,
    pub alpha: f32,
    pub loss: f64,
}

/// Scale table plus the per-layer loss curves it was chosen from.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub table: ScaleTable,
    pub curves: BTreeMap<String, Vec<GridPoint>>,
    /// Layers whose reservoir was all zero; they carry the `alpha = 1.0` sentinel.
    pub degenerate: Vec<String>,
}

/// `grid_size` evenly spaced ratios over `[0.2, 1.0]`, both ends included.
pub fn ratio_grid(grid_size: usize) -> Vec<f32> {
    let last = grid_size - 1;
    (0..grid_size)
        .map(|i| {
            if i == last {
                1.0
            } else {
                MIN_RATIO + (1.0 - MIN_RATIO) * i as f32 / last as f32
            }
        })
        .collect()
}

/// Summed squared error of quantize-dequantize at clip range `alpha`.
pub fn reservoir_loss(samples: &[f32], alpha: f32, bits: u8) -> f64 {
    samples
        .iter()
        .map(|&x| {
            let d = fake_quant(x, alpha, bits) as f64 - x as f64;
            d * d
        })
        .sum()
}

pub fn calibrate_scales(stats: &ActivationStats, bitwidth: u8, grid_size: usize) -> Result<Calibration> {
    if stats.layers.is_empty() {
        return Err(Error::EmptyInput("activation statistics"));
    }
    if grid_size < 2 {
        return Err(Error::param(format!("grid size {grid_size} must be at least 2")));
    }
    if !(crate::quantizer::MIN_BITS..=crate::quantizer::MAX_BITS).contains(&bitwidth) {
        return Err(Error::param(format!("bitwidth {bitwidth} outside [2, 16]")));
    }
    let grid = ratio_grid(grid_size);
    let results: Vec<(String, LayerScale, Vec<GridPoint>, bool)> = stats
        .layers
        .par_iter()
        .map(|layer| {
            let global_max = layer.maxes.iter().fold(0.0f32, |m, &v| m.max(v));
            if global_max == 0.0 || layer.reservoir.iter().all(|&v| v == 0.0) {
                let sentinel = LayerScale { alpha: 1.0, ratio: 1.0 };
                return (layer.layer.clone(), sentinel, Vec::new(), true);
            }
            let curve: Vec<GridPoint> = grid
                .iter()
                .map(|&ratio| {
                    let alpha = ratio * global_max;
                    GridPoint {
                        ratio,
                        alpha,
                        loss: reservoir_loss(&layer.reservoir, alpha, bitwidth),
                    }
                })
                .collect();
            // Ascending ratios with `<=` leaves ties on the larger alpha.
            let best = curve
                .iter()
                .fold(curve[0], |best, p| if p.loss <= best.loss { *p } else { best });
            let scale = LayerScale {
                alpha: best.alpha,
                ratio: best.ratio,
            };
            (layer.layer.clone(), scale, curve, false)
        })
        .collect();

    let mut table = ScaleTable {
        bitwidth,
        layers: BTreeMap::new(),
    };
    let mut curves = BTreeMap::new();
    let mut degenerate = Vec::new();
    for (name, scale, curve, flagged) in results {
        if flagged {
            degenerate.push(name.clone());
        }
        table.layers.insert(name.clone(), scale);
        curves.insert(name, curve);
    }
    Ok(Calibration {
        table,
        curves,
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub weight_bits: u8,
    pub activation_bits: u8,
    pub grid_size: usize,
    pub sample_cap: usize,
    pub seed: u64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            weight_bits: 8,
            activation_bits: 8,
            grid_size: DEFAULT_GRID,
            sample_cap: DEFAULT_SAMPLE_CAP,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationSizeRow {
    pub size: usize,
    /// Top-1 agreement of the static per-column model with fp32 on the probe set.
    pub agreement: f64,
}

/// For each size, calibrates on the first `size` sequences of `data` and
/// measures static per-column top-1 agreement with fp32 on `probe`.
pub fn calibration_size_sweep(
    m: &ModelBundle,
    data: &[Vec<u32>],
    probe: &[Vec<u32>],
    sizes: &[usize],
    opts: &SweepOptions,
) -> Result<Vec<CalibrationSizeRow>> {
    if sizes.is_empty() {
        return Err(Error::param("no calibration sizes given"));
    }
    if sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::param("calibration sizes must be ascending"));
    }
    if let Some(&bad) = sizes.iter().find(|&&s| s == 0 || s > data.len()) {
        return Err(Error::param(format!(
            "calibration size {bad} outside 1..={}",
            data.len()
        )));
    }
    let reference = Engine::new(m, QuantScheme::fp32())?;
    let scheme = QuantScheme::static_(Granularity::PerColumn, opts.weight_bits, opts.activation_bits);
    sizes
        .iter()
        .map(|&size| {
            let stats = collect_stats(m, &data[..size], opts.sample_cap, opts.seed)?;
            let cal = calibrate_scales(&stats, opts.activation_bits, opts.grid_size)?;
            let calibrated = m.clone().with_act_scales(cal.table);
            let candidate = Engine::new(&calibrated, scheme)?;
            let agreement = crate::analysis::top1_agreement(&reference, &candidate, probe)?;
            Ok(CalibrationSizeRow { size, agreement })
        })
        .collect()
}
