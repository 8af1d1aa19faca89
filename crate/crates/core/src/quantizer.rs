//! Symmetric integer quantization.
//!
//! A group of values with clip range `alpha` is mapped onto the integer grid
//! `[-(2^(B-1) - 1), 2^(B-1) - 1]` with scale `s = (2^(B-1) - 1) / alpha`, so
//! `alpha` lands exactly on the largest representable integer (127 for int8).
//! Values outside `[-alpha, alpha]` are clipped first. Rounding is
//! round-half-to-even.
//!
//! Weights are laid out `[in_features, out_features]`, so per-column
//! granularity means one scale per output feature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Payload, Tensor};

pub const MIN_BITS: u8 = 2;
pub const MAX_BITS: u8 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    PerTensor,
    PerColumn,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::PerTensor => "per-tensor",
            Granularity::PerColumn => "per-column",
        }
    }
}

impl std::fmt::Display for Granularity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.as_str())
    }
}

impl std::str::FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-tensor" => Ok(Granularity::PerTensor),
            "per-column" => Ok(Granularity::PerColumn),
            other => Err(Error::param(format!("unknown granularity {other:?}"))),
        }
    }
}

/// Largest representable magnitude for a signed `bits`-wide integer grid.
pub fn qmax(bits: u8) -> i32 {
    (1i32 << (bits - 1)) - 1
}

fn check_bits(bits: u8) -> Result<()> {
    if !(MIN_BITS..=MAX_BITS).contains(&bits) {
        return Err(Error::param(format!(
            "bitwidth {bits} outside [{MIN_BITS}, {MAX_BITS}]"
        )));
    }
    Ok(())
}

/// Clip range and scale for each quantization group of one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantParams {
    alpha: Vec<f32>,
    scale: Vec<f32>,
    bitwidth: u8,
    granularity: Granularity,
}

impl QuantParams {
    /// Builds parameters from per-group clip ranges. A zero range gets scale 1.0.
    pub fn from_alpha(alpha: Vec<f32>, bitwidth: u8, granularity: Granularity) -> Result<Self> {
        check_bits(bitwidth)?;
        if alpha.is_empty() {
            return Err(Error::EmptyInput("quantization parameters need at least one group"));
        }
        if let Some(bad) = alpha.iter().find(|a| !a.is_finite() || **a < 0.0) {
            return Err(Error::param(format!(
                "clip range {bad} must be finite and non-negative"
            )));
        }
        if granularity == Granularity::PerTensor && alpha.len() != 1 {
            return Err(Error::param("per-tensor parameters carry exactly one group"));
        }
        let top = qmax(bitwidth) as f32;
        let scale = alpha.iter().map(|&a| if a == 0.0 { 1.0 } else { top / a }).collect();
        Ok(QuantParams {
            alpha,
            scale,
            bitwidth,
            granularity,
        })
    }

    /// Rebuilds parameters from stored alpha and scale values without recomputing either.
    pub fn from_parts(alpha: Vec<f32>, scale: Vec<f32>, bitwidth: u8, granularity: Granularity) -> Result<Self> {
        check_bits(bitwidth)?;
        if alpha.len() != scale.len() || alpha.is_empty() {
            return Err(Error::Inconsistent(format!(
                "{} clip ranges but {} scales",
                alpha.len(),
                scale.len()
            )));
        }
        if scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Inconsistent("scales must be finite and positive".into()));
        }
        Ok(QuantParams {
            alpha,
            scale,
            bitwidth,
            granularity,
        })
    }

    pub fn alpha(&self) -> &[f32] {
        &self.alpha
    }

    pub fn scale(&self) -> &[f32] {
        &self.scale
    }

    pub fn bitwidth(&self) -> u8 {
        self.bitwidth
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn groups(&self) -> usize {
        self.alpha.len()
    }

    /// Quantization step `1/s` per group.
    pub fn step(&self) -> Vec<f32> {
        self.scale.iter().map(|s| 1.0 / s).collect()
    }

    fn group_of(&self, flat_index: usize) -> usize {
        match self.granularity {
            Granularity::PerTensor => 0,
            Granularity::PerColumn => flat_index % self.alpha.len(),
        }
    }
}

/// Integer payload plus the parameters needed to map it back to floats.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    q: Tensor,
    params: QuantParams,
}

impl QuantizedTensor {
    /// Wraps an integer tensor, checking range and group-count invariants.
    pub fn from_parts(q: Tensor, params: QuantParams) -> Result<Self> {
        let top = qmax(params.bitwidth);
        let in_range = match q.payload() {
            Payload::I8(v) => v.iter().all(|&x| (x as i32).abs() <= top),
            Payload::I32(v) => v.iter().all(|&x| x.checked_abs().is_some_and(|a| a <= top)),
            Payload::F32(_) => return Err(Error::Inconsistent("quantized payload must be integer".into())),
        };
        if !in_range {
            return Err(Error::Inconsistent(format!(
                "integer outside the symmetric {}-bit range",
                params.bitwidth
            )));
        }
        if params.bitwidth > 8 && q.dtype() == crate::numerics::DType::I8 {
            return Err(Error::Inconsistent("i8 payload cannot carry more than 8 bits".into()));
        }
        match params.granularity {
            Granularity::PerTensor if params.groups() != 1 => {
                return Err(Error::Inconsistent("per-tensor tensor with several scales".into()))
            }
            Granularity::PerColumn => {
                let (_, cols) = q.dims2()?;
                if params.groups() != cols {
                    return Err(Error::Inconsistent(format!(
                        "per-column tensor with {cols} columns carries {} scales",
                        params.groups()
                    )));
                }
            }
            _ => {}
        }
        Ok(QuantizedTensor { q, params })
    }

    pub fn q(&self) -> &Tensor {
        &self.q
    }

    pub fn params(&self) -> &QuantParams {
        &self.params
    }

    pub fn shape(&self) -> &[usize] {
        self.q.shape()
    }

    fn ints(&self) -> Vec<i32> {
        match self.q.payload() {
            Payload::I8(v) => v.iter().map(|&x| x as i32).collect(),
            Payload::I32(v) => v.clone(),
            Payload::F32(_) => unreachable!("checked at construction"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseReport {
    /// `||A - Q(A)||_2 / ||A||_2`.
    pub q_a: f64,
    pub mse: f64,
    /// Step `1/s` per group.
    pub step: Vec<f32>,
}

/// Per-group clip range: `clip_ratio` times the group's max-abs.
pub fn compute_range(t: &Tensor, granularity: Granularity, clip_ratio: f32) -> Result<Vec<f32>> {
    if !(clip_ratio > 0.0 && clip_ratio <= 1.0) {
        return Err(Error::param(format!("clip ratio {clip_ratio} outside (0, 1]")));
    }
    let data = t.as_f32()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("cannot compute the range of an empty tensor"));
    }
    let maxima = match granularity {
        Granularity::PerTensor => vec![data.iter().fold(0.0f32, |m, &x| m.max(x.abs()))],
        Granularity::PerColumn => {
            let (_, cols) = t.dims2()?;
            let mut maxima = vec![0.0f32; cols];
            for row in data.chunks_exact(cols) {
                for (m, &x) in maxima.iter_mut().zip(row) {
                    *m = m.max(x.abs());
                }
            }
            maxima
        }
    };
    Ok(maxima.into_iter().map(|m| m * clip_ratio).collect())
}

/// Clip, scale and round one value onto the grid described by `scale` and `top`.
#[inline]
pub(crate) fn quantize_value(x: f32, alpha: f32, scale: f32, top: i32) -> i32 {
    if alpha == 0.0 {
        return 0;
    }
    let clipped = x.clamp(-alpha, alpha);
    ((clipped * scale).round_ties_even() as i32).clamp(-top, top)
}

/// Quantize-dequantize a single value with clip range `alpha`.
pub fn fake_quant(x: f32, alpha: f32, bits: u8) -> f32 {
    if alpha == 0.0 {
        return 0.0;
    }
    let top = qmax(bits);
    let scale = top as f32 / alpha;
    quantize_value(x, alpha, scale, top) as f32 / scale
}

pub fn quantize(t: &Tensor, granularity: Granularity, bitwidth: u8, clip_ratio: f32) -> Result<QuantizedTensor> {
    check_bits(bitwidth)?;
    let alpha = compute_range(t, granularity, clip_ratio)?;
    quantize_with_alpha(t, granularity, bitwidth, alpha)
}

/// Quantizes with caller-supplied clip ranges (one per group).
pub fn quantize_with_alpha(
    t: &Tensor,
    granularity: Granularity,
    bitwidth: u8,
    alpha: Vec<f32>,
) -> Result<QuantizedTensor> {
    if granularity == Granularity::PerColumn {
        let (_, cols) = t.dims2()?;
        if alpha.len() != cols {
            return Err(Error::param(format!("{} clip ranges for {cols} columns", alpha.len())));
        }
    }
    let params = QuantParams::from_alpha(alpha, bitwidth, granularity)?;
    let data = t.as_f32()?;
    let top = qmax(bitwidth);
    let ints = data.iter().enumerate().map(|(i, &x)| {
        let g = params.group_of(i);
        quantize_value(x, params.alpha[g], params.scale[g], top)
    });
    let payload = if bitwidth <= 8 {
        Payload::I8(ints.map(|v| v as i8).collect())
    } else {
        Payload::I32(ints.collect())
    };
    let q = Tensor::new(t.shape().to_vec(), payload)?;
    Ok(QuantizedTensor { q, params })
}

pub fn dequantize(qt: &QuantizedTensor) -> Tensor {
    let data = dequantize_vec(qt);
    Tensor::from_f32(qt.shape().to_vec(), data).expect("shape preserved")
}

pub(crate) fn dequantize_vec(qt: &QuantizedTensor) -> Vec<f32> {
    let p = &qt.params;
    let de = |i: usize, v: i32| v as f32 / p.scale[p.group_of(i)];
    match qt.q.payload() {
        Payload::I8(v) => v.iter().enumerate().map(|(i, &x)| de(i, x as i32)).collect(),
        Payload::I32(v) => v.iter().enumerate().map(|(i, &x)| de(i, x)).collect(),
        Payload::F32(_) => unreachable!("checked at construction"),
    }
}

/// Relative quantization noise of `qt` against the tensor it came from.
pub fn quant_noise(orig: &Tensor, qt: &QuantizedTensor) -> Result<NoiseReport> {
    if orig.shape() != qt.shape() {
        return Err(Error::dim(format!(
            "original shape {:?} differs from quantized shape {:?}",
            orig.shape(),
            qt.shape()
        )));
    }
    let x = orig.as_f32()?;
    let y = dequantize_vec(qt);
    let mut err_sq = 0.0f64;
    let mut norm_sq = 0.0f64;
    let mut deq_sq = 0.0f64;
    for (&a, &b) in x.iter().zip(&y) {
        let d = a as f64 - b as f64;
        err_sq += d * d;
        norm_sq += (a as f64) * (a as f64);
        deq_sq += (b as f64) * (b as f64);
    }
    let q_a = if norm_sq == 0.0 {
        if deq_sq != 0.0 {
            return Err(Error::Inconsistent(
                "zero-norm original with a nonzero quantized tensor".into(),
            ));
        }
        0.0
    } else {
        (err_sq / norm_sq).sqrt()
    };
    Ok(NoiseReport {
        q_a,
        mse: err_sq / x.len() as f64,
        step: qt.params.step(),
    })
}

/// Integer matrix product with per-column rescaling.
///
/// `aq` (`M×K`, per-tensor) times `wq` (`K×N`). Products accumulate in i32;
/// each output column is divided by `s_A * s_W[g]` and `bias` is added in f32.
pub fn int_matmul(aq: &QuantizedTensor, wq: &QuantizedTensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (m, k, n) = check_int_matmul(aq, wq, bias)?;
    let bound = k as i64 * qmax(aq.params.bitwidth) as i64 * qmax(wq.params.bitwidth) as i64;
    if bound > i32::MAX as i64 {
        return Err(Error::OverflowRisk(format!(
            "K={k} with {}-bit activations and {}-bit weights can exceed the i32 accumulator",
            aq.params.bitwidth, wq.params.bitwidth
        )));
    }
    let acc = accumulate::<i32>(&aq.ints(), &wq.ints(), m, k, n);
    rescale(acc.into_iter().map(|v| v as f64), aq, wq, bias, m, n)
}

/// Same contract as [`int_matmul`] but with an i64 accumulator, for bitwidths
/// whose products do not fit the i32 bound.
pub(crate) fn int_matmul_wide(aq: &QuantizedTensor, wq: &QuantizedTensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (m, k, n) = check_int_matmul(aq, wq, bias)?;
    let widen = |v: Vec<i32>| v.into_iter().map(i64::from).collect::<Vec<_>>();
    let acc = accumulate::<i64>(&widen(aq.ints()), &widen(wq.ints()), m, k, n);
    rescale(acc.into_iter().map(|v| v as f64), aq, wq, bias, m, n)
}

/// Chooses the narrow accumulator whenever it is provably safe.
pub(crate) fn int_matmul_auto(aq: &QuantizedTensor, wq: &QuantizedTensor, bias: Option<&Tensor>) -> Result<Tensor> {
    match int_matmul(aq, wq, bias) {
        Err(Error::OverflowRisk(_)) => int_matmul_wide(aq, wq, bias),
        other => other,
    }
}

fn check_int_matmul(
    aq: &QuantizedTensor,
    wq: &QuantizedTensor,
    bias: Option<&Tensor>,
) -> Result<(usize, usize, usize)> {
    if aq.params.granularity != Granularity::PerTensor {
        return Err(Error::param("activations must be quantized per-tensor"));
    }
    let (m, k) = aq.q.dims2()?;
    let (k2, n) = wq.q.dims2()?;
    if k != k2 {
        return Err(Error::dim(format!(
            "int_matmul inner dimensions differ: {m}x{k} times {k2}x{n}"
        )));
    }
    if let Some(b) = bias {
        if b.numel() != n {
            return Err(Error::dim(format!("bias has {} elements, expected {n}", b.numel())));
        }
        b.as_f32()?;
    }
    Ok((m, k, n))
}

fn accumulate<T>(a: &[T], w: &[T], m: usize, k: usize, n: usize) -> Vec<T>
where
    T: Copy + Default + PartialEq + std::ops::Mul<Output = T> + std::ops::AddAssign,
{
    let zero = T::default();
    let mut acc = vec![zero; m * n];
    for i in 0..m {
        let row = &mut acc[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == zero {
                continue;
            }
            for (o, &wv) in row.iter_mut().zip(&w[p * n..(p + 1) * n]) {
                *o += av * wv;
            }
        }
    }
    acc
}

fn rescale(
    acc: impl Iterator<Item = f64>,
    aq: &QuantizedTensor,
    wq: &QuantizedTensor,
    bias: Option<&Tensor>,
    m: usize,
    n: usize,
) -> Result<Tensor> {
    let sa = aq.params.scale[0] as f64;
    let denom: Vec<f64> = (0..n)
        .map(|j| sa * wq.params.scale[wq.params.group_of(j)] as f64)
        .collect();
    let bias = bias.map(|b| b.as_f32()).transpose()?;
    let out = acc
        .enumerate()
        .map(|(idx, v)| {
            let j = idx % n;
            let y = (v / denom[j]) as f32;
            match bias {
                Some(b) => y + b[j],
                None => y,
            }
        })
        .collect();
    Tensor::from_f32(vec![m, n], out)
}
