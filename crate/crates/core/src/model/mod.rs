//! Desk-scale decoder-only transformer used as the quantization substrate.
//!
//! Pre-layer-norm blocks with learned absolute positions and a GELU FFN.
//! Linear layers compute `y = x·W + b` with `W` shaped `[in, out]`. The six
//! in-block linear layers (`attn.{q,k,v,out}`, `ffn.{in,out}`) are the ones
//! that get quantized; the LM head joins them only when
//! [`ModelConfig::quantize_head`] is set.

mod forward;
mod io;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::calibrate::ScaleTable;
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};
use crate::quantizer::{self, Granularity, QuantizedTensor};

pub use forward::{argmax_index, forward, generate, Engine, ForwardOutput, LinearTrace, Strategy};
pub use io::{decode_bundle, encode_bundle, load_bundle, read_token_jsonl, save_bundle, write_token_jsonl, TokenLine};

/// Standard deviation of the fixture's Gaussian initialisation.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    /// Also quantize the output projection. Off by default.
    #[serde(default)]
    pub quantize_head: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 256,
            d_model: 128,
            n_heads: 4,
            n_layers: 8,
            d_ff: 4 * 128,
            max_seq_len: 128,
            quantize_head: false,
        }
    }
}

impl ModelConfig {
    /// Default architecture at a different width, `d_ff = 4·d_model`.
    pub fn with_width(d_model: usize) -> Self {
        ModelConfig {
            d_model,
            d_ff: 4 * d_model,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("d_ff", self.d_ff),
            ("max_seq_len", self.max_seq_len),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::param(format!("model config field {name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::param(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    /// Closed-form parameter count:
    /// `V·d + S·d + L·(4d² + 4d + 2·d·f + f + d + 4d) + 2d + d·V`.
    pub fn parameter_count(&self) -> usize {
        let (v, d, f, s, l) = (
            self.vocab_size,
            self.d_model,
            self.d_ff,
            self.max_seq_len,
            self.n_layers,
        );
        let attn = 4 * (d * d + d);
        let ffn = d * f + f + f * d + d;
        let norms = 2 * 2 * d;
        v * d + s * d + l * (attn + ffn + norms) + 2 * d + d * v
    }

    /// Names of the quantizable linear layers, in forward order.
    pub fn linear_layers(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.n_layers * 6 + 1);
        for i in 0..self.n_layers {
            for part in BLOCK_LINEARS {
                names.push(format!("layers.{i}.{part}"));
            }
        }
        if self.quantize_head {
            names.push(HEAD.to_string());
        }
        names
    }

    /// `[in, out]` shape of a linear layer's weight.
    fn linear_shape(&self, part: &str) -> (usize, usize) {
        match part {
            "attn.q" | "attn.k" | "attn.v" | "attn.out" => (self.d_model, self.d_model),
            "ffn.in" => (self.d_model, self.d_ff),
            "ffn.out" => (self.d_ff, self.d_model),
            _ => (self.d_model, self.vocab_size),
        }
    }

    /// Every fp32 tensor of an unquantized bundle with its shape, in a fixed order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.d_model;
        let mut out = vec![
            ("tok_emb".to_string(), vec![self.vocab_size, d]),
            ("pos_emb".to_string(), vec![self.max_seq_len, d]),
        ];
        for i in 0..self.n_layers {
            for norm in ["ln1", "ln2"] {
                out.push((format!("layers.{i}.{norm}.gain"), vec![d]));
                out.push((format!("layers.{i}.{norm}.bias"), vec![d]));
            }
            for part in BLOCK_LINEARS {
                let (fan_in, fan_out) = self.linear_shape(part);
                out.push((format!("layers.{i}.{part}.weight"), vec![fan_in, fan_out]));
                out.push((format!("layers.{i}.{part}.bias"), vec![fan_out]));
            }
        }
        out.push(("ln_f.gain".to_string(), vec![d]));
        out.push(("ln_f.bias".to_string(), vec![d]));
        out.push((format!("{HEAD}.weight"), vec![d, self.vocab_size]));
        out
    }
}

pub(crate) const BLOCK_LINEARS: [&str; 6] = ["attn.q", "attn.k", "attn.v", "attn.out", "ffn.in", "ffn.out"];
pub(crate) const HEAD: &str = "head";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantMode {
    Fp32,
    /// Quantized weights, fp32 activations.
    WeightOnly,
    /// Activation clip range from the live max-abs of each input.
    Dynamic,
    /// Activation clip range from a calibrated scale table.
    Static,
}

impl std::str::FromStr for QuantMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fp32" => Ok(QuantMode::Fp32),
            "weight-only" => Ok(QuantMode::WeightOnly),
            "dynamic" => Ok(QuantMode::Dynamic),
            "static" => Ok(QuantMode::Static),
            other => Err(Error::param(format!("unknown quantization mode {other:?}"))),
        }
    }
}

/// How a forward pass treats the linear layers. Bit fields are ignored in fp32 mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantScheme {
    pub mode: QuantMode,
    pub weight_granularity: Granularity,
    pub weight_bits: u8,
    pub activation_bits: u8,
}

impl QuantScheme {
    pub fn fp32() -> Self {
        QuantScheme {
            mode: QuantMode::Fp32,
            weight_granularity: Granularity::PerTensor,
            weight_bits: 32,
            activation_bits: 32,
        }
    }

    pub fn dynamic(weight_granularity: Granularity, weight_bits: u8, activation_bits: u8) -> Self {
        QuantScheme {
            mode: QuantMode::Dynamic,
            weight_granularity,
            weight_bits,
            activation_bits,
        }
    }

    pub fn static_(weight_granularity: Granularity, weight_bits: u8, activation_bits: u8) -> Self {
        QuantScheme {
            mode: QuantMode::Static,
            ..Self::dynamic(weight_granularity, weight_bits, activation_bits)
        }
    }

    pub fn weight_only(weight_granularity: Granularity, weight_bits: u8) -> Self {
        QuantScheme {
            mode: QuantMode::WeightOnly,
            weight_granularity,
            weight_bits,
            activation_bits: 32,
        }
    }

    /// `WxAy` label, or `fp32`.
    pub fn label(&self) -> String {
        match self.mode {
            QuantMode::Fp32 => "fp32".into(),
            QuantMode::WeightOnly => format!("W{}", self.weight_bits),
            _ => format!("W{}A{}", self.weight_bits, self.activation_bits),
        }
    }

    fn validate(&self) -> Result<()> {
        let check = |b: u8| {
            if (quantizer::MIN_BITS..=quantizer::MAX_BITS).contains(&b) {
                Ok(())
            } else {
                Err(Error::param(format!("bitwidth {b} outside [2, 16]")))
            }
        };
        match self.mode {
            QuantMode::Fp32 => Ok(()),
            QuantMode::WeightOnly => check(self.weight_bits),
            QuantMode::Dynamic | QuantMode::Static => {
                check(self.weight_bits)?;
                check(self.activation_bits)
            }
        }
    }
}

/// Quantized linear-layer weights plus the scheme that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantState {
    pub scheme: QuantScheme,
    /// Keyed by layer name, e.g. `layers.0.attn.q`.
    pub weights: BTreeMap<String, QuantizedTensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    config: ModelConfig,
    tensors: BTreeMap<String, Tensor>,
    quant: Option<QuantState>,
    act_scales: Option<ScaleTable>,
}

impl ModelBundle {
    /// Assembles a bundle, checking every tensor against the config.
    pub fn new(
        config: ModelConfig,
        tensors: BTreeMap<String, Tensor>,
        quant: Option<QuantState>,
        act_scales: Option<ScaleTable>,
    ) -> Result<Self> {
        config.validate()?;
        let quantized: Vec<String> = quant
            .as_ref()
            .map(|q| q.weights.keys().map(|k| format!("{k}.weight")).collect())
            .unwrap_or_default();
        let expected = config.tensor_shapes();
        for (name, shape) in &expected {
            if quantized.contains(name) {
                if tensors.contains_key(name) {
                    return Err(Error::Inconsistent(format!(
                        "{name} present both as fp32 and quantized"
                    )));
                }
                continue;
            }
            match tensors.get(name) {
                None => return Err(Error::Inconsistent(format!("missing tensor {name}"))),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::dim(format!(
                        "{name}: expected shape {shape:?}, found {:?}",
                        t.shape()
                    )))
                }
                Some(t) => {
                    t.as_f32()?;
                }
            }
        }
        if let Some(extra) = tensors.keys().find(|k| !expected.iter().any(|(n, _)| n == *k)) {
            return Err(Error::Inconsistent(format!("unexpected tensor {extra}")));
        }
        if let Some(q) = &quant {
            let layers = config.linear_layers();
            if q.weights.len() != layers.len() || layers.iter().any(|l| !q.weights.contains_key(l)) {
                return Err(Error::Inconsistent(
                    "quant state must hold exactly one weight per quantizable layer".into(),
                ));
            }
            for (layer, qt) in &q.weights {
                let (fan_in, fan_out) = config.linear_shape(layer_part(layer));
                if qt.shape() != [fan_in, fan_out] {
                    return Err(Error::dim(format!(
                        "{layer}: quantized weight shape {:?}, expected {:?}",
                        qt.shape(),
                        [fan_in, fan_out]
                    )));
                }
            }
        }
        Ok(ModelBundle {
            config,
            tensors,
            quant,
            act_scales,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| Error::Lookup(name.to_string()))
    }

    pub fn quant_state(&self) -> Option<&QuantState> {
        self.quant.as_ref()
    }

    pub fn act_scales(&self) -> Option<&ScaleTable> {
        self.act_scales.as_ref()
    }

    /// Same bundle carrying a calibrated activation scale table.
    pub fn with_act_scales(mut self, table: ScaleTable) -> Self {
        self.act_scales = Some(table);
        self
    }

    /// Total number of scalar parameters currently stored (fp32 and integer).
    pub fn stored_parameters(&self) -> usize {
        let fp: usize = self.tensors.values().map(Tensor::numel).sum();
        let q: usize = self
            .quant
            .iter()
            .flat_map(|q| q.weights.values())
            .map(|w| w.q().numel())
            .sum();
        fp + q
    }
}

/// Part name (`attn.q`, `head`, ...) of a full layer name.
pub(crate) fn layer_part(layer: &str) -> &str {
    match layer.strip_prefix("layers.") {
        Some(rest) => rest.split_once('.').map_or(rest, |(_, part)| part),
        None => layer,
    }
}

/// Deterministic Gaussian(0, 0.02) model; biases zero, norm gains one.
pub fn init_fixture(config: &ModelConfig, seed: u64) -> Result<ModelBundle> {
    config.validate()?;
    let root = Rng::new(seed);
    let mut tensors = BTreeMap::new();
    for (index, (name, shape)) in config.tensor_shapes().into_iter().enumerate() {
        let numel: usize = shape.iter().product();
        let data = if name.ends_with(".gain") {
            vec![1.0; numel]
        } else if name.ends_with(".bias") {
            vec![0.0; numel]
        } else {
            let mut rng = root.fork(index as u64);
            (0..numel).map(|_| rng.normal(0.0, INIT_STD) as f32).collect()
        };
        tensors.insert(name, Tensor::from_f32(shape, data)?);
    }
    ModelBundle::new(config.clone(), tensors, None, None)
}

/// Replaces every quantizable weight with its quantized form under `scheme`.
///
/// Biases, norms and embeddings are untouched. A bundle that is already
/// quantized is re-quantized from its dequantized weights.
pub fn quantize_model(m: &ModelBundle, scheme: &QuantScheme) -> Result<ModelBundle> {
    if scheme.mode == QuantMode::Fp32 {
        return Err(Error::param("quantize_model needs a non-fp32 scheme"));
    }
    scheme.validate()?;
    let mut tensors = m.tensors.clone();
    let mut weights = BTreeMap::new();
    for layer in m.config.linear_layers() {
        let key = format!("{layer}.weight");
        let fp = match tensors.remove(&key) {
            Some(t) => t,
            None => {
                let stored = m
                    .quant
                    .as_ref()
                    .and_then(|q| q.weights.get(&layer))
                    .ok_or_else(|| Error::Inconsistent(format!("no weight for {layer}")))?;
                quantizer::dequantize(stored)
            }
        };
        let qt = quantizer::quantize(&fp, scheme.weight_granularity, scheme.weight_bits, 1.0)?;
        weights.insert(layer, qt);
    }
    ModelBundle::new(
        m.config.clone(),
        tensors,
        Some(QuantState {
            scheme: *scheme,
            weights,
        }),
        m.act_scales.clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            vocab_size: 32,
            d_model: 16,
            n_heads: 2,
            n_layers: 2,
            d_ff: 64,
            max_seq_len: 16,
            quantize_head: false,
        }
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = ModelConfig {
            n_heads: 3,
            ..ModelConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Parameter(_))));
        let zero = ModelConfig {
            n_layers: 0,
            ..ModelConfig::default()
        };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn parameter_count_matches_fixture() {
        for cfg in [tiny(), ModelConfig::default()] {
            let m = init_fixture(&cfg, 1).unwrap();
            assert_eq!(m.stored_parameters(), cfg.parameter_count());
        }
        // d=128, V=256, S=128, L=8, f=512:
        // 32768 + 16384 + 8·(66048 + 131712 + 512) + 256 + 32768 = 1668352
        assert_eq!(ModelConfig::default().parameter_count(), 1_668_352);
    }

    #[test]
    fn fixture_is_deterministic_and_seed_dependent() {
        let a = init_fixture(&tiny(), 5).unwrap();
        let b = init_fixture(&tiny(), 5).unwrap();
        let c = init_fixture(&tiny(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(
            a.tensor("layers.0.attn.q.weight").unwrap(),
            c.tensor("layers.0.attn.q.weight").unwrap()
        );
    }

    #[test]
    fn quantize_model_replaces_only_linear_weights() {
        let m = init_fixture(&tiny(), 3).unwrap();
        let q = quantize_model(&m, &QuantScheme::dynamic(Granularity::PerColumn, 8, 8)).unwrap();
        let state = q.quant_state().unwrap();
        assert_eq!(state.weights.len(), 12);
        assert!(q.tensor("layers.0.attn.q.weight").is_err());
        assert_eq!(
            q.tensor("layers.0.attn.q.bias").unwrap(),
            m.tensor("layers.0.attn.q.bias").unwrap()
        );
        assert_eq!(q.tensor("tok_emb").unwrap(), m.tensor("tok_emb").unwrap());
        assert_eq!(q.tensor("head.weight").unwrap(), m.tensor("head.weight").unwrap());
        assert_eq!(q.stored_parameters(), m.stored_parameters());
    }

    #[test]
    fn quantize_head_toggle() {
        let cfg = ModelConfig {
            quantize_head: true,
            ..tiny()
        };
        let m = init_fixture(&cfg, 3).unwrap();
        let q = quantize_model(&m, &QuantScheme::weight_only(Granularity::PerTensor, 8)).unwrap();
        assert!(q.quant_state().unwrap().weights.contains_key("head"));
        assert!(q.tensor("head.weight").is_err());
    }

    #[test]
    fn fp32_scheme_is_not_a_quantization() {
        let m = init_fixture(&tiny(), 3).unwrap();
        assert!(matches!(
            quantize_model(&m, &QuantScheme::fp32()),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn sixteen_bit_weights_respect_step_bound() {
        let m = init_fixture(&tiny(), 4).unwrap();
        let q = quantize_model(&m, &QuantScheme::weight_only(Granularity::PerTensor, 16)).unwrap();
        for (layer, qt) in &q.quant_state().unwrap().weights {
            let orig = m.tensor(&format!("{layer}.weight")).unwrap().as_f32().unwrap();
            let deq = quantizer::dequantize(qt);
            let alpha = qt.params().alpha()[0];
            let bound = alpha / (2.0 * 32767.0);
            let worst = orig
                .iter()
                .zip(deq.as_f32().unwrap())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f32, f32::max);
            assert!(worst <= bound * (1.0 + 1e-3), "{layer}: {worst} > {bound}");
        }
    }

    #[test]
    fn layer_part_names() {
        assert_eq!(layer_part("layers.3.ffn.in"), "ffn.in");
        assert_eq!(layer_part("head"), "head");
    }
}
