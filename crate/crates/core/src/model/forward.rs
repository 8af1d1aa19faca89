use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::numerics::{matmul_slices, Rng, Tensor};
use crate::quantizer::{self, Granularity, QuantizedTensor};

use super::{ModelBundle, QuantMode, QuantScheme, BLOCK_LINEARS, HEAD};

const LN_EPS: f32 = 1e-5;

/// One linear layer prepared for a given scheme.
enum Linear<'a> {
    Fp {
        weight: Cow<'a, [f32]>,
        fan_in: usize,
        fan_out: usize,
    },
    Quant(Cow<'a, QuantizedTensor>),
}

struct LinearLayer<'a> {
    name: String,
    kind: Linear<'a>,
    bias: Option<&'a Tensor>,
    /// Static-mode activation clip range.
    static_alpha: Option<f32>,
}

struct Block<'a> {
    ln1: (&'a [f32], &'a [f32]),
    ln2: (&'a [f32], &'a [f32]),
    q: LinearLayer<'a>,
    k: LinearLayer<'a>,
    v: LinearLayer<'a>,
    out: LinearLayer<'a>,
    ffn_in: LinearLayer<'a>,
    ffn_out: LinearLayer<'a>,
}

/// What a linear layer saw on one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTrace {
    pub layer: String,
    /// Max-abs of the layer input.
    pub input_max_abs: f32,
    /// Activation clip range used, when activations were quantized.
    pub activation_alpha: Option<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `[seq, vocab]`.
    pub logits: Tensor,
    /// Residual stream after each block, `[seq, d_model]`.
    pub hidden: Vec<Tensor>,
    pub traces: Vec<LinearTrace>,
}

/// A bundle bound to a quantization scheme, ready to run forwards.
///
/// Stored quantized weights take precedence over the scheme's weight
/// settings; fp32 weights are quantized on construction when the scheme asks
/// for it.
pub struct Engine<'a> {
    bundle: &'a ModelBundle,
    scheme: QuantScheme,
    blocks: Vec<Block<'a>>,
    head: LinearLayer<'a>,
}

impl<'a> Engine<'a> {
    pub fn new(bundle: &'a ModelBundle, scheme: QuantScheme) -> Result<Self> {
        scheme.validate()?;
        let table = match scheme.mode {
            QuantMode::Static => {
                let table = bundle.act_scales().ok_or(Error::MissingCalibration)?;
                if table.bitwidth != scheme.activation_bits {
                    return Err(Error::param(format!(
                        "scale table calibrated for {} bits, scheme uses {}",
                        table.bitwidth, scheme.activation_bits
                    )));
                }
                Some(table)
            }
            _ => None,
        };
        let cfg = bundle.config();
        let prepare = |layer: String| -> Result<LinearLayer<'a>> {
            let quantized = cfg.quantize_head || layer != HEAD;
            let stored = bundle.quant_state().and_then(|q| q.weights.get(&layer));
            let kind = match (stored, scheme.mode) {
                (Some(qt), QuantMode::Fp32 | QuantMode::WeightOnly) => Linear::Fp {
                    weight: Cow::Owned(quantizer::dequantize_vec(qt)),
                    fan_in: qt.shape()[0],
                    fan_out: qt.shape()[1],
                },
                (Some(qt), _) => Linear::Quant(Cow::Borrowed(qt)),
                (None, mode) => {
                    let w = bundle.tensor(&format!("{layer}.weight"))?;
                    let (fan_in, fan_out) = w.dims2()?;
                    match mode {
                        QuantMode::Fp32 => Linear::Fp {
                            weight: Cow::Borrowed(w.as_f32()?),
                            fan_in,
                            fan_out,
                        },
                        _ if !quantized => Linear::Fp {
                            weight: Cow::Borrowed(w.as_f32()?),
                            fan_in,
                            fan_out,
                        },
                        QuantMode::WeightOnly => {
                            let qt = quantizer::quantize(w, scheme.weight_granularity, scheme.weight_bits, 1.0)?;
                            Linear::Fp {
                                weight: Cow::Owned(quantizer::dequantize_vec(&qt)),
                                fan_in,
                                fan_out,
                            }
                        }
                        QuantMode::Dynamic | QuantMode::Static => Linear::Quant(Cow::Owned(quantizer::quantize(
                            w,
                            scheme.weight_granularity,
                            scheme.weight_bits,
                            1.0,
                        )?)),
                    }
                }
            };
            let static_alpha = match (&kind, table) {
                (Linear::Quant(_), Some(t)) => Some(
                    t.layers
                        .get(&layer)
                        .ok_or_else(|| Error::Inconsistent(format!("scale table has no entry for {layer}")))?
                        .alpha,
                ),
                _ => None,
            };
            let bias = match layer.as_str() {
                HEAD => None,
                _ => Some(bundle.tensor(&format!("{layer}.bias"))?),
            };
            Ok(LinearLayer {
                name: layer,
                kind,
                bias,
                static_alpha,
            })
        };
        let norm = |name: String| -> Result<(&'a [f32], &'a [f32])> {
            Ok((
                bundle.tensor(&format!("{name}.gain"))?.as_f32()?,
                bundle.tensor(&format!("{name}.bias"))?.as_f32()?,
            ))
        };
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for i in 0..cfg.n_layers {
            let [q, k, v, out, ffn_in, ffn_out] = BLOCK_LINEARS.map(|part| format!("layers.{i}.{part}"));
            blocks.push(Block {
                ln1: norm(format!("layers.{i}.ln1"))?,
                ln2: norm(format!("layers.{i}.ln2"))?,
                q: prepare(q)?,
                k: prepare(k)?,
                v: prepare(v)?,
                out: prepare(out)?,
                ffn_in: prepare(ffn_in)?,
                ffn_out: prepare(ffn_out)?,
            });
        }
        let head = prepare(HEAD.to_string())?;
        Ok(Engine {
            bundle,
            scheme,
            blocks,
            head,
        })
    }

    pub fn scheme(&self) -> &QuantScheme {
        &self.scheme
    }

    pub fn forward(&self, tokens: &[u32]) -> Result<ForwardOutput> {
        self.forward_observed(tokens, &mut |_, _| {})
    }

    /// Forward pass that hands every linear-layer input to `observe`.
    pub fn forward_observed(&self, tokens: &[u32], observe: &mut dyn FnMut(&str, &[f32])) -> Result<ForwardOutput> {
        let cfg = self.bundle.config();
        if tokens.is_empty() {
            return Err(Error::Input("token sequence is empty".into()));
        }
        if tokens.len() > cfg.max_seq_len {
            return Err(Error::Input(format!(
                "sequence of {} tokens exceeds max_seq_len {}",
                tokens.len(),
                cfg.max_seq_len
            )));
        }
        if let Some(bad) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(Error::Input(format!(
                "token id {bad} outside vocabulary of {}",
                cfg.vocab_size
            )));
        }
        let d = cfg.d_model;
        let seq = tokens.len();
        let tok_emb = self.bundle.tensor("tok_emb")?.as_f32()?;
        let pos_emb = self.bundle.tensor("pos_emb")?.as_f32()?;
        let mut x = Vec::with_capacity(seq * d);
        for (pos, &t) in tokens.iter().enumerate() {
            let t = t as usize;
            x.extend(
                tok_emb[t * d..(t + 1) * d]
                    .iter()
                    .zip(&pos_emb[pos * d..(pos + 1) * d])
                    .map(|(a, b)| a + b),
            );
        }

        let mut traces = Vec::with_capacity(self.blocks.len() * 6 + 1);
        let mut hidden = Vec::with_capacity(self.blocks.len());
        let mut run = |layer: &LinearLayer, input: &[f32], rows: usize| -> Result<Vec<f32>> {
            observe(&layer.name, input);
            let (out, trace) = self.apply(layer, input, rows)?;
            traces.push(trace);
            Ok(out)
        };

        for block in &self.blocks {
            let h = layer_norm(&x, d, block.ln1);
            let q = run(&block.q, &h, seq)?;
            let k = run(&block.k, &h, seq)?;
            let v = run(&block.v, &h, seq)?;
            let attn = causal_attention(&q, &k, &v, seq, d, cfg.n_heads);
            let a = run(&block.out, &attn, seq)?;
            add_assign(&mut x, &a);

            let h = layer_norm(&x, d, block.ln2);
            let mut f = run(&block.ffn_in, &h, seq)?;
            f.iter_mut().for_each(|v| *v = gelu(*v));
            let f = run(&block.ffn_out, &f, seq)?;
            add_assign(&mut x, &f);
            hidden.push(Tensor::from_f32(vec![seq, d], x.clone())?);
        }

        let final_ln = (
            self.bundle.tensor("ln_f.gain")?.as_f32()?,
            self.bundle.tensor("ln_f.bias")?.as_f32()?,
        );
        let h = layer_norm(&x, d, final_ln);
        let logits = run(&self.head, &h, seq)?;
        Ok(ForwardOutput {
            logits: Tensor::from_f32(vec![seq, cfg.vocab_size], logits)?,
            hidden,
            traces,
        })
    }

    fn apply(&self, layer: &LinearLayer, input: &[f32], rows: usize) -> Result<(Vec<f32>, LinearTrace)> {
        let input_max_abs = input.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
        let (out, activation_alpha) = match &layer.kind {
            Linear::Fp {
                weight,
                fan_in,
                fan_out,
            } => {
                let mut y = matmul_slices(input, weight, rows, *fan_in, *fan_out);
                if let Some(b) = layer.bias {
                    add_bias(&mut y, b.as_f32()?);
                }
                (y, None)
            }
            Linear::Quant(wq) => {
                let fan_in = wq.shape()[0];
                let alpha = match self.scheme.mode {
                    QuantMode::Static => layer.static_alpha.ok_or(Error::MissingCalibration)?,
                    _ => input_max_abs,
                };
                let a = Tensor::from_f32(vec![rows, fan_in], input.to_vec())?;
                let aq = quantizer::quantize_with_alpha(
                    &a,
                    Granularity::PerTensor,
                    self.scheme.activation_bits,
                    vec![alpha],
                )?;
                let y = quantizer::int_matmul_auto(&aq, wq, layer.bias)?;
                (y.as_f32()?.to_vec(), Some(alpha))
            }
        };
        Ok((
            out,
            LinearTrace {
                layer: layer.name.clone(),
                input_max_abs,
                activation_alpha,
            },
        ))
    }
}

/// One-shot forward pass of `tokens` under `scheme`.
pub fn forward(m: &ModelBundle, tokens: &[u32], scheme: &QuantScheme) -> Result<ForwardOutput> {
    Engine::new(m, *scheme)?.forward(tokens)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    /// Argmax; ties go to the lowest token id.
    Greedy,
    Temperature {
        tau: f32,
        seed: u64,
    },
}

/// Autoregressive decoding of `max_new` tokens after `prompt`. Returns only the new tokens.
pub fn generate(engine: &Engine, prompt: &[u32], max_new: usize, strategy: Strategy) -> Result<Vec<u32>> {
    if max_new == 0 {
        return Err(Error::param("max_new must be positive"));
    }
    let limit = engine.bundle.config().max_seq_len;
    if prompt.len() + max_new > limit {
        return Err(Error::param(format!(
            "prompt of {} tokens plus {max_new} new tokens exceeds max_seq_len {limit}",
            prompt.len()
        )));
    }
    let mut rng = match strategy {
        Strategy::Temperature { tau, seed } => {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(Error::param(format!("temperature {tau} must be positive")));
            }
            Some(Rng::new(seed))
        }
        Strategy::Greedy => None,
    };
    let vocab = engine.bundle.config().vocab_size;
    let mut tokens = prompt.to_vec();
    for _ in 0..max_new {
        let out = engine.forward(&tokens)?;
        let logits = out.logits.as_f32()?;
        let last = &logits[(tokens.len() - 1) * vocab..tokens.len() * vocab];
        let next = match (strategy, rng.as_mut()) {
            (Strategy::Temperature { tau, .. }, Some(rng)) => sample(last, tau, rng),
            _ => argmax_index(last),
        };
        tokens.push(next as u32);
    }
    Ok(tokens.split_off(prompt.len()))
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax_index(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn sample(logits: &[f32], tau: f32, rng: &mut Rng) -> usize {
    let max = logits.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
    let weights: Vec<f64> = logits.iter().map(|&l| (((l - max) / tau) as f64).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut target = rng.next_f64() * total;
    for (i, w) in weights.iter().enumerate() {
        if target < *w {
            return i;
        }
        target -= w;
    }
    weights.len() - 1
}

fn layer_norm(x: &[f32], d: usize, (gain, bias): (&[f32], &[f32])) -> Vec<f32> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks_exact(d) {
        let mean = row.iter().sum::<f32>() / d as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        out.extend(
            row.iter()
                .zip(gain)
                .zip(bias)
                .map(|((v, g), b)| (v - mean) * inv * g + b),
        );
    }
    out
}

fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

fn causal_attention(q: &[f32], k: &[f32], v: &[f32], seq: usize, d: usize, heads: usize) -> Vec<f32> {
    let dh = d / heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let mut out = vec![0.0f32; seq * d];
    let mut scores = vec![0.0f32; seq];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..seq {
            let qi = &q[i * d + off..i * d + off + dh];
            let mut max = f32::NEG_INFINITY;
            for (j, s) in scores.iter_mut().enumerate().take(i + 1) {
                let kj = &k[j * d + off..j * d + off + dh];
                *s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f32>() * scale;
                max = max.max(*s);
            }
            let mut total = 0.0;
            for s in &mut scores[..=i] {
                *s = (*s - max).exp();
                total += *s;
            }
            let oi = &mut out[i * d + off..i * d + off + dh];
            for (j, s) in scores[..=i].iter().enumerate() {
                let w = s / total;
                for (o, vv) in oi.iter_mut().zip(&v[j * d + off..j * d + off + dh]) {
                    *o += w * vv;
                }
            }
        }
    }
    out
}

fn add_assign(x: &mut [f32], y: &[f32]) {
    x.iter_mut().zip(y).for_each(|(a, b)| *a += b);
}

fn add_bias(y: &mut [f32], bias: &[f32]) {
    for row in y.chunks_exact_mut(bias.len()) {
        add_assign(row, bias);
    }
}
