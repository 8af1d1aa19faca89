//! Quantize a small weight matrix per tensor and per column and compare the noise.

use qcg::numerics::Tensor;
use qcg::quantizer::{dequantize, quant_noise, quantize, Granularity};

fn main() -> qcg::Result<()> {
    // Column 1 carries an outlier; per-column scales keep it from coarsening column 0.
    let w = Tensor::matrix(&[&[0.02, 1.5], &[-0.05, -0.3], &[0.01, 0.9], &[0.04, -1.2]]);
    for g in [Granularity::PerTensor, Granularity::PerColumn] {
        let qt = quantize(&w, g, 8, 1.0)?;
        let noise = quant_noise(&w, &qt)?;
        println!("{g}: scale {:?}", qt.params().scale());
        println!("  ints    {:?}", qt.q().payload());
        println!("  deq     {:?}", dequantize(&qt).as_f32()?);
        println!("  q_a {:.6}  mse {:.3e}", noise.q_a, noise.mse);
    }
    Ok(())
}
