//! Integer matmul with i32 accumulation against the fp32 product of the
//! dequantized operands.

use qcg::numerics::{matmul, Rng, Tensor};
use qcg::quantizer::{dequantize, int_matmul, quantize, Granularity};

fn main() -> qcg::Result<()> {
    let (m, k, n) = (4, 256, 8);
    let mut rng = Rng::new(3);
    let a = Tensor::from_f32(vec![m, k], (0..m * k).map(|_| rng.gaussian() as f32).collect())?;
    let w = Tensor::from_f32(vec![k, n], (0..k * n).map(|_| rng.normal(0.0, 0.05) as f32).collect())?;

    let aq = quantize(&a, Granularity::PerTensor, 8, 1.0)?;
    let wq = quantize(&w, Granularity::PerColumn, 8, 1.0)?;
    let int_out = int_matmul(&aq, &wq, None)?;
    let deq_out = matmul(&dequantize(&aq), &dequantize(&wq))?;
    let fp_out = matmul(&a, &w)?;

    let max_rel = |x: &Tensor, y: &Tensor| -> qcg::Result<f64> {
        let (x, y) = (x.as_f32()?, y.as_f32()?);
        Ok(x.iter()
            .zip(y)
            .map(|(&p, &q)| ((p - q).abs() / q.abs().max(1e-6)) as f64)
            .fold(0.0, f64::max))
    };
    println!(
        "int vs dequantized fp32: max rel err {:.2e}",
        max_rel(&int_out, &deq_out)?
    );
    println!(
        "int vs original fp32:    max rel err {:.2e}",
        max_rel(&int_out, &fp_out)?
    );
    Ok(())
}
