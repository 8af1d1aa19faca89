//! Weight quantization noise on outlier-bearing matrices of growing width.

use qcg::analysis::noise_sweep;
use qcg::quantizer::Granularity;

fn main() -> qcg::Result<()> {
    let widths = [512, 1024, 2048, 4096];
    let rows = noise_sweep(&widths, &[Granularity::PerTensor, Granularity::PerColumn], 8, 0)?;
    println!("width  granularity  q_a");
    for r in &rows {
        println!("{:>5}  {:<11}  {:.5}", r.width, r.granularity, r.q_a);
    }
    Ok(())
}
