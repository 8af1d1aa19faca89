//! Hidden-state error against fp32 at each block, for both weight granularities.

use qcg::analysis::{depth_profile, probe_set};
use qcg::model::{init_fixture, ModelConfig, QuantScheme};
use qcg::quantizer::Granularity;

fn main() -> qcg::Result<()> {
    let cfg = ModelConfig::default();
    let fp = init_fixture(&cfg, 1)?;
    let probe = probe_set(64, 16, cfg.vocab_size, 2);
    let tensor = depth_profile(&fp, &QuantScheme::weight_only(Granularity::PerTensor, 8), &probe)?;
    let column = depth_profile(&fp, &QuantScheme::weight_only(Granularity::PerColumn, 8), &probe)?;
    println!("layer  mse(per-tensor)  mse(per-column)  pearson(per-tensor)");
    for (t, c) in tensor.rows.iter().zip(&column.rows) {
        println!(
            "{:>5}  {:>15.4e}  {:>15.4e}  {:>19.6}",
            t.layer,
            t.mse,
            c.mse,
            t.pearson.unwrap_or(f64::NAN)
        );
    }
    let n = cfg.n_layers;
    println!(
        "per-tensor mean mse: layers 1-{} {:.4e}, layers {}-{} {:.4e}",
        n / 2,
        tensor.mean_mse(1, n / 2),
        n / 2 + 1,
        n,
        tensor.mean_mse(n / 2 + 1, n)
    );
    Ok(())
}
