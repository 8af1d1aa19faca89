//! Bundle size before and after int8 quantization, and the hosting arithmetic
//! for a workload at two latencies.

use qcg::analysis::{hosting_estimate, size_report, HostingConfig};
use qcg::model::{init_fixture, quantize_model, save_bundle, ModelConfig, QuantScheme};
use qcg::quantizer::Granularity;

fn main() -> qcg::Result<()> {
    let dir = std::env::temp_dir().join(format!("qcg-storage-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    for d_model in [128, 256] {
        let fp = init_fixture(&ModelConfig::with_width(d_model), 1)?;
        let fp_path = dir.join(format!("fp-{d_model}.qtz"));
        save_bundle(&fp, &fp_path)?;
        for g in [Granularity::PerTensor, Granularity::PerColumn] {
            let q = quantize_model(&fp, &QuantScheme::dynamic(g, 8, 8))?;
            let q_path = dir.join(format!("q-{d_model}-{g}.qtz"));
            save_bundle(&q, &q_path)?;
            let r = size_report(&fp_path, &q_path)?;
            println!(
                "d_model {d_model:>4} {g:<10}  fp32 {:>9} B  int8 {:>9} B  ratio {:.4}",
                r.fp_bytes, r.q_bytes, r.ratio
            );
        }
    }
    std::fs::remove_dir_all(&dir)?;

    // 10k predictions on a host emitting 50 gCO2eq and costing 0.40 per hour.
    for (label, latency) in [("fp32", 2.0), ("int8", 1.2)] {
        let cfg = HostingConfig {
            carbon_rate: 50.0,
            price_rate: 0.40,
            latency,
        };
        let e = hosting_estimate(&cfg, 10_000.0)?;
        println!("{label}: {:.3} h, {:.1} gCO2eq, cost {:.3}", e.hours, e.g_co2eq, e.cost);
    }
    Ok(())
}
