//! Static activation calibration: per-layer clip ranges chosen by MSE over a
//! ratio grid, the loss curve of one layer, and a single-outlier reservoir.

use qcg::analysis::probe_set;
use qcg::calibrate::{
    calibrate_scales, collect_stats, reservoir_loss, ActivationStats, LayerStats, DEFAULT_GRID, DEFAULT_SAMPLE_CAP,
};
use qcg::model::{init_fixture, ModelConfig};

fn main() -> qcg::Result<()> {
    let cfg = ModelConfig::default();
    let fp = init_fixture(&cfg, 1)?;
    let data = probe_set(64, 32, cfg.vocab_size, 5);
    let stats = collect_stats(&fp, &data, DEFAULT_SAMPLE_CAP, 0)?;
    let cal = calibrate_scales(&stats, 8, DEFAULT_GRID)?;

    println!("layer                 alpha     ratio");
    for (name, s) in cal.table.layers.iter().take(6) {
        println!("{name:<20} {:>8.4}  {:>6.3}", s.alpha, s.ratio);
    }

    let curve = &cal.curves["layers.0.ffn.out"];
    println!("\nlayers.0.ffn.out loss curve (every 10th grid point):");
    for p in curve.iter().step_by(10) {
        println!("  ratio {:.3}  alpha {:.4}  loss {:.4e}", p.ratio, p.alpha, p.loss);
    }

    // 999 evenly spaced values in [-1, 1] plus one 10.0.
    let mut reservoir: Vec<f32> = (0..999).map(|i| (-1.0 + 2.0 * i as f64 / 998.0) as f32).collect();
    reservoir.push(10.0);
    let single = ActivationStats {
        layers: vec![LayerStats {
            layer: "outlier".into(),
            maxes: vec![10.0],
            seen: reservoir.len() as u64,
            reservoir: reservoir.clone(),
        }],
    };
    for bits in [8, 4] {
        let s = calibrate_scales(&single, bits, DEFAULT_GRID)?.table.layers["outlier"];
        println!(
            "\nB={bits}: alpha {:.4} (ratio {:.4}), loss {:.4e} vs {:.4e} unclipped",
            s.alpha,
            s.ratio,
            reservoir_loss(&reservoir, s.alpha, bits),
            reservoir_loss(&reservoir, 10.0, bits)
        );
    }
    Ok(())
}
