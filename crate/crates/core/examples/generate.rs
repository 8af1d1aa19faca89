//! Greedy continuation of a byte prompt under fp32, dynamic int8 and static int8.

use qcg::analysis::probe_set;
use qcg::calibrate::{calibrate_scales, collect_stats, DEFAULT_GRID, DEFAULT_SAMPLE_CAP};
use qcg::model::{generate, init_fixture, Engine, ModelConfig, QuantScheme, Strategy};
use qcg::quantizer::Granularity;

fn main() -> qcg::Result<()> {
    let cfg = ModelConfig::default();
    let fp = init_fixture(&cfg, 1)?;
    let data = probe_set(32, 32, cfg.vocab_size, 5);
    let stats = collect_stats(&fp, &data, DEFAULT_SAMPLE_CAP, 0)?;
    let calibrated = fp
        .clone()
        .with_act_scales(calibrate_scales(&stats, 8, DEFAULT_GRID)?.table);

    let prompt: Vec<u32> = b"def ".iter().map(|&b| u32::from(b)).collect();
    let schemes = [
        QuantScheme::fp32(),
        QuantScheme::dynamic(Granularity::PerColumn, 8, 8),
        QuantScheme::static_(Granularity::PerColumn, 8, 8),
    ];
    for scheme in schemes {
        let engine = Engine::new(&calibrated, scheme)?;
        let greedy = generate(&engine, &prompt, 12, Strategy::Greedy)?;
        let sampled = generate(&engine, &prompt, 12, Strategy::Temperature { tau: 0.8, seed: 9 })?;
        println!("{:<7} greedy {greedy:?}", scheme.label());
        println!("{:<7} tau=0.8 {sampled:?}", "");
    }
    Ok(())
}
