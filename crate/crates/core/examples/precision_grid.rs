//! Top-1 agreement with fp32 across weight/activation bitwidths.

use qcg::analysis::{precision_grid, probe_set};
use qcg::model::{init_fixture, ModelConfig, QuantScheme};
use qcg::quantizer::Granularity;

fn main() -> qcg::Result<()> {
    let cfg = ModelConfig::default();
    let fp = init_fixture(&cfg, 1)?;
    let probe = probe_set(64, 16, cfg.vocab_size, 2);
    let schemes: Vec<QuantScheme> = [(16, 16), (8, 8), (4, 8), (8, 4)]
        .iter()
        .flat_map(|&(w, a)| [Granularity::PerTensor, Granularity::PerColumn].map(|g| QuantScheme::dynamic(g, w, a)))
        .collect();
    let rows = precision_grid(&fp, &schemes, &probe)?;
    for (scheme, row) in schemes.iter().zip(&rows) {
        println!(
            "{:<7} {:<10} agreement {:>7.4}  logit mse {:.3e}",
            row.scheme, scheme.weight_granularity, row.agreement, row.logit_mse
        );
    }
    Ok(())
}
