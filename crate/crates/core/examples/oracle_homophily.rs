//! Residual GCN with and without per-node true-homophily weighting of the
//! aggregation. The oracle reads every label, so it is a diagnostic only.
//!
//! cargo run --release --example oracle_homophily [epochs]

use nosaf::graph::{generate_sbm, make_split, SbmSpec, SplitRatios};
use nosaf::model::{ModelConfig, Variant};
use nosaf::train::{run_experiment, TrainConfig};

fn main() -> nosaf::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    for target_h in [0.2, 0.5, 0.8] {
        let g = generate_sbm(&SbmSpec {
            target_h,
            class_separation: 1.0,
            ..SbmSpec::default()
        })?;
        let masks = make_split(&g, SplitRatios::default(), 0)?;
        let mut line = format!("target_h={target_h}");
        for variant in [Variant::ResGcn, Variant::OracleH] {
            let cfg = TrainConfig {
                epochs,
                seeds: vec![0, 1, 2],
                model: ModelConfig::new(variant, 8),
                ..TrainConfig::default()
            };
            let s = run_experiment(&g, &masks, &cfg)?;
            line.push_str(&format!("  {variant}={:.4}±{:.4}", s.mean_test_accuracy, s.std_test_accuracy));
        }
        println!("{line}");
    }
    Ok(())
}
