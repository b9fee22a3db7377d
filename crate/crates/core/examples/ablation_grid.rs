//! The four ablation columns (full NoSAF-D, without compensation, without node
//! weights, without codebank) on one heterophilic graph.
//!
//! cargo run --release --example ablation_grid [epochs]

use nosaf::cli::model_from_label;
use nosaf::graph::{generate_sbm, make_split, SbmSpec, SplitRatios};
use nosaf::model::{ModelConfig, Variant};
use nosaf::train::{run_experiment, TrainConfig};

fn main() -> nosaf::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let g = generate_sbm(&SbmSpec {
        target_h: 0.2,
        class_separation: 1.0,
        ..SbmSpec::default()
    })?;
    let masks = make_split(&g, SplitRatios::default(), 0)?;
    let base = ModelConfig::new(Variant::NosafD, 8);

    println!("{:<20} {:>8} {:>8} {:>10}", "variant", "mean", "std", "final D_avg");
    for label in ["nosaf_d", "nosaf_d-cpm", "nosaf_d-cpm-nw", "nosaf_d-cpm-nw-cb"] {
        let cfg = TrainConfig {
            epochs,
            seeds: vec![0, 1, 2],
            model: model_from_label(&base, label)?,
            ..TrainConfig::default()
        };
        let s = run_experiment(&g, &masks, &cfg)?;
        println!(
            "{label:<20} {:>8.4} {:>8.4} {:>10.4}",
            s.mean_test_accuracy, s.std_test_accuracy, s.mean_final_davg
        );
    }
    Ok(())
}
