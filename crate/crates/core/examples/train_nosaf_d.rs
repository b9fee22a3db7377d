//! Trains NoSAF-D on a heterophilic graph and reports what the filter learned:
//! per-stage γ statistics and smoothness of the selected model.
//!
//! cargo run --release --example train_nosaf_d [epochs]

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
    let cfg = TrainConfig {
        epochs,
        seeds: vec![0, 1, 2],
        model: ModelConfig::new(Variant::NosafD, 8),
        ..TrainConfig::default()
    };
    let summary = run_experiment(&g, &masks, &cfg)?;
    println!(
        "{} L={} test_acc={:.4}±{:.4} over {} seeds",
        summary.model,
        summary.layers,
        summary.mean_test_accuracy,
        summary.std_test_accuracy,
        summary.runs.len()
    );

    let run = &summary.runs[0];
    println!("seed {}: best val epoch {}", run.seed, run.best_val_epoch);
    println!("stage  gamma_mean  gamma_min  gamma_max  D_avg");
    for (l, (gamma, davg)) in run.gamma_at_best.iter().zip(&run.davg_at_best).enumerate() {
        match gamma {
            Some(s) => println!("{l:>5}  {:>10.4}  {:>9.4}  {:>9.4}  {davg:.4}", s.mean, s.min, s.max),
            None => println!("{l:>5}  {:>10}  {:>9}  {:>9}  {davg:.4}", "-", "-", "-"),
        }
    }
    Ok(())
}
