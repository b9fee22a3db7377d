//! Accuracy and final-stage smoothness against depth for a plain GCN stack and
//! NoSAF-D on a homophilic graph.
//!
//! cargo run --release --example depth_sweep [epochs]

use nosaf::graph::{generate_sbm, make_split, SbmSpec, SplitRatios};
use nosaf::model::{ModelConfig, Variant};
use nosaf::train::{depth_sweep, TrainConfig};

fn main() -> nosaf::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let g = generate_sbm(&SbmSpec::default())?;
    let masks = make_split(&g, SplitRatios::default(), 0)?;
    let depths = [2, 4, 8, 16];

    for variant in [Variant::PlainGcn, Variant::NosafD] {
        let base = TrainConfig {
            epochs,
            seeds: vec![0, 1, 2],
            model: ModelConfig::new(variant, 2),
            ..TrainConfig::default()
        };
        println!("{variant}");
        for s in depth_sweep(&g, &masks, &base, &depths)? {
            println!(
                "  L={:<3} test_acc={:.4}±{:.4}  final D_avg={:.4}",
                s.layers, s.mean_test_accuracy, s.std_test_accuracy, s.mean_final_davg
            );
        }
    }
    Ok(())
}
