//! Writes a graph bundle and a trained checkpoint, reads both back and checks
//! that predictions are unchanged.
//!
//! cargo run --release --example bundle_roundtrip

use nosaf::graph::{generate_sbm, load_bundle, make_split, save_bundle, SbmSpec, SplitRatios};
use nosaf::model::{load_checkpoint, predict, save_checkpoint, GraphInputs, ModelConfig, Variant};
use nosaf::train::{train_once, TrainConfig};

fn main() -> nosaf::Result<()> {
    let dir = std::env::temp_dir().join(format!("nosaf-roundtrip-{}", std::process::id()));
    let g = generate_sbm(&SbmSpec {
        n: 120,
        ..SbmSpec::default()
    })?;
    let masks = make_split(&g, SplitRatios::default(), 0)?;
    save_bundle(&g, Some(&masks), &dir)?;
    let bundle = load_bundle(&dir)?;
    println!("bundle {}: graph equal {}, split equal {}", dir.display(), bundle.graph == g, bundle.splits.as_ref() == Some(&masks));

    let cfg = TrainConfig {
        epochs: 50,
        seeds: vec![0],
        model: ModelConfig::new(Variant::NosafD, 4),
        ..TrainConfig::default()
    };
    let record = train_once(&g, &masks, &cfg, 0)?;
    let params = record.best_params.expect("a completed run keeps its selected parameters");
    let path = dir.join("checkpoint.json");
    save_checkpoint(&path, &cfg.model, &params)?;
    let (model, loaded) = load_checkpoint(&path)?;

    let inputs = GraphInputs::new(&bundle.graph);
    let before = predict(&inputs, &cfg.model, &params)?.logits;
    let after = predict(&inputs, &model, &loaded)?.logits;
    println!(
        "checkpoint: params equal {}, max logit difference {:e}",
        loaded == params,
        before.max_abs_diff(&after)
    );
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
