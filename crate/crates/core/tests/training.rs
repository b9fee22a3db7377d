use nosaf::autodiff::{Adam, AdamConfig, Matrix, Tape};
use nosaf::graph::{generate_sbm, make_split, SbmSpec, SplitMasks, SplitRatios};
use nosaf::model::{ModelConfig, Variant};
use nosaf::train::{accuracy, train_once, TrainConfig};

/// Multinomial logistic regression (with intercept) on the raw features, ignoring the graph.
fn linear_probe(features: &Matrix, labels: &[usize], k: usize, masks: &SplitMasks) -> f64 {
    let d = features.cols();
    let mut x = Matrix::filled(features.rows(), d + 1, 1.0);
    for r in 0..x.rows() {
        x.row_mut(r)[..d].copy_from_slice(features.row(r));
    }
    let mut w = Matrix::zeros(d + 1, k);
    let mut adam = Adam::new(AdamConfig {
        lr: 0.05,
        weight_decay: 0.0,
        ..AdamConfig::default()
    });
    for _ in 0..1000 {
        let mut tape = Tape::new();
        let xs = tape.constant(x.clone());
        let wt = tape.param(w.clone());
        let logits = tape.matmul(xs, wt).unwrap();
        let loss = tape.masked_softmax_cross_entropy(logits, labels, &masks.train).unwrap();
        let grad = tape.backward(loss).unwrap().get_or_zeros(wt);
        adam.step(&mut [&mut w], &[grad]).unwrap();
    }
    accuracy(&x.matmul(&w).unwrap(), labels, &masks.test)
}

#[test]
fn nosaf_fits_a_homophilic_graph_with_separated_features() {
    let g = generate_sbm(&SbmSpec::default()).unwrap();
    let masks = make_split(&g, SplitRatios::default(), 0).unwrap();
    // Separation 2 against unit noise leaves the classes overlapping; the graph
    // supplies the rest.
    let probe = linear_probe(g.features(), g.labels(), g.num_classes(), &masks);
    println!("linear probe test accuracy {probe:.4}");
    assert!((0.5..0.85).contains(&probe), "features alone give {probe}");

    let cfg = TrainConfig {
        seeds: vec![0],
        model: ModelConfig::new(Variant::Nosaf, 4),
        ..TrainConfig::default()
    };
    let record = train_once(&g, &masks, &cfg, 0).unwrap();
    assert_eq!(record.epochs.len(), 500);
    assert!(
        record.test_accuracy_at_best_val >= 0.9,
        "test accuracy {}",
        record.test_accuracy_at_best_val
    );
    assert!(record.test_accuracy_at_best_val > probe + 0.1);
}
