//! Full-batch transductive training, evaluation, and multi-seed experiments.

mod config;
mod run;

pub use config::{TrainConfig, DEFAULT_EPOCHS, DEFAULT_SEED_COUNT, DIVERGENCE_LIMIT};
pub use run::{
    accuracy, depth_sweep, evaluate, mean_std, run_experiment, train_once, train_once_partial,
    Accuracies, EpochMetrics, ExperimentSummary, GammaStats, PartialRun, RunRecord, SmoothnessPoint,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Matrix;
    use crate::error::Error;
    use crate::graph::{generate_sbm, make_split, Graph, SbmSpec, SplitMasks, SplitRatios};
    use crate::model::{init_params, ModelConfig, Variant};

    fn small_graph(seed: u64) -> Graph {
        generate_sbm(&SbmSpec {
            n: 60,
            k: 3,
            avg_degree: 4.0,
            feature_dim: 5,
            seed,
            ..SbmSpec::default()
        })
        .unwrap()
    }

    fn quick_cfg(variant: Variant, layers: usize, epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            seeds: vec![0],
            record_smoothness_every: 5,
            model: ModelConfig {
                hidden: 8,
                ..ModelConfig::new(variant, layers)
            },
            ..TrainConfig::default()
        }
    }

    fn split(g: &Graph) -> SplitMasks {
        make_split(g, SplitRatios::default(), 0).unwrap()
    }

    #[test]
    fn defaults_follow_the_protocol() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.epochs, 500);
        assert_eq!(cfg.seeds.len(), 10);
        cfg.validate().unwrap();
    }

    #[test]
    fn invalid_configs_name_the_field() {
        let cases = [
            TrainConfig {
                epochs: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                seeds: vec![],
                ..TrainConfig::default()
            },
            TrainConfig {
                seeds: vec![1, 1],
                ..TrainConfig::default()
            },
        ];
        for (cfg, field) in cases.iter().zip(["train.epochs", "train.seeds", "train.seeds"]) {
            match cfg.validate() {
                Err(Error::Config { field: f, .. }) => assert_eq!(f, field),
                other => panic!("expected config error, got {other:?}"),
            }
        }
    }

    #[test]
    fn accuracy_examples() {
        let labels = [0, 1, 2, 1];
        let mask = [0, 1, 2, 3];
        let mut onehot = Matrix::zeros(4, 3);
        for (i, &y) in labels.iter().enumerate() {
            onehot.set(i, y, 1.0);
        }
        assert_eq!(accuracy(&onehot, &labels, &mask), 1.0);
        let shifted = onehot.map(|v| v + 7.5);
        assert_eq!(accuracy(&shifted, &labels, &mask), 1.0);
        assert_eq!(accuracy(&onehot, &[0, 0, 0, 0], &mask), 0.25);
        assert_eq!(accuracy(&onehot, &labels, &[]), 0.0);
    }

    #[test]
    fn random_params_score_near_chance() {
        let g = generate_sbm(&SbmSpec {
            n: 400,
            class_separation: 0.0,
            ..SbmSpec::default()
        })
        .unwrap();
        let cfg = ModelConfig::new(Variant::PlainGcn, 2);
        let params = init_params(&cfg, g.feature_dim(), 3, 9).unwrap();
        let all: Vec<usize> = (0..400).collect();
        let masks = SplitMasks {
            train: all.clone(),
            val: all.clone(),
            test: all,
        };
        let acc = evaluate(&g, &masks, &cfg, &params).unwrap();
        assert!((acc.test - 1.0 / 3.0).abs() <= 0.15, "{}", acc.test);
    }

    fn one_label_graph(num_classes: usize) -> (Graph, SplitMasks) {
        let n = 30;
        let base = small_graph(1);
        let edges: Vec<_> = base.edges().iter().copied().filter(|&(u, v)| u < n && v < n).collect();
        let features = base.features().select_rows(&(0..n).collect::<Vec<_>>());
        let g = Graph::new("one-class", edges, features, vec![0; n], num_classes).unwrap();
        let masks = SplitMasks {
            train: (0..20).collect(),
            val: (20..25).collect(),
            test: (25..n).collect(),
        };
        (g, masks)
    }

    #[test]
    fn single_class_dataset_is_trivially_fit() {
        let (g, masks) = one_label_graph(1);
        let rec = train_once(&g, &masks, &quick_cfg(Variant::NosafD, 2, 20), 0).unwrap();
        assert_eq!(rec.epochs[0].train_acc, 1.0);
        assert!(rec.epochs.last().unwrap().loss < 1e-3);
        for w in rec.epochs[4..].windows(2) {
            assert!(w[1].loss <= w[0].loss);
        }
    }

    #[test]
    fn constant_label_with_spare_class_converges() {
        let (g, masks) = one_label_graph(2);
        let rec = train_once(&g, &masks, &quick_cfg(Variant::NosafD, 2, 500), 0).unwrap();
        let last = rec.epochs.last().unwrap();
        assert_eq!(last.train_acc, 1.0);
        assert!(last.loss < 1e-3, "final loss {}", last.loss);
    }

    #[test]
    fn same_seed_gives_identical_records() {
        let g = small_graph(2);
        let masks = split(&g);
        let mut cfg = quick_cfg(Variant::NosafD, 2, 15);
        cfg.model.dropout = 0.3;
        let a = train_once(&g, &masks, &cfg, 4).unwrap();
        let b = train_once(&g, &masks, &cfg, 4).unwrap();
        assert_eq!(a, b);
        let c = train_once(&g, &masks, &cfg, 5).unwrap();
        assert_ne!(a.epochs, c.epochs);
    }

    #[test]
    fn best_epoch_is_earliest_maximum_of_validation() {
        let g = small_graph(3);
        let masks = split(&g);
        let rec = train_once(&g, &masks, &quick_cfg(Variant::PlainGcn, 2, 40), 0).unwrap();
        let best = rec.epochs.iter().map(|e| e.val_acc).fold(f64::NEG_INFINITY, f64::max);
        let first = rec.epochs.iter().find(|e| e.val_acc == best).unwrap();
        assert_eq!(rec.best_val_epoch, first.epoch);
        assert_eq!(rec.test_accuracy_at_best_val, first.test_acc);
        assert_eq!(rec.epochs.len(), 40);
        assert!(rec.best_params.is_some());
        assert_eq!(rec.davg_at_best.len(), 3);
        // plain stacks feed their last stage straight to the output map
        assert_eq!(rec.final_davg, rec.davg_at_best[2]);
    }

    #[test]
    fn smoothness_is_recorded_on_the_stride() {
        let g = small_graph(4);
        let masks = split(&g);
        let rec = train_once(&g, &masks, &quick_cfg(Variant::Nosaf, 3, 12), 0).unwrap();
        let epochs: Vec<usize> = rec.smoothness.iter().map(|p| p.epoch).collect();
        assert_eq!(epochs, vec![1, 5, 10, 12]);
        assert!(rec.smoothness.iter().all(|p| p.davg.len() == 4));
        assert!(rec.gamma_at_best.iter().all(|s| s.is_some()));
    }

    #[test]
    fn divergence_names_the_epoch() {
        let g = small_graph(5);
        let masks = split(&g);
        let mut cfg = quick_cfg(Variant::PlainGcn, 1, 50);
        cfg.optimizer.lr = 1e12;
        cfg.optimizer.weight_decay = 0.0;
        let run = train_once_partial(&g, &masks, &cfg, 0);
        match run.error {
            Some(Error::Divergence { epoch, .. }) => {
                assert_eq!(run.record.epochs.len(), epoch - 1);
                assert!(epoch > 1);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
        let err = train_once(&g, &masks, &cfg, 3).unwrap_err();
        assert!(matches!(err, Error::Run { seed: 3, .. }), "{err}");
    }

    #[test]
    fn summary_statistics() {
        let g = small_graph(6);
        let masks = split(&g);
        let mut cfg = quick_cfg(Variant::ResGcn, 1, 10);
        cfg.seeds = vec![7];
        let single = run_experiment(&g, &masks, &cfg).unwrap();
        assert_eq!(single.std_test_accuracy, 0.0);
        assert_eq!(single.mean_test_accuracy, single.runs[0].test_accuracy_at_best_val);

        cfg.seeds = vec![3, 1, 2];
        let a = run_experiment(&g, &masks, &cfg).unwrap();
        cfg.seeds = vec![2, 3, 1];
        let b = run_experiment(&g, &masks, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![1, 2, 3]);
        let accs: Vec<f64> = a.runs.iter().map(|r| r.test_accuracy_at_best_val).collect();
        assert_eq!(mean_std(&accs), (a.mean_test_accuracy, a.std_test_accuracy));
    }

    #[test]
    fn mean_std_matches_hand_values() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn depth_sweep_runs_each_depth() {
        let g = small_graph(7);
        let masks = split(&g);
        let cfg = quick_cfg(Variant::NosafD, 1, 5);
        let out = depth_sweep(&g, &masks, &cfg, &[1, 3]).unwrap();
        assert_eq!(out.iter().map(|s| s.layers).collect::<Vec<_>>(), vec![1, 3]);
        assert!(depth_sweep(&g, &masks, &cfg, &[]).is_err());
    }
}
