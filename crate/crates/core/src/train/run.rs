use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{TrainConfig, DIVERGENCE_LIMIT};
use crate::autodiff::{Adam, Matrix, Mode, Tape};
use crate::error::{Error, Result};
use crate::graph::{Graph, SplitMasks};
use crate::model::{forward, init_params, predict, ForwardTrace, GraphInputs, ModelConfig, ModelParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracies {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    /// Train-mode loss on the training mask, before this epoch's update.
    pub loss: f64,
    /// Eval-mode accuracies after this epoch's update.
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessPoint {
    pub epoch: usize,
    /// Mean pairwise cosine distance of every stage output, stage 0 first.
    pub davg: Vec<f64>,
    /// Same metric on the final representation.
    pub representation_davg: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub model: String,
    pub layers: usize,
    pub epochs: Vec<EpochMetrics>,
    pub best_val_epoch: usize,
    pub best_val_accuracy: f64,
    pub test_accuracy_at_best_val: f64,
    pub smoothness: Vec<SmoothnessPoint>,
    /// Per-stage smoothness of the selected (best validation) model.
    pub davg_at_best: Vec<f64>,
    /// Last-stage entry of `davg_at_best`.
    pub final_davg: f64,
    /// Per-stage `γ` statistics of the selected model; `None` for variants without `γ`.
    pub gamma_at_best: Vec<Option<GammaStats>>,
    #[serde(skip)]
    pub best_params: Option<ModelParams>,
}

/// A run that may have stopped early. `record` holds every epoch completed so far.
#[derive(Debug)]
pub struct PartialRun {
    pub record: RunRecord,
    pub error: Option<Error>,
}

/// Fraction of `mask` rows whose argmax matches the label. Empty masks give 0.
pub fn accuracy(logits: &Matrix, labels: &[usize], mask: &[usize]) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    let pred = logits.argmax_rows();
    let hits = mask.iter().filter(|&&i| pred[i] == labels[i]).count();
    hits as f64 / mask.len() as f64
}

fn accuracies(logits: &Matrix, labels: &[usize], masks: &SplitMasks) -> Accuracies {
    Accuracies {
        train: accuracy(logits, labels, &masks.train),
        val: accuracy(logits, labels, &masks.val),
        test: accuracy(logits, labels, &masks.test),
    }
}

/// Eval-mode accuracy on each mask.
pub fn evaluate(g: &Graph, masks: &SplitMasks, cfg: &ModelConfig, params: &ModelParams) -> Result<Accuracies> {
    let trace = predict(&GraphInputs::new(g), cfg, params)?;
    Ok(accuracies(&trace.logits, g.labels(), masks))
}

/// Codebank telescoping and `γ ∈ [0, 1]` on an eval trace.
fn check_trace_invariants(trace: &ForwardTrace, epoch: usize) -> Result<()> {
    let Some(last) = trace.stages.last().and_then(|s| s.codebank.as_ref()) else {
        return Ok(());
    };
    let mut sum = Matrix::zeros(last.rows(), last.cols());
    for s in &trace.stages {
        let gamma = s.gamma.as_ref().expect("codebank stages carry γ");
        if let Some(g) = gamma.iter().find(|g| !(0.0..=1.0).contains(*g)) {
            return Err(Error::Integrity(format!("epoch {epoch}: γ = {g} outside [0, 1]")));
        }
        for r in 0..sum.rows() {
            for (acc, z) in sum.row_mut(r).iter_mut().zip(s.z.row(r)) {
                *acc += z * gamma[r];
            }
        }
    }
    let scale = last.max_abs().max(1.0);
    let gap = last.max_abs_diff(&sum);
    if gap > 1e-9 * scale {
        return Err(Error::Integrity(format!(
            "epoch {epoch}: codebank differs from the sum of filtered stages by {gap:e}"
        )));
    }
    Ok(())
}

fn gamma_stats(trace: &ForwardTrace) -> Vec<Option<GammaStats>> {
    trace
        .gamma_stats()
        .into_iter()
        .map(|s| s.map(|(mean, min, max)| GammaStats { mean, min, max }))
        .collect()
}

/// Full-batch training on one seed, keeping whatever was completed if the run aborts.
pub fn train_once_partial(g: &Graph, masks: &SplitMasks, cfg: &TrainConfig, seed: u64) -> PartialRun {
    let mut record = RunRecord {
        seed,
        model: cfg.model.label(),
        layers: cfg.model.layers,
        epochs: Vec::with_capacity(cfg.epochs),
        best_val_epoch: 0,
        best_val_accuracy: f64::NEG_INFINITY,
        test_accuracy_at_best_val: 0.0,
        smoothness: Vec::new(),
        davg_at_best: Vec::new(),
        final_davg: f64::NAN,
        gamma_at_best: Vec::new(),
        best_params: None,
    };
    let error = run_epochs(g, masks, cfg, seed, &mut record).err();
    PartialRun { record, error }
}

fn run_epochs(g: &Graph, masks: &SplitMasks, cfg: &TrainConfig, seed: u64, record: &mut RunRecord) -> Result<()> {
    cfg.validate()?;
    masks.validate(g.num_nodes())?;
    if masks.train.is_empty() {
        return Err(Error::Argument("training mask is empty".into()));
    }
    let model = &cfg.model;
    let inputs = GraphInputs::new(g);
    let mut params = init_params(model, g.feature_dim(), g.num_classes(), seed)?;
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed);
    dropout_rng.set_stream(1);
    let mut adam = Adam::new(cfg.optimizer);

    for epoch in 1..=cfg.epochs {
        let mut tape = Tape::new();
        let out = forward(&mut tape, &inputs, model, &params, Mode::Train, Some(&mut dropout_rng))?;
        let loss = tape.masked_softmax_cross_entropy(out.logits, g.labels(), &masks.train)?;
        let loss_value = tape.value(loss).get(0, 0);
        if !loss_value.is_finite() || loss_value > DIVERGENCE_LIMIT {
            return Err(Error::Divergence {
                epoch,
                loss: loss_value,
            });
        }
        let grads = tape.backward(loss)?;
        let grads: Vec<Matrix> = out.params.ordered().iter().map(|&t| grads.get_or_zeros(t)).collect();
        for (layer, stats) in params.gcn.iter_mut().zip(&out.bn_stats) {
            layer.bn.update_running(stats);
        }
        adam.step(&mut params.learnable_mut(), &grads)?;

        let trace = predict(&inputs, model, &params)?;
        let acc = accuracies(&trace.logits, g.labels(), masks);
        record.epochs.push(EpochMetrics {
            epoch,
            loss: loss_value,
            train_acc: acc.train,
            val_acc: acc.val,
            test_acc: acc.test,
        });

        let stride = cfg.record_smoothness_every;
        if stride > 0 && (epoch % stride == 0 || epoch == cfg.epochs || epoch == 1) {
            check_trace_invariants(&trace, epoch)?;
            record.smoothness.push(SmoothnessPoint {
                epoch,
                davg: trace.stage_smoothness()?,
                representation_davg: trace.representation_smoothness()?,
            });
        }
        if acc.val > record.best_val_accuracy {
            record.best_val_epoch = epoch;
            record.best_val_accuracy = acc.val;
            record.test_accuracy_at_best_val = acc.test;
            record.davg_at_best = trace.stage_smoothness()?;
            record.final_davg = *record.davg_at_best.last().expect("at least one stage");
            record.gamma_at_best = gamma_stats(&trace);
            record.best_params = Some(params.clone());
        }
    }
    Ok(())
}

/// Trains one seed to completion.
pub fn train_once(g: &Graph, masks: &SplitMasks, cfg: &TrainConfig, seed: u64) -> Result<RunRecord> {
    let run = train_once_partial(g, masks, cfg, seed);
    match run.error {
        Some(e) => Err(Error::Run {
            seed,
            source: Box::new(e),
        }),
        None => Ok(run.record),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub model: String,
    pub layers: usize,
    pub mean_test_accuracy: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std_test_accuracy: f64,
    pub mean_final_davg: f64,
    pub mean_best_val_epoch: f64,
    /// Ordered by seed value.
    pub runs: Vec<RunRecord>,
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

impl ExperimentSummary {
    pub fn from_records(mut runs: Vec<RunRecord>) -> Result<Self> {
        let first = runs
            .first()
            .ok_or_else(|| Error::Argument("cannot summarize zero runs".into()))?;
        let (model, layers) = (first.model.clone(), first.layers);
        runs.sort_by_key(|r| r.seed);
        let accs: Vec<f64> = runs.iter().map(|r| r.test_accuracy_at_best_val).collect();
        let davg: Vec<f64> = runs.iter().map(|r| r.final_davg).collect();
        let epochs: Vec<f64> = runs.iter().map(|r| r.best_val_epoch as f64).collect();
        let (mean, std) = mean_std(&accs);
        Ok(Self {
            model,
            layers,
            mean_test_accuracy: mean,
            std_test_accuracy: std,
            mean_final_davg: mean_std(&davg).0,
            mean_best_val_epoch: mean_std(&epochs).0,
            runs,
        })
    }
}

/// One run per seed (in parallel on the current rayon pool), aggregated in seed order.
/// The first failing seed, by seed value, is reported.
pub fn run_experiment(g: &Graph, masks: &SplitMasks, cfg: &TrainConfig) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let mut seeds = cfg.seeds.clone();
    seeds.sort_unstable();
    let runs: Vec<RunRecord> = seeds
        .par_iter()
        .map(|&seed| train_once(g, masks, cfg, seed))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<_>>()?;
    ExperimentSummary::from_records(runs)
}

/// [`run_experiment`] at each depth, in the order given.
pub fn depth_sweep(
    g: &Graph,
    masks: &SplitMasks,
    base: &TrainConfig,
    depths: &[usize],
) -> Result<Vec<ExperimentSummary>> {
    if depths.is_empty() {
        return Err(Error::Argument("depth sweep needs at least one depth".into()));
    }
    depths
        .iter()
        .map(|&layers| {
            let mut cfg = base.clone();
            cfg.model.layers = layers;
            run_experiment(g, masks, &cfg)
        })
        .collect()
}
