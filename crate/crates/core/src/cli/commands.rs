//! `generate`, `train` and `analyze`.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;

use super::svg::{line_chart, Series};
use super::{CliConfig, RESOLVED_CONFIG_FILE};
use crate::error::{Error, Result};
use crate::graph::bundle::write_file;
use crate::graph::{
    generate_sbm, graph_homophily, homophily_histogram, load_bundle, make_split, node_homophily_all, save_bundle,
    Graph, SplitMasks,
};
use crate::model::{predict, save_checkpoint, load_checkpoint, GraphInputs};
use crate::train::{mean_std, train_once_partial, ExperimentSummary, PartialRun};

pub const RUN_FORMAT: &str = "nosaf-run/1";
pub const SUMMARY_FORMAT: &str = "nosaf-summary/1";
pub const ANALYSIS_FORMAT: &str = "nosaf-analysis/1";
pub const SUMMARY_HEADER: [&str; 7] = [
    "variant",
    "L",
    "seed",
    "test_acc",
    "test_acc_std",
    "best_val_epoch",
    "final_Davg",
];

pub(crate) fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub(crate) fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Serde(e.to_string()))?;
    write_file(path, &(text + "\n"))
}

pub(crate) fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    let io = |e: csv::Error| Error::Serde(e.to_string());
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    write_file(path, &String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub(crate) fn write_resolved_config(cfg: &CliConfig, dir: &Path) -> Result<()> {
    write_file(&dir.join(RESOLVED_CONFIG_FILE), &cfg.to_toml()?)
}

/// Shortest text that parses back to the same value.
pub(crate) fn num(x: f64) -> String {
    if x.is_finite() {
        x.to_string()
    } else {
        String::new()
    }
}

/// The bundle named by `data.bundle`, with its split or a generated one.
pub(crate) fn load_data(cfg: &CliConfig) -> Result<(PathBuf, Graph, SplitMasks)> {
    let dir = require_bundle(cfg)?;
    let bundle = load_bundle(&dir)?;
    let masks = match bundle.splits {
        Some(s) => s,
        None => make_split(&bundle.graph, cfg.train.split, cfg.train.split_seed)?,
    };
    Ok((dir, bundle.graph, masks))
}

fn require_bundle(cfg: &CliConfig) -> Result<PathBuf> {
    let dir = cfg
        .data
        .bundle
        .clone()
        .ok_or_else(|| Error::Argument("no bundle given (use --bundle DIR or data.bundle)".into()))?;
    if !dir.is_dir() {
        return Err(Error::Argument(format!("bundle directory {} does not exist", dir.display())));
    }
    Ok(dir)
}

pub fn generate(cfg: &CliConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    let g = generate_sbm(&cfg.sbm)?;
    let masks = make_split(&g, cfg.train.split, cfg.train.split_seed)?;
    save_bundle(&g, Some(&masks), out)?;
    write_resolved_config(cfg, out)?;
    let h = graph_homophily(&g).map_or_else(|| "undefined".to_string(), |h| format!("{h:.4}"));
    println!(
        "wrote {}: nodes={} edges={} graph_homophily={h}",
        out.display(),
        g.num_nodes(),
        g.num_edges()
    );
    Ok(())
}

fn run_document(cfg: &CliConfig, run: &PartialRun) -> Result<serde_json::Value> {
    Ok(json!({
        "format": RUN_FORMAT,
        "version": version(),
        "label_leaking": cfg.model.variant.leaks_labels(),
        "config": cfg.to_json()?,
        "record": run.record,
        "error": run.error.as_ref().map(|e| e.to_string()),
    }))
}

pub fn train(cfg: &CliConfig, out: &Path, pool: &rayon::ThreadPool) -> Result<()> {
    cfg.train.validate()?;
    let (_, g, masks) = load_data(cfg)?;
    let mut seeds = cfg.train.seeds.clone();
    seeds.sort_unstable();

    let runs_dir = out.join("runs");
    let ckpt_dir = out.join("checkpoints");
    create_dir(&runs_dir)?;
    create_dir(&ckpt_dir)?;
    write_resolved_config(cfg, out)?;

    let runs: Vec<PartialRun> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let run = train_once_partial(&g, &masks, &cfg.train, seed);
                log::info!(
                    "seed {seed}: {} epochs, test_acc {:.4}",
                    run.record.epochs.len(),
                    run.record.test_accuracy_at_best_val
                );
                run
            })
            .collect()
    });

    for run in &runs {
        let seed = run.record.seed;
        write_json(&runs_dir.join(format!("seed-{seed}.json")), &run_document(cfg, run)?)?;
        if let Some(params) = &run.record.best_params {
            save_checkpoint(&ckpt_dir.join(format!("seed-{seed}.json")), &cfg.model, params)?;
        }
    }
    if let Some(run) = runs.iter().find(|r| r.error.is_some()) {
        let source = run.error.as_ref().expect("checked above").to_string();
        return Err(Error::Run {
            seed: run.record.seed,
            source: Box::new(Error::Data(format!("{source} (partial logs in {})", runs_dir.display()))),
        });
    }

    let summary = ExperimentSummary::from_records(runs.into_iter().map(|r| r.record).collect())?;
    let label = &summary.model;
    let layers = summary.layers.to_string();
    let mut rows: Vec<Vec<String>> = summary
        .runs
        .iter()
        .map(|r| {
            vec![
                label.clone(),
                layers.clone(),
                r.seed.to_string(),
                num(r.test_accuracy_at_best_val),
                String::new(),
                r.best_val_epoch.to_string(),
                num(r.final_davg),
            ]
        })
        .collect();
    rows.push(vec![
        label.clone(),
        layers.clone(),
        "mean".into(),
        num(summary.mean_test_accuracy),
        num(summary.std_test_accuracy),
        num(summary.mean_best_val_epoch),
        num(summary.mean_final_davg),
    ]);
    write_csv(&out.join("summary.csv"), &SUMMARY_HEADER, &rows)?;

    let per_seed: Vec<serde_json::Value> = summary
        .runs
        .iter()
        .map(|r| {
            json!({
                "seed": r.seed,
                "epochs": r.epochs.len(),
                "best_val_epoch": r.best_val_epoch,
                "best_val_accuracy": r.best_val_accuracy,
                "test_accuracy_at_best_val": r.test_accuracy_at_best_val,
                "final_davg": r.final_davg,
            })
        })
        .collect();
    write_json(
        &out.join("summary.json"),
        &json!({
            "format": SUMMARY_FORMAT,
            "version": version(),
            "label_leaking": cfg.model.variant.leaks_labels(),
            "config": cfg.to_json()?,
            "model": summary.model,
            "layers": summary.layers,
            "mean_test_accuracy": summary.mean_test_accuracy,
            "std_test_accuracy": summary.std_test_accuracy,
            "mean_final_davg": summary.mean_final_davg,
            "mean_best_val_epoch": summary.mean_best_val_epoch,
            "runs": per_seed,
        }),
    )?;

    if cfg.output.svg {
        let stages = summary.runs[0].davg_at_best.len();
        let points = (0..stages)
            .map(|l| {
                let values: Vec<f64> = summary.runs.iter().map(|r| r.davg_at_best[l]).collect();
                (l as f64, mean_std(&values).0)
            })
            .collect();
        let svg = line_chart(
            &format!("{label} L={layers}: smoothness at the selected epoch"),
            "stage",
            "mean D_avg",
            &[Series {
                name: label.clone(),
                points,
            }],
        );
        write_file(&out.join("davg_vs_layer.svg"), &svg)?;
    }

    let leak = if cfg.model.variant.leaks_labels() {
        " [label-leaking diagnostic]"
    } else {
        ""
    };
    println!(
        "{label} L={layers} test_acc={:.4}±{:.4}{leak}",
        summary.mean_test_accuracy, summary.std_test_accuracy
    );
    Ok(())
}

pub fn analyze(cfg: &CliConfig, checkpoint: Option<&Path>, bins: usize, out: &Path) -> Result<()> {
    if bins == 0 {
        return Err(Error::Argument("--bins must be at least 1".into()));
    }
    let dir = require_bundle(cfg)?;
    let g = load_bundle(&dir)?.graph;
    let h = graph_homophily(&g);
    let isolated = node_homophily_all(&g).iter().filter(|h| h.is_none()).count();
    let counts = homophily_histogram(&g, bins);

    let layer_davg = match checkpoint {
        Some(path) => {
            let (model, params) = load_checkpoint(path)?;
            let (d, k) = (params.zeta_in[0].weight.rows(), params.zeta_out.last().map_or(0, |o| o.weight.cols()));
            if d != g.feature_dim() || k != g.num_classes() {
                return Err(Error::Integrity(format!(
                    "checkpoint {} expects {d} features and {k} classes; bundle has {} and {}",
                    path.display(),
                    g.feature_dim(),
                    g.num_classes()
                )));
            }
            let trace = predict(&GraphInputs::new(&g), &model, &params)?;
            Some((model.label(), trace.stage_smoothness()?))
        }
        None => None,
    };

    create_dir(out)?;
    write_resolved_config(cfg, out)?;
    let edges = |b: usize| (b as f64 / bins as f64, (b + 1) as f64 / bins as f64);
    let hist_rows: Vec<Vec<String>> = counts
        .iter()
        .enumerate()
        .map(|(b, c)| {
            let (lo, hi) = edges(b);
            vec![num(lo), num(hi), c.to_string()]
        })
        .collect();
    write_csv(&out.join("histogram.csv"), &["bin_lo", "bin_hi", "count"], &hist_rows)?;
    if let Some((_, davg)) = &layer_davg {
        let rows: Vec<Vec<String>> = davg
            .iter()
            .enumerate()
            .map(|(l, d)| vec![l.to_string(), num(*d)])
            .collect();
        write_csv(&out.join("layer_davg.csv"), &["stage", "davg"], &rows)?;
        if cfg.output.svg {
            let svg = line_chart(
                "smoothness per stage",
                "stage",
                "D_avg",
                &[Series {
                    name: layer_davg.as_ref().map(|l| l.0.clone()).unwrap_or_default(),
                    points: davg.iter().enumerate().map(|(l, d)| (l as f64, *d)).collect(),
                }],
            );
            write_file(&out.join("davg_vs_layer.svg"), &svg)?;
        }
    }
    write_json(
        &out.join("analysis.json"),
        &json!({
            "format": ANALYSIS_FORMAT,
            "version": version(),
            "config": cfg.to_json()?,
            "graph": g.name(),
            "nodes": g.num_nodes(),
            "edges": g.num_edges(),
            "graph_homophily": h,
            "isolated_nodes": isolated,
            "histogram": counts.iter().enumerate().map(|(b, c)| {
                let (lo, hi) = edges(b);
                json!({"lo": lo, "hi": hi, "count": c})
            }).collect::<Vec<_>>(),
            "checkpoint": checkpoint.map(|p| p.display().to_string()),
            "model": layer_davg.as_ref().map(|l| l.0.clone()),
            "layer_davg": layer_davg.as_ref().map(|l| l.1.clone()),
        }),
    )?;

    let h_text = h.map_or_else(|| "undefined".to_string(), |h| format!("{h:.4}"));
    println!(
        "{}: nodes={} edges={} isolated={isolated} graph_homophily={h_text}",
        g.name(),
        g.num_nodes(),
        g.num_edges()
    );
    let hist: Vec<String> = counts.iter().map(|c| c.to_string()).collect();
    println!("node homophily histogram ({bins} bins): {}", hist.join(" "));
    if let Some((label, davg)) = &layer_davg {
        let text: Vec<String> = davg.iter().map(|d| format!("{d:.4}")).collect();
        println!("{label} D_avg per stage: {}", text.join(" "));
    }
    Ok(())
}
