//! Long-format grid runs over one axis, resumable from the CSV they write.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use super::commands::{create_dir, load_data, num, write_csv, write_resolved_config};
use super::config::model_from_label;
use super::svg::{line_chart, Series};
use super::{CliConfig, SweepAxis, RESOLVED_CONFIG_FILE};
use crate::error::{Error, Result};
use crate::graph::bundle::write_file;
use crate::graph::{generate_sbm, graph_homophily, make_split, Graph, SbmSpec, SplitMasks};
use crate::train::{mean_std, train_once_partial, TrainConfig};

pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_HEADER: [&str; 11] = [
    "axis",
    "value",
    "variant",
    "L",
    "graph_h",
    "seed",
    "test_acc",
    "test_acc_std",
    "best_val_epoch",
    "final_Davg",
    "error",
];

/// One axis value with everything its cells share.
struct Point {
    value: String,
    train: TrainConfig,
    graph: Arc<Graph>,
    masks: Arc<SplitMasks>,
    graph_h: String,
}

/// A detail row, kept as text so resumed rows are written back unchanged.
#[derive(Clone)]
struct Row {
    point: usize,
    seed: u64,
    fields: Vec<String>,
}

impl Row {
    fn failed(&self) -> bool {
        !self.fields[10].is_empty()
    }

    fn value(&self, column: usize) -> f64 {
        self.fields[column].parse().unwrap_or(f64::NAN)
    }
}

fn points(cfg: &CliConfig) -> Result<Vec<Point>> {
    let axis = cfg
        .sweep
        .axis
        .ok_or_else(|| Error::config("sweep.axis", "required (depth, homophily or variant)"))?;
    if cfg.sweep.values.is_empty() {
        return Err(Error::config("sweep.values", "at least one value is required"));
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = cfg.sweep.values.iter().find(|v| !seen.insert(v.as_str())) {
        return Err(Error::config("sweep.values", format!("`{dup}` is listed twice")));
    }

    let shared = match axis {
        SweepAxis::Homophily => {
            if cfg.data.bundle.is_some() {
                return Err(Error::config(
                    "data.bundle",
                    "the homophily axis generates its own graphs; drop the bundle",
                ));
            }
            None
        }
        _ if cfg.data.bundle.is_some() => {
            let (_, g, masks) = load_data(cfg)?;
            Some(with_h(g, masks))
        }
        _ => {
            cfg.sbm.validate()?;
            let g = generate_sbm(&cfg.sbm)?;
            let masks = make_split(&g, cfg.train.split, cfg.train.split_seed)?;
            Some(with_h(g, masks))
        }
    };

    let mut out = Vec::with_capacity(cfg.sweep.values.len());
    for value in &cfg.sweep.values {
        let mut train = cfg.train.clone();
        let data = match axis {
            SweepAxis::Depth => {
                train.model.layers = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::config("sweep.values", format!("`{value}` is not a layer count")))?;
                shared.clone()
            }
            SweepAxis::Variant => {
                train.model = model_from_label(&cfg.model, value.trim())?;
                shared.clone()
            }
            SweepAxis::Homophily => {
                let target_h: f64 = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::config("sweep.values", format!("`{value}` is not a homophily ratio")))?;
                let spec = SbmSpec {
                    target_h,
                    ..cfg.sbm.clone()
                };
                spec.validate()?;
                let g = generate_sbm(&spec)?;
                let masks = make_split(&g, cfg.train.split, cfg.train.split_seed)?;
                Some(with_h(g, masks))
            }
        };
        train.validate()?;
        let (graph, masks, graph_h) = data.expect("every axis provides a graph");
        out.push(Point {
            value: value.clone(),
            train,
            graph,
            masks,
            graph_h,
        });
    }
    Ok(out)
}

fn with_h(g: Graph, masks: SplitMasks) -> (Arc<Graph>, Arc<SplitMasks>, String) {
    let h = graph_homophily(&g).map_or_else(String::new, num);
    (Arc::new(g), Arc::new(masks), h)
}

/// Error-free detail rows of a previous run in `out`, or nothing for a fresh directory.
fn previous_rows(cfg: &CliConfig, out: &Path, points: &[Point]) -> Result<Vec<Row>> {
    let csv_path = out.join(SWEEP_FILE);
    if !csv_path.exists() {
        return Ok(Vec::new());
    }
    let cfg_path = out.join(RESOLVED_CONFIG_FILE);
    let stored = std::fs::read_to_string(&cfg_path).unwrap_or_default();
    if stored != cfg.to_toml()? {
        return Err(Error::Argument(format!(
            "{} holds a sweep with a different config; use another --out to start a new one",
            out.display()
        )));
    }
    let mut reader = csv::Reader::from_path(&csv_path).map_err(|e| Error::Parse {
        file: csv_path.clone(),
        line: 0,
        msg: e.to_string(),
    })?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            file: csv_path.clone(),
            line: i + 2,
            msg: e.to_string(),
        })?;
        let fields: Vec<String> = record.iter().map(str::to_string).collect();
        if fields.len() != SWEEP_HEADER.len() {
            return Err(Error::Parse {
                file: csv_path.clone(),
                line: i + 2,
                msg: format!("expected {} fields, found {}", SWEEP_HEADER.len(), fields.len()),
            });
        }
        let Ok(seed) = fields[5].parse::<u64>() else {
            continue;
        };
        let Some(point) = points.iter().position(|p| p.value == fields[1]) else {
            continue;
        };
        let row = Row { point, seed, fields };
        if !row.failed() && cfg.train.seeds.contains(&seed) {
            rows.push(row);
        }
    }
    Ok(rows)
}

fn aggregate(points: &[Point], axis: SweepAxis, rows: &[Row]) -> Vec<Vec<String>> {
    let mut by_point: BTreeMap<usize, Vec<&Row>> = BTreeMap::new();
    for r in rows {
        by_point.entry(r.point).or_default().push(r);
    }
    let mut out = Vec::new();
    for (idx, group) in by_point {
        let ok: Vec<&&Row> = group.iter().filter(|r| !r.failed()).collect();
        if ok.is_empty() {
            continue;
        }
        let col = |c: usize| ok.iter().map(|r| r.value(c)).collect::<Vec<f64>>();
        let (acc, std) = mean_std(&col(6));
        let failed = group.len() - ok.len();
        let p = &points[idx];
        out.push(vec![
            axis.as_str().into(),
            p.value.clone(),
            p.train.model.label(),
            p.train.model.layers.to_string(),
            p.graph_h.clone(),
            "mean".into(),
            num(acc),
            num(std),
            num(mean_std(&col(8)).0),
            num(mean_std(&col(9)).0),
            if failed > 0 {
                format!("{failed} of {} cells failed", group.len())
            } else {
                String::new()
            },
        ]);
    }
    out
}

fn write_sweep(out: &Path, points: &[Point], axis: SweepAxis, rows: &mut [Row]) -> Result<()> {
    rows.sort_by_key(|r| (r.point, r.seed));
    let mut all: Vec<Vec<String>> = rows.iter().map(|r| r.fields.clone()).collect();
    all.extend(aggregate(points, axis, rows));
    write_csv(&out.join(SWEEP_FILE), &SWEEP_HEADER, &all)
}

fn charts(out: &Path, points: &[Point], axis: SweepAxis, rows: &[Row]) -> Result<()> {
    let x_of = |p: &Point| -> f64 {
        match axis {
            SweepAxis::Depth => p.train.model.layers as f64,
            _ => p.value.trim().parse().unwrap_or(f64::NAN),
        }
    };
    let aggregated = aggregate(points, axis, rows);
    let series_for = |column: usize| {
        let mut by_label: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for row in &aggregated {
            let p = points.iter().find(|p| p.value == row[1]).expect("aggregate rows name known points");
            by_label
                .entry(row[2].clone())
                .or_default()
                .push((x_of(p), row[column].parse().unwrap_or(f64::NAN)));
        }
        by_label
            .into_iter()
            .map(|(name, mut points)| {
                points.sort_by(|a, b| a.0.total_cmp(&b.0));
                Series { name, points }
            })
            .collect::<Vec<_>>()
    };
    let x_label = match axis {
        SweepAxis::Depth => "layers",
        _ => "target homophily",
    };
    let acc = line_chart(&format!("test accuracy vs {axis}"), x_label, "mean test accuracy", &series_for(6));
    write_file(&out.join(format!("accuracy_vs_{axis}.svg")), &acc)?;
    let davg = line_chart(&format!("final D_avg vs {axis}"), x_label, "mean final D_avg", &series_for(9));
    write_file(&out.join(format!("davg_vs_{axis}.svg")), &davg)
}

pub fn sweep(cfg: &CliConfig, out: &Path, pool: &rayon::ThreadPool) -> Result<()> {
    cfg.train.validate()?;
    let points = points(cfg)?;
    let axis = cfg.sweep.axis.expect("checked by points");
    create_dir(out)?;
    let kept = previous_rows(cfg, out, &points)?;
    write_resolved_config(cfg, out)?;

    let mut seeds = cfg.train.seeds.clone();
    seeds.sort_unstable();
    let todo: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|p| seeds.iter().map(move |&s| (p, s)))
        .filter(|&(p, s)| !kept.iter().any(|r| r.point == p && r.seed == s))
        .collect();
    if !kept.is_empty() {
        log::info!("resuming: {} cells done, {} to run", kept.len(), todo.len());
    }

    let state = Mutex::new(kept);
    {
        let mut rows = state.lock().expect("sweep state lock");
        write_sweep(out, &points, axis, &mut rows)?;
    }
    let results: Vec<Result<()>> = pool.install(|| {
        todo.par_iter()
            .map(|&(idx, seed)| {
                let p = &points[idx];
                let run = train_once_partial(&p.graph, &p.masks, &p.train, seed);
                let r = &run.record;
                let error = run.error.as_ref().map(|e| e.to_string()).unwrap_or_default();
                let finished = error.is_empty();
                let metric = |x: f64| if finished { num(x) } else { String::new() };
                let row = Row {
                    point: idx,
                    seed,
                    fields: vec![
                        axis.as_str().into(),
                        p.value.clone(),
                        p.train.model.label(),
                        p.train.model.layers.to_string(),
                        p.graph_h.clone(),
                        seed.to_string(),
                        metric(r.test_accuracy_at_best_val),
                        String::new(),
                        if finished { r.best_val_epoch.to_string() } else { String::new() },
                        metric(r.final_davg),
                        error,
                    ],
                };
                log::info!("{axis}={} seed {seed}: test_acc {}", p.value, row.fields[6]);
                let mut rows = state.lock().expect("sweep state lock");
                rows.push(row);
                write_sweep(out, &points, axis, &mut rows)
            })
            .collect()
    });
    results.into_iter().collect::<Result<Vec<()>>>()?;

    let rows = state.into_inner().expect("sweep state lock");
    if cfg.output.svg && axis != SweepAxis::Variant {
        charts(out, &points, axis, &rows)?;
    }
    for agg in aggregate(&points, axis, &rows) {
        println!("{axis}={} {} L={} test_acc={}±{}", agg[1], agg[2], agg[3], short(&agg[6]), short(&agg[7]));
    }
    let failed: Vec<&Row> = rows.iter().filter(|r| r.failed()).collect();
    if let Some(first) = failed.first() {
        return Err(Error::Run {
            seed: first.seed,
            source: Box::new(Error::Data(format!(
                "{} of {} sweep cells failed; first at {axis}={}: {}",
                failed.len(),
                rows.len(),
                points[first.point].value,
                first.fields[10]
            ))),
        });
    }
    Ok(())
}

fn short(text: &str) -> String {
    text.parse::<f64>().map_or_else(|_| text.to_string(), |x| format!("{x:.4}"))
}
