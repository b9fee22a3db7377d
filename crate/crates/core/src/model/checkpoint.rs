//! JSON checkpoint: model config plus every parameter as `path → shape + values`.
//!
//! Values are written with 17 significant digits, so a load reproduces the
//! saved `f64`s exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use super::{init_params, ModelConfig, ModelParams};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::graph::bundle::{format_f64, write_file};

pub const CHECKPOINT_FORMAT: &str = "nosaf-checkpoint/1";

/// Every stored matrix (learnable weights and BN running statistics) with its path.
fn entries(params: &ModelParams) -> Vec<(String, Matrix)> {
    let mut out: Vec<(String, Matrix)> = params
        .learnable()
        .into_iter()
        .map(|(k, m)| (k, m.clone()))
        .collect();
    for (l, layer) in params.gcn.iter().enumerate() {
        out.push((
            format!("gcn.{l}.bn.running_mean"),
            Matrix::from_vec(1, layer.bn.features(), layer.bn.running_mean.clone()).unwrap(),
        ));
        out.push((
            format!("gcn.{l}.bn.running_var"),
            Matrix::from_vec(1, layer.bn.features(), layer.bn.running_var.clone()).unwrap(),
        ));
    }
    out
}

pub fn checkpoint_to_string(cfg: &ModelConfig, params: &ModelParams) -> Result<String> {
    let feature_dim = params.zeta_in[0].weight.rows();
    let num_classes = params.zeta_out.last().expect("output map").weight.cols();
    let cfg_json = serde_json::to_string(cfg).map_err(|e| Error::Serde(e.to_string()))?;
    let mut s = String::new();
    let _ = writeln!(s, "{{");
    let _ = writeln!(s, "  \"format\": \"{CHECKPOINT_FORMAT}\",");
    let _ = writeln!(s, "  \"version\": \"{}\",", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "  \"feature_dim\": {feature_dim},");
    let _ = writeln!(s, "  \"num_classes\": {num_classes},");
    let _ = writeln!(s, "  \"config\": {cfg_json},");
    let _ = writeln!(s, "  \"params\": {{");
    let all = entries(params);
    for (i, (path, m)) in all.iter().enumerate() {
        let values: Vec<String> = m.data().iter().map(|&v| format_f64(v)).collect();
        let _ = write!(
            s,
            "    \"{path}\": {{\"shape\": [{}, {}], \"values\": [{}]}}",
            m.rows(),
            m.cols(),
            values.join(", ")
        );
        s.push_str(if i + 1 < all.len() { ",\n" } else { "\n" });
    }
    let _ = writeln!(s, "  }}");
    let _ = writeln!(s, "}}");
    Ok(s)
}

pub fn save_checkpoint(path: &Path, cfg: &ModelConfig, params: &ModelParams) -> Result<()> {
    write_file(path, &checkpoint_to_string(cfg, params)?)
}

#[derive(Deserialize)]
struct StoredMatrix {
    shape: (usize, usize),
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct StoredCheckpoint {
    format: String,
    #[allow(dead_code)]
    version: String,
    feature_dim: usize,
    num_classes: usize,
    config: ModelConfig,
    params: BTreeMap<String, StoredMatrix>,
}

pub fn checkpoint_from_str(text: &str, source: &Path) -> Result<(ModelConfig, ModelParams)> {
    let stored: StoredCheckpoint = serde_json::from_str(text).map_err(|e| Error::Parse {
        file: source.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    if stored.format != CHECKPOINT_FORMAT {
        return Err(Error::Integrity(format!(
            "unsupported checkpoint format `{}`",
            stored.format
        )));
    }
    let cfg = stored.config;
    let mut params = init_params(&cfg, stored.feature_dim, stored.num_classes, 0)?;
    let mut remaining = stored.params;
    let expected: Vec<(String, Matrix)> = entries(&params);
    let mut loaded = BTreeMap::new();
    for (path, template) in expected {
        let m = remaining
            .remove(&path)
            .ok_or_else(|| Error::Integrity(format!("checkpoint is missing `{path}`")))?;
        if m.shape != template.shape() {
            return Err(Error::Integrity(format!(
                "`{path}` has shape {:?}, config expects {:?}",
                m.shape,
                template.shape()
            )));
        }
        loaded.insert(path, Matrix::from_vec(m.shape.0, m.shape.1, m.values)?);
    }
    if let Some(extra) = remaining.keys().next() {
        return Err(Error::Integrity(format!("checkpoint has unexpected entry `{extra}`")));
    }

    let names: Vec<String> = params.learnable().into_iter().map(|(k, _)| k).collect();
    for (name, slot) in names.iter().zip(params.learnable_mut()) {
        *slot = loaded.remove(name).expect("checked above");
    }
    for (l, layer) in params.gcn.iter_mut().enumerate() {
        layer.bn.running_mean = loaded
            .remove(&format!("gcn.{l}.bn.running_mean"))
            .expect("checked above")
            .into_vec();
        layer.bn.running_var = loaded
            .remove(&format!("gcn.{l}.bn.running_var"))
            .expect("checked above")
            .into_vec();
    }
    Ok((cfg, params))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    fn perturbed(cfg: &ModelConfig) -> ModelParams {
        let mut p = init_params(cfg, 5, 3, 11).unwrap();
        p.gcn[0].bn.running_mean[1] = 0.123456789012345678;
        p.gcn[1].bn.running_var[0] = 2.0f64.sqrt();
        p.filters[2].b_2.data_mut()[0] = -1.0 / 3.0;
        p
    }

    #[test]
    fn round_trip_is_exact() {
        let cfg = ModelConfig::new(Variant::NosafD, 2);
        let p = perturbed(&cfg);
        let text = checkpoint_to_string(&cfg, &p).unwrap();
        let (cfg2, p2) = checkpoint_from_str(&text, Path::new("mem")).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(p2, p);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let cfg = ModelConfig::new(Variant::NosafD, 2);
        let text = checkpoint_to_string(&cfg, &perturbed(&cfg)).unwrap();
        // claim a wider hidden size than the stored weights have
        let tampered = text.replace("\"hidden\":32", "\"hidden\":16");
        assert_ne!(tampered, text);
        let err = checkpoint_from_str(&tampered, Path::new("mem")).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)), "{err}");
    }

    #[test]
    fn missing_entry_is_rejected() {
        let cfg = ModelConfig::new(Variant::PlainGcn, 1);
        let p = init_params(&cfg, 2, 2, 0).unwrap();
        let text = checkpoint_to_string(&cfg, &p).unwrap();
        let tampered = text.replace("\"layers\":1", "\"layers\":2");
        assert!(matches!(
            checkpoint_from_str(&tampered, Path::new("mem")),
            Err(Error::Integrity(_))
        ));
    }
}
