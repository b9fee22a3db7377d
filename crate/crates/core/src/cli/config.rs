//! The nested configuration document shared by every command, and dotted-path overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::graph::SbmSpec;
use crate::model::{ModelConfig, Variant};
use crate::train::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Bundle directory to train or analyze on.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bundle: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Depth,
    Homophily,
    Variant,
}

impl SweepAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::Depth => "depth",
            SweepAxis::Homophily => "homophily",
            SweepAxis::Variant => "variant",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "depth" => Ok(SweepAxis::Depth),
            "homophily" => Ok(SweepAxis::Homophily),
            "variant" => Ok(SweepAxis::Variant),
            other => Err(Error::config(
                "sweep.axis",
                format!("`{other}` is not one of depth, homophily, variant"),
            )),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis: Option<SweepAxis>,
    /// Axis values as text: layer counts, target homophily ratios, or variant
    /// labels such as `nosaf_d-cpm-nw`.
    pub values: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Also emit SVG line charts next to the CSV outputs.
    pub svg: bool,
}

/// Fully resolved configuration. Every field is addressable by its dotted path,
/// e.g. `sbm.target_h`, `model.variant`, `train.optimizer.lr`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub data: DataConfig,
    pub sbm: SbmSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

impl CliConfig {
    /// Reads an optional TOML file, applies `path=value` overrides in order, and
    /// deserializes with unknown keys rejected.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<CliConfig> {
        let mut doc = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                text.parse::<Table>().map_err(|e| Error::Parse {
                    file: path.to_path_buf(),
                    line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1)),
                    msg: e.message().to_string(),
                })?
            }
            None => Table::new(),
        };
        for raw in overrides {
            apply_override(&mut doc, raw)?;
        }
        let mut cfg: CliConfig = Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config("config", e.message().to_string()))?;
        cfg.train.model = cfg.model.clone();
        Ok(cfg)
    }

    /// Validation of every section a command reads.
    pub fn validate(&self) -> Result<()> {
        self.sbm.validate()?;
        self.train.validate()
    }

    /// The resolved document as TOML, headed by the tool version.
    pub fn to_toml(&self) -> Result<String> {
        let body = toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))?;
        Ok(format!("# nosaf {}\n{body}", env!("CARGO_PKG_VERSION")))
    }

    pub fn to_json(&self) -> Result<serde_json::Value> {
        serde_json::to_value(self).map_err(|e| Error::Serde(e.to_string()))
    }
}

/// Applies one `dotted.path=value` override. The value is read as a TOML value
/// when it parses as one and as a bare string otherwise.
pub fn apply_override(doc: &mut Table, raw: &str) -> Result<()> {
    let (path, text) = raw
        .split_once('=')
        .ok_or_else(|| Error::Argument(format!("override `{raw}` is not of the form path=value")))?;
    let path = path.trim();
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Argument(format!("override path `{path}` has an empty segment")));
    }
    let value = parse_value(text.trim());
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut table = doc;
    for key in parents {
        let entry = table
            .entry(key.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(path, format!("`{key}` is not a section")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(text: &str) -> Value {
    format!("v = {text}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(text.to_string()))
}

/// Rewrites `--a.b value` and `--a.b=value` into `--set a.b=value` so any config
/// path can be given as its own flag.
pub fn expand_dotted_flags(args: Vec<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut iter = args.into_iter().peekable();
    if let Some(program) = iter.next() {
        out.push(program);
    }
    while let Some(arg) = iter.next() {
        let dotted = arg
            .strip_prefix("--")
            .filter(|rest| rest.split('=').next().is_some_and(|k| k.contains('.')));
        match dotted {
            Some(rest) if rest.contains('=') => {
                out.push("--set".into());
                out.push(rest.to_string());
            }
            Some(rest) => {
                let value = iter.next().unwrap_or_default();
                out.push("--set".into());
                out.push(format!("{rest}={value}"));
            }
            None => out.push(arg),
        }
    }
    out
}

/// Parses a variant label: a variant name optionally followed by `-cpm`, `-nw`
/// and `-cb` to disable compensation, node weights and the codebank.
pub fn model_from_label(base: &ModelConfig, label: &str) -> Result<ModelConfig> {
    let mut parts = label.split('-');
    let variant: Variant = parts.next().unwrap_or_default().parse()?;
    let mut cfg = ModelConfig {
        variant,
        disable_cpm: false,
        disable_node_weights: false,
        disable_codebank: false,
        ..base.clone()
    };
    for flag in parts {
        match flag {
            "cpm" => cfg.disable_cpm = true,
            "nw" => cfg.disable_node_weights = true,
            "cb" => cfg.disable_codebank = true,
            other => {
                return Err(Error::config(
                    "sweep.values",
                    format!("unknown ablation `{other}` in `{label}` (expected cpm, nw or cb)"),
                ))
            }
        }
    }
    Ok(cfg)
}
