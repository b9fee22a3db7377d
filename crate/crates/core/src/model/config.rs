use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::BatchNormState;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Node-weighted filtering into a codebank.
    Nosaf,
    /// [`Variant::Nosaf`] plus codebank compensation of the hidden state.
    NosafD,
    PlainGcn,
    ResGcn,
    JkSum,
    /// Residual GCN whose neighborhood aggregation for each node is scaled by that
    /// node's true homophily before normalization. Reads all labels, so it is a
    /// diagnostic only.
    OracleH,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Nosaf,
        Variant::NosafD,
        Variant::PlainGcn,
        Variant::ResGcn,
        Variant::JkSum,
        Variant::OracleH,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Nosaf => "nosaf",
            Variant::NosafD => "nosaf_d",
            Variant::PlainGcn => "plain_gcn",
            Variant::ResGcn => "res_gcn",
            Variant::JkSum => "jk_sum",
            Variant::OracleH => "oracle_h",
        }
    }

    /// True when the variant reads labels outside the training mask.
    pub fn leaks_labels(&self) -> bool {
        matches!(self, Variant::OracleH)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::config("model.variant", format!("unknown variant `{s}`")))
    }
}

/// How a forward pass combines layer outputs, after canonicalization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Behavior {
    Filtered { compensate: bool, node_weights: bool },
    Plain,
    Residual,
    JkSum,
    OracleH,
}

impl Behavior {
    /// Whether per-stage filter networks are learned.
    pub fn learns_filters(&self) -> bool {
        matches!(
            self,
            Behavior::Filtered {
                node_weights: true,
                ..
            }
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub layers: usize,
    pub hidden: usize,
    /// Projection width of each half of the filter input. Defaults to `hidden`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter_proj: Option<usize>,
    /// Hidden width of the filter network. Defaults to `hidden / 2`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter_hidden: Option<usize>,
    pub leaky_slope: f64,
    pub dropout: f64,
    /// Number of affine layers in the input map (ReLU between them).
    pub input_layers: usize,
    /// Number of affine layers in the output map (ReLU between them).
    pub output_layers: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub disable_cpm: bool,
    pub disable_node_weights: bool,
    pub disable_codebank: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::NosafD,
            layers: 4,
            hidden: 32,
            filter_proj: None,
            filter_hidden: None,
            leaky_slope: 0.2,
            dropout: 0.0,
            input_layers: 1,
            output_layers: 1,
            bn_eps: BatchNormState::DEFAULT_EPS,
            bn_momentum: BatchNormState::DEFAULT_MOMENTUM,
            disable_cpm: false,
            disable_node_weights: false,
            disable_codebank: false,
        }
    }
}

impl ModelConfig {
    pub fn new(variant: Variant, layers: usize) -> Self {
        Self {
            variant,
            layers,
            ..Self::default()
        }
    }

    pub fn filter_proj_dim(&self) -> usize {
        self.filter_proj.unwrap_or(self.hidden)
    }

    pub fn filter_hidden_dim(&self) -> usize {
        self.filter_hidden.unwrap_or((self.hidden / 2).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::config("model.hidden", "must be positive"));
        }
        if self.filter_proj == Some(0) {
            return Err(Error::config("model.filter_proj", "must be positive"));
        }
        if self.filter_hidden == Some(0) {
            return Err(Error::config("model.filter_hidden", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("model.dropout", format!("{} is not in [0, 1)", self.dropout)));
        }
        if !self.leaky_slope.is_finite() {
            return Err(Error::config("model.leaky_slope", "must be finite"));
        }
        if self.input_layers == 0 {
            return Err(Error::config("model.input_layers", "must be at least 1"));
        }
        if self.output_layers == 0 {
            return Err(Error::config("model.output_layers", "must be at least 1"));
        }
        if !(self.bn_eps > 0.0) {
            return Err(Error::config("model.bn_eps", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::config("model.bn_momentum", "must be in [0, 1]"));
        }
        Ok(())
    }

    /// Normal form in which equivalent configurations compare equal.
    ///
    /// `nosaf` is `nosaf_d` without compensation; removing the codebank also removes
    /// compensation and node weights; ablation flags are cleared on baselines.
    pub fn canonical(&self) -> ModelConfig {
        let mut c = self.clone();
        match c.variant {
            Variant::Nosaf | Variant::NosafD => {
                if c.disable_codebank {
                    c.disable_node_weights = true;
                    c.disable_cpm = true;
                }
                if c.variant == Variant::NosafD && c.disable_cpm {
                    c.variant = Variant::Nosaf;
                }
                if c.variant == Variant::Nosaf {
                    c.disable_cpm = true;
                }
            }
            _ => {
                c.disable_cpm = false;
                c.disable_node_weights = false;
                c.disable_codebank = false;
            }
        }
        c
    }

    pub fn behavior(&self) -> Behavior {
        let c = self.canonical();
        match c.variant {
            Variant::Nosaf | Variant::NosafD if c.disable_codebank => Behavior::Plain,
            Variant::Nosaf | Variant::NosafD => Behavior::Filtered {
                compensate: !c.disable_cpm,
                node_weights: !c.disable_node_weights,
            },
            Variant::PlainGcn => Behavior::Plain,
            Variant::ResGcn => Behavior::Residual,
            Variant::JkSum => Behavior::JkSum,
            Variant::OracleH => Behavior::OracleH,
        }
    }

    /// Short label for reports: the variant plus any active ablation.
    pub fn label(&self) -> String {
        let c = self.canonical();
        match (self.variant, c.disable_cpm, c.disable_node_weights, c.disable_codebank) {
            (Variant::NosafD, true, false, false) => "nosaf_d-cpm".into(),
            (Variant::NosafD, true, true, false) => "nosaf_d-cpm-nw".into(),
            (Variant::NosafD, true, true, true) => "nosaf_d-cpm-nw-cb".into(),
            (Variant::Nosaf, _, true, false) => "nosaf-nw".into(),
            (Variant::Nosaf, _, true, true) => "nosaf-nw-cb".into(),
            (v, _, _, _) => v.as_str().into(),
        }
    }
}
