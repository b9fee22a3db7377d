use std::sync::Arc;

use rand::Rng;

use super::{Behavior, ModelConfig, ModelParams};
use crate::autodiff::{BatchNormState, BatchStats, Matrix, Mode, SparseCsr, Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph::{node_homophily_all, normalize_adjacency, smoothness_davg, Graph};

/// Per-graph constants shared by every forward pass.
#[derive(Clone, Debug)]
pub struct GraphInputs {
    pub features: Matrix,
    pub adjacency: Arc<SparseCsr>,
    /// True node homophily, 1.0 for isolated nodes. Read only by the oracle variant.
    pub node_homophily: Vec<f64>,
    /// `diag(node_homophily) · adjacency`: aggregation weighted per receiving node.
    pub homophily_adjacency: Arc<SparseCsr>,
}

impl GraphInputs {
    pub fn new(g: &Graph) -> Self {
        let adjacency = normalize_adjacency(g);
        let node_homophily: Vec<f64> = node_homophily_all(g)
            .into_iter()
            .map(|h| h.unwrap_or(1.0))
            .collect();
        let mut triplets = Vec::with_capacity(adjacency.nnz());
        for (i, &w) in node_homophily.iter().enumerate() {
            triplets.extend(adjacency.row_entries(i).map(|(j, v)| (i, j, w * v)));
        }
        let homophily_adjacency =
            SparseCsr::from_triplets(adjacency.rows(), adjacency.cols(), &triplets)
                .expect("entries come from a valid matrix");
        Self {
            features: g.features().clone(),
            adjacency: Arc::new(adjacency),
            node_homophily,
            homophily_adjacency: Arc::new(homophily_adjacency),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }
}

pub(crate) struct LinearTensors {
    weight: Tensor,
    bias: Tensor,
}

pub(crate) struct GcnTensors {
    weight: Tensor,
    gamma: Tensor,
    beta: Tensor,
}

/// Tape handles for one filter stage's weights.
pub struct FilterTensors {
    pub w_z: Tensor,
    pub w_c: Tensor,
    pub w_1: Tensor,
    pub b_1: Tensor,
    pub w_2: Tensor,
    pub b_2: Tensor,
}

/// Parameters registered on a tape, mirroring [`ModelParams`].
pub struct ParamTensors {
    zeta_in: Vec<LinearTensors>,
    gcn: Vec<GcnTensors>,
    filters: Vec<FilterTensors>,
    zeta_out: Vec<LinearTensors>,
    ordered: Vec<Tensor>,
}

impl ParamTensors {
    /// Registers every learnable matrix, in [`ModelParams::learnable`] order.
    pub fn bind(tape: &mut Tape, params: &ModelParams) -> Self {
        let ordered: Vec<Tensor> = params
            .learnable()
            .into_iter()
            .map(|(_, m)| tape.param(m.clone()))
            .collect();
        let mut it = ordered.iter().copied();
        let mut next = || it.next().expect("binding order matches learnable()");
        let zeta_in = params
            .zeta_in
            .iter()
            .map(|_| LinearTensors {
                weight: next(),
                bias: next(),
            })
            .collect();
        let gcn = params
            .gcn
            .iter()
            .map(|_| GcnTensors {
                weight: next(),
                gamma: next(),
                beta: next(),
            })
            .collect();
        let filters = params
            .filters
            .iter()
            .map(|_| FilterTensors {
                w_z: next(),
                w_c: next(),
                w_1: next(),
                b_1: next(),
                w_2: next(),
                b_2: next(),
            })
            .collect();
        let zeta_out = params
            .zeta_out
            .iter()
            .map(|_| LinearTensors {
                weight: next(),
                bias: next(),
            })
            .collect();
        Self {
            zeta_in,
            gcn,
            filters,
            zeta_out,
            ordered,
        }
    }

    /// Handles in [`ModelParams::learnable_mut`] order.
    pub fn ordered(&self) -> &[Tensor] {
        &self.ordered
    }
}

/// What one stage of the layer loop produced.
#[derive(Clone, Debug)]
pub struct StageRecord {
    /// Aggregated representation `Z^l` (stage 0: the input map output).
    pub z: Matrix,
    /// Node weights `γ^l`; all ones when node weights are disabled, `None` for
    /// variants without a filter.
    pub gamma: Option<Vec<f64>>,
    /// Codebank after this stage's update, for codebank variants.
    pub codebank: Option<Matrix>,
    /// Input to the next stage, `H^{l+1}`.
    pub output: Matrix,
}

/// Per-stage telemetry of a forward pass. Stage 0 is the input map.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub stages: Vec<StageRecord>,
    /// The matrix the output map reads: `H^L` for plain and residual stacks, the
    /// layer sum for jumping knowledge, the final codebank for filtered variants.
    pub representation: Matrix,
    pub logits: Matrix,
}

impl ForwardTrace {
    /// Mean pairwise cosine distance of each stage output.
    pub fn stage_smoothness(&self) -> Result<Vec<f64>> {
        self.stages.iter().map(|s| smoothness_davg(&s.output)).collect()
    }

    /// Smoothness of the last stage output.
    pub fn final_smoothness(&self) -> Result<f64> {
        smoothness_davg(&self.stages.last().expect("at least one stage").output)
    }

    /// Smoothness of the output map's input.
    pub fn representation_smoothness(&self) -> Result<f64> {
        smoothness_davg(&self.representation)
    }

    /// `(mean, min, max)` of `γ` per stage, when the variant computes it.
    pub fn gamma_stats(&self) -> Vec<Option<(f64, f64, f64)>> {
        self.stages
            .iter()
            .map(|s| {
                s.gamma.as_ref().map(|g| {
                    let mean = g.iter().sum::<f64>() / g.len() as f64;
                    let min = g.iter().cloned().fold(f64::INFINITY, f64::min);
                    let max = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    (mean, min, max)
                })
            })
            .collect()
    }
}

pub struct ForwardOutput {
    pub logits: Tensor,
    pub trace: ForwardTrace,
    /// Train-mode batch statistics per GCN layer, in layer order.
    pub bn_stats: Vec<BatchStats>,
    pub params: ParamTensors,
}

/// Running accumulator of filtered stage outputs.
#[derive(Clone, Copy, Debug)]
pub struct Codebank {
    pub c: Tensor,
}

impl Codebank {
    /// The all-zeros `n × d` starting state.
    pub fn zeros(tape: &mut Tape, n: usize, d: usize) -> Self {
        Self {
            c: tape.constant(Matrix::zeros(n, d)),
        }
    }

    /// `C ← C + filtered`.
    pub fn update(self, tape: &mut Tape, filtered: Tensor) -> Result<Self> {
        Ok(Self {
            c: tape.add(self.c, filtered)?,
        })
    }
}

/// `ReLU(BN(Â h W))`.
pub fn gcn_block(
    tape: &mut Tape,
    h: Tensor,
    adj: &Arc<SparseCsr>,
    weight: Tensor,
    gamma: Tensor,
    beta: Tensor,
    bn: &BatchNormState,
    mode: Mode,
) -> Result<(Tensor, Option<BatchStats>)> {
    let agg = tape.spmm(adj, h)?;
    let xw = tape.matmul(agg, weight)?;
    let (normed, stats) = tape.batch_norm(xw, gamma, beta, bn, mode)?;
    Ok((tape.relu(normed), stats))
}

/// `γ = sigmoid(LeakyReLU([z W_z ‖ c W_c] W_1 + b_1) W_2 + b_2)`, one value per row.
pub fn filter_weights(
    tape: &mut Tape,
    z: Tensor,
    c: Tensor,
    stage: &FilterTensors,
    leaky_slope: f64,
) -> Result<Tensor> {
    let pz = tape.matmul(z, stage.w_z)?;
    let pc = tape.matmul(c, stage.w_c)?;
    let mixed = tape.concat_cols(pz, pc)?;
    let hidden = tape.matmul(mixed, stage.w_1)?;
    let hidden = tape.add_row(hidden, stage.b_1)?;
    let hidden = tape.leaky_relu(hidden, leaky_slope);
    let score = tape.matmul(hidden, stage.w_2)?;
    let score = tape.add_row(score, stage.b_2)?;
    Ok(tape.sigmoid(score))
}

/// Scales row `i` of `z` by `γ_i`.
pub fn apply_filter(tape: &mut Tape, z: Tensor, gamma: Tensor) -> Result<Tensor> {
    if gamma.shape() != (z.rows(), 1) {
        return Err(Error::Dimension {
            op: "apply_filter",
            left: z.shape(),
            right: gamma.shape(),
        });
    }
    let b = tape.broadcast_col(gamma, z.cols())?;
    tape.hadamard(z, b)
}

/// `H^{l+1} = z ∘ B(γ) + C ∘ (1 - B(γ))`.
pub fn compensate(tape: &mut Tape, cb: Codebank, z: Tensor, gamma: Tensor) -> Result<Tensor> {
    let filtered = apply_filter(tape, z, gamma)?;
    blend_with_codebank(tape, cb, filtered, gamma)
}

fn blend_with_codebank(
    tape: &mut Tape,
    cb: Codebank,
    filtered: Tensor,
    gamma: Tensor,
) -> Result<Tensor> {
    if cb.c.shape() != filtered.shape() {
        return Err(Error::Dimension {
            op: "compensate",
            left: cb.c.shape(),
            right: filtered.shape(),
        });
    }
    let ones = tape.constant(Matrix::filled(gamma.rows(), 1, 1.0));
    let keep = tape.sub(ones, gamma)?;
    let kept = apply_filter(tape, cb.c, keep)?;
    tape.add(filtered, kept)
}

fn affine(tape: &mut Tape, x: Tensor, lin: &LinearTensors) -> Result<Tensor> {
    let xw = tape.matmul(x, lin.weight)?;
    tape.add_row(xw, lin.bias)
}

fn mlp(tape: &mut Tape, mut x: Tensor, layers: &[LinearTensors]) -> Result<Tensor> {
    for (i, lin) in layers.iter().enumerate() {
        if i > 0 {
            x = tape.relu(x);
        }
        x = affine(tape, x, lin)?;
    }
    Ok(x)
}

fn check_shapes(inputs: &GraphInputs, cfg: &ModelConfig, params: &ModelParams) -> Result<()> {
    let mismatch = |what: &str| Error::Integrity(format!("parameters do not match config: {what}"));
    if params.gcn.len() != cfg.layers {
        return Err(mismatch("layer count"));
    }
    if params.zeta_in.len() != cfg.input_layers || params.zeta_out.len() != cfg.output_layers {
        return Err(mismatch("input/output map depth"));
    }
    let expected_filters = if cfg.behavior().learns_filters() {
        cfg.layers + 1
    } else {
        0
    };
    if params.filters.len() != expected_filters {
        return Err(mismatch("filter stage count"));
    }
    if params.zeta_in[0].weight.rows() != inputs.features.cols() {
        return Err(Error::Dimension {
            op: "input map",
            left: inputs.features.shape(),
            right: params.zeta_in[0].weight.shape(),
        });
    }
    if inputs.adjacency.rows() != inputs.num_nodes() {
        return Err(mismatch("adjacency size"));
    }
    Ok(())
}

/// Runs the full layer loop for any variant and records a trace.
///
/// Stage 0 is `Z^0 = H^0 = ζ_in(X)`; stages `1..=L` apply a GCN block to `H^l`.
/// `rng` drives dropout and is only consulted in train mode with dropout enabled.
pub fn forward<R: Rng + ?Sized>(
    tape: &mut Tape,
    inputs: &GraphInputs,
    cfg: &ModelConfig,
    params: &ModelParams,
    mode: Mode,
    mut rng: Option<&mut R>,
) -> Result<ForwardOutput> {
    check_shapes(inputs, cfg, params)?;
    let behavior = cfg.behavior();
    let bound = ParamTensors::bind(tape, params);
    let n = inputs.num_nodes();
    let d = cfg.hidden;
    let dropout = if mode == Mode::Train { cfg.dropout } else { 0.0 };

    let mut drop = |tape: &mut Tape, t: Tensor| -> Result<Tensor> {
        match rng.as_deref_mut() {
            Some(r) if dropout > 0.0 => tape.dropout(t, dropout, r),
            _ => Ok(t),
        }
    };

    let x = tape.constant(inputs.features.clone());
    let x = drop(tape, x)?;
    let h0 = mlp(tape, x, &bound.zeta_in)?;

    let adjacency = if behavior == Behavior::OracleH {
        &inputs.homophily_adjacency
    } else {
        &inputs.adjacency
    };
    let mut stages = Vec::with_capacity(cfg.layers + 1);
    let mut bn_stats = Vec::with_capacity(cfg.layers);
    let mut gcn = |tape: &mut Tape, h: Tensor, l: usize| -> Result<Tensor> {
        let p = &bound.gcn[l];
        let (z, stats) = gcn_block(
            tape,
            h,
            adjacency,
            p.weight,
            p.gamma,
            p.beta,
            &params.gcn[l].bn,
            mode,
        )?;
        bn_stats.extend(stats);
        drop(tape, z)
    };

    let representation = match behavior {
        Behavior::Filtered {
            compensate,
            node_weights,
        } => {
            let mut cb = Codebank::zeros(tape, n, d);
            let mut h = h0;
            for l in 0..=cfg.layers {
                let z = if l == 0 { h0 } else { gcn(tape, h, l - 1)? };
                let gamma = if node_weights {
                    filter_weights(tape, z, cb.c, &bound.filters[l], cfg.leaky_slope)?
                } else {
                    tape.constant(Matrix::filled(n, 1, 1.0))
                };
                let filtered = apply_filter(tape, z, gamma)?;
                h = if compensate {
                    blend_with_codebank(tape, cb, filtered, gamma)?
                } else {
                    filtered
                };
                cb = cb.update(tape, filtered)?;
                stages.push(StageRecord {
                    z: tape.value(z).clone(),
                    gamma: Some(tape.value(gamma).data().to_vec()),
                    codebank: Some(tape.value(cb.c).clone()),
                    output: tape.value(h).clone(),
                });
            }
            cb.c
        }
        Behavior::Plain | Behavior::Residual | Behavior::JkSum | Behavior::OracleH => {
            let mut h = h0;
            let mut jk = h0;
            stages.push(StageRecord {
                z: tape.value(h0).clone(),
                gamma: None,
                codebank: None,
                output: tape.value(h0).clone(),
            });
            for l in 0..cfg.layers {
                let z = gcn(tape, h, l)?;
                h = match behavior {
                    Behavior::Plain | Behavior::JkSum => z,
                    _ => tape.add(z, h)?,
                };
                if behavior == Behavior::JkSum {
                    jk = tape.add(jk, z)?;
                }
                stages.push(StageRecord {
                    z: tape.value(z).clone(),
                    gamma: None,
                    codebank: None,
                    output: tape.value(h).clone(),
                });
            }
            if behavior == Behavior::JkSum {
                jk
            } else {
                h
            }
        }
    };

    let logits = mlp(tape, representation, &bound.zeta_out)?;
    let trace = ForwardTrace {
        stages,
        representation: tape.value(representation).clone(),
        logits: tape.value(logits).clone(),
    };
    Ok(ForwardOutput {
        logits,
        trace,
        bn_stats,
        params: bound,
    })
}

/// Eval-mode forward on a fresh tape.
pub fn predict(inputs: &GraphInputs, cfg: &ModelConfig, params: &ModelParams) -> Result<ForwardTrace> {
    let mut tape = Tape::new();
    let out = forward::<rand_chacha::ChaCha8Rng>(&mut tape, inputs, cfg, params, Mode::Eval, None)?;
    Ok(out.trace)
}
