use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::autodiff::{BatchNormState, Matrix};
use crate::error::{Error, Result};

/// Affine map `x W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    fn glorot(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: glorot(fan_in, fan_out, rng),
            bias: Matrix::zeros(1, fan_out),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcnLayer {
    pub weight: Matrix,
    pub bn: BatchNormState,
}

/// Weights of one stage's node-weight network.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterStage {
    /// `d × d'` projection of the aggregated representation.
    pub w_z: Matrix,
    /// `d × d'` projection of the codebank.
    pub w_c: Matrix,
    /// `2d' × d''`.
    pub w_1: Matrix,
    pub b_1: Matrix,
    /// `d'' × 1`.
    pub w_2: Matrix,
    pub b_2: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub zeta_in: Vec<Linear>,
    pub gcn: Vec<GcnLayer>,
    /// One stage per codebank contribution (`layers + 1`), empty when node weights are off.
    pub filters: Vec<FilterStage>,
    pub zeta_out: Vec<Linear>,
}

fn glorot(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let bound = glorot_bound(fan_in, fan_out);
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    Matrix::from_vec(fan_in, fan_out, data).expect("length matches shape")
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn mlp(dims: &[usize], rng: &mut ChaCha8Rng) -> Vec<Linear> {
    dims.windows(2).map(|w| Linear::glorot(w[0], w[1], rng)).collect()
}

/// Glorot-uniform weights, zero biases, unit BN scale and zero BN shift.
pub fn init_params(
    cfg: &ModelConfig,
    feature_dim: usize,
    num_classes: usize,
    seed: u64,
) -> Result<ModelParams> {
    cfg.validate()?;
    if feature_dim == 0 || num_classes == 0 {
        return Err(Error::Argument(
            "feature dimension and class count must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.hidden;
    let mut in_dims = vec![feature_dim];
    in_dims.extend(std::iter::repeat(d).take(cfg.input_layers));
    let zeta_in = mlp(&in_dims, &mut rng);

    let gcn = (0..cfg.layers)
        .map(|_| {
            let mut bn = BatchNormState::new(d);
            bn.eps = cfg.bn_eps;
            bn.momentum = cfg.bn_momentum;
            GcnLayer {
                weight: glorot(d, d, &mut rng),
                bn,
            }
        })
        .collect();

    let filters = if cfg.behavior().learns_filters() {
        let (dp, dh) = (cfg.filter_proj_dim(), cfg.filter_hidden_dim());
        (0..=cfg.layers)
            .map(|_| FilterStage {
                w_z: glorot(d, dp, &mut rng),
                w_c: glorot(d, dp, &mut rng),
                w_1: glorot(2 * dp, dh, &mut rng),
                b_1: Matrix::zeros(1, dh),
                w_2: glorot(dh, 1, &mut rng),
                b_2: Matrix::zeros(1, 1),
            })
            .collect()
    } else {
        Vec::new()
    };

    let mut out_dims = vec![d; cfg.output_layers];
    out_dims.push(num_classes);
    let zeta_out = mlp(&out_dims, &mut rng);

    Ok(ModelParams {
        zeta_in,
        gcn,
        filters,
        zeta_out,
    })
}

impl ModelParams {
    /// Learnable matrices with their dotted paths, in a fixed order shared with
    /// [`ModelParams::learnable_mut`] and the tape bindings.
    pub fn learnable(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (i, lin) in self.zeta_in.iter().enumerate() {
            out.push((format!("zeta_in.{i}.weight"), &lin.weight));
            out.push((format!("zeta_in.{i}.bias"), &lin.bias));
        }
        for (l, layer) in self.gcn.iter().enumerate() {
            out.push((format!("gcn.{l}.weight"), &layer.weight));
            out.push((format!("gcn.{l}.bn.gamma"), &layer.bn.gamma));
            out.push((format!("gcn.{l}.bn.beta"), &layer.bn.beta));
        }
        for (l, f) in self.filters.iter().enumerate() {
            out.push((format!("filter.{l}.w_z"), &f.w_z));
            out.push((format!("filter.{l}.w_c"), &f.w_c));
            out.push((format!("filter.{l}.w_1"), &f.w_1));
            out.push((format!("filter.{l}.b_1"), &f.b_1));
            out.push((format!("filter.{l}.w_2"), &f.w_2));
            out.push((format!("filter.{l}.b_2"), &f.b_2));
        }
        for (i, lin) in self.zeta_out.iter().enumerate() {
            out.push((format!("zeta_out.{i}.weight"), &lin.weight));
            out.push((format!("zeta_out.{i}.bias"), &lin.bias));
        }
        out
    }

    pub fn learnable_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::new();
        for lin in &mut self.zeta_in {
            out.push(&mut lin.weight);
            out.push(&mut lin.bias);
        }
        for layer in &mut self.gcn {
            out.push(&mut layer.weight);
            out.push(&mut layer.bn.gamma);
            out.push(&mut layer.bn.beta);
        }
        for f in &mut self.filters {
            out.push(&mut f.w_z);
            out.push(&mut f.w_c);
            out.push(&mut f.w_1);
            out.push(&mut f.b_1);
            out.push(&mut f.w_2);
            out.push(&mut f.b_2);
        }
        for lin in &mut self.zeta_out {
            out.push(&mut lin.weight);
            out.push(&mut lin.bias);
        }
        out
    }

    pub fn num_learnable(&self) -> usize {
        self.learnable().iter().map(|(_, m)| m.data().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.learnable().iter().all(|(_, m)| m.is_finite())
    }
}
