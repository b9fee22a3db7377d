//! Model variants built from shared layer primitives: the node-weighted
//! codebank models, their ablations, and the GCN baselines.

mod checkpoint;
mod config;
mod forward;
mod params;

pub use checkpoint::{checkpoint_from_str, checkpoint_to_string, load_checkpoint, save_checkpoint};
pub use config::{Behavior, ModelConfig, Variant};
pub use forward::{
    apply_filter, compensate, filter_weights, forward, gcn_block, predict, Codebank,
    FilterTensors, ForwardOutput, ForwardTrace, GraphInputs, ParamTensors, StageRecord,
};
pub use params::{glorot_bound, init_params, FilterStage, GcnLayer, Linear, ModelParams};

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::{BatchNormState, Matrix, Mode, SparseCsr, Tape};
    use crate::graph::{generate_sbm, normalize_adjacency, Graph, SbmSpec};

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn random_graph(rng: &mut ChaCha8Rng, n: usize, k: usize, dim: usize) -> Graph {
        let labels: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.gen_range(0..k) }).collect();
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.gen_bool(0.3) {
                    edges.push((u, v));
                }
            }
        }
        Graph::new("rand", edges, random_matrix(rng, n, dim), labels, k).unwrap()
    }

    fn small_cfg(variant: Variant, layers: usize) -> ModelConfig {
        ModelConfig {
            hidden: 6,
            ..ModelConfig::new(variant, layers)
        }
    }

    /// Gives BN layers non-trivial running statistics so eval mode is not the identity.
    fn randomize_bn(params: &mut ModelParams, rng: &mut ChaCha8Rng) {
        for layer in &mut params.gcn {
            for v in &mut layer.bn.running_mean {
                *v = rng.gen_range(-0.5..0.5);
            }
            for v in &mut layer.bn.running_var {
                *v = rng.gen_range(0.5..2.0);
            }
        }
    }

    fn eval_logits(inputs: &GraphInputs, cfg: &ModelConfig, params: &ModelParams) -> Matrix {
        predict(inputs, cfg, params).unwrap().logits
    }

    #[test]
    fn gcn_block_on_isolated_node_is_relu() {
        let adj = Arc::new(SparseCsr::identity(1));
        let mut bn = BatchNormState::new(3);
        bn.eps = 0.0;
        let mut tape = Tape::new();
        let h = tape.constant(Matrix::from_rows(&[&[1.5, -2.0, 0.25]]));
        let w = tape.param(Matrix::identity(3));
        let g = tape.param(bn.gamma.clone());
        let b = tape.param(bn.beta.clone());
        let (z, stats) = gcn_block(&mut tape, h, &adj, w, g, b, &bn, Mode::Eval).unwrap();
        assert!(stats.is_none());
        assert_eq!(tape.value(z).data(), &[1.5, 0.0, 0.25]);
    }

    #[test]
    fn gcn_aggregation_keeps_equal_rows_equal() {
        let g = Graph::new(
            "pair",
            vec![(0, 1)],
            Matrix::zeros(2, 1),
            vec![0, 0],
            1,
        )
        .unwrap();
        let adj = Arc::new(normalize_adjacency(&g));
        let row = [0.7, -1.1, 2.0];
        let mut tape = Tape::new();
        let h = tape.constant(Matrix::from_rows(&[&row, &row]));
        let agg = tape.spmm(&adj, h).unwrap();
        for r in 0..2 {
            for (a, b) in tape.value(agg).row(r).iter().zip(row) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gcn_block_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        for _ in 0..10 {
            let g = random_graph(&mut rng, 10, 2, 4);
            let h = random_matrix(&mut rng, 10, 4);
            let w = random_matrix(&mut rng, 4, 4);
            let mut bn = BatchNormState::new(4);
            bn.gamma = random_matrix(&mut rng, 1, 4);
            bn.beta = random_matrix(&mut rng, 1, 4);
            bn.running_mean = vec![0.1, -0.2, 0.3, 0.0];
            bn.running_var = vec![1.0, 0.5, 2.0, 1.5];

            // Σ_j Ã_ij / sqrt(D̃_ii D̃_jj) h_j W from the edge list
            let n = 10;
            let mut a = vec![vec![0.0; n]; n];
            for i in 0..n {
                a[i][i] = 1.0;
            }
            for &(u, v) in g.edges() {
                a[u][v] = 1.0;
                a[v][u] = 1.0;
            }
            let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
            let mut expected = Matrix::zeros(n, 4);
            for i in 0..n {
                for j in 0..n {
                    if a[i][j] == 0.0 {
                        continue;
                    }
                    let coef = a[i][j] / (deg[i] * deg[j]).sqrt();
                    for c in 0..4 {
                        let hw: f64 = (0..4).map(|k| h.get(j, k) * w.get(k, c)).sum();
                        expected.set(i, c, expected.get(i, c) + coef * hw);
                    }
                }
            }
            for i in 0..n {
                for c in 0..4 {
                    let v = (expected.get(i, c) - bn.running_mean[c])
                        / (bn.running_var[c] + bn.eps).sqrt()
                        * bn.gamma.get(0, c)
                        + bn.beta.get(0, c);
                    expected.set(i, c, v.max(0.0));
                }
            }

            let adj = Arc::new(normalize_adjacency(&g));
            let mut tape = Tape::new();
            let ht = tape.constant(h);
            let wt = tape.param(w);
            let gt = tape.param(bn.gamma.clone());
            let bt = tape.param(bn.beta.clone());
            let (z, _) = gcn_block(&mut tape, ht, &adj, wt, gt, bt, &bn, Mode::Eval).unwrap();
            assert!(tape.value(z).max_abs_diff(&expected) < 1e-10);
        }
    }

    fn bind_filter(tape: &mut Tape, f: &FilterStage) -> FilterTensors {
        FilterTensors {
            w_z: tape.param(f.w_z.clone()),
            w_c: tape.param(f.w_c.clone()),
            w_1: tape.param(f.w_1.clone()),
            b_1: tape.param(f.b_1.clone()),
            w_2: tape.param(f.w_2.clone()),
            b_2: tape.param(f.b_2.clone()),
        }
    }

    fn zero_filter(d: usize, dp: usize, dh: usize) -> FilterStage {
        FilterStage {
            w_z: Matrix::zeros(d, dp),
            w_c: Matrix::zeros(d, dp),
            w_1: Matrix::zeros(2 * dp, dh),
            b_1: Matrix::zeros(1, dh),
            w_2: Matrix::zeros(dh, 1),
            b_2: Matrix::zeros(1, 1),
        }
    }

    #[test]
    fn zero_filter_network_gives_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let mut tape = Tape::new();
        let z = tape.constant(random_matrix(&mut rng, 5, 4));
        let c = tape.constant(random_matrix(&mut rng, 5, 4));
        let f = bind_filter(&mut tape, &zero_filter(4, 4, 2));
        let gamma = filter_weights(&mut tape, z, c, &f, 0.2).unwrap();
        assert_eq!(tape.value(gamma).data(), &[0.5; 5]);
    }

    #[test]
    fn large_output_bias_saturates_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let mut stage = zero_filter(4, 4, 2);
        stage.b_2 = Matrix::filled(1, 1, 20.0);
        let mut tape = Tape::new();
        let z = tape.constant(random_matrix(&mut rng, 5, 4));
        let c = tape.constant(random_matrix(&mut rng, 5, 4));
        let f = bind_filter(&mut tape, &stage);
        let gamma = filter_weights(&mut tape, z, c, &f, 0.2).unwrap();
        assert!(tape.value(gamma).data().iter().all(|&g| g > 1.0 - 1e-8 && g < 1.0));
    }

    #[test]
    fn filter_weights_are_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let cfg = small_cfg(Variant::Nosaf, 1);
        let params = init_params(&cfg, 3, 2, 4).unwrap();
        let (zm, cm) = (random_matrix(&mut rng, 7, 6), random_matrix(&mut rng, 7, 6));
        let perm = [3, 0, 6, 1, 5, 2, 4];
        let run = |z: &Matrix, c: &Matrix| {
            let mut tape = Tape::new();
            let (zt, ct) = (tape.constant(z.clone()), tape.constant(c.clone()));
            let f = bind_filter(&mut tape, &params.filters[0]);
            let g = filter_weights(&mut tape, zt, ct, &f, 0.2).unwrap();
            tape.value(g).data().to_vec()
        };
        let base = run(&zm, &cm);
        let gp = run(&zm.select_rows(&perm), &cm.select_rows(&perm));
        for (i, &p) in perm.iter().enumerate() {
            assert_eq!(gp[i], base[p]);
        }
    }

    #[test]
    fn apply_filter_boundaries() {
        let mut tape = Tape::new();
        let zm = Matrix::from_rows(&[&[2.0, -4.0], &[6.0, 8.0]]);
        let z = tape.constant(zm.clone());
        let ones = tape.constant(Matrix::filled(2, 1, 1.0));
        let zeros = tape.constant(Matrix::zeros(2, 1));
        let mixed = tape.constant(Matrix::column(&[1.0, 0.5]));
        let a = apply_filter(&mut tape, z, ones).unwrap();
        let b = apply_filter(&mut tape, z, zeros).unwrap();
        let c = apply_filter(&mut tape, z, mixed).unwrap();
        assert_eq!(tape.value(a), &zm);
        assert_eq!(tape.value(b), &Matrix::zeros(2, 2));
        assert_eq!(tape.value(c), &Matrix::from_rows(&[&[2.0, -4.0], &[3.0, 4.0]]));
        let wrong = tape.constant(Matrix::zeros(3, 1));
        assert!(apply_filter(&mut tape, z, wrong).is_err());
    }

    #[test]
    fn codebank_accumulates_additively() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let mut tape = Tape::new();
        let mut cb = Codebank::zeros(&mut tape, 4, 3);
        let parts: Vec<Matrix> = (0..3).map(|_| random_matrix(&mut rng, 4, 3)).collect();
        let first = tape.constant(parts[0].clone());
        cb = cb.update(&mut tape, first).unwrap();
        assert_eq!(tape.value(cb.c), &parts[0]);
        for p in &parts[1..] {
            let t = tape.constant(p.clone());
            cb = cb.update(&mut tape, t).unwrap();
        }
        let mut sum = Matrix::zeros(4, 3);
        for p in &parts {
            sum.add_assign(p);
        }
        assert!(tape.value(cb.c).max_abs_diff(&sum) < 1e-12);
    }

    #[test]
    fn compensation_boundaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let (zm, cm) = (random_matrix(&mut rng, 3, 2), random_matrix(&mut rng, 3, 2));
        let mut tape = Tape::new();
        let z = tape.constant(zm.clone());
        let cb = Codebank {
            c: tape.constant(cm.clone()),
        };
        let ones = tape.constant(Matrix::filled(3, 1, 1.0));
        let zeros = tape.constant(Matrix::zeros(3, 1));
        let h1 = compensate(&mut tape, cb, z, ones).unwrap();
        let h0 = compensate(&mut tape, cb, z, zeros).unwrap();
        assert_eq!(tape.value(h1), &zm);
        assert_eq!(tape.value(h0), &cm);

        let same = Codebank { c: z };
        let gamma = tape.constant(Matrix::column(&[0.1, 0.7, 0.33]));
        let h = compensate(&mut tape, same, z, gamma).unwrap();
        assert!(tape.value(h).max_abs_diff(&zm) < 1e-15);
    }

    #[test]
    fn zero_layer_nosaf_is_single_filter_stage() {
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let g = random_graph(&mut rng, 8, 2, 3);
        let inputs = GraphInputs::new(&g);
        let cfg = small_cfg(Variant::Nosaf, 0);
        let params = init_params(&cfg, 3, 2, 1).unwrap();
        let trace = predict(&inputs, &cfg, &params).unwrap();
        assert_eq!(trace.stages.len(), 1);

        // ζ_out(ζ_in(X) ∘ B(γ⁰)) by hand
        let h0 = g.features().matmul(&params.zeta_in[0].weight).unwrap();
        let h0 = add_bias(&h0, &params.zeta_in[0].bias);
        let gamma = trace.stages[0].gamma.as_ref().unwrap();
        let mut filtered = h0.clone();
        for r in 0..8 {
            filtered.row_mut(r).iter_mut().for_each(|v| *v *= gamma[r]);
        }
        let logits = filtered.matmul(&params.zeta_out[0].weight).unwrap();
        let logits = add_bias(&logits, &params.zeta_out[0].bias);
        assert!(trace.logits.max_abs_diff(&logits) < 1e-12);
    }

    fn add_bias(m: &Matrix, b: &Matrix) -> Matrix {
        let mut out = m.clone();
        for r in 0..m.rows() {
            for (v, bb) in out.row_mut(r).iter_mut().zip(b.row(0)) {
                *v += bb;
            }
        }
        out
    }

    #[test]
    fn nosaf_without_node_weights_equals_jk_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        for trial in 0..10 {
            let g = random_graph(&mut rng, 10, 3, 4);
            let inputs = GraphInputs::new(&g);
            let nosaf = ModelConfig {
                disable_node_weights: true,
                ..small_cfg(Variant::Nosaf, 3)
            };
            let jk = small_cfg(Variant::JkSum, 3);
            let mut params = init_params(&jk, 4, 3, trial).unwrap();
            randomize_bn(&mut params, &mut rng);
            let a = eval_logits(&inputs, &nosaf, &params);
            let b = eval_logits(&inputs, &jk, &params);
            assert!(a.max_abs_diff(&b) < 1e-10);
        }
    }

    #[test]
    fn nosaf_d_without_cpm_equals_nosaf_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(58);
        let g = random_graph(&mut rng, 10, 3, 4);
        let inputs = GraphInputs::new(&g);
        let a_cfg = ModelConfig {
            disable_cpm: true,
            ..small_cfg(Variant::NosafD, 3)
        };
        let b_cfg = small_cfg(Variant::Nosaf, 3);
        let mut params = init_params(&b_cfg, 4, 3, 2).unwrap();
        randomize_bn(&mut params, &mut rng);
        assert_eq!(
            eval_logits(&inputs, &a_cfg, &params),
            eval_logits(&inputs, &b_cfg, &params)
        );
    }

    #[test]
    fn forced_unit_gamma_removes_compensation() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let g = random_graph(&mut rng, 10, 3, 4);
        let inputs = GraphInputs::new(&g);
        let d_cfg = ModelConfig {
            disable_node_weights: true,
            ..small_cfg(Variant::NosafD, 3)
        };
        let n_cfg = ModelConfig {
            disable_node_weights: true,
            ..small_cfg(Variant::Nosaf, 3)
        };
        let mut params = init_params(&n_cfg, 4, 3, 3).unwrap();
        randomize_bn(&mut params, &mut rng);
        assert_eq!(
            eval_logits(&inputs, &d_cfg, &params),
            eval_logits(&inputs, &n_cfg, &params)
        );
    }

    #[test]
    fn codebank_telescopes_and_gammas_are_open_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        for variant in [Variant::Nosaf, Variant::NosafD] {
            let g = random_graph(&mut rng, 12, 3, 4);
            let inputs = GraphInputs::new(&g);
            let cfg = small_cfg(variant, 4);
            let params = init_params(&cfg, 4, 3, 5).unwrap();
            let trace = predict(&inputs, &cfg, &params).unwrap();
            assert_eq!(trace.stages.len(), 5);
            let mut sum = Matrix::zeros(12, 6);
            for s in &trace.stages {
                let gamma = s.gamma.as_ref().unwrap();
                assert!(gamma.iter().all(|&v| v > 0.0 && v < 1.0));
                for r in 0..12 {
                    for (acc, z) in sum.row_mut(r).iter_mut().zip(s.z.row(r)) {
                        *acc += z * gamma[r];
                    }
                }
            }
            let last = trace.stages.last().unwrap().codebank.as_ref().unwrap();
            assert!(last.max_abs_diff(&sum) < 1e-10);
        }
    }

    #[test]
    fn node_permutation_permutes_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let g = random_graph(&mut rng, 9, 3, 4);
        let mut perm: Vec<usize> = (0..9).collect();
        perm.reverse();
        perm.swap(0, 4);
        let gp = g.permuted(&perm).unwrap();
        for variant in Variant::ALL {
            let cfg = small_cfg(variant, 2);
            let mut params = init_params(&cfg, 4, 3, 6).unwrap();
            randomize_bn(&mut params, &mut rng);
            let a = eval_logits(&GraphInputs::new(&g), &cfg, &params);
            let b = eval_logits(&GraphInputs::new(&gp), &cfg, &params);
            for (old, &new) in perm.iter().enumerate() {
                for (x, y) in a.row(old).iter().zip(b.row(new)) {
                    assert!((x - y).abs() < 1e-10, "{variant}");
                }
            }
        }
    }

    #[test]
    fn residual_and_oracle_follow_their_recurrences() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let g = random_graph(&mut rng, 10, 2, 3);
        let inputs = GraphInputs::new(&g);
        let cfg = small_cfg(Variant::OracleH, 2);
        let params = init_params(&cfg, 3, 2, 0).unwrap();
        let trace = predict(&inputs, &cfg, &params).unwrap();

        // dense diag(h) Â built from the edge list and per-node label counts
        let adj = g.adjacency_lists();
        let weight: Vec<f64> = (0..10)
            .map(|i| {
                let same = adj[i].iter().filter(|&&j| g.labels()[j] == g.labels()[i]).count();
                if adj[i].is_empty() {
                    1.0
                } else {
                    same as f64 / adj[i].len() as f64
                }
            })
            .collect();
        let mut a = Matrix::zeros(10, 10);
        for i in 0..10 {
            let di = adj[i].len() as f64 + 1.0;
            a.set(i, i, weight[i] / di);
            for &j in &adj[i] {
                let dj = adj[j].len() as f64 + 1.0;
                a.set(i, j, weight[i] / (di * dj).sqrt());
            }
        }
        let scale = 1.0 / (1.0 + params.gcn[0].bn.eps).sqrt();
        for l in 1..trace.stages.len() {
            let prev = &trace.stages[l - 1].output;
            let pre = a.matmul(prev).unwrap().matmul(&params.gcn[l - 1].weight).unwrap();
            let z = pre.map(|v| (v * scale).max(0.0));
            let s = &trace.stages[l];
            assert!(s.z.max_abs_diff(&z) < 1e-12);
            let expected = z.zip_map(prev, |x, y| x + y);
            assert!(s.output.max_abs_diff(&expected) < 1e-12);
        }

        let res = small_cfg(Variant::ResGcn, 2);
        let trace = predict(&inputs, &res, &params).unwrap();
        let s = &trace.stages[2];
        let expected = s.z.zip_map(&trace.stages[1].output, |a, b| a + b);
        assert!(s.output.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn mismatched_params_are_rejected() {
        let g = generate_sbm(&SbmSpec {
            n: 20,
            avg_degree: 3.0,
            feature_dim: 4,
            ..SbmSpec::default()
        })
        .unwrap();
        let inputs = GraphInputs::new(&g);
        let params = init_params(&small_cfg(Variant::PlainGcn, 2), 4, 3, 0).unwrap();
        assert!(predict(&inputs, &small_cfg(Variant::PlainGcn, 3), &params).is_err());
        assert!(predict(&inputs, &small_cfg(Variant::Nosaf, 2), &params).is_err());
        let wrong_dim = init_params(&small_cfg(Variant::PlainGcn, 2), 5, 3, 0).unwrap();
        assert!(predict(&inputs, &small_cfg(Variant::PlainGcn, 2), &wrong_dim).is_err());
    }

    #[test]
    fn train_mode_reports_one_batch_stat_per_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let g = random_graph(&mut rng, 10, 2, 3);
        let inputs = GraphInputs::new(&g);
        let cfg = ModelConfig {
            dropout: 0.5,
            ..small_cfg(Variant::NosafD, 3)
        };
        let params = init_params(&cfg, 3, 2, 0).unwrap();
        let mut tape = Tape::new();
        let out = forward(&mut tape, &inputs, &cfg, &params, Mode::Train, Some(&mut rng)).unwrap();
        assert_eq!(out.bn_stats.len(), 3);
        assert!(out.trace.logits.is_finite());
        assert_eq!(out.params.ordered().len(), params.learnable().len());
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let g = random_graph(&mut rng, 12, 3, 4);
        let inputs = GraphInputs::new(&g);
        let cfg = small_cfg(Variant::NosafD, 3);
        let mut params = init_params(&cfg, 4, 3, 7).unwrap();
        randomize_bn(&mut params, &mut rng);
        let mask: Vec<usize> = (0..12).step_by(2).collect();

        let loss_of = |p: &ModelParams| {
            let mut tape = Tape::new();
            let out = forward::<ChaCha8Rng>(&mut tape, &inputs, &cfg, p, Mode::Eval, None).unwrap();
            let loss = tape
                .masked_softmax_cross_entropy(out.logits, g.labels(), &mask)
                .unwrap();
            tape.value(loss).get(0, 0)
        };
        let mut tape = Tape::new();
        let out = forward::<ChaCha8Rng>(&mut tape, &inputs, &cfg, &params, Mode::Eval, None).unwrap();
        let loss = tape
            .masked_softmax_cross_entropy(out.logits, g.labels(), &mask)
            .unwrap();
        let grads = tape.backward(loss).unwrap();
        let analytic: Vec<Matrix> = out.params.ordered().iter().map(|&t| grads.get_or_zeros(t)).collect();

        let h = 1e-6;
        let mut worst: f64 = 0.0;
        let count = params.learnable().len();
        for idx in 0..count {
            let len = params.learnable()[idx].1.data().len();
            for k in 0..len {
                let mut plus = params.clone();
                plus.learnable_mut()[idx].data_mut()[k] += h;
                let mut minus = params.clone();
                minus.learnable_mut()[idx].data_mut()[k] -= h;
                let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let a = analytic[idx].data()[k];
                let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-4);
                worst = worst.max(err);
            }
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }
}
