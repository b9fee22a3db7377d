//! Central finite differences against tape gradients for every parameter of a
//! small NoSAF-D model, with batch norm on running statistics.
//!
//! cargo run --release --example gradient_check

use nosaf::autodiff::{Matrix, Mode, Tape};
use nosaf::graph::{generate_sbm, SbmSpec};
use nosaf::model::{forward, init_params, GraphInputs, ModelConfig, ModelParams, Variant};
use rand_chacha::ChaCha8Rng;

fn main() -> nosaf::Result<()> {
    let g = generate_sbm(&SbmSpec {
        n: 12,
        k: 3,
        avg_degree: 3.0,
        feature_dim: 4,
        ..SbmSpec::default()
    })?;
    let inputs = GraphInputs::new(&g);
    let cfg = ModelConfig {
        hidden: 6,
        ..ModelConfig::new(Variant::NosafD, 3)
    };
    let mut params = init_params(&cfg, g.feature_dim(), g.num_classes(), 1)?;
    for (k, layer) in params.gcn.iter_mut().enumerate() {
        layer.bn.running_mean.iter_mut().for_each(|m| *m = 0.1 * k as f64);
        layer.bn.running_var.iter_mut().for_each(|v| *v = 1.5);
    }
    let mask: Vec<usize> = (0..g.num_nodes()).step_by(2).collect();

    let loss_of = |p: &ModelParams| -> nosaf::Result<f64> {
        let mut tape = Tape::new();
        let out = forward::<ChaCha8Rng>(&mut tape, &inputs, &cfg, p, Mode::Eval, None)?;
        let loss = tape.masked_softmax_cross_entropy(out.logits, g.labels(), &mask)?;
        Ok(tape.value(loss).get(0, 0))
    };

    let mut tape = Tape::new();
    let out = forward::<ChaCha8Rng>(&mut tape, &inputs, &cfg, &params, Mode::Eval, None)?;
    let loss = tape.masked_softmax_cross_entropy(out.logits, g.labels(), &mask)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Matrix> = out.params.ordered().iter().map(|&t| grads.get_or_zeros(t)).collect();
    let names: Vec<String> = params.learnable().into_iter().map(|(n, _)| n).collect();

    let h = 1e-6;
    let mut worst_overall: f64 = 0.0;
    for (idx, name) in names.iter().enumerate() {
        let len = analytic[idx].data().len();
        let mut worst: f64 = 0.0;
        for k in 0..len {
            let mut plus = params.clone();
            plus.learnable_mut()[idx].data_mut()[k] += h;
            let mut minus = params.clone();
            minus.learnable_mut()[idx].data_mut()[k] -= h;
            let numeric = (loss_of(&plus)? - loss_of(&minus)?) / (2.0 * h);
            let a = analytic[idx].data()[k];
            worst = worst.max((a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-4));
        }
        println!("{name:<24} {len:>4} entries  max rel err {worst:.2e}");
        worst_overall = worst_overall.max(worst);
    }
    println!("overall max relative error {worst_overall:.2e}");
    Ok(())
}
