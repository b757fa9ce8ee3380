//! Gradient-check cases shared by the gradcheck tests and the acceptance suite.

use nidt_core::autoencoder::{self, Activation, AutoencoderParams};
use nidt_core::baselines::{self, MlpParams};
use nidt_core::seqmodel::{loss_and_grad, ActionMode, ContextStep, ModelConfig, SequenceModelParams};
use nidt_core::tensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{grad_check, randomize, random_vec, GradReport};

pub const GRAD_TOL: f64 = 1e-4;

pub fn toy_config(mode: ActionMode, n_layers: usize) -> ModelConfig {
    ModelConfig {
        k: 2,
        d_time: 4,
        d_value: 4,
        d_type: 4,
        n_layers,
        n_heads: 2,
        d_ff: 8,
        obs_dim: 3,
        action_mode: mode,
        ..ModelConfig::default()
    }
}

pub fn sequence_model(mode: ActionMode, n_layers: usize, seed: u64) -> GradReport {
    let cfg = toy_config(mode, n_layers);
    let mut params = SequenceModelParams::zeros(&cfg);
    randomize(&mut params, 0.6, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let obs: Vec<Vec<f64>> = (0..2).map(|_| random_vec(&mut rng, 3, 0.0, 1.0)).collect();
    let steps: Vec<ContextStep> = (0..2)
        .map(|i| {
            ContextStep::complete(
                i as f64 * rng.random_range(0.1..3.0),
                rng.random_range(-1.0..1.0),
                &obs[i],
                rng.random_range(0..3),
                rng.random_range(0.0..2.0),
            )
        })
        .collect();
    let (_, grads) = loss_and_grad(&params, &cfg, &steps, 0.3).unwrap();
    grad_check(&params, &grads, |p| loss_and_grad(p, &cfg, &steps, 0.3).unwrap().0)
}

pub fn autoencoder(act: Activation) -> GradReport {
    let mut p = AutoencoderParams::zeros(6, 5, 3, act);
    randomize(&mut p, 0.8, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = Matrix::from_vec(4, 6, random_vec(&mut rng, 24, 0.0, 1.0));
    let (_, g) = autoencoder::loss_and_grad(&p, &x);
    grad_check(&p, &g, |q| autoencoder::loss_and_grad(q, &x).0)
}

/// `dims = [input, hidden.., classes]`; `[.., 3]` is a BC head, `[.., 2]` a DNN head.
pub fn mlp(dims: &[usize], seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = MlpParams::zeros(dims);
    randomize(&mut p, 0.7, seed + 1);
    let n = 5;
    let x = Matrix::from_vec(n, dims[0], random_vec(&mut rng, n * dims[0], -1.0, 1.0));
    let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..*dims.last().unwrap())).collect();
    let (_, g) = baselines::loss_and_grad(&p, &x, &y);
    grad_check(&p, &g, |q| baselines::loss_and_grad(q, &x, &y).0)
}

/// Every case, labeled.
pub fn all_cases() -> Vec<(String, GradReport)> {
    let mut out = Vec::new();
    for seed in 0..3 {
        out.push((format!("dt discrete seed {seed}"), sequence_model(ActionMode::Discrete, 1, seed)));
    }
    out.push(("dt discrete 2 layers".into(), sequence_model(ActionMode::Discrete, 2, 9)));
    out.push(("dt continuous".into(), sequence_model(ActionMode::Continuous, 1, 4)));
    for act in [Activation::Sigmoid, Activation::Relu] {
        out.push((format!("autoencoder {act:?}"), autoencoder(act)));
    }
    out.push(("bc mlp".into(), mlp(&[5, 7, 6, 3], 31)));
    out.push(("dnn mlp".into(), mlp(&[4, 9, 8, 6, 2], 33)));
    out
}
