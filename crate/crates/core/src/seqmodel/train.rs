use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::accumulate_grad;
use super::{ContextStep, ModelConfig, SeqModelError, SequenceModelParams};
use crate::optim::{Optimizer, OptimizerKind, ParamSet};
use crate::trajectory::{sample_window, Trajectory, Window};

/// Gradients of a batch are summed over this many fixed chunks, so the
/// floating-point reduction order never depends on the thread count.
const GRAD_CHUNKS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub grad_clip: Option<f64>,
    pub lambda_wait: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 64,
            steps: 2000,
            grad_clip: Some(1.0),
            lambda_wait: 0.1,
            optimizer: OptimizerKind::Adam,
            seed: 11,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub params: SequenceModelParams,
    /// Mean batch loss at every optimizer step.
    pub losses: Vec<f64>,
}

impl TrainedModel {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

/// Model context for a sampled training window.
pub fn window_context<'a>(w: &Window<'a>) -> Vec<ContextStep<'a>> {
    w.steps()
        .iter()
        .map(|s| ContextStep::complete(s.t, s.rtg, &s.obs, s.d.index(), s.w))
        .collect()
}

/// Minimizes the mean window loss over `steps` batches of sampled windows.
pub fn train(
    mut params: SequenceModelParams,
    cfg: &ModelConfig,
    trajectories: &[Trajectory],
    weights: Option<&[f64]>,
    tc: &TrainConfig,
) -> Result<TrainedModel, SeqModelError> {
    cfg.validate()?;
    if trajectories.iter().all(|t| t.is_empty()) {
        return Err(SeqModelError::EmptyDataset);
    }
    if tc.batch_size == 0 {
        return Err(SeqModelError::InvalidConfig("batch_size must be positive".into()));
    }
    if let Some(s) = trajectories.iter().flat_map(|t| &t.steps).find(|s| s.obs.len() != cfg.obs_dim) {
        return Err(SeqModelError::DimensionMismatch {
            what: "observation",
            expected: cfg.obs_dim,
            got: s.obs.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut opt = Optimizer::new(tc.optimizer, tc.learning_rate, tc.grad_clip);
    let mut losses = Vec::with_capacity(tc.steps);
    let scale = 1.0 / tc.batch_size as f64;
    let chunk = tc.batch_size.div_ceil(GRAD_CHUNKS);
    for step in 0..tc.steps {
        let batch: Vec<Window<'_>> = (0..tc.batch_size)
            .map(|_| sample_window(trajectories, cfg.k, weights, &mut rng).ok_or(SeqModelError::EmptyDataset))
            .collect::<Result<_, _>>()?;
        let parts: Vec<(f64, SequenceModelParams)> = batch
            .par_chunks(chunk)
            .map(|ws| {
                let mut g = params.zeros_like();
                let mut loss = 0.0;
                for w in ws {
                    loss += accumulate_grad(&params, cfg, &window_context(w), tc.lambda_wait, scale, &mut g)?;
                }
                Ok((loss, g))
            })
            .collect::<Result<_, SeqModelError>>()?;
        let mut parts = parts.into_iter();
        let (mut loss, mut grads) = parts.next().expect("non-empty batch");
        for (l, g) in parts {
            loss += l;
            grads.accumulate(&g);
        }
        let loss = loss * scale;
        if !loss.is_finite() {
            return Err(SeqModelError::NonFiniteLoss { step, loss });
        }
        losses.push(loss);
        opt.update(&mut params, &mut grads);
    }
    Ok(TrainedModel { params, losses })
}
