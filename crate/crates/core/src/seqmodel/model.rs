use super::embed::{embed, embed_backward};
use super::layer::{layer_backward, layer_forward, LayerCache};
use super::{tokenize, ActionMode, ModelConfig, SeqModelError, SequenceModelParams, TokenSeq};
use crate::optim::ParamSet;
use crate::tensor::{argmax, dot, log_softmax, softmax, Matrix};

/// One step of model context. `action` is the decision index; in a
/// training window every step is complete, at inference the last step is
/// pending (`action` and `wait` unset).
#[derive(Clone, Debug, PartialEq)]
pub struct ContextStep<'a> {
    pub t: f64,
    pub rtg: f64,
    pub obs: &'a [f64],
    pub action: Option<usize>,
    pub wait: Option<f64>,
}

impl<'a> ContextStep<'a> {
    pub fn complete(t: f64, rtg: f64, obs: &'a [f64], action: usize, wait: f64) -> Self {
        Self {
            t,
            rtg,
            obs,
            action: Some(action),
            wait: Some(wait),
        }
    }

    pub fn pending(t: f64, rtg: f64, obs: &'a [f64]) -> Self {
        Self {
            t,
            rtg,
            obs,
            action: None,
            wait: None,
        }
    }
}

/// Per-step head outputs. In continuous mode each logit vector holds the
/// single predicted action value.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub logits: Vec<Vec<f64>>,
    /// Wait prediction (seconds, unclamped); `None` where the step has no DEC token yet.
    pub waits: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub decision: usize,
    /// `max(wait head, 0)`.
    pub wait: f64,
    pub logits: Vec<f64>,
}

struct Trace {
    caches: Vec<LayerCache>,
    out: Matrix,
}

fn run(params: &SequenceModelParams, cfg: &ModelConfig, seq: &TokenSeq) -> Trace {
    let mut x = embed(params, cfg, seq);
    let mut caches = Vec::with_capacity(params.layers.len());
    for lp in &params.layers {
        let (y, c) = layer_forward(&x, lp, cfg.n_heads);
        caches.push(c);
        x = y;
    }
    Trace { caches, out: x }
}

fn head(row: &[f64], w: &Matrix, b: &Matrix) -> Vec<f64> {
    (0..w.cols())
        .map(|c| b.data()[c] + (0..w.rows()).map(|r| row[r] * w.get(r, c)).sum::<f64>())
        .collect()
}

fn read_heads(params: &SequenceModelParams, seq: &TokenSeq, out: &Matrix) -> ForwardOutput {
    ForwardOutput {
        logits: seq
            .obs_pos
            .iter()
            .map(|&p| head(out.row(p), &params.head_dec_w, &params.head_dec_b))
            .collect(),
        waits: seq
            .dec_pos
            .iter()
            .map(|p| p.map(|p| head(out.row(p), &params.head_wait_w, &params.head_wait_b)[0]))
            .collect(),
    }
}

pub fn forward_tokens(params: &SequenceModelParams, cfg: &ModelConfig, seq: &TokenSeq) -> ForwardOutput {
    let trace = run(params, cfg, seq);
    read_heads(params, seq, &trace.out)
}

pub fn forward(
    params: &SequenceModelParams,
    cfg: &ModelConfig,
    steps: &[ContextStep<'_>],
) -> Result<ForwardOutput, SeqModelError> {
    let seq = tokenize(cfg, steps)?;
    Ok(forward_tokens(params, cfg, &seq))
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), SeqModelError> {
    if expected != got {
        return Err(SeqModelError::DimensionMismatch { what, expected, got });
    }
    Ok(())
}

fn mean_squared(pred: &[f64], target: &[f64]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64
}

/// Mean cross-entropy of the true decisions plus `λ_wait ×` mean squared wait error.
pub fn loss_discrete(
    logits: &[Vec<f64>],
    decisions: &[usize],
    wait_preds: &[f64],
    waits: &[f64],
    lambda_wait: f64,
) -> Result<f64, SeqModelError> {
    check_len("decisions", logits.len(), decisions.len())?;
    check_len("wait predictions", waits.len(), wait_preds.len())?;
    if logits.is_empty() {
        return Err(SeqModelError::EmptyWindow);
    }
    let mut ce = 0.0;
    for (l, &d) in logits.iter().zip(decisions) {
        check_len("decision index", l.len(), d.max(l.len() - 1) + 1)?;
        ce -= log_softmax(l)[d];
    }
    Ok(ce / logits.len() as f64 + lambda_wait * mean_squared(wait_preds, waits))
}

/// Mean squared action error.
pub fn loss_continuous(action_preds: &[f64], true_actions: &[f64]) -> Result<f64, SeqModelError> {
    check_len("actions", action_preds.len(), true_actions.len())?;
    Ok(mean_squared(action_preds, true_actions))
}

/// Training loss of one complete window and its gradient.
pub fn loss_and_grad(
    params: &SequenceModelParams,
    cfg: &ModelConfig,
    steps: &[ContextStep<'_>],
    lambda_wait: f64,
) -> Result<(f64, SequenceModelParams), SeqModelError> {
    let mut grads = params.zeros_like();
    let loss = accumulate_grad(params, cfg, steps, lambda_wait, 1.0, &mut grads)?;
    Ok((loss, grads))
}

/// Adds `scale × ∇loss` into `grads` and returns the (unscaled) loss.
pub(super) fn accumulate_grad(
    params: &SequenceModelParams,
    cfg: &ModelConfig,
    steps: &[ContextStep<'_>],
    lambda_wait: f64,
    scale: f64,
    grads: &mut SequenceModelParams,
) -> Result<f64, SeqModelError> {
    let seq = tokenize(cfg, steps)?;
    let (actions, waits): (Vec<usize>, Vec<f64>) = steps
        .iter()
        .enumerate()
        .map(|(i, s)| match (s.action, s.wait) {
            (Some(a), Some(w)) => Ok((a, w)),
            _ => Err(SeqModelError::IncompleteStep(i)),
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .unzip();
    let trace = run(params, cfg, &seq);
    let heads = read_heads(params, &seq, &trace.out);
    let wait_preds: Vec<f64> = heads.waits.iter().map(|w| w.unwrap_or(0.0)).collect();
    let n = steps.len() as f64;

    let (loss, dlogits): (f64, Vec<Vec<f64>>) = match cfg.action_mode {
        ActionMode::Discrete => {
            let loss = loss_discrete(&heads.logits, &actions, &wait_preds, &waits, lambda_wait)?;
            let d = heads
                .logits
                .iter()
                .zip(&actions)
                .map(|(l, &a)| {
                    let mut p = softmax(l);
                    p[a] -= 1.0;
                    p.iter().map(|v| v * scale / n).collect()
                })
                .collect();
            (loss, d)
        }
        ActionMode::Continuous => {
            let preds: Vec<f64> = heads.logits.iter().map(|l| l[0]).collect();
            let targets: Vec<f64> = actions.iter().map(|&a| a as f64).collect();
            let loss = loss_continuous(&preds, &targets)? + lambda_wait * mean_squared(&wait_preds, &waits);
            let d = preds
                .iter()
                .zip(&targets)
                .map(|(p, t)| vec![2.0 * (p - t) * scale / n])
                .collect();
            (loss, d)
        }
    };

    let mut dout = Matrix::zeros(trace.out.rows(), trace.out.cols());
    for (&pos, dl) in seq.obs_pos.iter().zip(&dlogits) {
        head_backward(trace.out.row(pos), dl, &params.head_dec_w, &mut grads.head_dec_w, &mut grads.head_dec_b, dout.row_mut(pos));
    }
    for ((pos, wp), w) in seq.dec_pos.iter().zip(&wait_preds).zip(&waits) {
        let pos = pos.expect("complete window");
        let dw = [lambda_wait * 2.0 * (wp - w) * scale / n];
        head_backward(trace.out.row(pos), &dw, &params.head_wait_w, &mut grads.head_wait_w, &mut grads.head_wait_b, dout.row_mut(pos));
    }
    let mut dx = dout;
    for ((lp, cache), g) in params.layers.iter().zip(&trace.caches).zip(grads.layers.iter_mut()).rev() {
        dx = layer_backward(cache, lp, &dx, g, cfg.n_heads);
    }
    embed_backward(cfg, &seq, &dx, grads);
    Ok(loss)
}

fn head_backward(x: &[f64], dy: &[f64], w: &Matrix, gw: &mut Matrix, gb: &mut Matrix, dx: &mut [f64]) {
    for (r, &xv) in x.iter().enumerate() {
        for (g, d) in gw.row_mut(r).iter_mut().zip(dy) {
            *g += xv * d;
        }
        dx[r] += dot(w.row(r), dy);
    }
    for (g, d) in gb.data_mut().iter_mut().zip(dy) {
        *g += d;
    }
}

/// Decision for the pending last step, then the wait prediction given it.
///
/// Ties in the logits go to the lowest index; with `mask_wait` the wait
/// decision (the last index) is excluded. In continuous mode the predicted
/// value is rounded to the nearest allowed decision code.
pub fn predict_action(
    params: &SequenceModelParams,
    cfg: &ModelConfig,
    context: &[ContextStep<'_>],
    mask_wait: bool,
) -> Result<Prediction, SeqModelError> {
    let last = context.last().ok_or(SeqModelError::EmptyWindow)?;
    if last.action.is_some() {
        return Err(SeqModelError::InvalidConfig("context must end with a pending step".into()));
    }
    let out = forward(params, cfg, context)?;
    let logits = out.logits.last().cloned().unwrap_or_default();
    let wait_index = cfg.n_decisions - 1;
    let decision = match cfg.action_mode {
        ActionMode::Discrete => {
            let mut l = logits.clone();
            if mask_wait {
                l[wait_index] = f64::NEG_INFINITY;
            }
            argmax(&l)
        }
        ActionMode::Continuous => {
            let hi = if mask_wait { wait_index - 1 } else { wait_index };
            let v = logits[0].round();
            if v.is_nan() {
                0
            } else {
                v.clamp(0.0, hi as f64) as usize
            }
        }
    };
    let mut with_dec = context.to_vec();
    with_dec.last_mut().expect("non-empty").action = Some(decision);
    let out = forward(params, cfg, &with_dec)?;
    let wait = out.waits.last().copied().flatten().unwrap_or(0.0).max(0.0);
    Ok(Prediction {
        decision,
        wait,
        logits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;

    fn cfg() -> ModelConfig {
        ModelConfig {
            k: 4,
            d_time: 4,
            d_value: 4,
            d_type: 4,
            n_layers: 1,
            n_heads: 2,
            d_ff: 6,
            obs_dim: 2,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn zero_heads_give_uniform_logits() {
        let c = cfg();
        let mut p = SequenceModelParams::init(&c, 3).unwrap();
        p.head_dec_w = Matrix::zeros(12, 3);
        let obs = [0.3, 0.1];
        let steps = vec![ContextStep::complete(0.0, 1.0, &obs, 2, 0.5); 3];
        let out = forward(&p, &c, &steps).unwrap();
        assert_eq!(out.logits.len(), 3);
        assert_eq!(out.waits.len(), 3);
        for l in &out.logits {
            assert_eq!(l, &vec![0.0; 3]);
            assert!(softmax(l).iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
        }
        let loss = loss_discrete(&out.logits, &[0, 1, 2], &[0.0; 3], &[0.0; 3], 0.0).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_examples() {
        let sure = vec![vec![0.0, 800.0, 0.0]];
        assert_eq!(loss_discrete(&sure, &[1], &[1.5], &[1.5], 0.3).unwrap(), 0.0);
        let l = loss_discrete(&[vec![0.0; 3]], &[0], &[2.0], &[0.0], 0.5).unwrap();
        assert!((l - (3f64.ln() + 2.0)).abs() < 1e-12);
        assert!(loss_discrete(&sure, &[1, 0], &[], &[], 0.0).is_err());
        assert_eq!(loss_continuous(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(loss_continuous(&[2.0, 3.0], &[1.0, 2.0]).unwrap(), 1.0);
    }

    #[test]
    fn argmax_rules() {
        let c = cfg();
        let mut p = SequenceModelParams::init(&c, 1).unwrap();
        p.head_dec_w = Matrix::zeros(12, 3);
        let obs = [0.0, 0.0];
        let ctx = [ContextStep::pending(0.0, 1.0, &obs)];
        for (bias, mask, want) in [
            ([2.0, 1.0, 3.0], false, 2),
            ([2.0, 1.0, 3.0], true, 0),
            ([1.0, 1.0, 0.0], false, 0),
        ] {
            p.head_dec_b = Matrix::row_vector(bias.to_vec());
            let pred = predict_action(&p, &c, &ctx, mask).unwrap();
            assert_eq!(pred.decision, want);
            assert!(pred.wait >= 0.0);
        }
    }

    #[test]
    fn wait_prediction_is_clamped() {
        let c = cfg();
        let mut p = SequenceModelParams::init(&c, 1).unwrap();
        p.head_wait_w = Matrix::zeros(12, 1);
        p.head_wait_b = Matrix::row_vector(vec![-4.0]);
        let obs = [0.0, 0.0];
        let pred = predict_action(&p, &c, &[ContextStep::pending(0.0, 1.0, &obs)], false).unwrap();
        assert_eq!(pred.wait, 0.0);
        p.head_wait_b = Matrix::row_vector(vec![2.5]);
        let pred = predict_action(&p, &c, &[ContextStep::pending(0.0, 1.0, &obs)], false).unwrap();
        assert_eq!(pred.wait, 2.5);
    }

    #[test]
    fn continuous_mode_rounds_and_masks() {
        let c = ModelConfig {
            action_mode: ActionMode::Continuous,
            ..cfg()
        };
        let mut p = SequenceModelParams::init(&c, 1).unwrap();
        p.head_dec_w = Matrix::zeros(12, 1);
        p.head_dec_b = Matrix::row_vector(vec![1.7]);
        let obs = [0.0, 0.0];
        let ctx = [ContextStep::pending(0.0, 1.0, &obs)];
        assert_eq!(predict_action(&p, &c, &ctx, false).unwrap().decision, 2);
        assert_eq!(predict_action(&p, &c, &ctx, true).unwrap().decision, 1);
        let steps = [ContextStep::complete(0.0, 1.0, &obs, 2, 0.0)];
        let (loss, _) = loss_and_grad(&p, &c, &steps, 0.0).unwrap();
        let wait = forward(&p, &c, &steps).unwrap().waits[0].unwrap();
        assert!((loss - 0.09).abs() < 1e-12, "{loss} {wait}");
    }
}
