//! Comparison models: return-conditioned behavior cloning (BC) and a
//! 4-layer per-packet classifier (DNN). Both are plain ReLU MLPs trained
//! with softmax cross-entropy.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capture::Label;
use crate::container::{Container, ContainerError, ModelKind};
use crate::optim::{Optimizer, OptimizerKind, ParamSet};
use crate::tensor::{argmax, linear, linear_backward, log_softmax, softmax, Matrix};
use crate::trajectory::{Decision, Trajectory};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("training data is empty")]
    EmptyDataset,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite loss {loss} at epoch {epoch}")]
    NonFiniteLoss { epoch: usize, loss: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("expected a {expected} model file, found {found}")]
    WrongRole { expected: &'static str, found: &'static str },
    #[error(transparent)]
    Container(#[from] ContainerError),
}

/// ReLU hidden layers, linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Matrix>,
}

impl ParamSet for MlpParams {
    fn tensors(&self) -> Vec<&Matrix> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b]).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    fn tensor_names(&self) -> Vec<String> {
        (0..self.weights.len())
            .flat_map(|i| [format!("w{i}"), format!("b{i}")])
            .collect()
    }
}

impl MlpParams {
    /// `dims = [input, hidden..., output]`.
    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            weights: dims.windows(2).map(|d| Matrix::zeros(d[0], d[1])).collect(),
            biases: dims.windows(2).map(|d| Matrix::zeros(1, d[1])).collect(),
        }
    }

    pub fn init(dims: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(dims);
        for w in &mut p.weights {
            *w = Matrix::glorot(w.rows(), w.cols(), &mut rng);
        }
        p
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.weights.iter().map(Matrix::rows).collect();
        d.extend(self.weights.last().map(Matrix::cols));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.weights.first().map_or(0, Matrix::rows)
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().map_or(0, Matrix::cols)
    }

    /// Logits for a batch of rows.
    pub fn forward(&self, x: &Matrix) -> Matrix {
        self.forward_trace(x).pop().expect("at least one layer")
    }

    /// Activations after every layer (ReLU applied to all but the last).
    fn forward_trace(&self, x: &Matrix) -> Vec<Matrix> {
        let mut acts = Vec::with_capacity(self.weights.len());
        let last = self.weights.len() - 1;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let input = acts.last().unwrap_or(x);
            let mut y = linear(input, w, Some(b));
            if i < last {
                for v in y.data_mut() {
                    *v = v.max(0.0);
                }
            }
            acts.push(y);
        }
        acts
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.forward(&Matrix::row_vector(x.to_vec())).into_vec()
    }
}

/// Mean softmax cross-entropy over the batch.
pub fn cross_entropy(logits: &Matrix, targets: &[usize]) -> f64 {
    let n = targets.len().max(1) as f64;
    targets
        .iter()
        .enumerate()
        .map(|(i, &t)| -log_softmax(logits.row(i))[t])
        .sum::<f64>()
        / n
}

pub fn loss_and_grad(params: &MlpParams, x: &Matrix, targets: &[usize]) -> (f64, MlpParams) {
    let acts = params.forward_trace(x);
    let logits = acts.last().expect("at least one layer");
    let loss = cross_entropy(logits, targets);
    let n = targets.len().max(1) as f64;
    let mut dy = Matrix::zeros(logits.rows(), logits.cols());
    for (i, &t) in targets.iter().enumerate() {
        let mut p = softmax(logits.row(i));
        p[t] -= 1.0;
        for (d, v) in dy.row_mut(i).iter_mut().zip(p) {
            *d = v / n;
        }
    }
    let mut grads = params.zeros_like();
    for l in (0..params.weights.len()).rev() {
        let input = if l == 0 { x } else { &acts[l - 1] };
        let mut dx = linear_backward(input, &params.weights[l], &dy, &mut grads.weights[l], Some(&mut grads.biases[l]));
        if l > 0 {
            for (d, a) in dx.data_mut().iter_mut().zip(acts[l - 1].data()) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        dy = dx;
    }
    (loss, grads)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpTrainConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl MlpTrainConfig {
    pub fn bc() -> Self {
        Self {
            hidden: vec![128, 128],
            ..Self::default()
        }
    }

    pub fn dnn() -> Self {
        Self {
            hidden: vec![256, 128, 64],
            ..Self::default()
        }
    }
}

impl Default for MlpTrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            learning_rate: 1e-3,
            epochs: 30,
            batch_size: 64,
            optimizer: OptimizerKind::Adam,
            seed: 13,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedMlp {
    pub params: MlpParams,
    /// Mean minibatch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Minibatch training of a classifier on `(features, class)` pairs.
pub fn train_mlp(
    params: MlpParams,
    inputs: &[Vec<f64>],
    targets: &[usize],
    cfg: &MlpTrainConfig,
) -> Result<TrainedMlp, BaselineError> {
    if inputs.is_empty() {
        return Err(BaselineError::EmptyDataset);
    }
    if inputs.len() != targets.len() {
        return Err(BaselineError::DimensionMismatch {
            expected: inputs.len(),
            got: targets.len(),
        });
    }
    if cfg.batch_size == 0 {
        return Err(BaselineError::InvalidConfig("batch_size must be positive".into()));
    }
    let width = params.input_dim();
    if let Some(bad) = inputs.iter().find(|r| r.len() != width) {
        return Err(BaselineError::DimensionMismatch {
            expected: width,
            got: bad.len(),
        });
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= params.output_dim()) {
        return Err(BaselineError::DimensionMismatch {
            expected: params.output_dim(),
            got: bad,
        });
    }
    let mut params = params;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, None);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            let mut x = Matrix::zeros(idx.len(), width);
            for (r, &i) in idx.iter().enumerate() {
                x.row_mut(r).copy_from_slice(&inputs[i]);
            }
            let y: Vec<usize> = idx.iter().map(|&i| targets[i]).collect();
            let (loss, mut grads) = loss_and_grad(&params, &x, &y);
            if !loss.is_finite() {
                return Err(BaselineError::NonFiniteLoss { epoch, loss });
            }
            total += loss;
            batches += 1;
            opt.update(&mut params, &mut grads);
        }
        epoch_losses.push(total / batches as f64);
    }
    Ok(TrainedMlp { params, epoch_losses })
}

/// Argmax with lowest-index ties; `mask_wait` removes the wait class.
pub fn masked_argmax(logits: &[f64], mask_wait: bool) -> usize {
    let mut l = logits.to_vec();
    if mask_wait && l.len() > Decision::Wait.index() {
        l[Decision::Wait.index()] = f64::NEG_INFINITY;
    }
    argmax(&l)
}

const ROLE_BC: u32 = 1;
const ROLE_DNN: u32 = 2;

fn role_name(code: u32) -> &'static str {
    match code {
        ROLE_BC => "BC",
        ROLE_DNN => "DNN",
        _ => "unknown",
    }
}

fn mlp_container(params: &MlpParams, role: u32, extra: Option<f64>) -> Container {
    let mut meta = vec![role];
    meta.extend(params.dims().iter().map(|&d| d as u32));
    let mut tensors: Vec<Matrix> = params.tensors().into_iter().cloned().collect();
    if let Some(v) = extra {
        tensors.push(Matrix::row_vector(vec![v]));
    }
    Container {
        kind: ModelKind::Mlp,
        meta,
        tensors,
    }
}

fn mlp_from_container(c: Container, role: u32) -> Result<(MlpParams, Option<f64>), BaselineError> {
    let c = c.expect_kind(ModelKind::Mlp)?;
    let found = c.meta.first().copied().unwrap_or(0);
    if found != role {
        return Err(BaselineError::WrongRole {
            expected: role_name(role),
            found: role_name(found),
        });
    }
    let dims: Vec<usize> = c.meta[1..].iter().map(|&d| d as usize).collect();
    if dims.len() < 2 {
        return Err(ContainerError::Malformed("MLP needs at least two dimensions".into()).into());
    }
    let mut params = MlpParams::zeros(&dims);
    let mut shapes: Vec<_> = params.tensors().iter().map(|t| t.shape()).collect();
    if role == ROLE_BC {
        shapes.push((1, 1));
    }
    c.check_shapes(&shapes)?;
    let mut tensors = c.tensors;
    let extra = (role == ROLE_BC).then(|| tensors.pop().expect("checked")).map(|m| m.get(0, 0));
    for (dst, src) in params.tensors_mut().into_iter().zip(tensors) {
        *dst = src;
    }
    Ok((params, extra))
}

/// Behavior cloning on `[R̂_i ; o_i] → d_i`, no sequence context.
#[derive(Clone, Debug, PartialEq)]
pub struct BcModel {
    pub params: MlpParams,
    /// Mean inter-arrival gap of the training data, reported as `ŵ`.
    pub mean_wait: f64,
}

impl BcModel {
    pub fn save(&self, path: &Path) -> Result<(), BaselineError> {
        Ok(mlp_container(&self.params, ROLE_BC, Some(self.mean_wait)).save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, BaselineError> {
        let (params, extra) = mlp_from_container(Container::load(path)?, ROLE_BC)?;
        Ok(Self {
            params,
            mean_wait: extra.unwrap_or(0.0),
        })
    }
}

pub fn bc_input(rtg: f64, obs: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(obs.len() + 1);
    v.push(rtg);
    v.extend_from_slice(obs);
    v
}

/// Per-step training pairs of a trajectory set.
pub fn bc_examples(trajectories: &[Trajectory]) -> (Vec<Vec<f64>>, Vec<usize>) {
    trajectories
        .iter()
        .flat_map(|t| &t.steps)
        .map(|s| (bc_input(s.rtg, &s.obs), s.d.index()))
        .unzip()
}

pub fn bc_train(trajectories: &[Trajectory], mean_wait: f64, cfg: &MlpTrainConfig) -> Result<(BcModel, Vec<f64>), BaselineError> {
    let (x, y) = bc_examples(trajectories);
    let input = x.first().ok_or(BaselineError::EmptyDataset)?.len();
    let mut dims = vec![input];
    dims.extend(&cfg.hidden);
    dims.push(Decision::ALL.len());
    let trained = train_mlp(MlpParams::init(&dims, cfg.seed), &x, &y, cfg)?;
    Ok((
        BcModel {
            params: trained.params,
            mean_wait,
        },
        trained.epoch_losses,
    ))
}

pub fn bc_predict(model: &BcModel, rtg: f64, obs: &[f64], mask_wait: bool) -> Decision {
    let i = masked_argmax(&model.params.logits(&bc_input(rtg, obs)), mask_wait);
    Decision::from_index(i).expect("three outputs")
}

/// Per-packet benign/malicious classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct DnnModel {
    pub params: MlpParams,
}

impl DnnModel {
    pub fn save(&self, path: &Path) -> Result<(), BaselineError> {
        Ok(mlp_container(&self.params, ROLE_DNN, None).save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, BaselineError> {
        let (params, _) = mlp_from_container(Container::load(path)?, ROLE_DNN)?;
        Ok(Self { params })
    }
}

pub fn dnn_train(packets: &[(Vec<f64>, Label)], cfg: &MlpTrainConfig) -> Result<(DnnModel, Vec<f64>), BaselineError> {
    let labeled: Vec<&(Vec<f64>, Label)> = packets.iter().filter(|(_, l)| l.is_labeled()).collect();
    let input = labeled.first().ok_or(BaselineError::EmptyDataset)?.0.len();
    let x: Vec<Vec<f64>> = labeled.iter().map(|(o, _)| o.clone()).collect();
    let y: Vec<usize> = labeled.iter().map(|(_, l)| l.class().expect("labeled") as usize).collect();
    let mut dims = vec![input];
    dims.extend(&cfg.hidden);
    dims.push(2);
    let trained = train_mlp(MlpParams::init(&dims, cfg.seed), &x, &y, cfg)?;
    Ok((DnnModel { params: trained.params }, trained.epoch_losses))
}

pub fn dnn_predict(model: &DnnModel, obs: &[f64]) -> Label {
    match argmax(&model.params.logits(obs)) {
        0 => Label::Benign,
        _ => Label::Malicious,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::Step;

    #[test]
    fn dimensions_and_zero_head() {
        let p = MlpParams::zeros(&[4, 8, 3]);
        assert_eq!(p.dims(), vec![4, 8, 3]);
        assert_eq!(p.logits(&[1.0; 4]), vec![0.0; 3]);
        let m = DnnModel {
            params: MlpParams::zeros(&[4, 5, 5, 5, 2]),
        };
        assert_eq!(dnn_predict(&m, &[0.3; 4]), Label::Benign);
    }

    #[test]
    fn argmax_masking() {
        assert_eq!(masked_argmax(&[0.0, 0.0, 0.0], false), 0);
        assert_eq!(masked_argmax(&[0.0, 1.0, 5.0], false), 2);
        assert_eq!(masked_argmax(&[0.0, 1.0, 5.0], true), 1);
        assert_eq!(masked_argmax(&[2.0, 1.0, 5.0], true), 0);
    }

    fn step(rtg: f64, obs: f64, d: Decision) -> Step {
        Step {
            t: 0.0,
            rtg,
            obs: vec![obs, 1.0 - obs],
            d,
            w: 0.5,
            r: 0.0,
        }
    }

    #[test]
    fn bc_memorizes_a_repeated_step() {
        let t = Trajectory {
            flow_id: "a".into(),
            label: Label::Malicious,
            policy: crate::trajectory::PolicyTag::Expert,
            steps: vec![step(1.0, 0.2, Decision::Malicious); 8],
        };
        let cfg = MlpTrainConfig {
            hidden: vec![8],
            epochs: 300,
            batch_size: 8,
            learning_rate: 1e-2,
            ..MlpTrainConfig::bc()
        };
        let (m, losses) = bc_train(&[t], 0.5, &cfg).unwrap();
        assert!(*losses.last().unwrap() < 0.01, "{losses:?}");
        assert_eq!(bc_predict(&m, 1.0, &[0.2, 0.8], true), Decision::Malicious);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let p = MlpParams::init(&[2, 4, 3], 1);
        let cfg = MlpTrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            optimizer: OptimizerKind::Sgd,
            ..MlpTrainConfig::default()
        };
        let out = train_mlp(p.clone(), &[vec![1.0, 2.0], vec![0.0, 1.0]], &[0, 2], &cfg).unwrap();
        assert_eq!(out.params, p);
    }

    #[test]
    fn dnn_memorizes_ten_packets() {
        let packets: Vec<(Vec<f64>, Label)> = (0..10)
            .map(|i| {
                let x = i as f64 / 10.0;
                (vec![x, x * x, 1.0 - x], if i % 3 == 0 { Label::Malicious } else { Label::Benign })
            })
            .collect();
        let cfg = MlpTrainConfig {
            epochs: 400,
            batch_size: 10,
            learning_rate: 5e-3,
            ..MlpTrainConfig::dnn()
        };
        let (m, _) = dnn_train(&packets, &cfg).unwrap();
        assert!(packets.iter().all(|(o, l)| dnn_predict(&m, o) == *l));
    }

    #[test]
    fn model_files_round_trip_and_check_role() {
        let dir = tempfile::tempdir().unwrap();
        let bc = BcModel {
            params: MlpParams::init(&[3, 4, 3], 2),
            mean_wait: 0.75,
        };
        let p = dir.path().join("bc.bin");
        bc.save(&p).unwrap();
        let back = BcModel::load(&p).unwrap();
        assert_eq!(back.mean_wait, 0.75);
        assert_eq!(back.params.dims(), vec![3, 4, 3]);
        assert!(matches!(DnnModel::load(&p), Err(BaselineError::WrongRole { .. })));
    }
}
