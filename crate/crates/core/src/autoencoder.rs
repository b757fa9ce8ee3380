//! Two-layer payload autoencoder.
//!
//! ```text
//! H  = σ(X W1 + b1)      Z  = σ(H W2 + b2)         (encoder, N_p → h → N_b)
//! H' = σ(Z W3 + b3)      X' = σ(H' W4 + b4)        (decoder, N_b → h → N_p)
//! L  = (1/n) Σ_k ‖X_k − X'_k‖²
//! ```
//!
//! Payload bytes are scaled by 1/255 before encoding. One activation is used
//! for all four layers; Sigmoid keeps reconstructions inside `[0, 1]`.
//! Only the encoder is used downstream, the decoder is kept for completeness.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{Container, ContainerError, ModelKind};
use crate::optim::{Optimizer, ParamSet};
use crate::tensor::{linear, linear_backward, linear_backward_params, sigmoid, Matrix};

#[derive(Debug, Error)]
pub enum AutoencoderError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training data is empty")]
    EmptyDataset,
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    fn code(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
        }
    }

    fn from_code(c: u32) -> Option<Self> {
        match c {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

/// Compressed payload representation of one packet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AutoencoderParams {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub w3: Matrix,
    pub b3: Matrix,
    pub w4: Matrix,
    pub b4: Matrix,
    pub activation: Activation,
}

impl ParamSet for AutoencoderParams {
    fn tensors(&self) -> Vec<&Matrix> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3, &self.w4, &self.b4]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
            &mut self.w4,
            &mut self.b4,
        ]
    }

    fn tensor_names(&self) -> Vec<String> {
        ["w1", "b1", "w2", "b2", "w3", "b3", "w4", "b4"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }
}

impl AutoencoderParams {
    pub fn zeros(n_p: usize, hidden: usize, n_b: usize, activation: Activation) -> Self {
        Self {
            w1: Matrix::zeros(n_p, hidden),
            b1: Matrix::zeros(1, hidden),
            w2: Matrix::zeros(hidden, n_b),
            b2: Matrix::zeros(1, n_b),
            w3: Matrix::zeros(n_b, hidden),
            b3: Matrix::zeros(1, hidden),
            w4: Matrix::zeros(hidden, n_p),
            b4: Matrix::zeros(1, n_p),
            activation,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(n_p: usize, hidden: usize, n_b: usize, activation: Activation, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(n_p, hidden, n_b, activation);
        p.w1 = Matrix::glorot(n_p, hidden, &mut rng);
        p.w2 = Matrix::glorot(hidden, n_b, &mut rng);
        p.w3 = Matrix::glorot(n_b, hidden, &mut rng);
        p.w4 = Matrix::glorot(hidden, n_p, &mut rng);
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn bottleneck_dim(&self) -> usize {
        self.w2.cols()
    }

    fn act(&self, mut m: Matrix) -> Matrix {
        let a = self.activation;
        m.data_mut().iter_mut().for_each(|v| *v = a.apply(*v));
        m
    }

    /// Encodes a batch `n × N_p` into `n × N_b`.
    pub fn encode_batch(&self, x: &Matrix) -> Result<Matrix, AutoencoderError> {
        self.check(x.cols(), self.input_dim())?;
        let h = self.act(linear(x, &self.w1, Some(&self.b1)));
        Ok(self.act(linear(&h, &self.w2, Some(&self.b2))))
    }

    pub fn decode_batch(&self, z: &Matrix) -> Result<Matrix, AutoencoderError> {
        self.check(z.cols(), self.bottleneck_dim())?;
        let h = self.act(linear(z, &self.w3, Some(&self.b3)));
        Ok(self.act(linear(&h, &self.w4, Some(&self.b4))))
    }

    fn check(&self, got: usize, expected: usize) -> Result<(), AutoencoderError> {
        if got != expected {
            return Err(AutoencoderError::DimensionMismatch { expected, got });
        }
        Ok(())
    }

    pub fn to_container(&self) -> Container {
        Container {
            kind: ModelKind::Autoencoder,
            meta: vec![
                self.input_dim() as u32,
                self.hidden_dim() as u32,
                self.bottleneck_dim() as u32,
                self.activation.code(),
            ],
            tensors: self.tensors().into_iter().cloned().collect(),
        }
    }

    pub fn from_container(c: Container) -> Result<Self, AutoencoderError> {
        let c = c.expect_kind(ModelKind::Autoencoder)?;
        let [n_p, h, n_b, act] = c.meta[..] else {
            return Err(ContainerError::Malformed(format!("{} header words", c.meta.len())).into());
        };
        let activation = Activation::from_code(act)
            .ok_or_else(|| ContainerError::Malformed(format!("activation code {act}")))?;
        let mut p = Self::zeros(n_p as usize, h as usize, n_b as usize, activation);
        let shapes: Vec<_> = p.tensors().iter().map(|t| t.shape()).collect();
        c.check_shapes(&shapes)?;
        for (dst, src) in p.tensors_mut().into_iter().zip(c.tensors) {
            *dst = src;
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<(), AutoencoderError> {
        Ok(self.to_container().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, AutoencoderError> {
        Self::from_container(Container::load(path)?)
    }
}

/// `Z = σ(W2 σ(W1 X + b1) + b2)` for one scaled payload vector.
pub fn encode(params: &AutoencoderParams, x: &[f64]) -> Result<Embedding, AutoencoderError> {
    let z = params.encode_batch(&Matrix::row_vector(x.to_vec()))?;
    Ok(Embedding(z.into_vec()))
}

pub fn decode(params: &AutoencoderParams, z: &Embedding) -> Result<Vec<f64>, AutoencoderError> {
    Ok(params.decode_batch(&Matrix::row_vector(z.0.clone()))?.into_vec())
}

/// Mean over samples of the squared Euclidean reconstruction error.
pub fn reconstruction_loss(x: &[Vec<f64>], x_rec: &[Vec<f64>]) -> Result<f64, AutoencoderError> {
    if x.len() != x_rec.len() {
        return Err(AutoencoderError::DimensionMismatch {
            expected: x.len(),
            got: x_rec.len(),
        });
    }
    if x.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (a, b) in x.iter().zip(x_rec) {
        if a.len() != b.len() {
            return Err(AutoencoderError::DimensionMismatch {
                expected: a.len(),
                got: b.len(),
            });
        }
        total += a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
    }
    Ok(total / x.len() as f64)
}

fn act_backward(activation: Activation, pre: &Matrix, out: &Matrix, mut d_out: Matrix) -> Matrix {
    for ((g, &x), &y) in d_out.data_mut().iter_mut().zip(pre.data()).zip(out.data()) {
        *g *= activation.derivative(x, y);
    }
    d_out
}

/// Reconstruction loss of a batch (`n × N_p`) and its gradient.
pub fn loss_and_grad(params: &AutoencoderParams, x: &Matrix) -> (f64, AutoencoderParams) {
    let a = params.activation;
    let n = x.rows() as f64;
    let act = |m: &Matrix| {
        let mut o = m.clone();
        o.data_mut().iter_mut().for_each(|v| *v = a.apply(*v));
        o
    };
    let p1 = linear(x, &params.w1, Some(&params.b1));
    let h1 = act(&p1);
    let p2 = linear(&h1, &params.w2, Some(&params.b2));
    let z = act(&p2);
    let p3 = linear(&z, &params.w3, Some(&params.b3));
    let h3 = act(&p3);
    let p4 = linear(&h3, &params.w4, Some(&params.b4));
    let xr = act(&p4);

    let mut loss = 0.0;
    let mut d_xr = Matrix::zeros(xr.rows(), xr.cols());
    for ((g, &r), &t) in d_xr.data_mut().iter_mut().zip(xr.data()).zip(x.data()) {
        let diff = r - t;
        loss += diff * diff;
        *g = 2.0 * diff / n;
    }
    loss /= n;

    let mut g = params.zeros_like();
    let d_p4 = act_backward(a, &p4, &xr, d_xr);
    let d_h3 = linear_backward(&h3, &params.w4, &d_p4, &mut g.w4, Some(&mut g.b4));
    let d_p3 = act_backward(a, &p3, &h3, d_h3);
    let d_z = linear_backward(&z, &params.w3, &d_p3, &mut g.w3, Some(&mut g.b3));
    let d_p2 = act_backward(a, &p2, &z, d_z);
    let d_h1 = linear_backward(&h1, &params.w2, &d_p2, &mut g.w2, Some(&mut g.b2));
    let d_p1 = act_backward(a, &p1, &h1, d_h1);
    linear_backward_params(x, &d_p1, &mut g.w1, Some(&mut g.b1));
    (loss, g)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoencoderConfig {
    pub hidden: usize,
    pub bottleneck: usize,
    pub activation: Activation,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            bottleneck: 100,
            activation: Activation::Sigmoid,
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 64,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedAutoencoder {
    pub params: AutoencoderParams,
    /// Full-dataset reconstruction loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

fn stack(rows: &[&Vec<f64>], width: usize) -> Matrix {
    let mut data = Vec::with_capacity(rows.len() * width);
    for r in rows {
        data.extend_from_slice(r);
    }
    Matrix::from_vec(rows.len(), width, data)
}

/// Full-dataset loss, evaluated in chunks.
pub fn dataset_loss(params: &AutoencoderParams, data: &[Vec<f64>]) -> f64 {
    let width = params.input_dim();
    let mut total = 0.0;
    for chunk in data.chunks(512) {
        let refs: Vec<&Vec<f64>> = chunk.iter().collect();
        let (l, _) = loss_and_grad(params, &stack(&refs, width));
        total += l * chunk.len() as f64;
    }
    total / data.len().max(1) as f64
}

/// Minibatch SGD on the reconstruction loss; deterministic given the seed.
pub fn train_autoencoder(
    data: &[Vec<f64>],
    config: &AutoencoderConfig,
) -> Result<TrainedAutoencoder, AutoencoderError> {
    let init = AutoencoderParams::init(
        data.first().map_or(0, Vec::len),
        config.hidden,
        config.bottleneck,
        config.activation,
        config.seed,
    );
    train_from(init, data, config)
}

pub fn train_from(
    mut params: AutoencoderParams,
    data: &[Vec<f64>],
    config: &AutoencoderConfig,
) -> Result<TrainedAutoencoder, AutoencoderError> {
    if data.is_empty() {
        return Err(AutoencoderError::EmptyDataset);
    }
    if config.batch_size == 0 || config.hidden == 0 || config.bottleneck == 0 {
        return Err(AutoencoderError::InvalidConfig(
            "hidden, bottleneck and batch_size must be positive".into(),
        ));
    }
    let width = params.input_dim();
    if let Some(bad) = data.iter().find(|r| r.len() != width) {
        return Err(AutoencoderError::DimensionMismatch {
            expected: width,
            got: bad.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_ae);
    let mut opt = Optimizer::sgd(config.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let rows: Vec<&Vec<f64>> = idx.iter().map(|&i| &data[i]).collect();
            let (loss, mut grads) = loss_and_grad(&params, &stack(&rows, width));
            if !loss.is_finite() {
                return Err(AutoencoderError::NonFiniteLoss { epoch, batch, loss });
            }
            opt.update(&mut params, &mut grads);
        }
        let loss = dataset_loss(&params, data);
        if !loss.is_finite() {
            return Err(AutoencoderError::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
                loss,
            });
        }
        epoch_losses.push(loss);
    }
    Ok(TrainedAutoencoder {
        params,
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_params_give_activation_at_zero() {
        let relu = AutoencoderParams::zeros(4, 3, 2, Activation::Relu);
        assert_eq!(encode(&relu, &[0.0; 4]).unwrap().0, vec![0.0, 0.0]);
        assert_eq!(decode(&relu, &Embedding(vec![0.0; 2])).unwrap(), vec![0.0; 4]);
        let sig = AutoencoderParams::zeros(4, 3, 2, Activation::Sigmoid);
        assert_eq!(encode(&sig, &[0.0; 4]).unwrap().0, vec![0.5, 0.5]);
        assert_eq!(decode(&sig, &Embedding(vec![0.0; 2])).unwrap(), vec![0.5; 4]);
    }

    /// 3-2-1 toy network evaluated by hand.
    fn toy() -> AutoencoderParams {
        let mut p = AutoencoderParams::zeros(3, 2, 1, Activation::Relu);
        p.w1 = Matrix::from_vec(3, 2, vec![1.0, -1.0, 0.5, 2.0, -0.5, 1.0]);
        p.b1 = Matrix::row_vector(vec![0.1, -0.2]);
        p.w2 = Matrix::from_vec(2, 1, vec![0.3, 0.7]);
        p.b2 = Matrix::row_vector(vec![0.05]);
        p.w3 = Matrix::from_vec(1, 2, vec![2.0, -1.0]);
        p.b3 = Matrix::row_vector(vec![0.0, 0.5]);
        p.w4 = Matrix::from_vec(2, 3, vec![1.0, 0.0, -1.0, 0.5, 0.5, 0.5]);
        p.b4 = Matrix::row_vector(vec![0.0, 0.1, 0.2]);
        p
    }

    #[test]
    fn toy_encode_matches_hand_evaluation() {
        let x = [0.2, 0.4, 0.6];
        // H = relu([0.2 + 0.2 - 0.3 + 0.1, -0.2 + 0.8 + 0.6 - 0.2]) = [0.2, 1.0]
        // Z = relu(0.2*0.3 + 1.0*0.7 + 0.05) = 0.81
        let z = encode(&toy(), &x).unwrap();
        assert_eq!(z.len(), 1);
        assert!((z.0[0] - 0.81).abs() < 1e-12);

        let mut sig = toy();
        sig.activation = Activation::Sigmoid;
        let h = [sigmoid(0.2), sigmoid(1.0)];
        let want = sigmoid(h[0] * 0.3 + h[1] * 0.7 + 0.05);
        assert!((encode(&sig, &x).unwrap().0[0] - want).abs() < 1e-12);
    }

    #[test]
    fn toy_decode_matches_hand_evaluation() {
        // H' = relu([1.62, -0.81 + 0.5]) = [1.62, 0]
        // X' = relu([1.62, 0.1, -1.62 + 0.2]) = [1.62, 0.1, 0]
        let xr = decode(&toy(), &Embedding(vec![0.81])).unwrap();
        let want = [1.62, 0.1, 0.0];
        for (a, b) in xr.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_examples() {
        let x = vec![vec![1.0, 0.0]];
        assert_eq!(reconstruction_loss(&x, &x).unwrap(), 0.0);
        assert_eq!(reconstruction_loss(&x, &[vec![0.0, 0.0]]).unwrap(), 1.0);
        let a = vec![vec![1.0, 1.0], vec![0.0, 2.0]];
        let b = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        assert_eq!(reconstruction_loss(&a, &b).unwrap(), 3.0);
        assert!(matches!(
            reconstruction_loss(&a, &b[..1]),
            Err(AutoencoderError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn encode_rejects_wrong_width() {
        let p = AutoencoderParams::zeros(4, 3, 2, Activation::Relu);
        assert!(matches!(
            encode(&p, &[0.0; 3]),
            Err(AutoencoderError::DimensionMismatch { expected: 4, got: 3 })
        ));
    }

    #[test]
    fn memorizes_a_single_sample() {
        let sample = vec![0.1, 0.9, 0.3, 0.7, 0.5, 0.2];
        let data = vec![sample; 8];
        let cfg = AutoencoderConfig {
            hidden: 8,
            bottleneck: 3,
            activation: Activation::Sigmoid,
            learning_rate: 2.0,
            epochs: 400,
            batch_size: 8,
            seed: 3,
        };
        let out = train_autoencoder(&data, &cfg).unwrap();
        assert!(*out.epoch_losses.last().unwrap() < 1e-3, "{:?}", out.epoch_losses.last());
    }

    #[test]
    fn zero_learning_rate_keeps_initialization() {
        let data = vec![vec![0.2, 0.4, 0.6]; 4];
        let cfg = AutoencoderConfig {
            hidden: 4,
            bottleneck: 2,
            learning_rate: 0.0,
            epochs: 3,
            batch_size: 2,
            ..Default::default()
        };
        let init = AutoencoderParams::init(3, 4, 2, cfg.activation, cfg.seed);
        let out = train_autoencoder(&data, &cfg).unwrap();
        assert_eq!(out.params, init);
    }

    #[test]
    fn loss_is_monotone_with_small_steps() {
        let data: Vec<Vec<f64>> = (0..6)
            .map(|i| (0..5).map(|j| ((i * 7 + j * 3) % 11) as f64 / 10.0).collect())
            .collect();
        for activation in [Activation::Sigmoid, Activation::Relu] {
            let cfg = AutoencoderConfig {
                hidden: 6,
                bottleneck: 2,
                activation,
                learning_rate: 0.01,
                epochs: 50,
                batch_size: data.len(),
                seed: 11,
            };
            let out = train_autoencoder(&data, &cfg).unwrap();
            for w in out.epoch_losses.windows(2) {
                assert!(w[1] <= w[0] + 1e-6, "{activation:?}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(matches!(
            train_autoencoder(&[], &AutoencoderConfig::default()),
            Err(AutoencoderError::EmptyDataset)
        ));
    }

    #[test]
    fn container_round_trip_keeps_shapes() {
        let p = AutoencoderParams::init(5, 4, 2, Activation::Relu, 1);
        let mut buf = Vec::new();
        p.to_container().write_to(&mut buf).unwrap();
        let back = AutoencoderParams::from_container(Container::read_from(&buf[..]).unwrap()).unwrap();
        assert_eq!(back.activation, Activation::Relu);
        for (a, b) in back.tensors().iter().zip(p.tensors()) {
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*x, *y as f32 as f64);
            }
        }
    }
}
