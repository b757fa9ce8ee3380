//! Parameter collections and first-order optimizers.

use serde::{Deserialize, Serialize};

use crate::tensor::Matrix;

/// A fixed, ordered list of learned tensors.
///
/// Gradients are represented by the same type, so every model gets
/// `zeros_like`, accumulation and norm handling for free.
pub trait ParamSet: Clone {
    fn tensors(&self) -> Vec<&Matrix>;
    fn tensors_mut(&mut self) -> Vec<&mut Matrix>;
    fn tensor_names(&self) -> Vec<String>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn accumulate(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    fn scale_all(&mut self, k: f64) {
        for t in self.tensors_mut() {
            t.scale(k);
        }
    }

    fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|t| t.sum_squares())
            .sum::<f64>()
            .sqrt()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    grad_clip: Option<f64>,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate, None)
    }

    pub fn adam(learning_rate: f64, grad_clip: Option<f64>) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate, grad_clip)
    }

    pub fn new(kind: OptimizerKind, learning_rate: f64, grad_clip: Option<f64>) -> Self {
        Self {
            kind,
            learning_rate,
            grad_clip,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update; `grads` may be rescaled in place by clipping.
    pub fn update<P: ParamSet>(&mut self, params: &mut P, grads: &mut P) {
        if let Some(max_norm) = self.grad_clip {
            let norm = grads.global_norm();
            if norm > max_norm && norm > 0.0 {
                grads.scale_all(max_norm / norm);
            }
        }
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
                    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv -= lr * gv;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.m.is_empty() {
                    for g in grads.tensors() {
                        self.m.push(vec![0.0; g.len()]);
                        self.v.push(vec![0.0; g.len()]);
                    }
                }
                let (b1, b2) = (self.beta1, self.beta2);
                let bc1 = 1.0 - b1.powi(self.step as i32);
                let bc2 = 1.0 - b2.powi(self.step as i32);
                let tensors = params.tensors_mut().into_iter().zip(grads.tensors());
                for (i, (p, g)) in tensors.enumerate() {
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for (j, (pv, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[j] = b1 * m[j] + (1.0 - b1) * gv;
                        v[j] = b2 * v[j] + (1.0 - b2) * gv * gv;
                        let mh = m[j] / bc1;
                        let vh = v[j] / bc2;
                        *pv -= lr * mh / (vh.sqrt() + self.eps);
                    }
                }
            }
        }
    }
}
