use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ActionMode, ModelConfig, SeqModelError};
use crate::container::{Container, ModelKind};
use crate::io::{read_json, write_json};
use crate::optim::ParamSet;
use crate::tensor::Matrix;

/// One post-norm transformer block. Q/K/V carry no bias.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub bo: Matrix,
    pub ln1_g: Matrix,
    pub ln1_b: Matrix,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub ln2_g: Matrix,
    pub ln2_b: Matrix,
}

impl LayerParams {
    const NAMES: [&'static str; 13] = [
        "wq", "wk", "wv", "wo", "bo", "ln1_g", "ln1_b", "w1", "b1", "w2", "b2", "ln2_g", "ln2_b",
    ];

    fn zeros(d: usize, d_ff: usize) -> Self {
        Self {
            wq: Matrix::zeros(d, d),
            wk: Matrix::zeros(d, d),
            wv: Matrix::zeros(d, d),
            wo: Matrix::zeros(d, d),
            bo: Matrix::zeros(1, d),
            ln1_g: Matrix::filled(1, d, 1.0),
            ln1_b: Matrix::zeros(1, d),
            w1: Matrix::zeros(d, d_ff),
            b1: Matrix::zeros(1, d_ff),
            w2: Matrix::zeros(d_ff, d),
            b2: Matrix::zeros(1, d),
            ln2_g: Matrix::filled(1, d, 1.0),
            ln2_b: Matrix::zeros(1, d),
        }
    }

    fn tensors(&self) -> [&Matrix; 13] {
        [
            &self.wq, &self.wk, &self.wv, &self.wo, &self.bo, &self.ln1_g, &self.ln1_b, &self.w1, &self.b1,
            &self.w2, &self.b2, &self.ln2_g, &self.ln2_b,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Matrix; 13] {
        [
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.ln2_g,
            &mut self.ln2_b,
        ]
    }
}

/// Every learned tensor of the decision transformer.
///
/// `proj_w[T]`/`proj_b[T]` are the per-type value projections, indexed by
/// token type (RTG, OBS, DEC, WAIT).
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceModelParams {
    pub proj_w: [Matrix; 4],
    pub proj_b: [Matrix; 4],
    pub type_emb: Matrix,
    pub layers: Vec<LayerParams>,
    pub head_dec_w: Matrix,
    pub head_dec_b: Matrix,
    pub head_wait_w: Matrix,
    pub head_wait_b: Matrix,
}

impl ParamSet for SequenceModelParams {
    fn tensors(&self) -> Vec<&Matrix> {
        let mut v: Vec<&Matrix> = Vec::new();
        for t in 0..4 {
            v.push(&self.proj_w[t]);
            v.push(&self.proj_b[t]);
        }
        v.push(&self.type_emb);
        for l in &self.layers {
            v.extend(l.tensors());
        }
        v.extend([&self.head_dec_w, &self.head_dec_b, &self.head_wait_w, &self.head_wait_b]);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v: Vec<&mut Matrix> = Vec::new();
        for (w, b) in self.proj_w.iter_mut().zip(self.proj_b.iter_mut()) {
            v.push(w);
            v.push(b);
        }
        v.push(&mut self.type_emb);
        for l in &mut self.layers {
            v.extend(l.tensors_mut());
        }
        v.extend([
            &mut self.head_dec_w,
            &mut self.head_dec_b,
            &mut self.head_wait_w,
            &mut self.head_wait_b,
        ]);
        v
    }

    fn tensor_names(&self) -> Vec<String> {
        let mut v = Vec::new();
        for t in ["rtg", "obs", "dec", "wait"] {
            v.push(format!("proj_{t}_w"));
            v.push(format!("proj_{t}_b"));
        }
        v.push("type_emb".into());
        for i in 0..self.layers.len() {
            v.extend(LayerParams::NAMES.iter().map(|n| format!("layer{i}.{n}")));
        }
        v.extend(["head_dec_w", "head_dec_b", "head_wait_w", "head_wait_b"].map(String::from));
        v
    }
}

impl SequenceModelParams {
    /// All weights zero, layer-norm gains one.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model();
        let dv = cfg.d_value;
        let in_dims = [1, cfg.obs_dim, cfg.action_dim(), 1];
        Self {
            proj_w: in_dims.map(|n| Matrix::zeros(n, dv)),
            proj_b: in_dims.map(|_| Matrix::zeros(1, dv)),
            type_emb: Matrix::zeros(4, cfg.d_type),
            layers: (0..cfg.n_layers).map(|_| LayerParams::zeros(d, cfg.d_ff)).collect(),
            head_dec_w: Matrix::zeros(d, cfg.action_dim()),
            head_dec_b: Matrix::zeros(1, cfg.action_dim()),
            head_wait_w: Matrix::zeros(d, 1),
            head_wait_b: Matrix::zeros(1, 1),
        }
    }

    /// Glorot-uniform weights, zero biases, unit layer-norm gains.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self, SeqModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(cfg);
        for w in &mut p.proj_w {
            *w = Matrix::glorot(w.rows(), w.cols(), &mut rng);
        }
        p.type_emb = Matrix::glorot(4, cfg.d_type, &mut rng);
        for l in &mut p.layers {
            for w in [&mut l.wq, &mut l.wk, &mut l.wv, &mut l.wo, &mut l.w1, &mut l.w2] {
                *w = Matrix::glorot(w.rows(), w.cols(), &mut rng);
            }
        }
        p.head_dec_w = Matrix::glorot(p.head_dec_w.rows(), p.head_dec_w.cols(), &mut rng);
        p.head_wait_w = Matrix::glorot(p.head_wait_w.rows(), 1, &mut rng);
        Ok(p)
    }

    fn shapes(cfg: &ModelConfig) -> Vec<(usize, usize)> {
        Self::zeros(cfg).tensors().iter().map(|t| t.shape()).collect()
    }

    pub fn to_container(&self, cfg: &ModelConfig) -> Container {
        Container {
            kind: ModelKind::SequenceModel,
            meta: config_words(cfg),
            tensors: self.tensors().into_iter().cloned().collect(),
        }
    }

    pub fn from_container(c: Container, cfg: &ModelConfig) -> Result<Self, SeqModelError> {
        let c = c.expect_kind(ModelKind::SequenceModel)?;
        if c.meta != config_words(cfg) {
            return Err(SeqModelError::ConfigMismatch(format!(
                "header {:?} vs config {:?}",
                c.meta,
                config_words(cfg)
            )));
        }
        cfg.validate()?;
        c.check_shapes(&Self::shapes(cfg))?;
        let mut p = Self::zeros(cfg);
        for (dst, src) in p.tensors_mut().into_iter().zip(c.tensors) {
            *dst = src;
        }
        Ok(p)
    }

    /// Writes the tensor file and a `<path>.json` config sidecar.
    pub fn save(&self, cfg: &ModelConfig, path: &Path) -> Result<(), SeqModelError> {
        self.to_container(cfg).save(path)?;
        write_json(&sidecar_path(path), cfg)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, ModelConfig), SeqModelError> {
        let cfg: ModelConfig = read_json(&sidecar_path(path))?;
        let p = Self::from_container(Container::load(path)?, &cfg)?;
        Ok((p, cfg))
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

fn config_words(cfg: &ModelConfig) -> Vec<u32> {
    let mode = match cfg.action_mode {
        ActionMode::Discrete => 0,
        ActionMode::Continuous => 1,
    };
    vec![
        cfg.k as u32,
        cfg.d_time as u32,
        cfg.d_value as u32,
        cfg.d_type as u32,
        cfg.n_layers as u32,
        cfg.n_heads as u32,
        cfg.d_ff as u32,
        cfg.obs_dim as u32,
        cfg.n_decisions as u32,
        mode,
        (cfg.c as f32).to_bits(),
    ]
}

