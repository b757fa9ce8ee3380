use super::model::ContextStep;
use super::{ActionMode, ModelConfig, SeqModelError, SequenceModelParams};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TokenType {
    Rtg = 0,
    Obs = 1,
    Dec = 2,
    Wait = 3,
}

impl TokenType {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    pub t: f64,
    pub value: Vec<f64>,
    pub kind: TokenType,
    pub step_index: usize,
}

/// Tokens of a window plus where each step's heads read from.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSeq {
    pub tokens: Vec<Token>,
    pub obs_pos: Vec<usize>,
    pub dec_pos: Vec<Option<usize>>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Sinusoidal embedding of a (real-valued) time. With 1-based `k`, odd
/// dimensions hold `cos(t / C^((k-1)/d))` and even ones `sin(t / C^(k/d))`.
pub fn temporal_embedding(t: f64, d_time: usize, c: f64) -> Vec<f64> {
    let d = d_time as f64;
    (1..=d_time)
        .map(|k| {
            if k % 2 == 1 {
                (t / c.powf((k - 1) as f64 / d)).cos()
            } else {
                (t / c.powf(k as f64 / d)).sin()
            }
        })
        .collect()
}

/// Lays out RTG, OBS, DEC, WAIT per step. Only the last step may be
/// incomplete (decision pending, or decided with the wait still unknown).
pub fn tokenize(cfg: &ModelConfig, steps: &[ContextStep<'_>]) -> Result<TokenSeq, SeqModelError> {
    if steps.is_empty() {
        return Err(SeqModelError::EmptyWindow);
    }
    if steps.len() > cfg.k {
        return Err(SeqModelError::WindowTooLong {
            len: steps.len(),
            k: cfg.k,
        });
    }
    let mut seq = TokenSeq {
        tokens: Vec::with_capacity(4 * steps.len()),
        obs_pos: Vec::with_capacity(steps.len()),
        dec_pos: Vec::with_capacity(steps.len()),
    };
    for (i, s) in steps.iter().enumerate() {
        if s.obs.len() != cfg.obs_dim {
            return Err(SeqModelError::DimensionMismatch {
                what: "observation",
                expected: cfg.obs_dim,
                got: s.obs.len(),
            });
        }
        let complete = s.action.is_some() && s.wait.is_some();
        if !complete && i + 1 != steps.len() || s.action.is_none() && s.wait.is_some() {
            return Err(SeqModelError::IncompleteStep(i));
        }
        let mut push = |kind, value| {
            seq.tokens.push(Token {
                t: s.t,
                value,
                kind,
                step_index: i,
            })
        };
        push(TokenType::Rtg, vec![s.rtg]);
        push(TokenType::Obs, s.obs.to_vec());
        seq.obs_pos.push(seq.tokens.len() - 1);
        match s.action {
            Some(a) => {
                if a >= cfg.n_decisions {
                    return Err(SeqModelError::DimensionMismatch {
                        what: "decision index",
                        expected: cfg.n_decisions,
                        got: a,
                    });
                }
                seq.tokens.push(Token {
                    t: s.t,
                    value: action_value(cfg, a),
                    kind: TokenType::Dec,
                    step_index: i,
                });
                seq.dec_pos.push(Some(seq.tokens.len() - 1));
            }
            None => seq.dec_pos.push(None),
        }
        if let Some(w) = s.wait {
            seq.tokens.push(Token {
                t: s.t,
                value: vec![w],
                kind: TokenType::Wait,
                step_index: i,
            });
        }
    }
    Ok(seq)
}

/// One-hot in discrete mode, the raw decision code in continuous mode.
fn action_value(cfg: &ModelConfig, a: usize) -> Vec<f64> {
    match cfg.action_mode {
        ActionMode::Discrete => {
            let mut v = vec![0.0; cfg.n_decisions];
            v[a] = 1.0;
            v
        }
        ActionMode::Continuous => vec![a as f64],
    }
}

/// Layer-0 input `[temporal(t) ; W_T v + b_T ; type_emb[T]]`, one row per token.
pub(super) fn embed(params: &SequenceModelParams, cfg: &ModelConfig, seq: &TokenSeq) -> Matrix {
    let (dt, dv) = (cfg.d_time, cfg.d_value);
    let mut x = Matrix::zeros(seq.len(), cfg.d_model());
    for (j, tok) in seq.tokens.iter().enumerate() {
        let ty = tok.kind.index();
        let row = x.row_mut(j);
        row[..dt].copy_from_slice(&temporal_embedding(tok.t, dt, cfg.c));
        let val = &mut row[dt..dt + dv];
        val.copy_from_slice(params.proj_b[ty].data());
        let w = &params.proj_w[ty];
        for (k, &v) in tok.value.iter().enumerate() {
            if v != 0.0 {
                for (o, wv) in val.iter_mut().zip(w.row(k)) {
                    *o += v * wv;
                }
            }
        }
        row[dt + dv..].copy_from_slice(params.type_emb.row(ty));
    }
    x
}

/// Accumulates embedding-parameter gradients from `dx` (gradient of layer-0 input).
pub(super) fn embed_backward(cfg: &ModelConfig, seq: &TokenSeq, dx: &Matrix, grads: &mut SequenceModelParams) {
    let (dt, dv) = (cfg.d_time, cfg.d_value);
    for (j, tok) in seq.tokens.iter().enumerate() {
        let ty = tok.kind.index();
        let g = dx.row(j);
        let gv = &g[dt..dt + dv];
        for (b, d) in grads.proj_b[ty].data_mut().iter_mut().zip(gv) {
            *b += d;
        }
        for (k, &v) in tok.value.iter().enumerate() {
            if v != 0.0 {
                for (w, d) in grads.proj_w[ty].row_mut(k).iter_mut().zip(gv) {
                    *w += v * d;
                }
            }
        }
        for (e, d) in grads.type_emb.row_mut(ty).iter_mut().zip(&g[dt + dv..]) {
            *e += d;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn temporal_examples() {
        let z = temporal_embedding(0.0, 6, 10000.0);
        assert_eq!(z, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let e = temporal_embedding(1.0, 2, 10000.0);
        assert!((e[0] - 0.540302).abs() < 1e-6);
        assert!((e[1] - 1e-4f64.sin()).abs() < 1e-15);
        assert!((e[1] - 0.0001).abs() < 1e-9);
    }

    fn cfg() -> ModelConfig {
        ModelConfig {
            k: 4,
            d_time: 4,
            d_value: 3,
            d_type: 2,
            n_layers: 1,
            n_heads: 1,
            d_ff: 4,
            obs_dim: 2,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn token_layout() {
        let obs = [0.5, 0.25];
        let full = ContextStep::complete(1.0, 0.9, &obs, 2, 0.5);
        let steps = [full.clone(), full.clone(), full];
        let seq = tokenize(&cfg(), &steps).unwrap();
        assert_eq!(seq.len(), 12);
        let kinds: Vec<_> = seq.tokens[..4].iter().map(|t| t.kind).collect();
        assert_eq!(kinds, [TokenType::Rtg, TokenType::Obs, TokenType::Dec, TokenType::Wait]);
        assert_eq!(seq.obs_pos, vec![1, 5, 9]);
        assert_eq!(seq.dec_pos, vec![Some(2), Some(6), Some(10)]);
        assert_eq!(seq.tokens[2].value, vec![0.0, 0.0, 1.0]);
        let p = SequenceModelParams::init(&cfg(), 1).unwrap();
        let x = embed(&p, &cfg(), &seq);
        assert_eq!(x.cols(), cfg().d_model());
        assert_eq!(x.row(0)[..4], x.row(3)[..4]);
        assert_ne!(x.row(0)[4..], x.row(1)[4..]);
    }

    #[test]
    fn pending_and_invalid_windows() {
        let obs = [0.0, 0.0];
        let c = cfg();
        let done = ContextStep::complete(0.0, 1.0, &obs, 2, 1.0);
        let pending = ContextStep::pending(1.0, 0.95, &obs);
        let seq = tokenize(&c, &[done.clone(), pending.clone()]).unwrap();
        assert_eq!(seq.len(), 6);
        assert_eq!(seq.dec_pos, vec![Some(2), None]);
        assert!(matches!(tokenize(&c, &[]), Err(SeqModelError::EmptyWindow)));
        assert!(matches!(
            tokenize(&c, &[pending, done.clone()]),
            Err(SeqModelError::IncompleteStep(0))
        ));
        let five = vec![done; 5];
        assert!(matches!(tokenize(&c, &five), Err(SeqModelError::WindowTooLong { .. })));
    }
}
