use super::LayerParams;
use crate::tensor::{dot, linear, linear_backward, linear_backward_input, linear_backward_params, Matrix};

const LN_EPS: f64 = 1e-5;

/// Intermediate values of one block, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct LayerCache {
    x: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    /// Per head, row-major `n × n`; only `b ≤ j` entries are meaningful.
    probs: Vec<Vec<f64>>,
    a: Matrix,
    xhat1: Matrix,
    inv1: Vec<f64>,
    h1: Matrix,
    pre: Matrix,
    act: Matrix,
    xhat2: Matrix,
    inv2: Vec<f64>,
}

/// One causal self-attention block on `n × d_model` embeddings:
/// `h = LN1(x + MHA(x))`, `out = LN2(h + FFN(h))`.
pub fn attention_layer(x: &Matrix, layer: &LayerParams, n_heads: usize) -> Matrix {
    layer_forward(x, layer, n_heads).0
}

pub(super) fn layer_forward(x: &Matrix, lp: &LayerParams, n_heads: usize) -> (Matrix, LayerCache) {
    let n = x.rows();
    let d = x.cols();
    let dh = d / n_heads;
    let q = linear(x, &lp.wq, None);
    let k = linear(x, &lp.wk, None);
    let v = linear(x, &lp.wv, None);
    let mut a = Matrix::zeros(n, d);
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let o = h * dh;
        let mut p = vec![0.0; n * n];
        for j in 0..n {
            let qj = &q.row(j)[o..o + dh];
            let row = &mut p[j * n..j * n + j + 1];
            let mut max = f64::NEG_INFINITY;
            for (b, s) in row.iter_mut().enumerate() {
                *s = dot(qj, &k.row(b)[o..o + dh]);
                max = max.max(*s);
            }
            let mut z = 0.0;
            for s in row.iter_mut() {
                *s = (*s - max).exp();
                z += *s;
            }
            for s in row.iter_mut() {
                *s /= z;
            }
            let aj = &mut a.row_mut(j)[o..o + dh];
            for (b, &pb) in row.iter().enumerate() {
                for (out, vv) in aj.iter_mut().zip(&v.row(b)[o..o + dh]) {
                    *out += pb * vv;
                }
            }
        }
        probs.push(p);
    }
    let mut u1 = linear(&a, &lp.wo, Some(&lp.bo));
    u1.add_assign(x);
    let (h1, xhat1, inv1) = layer_norm(&u1, &lp.ln1_g, &lp.ln1_b);
    let pre = linear(&h1, &lp.w1, Some(&lp.b1));
    let mut act = pre.clone();
    for y in act.data_mut() {
        *y = y.max(0.0);
    }
    let mut u2 = linear(&act, &lp.w2, Some(&lp.b2));
    u2.add_assign(&h1);
    let (out, xhat2, inv2) = layer_norm(&u2, &lp.ln2_g, &lp.ln2_b);
    let cache = LayerCache {
        x: x.clone(),
        q,
        k,
        v,
        probs,
        a,
        xhat1,
        inv1,
        h1,
        pre,
        act,
        xhat2,
        inv2,
    };
    (out, cache)
}

/// Backpropagates `dy` through one block; accumulates into `g` and returns `dx`.
pub(super) fn layer_backward(
    c: &LayerCache,
    lp: &LayerParams,
    dy: &Matrix,
    g: &mut LayerParams,
    n_heads: usize,
) -> Matrix {
    let n = c.x.rows();
    let d = c.x.cols();
    let dh = d / n_heads;

    let du2 = layer_norm_backward(dy, &c.xhat2, &c.inv2, &lp.ln2_g, &mut g.ln2_g, &mut g.ln2_b);
    let mut dact = linear_backward(&c.act, &lp.w2, &du2, &mut g.w2, Some(&mut g.b2));
    for (da, p) in dact.data_mut().iter_mut().zip(c.pre.data()) {
        if *p <= 0.0 {
            *da = 0.0;
        }
    }
    let mut dh1 = linear_backward(&c.h1, &lp.w1, &dact, &mut g.w1, Some(&mut g.b1));
    dh1.add_assign(&du2);

    let du1 = layer_norm_backward(&dh1, &c.xhat1, &c.inv1, &lp.ln1_g, &mut g.ln1_g, &mut g.ln1_b);
    let da = linear_backward(&c.a, &lp.wo, &du1, &mut g.wo, Some(&mut g.bo));

    let mut dq = Matrix::zeros(n, d);
    let mut dk = Matrix::zeros(n, d);
    let mut dv = Matrix::zeros(n, d);
    let mut dp = vec![0.0; n];
    for h in 0..n_heads {
        let o = h * dh;
        let p = &c.probs[h];
        for j in 0..n {
            let pj = &p[j * n..j * n + j + 1];
            let daj = &da.row(j)[o..o + dh];
            let mut weighted = 0.0;
            for b in 0..=j {
                dp[b] = dot(daj, &c.v.row(b)[o..o + dh]);
                weighted += pj[b] * dp[b];
                for (gv, x) in dv.row_mut(b)[o..o + dh].iter_mut().zip(daj) {
                    *gv += pj[b] * x;
                }
            }
            for b in 0..=j {
                let ds = pj[b] * (dp[b] - weighted);
                if ds == 0.0 {
                    continue;
                }
                for (gq, kk) in dq.row_mut(j)[o..o + dh].iter_mut().zip(&c.k.row(b)[o..o + dh]) {
                    *gq += ds * kk;
                }
                for (gk, qq) in dk.row_mut(b)[o..o + dh].iter_mut().zip(&c.q.row(j)[o..o + dh]) {
                    *gk += ds * qq;
                }
            }
        }
    }
    let mut dx = du1;
    for (w, gw, dproj) in [(&lp.wq, &mut g.wq, &dq), (&lp.wk, &mut g.wk, &dk), (&lp.wv, &mut g.wv, &dv)] {
        linear_backward_params(&c.x, dproj, gw, None);
        dx.add_assign(&linear_backward_input(w, dproj));
    }
    dx
}

/// Row-wise layer norm; returns the output, normalized rows and `1/σ` per row.
fn layer_norm(u: &Matrix, gain: &Matrix, bias: &Matrix) -> (Matrix, Matrix, Vec<f64>) {
    let d = u.cols();
    let mut out = Matrix::zeros(u.rows(), d);
    let mut xhat = Matrix::zeros(u.rows(), d);
    let mut inv = Vec::with_capacity(u.rows());
    for r in 0..u.rows() {
        let row = u.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
        let s = 1.0 / (var + LN_EPS).sqrt();
        inv.push(s);
        for (c, &x) in row.iter().enumerate() {
            let xh = (x - mean) * s;
            xhat.set(r, c, xh);
            out.set(r, c, gain.data()[c] * xh + bias.data()[c]);
        }
    }
    (out, xhat, inv)
}

fn layer_norm_backward(
    dy: &Matrix,
    xhat: &Matrix,
    inv: &[f64],
    gain: &Matrix,
    dgain: &mut Matrix,
    dbias: &mut Matrix,
) -> Matrix {
    let d = dy.cols();
    let mut du = Matrix::zeros(dy.rows(), d);
    let mut dxhat = vec![0.0; d];
    for r in 0..dy.rows() {
        let (g, xh) = (dy.row(r), xhat.row(r));
        for c in 0..d {
            dgain.data_mut()[c] += g[c] * xh[c];
            dbias.data_mut()[c] += g[c];
            dxhat[c] = g[c] * gain.data()[c];
        }
        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dx = dot(&dxhat, xh) / d as f64;
        for (c, o) in du.row_mut(r).iter_mut().enumerate() {
            *o = inv[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
        }
    }
    du
}
