#![allow(dead_code)]

pub mod suite;

use nidt_core::optim::ParamSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-4;
/// Below this magnitude gradients are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug)]
pub struct GradReport {
    pub max_rel: f64,
    pub worst: String,
    pub checked: usize,
}

/// Compares every entry of `analytic` with a fourth-order central finite
/// difference of `loss`.
pub fn grad_check<P: ParamSet>(params: &P, analytic: &P, loss: impl Fn(&P) -> f64) -> GradReport {
    let mut report = GradReport {
        max_rel: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let names = params.tensor_names();
    let mut probe = params.clone();
    let grads = analytic.tensors();
    for (ti, name) in names.iter().enumerate() {
        for i in 0..grads[ti].len() {
            let orig = probe.tensors()[ti].data()[i];
            let mut at = |offset: f64| {
                probe.tensors_mut()[ti].data_mut()[i] = orig + offset;
                loss(&probe)
            };
            let h = FD_EPS;
            let numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
            probe.tensors_mut()[ti].data_mut()[i] = orig;
            let a = grads[ti].data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            if rel > report.max_rel {
                report.max_rel = rel;
                report.worst = format!("{name}[{i}]: analytic {a:e}, numeric {numeric:e}");
            }
        }
    }
    report
}

/// Overwrites every tensor with uniform values in `[-scale, scale]`.
pub fn randomize<P: ParamSet>(p: &mut P, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in p.tensors_mut() {
        for v in t.data_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}
