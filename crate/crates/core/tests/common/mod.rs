//! Oracles shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use writerid::cnn::CnnModel;
use writerid::encoding::{EncoderParams, Normalization};
use writerid::gmm::GmmModel;
use writerid::imaging::PATCH_LEN;

// Encoders as naive per-descriptor double loops over plain densities
// instead of log-space arithmetic.

pub struct Instance {
    pub x: Array2<f64>,
    pub w: Vec<f64>,
    pub mu: Array2<f64>,
    pub var: Array2<f64>,
}

pub fn instance(t: usize, k: usize, d: usize, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    Instance {
        x: Array2::from_shape_fn((t, d), |_| rng.gen_range(-2.0..2.0)),
        w: raw.iter().map(|v| v / total).collect(),
        mu: Array2::from_shape_fn((k, d), |_| rng.gen_range(-1.5..1.5)),
        var: Array2::from_shape_fn((k, d), |_| rng.gen_range(0.5..2.0)),
    }
}

pub fn gmm(inst: &Instance) -> GmmModel {
    GmmModel::new(Array1::from(inst.w.clone()), inst.mu.clone(), inst.var.clone()).unwrap()
}

pub fn density(inst: &Instance, t: usize, k: usize) -> f64 {
    let mut g = 1.0;
    for j in 0..inst.x.ncols() {
        let v = inst.var[[k, j]];
        let diff = inst.x[[t, j]] - inst.mu[[k, j]];
        g *= (-0.5 * diff * diff / v).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
    }
    g
}

pub fn naive_posteriors(inst: &Instance, top_c: usize, renorm: bool) -> Vec<Vec<f64>> {
    let (t, k) = (inst.x.nrows(), inst.w.len());
    let mut out = Vec::with_capacity(t);
    for i in 0..t {
        let p: Vec<f64> = (0..k).map(|c| inst.w[c] * density(inst, i, c)).collect();
        let z: f64 = p.iter().sum();
        let mut g: Vec<f64> = p.iter().map(|v| v / z).collect();
        // keep the top_c largest, ties to the lower index
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| g[b].partial_cmp(&g[a]).unwrap().then(a.cmp(&b)));
        for &c in &order[top_c..] {
            g[c] = 0.0;
        }
        if renorm {
            let s: f64 = g.iter().sum();
            for v in g.iter_mut() {
                *v /= s;
            }
        }
        out.push(g);
    }
    out
}

pub fn naive_power_l2(mut v: Vec<f64>, power: f64) -> Vec<f64> {
    for x in v.iter_mut() {
        *x = if *x < 0.0 { -(-*x).powf(power) } else { x.powf(power) };
    }
    let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    v
}

pub fn naive_supervector(inst: &Instance, p: &EncoderParams) -> Vec<f64> {
    let (t, k, d) = (inst.x.nrows(), inst.w.len(), inst.x.ncols());
    let gamma = naive_posteriors(inst, p.top_c, p.renormalize_truncated);
    let mut out = Vec::new();
    for c in 0..k {
        let n: f64 = (0..t).map(|i| gamma[i][c]).sum();
        let alpha = n / (n + p.tau);
        for j in 0..d {
            let mut first = 0.0;
            for i in 0..t {
                first += gamma[i][c] * inst.x[[i, j]];
            }
            let adapted = if n > 0.0 {
                alpha * first / n + (1.0 - alpha) * inst.mu[[c, j]]
            } else {
                inst.mu[[c, j]]
            };
            out.push(match p.normalization {
                Normalization::Kl => inst.w[c].sqrt() * adapted / inst.var[[c, j]].sqrt(),
                Normalization::SsrL2 => adapted,
            });
        }
    }
    match p.normalization {
        Normalization::Kl => out,
        Normalization::SsrL2 => naive_power_l2(out, p.power),
    }
}

pub fn naive_vlad(x: &Array2<f64>, centers: &Array2<f64>) -> Vec<f64> {
    let (k, d) = centers.dim();
    let mut out = vec![0.0; k * d];
    for i in 0..x.nrows() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for c in 0..k {
            let dist: f64 = (0..d).map(|j| (x[[i, j]] - centers[[c, j]]).powi(2)).sum();
            if dist < best_d {
                best_d = dist;
                best = c;
            }
        }
        for j in 0..d {
            out[best * d + j] += x[[i, j]] - centers[[best, j]];
        }
    }
    naive_power_l2(out, 0.5)
}

pub fn naive_fisher(inst: &Instance) -> Vec<f64> {
    let (t, k, d) = (inst.x.nrows(), inst.w.len(), inst.x.ncols());
    let gamma = naive_posteriors(inst, k, false);
    let mut mean_part = vec![0.0; k * d];
    let mut var_part = vec![0.0; k * d];
    for c in 0..k {
        for j in 0..d {
            let sd = inst.var[[c, j]].sqrt();
            for i in 0..t {
                let z = (inst.x[[i, j]] - inst.mu[[c, j]]) / sd;
                mean_part[c * d + j] += gamma[i][c] * z;
                var_part[c * d + j] += gamma[i][c] * (z * z - 1.0);
            }
            mean_part[c * d + j] /= t as f64 * inst.w[c].sqrt();
            var_part[c * d + j] /= t as f64 * (2.0 * inst.w[c]).sqrt();
        }
    }
    mean_part.extend(var_part);
    naive_power_l2(mean_part, 0.5)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// CNN gradients against central differences.

pub const TENSOR_NAMES: [&str; 8] = [
    "conv1_w", "conv1_b", "conv2_w", "conv2_b", "hidden_w", "hidden_b", "out_w", "out_b",
];

pub fn random_batch(n: usize, classes: usize, seed: u64) -> Vec<(Vec<f32>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| ((0..PATCH_LEN).map(|_| rng.gen::<f32>()).collect(), i % classes))
        .collect()
}

pub struct TensorCheck {
    pub name: &'static str,
    pub worst: f64,
    pub checked: usize,
    /// Entries whose ±1e-5 interval straddles a ReLU or max-pool switch and
    /// were re-checked at ±1e-7.
    pub kinks: usize,
}

/// Central differences with step 1e-5 on a subset of every tensor (small
/// tensors in full). An entry that misses the tolerance is re-checked with
/// step 1e-7: a piecewise-smooth loss only disagrees with its exact local
/// derivative when the wider interval crosses a non-differentiable point.
pub fn gradient_check(model: &CnnModel, batch: &[(Vec<f32>, usize)], per_tensor: usize) -> Vec<TensorCheck> {
    let refs: Vec<(&[f32], usize)> = batch.iter().map(|(p, l)| (p.as_slice(), *l)).collect();
    let analytic = model.loss_and_gradients(&refs).unwrap().gradient;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut out = Vec::new();
    for (ti, name) in TENSOR_NAMES.iter().enumerate() {
        let len = model.params.tensors()[ti].len();
        let idx: Vec<usize> = if len <= per_tensor {
            (0..len).collect()
        } else {
            rand::seq::index::sample(&mut rng, len, per_tensor).into_vec()
        };
        let mut check = TensorCheck {
            name,
            worst: 0.0,
            checked: idx.len(),
            kinks: 0,
        };
        for i in idx {
            let a = analytic.tensors()[ti][i];
            let rel_err = |eps: f64| {
                let mut plus = model.clone();
                plus.params.tensors_mut()[ti][i] += eps;
                let mut minus = model.clone();
                minus.params.tensors_mut()[ti][i] -= eps;
                let lp = plus.loss_and_gradients(&refs).unwrap().loss;
                let lm = minus.loss_and_gradients(&refs).unwrap().loss;
                let numeric = (lp - lm) / (2.0 * eps);
                // absolute floor: round-off in the difference quotient
                (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6)
            };
            let mut rel = rel_err(1e-5);
            if rel >= 1e-4 {
                check.kinks += 1;
                rel = rel_err(1e-7);
            }
            check.worst = check.worst.max(rel);
        }
        out.push(check);
    }
    out
}

/// Worst relative error over all tensors, or the first tensor that misses
/// 1e-4 or a kink count above a tenth of the checked entries.
pub fn gradient_verdict(checks: &[TensorCheck]) -> Result<String, String> {
    let checked: usize = checks.iter().map(|c| c.checked).sum();
    let kinks: usize = checks.iter().map(|c| c.kinks).sum();
    if let Some(c) = checks.iter().find(|c| !(c.worst < 1e-4)) {
        return Err(format!("{}: relative error {:e}", c.name, c.worst));
    }
    if kinks * 10 > checked {
        return Err(format!("{kinks} of {checked} entries sit next to a kink"));
    }
    let worst = checks.iter().map(|c| c.worst).fold(0.0, f64::max);
    Ok(format!("{checked} entries, worst relative error {worst:.2e}, {kinks} next to a kink"))
}

pub fn assert_gradients(checks: &[TensorCheck]) {
    if let Err(e) = gradient_verdict(checks) {
        panic!("{e}");
    }
}
