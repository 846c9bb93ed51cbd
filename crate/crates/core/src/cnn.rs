//! Small patch CNN: conv → ReLU → max-pool → conv → ReLU → max-pool → dense →
//! ReLU → (dense → softmax during training).
//!
//! Convolutions are valid (no padding) with stride 1; pooling windows do not
//! overlap and incomplete border windows are dropped. After training only the
//! layers up to the hidden ReLU are used: their output is the local
//! descriptor of a patch.
//!
//! All arithmetic is done in `f64`. Tensors are stored channel-major,
//! row-major within a channel.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{PATCH_LEN, PATCH_SIDE};

/// Samples per gradient work unit. Fixed so that the reduction order does not
/// depend on the number of worker threads.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub c1_size: usize,
    pub p1_size: usize,
    pub c2_size: usize,
    pub p2_size: usize,
    pub c1_filters: usize,
    pub c2_filters: usize,
    pub hidden_nodes: usize,
    pub num_classes: usize,
}

/// Spatial sides of every stage for a 32x32 input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShapes {
    pub conv1: usize,
    pub pool1: usize,
    pub conv2: usize,
    pub pool2: usize,
    pub flatten: usize,
}

impl CnnConfig {
    /// 5x5 conv, 2x2 pool, 5x5 conv, 2x2 pool.
    pub fn config_a(hidden_nodes: usize, num_classes: usize) -> Self {
        Self {
            c1_size: 5,
            p1_size: 2,
            c2_size: 5,
            p2_size: 2,
            c1_filters: 16,
            c2_filters: 256,
            hidden_nodes,
            num_classes,
        }
    }

    /// 7x7 conv, 2x2 pool, 5x5 conv, 3x3 pool.
    pub fn config_b(hidden_nodes: usize, num_classes: usize) -> Self {
        Self {
            c1_size: 7,
            p1_size: 2,
            c2_size: 5,
            p2_size: 3,
            ..Self::config_a(hidden_nodes, num_classes)
        }
    }

    pub fn with_filters(mut self, c1_filters: usize, c2_filters: usize) -> Self {
        self.c1_filters = c1_filters;
        self.c2_filters = c2_filters;
        self
    }

    pub fn shapes(&self) -> Result<LayerShapes> {
        let sizes = [
            ("c1_size", self.c1_size),
            ("p1_size", self.p1_size),
            ("c2_size", self.c2_size),
            ("p2_size", self.p2_size),
            ("c1_filters", self.c1_filters),
            ("c2_filters", self.c2_filters),
            ("hidden_nodes", self.hidden_nodes),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be >= 1")));
        }
        let valid = |side: usize, k: usize, what: &str| {
            if k > side {
                Err(Error::Config(format!(
                    "{what}: {k}x{k} filter does not fit a {side}x{side} input"
                )))
            } else {
                Ok(side - k + 1)
            }
        };
        let pooled = |side: usize, p: usize, what: &str| {
            if side / p == 0 {
                Err(Error::Config(format!(
                    "{what}: {p}x{p} pooling leaves nothing of a {side}x{side} map"
                )))
            } else {
                Ok(side / p)
            }
        };
        let conv1 = valid(PATCH_SIDE, self.c1_size, "conv1")?;
        let pool1 = pooled(conv1, self.p1_size, "pool1")?;
        let conv2 = valid(pool1, self.c2_size, "conv2")?;
        let pool2 = pooled(conv2, self.p2_size, "pool2")?;
        Ok(LayerShapes {
            conv1,
            pool1,
            conv2,
            pool2,
            flatten: pool2 * pool2 * self.c2_filters,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub learning_rate: f64,
    pub epochs: usize,
    pub nesterov_momentum: f64,
    pub momentum_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 20,
            nesterov_momentum: 0.9,
            momentum_epochs: 5,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.nesterov_momentum) {
            return Err(Error::Config("nesterov_momentum must be in [0, 1)".into()));
        }
        if self.momentum_epochs > self.epochs {
            return Err(Error::Config("momentum_epochs must not exceed epochs".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Every learnable tensor of the network. Also used for gradients and
/// momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// `[c1_filters][c1_size][c1_size]`
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    /// `[c2_filters][c1_filters][c2_size][c2_size]`
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    /// `[hidden_nodes][flatten]`
    pub hidden_w: Vec<f64>,
    pub hidden_b: Vec<f64>,
    /// `[num_classes][hidden_nodes]`
    pub out_w: Vec<f64>,
    pub out_b: Vec<f64>,
}

impl Params {
    pub fn zeros(config: &CnnConfig) -> Result<Self> {
        let s = config.shapes()?;
        Ok(Self {
            conv1_w: vec![0.0; config.c1_filters * config.c1_size * config.c1_size],
            conv1_b: vec![0.0; config.c1_filters],
            conv2_w: vec![
                0.0;
                config.c2_filters * config.c1_filters * config.c2_size * config.c2_size
            ],
            conv2_b: vec![0.0; config.c2_filters],
            hidden_w: vec![0.0; config.hidden_nodes * s.flatten],
            hidden_b: vec![0.0; config.hidden_nodes],
            out_w: vec![0.0; config.num_classes * config.hidden_nodes],
            out_b: vec![0.0; config.num_classes],
        })
    }

    /// Tensor shapes in storage order, matching [`Params::tensors`].
    pub fn shapes(config: &CnnConfig) -> Result<[Vec<usize>; 8]> {
        let s = config.shapes()?;
        let (k1, k2) = (config.c1_size, config.c2_size);
        Ok([
            vec![config.c1_filters, 1, k1, k1],
            vec![config.c1_filters],
            vec![config.c2_filters, config.c1_filters, k2, k2],
            vec![config.c2_filters],
            vec![config.hidden_nodes, s.flatten],
            vec![config.hidden_nodes],
            vec![config.num_classes, config.hidden_nodes],
            vec![config.num_classes],
        ])
    }

    pub fn tensors(&self) -> [&Vec<f64>; 8] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.hidden_w,
            &self.hidden_b,
            &self.out_w,
            &self.out_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 8] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.hidden_w,
            &mut self.hidden_b,
            &mut self.out_w,
            &mut self.out_b,
        ]
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Params) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub config: CnnConfig,
    pub params: Params,
    /// The softmax head only exists for training and may be dropped.
    pub head_discardable: bool,
}

/// Intermediate activations of one forward pass, kept for backprop.
struct Trace {
    input: Vec<f64>,
    act1: Vec<f64>,
    pool1: Vec<f64>,
    pool1_arg: Vec<u32>,
    act2: Vec<f64>,
    pool2: Vec<f64>,
    pool2_arg: Vec<u32>,
    hidden: Vec<f64>,
}

/// Valid convolution, stride 1, accumulating into `out` (which must hold the bias).
fn conv_valid(
    input: &[f64],
    in_ch: usize,
    in_side: usize,
    weights: &[f64],
    k: usize,
    out: &mut [f64],
    out_ch: usize,
) {
    let o = in_side - k + 1;
    let in_area = in_side * in_side;
    for f in 0..out_ch {
        let out_f = &mut out[f * o * o..(f + 1) * o * o];
        for c in 0..in_ch {
            let in_c = &input[c * in_area..(c + 1) * in_area];
            let w_fc = &weights[(f * in_ch + c) * k * k..(f * in_ch + c + 1) * k * k];
            for ky in 0..k {
                for kx in 0..k {
                    let w = w_fc[ky * k + kx];
                    for y in 0..o {
                        let src = &in_c[(y + ky) * in_side + kx..(y + ky) * in_side + kx + o];
                        let dst = &mut out_f[y * o..(y + 1) * o];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += w * s;
                        }
                    }
                }
            }
        }
    }
}

fn relu_inplace(v: &mut [f64]) {
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Non-overlapping max pooling. Returns pooled values and, for each, the flat
/// index of the winning input element (first maximum in row-major window order).
fn max_pool(input: &[f64], ch: usize, side: usize, p: usize) -> (Vec<f64>, Vec<u32>) {
    let o = side / p;
    let mut vals = Vec::with_capacity(ch * o * o);
    let mut args = Vec::with_capacity(ch * o * o);
    for c in 0..ch {
        let base = c * side * side;
        for oy in 0..o {
            for ox in 0..o {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = 0usize;
                for dy in 0..p {
                    for dx in 0..p {
                        let i = base + (oy * p + dy) * side + ox * p + dx;
                        if input[i] > best {
                            best = input[i];
                            best_i = i;
                        }
                    }
                }
                vals.push(best);
                args.push(best_i as u32);
            }
        }
    }
    (vals, args)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn dense(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(j, &bj)| {
            bj + w[j * n_in..(j + 1) * n_in]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        })
        .collect()
}

impl CnnModel {
    pub fn zeros(config: CnnConfig) -> Result<Self> {
        Ok(Self {
            config,
            params: Params::zeros(&config)?,
            head_discardable: false,
        })
    }

    /// Uniform Glorot initialisation, biases zero.
    pub fn init<R: Rng>(config: CnnConfig, rng: &mut R) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let s = config.shapes()?;
        let (k1, k2) = (config.c1_size * config.c1_size, config.c2_size * config.c2_size);
        let fans = [
            (k1, config.c1_filters * k1),
            (config.c1_filters * k2, config.c2_filters * k2),
            (s.flatten, config.hidden_nodes),
            (config.hidden_nodes, config.num_classes),
        ];
        let p = &mut model.params;
        for (t, (fan_in, fan_out)) in [&mut p.conv1_w, &mut p.conv2_w, &mut p.hidden_w, &mut p.out_w]
            .into_iter()
            .zip(fans)
        {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            t.iter_mut().for_each(|v| *v = rng.gen_range(-limit..limit));
        }
        Ok(model)
    }

    pub fn descriptor_dim(&self) -> usize {
        self.config.hidden_nodes
    }

    fn check_consistent(&self) -> Result<LayerShapes> {
        let shapes = Params::shapes(&self.config)?;
        for (t, shape) in self.params.tensors().iter().zip(&shapes) {
            let expected: usize = shape.iter().product();
            if t.len() != expected {
                return Err(Error::Config(format!(
                    "weight tensor has {} values, configuration implies {expected}",
                    t.len()
                )));
            }
        }
        self.config.shapes()
    }

    fn trace(&self, pixels: &[f32], s: &LayerShapes) -> Trace {
        let cfg = &self.config;
        let p = &self.params;
        let input: Vec<f64> = pixels.iter().map(|&v| v as f64).collect();

        let mut act1 = Vec::with_capacity(cfg.c1_filters * s.conv1 * s.conv1);
        for &b in &p.conv1_b {
            act1.extend(std::iter::repeat_n(b, s.conv1 * s.conv1));
        }
        conv_valid(&input, 1, PATCH_SIDE, &p.conv1_w, cfg.c1_size, &mut act1, cfg.c1_filters);
        relu_inplace(&mut act1);
        let (pool1, pool1_arg) = max_pool(&act1, cfg.c1_filters, s.conv1, cfg.p1_size);

        let mut act2 = Vec::with_capacity(cfg.c2_filters * s.conv2 * s.conv2);
        for &b in &p.conv2_b {
            act2.extend(std::iter::repeat_n(b, s.conv2 * s.conv2));
        }
        conv_valid(
            &pool1,
            cfg.c1_filters,
            s.pool1,
            &p.conv2_w,
            cfg.c2_size,
            &mut act2,
            cfg.c2_filters,
        );
        relu_inplace(&mut act2);
        let (pool2, pool2_arg) = max_pool(&act2, cfg.c2_filters, s.conv2, cfg.p2_size);

        let mut hidden = dense(&p.hidden_w, &p.hidden_b, &pool2);
        relu_inplace(&mut hidden);

        Trace {
            input,
            act1,
            pool1,
            pool1_arg,
            act2,
            pool2,
            pool2_arg,
            hidden,
        }
    }

    fn logits(&self, hidden: &[f64]) -> Vec<f64> {
        dense(&self.params.out_w, &self.params.out_b, hidden)
    }

    /// Hidden-layer activations, or class probabilities when `with_head` is set.
    pub fn forward(&self, pixels: &[f32], with_head: bool) -> Result<Vec<f64>> {
        if pixels.len() != PATCH_LEN {
            return Err(Error::DimensionMismatch {
                expected: PATCH_LEN,
                actual: pixels.len(),
            });
        }
        let s = self.check_consistent()?;
        let t = self.trace(pixels, &s);
        if with_head {
            Ok(softmax(&self.logits(&t.hidden)))
        } else {
            Ok(t.hidden)
        }
    }

    pub fn predict(&self, pixels: &[f32]) -> Result<usize> {
        let probs = self.forward(pixels, true)?;
        Ok(argmax(&probs))
    }

    /// Adds the gradient of `scale * CE(sample)` to `grad`; returns the
    /// unscaled loss and whether the prediction was correct.
    fn accumulate_sample(
        &self,
        pixels: &[f32],
        label: usize,
        scale: f64,
        s: &LayerShapes,
        grad: &mut Params,
    ) -> (f64, bool) {
        let cfg = &self.config;
        let p = &self.params;
        let t = self.trace(pixels, s);
        let logits = self.logits(&t.hidden);

        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
        let loss = log_z - logits[label];
        let correct = argmax(&logits) == label;

        // softmax output layer
        let mut d_logits: Vec<f64> = logits.iter().map(|&z| (z - log_z).exp()).collect();
        d_logits[label] -= 1.0;
        d_logits.iter_mut().for_each(|v| *v *= scale);

        let h = cfg.hidden_nodes;
        let mut d_hidden = vec![0.0; h];
        for (c, &g) in d_logits.iter().enumerate() {
            grad.out_b[c] += g;
            let w_row = &p.out_w[c * h..(c + 1) * h];
            let gw_row = &mut grad.out_w[c * h..(c + 1) * h];
            for j in 0..h {
                gw_row[j] += g * t.hidden[j];
                d_hidden[j] += g * w_row[j];
            }
        }
        for (dh, &a) in d_hidden.iter_mut().zip(&t.hidden) {
            if a <= 0.0 {
                *dh = 0.0;
            }
        }

        // hidden dense layer
        let flat = s.flatten;
        let mut d_pool2 = vec![0.0; flat];
        for (j, &g) in d_hidden.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.hidden_b[j] += g;
            let w_row = &p.hidden_w[j * flat..(j + 1) * flat];
            let gw_row = &mut grad.hidden_w[j * flat..(j + 1) * flat];
            for i in 0..flat {
                gw_row[i] += g * t.pool2[i];
                d_pool2[i] += g * w_row[i];
            }
        }

        // pool2 + relu2 → sparse gradient on conv2 outputs
        let o2 = s.conv2;
        let k2 = cfg.c2_size;
        let in2 = s.pool1;
        let c1 = cfg.c1_filters;
        let mut d_pool1 = vec![0.0; c1 * in2 * in2];
        for (&g, &arg) in d_pool2.iter().zip(&t.pool2_arg) {
            let idx = arg as usize;
            if g == 0.0 || t.act2[idx] <= 0.0 {
                continue;
            }
            let f = idx / (o2 * o2);
            let y = (idx % (o2 * o2)) / o2;
            let x = idx % o2;
            grad.conv2_b[f] += g;
            for c in 0..c1 {
                let wbase = (f * c1 + c) * k2 * k2;
                let ibase = c * in2 * in2;
                for ky in 0..k2 {
                    let row = ibase + (y + ky) * in2 + x;
                    for kx in 0..k2 {
                        grad.conv2_w[wbase + ky * k2 + kx] += g * t.pool1[row + kx];
                        d_pool1[row + kx] += g * p.conv2_w[wbase + ky * k2 + kx];
                    }
                }
            }
        }

        // pool1 + relu1 → conv1 weights
        let o1 = s.conv1;
        let k1 = cfg.c1_size;
        for (&g, &arg) in d_pool1.iter().zip(&t.pool1_arg) {
            let idx = arg as usize;
            if g == 0.0 || t.act1[idx] <= 0.0 {
                continue;
            }
            let f = idx / (o1 * o1);
            let y = (idx % (o1 * o1)) / o1;
            let x = idx % o1;
            grad.conv1_b[f] += g;
            let wbase = f * k1 * k1;
            for ky in 0..k1 {
                let row = (y + ky) * PATCH_SIDE + x;
                for kx in 0..k1 {
                    grad.conv1_w[wbase + ky * k1 + kx] += g * t.input[row + kx];
                }
            }
        }

        (loss, correct)
    }

    /// Mean cross-entropy over the batch and its exact gradient.
    pub fn loss_and_gradients(&self, batch: &[(&[f32], usize)]) -> Result<BatchGradient> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let s = self.check_consistent()?;
        for &(pixels, label) in batch {
            if pixels.len() != PATCH_LEN {
                return Err(Error::DimensionMismatch {
                    expected: PATCH_LEN,
                    actual: pixels.len(),
                });
            }
            if label >= self.config.num_classes {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: self.config.num_classes,
                });
            }
        }
        let scale = 1.0 / batch.len() as f64;
        let partials: Vec<Result<(f64, usize, Params)>> = batch
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut grad = Params::zeros(&self.config)?;
                let mut loss = 0.0;
                let mut correct = 0;
                for &(pixels, label) in chunk {
                    let (l, ok) = self.accumulate_sample(pixels, label, scale, &s, &mut grad);
                    loss += l;
                    correct += ok as usize;
                }
                Ok((loss, correct, grad))
            })
            .collect();

        let mut total = BatchGradient {
            loss: 0.0,
            correct: 0,
            gradient: Params::zeros(&self.config)?,
        };
        for part in partials {
            let (loss, correct, grad) = part?;
            total.loss += loss;
            total.correct += correct;
            total.gradient.axpy(1.0, &grad);
        }
        total.loss *= scale;
        Ok(total)
    }

    /// Hidden activations of every patch, one row per patch.
    pub fn extract_features<P: AsRef<[f32]> + Sync>(&self, patches: &[P]) -> Result<Array2<f64>> {
        let d = self.config.hidden_nodes;
        let rows: Vec<Vec<f64>> = patches
            .par_iter()
            .map(|p| self.forward(p.as_ref(), false))
            .collect::<Result<_>>()?;
        let mut out = Array2::zeros((rows.len(), d));
        for (mut dst, src) in out.outer_iter_mut().zip(rows) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d = s);
        }
        Ok(out)
    }

    pub fn accuracy(&self, data: &LabeledPatches) -> Result<f64> {
        if data.is_empty() {
            return Ok(0.0);
        }
        let correct: Vec<bool> = (0..data.len())
            .into_par_iter()
            .map(|i| {
                let (px, label) = data.get(i);
                self.predict(px).map(|p| p == label)
            })
            .collect::<Result<_>>()?;
        Ok(correct.iter().filter(|&&c| c).count() as f64 / data.len() as f64)
    }
}

#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub loss: f64,
    pub correct: usize,
    pub gradient: Params,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Patches stored contiguously with their class labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledPatches {
    pixels: Vec<f32>,
    labels: Vec<usize>,
}

impl LabeledPatches {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, pixels: &[f32], label: usize) -> Result<()> {
        if pixels.len() != PATCH_LEN {
            return Err(Error::DimensionMismatch {
                expected: PATCH_LEN,
                actual: pixels.len(),
            });
        }
        self.pixels.extend_from_slice(pixels);
        self.labels.push(label);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize) -> (&[f32], usize) {
        (&self.pixels[i * PATCH_LEN..(i + 1) * PATCH_LEN], self.labels[i])
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub momentum: f64,
    /// Accuracy of the predictions made while training through the epoch.
    pub train_accuracy: f64,
    pub held_out_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: CnnModel,
    pub log: Vec<EpochStats>,
}

/// One optimiser step. With `momentum > 0` this is Nesterov momentum in the
/// form `v ← m v − lr ∇L(w + m v); w ← w + v`; with `momentum == 0` it is plain SGD.
pub fn sgd_step(
    model: &mut CnnModel,
    velocity: &mut Params,
    batch: &[(&[f32], usize)],
    learning_rate: f64,
    momentum: f64,
) -> Result<BatchGradient> {
    if momentum > 0.0 {
        let mut lookahead = model.clone();
        lookahead.params.axpy(momentum, velocity);
        let step = lookahead.loss_and_gradients(batch)?;
        velocity.scale(momentum);
        velocity.axpy(-learning_rate, &step.gradient);
        model.params.axpy(1.0, velocity);
        Ok(step)
    } else {
        let step = model.loss_and_gradients(batch)?;
        model.params.axpy(-learning_rate, &step.gradient);
        Ok(step)
    }
}

/// Trains from scratch. Momentum is applied during the first
/// `momentum_epochs` epochs and plain SGD afterwards.
pub fn train(
    config: CnnConfig,
    schedule: &TrainSchedule,
    data: &LabeledPatches,
    held_out: &LabeledPatches,
) -> Result<TrainOutcome> {
    schedule.validate()?;
    config.shapes()?;
    if data.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    if let Some(&label) = data.labels().iter().find(|&&l| l >= config.num_classes) {
        return Err(Error::LabelOutOfRange {
            label,
            classes: config.num_classes,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut model = CnnModel::init(config, &mut rng)?;
    let mut velocity = Params::zeros(&config)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(schedule.epochs);

    for epoch in 1..=schedule.epochs {
        let momentum = if epoch <= schedule.momentum_epochs {
            schedule.nesterov_momentum
        } else {
            0.0
        };
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, idx) in order.chunks(schedule.batch_size).enumerate() {
            let batch: Vec<(&[f32], usize)> = idx.iter().map(|&i| data.get(i)).collect();
            let step = sgd_step(&mut model, &mut velocity, &batch, schedule.learning_rate, momentum)?;
            if !step.loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    loss: step.loss,
                });
            }
            loss_sum += step.loss * batch.len() as f64;
            correct += step.correct;
        }
        if !model.params.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: order.len().div_ceil(schedule.batch_size),
                loss: f64::NAN,
            });
        }
        let held_out_accuracy = if held_out.is_empty() {
            None
        } else {
            Some(model.accuracy(held_out)?)
        };
        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / data.len() as f64,
            momentum,
            train_accuracy: correct as f64 / data.len() as f64,
            held_out_accuracy,
        };
        log::info!(
            "epoch {epoch}: loss {:.4}, train acc {:.3}, held-out acc {}",
            stats.mean_loss,
            stats.train_accuracy,
            held_out_accuracy.map_or("-".to_string(), |a| format!("{a:.3}"))
        );
        log.push(stats);
    }
    model.head_discardable = true;
    Ok(TrainOutcome { model, log })
}
