//! Dictionaries for encoding: a diagonal-covariance GMM trained by EM and a
//! mini-batch k-means codebook.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows per E-step work unit; fixed so the reduction order is independent of
/// the thread count.
const ESTEP_CHUNK: usize = 256;
/// Components whose soft count falls below this are re-seeded.
const STARVATION_COUNT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub weights: Array1<f64>,
    /// `K x D`
    pub means: Array2<f64>,
    /// `K x D`, diagonal of each covariance matrix
    pub variances: Array2<f64>,
}

impl GmmModel {
    pub fn new(weights: Array1<f64>, means: Array2<f64>, variances: Array2<f64>) -> Result<Self> {
        let k = weights.len();
        if means.nrows() != k || variances.nrows() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: means.nrows().min(variances.nrows()),
            });
        }
        if means.ncols() != variances.ncols() {
            return Err(Error::DimensionMismatch {
                expected: means.ncols(),
                actual: variances.ncols(),
            });
        }
        if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::Config("GMM weights must be positive".into()));
        }
        if variances.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Config("GMM variances must be positive".into()));
        }
        if means.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("GMM means"));
        }
        Ok(Self {
            weights,
            means,
            variances,
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    fn log_norms(&self) -> Vec<f64> {
        self.variances
            .outer_iter()
            .zip(self.weights.iter())
            .map(|(var, &w)| w.ln() - 0.5 * var.iter().map(|v| (2.0 * PI * v).ln()).sum::<f64>())
            .collect()
    }

    /// Precomputed per-component terms for repeated density evaluation.
    pub fn scorer(&self) -> GmmScorer<'_> {
        GmmScorer {
            model: self,
            log_norms: self.log_norms(),
            inv_var: self.variances.mapv(|v| 1.0 / v),
        }
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: d,
            });
        }
        Ok(())
    }
}

pub struct GmmScorer<'a> {
    model: &'a GmmModel,
    log_norms: Vec<f64>,
    inv_var: Array2<f64>,
}

impl GmmScorer<'_> {
    /// `log(w_k g_k(x))` for every component.
    pub fn log_weighted(&self, x: ArrayView1<f64>, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let mu = self.model.means.row(k);
            let iv = self.inv_var.row(k);
            let mut q = 0.0;
            for d in 0..x.len() {
                let diff = x[d] - mu[d];
                q += diff * diff * iv[d];
            }
            *o = self.log_norms[k] - 0.5 * q;
        }
    }
}

/// `log Σ exp(v)`, stable for large magnitudes.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Mean per-sample log mixture density.
pub fn log_likelihood(model: &GmmModel, x: ArrayView2<f64>) -> Result<f64> {
    model.check_dim(x.ncols())?;
    if x.nrows() == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let scorer = model.scorer();
    let mut buf = vec![0.0; model.components()];
    let mut total = 0.0;
    for row in x.outer_iter() {
        scorer.log_weighted(row, &mut buf);
        total += log_sum_exp(&buf);
    }
    Ok(total / x.nrows() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmOptions {
    pub components: usize,
    pub max_iters: usize,
    /// Stop when the mean log-likelihood gains less than this.
    pub tol: f64,
    pub seed: u64,
    pub kmeans_iters: usize,
    /// Variance floor as a fraction of the mean per-dimension data variance.
    pub variance_floor_ratio: f64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self {
            components: 100,
            max_iters: 200,
            tol: 1e-5,
            seed: 0,
            kmeans_iters: 10,
            variance_floor_ratio: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Mean log-likelihood before every M-step, plus the final model's.
    pub log_likelihoods: Vec<f64>,
    pub converged: bool,
    /// `(iteration, component)` for every starved component that was re-seeded.
    pub reseeds: Vec<(usize, usize)>,
    pub variance_floor: f64,
}

struct SuffStats {
    counts: Vec<f64>,
    sum_x: Array2<f64>,
    sum_xx: Array2<f64>,
    log_lik: f64,
}

impl SuffStats {
    fn zeros(k: usize, d: usize) -> Self {
        Self {
            counts: vec![0.0; k],
            sum_x: Array2::zeros((k, d)),
            sum_xx: Array2::zeros((k, d)),
            log_lik: 0.0,
        }
    }

    fn merge(&mut self, other: &SuffStats) {
        self.counts
            .iter_mut()
            .zip(&other.counts)
            .for_each(|(a, b)| *a += b);
        self.sum_x += &other.sum_x;
        self.sum_xx += &other.sum_xx;
        self.log_lik += other.log_lik;
    }
}

fn e_step(model: &GmmModel, x: ArrayView2<f64>) -> SuffStats {
    let (k, d) = (model.components(), model.dim());
    let scorer = model.scorer();
    let starts: Vec<usize> = (0..x.nrows()).step_by(ESTEP_CHUNK).collect();
    let partials: Vec<SuffStats> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + ESTEP_CHUNK).min(x.nrows());
            let mut s = SuffStats::zeros(k, d);
            let mut buf = vec![0.0; k];
            for row in x.slice(ndarray::s![start..end, ..]).outer_iter() {
                scorer.log_weighted(row, &mut buf);
                let lse = log_sum_exp(&buf);
                s.log_lik += lse;
                for c in 0..k {
                    let g = (buf[c] - lse).exp();
                    if g == 0.0 {
                        continue;
                    }
                    s.counts[c] += g;
                    let mut sx = s.sum_x.row_mut(c);
                    for j in 0..d {
                        sx[j] += g * row[j];
                    }
                    let mut sxx = s.sum_xx.row_mut(c);
                    for j in 0..d {
                        sxx[j] += g * row[j] * row[j];
                    }
                }
            }
            s
        })
        .collect();
    let mut total = SuffStats::zeros(k, d);
    for p in &partials {
        total.merge(p);
    }
    total
}

fn data_variance(x: ArrayView2<f64>) -> Array1<f64> {
    x.var_axis(Axis(0), 0.0)
}

/// Fits a `K`-component diagonal GMM by EM, initialised from seeded k-means.
pub fn fit_gmm(x: ArrayView2<f64>, opts: &GmmOptions) -> Result<GmmFit> {
    let (t, d) = x.dim();
    let k = opts.components;
    if k == 0 {
        return Err(Error::Config("GMM needs at least one component".into()));
    }
    if t < k {
        return Err(Error::TooFewSamples { needed: k, got: t });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("GMM training data"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let global_var = data_variance(x);
    let floor = (opts.variance_floor_ratio * global_var.mean().unwrap_or(0.0)).max(1e-10);
    let floored_global = global_var.mapv(|v| v.max(floor));

    // k-means initialisation
    let km = fit_kmeans(x, k, opts.kmeans_iters, &mut rng)?;
    let assign: Vec<usize> = x.outer_iter().map(|row| km.nearest(row).0).collect();
    let mut counts = vec![0usize; k];
    let mut sums = Array2::<f64>::zeros((k, d));
    let mut sq = Array2::<f64>::zeros((k, d));
    for (row, &a) in x.outer_iter().zip(&assign) {
        counts[a] += 1;
        let mut s = sums.row_mut(a);
        s += &row;
        let mut q = sq.row_mut(a);
        q += &row.mapv(|v| v * v);
    }
    let mut weights = Array1::<f64>::zeros(k);
    let mut means = km.centers.clone();
    let mut variances = Array2::<f64>::zeros((k, d));
    for c in 0..k {
        weights[c] = counts[c].max(1) as f64;
        if counts[c] >= 2 {
            let n = counts[c] as f64;
            for j in 0..d {
                let m = sums[[c, j]] / n;
                means[[c, j]] = m;
                variances[[c, j]] = (sq[[c, j]] / n - m * m).max(floor);
            }
        } else {
            variances.row_mut(c).assign(&floored_global);
        }
    }
    weights /= weights.sum();
    let mut model = GmmModel {
        weights,
        means,
        variances,
    };

    let mut lls = Vec::new();
    let mut reseeds = Vec::new();
    let mut converged = false;
    let mut reseeded_last = false;
    for iter in 0..opts.max_iters {
        let stats = e_step(&model, x);
        let ll = stats.log_lik / t as f64;
        if !ll.is_finite() {
            return Err(Error::NonFinite("GMM log-likelihood"));
        }
        if let Some(&prev) = lls.last() {
            if !reseeded_last && ll - prev < opts.tol {
                lls.push(ll);
                converged = true;
                break;
            }
        }
        lls.push(ll);

        reseeded_last = false;
        for c in 0..k {
            let n = stats.counts[c];
            if n < STARVATION_COUNT {
                let pick = rng.gen_range(0..t);
                log::warn!("GMM component {c} starved at iteration {iter}; re-seeding at sample {pick}");
                model.means.row_mut(c).assign(&x.row(pick));
                model.variances.row_mut(c).assign(&floored_global);
                model.weights[c] = 1.0 / t as f64;
                reseeds.push((iter, c));
                reseeded_last = true;
                continue;
            }
            model.weights[c] = n / t as f64;
            for j in 0..d {
                let m = stats.sum_x[[c, j]] / n;
                model.means[[c, j]] = m;
                model.variances[[c, j]] = (stats.sum_xx[[c, j]] / n - m * m).max(floor);
            }
        }
        let wsum = model.weights.sum();
        model.weights /= wsum;
    }
    if !converged {
        lls.push(log_likelihood(&model, x)?);
    }

    Ok(GmmFit {
        model,
        log_likelihoods: lls,
        converged,
        reseeds,
        variance_floor: floor,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansModel {
    /// `K x D`
    pub centers: Array2<f64>,
}

impl KmeansModel {
    pub fn new(centers: Array2<f64>) -> Result<Self> {
        if centers.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("k-means centers"));
        }
        Ok(Self { centers })
    }

    pub fn components(&self) -> usize {
        self.centers.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    /// Index of the closest center (ties to the lower index) and its squared distance.
    pub fn nearest(&self, x: ArrayView1<f64>) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (k, c) in self.centers.outer_iter().enumerate() {
            let d2 = sq_dist(x, c);
            if d2 < best.1 {
                best = (k, d2);
            }
        }
        best
    }

    /// Mean squared distance of every row to its nearest center.
    pub fn quantization_error(&self, x: ArrayView2<f64>) -> f64 {
        x.outer_iter().map(|r| self.nearest(r).1).sum::<f64>() / x.nrows().max(1) as f64
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding.
fn kmeans_pp<R: Rng>(x: ArrayView2<f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let t = x.nrows();
    let mut centers = Array2::zeros((k, x.ncols()));
    let first = rng.gen_range(0..t);
    centers.row_mut(0).assign(&x.row(first));
    let mut d2: Vec<f64> = x.outer_iter().map(|r| sq_dist(r, x.row(first))).collect();
    for c in 1..k {
        let pick = match WeightedIndex::new(&d2) {
            Ok(dist) => dist.sample(rng),
            // all remaining points coincide with chosen centers
            Err(_) => rng.gen_range(0..t),
        };
        centers.row_mut(c).assign(&x.row(pick));
        for (i, r) in x.outer_iter().enumerate() {
            let nd = sq_dist(r, centers.row(c));
            if nd < d2[i] {
                d2[i] = nd;
            }
        }
    }
    centers
}

/// Lloyd's k-means with k-means++ seeding. Empty clusters keep their center.
pub fn fit_kmeans<R: Rng>(x: ArrayView2<f64>, k: usize, iters: usize, rng: &mut R) -> Result<KmeansModel> {
    let (t, d) = x.dim();
    if k == 0 || t < k {
        return Err(Error::TooFewSamples { needed: k.max(1), got: t });
    }
    let mut model = KmeansModel {
        centers: kmeans_pp(x, k, rng),
    };
    for _ in 0..iters {
        let assign: Vec<usize> = (0..t)
            .into_par_iter()
            .map(|i| model.nearest(x.row(i)).0)
            .collect();
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (row, &a) in x.outer_iter().zip(&assign) {
            counts[a] += 1;
            let mut s = sums.row_mut(a);
            s += &row;
        }
        let mut moved = false;
        for c in 0..k {
            if counts[c] > 0 {
                let new = sums.row(c).mapv(|v| v / counts[c] as f64);
                if new != model.centers.row(c) {
                    moved = true;
                }
                model.centers.row_mut(c).assign(&new);
            }
        }
        if !moved {
            break;
        }
    }
    Ok(model)
}

/// Mini-batch k-means: k-means++ seeding, then per-sample center updates with
/// learning rate `1 / count`.
pub fn fit_minibatch_kmeans(
    x: ArrayView2<f64>,
    k: usize,
    batch_size: usize,
    iters: usize,
    seed: u64,
) -> Result<KmeansModel> {
    let t = x.nrows();
    if k == 0 || t < k {
        return Err(Error::TooFewSamples { needed: k.max(1), got: t });
    }
    if batch_size == 0 {
        return Err(Error::Config("k-means batch size must be >= 1".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("k-means training data"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = KmeansModel {
        centers: kmeans_pp(x, k, &mut rng),
    };
    let mut counts = vec![0u64; k];
    for _ in 0..iters {
        let batch: Vec<usize> = (0..batch_size).map(|_| rng.gen_range(0..t)).collect();
        let assign: Vec<usize> = batch.iter().map(|&i| model.nearest(x.row(i)).0).collect();
        for (&i, &c) in batch.iter().zip(&assign) {
            counts[c] += 1;
            let eta = 1.0 / counts[c] as f64;
            let mut center = model.centers.row_mut(c);
            center.zip_mut_with(&x.row(i), |m, &v| *m = (1.0 - eta) * *m + eta * v);
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand_distr::Normal;

    fn two_clusters(seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Normal::new(-5.0, 0.5).unwrap();
        let b = Normal::new(5.0, 0.5).unwrap();
        let mut v: Vec<f64> = (0..500).map(|_| a.sample(&mut rng)).collect();
        v.extend((0..500).map(|_| b.sample(&mut rng)));
        Array2::from_shape_vec((1000, 1), v).unwrap()
    }

    #[test]
    fn recovers_two_planted_clusters() {
        let x = two_clusters(1);
        let opts = GmmOptions {
            components: 2,
            ..Default::default()
        };
        let fit = fit_gmm(x.view(), &opts).unwrap();
        let mut means: Vec<f64> = fit.model.means.column(0).to_vec();
        means.sort_by(f64::total_cmp);
        // sample-statistics oracle
        let lo = x.slice(ndarray::s![..500, 0]).mean().unwrap();
        let hi = x.slice(ndarray::s![500.., 0]).mean().unwrap();
        assert!((means[0] - lo).abs() < 1e-3 && (means[1] - hi).abs() < 1e-3);
        assert!((means[0] + 5.0).abs() < 0.1 && (means[1] - 5.0).abs() < 0.1);
        for w in fit.model.weights.iter() {
            assert!((w - 0.5).abs() < 0.05);
        }
        for pair in fit.log_likelihoods.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-8);
        }
    }

    #[test]
    fn single_component_is_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_fn((300, 3), |(_, j)| rng.gen_range(-1.0..1.0) * (j + 1) as f64);
        let fit = fit_gmm(
            x.view(),
            &GmmOptions {
                components: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let mean = x.mean_axis(Axis(0)).unwrap();
        let var = x.var_axis(Axis(0), 0.0);
        assert!((fit.model.weights[0] - 1.0).abs() < 1e-12);
        for j in 0..3 {
            assert!((fit.model.means[[0, j]] - mean[j]).abs() < 1e-12);
            assert!((fit.model.variances[[0, j]] - var[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn fitting_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((400, 4), |_| rng.gen_range(-2.0..2.0));
        let opts = GmmOptions {
            components: 5,
            max_iters: 30,
            seed: 9,
            ..Default::default()
        };
        let a = fit_gmm(x.view(), &opts).unwrap();
        let b = fit_gmm(x.view(), &opts).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.log_likelihoods, b.log_likelihoods);
    }

    #[test]
    fn variance_floor_is_respected() {
        // a tight cluster next to a broad one
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut v: Vec<f64> = (0..200).map(|_| 3.0 + rng.gen_range(-1e-7..1e-7)).collect();
        v.extend((0..200).map(|_| rng.gen_range(-10.0..0.0)));
        let x = Array2::from_shape_vec((400, 1), v).unwrap();
        let fit = fit_gmm(
            x.view(),
            &GmmOptions {
                components: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(fit.model.variances.iter().all(|&v| v >= fit.variance_floor));
        assert!((fit.model.weights.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn too_few_samples() {
        let x = Array2::<f64>::zeros((3, 2));
        let opts = GmmOptions {
            components: 4,
            ..Default::default()
        };
        assert!(matches!(
            fit_gmm(x.view(), &opts),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn log_density_at_mean() {
        let d = 5;
        let m = GmmModel::new(array![1.0], Array2::zeros((1, d)), Array2::ones((1, d))).unwrap();
        let ll = log_likelihood(&m, Array2::zeros((1, d)).view()).unwrap();
        assert!((ll + 0.5 * d as f64 * (2.0 * PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn outlier_lowers_mean_log_likelihood() {
        let m = GmmModel::new(array![0.5, 0.5], array![[0.0], [1.0]], array![[1.0], [1.0]]).unwrap();
        let x = array![[0.1], [0.9], [0.5]];
        let mut with_outlier: Vec<f64> = x.iter().copied().collect();
        with_outlier.push(40.0);
        let y = Array2::from_shape_vec((4, 1), with_outlier).unwrap();
        assert!(log_likelihood(&m, y.view()).unwrap() < log_likelihood(&m, x.view()).unwrap());
    }

    #[test]
    fn log_likelihood_matches_direct_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (k, d, t) = (3, 4, 20);
        let w = array![0.2, 0.5, 0.3];
        let mu = Array2::from_shape_fn((k, d), |_| rng.gen_range(-1.0..1.0));
        let var = Array2::from_shape_fn((k, d), |_| rng.gen_range(0.5..2.0));
        let x = Array2::from_shape_fn((t, d), |_| rng.gen_range(-2.0..2.0));
        let m = GmmModel::new(w.clone(), mu.clone(), var.clone()).unwrap();
        let mut naive = 0.0;
        for i in 0..t {
            let mut p = 0.0;
            for c in 0..k {
                let mut g = 1.0;
                for j in 0..d {
                    let diff = x[[i, j]] - mu[[c, j]];
                    g *= (-diff * diff / (2.0 * var[[c, j]])).exp() / (2.0 * PI * var[[c, j]]).sqrt();
                }
                p += w[c] * g;
            }
            naive += p.ln();
        }
        naive /= t as f64;
        assert!((log_likelihood(&m, x.view()).unwrap() - naive).abs() < 1e-8);
    }

    #[test]
    fn dimension_mismatch() {
        let m = GmmModel::new(array![1.0], Array2::zeros((1, 2)), Array2::ones((1, 2))).unwrap();
        assert!(log_likelihood(&m, Array2::zeros((1, 3)).view()).is_err());
    }

    #[test]
    fn minibatch_kmeans_finds_repeated_points() {
        let pts = array![[0.0, 0.0], [5.0, 1.0], [-3.0, 4.0]];
        let x = Array2::from_shape_fn((300, 2), |(i, j)| pts[[i % 3, j]]);
        let km = fit_minibatch_kmeans(x.view(), 3, 32, 50, 1).unwrap();
        let mut found: Vec<Vec<f64>> = km.centers.outer_iter().map(|r| r.to_vec()).collect();
        found.sort_by(|a, b| a[0].total_cmp(&b[0]));
        let mut want: Vec<Vec<f64>> = pts.outer_iter().map(|r| r.to_vec()).collect();
        want.sort_by(|a, b| a[0].total_cmp(&b[0]));
        for (f, w) in found.iter().zip(&want) {
            for (a, b) in f.iter().zip(w) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn minibatch_kmeans_beats_random_centers() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Array2::from_shape_fn((1000, 3), |_| rng.gen_range(-1.0..1.0));
        let km = fit_minibatch_kmeans(x.view(), 8, 64, 100, 2).unwrap();
        // oracle: centers at the means of a random assignment
        let mut sums = Array2::<f64>::zeros((8, 3));
        let mut counts = [0usize; 8];
        for row in x.outer_iter() {
            let c = rng.gen_range(0..8);
            counts[c] += 1;
            let mut s = sums.row_mut(c);
            s += &row;
        }
        for c in 0..8 {
            let mut s = sums.row_mut(c);
            s /= counts[c].max(1) as f64;
        }
        let baseline = KmeansModel::new(sums).unwrap();
        assert!(km.quantization_error(x.view()) <= baseline.quantization_error(x.view()));
    }

    #[test]
    fn minibatch_kmeans_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Array2::from_shape_fn((200, 2), |_| rng.gen_range(-1.0..1.0));
        let a = fit_minibatch_kmeans(x.view(), 4, 16, 20, 3).unwrap();
        let b = fit_minibatch_kmeans(x.view(), 4, 16, 20, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nearest_breaks_ties_to_lower_index() {
        let km = KmeansModel::new(array![[1.0], [-1.0]]).unwrap();
        assert_eq!(km.nearest(array![0.0].view()).0, 0);
    }
}
