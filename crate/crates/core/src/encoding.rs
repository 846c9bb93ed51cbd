//! Aggregation of a document's local descriptors into one global vector.
//!
//! The main encoder is the mean-adapted GMM supervector: posteriors against
//! the dictionary GMM (truncated to the `top_c` largest per descriptor), MAP
//! adaptation of the means with relevance factor `tau`, and component-wise
//! scaling `sqrt(w_k) * sigma_k^(-1/2) * mu_k` where `sigma_k` is the diagonal
//! covariance of component `k`. VLAD, Fisher vectors and a power-normalized
//! supervector are provided as baselines.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{log_sum_exp, GmmModel, KmeansModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Kullback-Leibler kernel scaling of the adapted means.
    Kl,
    /// Signed power (square root by default) followed by L2.
    SsrL2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub tau: f64,
    pub top_c: usize,
    pub renormalize_truncated: bool,
    pub normalization: Normalization,
    pub power: f64,
}

impl Default for EncoderParams {
    fn default() -> Self {
        Self {
            tau: 68.0,
            top_c: 10,
            renormalize_truncated: true,
            normalization: Normalization::Kl,
            power: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    SupervectorKl,
    SupervectorSsr,
    Vlad,
    Fisher,
}

impl EncoderKind {
    pub fn tag(self) -> u8 {
        match self {
            EncoderKind::SupervectorKl => 1,
            EncoderKind::SupervectorSsr => 2,
            EncoderKind::Vlad => 3,
            EncoderKind::Fisher => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            1 => EncoderKind::SupervectorKl,
            2 => EncoderKind::SupervectorSsr,
            3 => EncoderKind::Vlad,
            4 => EncoderKind::Fisher,
            _ => return None,
        })
    }

    pub fn uses_kmeans(self) -> bool {
        self == EncoderKind::Vlad
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDescriptor {
    pub vector: Vec<f64>,
    pub doc_id: String,
    pub writer_id: String,
    pub encoder: EncoderKind,
}

/// Row-sparse posterior matrix: each row lists `(component, probability)` in
/// ascending component order.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriors {
    pub components: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl Posteriors {
    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows.len(), self.components));
        for (t, row) in self.rows.iter().enumerate() {
            for &(k, g) in row {
                out[[t, k]] = g;
            }
        }
        out
    }
}

fn check_dims(expected: usize, x: ArrayView2<f64>) -> Result<()> {
    if x.ncols() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: x.ncols(),
        });
    }
    Ok(())
}

/// `gamma_t(k) = w_k g_k(x_t) / sum_j w_j g_j(x_t)`, keeping only the `top_c`
/// largest entries per row (ties to the lower index). With `renormalize` the
/// kept entries are rescaled to sum to one.
pub fn posteriors(gmm: &GmmModel, x: ArrayView2<f64>, top_c: usize, renormalize: bool) -> Result<Posteriors> {
    check_dims(gmm.dim(), x)?;
    let k = gmm.components();
    if top_c == 0 || top_c > k {
        return Err(Error::Config(format!("top_c must be in 1..={k}, got {top_c}")));
    }
    let scorer = gmm.scorer();
    let mut buf = vec![0.0; k];
    let mut rows = Vec::with_capacity(x.nrows());
    for row in x.outer_iter() {
        scorer.log_weighted(row, &mut buf);
        let lse = log_sum_exp(&buf);
        let mut entries: Vec<(usize, f64)> = buf.iter().enumerate().map(|(c, &l)| (c, (l - lse).exp())).collect();
        if top_c < k {
            entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            entries.truncate(top_c);
            entries.sort_by_key(|e| e.0);
        }
        if renormalize {
            let sum: f64 = entries.iter().map(|e| e.1).sum();
            if sum > 0.0 {
                entries.iter_mut().for_each(|e| e.1 /= sum);
            }
        }
        rows.push(entries);
    }
    Ok(Posteriors { components: k, rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapAdaptation {
    /// `K x D` adapted means.
    pub means: Array2<f64>,
    /// Soft counts `n_k`.
    pub counts: Vec<f64>,
    /// `alpha_k = n_k / (n_k + tau)`.
    pub alphas: Vec<f64>,
}

/// Mean-only MAP adaptation: `mu~_k = alpha_k mu^_k + (1 - alpha_k) mu_k`.
/// Components that receive no mass keep the dictionary mean.
pub fn map_adapt_means(gmm: &GmmModel, x: ArrayView2<f64>, gamma: &Posteriors, tau: f64) -> Result<MapAdaptation> {
    check_dims(gmm.dim(), x)?;
    if gamma.rows.len() != x.nrows() || gamma.components != gmm.components() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            actual: gamma.rows.len(),
        });
    }
    if !(tau >= 0.0) {
        return Err(Error::Config(format!("relevance factor must be >= 0, got {tau}")));
    }
    let (k, d) = (gmm.components(), gmm.dim());
    let mut counts = vec![0.0; k];
    let mut first = Array2::<f64>::zeros((k, d));
    for (row, post) in x.outer_iter().zip(&gamma.rows) {
        for &(c, g) in post {
            counts[c] += g;
            let mut acc = first.row_mut(c);
            acc.zip_mut_with(&row, |a, &v| *a += g * v);
        }
    }
    let mut means = gmm.means.clone();
    let mut alphas = vec![0.0; k];
    for c in 0..k {
        let n = counts[c];
        if n <= 0.0 {
            continue;
        }
        let alpha = n / (n + tau);
        alphas[c] = alpha;
        for j in 0..d {
            let mu_hat = first[[c, j]] / n;
            means[[c, j]] = alpha * mu_hat + (1.0 - alpha) * gmm.means[[c, j]];
        }
    }
    Ok(MapAdaptation { means, counts, alphas })
}

/// `sign(v) |v|^power` elementwise, then L2 normalization (zero stays zero).
pub fn power_l2_normalize(v: &mut [f64], power: f64) {
    for x in v.iter_mut() {
        *x = x.signum() * x.abs().powf(power);
        if *x == 0.0 {
            *x = 0.0;
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Concatenates the adapted means into a `K·D` supervector and normalizes it.
pub fn supervector(adapted: &Array2<f64>, gmm: &GmmModel, params: &EncoderParams) -> Result<Vec<f64>> {
    if adapted.dim() != gmm.means.dim() {
        return Err(Error::DimensionMismatch {
            expected: gmm.means.len(),
            actual: adapted.len(),
        });
    }
    let mut out = Vec::with_capacity(adapted.len());
    match params.normalization {
        Normalization::Kl => {
            for (c, (mu, var)) in adapted.outer_iter().zip(gmm.variances.outer_iter()).enumerate() {
                let sw = gmm.weights[c].sqrt();
                for (m, v) in mu.iter().zip(var.iter()) {
                    if !(*v > 0.0) {
                        return Err(Error::Config(format!("non-positive variance in component {c}")));
                    }
                    out.push(sw * m / v.sqrt());
                }
            }
        }
        Normalization::SsrL2 => {
            out.extend(adapted.iter());
            power_l2_normalize(&mut out, params.power);
        }
    }
    Ok(out)
}

/// Posteriors, MAP adaptation and supervector normalization in one go.
pub fn encode_supervector(gmm: &GmmModel, x: ArrayView2<f64>, params: &EncoderParams) -> Result<Vec<f64>> {
    let gamma = posteriors(gmm, x, params.top_c, params.renormalize_truncated)?;
    let adapted = map_adapt_means(gmm, x, &gamma, params.tau)?;
    supervector(&adapted.means, gmm, params)
}

/// Unnormalized VLAD: per-center sums of residuals of the descriptors whose
/// nearest center it is.
pub fn vlad_raw(kmeans: &KmeansModel, x: ArrayView2<f64>) -> Result<Vec<f64>> {
    check_dims(kmeans.dim(), x)?;
    let (k, d) = (kmeans.components(), kmeans.dim());
    let mut acc = Array2::<f64>::zeros((k, d));
    for row in x.outer_iter() {
        let (c, _) = kmeans.nearest(row);
        let center = kmeans.centers.row(c);
        let mut block = acc.row_mut(c);
        for j in 0..d {
            block[j] += row[j] - center[j];
        }
    }
    Ok(acc.into_raw_vec_and_offset().0)
}

/// VLAD with signed-square-root and L2 normalization.
pub fn encode_vlad(kmeans: &KmeansModel, x: ArrayView2<f64>, power: f64) -> Result<Vec<f64>> {
    if x.nrows() == 0 {
        return Err(Error::EmptyDocument(String::new()));
    }
    let mut v = vlad_raw(kmeans, x)?;
    power_l2_normalize(&mut v, power);
    Ok(v)
}

/// Unnormalized Fisher vector: all mean gradients `G^mu_k` followed by all
/// variance gradients `G^sigma_k`, using full posteriors.
pub fn fisher_raw(gmm: &GmmModel, x: ArrayView2<f64>) -> Result<Vec<f64>> {
    if x.nrows() == 0 {
        return Err(Error::EmptyDocument(String::new()));
    }
    let gamma = posteriors(gmm, x, gmm.components(), false)?;
    let (k, d) = (gmm.components(), gmm.dim());
    let t = x.nrows() as f64;
    let std = gmm.variances.mapv(f64::sqrt);
    let mut g_mu = Array2::<f64>::zeros((k, d));
    let mut g_sigma = Array2::<f64>::zeros((k, d));
    for (row, post) in x.outer_iter().zip(&gamma.rows) {
        for &(c, g) in post {
            for j in 0..d {
                let z = (row[j] - gmm.means[[c, j]]) / std[[c, j]];
                g_mu[[c, j]] += g * z;
                g_sigma[[c, j]] += g * (z * z - 1.0);
            }
        }
    }
    for c in 0..k {
        let w = gmm.weights[c];
        let mut m = g_mu.row_mut(c);
        m /= t * w.sqrt();
        let mut s = g_sigma.row_mut(c);
        s /= t * (2.0 * w).sqrt();
    }
    let mut out = g_mu.into_raw_vec_and_offset().0;
    out.extend(g_sigma.into_raw_vec_and_offset().0);
    Ok(out)
}

pub fn encode_fisher(gmm: &GmmModel, x: ArrayView2<f64>, power: f64) -> Result<Vec<f64>> {
    let mut v = fisher_raw(gmm, x)?;
    power_l2_normalize(&mut v, power);
    Ok(v)
}

/// The trained dictionary an encoder needs.
#[derive(Debug, Clone, Copy)]
pub enum Dictionary<'a> {
    Gmm(&'a GmmModel),
    Kmeans(&'a KmeansModel),
}

/// Encodes one document with the chosen encoder.
pub fn encode_document(
    kind: EncoderKind,
    dictionary: Dictionary<'_>,
    x: ArrayView2<f64>,
    params: &EncoderParams,
    doc_id: &str,
    writer_id: &str,
) -> Result<GlobalDescriptor> {
    let vector = match (kind, dictionary) {
        (EncoderKind::SupervectorKl, Dictionary::Gmm(g)) => encode_supervector(
            g,
            x,
            &EncoderParams {
                normalization: Normalization::Kl,
                ..*params
            },
        ),
        (EncoderKind::SupervectorSsr, Dictionary::Gmm(g)) => encode_supervector(
            g,
            x,
            &EncoderParams {
                normalization: Normalization::SsrL2,
                ..*params
            },
        ),
        (EncoderKind::Fisher, Dictionary::Gmm(g)) => encode_fisher(g, x, params.power),
        (EncoderKind::Vlad, Dictionary::Kmeans(km)) => encode_vlad(km, x, params.power),
        (kind, _) => {
            return Err(Error::Config(format!(
                "encoder {kind:?} was given the wrong kind of dictionary"
            )))
        }
    }
    .map_err(|e| match e {
        Error::EmptyDocument(_) => Error::EmptyDocument(doc_id.to_string()),
        other => other,
    })?;
    if vector.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("global descriptor"));
    }
    Ok(GlobalDescriptor {
        vector,
        doc_id: doc_id.to_string(),
        writer_id: writer_id.to_string(),
        encoder: kind,
    })
}
