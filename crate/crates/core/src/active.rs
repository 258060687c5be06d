//! Density-based selection of unlabeled windows.
//!
//! A full-covariance Gaussian mixture is fit to the latents of labeled
//! windows; unlabeled windows whose negative log-likelihood under the mixture
//! stays below a threshold are kept for pretraining.

use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngSeed;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmConfig {
    pub restarts: usize,
    pub max_iter: usize,
    /// Relative log-likelihood change that stops EM.
    pub tol: f64,
    /// Added to every covariance diagonal.
    pub reg: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig {
            restarts: 5,
            max_iter: 200,
            tol: 1e-6,
            reg: 1e-6,
        }
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[[i, i]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Some(l)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    /// `K × H`
    pub means: Array2<f64>,
    pub covariances: Vec<Array2<f64>>,
    /// Total log-likelihood of the fitting data.
    pub log_likelihood: f64,
    pub iterations: usize,
    #[serde(skip)]
    chol: Vec<Array2<f64>>,
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, means: Array2<f64>, covariances: Vec<Array2<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.nrows() != k || covariances.len() != k {
            return Err(Error::invalid("gmm", "weights, means and covariances must agree on K ≥ 1"));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("gmm weights", "must be non-negative and sum to 1"));
        }
        let mut chol = Vec::with_capacity(k);
        for (m, c) in covariances.iter().enumerate() {
            chol.push(cholesky(c).ok_or(Error::SingularCovariance { component: m })?);
        }
        Ok(GmmModel {
            weights,
            means,
            covariances,
            log_likelihood: f64::NAN,
            iterations: 0,
            chol,
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    fn ensure_chol(&mut self) -> Result<()> {
        if self.chol.len() != self.k() {
            self.chol = self
                .covariances
                .iter()
                .enumerate()
                .map(|(m, c)| cholesky(c).ok_or(Error::SingularCovariance { component: m }))
                .collect::<Result<_>>()?;
        }
        Ok(())
    }

    /// Restore derived state after deserialization.
    pub fn prepare(mut self) -> Result<Self> {
        self.chol.clear();
        self.ensure_chol()?;
        Ok(self)
    }

    /// `log α_m + log φ(x | μ_m, Σ_m)` for every component.
    fn component_log_densities(&self, x: ArrayView1<'_, f64>, out: &mut [f64]) {
        let h = self.dim();
        let mut z = vec![0.0; h];
        for m in 0..self.k() {
            let l = &self.chol[m];
            // forward substitution L z = x - μ
            let mut quad = 0.0;
            let mut logdet = 0.0;
            for i in 0..h {
                let mut s = x[i] - self.means[[m, i]];
                for j in 0..i {
                    s -= l[[i, j]] * z[j];
                }
                z[i] = s / l[[i, i]];
                quad += z[i] * z[i];
                logdet += l[[i, i]].ln();
            }
            out[m] = self.weights[m].ln() - 0.5 * (h as f64 * LN_2PI + quad) - logdet;
        }
    }

    /// `-log Σ_m α_m φ(x | μ_m, Σ_m)`.
    pub fn nll(&self, x: ArrayView1<'_, f64>) -> f64 {
        assert_eq!(x.len(), self.dim(), "latent dimension");
        assert_eq!(self.chol.len(), self.k(), "call `prepare` after deserializing a model");
        let mut buf = vec![0.0; self.k()];
        self.component_log_densities(x, &mut buf);
        -log_sum_exp(&buf)
    }

    pub fn nll_all(&self, xs: ArrayView2<'_, f64>) -> Vec<f64> {
        xs.outer_iter().map(|x| self.nll(x)).collect()
    }

    pub fn param_count(&self) -> usize {
        gmm_param_count(self.k(), self.dim())
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn gmm_param_count(k: usize, h: usize) -> usize {
    (k - 1) + k * h + k * h * (h + 1) / 2
}

pub fn aic(log_likelihood: f64, k: usize, h: usize) -> f64 {
    2.0 * gmm_param_count(k, h) as f64 - 2.0 * log_likelihood
}

pub fn bic(log_likelihood: f64, k: usize, h: usize, n: usize) -> f64 {
    gmm_param_count(k, h) as f64 * (n as f64).ln() - 2.0 * log_likelihood
}

/// Log-likelihood after each EM iteration of one restart.
#[derive(Debug, Clone, PartialEq)]
pub struct EmTrace {
    pub log_likelihoods: Vec<f64>,
}

pub fn fit_gmm(latents: ArrayView2<'_, f64>, k: usize, seed: RngSeed) -> Result<GmmModel> {
    fit_gmm_with(latents, k, &GmmConfig::default(), seed).map(|(m, _)| m)
}

/// Best of `cfg.restarts` EM runs by final log-likelihood, with every run's trace.
pub fn fit_gmm_with(latents: ArrayView2<'_, f64>, k: usize, cfg: &GmmConfig, seed: RngSeed) -> Result<(GmmModel, Vec<EmTrace>)> {
    let (n, h) = latents.dim();
    if k == 0 {
        return Err(Error::invalid("k", "must be at least 1"));
    }
    if n <= k * h {
        return Err(Error::InsufficientData {
            what: "mixture fit",
            reason: format!("{n} samples for K={k} components in {h} dimensions; need more than {}", k * h),
        });
    }
    if latents.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("latents".into()));
    }
    let mut best: Option<GmmModel> = None;
    let mut traces = Vec::with_capacity(cfg.restarts);
    let mut last_err = None;
    for r in 0..cfg.restarts.max(1) {
        match em_run(latents, k, cfg, seed.derive(&[0x6d, r as u64])) {
            Ok((model, trace)) => {
                traces.push(trace);
                if best.as_ref().is_none_or(|b| model.log_likelihood > b.log_likelihood) {
                    best = Some(model);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some(m) => Ok((m, traces)),
        None => Err(last_err.unwrap_or(Error::SingularCovariance { component: 0 })),
    }
}

fn em_run(x: ArrayView2<'_, f64>, k: usize, cfg: &GmmConfig, seed: RngSeed) -> Result<(GmmModel, EmTrace)> {
    let (n, h) = x.dim();
    let mut rng = seed.rng();
    // k-means++ style seeding of the means
    let mut centers: Vec<usize> = vec![rng.random_range(0..n)];
    let mut d2 = vec![f64::INFINITY; n];
    while centers.len() < k {
        let last = x.row(*centers.last().expect("non-empty"));
        for (i, row) in x.outer_iter().enumerate() {
            let d: f64 = row.iter().zip(last.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            d2[i] = d2[i].min(d);
        }
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(next);
    }
    let mut means = Array2::zeros((k, h));
    for (m, &c) in centers.iter().enumerate() {
        means.row_mut(m).assign(&x.row(c));
    }
    let global_mean = x.mean_axis(Axis(0)).expect("non-empty");
    let centered = &x - &global_mean;
    let mut global_cov = centered.t().dot(&centered) / n as f64;
    for i in 0..h {
        global_cov[[i, i]] += cfg.reg;
    }
    let mut model = GmmModel::new(vec![1.0 / k as f64; k], means, vec![global_cov; k])?;

    let mut resp = Array2::zeros((n, k));
    let mut buf = vec![0.0; k];
    let mut trace = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    for it in 0..cfg.max_iter {
        // E-step
        let mut ll = 0.0;
        for (i, row) in x.outer_iter().enumerate() {
            model.component_log_densities(row, &mut buf);
            let lse = log_sum_exp(&buf);
            ll += lse;
            for m in 0..k {
                resp[[i, m]] = (buf[m] - lse).exp();
            }
        }
        if it > 0 {
            trace.push(ll);
        }
        model.log_likelihood = ll;
        model.iterations = it;
        if it > 0 && (ll - prev).abs() <= cfg.tol * prev.abs().max(1e-300) {
            break;
        }
        prev = ll;
        // M-step
        let nk = resp.sum_axis(Axis(0));
        let mut means = resp.t().dot(&x);
        let mut covs = Vec::with_capacity(k);
        for m in 0..k {
            let w = nk[m].max(1e-300);
            means.row_mut(m).mapv_inplace(|v| v / w);
            let d = &x - &means.row(m);
            let weighted = &d * &resp.column(m).insert_axis(Axis(1));
            let mut cov = weighted.t().dot(&d) / w;
            for i in 0..h {
                cov[[i, i]] += cfg.reg;
            }
            covs.push(cov);
        }
        let weights: Vec<f64> = nk.iter().map(|v| v / n as f64).collect();
        model = refit(weights, means, covs)?;
    }
    Ok((model, EmTrace { log_likelihoods: trace }))
}

/// Build a model, escalating diagonal regularization when a covariance is not positive definite.
fn refit(weights: Vec<f64>, means: Array2<f64>, mut covs: Vec<Array2<f64>>) -> Result<GmmModel> {
    for extra in [0.0, 1e-6, 1e-4, 1e-2] {
        let attempt: Vec<Array2<f64>> = covs
            .iter()
            .map(|c| {
                let mut c = c.clone();
                for i in 0..c.nrows() {
                    c[[i, i]] += extra;
                }
                c
            })
            .collect();
        match GmmModel::new(weights.clone(), means.clone(), attempt.clone()) {
            Ok(m) => return Ok(m),
            Err(Error::SingularCovariance { .. }) => covs = attempt,
            Err(e) => return Err(e),
        }
    }
    let component = covs.iter().position(|c| cholesky(c).is_none()).unwrap_or(0);
    Err(Error::SingularCovariance { component })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KCriterion {
    pub k: usize,
    pub log_likelihood: f64,
    pub aic: f64,
    pub bic: f64,
}

/// Pick the number of components at the elbow of the BIC curve.
///
/// `K` is `k - 1` for the smallest `k` whose BIC improvement over `k - 1` falls
/// below 2% of the BIC range across the table; the largest `k` if none does.
/// Values of `k` without enough samples for a fit are skipped.
pub fn select_k(latents: ArrayView2<'_, f64>, k_range: std::ops::RangeInclusive<usize>, seed: RngSeed) -> Result<(usize, Vec<KCriterion>)> {
    select_k_with(latents, k_range, &GmmConfig::default(), seed)
}

pub fn select_k_with(
    latents: ArrayView2<'_, f64>,
    k_range: std::ops::RangeInclusive<usize>,
    cfg: &GmmConfig,
    seed: RngSeed,
) -> Result<(usize, Vec<KCriterion>)> {
    let (n, h) = latents.dim();
    if *k_range.start() == 0 || k_range.is_empty() {
        return Err(Error::invalid("k_range", "must be a non-empty range starting at 1 or more"));
    }
    let mut table = Vec::new();
    for k in k_range {
        if n <= k * h {
            break;
        }
        let model = fit_gmm_with(latents, k, cfg, seed.derive(&[k as u64]))?.0;
        table.push(KCriterion {
            k,
            log_likelihood: model.log_likelihood,
            aic: aic(model.log_likelihood, k, h),
            bic: bic(model.log_likelihood, k, h, n),
        });
    }
    if table.is_empty() {
        return Err(Error::InsufficientData {
            what: "component selection",
            reason: format!("{n} samples in {h} dimensions cannot support any K in range"),
        });
    }
    Ok((elbow(&table), table))
}

pub fn elbow(table: &[KCriterion]) -> usize {
    let max = table.iter().map(|r| r.bic).fold(f64::NEG_INFINITY, f64::max);
    let min = table.iter().map(|r| r.bic).fold(f64::INFINITY, f64::min);
    let range = max - min;
    for w in table.windows(2) {
        if w[0].bic - w[1].bic < 0.02 * range {
            return w[0].k;
        }
    }
    table.last().expect("non-empty table").k
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub threshold: f64,
    /// Indices into the unlabeled latents.
    pub selected: Vec<usize>,
    pub fraction_unlabeled_selected: f64,
    pub fraction_labeled_below_threshold: f64,
    pub unlabeled_nll: Vec<f64>,
}

pub fn select_unlabeled(
    model: &GmmModel,
    unlabeled: ArrayView2<'_, f64>,
    labeled: ArrayView2<'_, f64>,
    threshold: f64,
) -> SelectionReport {
    let nll = model.nll_all(unlabeled);
    select_by_nll(&nll, &model.nll_all(labeled), threshold)
}

/// Threshold precomputed NLL scores.
pub fn select_by_nll(unlabeled_nll: &[f64], labeled_nll: &[f64], threshold: f64) -> SelectionReport {
    let selected: Vec<usize> = (0..unlabeled_nll.len()).filter(|&i| unlabeled_nll[i] <= threshold).collect();
    let frac = |count: usize, total: usize| if total == 0 { 0.0 } else { count as f64 / total as f64 };
    SelectionReport {
        threshold,
        fraction_unlabeled_selected: frac(selected.len(), unlabeled_nll.len()),
        fraction_labeled_below_threshold: frac(labeled_nll.iter().filter(|&&v| v <= threshold).count(), labeled_nll.len()),
        selected,
        unlabeled_nll: unlabeled_nll.to_vec(),
    }
}

/// The `count` lowest-NLL unlabeled windows (ties by index).
pub fn select_top(unlabeled_nll: &[f64], count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..unlabeled_nll.len()).collect();
    idx.sort_by(|&a, &b| unlabeled_nll[a].total_cmp(&unlabeled_nll[b]).then(a.cmp(&b)));
    idx.truncate(count);
    idx.sort_unstable();
    idx
}

/// `count` indices drawn uniformly without replacement, sorted.
pub fn select_random(total: usize, count: usize, seed: RngSeed) -> Vec<usize> {
    let mut v = sample(&mut seed.rng(), total, count.min(total)).into_vec();
    v.sort_unstable();
    v
}

/// Where the mixture is fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GmmSpace {
    Latent,
    Pca(usize),
}

impl FromStr for GmmSpace {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "latent" => Ok(GmmSpace::Latent),
            other => other
                .strip_prefix("pca:")
                .and_then(|d| d.parse().ok())
                .filter(|&d: &usize| d > 0)
                .map(GmmSpace::Pca)
                .ok_or_else(|| Error::invalid("gmm_space", format!("expected `latent` or `pca:<dims>`, got `{s}`"))),
        }
    }
}

/// Symmetric eigen-decomposition by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order and eigenvectors as columns.
pub fn symmetric_eigen(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = Array2::eye(n);
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[[i, j]] * m[[i, j]]).sum();
        let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * m[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[j, j]].total_cmp(&m[[i, i]]));
    let values = Array1::from_iter(order.iter().map(|&i| m[[i, i]]));
    let mut vectors = Array2::zeros((n, n));
    for (c, &i) in order.iter().enumerate() {
        vectors.column_mut(c).assign(&v.column(i));
    }
    (values, vectors)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Array1<f64>,
    /// `H × dims`, orthonormal columns.
    pub components: Array2<f64>,
    /// Every eigenvalue of the covariance, descending.
    pub eigenvalues: Array1<f64>,
    pub projected: Array2<f64>,
}

impl Pca {
    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        let total: f64 = self.eigenvalues.iter().map(|v| v.max(0.0)).sum();
        (0..self.components.ncols())
            .map(|i| if total > 0.0 { self.eigenvalues[i].max(0.0) / total } else { 0.0 })
            .collect()
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        (&x - &self.mean).dot(&self.components)
    }

    /// Mean squared reconstruction error per sample (sum over dimensions).
    pub fn reconstruction_error(&self, x: ArrayView2<'_, f64>) -> f64 {
        let centered = &x - &self.mean;
        let back = self.transform(x).dot(&self.components.t());
        let diff = centered - back;
        diff.iter().map(|v| v * v).sum::<f64>() / x.nrows() as f64
    }
}

/// Project mean-centered latents onto their top `dims` principal components.
pub fn pca_project(latents: ArrayView2<'_, f64>, dims: usize) -> Result<Pca> {
    let (n, h) = latents.dim();
    if n < dims || dims == 0 || dims > h {
        return Err(Error::invalid("dims", format!("need 1 ≤ dims ≤ {h} and at least dims samples, got {dims} with {n} samples")));
    }
    let mean = latents.mean_axis(Axis(0)).expect("non-empty");
    let centered = &latents - &mean;
    let cov = centered.t().dot(&centered) / n as f64;
    let (eigenvalues, vectors) = symmetric_eigen(&cov);
    let components = vectors.slice(ndarray::s![.., ..dims]).to_owned();
    let projected = centered.dot(&components);
    Ok(Pca {
        mean,
        components,
        eigenvalues,
        projected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, mean: &[f64], sd: f64, seed: u64) -> Array2<f64> {
        let mut r = RngSeed(seed).rng();
        Array2::from_shape_fn((n, mean.len()), |(_, j)| {
            let z: f64 = StandardNormal.sample(&mut r);
            mean[j] + sd * z
        })
    }

    fn stack(parts: &[Array2<f64>]) -> Array2<f64> {
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        ndarray::concatenate(Axis(0), &views).unwrap()
    }

    #[test]
    fn single_gaussian_recovery() {
        let x = gaussian(10_000, &[1.0, 2.0], 1.0, 1);
        let m = fit_gmm(x.view(), 1, RngSeed(2)).unwrap();
        assert!((m.means[[0, 0]] - 1.0).abs() < 0.05 && (m.means[[0, 1]] - 2.0).abs() < 0.05);
    }

    #[test]
    fn two_cluster_weights_and_monotone_em() {
        let x = stack(&[gaussian(600, &[0.0, 0.0], 1.0, 3), gaussian(600, &[10.0, -10.0], 1.0, 4)]);
        let (m, traces) = fit_gmm_with(x.view(), 2, &GmmConfig::default(), RngSeed(5)).unwrap();
        for w in &m.weights {
            assert!((w - 0.5).abs() < 0.05, "{:?}", m.weights);
        }
        for t in &traces {
            for w in t.log_likelihoods.windows(2) {
                assert!(w[1] >= w[0] - 1e-10 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn too_few_samples() {
        let x = gaussian(6, &[0.0, 0.0, 0.0], 1.0, 1);
        assert!(matches!(fit_gmm(x.view(), 2, RngSeed(0)), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn k_selection() {
        let three = stack(&[
            gaussian(200, &[0.0, 0.0], 1.0, 1),
            gaussian(200, &[10.0, 0.0], 1.0, 2),
            gaussian(200, &[0.0, 10.0], 1.0, 3),
        ]);
        assert_eq!(select_k(three.view(), 1..=6, RngSeed(4)).unwrap().0, 3);
        let one = gaussian(500, &[0.0, 0.0], 1.0, 5);
        assert_eq!(select_k(one.view(), 1..=6, RngSeed(6)).unwrap().0, 1);
    }

    #[test]
    fn information_criteria_by_hand() {
        // K=1, H=1, N=10: p = 0 + 1 + 1 = 2
        assert_eq!(gmm_param_count(1, 1), 2);
        let ll = -14.2;
        assert!((aic(ll, 1, 1) - (4.0 + 28.4)).abs() < 1e-12);
        assert!((bic(ll, 1, 1, 10) - (2.0 * 10f64.ln() + 28.4)).abs() < 1e-12);
        // the fitted single Gaussian reaches the closed-form likelihood
        let x = Array2::from_shape_vec((10, 1), vec![0.3, -1.2, 0.8, 2.1, -0.4, 0.0, 1.5, -0.9, 0.6, 0.2]).unwrap();
        let m = fit_gmm(x.view(), 1, RngSeed(0)).unwrap();
        let mean = x.mean().unwrap();
        let var = x.var(0.0) + 1e-6;
        let expected: f64 = x.iter().map(|v| -0.5 * (LN_2PI + var.ln() + (v - mean).powi(2) / var)).sum();
        assert!((m.log_likelihood - expected).abs() < 1e-8);
    }

    fn standard_1d() -> GmmModel {
        GmmModel::new(vec![1.0], Array2::zeros((1, 1)), vec![Array2::eye(1)]).unwrap()
    }

    #[test]
    fn nll_values() {
        let m = standard_1d();
        assert!((m.nll(Array1::from(vec![0.0]).view()) - 0.5 * LN_2PI).abs() < 1e-15);
        assert!((0.5 * LN_2PI - 0.9189).abs() < 1e-4);
        assert!(m.nll(Array1::from(vec![1e150]).view()).is_finite());
    }

    #[test]
    fn duplicate_component_and_brute_force() {
        let means = Array2::from_shape_vec((2, 2), vec![0.0, 1.0, 2.0, -1.0]).unwrap();
        let c0 = Array2::from_shape_vec((2, 2), vec![1.0, 0.3, 0.3, 2.0]).unwrap();
        let c1 = Array2::from_shape_vec((2, 2), vec![0.5, -0.1, -0.1, 0.7]).unwrap();
        let m = GmmModel::new(vec![0.4, 0.6], means.clone(), vec![c0.clone(), c1.clone()]).unwrap();
        let split = GmmModel::new(
            vec![0.2, 0.2, 0.6],
            ndarray::concatenate(Axis(0), &[means.row(0).insert_axis(Axis(0)), means.view()]).unwrap(),
            vec![c0.clone(), c0.clone(), c1.clone()],
        )
        .unwrap();
        let density = |x: &[f64], mu: ArrayView1<f64>, c: &Array2<f64>| {
            let det = c[[0, 0]] * c[[1, 1]] - c[[0, 1]] * c[[1, 0]];
            let inv = [[c[[1, 1]] / det, -c[[0, 1]] / det], [-c[[1, 0]] / det, c[[0, 0]] / det]];
            let d = [x[0] - mu[0], x[1] - mu[1]];
            let q = d[0] * (inv[0][0] * d[0] + inv[0][1] * d[1]) + d[1] * (inv[1][0] * d[0] + inv[1][1] * d[1]);
            (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
        };
        for p in [[0.1, 0.2], [1.5, -0.5], [-1.0, 2.0]] {
            let x = Array1::from(p.to_vec());
            let a = m.nll(x.view());
            assert!((a - split.nll(x.view())).abs() < 1e-12);
            let brute = -(0.4 * density(&p, means.row(0), &c0) + 0.6 * density(&p, means.row(1), &c1)).ln();
            assert!((a - brute).abs() < 1e-10);
        }
    }

    #[test]
    fn density_integrates_to_one() {
        let m = GmmModel::new(
            vec![0.3, 0.7],
            Array2::from_shape_vec((2, 1), vec![-1.0, 2.0]).unwrap(),
            vec![Array2::from_elem((1, 1), 0.5), Array2::from_elem((1, 1), 1.5)],
        )
        .unwrap();
        let dx = 1e-3;
        let total: f64 = (0..20_000).map(|i| -10.0 + i as f64 * dx).map(|x| (-m.nll(Array1::from(vec![x]).view())).exp() * dx).sum();
        assert!((total - 1.0).abs() < 1e-3);
    }

    #[test]
    fn selection_thresholds() {
        let m = standard_1d();
        let u = Array2::from_shape_vec((4, 1), vec![0.0, 1.0, 3.0, -2.0]).unwrap();
        let l = Array2::from_shape_vec((2, 1), vec![0.0, 5.0]).unwrap();
        assert!(select_unlabeled(&m, u.view(), l.view(), f64::NEG_INFINITY).selected.is_empty());
        let all = select_unlabeled(&m, u.view(), l.view(), f64::INFINITY);
        assert_eq!(all.selected, vec![0, 1, 2, 3]);
        assert_eq!(all.fraction_labeled_below_threshold, 1.0);
        let mid = select_unlabeled(&m, u.view(), l.view(), 2.0);
        assert_eq!(mid.selected, vec![0, 1]);
        assert_eq!(mid.fraction_unlabeled_selected, 0.5);
        assert_eq!(mid.fraction_labeled_below_threshold, 0.5);
    }

    #[test]
    fn active_beats_random_on_mean_nll() {
        let nll: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64 * 0.1).collect();
        for count in [5, 50, 150] {
            let mean = |idx: &[usize]| idx.iter().map(|&i| nll[i]).sum::<f64>() / idx.len() as f64;
            let active = select_top(&nll, count);
            let random = select_random(nll.len(), count, RngSeed(count as u64));
            assert_eq!(active.len(), count);
            assert!(mean(&active) <= mean(&random));
        }
    }

    #[test]
    fn pca_properties() {
        let line = Array2::from_shape_fn((50, 3), |(i, j)| i as f64 * [1.0, -2.0, 0.5][j] + [3.0, 0.0, 1.0][j]);
        let p = pca_project(line.view(), 2).unwrap();
        assert!(p.explained_variance_ratio()[0] > 0.999);
        let pc1: Vec<f64> = p.projected.column(0).to_vec();
        let sign = (pc1[1] - pc1[0]).signum();
        assert!(pc1.windows(2).all(|w| (w[1] - w[0]) * sign > 0.0));

        let x = gaussian(300, &[0.0, 1.0, -1.0, 2.0], 1.0, 9) * &Array1::from(vec![3.0, 1.0, 0.5, 2.0]);
        for dims in 1..=4 {
            let p = pca_project(x.view(), dims).unwrap();
            let discarded: f64 = p.eigenvalues.iter().skip(dims).sum();
            assert!((p.reconstruction_error(x.view()) - discarded).abs() < 1e-8);
        }
    }

    #[test]
    fn gmm_space_parse() {
        assert_eq!("latent".parse::<GmmSpace>().unwrap(), GmmSpace::Latent);
        assert_eq!("pca:3".parse::<GmmSpace>().unwrap(), GmmSpace::Pca(3));
        assert!("pca:0".parse::<GmmSpace>().is_err());
    }
}
