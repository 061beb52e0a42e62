//! Exact normal/inverse-gamma inference on compressed features.
//!
//! Model: `y = Z theta + e`, `e ~ N(0, sigma^2 I)`,
//! `theta | sigma^2 ~ N(0, sigma^2 s^2 I)` with `s` the prior scale
//! multiplier, `sigma^2 ~ InvGamma(a, b)`. With `A = Z^T Z + I / s^2` and
//! `W = A^-1`:
//!
//! * `mu = W Z^T y`,
//! * `sigma^2 | y ~ InvGamma(a + n/2, (y^T y - mu^T A mu)/2 + b)`,
//! * `theta | y` is multivariate t with `n + 2a` degrees of freedom,
//! * a new response at `z` is t with location `z^T mu` and squared scale
//!   `(y^T y - mu^T A mu + 2b)(1 + z^T W z) / (n + 2a)`.
//!
//! The binary path replaces the Gaussian likelihood by a probit link and
//! samples the posterior with the latent-variable Gibbs scheme.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::dist::{normal_cdf, sample_truncated_unit_normal, student_t_quantile};
use crate::error::{Result, TarpError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorHyper {
    pub a_sigma: f64,
    pub b_sigma: f64,
    /// Prior sd multiplier for theta (theta ~ N(0, sigma^2 theta_scale^2 I)).
    pub theta_scale: f64,
}

impl Default for PriorHyper {
    fn default() -> Self {
        PriorHyper {
            a_sigma: 0.02,
            b_sigma: 0.02,
            theta_scale: 1.0,
        }
    }
}

impl PriorHyper {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("a_sigma", self.a_sigma),
            ("b_sigma", self.b_sigma),
            ("theta_scale", self.theta_scale),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(TarpError::Parameter {
                    name,
                    message: format!("must be finite and > 0, got {v}"),
                });
            }
        }
        Ok(())
    }

    fn precision(&self) -> f64 {
        1.0 / (self.theta_scale * self.theta_scale)
    }
}

#[derive(Debug, Clone)]
pub struct CompressedPosterior {
    mu: DVector<f64>,
    w: DMatrix<f64>,
    /// `A = W^-1 = Z^T Z + I / s^2`, kept so quadratic forms never re-invert.
    w_inv: DMatrix<f64>,
    df: f64,
    scale_factor: f64,
    n: usize,
    log_det_w: f64,
    prior: PriorHyper,
}

impl CompressedPosterior {
    /// Posterior location `mu_t`.
    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    /// `W = (I + Z^T Z)^-1`.
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn w_inv(&self) -> &DMatrix<f64> {
        &self.w_inv
    }

    pub fn df(&self) -> f64 {
        self.df
    }

    /// `y^T y - mu^T W^-1 mu + 2 b`.
    pub fn scale_factor(&self) -> f64 {
        self.scale_factor
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.mu.len()
    }

    pub fn log_det_w(&self) -> f64 {
        self.log_det_w
    }

    pub fn prior(&self) -> &PriorHyper {
        &self.prior
    }
}

fn check_finite(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TarpError::NonFinite(what))
    }
}

/// `I / s^2 + Z^T Z` and its Cholesky factor.
fn precision_factor(z: &DMatrix<f64>, prior: &PriorHyper) -> Result<(DMatrix<f64>, Cholesky<f64, Dyn>)> {
    let mut a = z.tr_mul(z);
    let lam = prior.precision();
    for i in 0..a.nrows() {
        a[(i, i)] += lam;
    }
    let chol = Cholesky::new(a.clone())
        .ok_or_else(|| TarpError::Numerical("I + Z^T Z is not positive definite".into()))?;
    Ok((a, chol))
}

fn log_det_from_chol(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub fn fit_compressed(z: &DMatrix<f64>, y: &DVector<f64>, prior: &PriorHyper) -> Result<CompressedPosterior> {
    prior.validate()?;
    let (n, m) = z.shape();
    if n == 0 || m == 0 {
        return Err(TarpError::dim(format!("compressed design is {n} x {m}")));
    }
    if y.len() != n {
        return Err(TarpError::dim(format!("response length {} for {n} rows", y.len())));
    }
    check_finite(z, "compressed design")?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(TarpError::NonFinite("response"));
    }

    let (a, chol) = precision_factor(z, prior)?;
    let zty = z.tr_mul(y);
    let mu = chol.solve(&zty);
    let w = chol.inverse();
    let quad = mu.dot(&(&a * &mu));
    let scale_factor = y.norm_squared() - quad + 2.0 * prior.b_sigma;
    if !scale_factor.is_finite() || scale_factor <= 0.0 {
        return Err(TarpError::Numerical(format!(
            "posterior scale factor is {scale_factor}"
        )));
    }
    Ok(CompressedPosterior {
        mu,
        w,
        w_inv: a,
        df: n as f64 + 2.0 * prior.a_sigma,
        scale_factor,
        n,
        log_det_w: -log_det_from_chol(&chol),
        prior: *prior,
    })
}

/// Inverse-gamma posterior of `sigma^2` as `(shape, rate)`.
pub fn sigma2_posterior(post: &CompressedPosterior) -> (f64, f64) {
    let shape = post.prior.a_sigma + post.n as f64 / 2.0;
    let rate = post.scale_factor / 2.0;
    (shape, rate)
}

/// The rate written term by term, `(y^T y - mu^T W^-1 mu)/2 + b`, for
/// cross-checking [`sigma2_posterior`].
pub fn sigma2_rate_expanded(post: &CompressedPosterior) -> f64 {
    (post.scale_factor - 2.0 * post.prior.b_sigma) / 2.0 + post.prior.b_sigma
}

/// Per-point predictive t marginals and symmetric intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveSummary {
    pub mean: DVector<f64>,
    /// Scale parameter of each t marginal.
    pub marginal_scale: DVector<f64>,
    pub df: f64,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub level: f64,
}

/// Half-width multiplier: the `(1 + level)/2` quantile of t with `df`.
pub fn interval_multiplier(level: f64, df: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(TarpError::param("level", format!("must lie in (0, 1), got {level}")));
    }
    student_t_quantile(0.5 * (1.0 + level), df)
}

pub fn predict(post: &CompressedPosterior, z_new: &DMatrix<f64>, level: f64) -> Result<PredictiveSummary> {
    if z_new.ncols() != post.m() {
        return Err(TarpError::dim(format!(
            "new design has {} columns, posterior has {}",
            z_new.ncols(),
            post.m()
        )));
    }
    check_finite(z_new, "new compressed design")?;
    let mult = interval_multiplier(level, post.df)?;
    let mean = z_new * &post.mu;
    let zw = z_new * &post.w;
    let k = post.scale_factor / post.df;
    let scale = DVector::from_iterator(
        z_new.nrows(),
        zw.row_iter()
            .zip(z_new.row_iter())
            .map(|(a, b)| (k * (1.0 + a.dot(&b))).sqrt()),
    );
    let half = &scale * mult;
    Ok(PredictiveSummary {
        lower: &mean - &half,
        upper: &mean + &half,
        mean,
        marginal_scale: scale,
        df: post.df,
        level,
    })
}

/// Log marginal likelihood of the compressed Gaussian model.
///
/// `1/2 log|W| - m log s - (df/2) log(scale/2) + lnG(df/2) - lnG(a)
///  + a log b - (n/2) log(2 pi)`.
pub fn log_marginal_likelihood(z: &DMatrix<f64>, y: &DVector<f64>, prior: &PriorHyper) -> Result<f64> {
    let post = fit_compressed(z, y, prior)?;
    Ok(log_evidence(&post))
}

/// Same as [`log_marginal_likelihood`] for an existing fit.
pub fn log_evidence(post: &CompressedPosterior) -> f64 {
    let a = post.prior.a_sigma;
    let b = post.prior.b_sigma;
    let n = post.n as f64;
    0.5 * post.log_det_w - post.m() as f64 * post.prior.theta_scale.ln()
        - 0.5 * post.df * (0.5 * post.scale_factor).ln()
        + ln_gamma(0.5 * post.df)
        - ln_gamma(a)
        + a * b.ln()
        - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbitOptions {
    pub iterations: usize,
    pub burnin: usize,
    /// Keep every post-burn-in draw of theta (needed for posterior-predictive
    /// averaging of probabilities).
    pub keep_draws: bool,
}

impl Default for ProbitOptions {
    fn default() -> Self {
        ProbitOptions {
            iterations: 2000,
            burnin: 500,
            keep_draws: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProbitFit {
    pub theta_mean: DVector<f64>,
    /// Batch-means Monte Carlo standard error of each component of
    /// `theta_mean`.
    pub theta_mc_se: DVector<f64>,
    pub draws: usize,
    pub burnin: usize,
    /// Post-burn-in draws, one column each, when requested.
    pub samples: Option<DMatrix<f64>>,
}

/// Precomputed pieces of the theta full conditional
/// `N(A^-1 Z^T y*, A^-1)` with `A = Z^T Z + I / s^2`.
pub struct ThetaConditional {
    chol: Cholesky<f64, Dyn>,
}

impl ThetaConditional {
    pub fn new(z: &DMatrix<f64>, prior: &PriorHyper) -> Result<Self> {
        let (_, chol) = precision_factor(z, prior)?;
        Ok(ThetaConditional { chol })
    }

    /// Conditional mean `A^-1 Z^T y*`.
    pub fn mean(&self, z: &DMatrix<f64>, latent: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(&z.tr_mul(latent))
    }

    /// One draw of theta given the latent responses.
    pub fn sample<R: Rng + ?Sized>(&self, z: &DMatrix<f64>, latent: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        let mean = self.mean(z, latent);
        let m = mean.len();
        let eps = DVector::from_iterator(m, (0..m).map(|_| StandardNormal.sample(rng)));
        // A = L L^T, so L^-T eps has covariance A^-1.
        let l = self.chol.l_dirty();
        let noise = l
            .tr_solve_lower_triangular(&eps)
            .expect("Cholesky factor has a positive diagonal");
        mean + noise
    }
}

fn check_binary(y: &DVector<f64>) -> Result<()> {
    if let Some(v) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(TarpError::NotBinary(format!("found response value {v}")));
    }
    Ok(())
}

/// Latent-variable Gibbs sampler for probit regression on compressed
/// features. Alternates `theta | y*` (Gaussian) and `y*_i | theta, y_i`
/// (unit normal truncated to the side given by `y_i`).
pub fn probit_gibbs<R: Rng + ?Sized>(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    prior: &PriorHyper,
    options: &ProbitOptions,
    rng: &mut R,
) -> Result<ProbitFit> {
    prior.validate()?;
    if options.iterations <= options.burnin {
        return Err(TarpError::param(
            "iterations",
            format!("must exceed burn-in ({} <= {})", options.iterations, options.burnin),
        ));
    }
    let (n, m) = z.shape();
    if y.len() != n {
        return Err(TarpError::dim("response length differs from row count"));
    }
    if n == 0 || m == 0 {
        return Err(TarpError::dim(format!("compressed design is {n} x {m}")));
    }
    check_finite(z, "compressed design")?;
    check_binary(y)?;

    let cond = ThetaConditional::new(z, prior)?;
    let positive: Vec<bool> = y.iter().map(|&v| v == 1.0).collect();
    let mut theta = DVector::zeros(m);
    let mut latent = DVector::zeros(n);
    let kept = options.iterations - options.burnin;
    let mut samples = DMatrix::zeros(m, kept);

    for it in 0..options.iterations {
        let eta = z * &theta;
        for i in 0..n {
            latent[i] = sample_truncated_unit_normal(eta[i], positive[i], rng);
        }
        theta = cond.sample(z, &latent, rng);
        if it >= options.burnin {
            samples.set_column(it - options.burnin, &theta);
        }
    }

    let theta_mean = samples.column_mean();
    let theta_mc_se = batch_means_se(&samples);
    Ok(ProbitFit {
        theta_mean,
        theta_mc_se,
        draws: kept,
        burnin: options.burnin,
        samples: options.keep_draws.then_some(samples),
    })
}

/// Batch-means standard error with about `sqrt(n)` batches.
fn batch_means_se(samples: &DMatrix<f64>) -> DVector<f64> {
    let (m, n) = samples.shape();
    let batches = ((n as f64).sqrt().floor() as usize).max(2).min(n.max(1));
    let size = n / batches;
    if size == 0 {
        return DVector::from_element(m, f64::NAN);
    }
    DVector::from_iterator(
        m,
        (0..m).map(|k| {
            let row = samples.row(k);
            let means: Vec<f64> = (0..batches)
                .map(|b| row.columns(b * size, size).sum() / size as f64)
                .collect();
            let grand = means.iter().sum::<f64>() / batches as f64;
            let var = means.iter().map(|v| (v - grand).powi(2)).sum::<f64>() / (batches as f64 - 1.0);
            (var / batches as f64).sqrt()
        }),
    )
}

/// Plug-in probabilities `Phi(z^T theta_mean)`.
pub fn predict_probit(fit: &ProbitFit, z_new: &DMatrix<f64>) -> Result<DVector<f64>> {
    if z_new.ncols() != fit.theta_mean.len() {
        return Err(TarpError::dim(format!(
            "new design has {} columns, fit has {}",
            z_new.ncols(),
            fit.theta_mean.len()
        )));
    }
    Ok((z_new * &fit.theta_mean).map(normal_cdf))
}

/// Posterior-predictive probabilities: the average of `Phi(z^T theta)` over
/// the retained draws. Needs a fit made with `keep_draws`.
pub fn predict_probit_averaged(fit: &ProbitFit, z_new: &DMatrix<f64>) -> Result<DVector<f64>> {
    let samples = fit
        .samples
        .as_ref()
        .ok_or_else(|| TarpError::param("keep_draws", "fit was made without retained draws"))?;
    if z_new.ncols() != samples.nrows() {
        return Err(TarpError::dim("new design width differs from theta dimension"));
    }
    let eta = z_new * samples;
    Ok(DVector::from_iterator(
        eta.nrows(),
        eta.row_iter()
            .map(|r| r.iter().map(|&v| normal_cdf(v)).sum::<f64>() / r.len() as f64),
    ))
}
