//! Replicate orchestration and aggregation.
//!
//! One replicate draws `m`, `psi`, a screening mask and a projection, fits
//! the conjugate model on the compressed features and predicts the new rows.
//! Replicates run in parallel and are reduced in index order, so results are
//! identical for any worker count.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ResponseKind};
use crate::dist::student_t_cdf;
use crate::error::{Result, TarpError};
use crate::posterior::{
    fit_compressed, log_evidence, predict, predict_probit, predict_probit_averaged, probit_gibbs, PriorHyper,
    ProbitOptions,
};
use crate::projection::{compress, gen_pcr_matrix, gen_rp_matrix, gen_sparse_rp_matrix, ProjectionMatrix};
use crate::rng::{derive_seed, stream, substream, Domain, TarpRng};
use crate::screening::{
    default_delta, inclusion_probabilities, marginal_utility, sample_gamma, InclusionProbs, MaskSummary,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    RisRp,
    RisPcr,
    SparseRisRp,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::RisRp => "ris-rp",
            Backend::RisPcr => "ris-pcr",
            Backend::SparseRisRp => "sparse-ris-rp",
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backend {
    type Err = TarpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "ris-rp" | "risrp" => Ok(Backend::RisRp),
            "ris-pcr" | "rispcr" => Ok(Backend::RisPcr),
            "sparse-ris-rp" | "sparserisrp" => Ok(Backend::SparseRisRp),
            _ => Err(TarpError::param(
                "backend",
                format!("unknown backend '{s}' (expected ris-rp, ris-pcr or sparse-ris-rp)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaSetting {
    Auto,
    Fixed(f64),
}

impl DeltaSetting {
    pub fn resolve(self, n: usize, p: usize) -> f64 {
        match self {
            DeltaSetting::Auto => default_delta(n, p),
            DeltaSetting::Fixed(d) => d,
        }
    }
}

impl fmt::Display for DeltaSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeltaSetting::Auto => f.write_str("auto"),
            DeltaSetting::Fixed(d) => write!(f, "{d}"),
        }
    }
}

impl FromStr for DeltaSetting {
    type Err = TarpError;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(DeltaSetting::Auto);
        }
        let d: f64 = s
            .parse()
            .map_err(|_| TarpError::param("delta", format!("expected a number or 'auto', got '{s}'")))?;
        if !d.is_finite() || d < 0.0 {
            return Err(TarpError::param("delta", format!("must be finite and >= 0, got {d}")));
        }
        Ok(DeltaSetting::Fixed(d))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Plain mean over replicates.
    Average,
    /// Weights proportional to each replicate's marginal likelihood.
    ModelAverage,
    /// The single replicate with the lowest K-fold validation error.
    Cv,
}

impl Aggregation {
    pub fn name(self) -> &'static str {
        match self {
            Aggregation::Average => "average",
            Aggregation::ModelAverage => "model-average",
            Aggregation::Cv => "cv",
        }
    }
}

impl FromStr for Aggregation {
    type Err = TarpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "average" | "simple-average" | "mean" => Ok(Aggregation::Average),
            "model-average" | "bma" => Ok(Aggregation::ModelAverage),
            "cv" | "kfold-cv" | "k-fold-cv" => Ok(Aggregation::Cv),
            _ => Err(TarpError::param(
                "aggregation",
                format!("unknown aggregation '{s}' (expected average, model-average or cv)"),
            )),
        }
    }
}

/// How per-replicate intervals are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalAggregation {
    /// Average the lower and upper endpoints.
    Endpoints,
    /// Quantiles of the (weighted) mixture of the replicate t predictives.
    MixtureQuantile,
}

impl FromStr for IntervalAggregation {
    type Err = TarpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "endpoints" => Ok(IntervalAggregation::Endpoints),
            "mixture-quantile" | "mixture" => Ok(IntervalAggregation::MixtureQuantile),
            _ => Err(TarpError::param(
                "interval_aggregation",
                format!("unknown interval aggregation '{s}' (expected endpoints or mixture-quantile)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TarpConfig {
    pub backend: Backend,
    pub delta: DeltaSetting,
    pub n_replicates: usize,
    /// Inclusive range for `m`; `None` means `[ceil(2 ln p), floor(3n/4)]`.
    pub m_range: Option<(usize, usize)>,
    pub psi_range: (f64, f64),
    pub kappa: f64,
    pub prior: PriorHyper,
    pub aggregation: Aggregation,
    pub interval_aggregation: IntervalAggregation,
    pub k_folds: usize,
    pub level: f64,
    pub seed: u64,
    pub center_y: bool,
    /// Index of the first replicate; replicate `l` always uses the stream
    /// keyed by `first_replicate + l`.
    pub first_replicate: usize,
    pub gibbs: ProbitOptions,
    /// Binary path: average `Phi(z^T theta)` over draws instead of plugging
    /// in the posterior mean.
    pub probit_predictive_average: bool,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub keep_replicates: bool,
}

impl Default for TarpConfig {
    fn default() -> Self {
        TarpConfig {
            backend: Backend::RisRp,
            delta: DeltaSetting::Auto,
            n_replicates: 100,
            m_range: None,
            psi_range: (0.1, 0.4),
            kappa: 0.5,
            prior: PriorHyper::default(),
            aggregation: Aggregation::Average,
            interval_aggregation: IntervalAggregation::Endpoints,
            k_folds: 5,
            level: 0.5,
            seed: 0,
            center_y: true,
            first_replicate: 0,
            gibbs: ProbitOptions::default(),
            probit_predictive_average: false,
            workers: 0,
            keep_replicates: false,
        }
    }
}

impl TarpConfig {
    /// The `m` range actually sampled for a training set of size `n x p`.
    pub fn resolved_m_range(&self, n: usize, p: usize) -> Result<(usize, usize)> {
        let (lo, hi) = match self.m_range {
            Some(r) => r,
            None => (
                (2.0 * (p as f64).ln()).ceil().max(1.0) as usize,
                (3 * n) / 4,
            ),
        };
        let lo = lo.max(1);
        let hi = hi.min(p);
        if lo > hi {
            return Err(TarpError::param(
                "m_range",
                format!("range [{lo}, {hi}] is empty for n = {n}, p = {p}"),
            ));
        }
        Ok((lo, hi))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_replicates == 0 {
            return Err(TarpError::param("n_replicates", "must be >= 1"));
        }
        let (a, b) = self.psi_range;
        if !(a > 0.0 && a <= b && b <= 0.5) {
            return Err(TarpError::param(
                "psi_range",
                format!("need 0 < lo <= hi <= 0.5, got [{a}, {b}]"),
            ));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(TarpError::param("level", format!("must lie in (0, 1), got {}", self.level)));
        }
        if let DeltaSetting::Fixed(d) = self.delta {
            if !d.is_finite() || d < 0.0 {
                return Err(TarpError::param("delta", format!("must be finite and >= 0, got {d}")));
            }
        }
        if self.backend == Backend::SparseRisRp && !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(TarpError::param("kappa", format!("must lie in (0, 1), got {}", self.kappa)));
        }
        if self.aggregation == Aggregation::Cv && self.k_folds < 2 {
            return Err(TarpError::param("k_folds", "must be >= 2"));
        }
        self.prior.validate()
    }

    /// Seed of replicate `l` (relative to `first_replicate`).
    pub fn replicate_seed(&self, l: usize) -> u64 {
        derive_seed(self.seed, (self.first_replicate + l) as u64, Domain::Replicate)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub screen: f64,
    pub project: f64,
    pub fit: f64,
    pub predict: f64,
    pub total: f64,
}

impl PhaseTimings {
    fn add(&mut self, other: &PhaseTimings) {
        self.screen += other.screen;
        self.project += other.project;
        self.fit += other.fit;
        self.predict += other.predict;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub index: usize,
    pub seed: u64,
    /// Compression dimension used (after any rank truncation).
    pub m: usize,
    pub requested_m: usize,
    pub psi: Option<f64>,
    pub mask: MaskSummary,
    pub yhat: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub marginal_scale: Vec<f64>,
    pub df: f64,
    pub log_evidence: Option<f64>,
    pub cv_mse: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TarpResult {
    pub yhat: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Empty unless `keep_replicates` is set.
    pub per_replicate: Vec<ReplicateRecord>,
    pub p_gamma: Vec<usize>,
    pub m: Vec<usize>,
    /// Normalized replicate weights (model averaging only).
    pub weights: Option<Vec<f64>>,
    /// Winning replicate (CV selection only).
    pub selected: Option<usize>,
    pub delta: f64,
    pub expected_p_gamma: f64,
    pub config: TarpConfig,
    pub timings: PhaseTimings,
    pub wall_seconds: f64,
}

/// Runs `f` on a fresh pool with `workers` threads (0 = all cores).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| TarpError::Numerical(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Screening once per training set. Degenerate utilities fall back to
/// including every column.
fn screen(train: &Dataset, cfg: &TarpConfig) -> Result<InclusionProbs> {
    let delta = cfg.delta.resolve(train.n(), train.p());
    if delta == 0.0 {
        return Ok(InclusionProbs::all_ones(train.p(), 0.0));
    }
    let r = marginal_utility(train)?;
    let q = inclusion_probabilities(&r, delta)?;
    Ok(if q.is_degenerate() {
        InclusionProbs::all_ones(train.p(), delta)
    } else {
        q
    })
}

/// Draws `m`, `psi`, the mask and the projection for one replicate.
fn draw_projection(
    x: &DMatrix<f64>,
    q: &InclusionProbs,
    cfg: &TarpConfig,
    m_range: (usize, usize),
    rng: &mut TarpRng,
) -> Result<(ProjectionMatrix, MaskSummary)> {
    let m = rng.random_range(m_range.0..=m_range.1);
    let (plo, phi) = cfg.psi_range;
    let psi = plo + (phi - plo) * rng.random::<f64>();
    let mask = sample_gamma(q, rng);
    let selected = mask.selected().to_vec();
    let pg = selected.len();
    let proj = match cfg.backend {
        Backend::RisRp => gen_rp_matrix(pg, m, psi, rng)?,
        Backend::SparseRisRp => gen_sparse_rp_matrix(pg, m, cfg.kappa, x.nrows(), rng)?,
        Backend::RisPcr => gen_pcr_matrix(&x.select_columns(&selected), m)?,
    };
    Ok((proj.with_column_map(selected)?, MaskSummary::from(&mask)))
}

struct Prepared {
    x: DMatrix<f64>,
    y: DVector<f64>,
    y_shift: f64,
    q: InclusionProbs,
    m_range: (usize, usize),
    screen_seconds: f64,
}

fn prepare(train: &Dataset, x_new: &DMatrix<f64>, cfg: &TarpConfig, binary: bool) -> Result<Prepared> {
    cfg.validate()?;
    if !train.is_standardized() {
        return Err(TarpError::param("train", "training data must be standardized first"));
    }
    if x_new.ncols() != train.p() {
        return Err(TarpError::dim(format!(
            "new rows have {} columns, training data has {}",
            x_new.ncols(),
            train.p()
        )));
    }
    if x_new.nrows() == 0 {
        return Err(TarpError::dim("no rows to predict"));
    }
    if x_new.iter().any(|v| !v.is_finite()) {
        return Err(TarpError::NonFinite("new rows"));
    }
    if binary && train.response_kind() != ResponseKind::Binary {
        return Err(TarpError::NotBinary("binary path needs a 0/1 response".into()));
    }
    let m_range = cfg.resolved_m_range(train.n(), train.p())?;
    let t0 = Instant::now();
    let q = screen(train, cfg)?;
    let screen_seconds = secs(t0.elapsed());
    let y_shift = if cfg.center_y && !binary { train.y().mean() } else { 0.0 };
    Ok(Prepared {
        x: train.x().clone(),
        y: train.y().add_scalar(-y_shift),
        y_shift,
        q,
        m_range,
        screen_seconds,
    })
}

fn run_replicate(
    prep: &Prepared,
    x_new: &DMatrix<f64>,
    cfg: &TarpConfig,
    l: usize,
    folds: Option<&[Vec<usize>]>,
) -> Result<(ReplicateRecord, PhaseTimings)> {
    let seed = cfg.replicate_seed(l);
    let mut rng = stream(seed);
    let mut t = PhaseTimings::default();

    let t0 = Instant::now();
    let (proj, mask) = draw_projection(&prep.x, &prep.q, cfg, prep.m_range, &mut rng)?;
    let z = compress(&prep.x, &proj)?;
    let z_new = compress(x_new, &proj)?;
    t.project = secs(t0.elapsed());

    let t0 = Instant::now();
    let post = fit_compressed(&z, &prep.y, &cfg.prior)?;
    let ev = (cfg.aggregation == Aggregation::ModelAverage).then(|| log_evidence(&post));
    let cv_mse = match folds {
        Some(f) => Some(fold_mse(&z, &prep.y, f, &cfg.prior)?),
        None => None,
    };
    t.fit = secs(t0.elapsed());

    let t0 = Instant::now();
    let s = predict(&post, &z_new, cfg.level)?;
    t.predict = secs(t0.elapsed());

    let shift = |v: &DVector<f64>| v.iter().map(|x| x + prep.y_shift).collect::<Vec<f64>>();
    Ok((
        ReplicateRecord {
            index: cfg.first_replicate + l,
            seed,
            m: proj.m(),
            requested_m: proj.requested_m(),
            psi: proj.psi(),
            mask,
            yhat: shift(&s.mean),
            lower: shift(&s.lower),
            upper: shift(&s.upper),
            marginal_scale: s.marginal_scale.iter().copied().collect(),
            df: s.df,
            log_evidence: ev,
            cv_mse,
        },
        t,
    ))
}

fn wrap_replicate(cfg: &TarpConfig, l: usize, e: TarpError) -> TarpError {
    TarpError::Replicate {
        index: cfg.first_replicate + l,
        seed: cfg.replicate_seed(l),
        source: Box::new(e),
    }
}

/// Normalized weights `exp(v - max v)`.
pub fn evidence_weights(log_ev: &[f64]) -> Vec<f64> {
    let max = log_ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = log_ev.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

fn weighted_mean(rows: &[&[f64]], weights: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (row, &w) in rows.iter().zip(weights) {
        for (o, v) in out.iter_mut().zip(row.iter()) {
            *o += w * v;
        }
    }
    out
}

/// `p`-quantile of the mixture `sum_l w_l t_df(mean_l, scale_l)` at one
/// point, by bisection between the extreme component quantiles.
fn mixture_quantile(recs: &[ReplicateRecord], weights: &[f64], i: usize, p: f64, lo: f64, hi: f64) -> f64 {
    let cdf = |x: f64| -> f64 {
        recs.iter()
            .zip(weights)
            .map(|(r, w)| {
                let s = r.marginal_scale[i];
                w * if s > 0.0 {
                    student_t_cdf((x - r.yhat[i]) / s, r.df)
                } else if x >= r.yhat[i] {
                    1.0
                } else {
                    0.0
                }
            })
            .sum()
    };
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if cdf(mid) < p {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

struct Aggregate {
    yhat: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    weights: Option<Vec<f64>>,
    selected: Option<usize>,
}

fn aggregate(recs: &[ReplicateRecord], cfg: &TarpConfig, len: usize) -> Aggregate {
    if cfg.aggregation == Aggregation::Cv {
        let best = recs
            .iter()
            .enumerate()
            .min_by(|a, b| {
                let (x, y) = (a.1.cv_mse.unwrap_or(f64::INFINITY), b.1.cv_mse.unwrap_or(f64::INFINITY));
                x.total_cmp(&y).then(a.0.cmp(&b.0))
            })
            .map(|(i, _)| i)
            .expect("at least one replicate");
        let r = &recs[best];
        return Aggregate {
            yhat: r.yhat.clone(),
            lower: r.lower.clone(),
            upper: r.upper.clone(),
            weights: None,
            selected: Some(best),
        };
    }
    let weights = match cfg.aggregation {
        Aggregation::ModelAverage => {
            let ev: Vec<f64> = recs.iter().map(|r| r.log_evidence.unwrap_or(f64::NEG_INFINITY)).collect();
            evidence_weights(&ev)
        }
        _ => vec![1.0 / recs.len() as f64; recs.len()],
    };
    let yhat = if cfg.aggregation == Aggregation::Average {
        simple_mean(recs.iter().map(|r| r.yhat.as_slice()), len)
    } else {
        weighted_mean(&recs.iter().map(|r| r.yhat.as_slice()).collect::<Vec<_>>(), &weights, len)
    };
    let (lower, upper) = match cfg.interval_aggregation {
        IntervalAggregation::Endpoints if cfg.aggregation == Aggregation::Average => (
            simple_mean(recs.iter().map(|r| r.lower.as_slice()), len),
            simple_mean(recs.iter().map(|r| r.upper.as_slice()), len),
        ),
        IntervalAggregation::Endpoints => (
            weighted_mean(&recs.iter().map(|r| r.lower.as_slice()).collect::<Vec<_>>(), &weights, len),
            weighted_mean(&recs.iter().map(|r| r.upper.as_slice()).collect::<Vec<_>>(), &weights, len),
        ),
        IntervalAggregation::MixtureQuantile => {
            let pl = 0.5 * (1.0 - cfg.level);
            let pu = 0.5 * (1.0 + cfg.level);
            let mut lower = vec![0.0; len];
            let mut upper = vec![0.0; len];
            for i in 0..len {
                let lo = recs.iter().map(|r| r.lower[i]).fold(f64::INFINITY, f64::min);
                let hi = recs.iter().map(|r| r.upper[i]).fold(f64::NEG_INFINITY, f64::max);
                lower[i] = mixture_quantile(recs, &weights, i, pl, lo, hi);
                upper[i] = mixture_quantile(recs, &weights, i, pu, lo, hi);
            }
            (lower, upper)
        }
    };
    Aggregate {
        yhat,
        lower,
        upper,
        weights: (cfg.aggregation == Aggregation::ModelAverage).then_some(weights),
        selected: None,
    }
}

/// Sum in replicate order, then divide.
fn simple_mean<'a>(rows: impl Iterator<Item = &'a [f64]>, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let mut count = 0usize;
    for row in rows {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
        count += 1;
    }
    out.iter().map(|v| v / count as f64).collect()
}

/// Fits and predicts `x_new` with `cfg.n_replicates` replicates on a pool of
/// `cfg.workers` threads.
pub fn run_tarp(train: &Dataset, x_new: &DMatrix<f64>, cfg: &TarpConfig) -> Result<TarpResult> {
    with_workers(cfg.workers, || run_tarp_in_pool(train, x_new, cfg))?
}

/// As [`run_tarp`] but on the current rayon pool.
pub fn run_tarp_in_pool(train: &Dataset, x_new: &DMatrix<f64>, cfg: &TarpConfig) -> Result<TarpResult> {
    let start = Instant::now();
    let prep = prepare(train, x_new, cfg, false)?;
    let folds = if cfg.aggregation == Aggregation::Cv {
        Some(make_folds(train.n(), cfg.k_folds, &mut substream(cfg.seed, 0, Domain::Folds))?)
    } else {
        None
    };
    let outcomes: Vec<Result<(ReplicateRecord, PhaseTimings)>> = (0..cfg.n_replicates)
        .into_par_iter()
        .map(|l| run_replicate(&prep, x_new, cfg, l, folds.as_deref()).map_err(|e| wrap_replicate(cfg, l, e)))
        .collect();
    let mut recs = Vec::with_capacity(cfg.n_replicates);
    let mut timings = PhaseTimings {
        screen: prep.screen_seconds,
        ..Default::default()
    };
    for o in outcomes {
        let (r, t) = o?;
        timings.add(&t);
        recs.push(r);
    }
    let len = x_new.nrows();
    let Aggregate {
        yhat,
        lower,
        upper,
        weights,
        selected,
    } = aggregate(&recs, cfg, len);
    let wall = secs(start.elapsed());
    timings.total = wall;
    Ok(TarpResult {
        yhat,
        lower,
        upper,
        p_gamma: recs.iter().map(|r| r.mask.p_gamma).collect(),
        m: recs.iter().map(|r| r.m).collect(),
        per_replicate: if cfg.keep_replicates { recs } else { Vec::new() },
        weights,
        selected,
        delta: prep.q.delta(),
        expected_p_gamma: prep.q.expected_selected(),
        config: cfg.clone(),
        timings,
        wall_seconds: wall,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinaryResult {
    pub probs: Vec<f64>,
    pub p_gamma: Vec<usize>,
    pub m: Vec<usize>,
    pub delta: f64,
    pub expected_p_gamma: f64,
    pub config: TarpConfig,
    pub timings: PhaseTimings,
    pub wall_seconds: f64,
}

/// Probit counterpart of [`run_tarp`]: one Gibbs chain per replicate, class
/// probabilities averaged over replicates.
pub fn run_tarp_binary(train: &Dataset, x_new: &DMatrix<f64>, cfg: &TarpConfig) -> Result<BinaryResult> {
    with_workers(cfg.workers, || run_tarp_binary_in_pool(train, x_new, cfg))?
}

pub fn run_tarp_binary_in_pool(train: &Dataset, x_new: &DMatrix<f64>, cfg: &TarpConfig) -> Result<BinaryResult> {
    let start = Instant::now();
    let prep = prepare(train, x_new, cfg, true)?;
    let gibbs = ProbitOptions {
        keep_draws: cfg.probit_predictive_average,
        ..cfg.gibbs
    };
    let one = |l: usize| -> Result<(Vec<f64>, usize, usize, PhaseTimings)> {
        let mut rng = stream(cfg.replicate_seed(l));
        let mut t = PhaseTimings::default();
        let t0 = Instant::now();
        let (proj, mask) = draw_projection(&prep.x, &prep.q, cfg, prep.m_range, &mut rng)?;
        let z = compress(&prep.x, &proj)?;
        let z_new = compress(x_new, &proj)?;
        t.project = secs(t0.elapsed());
        let t0 = Instant::now();
        let fit = probit_gibbs(&z, &prep.y, &cfg.prior, &gibbs, &mut rng)?;
        t.fit = secs(t0.elapsed());
        let t0 = Instant::now();
        let p = if cfg.probit_predictive_average {
            predict_probit_averaged(&fit, &z_new)?
        } else {
            predict_probit(&fit, &z_new)?
        };
        t.predict = secs(t0.elapsed());
        Ok((p.iter().copied().collect(), mask.p_gamma, proj.m(), t))
    };
    let outcomes: Vec<_> = (0..cfg.n_replicates)
        .into_par_iter()
        .map(|l| one(l).map_err(|e| wrap_replicate(cfg, l, e)))
        .collect();
    let mut probs_rows = Vec::with_capacity(cfg.n_replicates);
    let mut p_gamma = Vec::new();
    let mut ms = Vec::new();
    let mut timings = PhaseTimings {
        screen: prep.screen_seconds,
        ..Default::default()
    };
    for o in outcomes {
        let (p, pg, m, t) = o?;
        timings.add(&t);
        probs_rows.push(p);
        p_gamma.push(pg);
        ms.push(m);
    }
    let probs = simple_mean(probs_rows.iter().map(|r| r.as_slice()), x_new.nrows());
    let wall = secs(start.elapsed());
    timings.total = wall;
    Ok(BinaryResult {
        probs,
        p_gamma,
        m: ms,
        delta: prep.q.delta(),
        expected_p_gamma: prep.q.expected_selected(),
        config: cfg.clone(),
        timings,
        wall_seconds: wall,
    })
}

/// Shuffles `0..n` and cuts it into `k` contiguous blocks whose sizes differ
/// by at most one.
pub fn make_folds<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(TarpError::param("k_folds", "must be >= 2"));
    }
    if k > n {
        return Err(TarpError::param("k_folds", format!("{k} folds for {n} rows")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut at = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(idx[at..at + size].to_vec());
        at += size;
    }
    Ok(folds)
}

fn fold_mse(z: &DMatrix<f64>, y: &DVector<f64>, folds: &[Vec<usize>], prior: &PriorHyper) -> Result<f64> {
    let n = z.nrows();
    let mut total = 0.0;
    let mut in_fold = vec![false; n];
    for fold in folds {
        in_fold.iter_mut().for_each(|v| *v = false);
        for &i in fold {
            in_fold[i] = true;
        }
        let train_idx: Vec<usize> = (0..n).filter(|&i| !in_fold[i]).collect();
        let z_tr = z.select_rows(&train_idx);
        let y_tr = DVector::from_iterator(train_idx.len(), train_idx.iter().map(|&i| y[i]));
        let post = fit_compressed(&z_tr, &y_tr, prior)?;
        let z_va = z.select_rows(fold);
        let pred = &z_va * post.mu();
        let se: f64 = fold.iter().zip(pred.iter()).map(|(&i, p)| (y[i] - p).powi(2)).sum();
        total += se / fold.len() as f64;
    }
    Ok(total / folds.len() as f64)
}

/// Mean over `k` folds of the validation mean squared error of the
/// conjugate posterior mean fitted on the remaining rows.
pub fn kfold_mse<R: Rng + ?Sized>(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    k: usize,
    prior: &PriorHyper,
    rng: &mut R,
) -> Result<f64> {
    if z.nrows() != y.len() {
        return Err(TarpError::dim("response length differs from row count"));
    }
    let folds = make_folds(z.nrows(), k, rng)?;
    fold_mse(z, y, &folds, prior)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::standardize;
    use crate::simgen::{gen_scheme1, Scheme, SchemeSpec};

    fn small_problem(seed: u64) -> (Dataset, DMatrix<f64>, DVector<f64>) {
        let mut spec = SchemeSpec::new(Scheme::Ar1, 40, 60, seed);
        spec.n_active = 5;
        spec.n_test = 10;
        let d = gen_scheme1(&spec).unwrap();
        let train = standardize(&d.train).unwrap();
        let xt = crate::data::apply_standardization(&train, &d.test_x).unwrap();
        (train, xt, d.test_y)
    }

    fn cfg(n: usize) -> TarpConfig {
        TarpConfig {
            n_replicates: n,
            seed: 5,
            workers: 1,
            ..Default::default()
        }
    }

    #[test]
    fn parse_enums() {
        assert_eq!("ris-pcr".parse::<Backend>().unwrap(), Backend::RisPcr);
        assert_eq!("sparse_ris_rp".parse::<Backend>().unwrap(), Backend::SparseRisRp);
        assert!("pcr".parse::<Backend>().is_err());
        assert_eq!("auto".parse::<DeltaSetting>().unwrap(), DeltaSetting::Auto);
        assert_eq!("2".parse::<DeltaSetting>().unwrap(), DeltaSetting::Fixed(2.0));
        assert!("-1".parse::<DeltaSetting>().is_err());
        assert_eq!("model-average".parse::<Aggregation>().unwrap(), Aggregation::ModelAverage);
    }

    #[test]
    fn default_m_range() {
        let c = TarpConfig::default();
        assert_eq!(c.resolved_m_range(200, 2000).unwrap(), (16, 150));
        assert_eq!(c.resolved_m_range(200, 100).unwrap(), (10, 100));
        assert!(c.resolved_m_range(4, 1000).is_err());
        let fixed = TarpConfig {
            m_range: Some((80, 80)),
            ..c
        };
        assert_eq!(fixed.resolved_m_range(200, 2000).unwrap(), (80, 80));
    }

    #[test]
    fn single_replicate_equals_its_record() {
        let (train, xt, _) = small_problem(1);
        let c = TarpConfig {
            keep_replicates: true,
            ..cfg(1)
        };
        let r = run_tarp(&train, &xt, &c).unwrap();
        let rec = &r.per_replicate[0];
        assert_eq!(r.yhat, rec.yhat);
        assert_eq!(r.lower, rec.lower);
        assert_eq!(r.upper, rec.upper);
    }

    #[test]
    fn zero_response_predicts_zero() {
        let (train, xt, _) = small_problem(2);
        let zero = Dataset::new(train.x().clone(), DVector::zeros(train.n()), ResponseKind::Continuous).unwrap();
        let zero = standardize(&zero).unwrap();
        let r = run_tarp(&zero, &xt, &cfg(4)).unwrap();
        for i in 0..xt.nrows() {
            assert_eq!(r.yhat[i], 0.0);
            assert!((r.upper[i] + r.lower[i]).abs() < 1e-12);
            assert!(r.upper[i] > 0.0);
        }
    }

    #[test]
    fn unstandardized_training_is_rejected() {
        let (train, xt, _) = small_problem(3);
        let raw = Dataset::new(train.x().clone(), train.y().clone(), ResponseKind::Continuous).unwrap();
        assert!(run_tarp(&raw, &xt, &cfg(2)).is_err());
    }

    #[test]
    fn invalid_config_is_rejected_up_front() {
        let (train, xt, _) = small_problem(4);
        let mut c = cfg(3);
        c.prior.a_sigma = f64::NAN;
        assert!(matches!(run_tarp(&train, &xt, &c), Err(TarpError::Parameter { .. })));
        c.prior.a_sigma = 0.02;
        c.psi_range = (0.1, 0.6);
        assert!(run_tarp(&train, &xt, &c).is_err());
    }

    #[test]
    fn evidence_weights_shift_invariant() {
        let a = evidence_weights(&[-3.0, -1.0, -2.5]);
        let b = evidence_weights(&[97.0, 99.0, 97.5]);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn folds_partition_rows() {
        let folds = make_folds(23, 5, &mut stream(1)).unwrap();
        let sizes: Vec<usize> = folds.iter().map(|f| f.len()).collect();
        assert_eq!(sizes, vec![5, 5, 5, 4, 4]);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert!(make_folds(3, 4, &mut stream(1)).is_err());
    }

    #[test]
    fn kfold_perfect_fit_and_null() {
        let mut rng = stream(9);
        let z = DMatrix::from_fn(60, 2, |_, _| rng.random::<f64>() - 0.5);
        let y = &z * DVector::from_column_slice(&[2.0, -1.0]);
        // the ridge prior shrinks slightly; use a vague prior for an exact fit
        let vague = PriorHyper {
            theta_scale: 1e6,
            ..PriorHyper::default()
        };
        assert!(kfold_mse(&z, &y, 5, &vague, &mut stream(1)).unwrap() < 1e-10);

        let noise = DVector::from_fn(2000, |_, _| rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng));
        let yc = noise.add_scalar(-noise.mean());
        let var = yc.norm_squared() / 1999.0;
        let mse = kfold_mse(&DMatrix::zeros(2000, 1), &yc, 5, &PriorHyper::default(), &mut stream(2)).unwrap();
        assert!((mse / var - 1.0).abs() < 0.1);
    }

    #[test]
    fn kfold_loo_matches_brute_force() {
        let mut rng = stream(10);
        let z = DMatrix::from_fn(12, 2, |_, _| rng.random::<f64>());
        let y = DVector::from_fn(12, |_, _| rng.random::<f64>());
        let prior = PriorHyper::default();
        let got = kfold_mse(&z, &y, 12, &prior, &mut stream(3)).unwrap();
        let mut total = 0.0;
        for i in 0..12 {
            let keep: Vec<usize> = (0..12).filter(|&j| j != i).collect();
            let zt = z.select_rows(&keep);
            let yt = DVector::from_iterator(11, keep.iter().map(|&j| y[j]));
            let a = zt.transpose() * &zt + DMatrix::identity(2, 2);
            let mu = a.try_inverse().unwrap() * zt.transpose() * yt;
            total += (y[i] - z.row(i).dot(&mu.transpose())).powi(2);
        }
        assert!((got - total / 12.0).abs() < 1e-12);
    }

    #[test]
    fn mixture_quantiles_bracket_the_mean() {
        let (train, xt, _) = small_problem(6);
        let c = TarpConfig {
            interval_aggregation: IntervalAggregation::MixtureQuantile,
            ..cfg(5)
        };
        let r = run_tarp(&train, &xt, &c).unwrap();
        for i in 0..xt.nrows() {
            assert!(r.lower[i] < r.yhat[i] && r.yhat[i] < r.upper[i]);
        }
    }

    #[test]
    fn cv_selects_one_replicate() {
        let (train, xt, _) = small_problem(7);
        let c = TarpConfig {
            aggregation: Aggregation::Cv,
            keep_replicates: true,
            ..cfg(4)
        };
        let r = run_tarp(&train, &xt, &c).unwrap();
        let best = r.selected.unwrap();
        let rec = &r.per_replicate[best];
        assert_eq!(r.yhat, rec.yhat);
        let min = r.per_replicate.iter().map(|x| x.cv_mse.unwrap()).fold(f64::INFINITY, f64::min);
        assert_eq!(rec.cv_mse.unwrap(), min);
    }

    #[test]
    fn single_worker_pool_is_reusable() {
        for _ in 0..3 {
            assert_eq!(with_workers(1, rayon::current_num_threads).unwrap(), 1);
        }
    }
}
