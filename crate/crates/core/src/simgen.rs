//! Synthetic regression designs and a binary two-cluster toy.
//!
//! All generators are deterministic in `SchemeSpec::seed`. Training and test
//! rows are drawn from the same distribution by the same code path.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ResponseKind};
use crate::error::{Result, TarpError};
use crate::rng::{stream, TarpRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Stationary AR(1) covariance `rho^|i-j|`.
    Ar1,
    /// Equicorrelated blocks at two correlation levels plus independent tail.
    BlockDiag,
    /// Rank-3 covariance with the response along the first component.
    PcrScheme,
    /// Brownian-bridge paths sampled on an interior grid.
    BrownianBridge,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Ar1 => "ar1",
            Scheme::BlockDiag => "block_diag",
            Scheme::PcrScheme => "pcr_scheme",
            Scheme::BrownianBridge => "brownian_bridge",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = TarpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "ar1" | "1" | "i" => Ok(Scheme::Ar1),
            "block_diag" | "blockdiag" | "2" | "ii" => Ok(Scheme::BlockDiag),
            "pcr_scheme" | "pcrscheme" | "pcr" | "3" | "iii" => Ok(Scheme::PcrScheme),
            "brownian_bridge" | "brownianbridge" | "bridge" | "4" | "iv" => Ok(Scheme::BrownianBridge),
            _ => Err(TarpError::param(
                "scheme",
                format!("unknown scheme '{s}' (expected ar1, block_diag, pcr_scheme or brownian_bridge)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSpec {
    pub scheme: Scheme,
    pub n: usize,
    pub n_test: usize,
    pub p: usize,
    pub n_active: usize,
    pub coef_value: f64,
    pub noise_sd: f64,
    pub rho: f64,
    pub block_size: usize,
    pub rho_low: f64,
    pub rho_high: f64,
    /// Number of trailing independent columns in the block design.
    pub n_independent: usize,
    pub n_outliers: usize,
    pub outlier_sd: f64,
    /// Isotropic residual sd added to the rank-3 design (0 keeps it singular).
    pub residual_sd: f64,
    pub t_max: f64,
    pub seed: u64,
}

impl SchemeSpec {
    pub fn new(scheme: Scheme, n: usize, p: usize, seed: u64) -> Self {
        SchemeSpec {
            scheme,
            n,
            n_test: 100,
            p,
            n_active: 50,
            coef_value: 1.0,
            noise_sd: 1.0,
            rho: 0.3,
            block_size: 100,
            rho_low: 0.3,
            rho_high: 0.9,
            n_independent: 200,
            n_outliers: 5,
            outlier_sd: 10.0,
            residual_sd: 0.0,
            t_max: 10.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(TarpError::dim("n and p must be positive"));
        }
        if self.scheme != Scheme::PcrScheme && self.n_active > self.p {
            return Err(TarpError::param(
                "n_active",
                format!("{} active coordinates exceed p = {}", self.n_active, self.p),
            ));
        }
        if !self.noise_sd.is_finite() || self.noise_sd < 0.0 {
            return Err(TarpError::param("noise_sd", "must be finite and >= 0"));
        }
        if !self.coef_value.is_finite() {
            return Err(TarpError::param("coef_value", "must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub train: Dataset,
    pub test_x: DMatrix<f64>,
    pub test_y: DVector<f64>,
    pub true_beta: DVector<f64>,
    /// Indices of the non-zero coefficients, ascending.
    pub active_idx: Vec<usize>,
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// `y = X beta + noise_sd * eps`.
pub fn make_response<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    beta: &DVector<f64>,
    noise_sd: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if x.ncols() != beta.len() {
        return Err(TarpError::dim(format!(
            "X has {} columns, beta has {} entries",
            x.ncols(),
            beta.len()
        )));
    }
    let mut y = x * beta;
    if noise_sd > 0.0 {
        for v in y.iter_mut() {
            *v += noise_sd * normal(rng);
        }
    }
    Ok(y)
}

fn random_active(p: usize, k: usize, coef: f64, rng: &mut TarpRng) -> (DVector<f64>, Vec<usize>) {
    let mut idx = sample_indices(rng, p, k).into_vec();
    idx.sort_unstable();
    let mut beta = DVector::zeros(p);
    for &j in &idx {
        beta[j] = coef;
    }
    (beta, idx)
}

/// Fills an `rows x p` matrix one row at a time.
fn rows_from<F>(rows: usize, p: usize, rng: &mut TarpRng, mut fill: F) -> DMatrix<f64>
where
    F: FnMut(&mut [f64], &mut TarpRng),
{
    let mut x = DMatrix::zeros(rows, p);
    let mut buf = vec![0.0; p];
    for i in 0..rows {
        fill(&mut buf, rng);
        for (j, v) in buf.iter().enumerate() {
            x[(i, j)] = *v;
        }
    }
    x
}

fn assemble(
    spec: &SchemeSpec,
    train_x: DMatrix<f64>,
    test_x: DMatrix<f64>,
    beta: DVector<f64>,
    active_idx: Vec<usize>,
    rng: &mut TarpRng,
) -> Result<SimulatedData> {
    let y = make_response(&train_x, &beta, spec.noise_sd, rng)?;
    let test_y = make_response(&test_x, &beta, spec.noise_sd, rng)?;
    Ok(SimulatedData {
        train: Dataset::new(train_x, y, ResponseKind::Continuous)?,
        test_x,
        test_y,
        true_beta: beta,
        active_idx,
    })
}

/// AR(1) rows: `x_1 = e_1`, `x_j = rho x_{j-1} + sqrt(1 - rho^2) e_j`.
pub fn gen_scheme1(spec: &SchemeSpec) -> Result<SimulatedData> {
    spec.validate()?;
    if spec.rho.is_nan() || spec.rho.abs() >= 1.0 {
        return Err(TarpError::param("rho", format!("|rho| must be < 1, got {}", spec.rho)));
    }
    let mut rng = stream(spec.seed);
    let (beta, active) = random_active(spec.p, spec.n_active, spec.coef_value, &mut rng);
    let rho = spec.rho;
    let innov = (1.0 - rho * rho).sqrt();
    let fill = |row: &mut [f64], rng: &mut TarpRng| {
        let mut prev = normal(rng);
        row[0] = prev;
        for v in row.iter_mut().skip(1) {
            prev = rho * prev + innov * normal(rng);
            *v = prev;
        }
    };
    let train = rows_from(spec.n, spec.p, &mut rng, fill);
    let test = rows_from(spec.n_test, spec.p, &mut rng, fill);
    assemble(spec, train, test, beta, active, &mut rng)
}

/// Block layout of the equicorrelated design: `(start, len, rho)` per block.
fn block_layout(spec: &SchemeSpec) -> Result<Vec<(usize, usize, f64)>> {
    let bs = spec.block_size;
    let tail = spec.n_independent;
    if bs == 0 || spec.p < tail + 2 * bs {
        return Err(TarpError::param(
            "p",
            format!(
                "block design needs p >= {} (two blocks of {bs} plus {tail} independent columns), got {}",
                tail + 2 * bs,
                spec.p
            ),
        ));
    }
    let region = spec.p - tail;
    if !region.is_multiple_of(bs) {
        return Err(TarpError::param(
            "block_size",
            format!("block size {bs} does not divide the block region of {region} columns"),
        ));
    }
    for (name, r) in [("rho_low", spec.rho_low), ("rho_high", spec.rho_high)] {
        if !(0.0..1.0).contains(&r) {
            return Err(TarpError::param(name, format!("must lie in [0, 1), got {r}")));
        }
    }
    let blocks = region / bs;
    let low = blocks / 2;
    Ok((0..blocks)
        .map(|b| (b * bs, bs, if b < low { spec.rho_low } else { spec.rho_high }))
        .collect())
}

/// Equicorrelated blocks via the one-factor form
/// `x = sqrt(rho) g_block + sqrt(1 - rho) e`, low-correlation blocks first,
/// then high-correlation blocks, then independent columns. All but one
/// active coordinate sit in the high-correlation blocks; the last one is in
/// the independent tail.
pub fn gen_scheme2(spec: &SchemeSpec) -> Result<SimulatedData> {
    spec.validate()?;
    let blocks = block_layout(spec)?;
    let high_start = blocks
        .iter()
        .find(|b| b.2 == spec.rho_high)
        .map(|b| b.0)
        .expect("layout has at least one high block");
    let region = spec.p - spec.n_independent;
    let high_len = region - high_start;
    let k = spec.n_active;
    let from_tail = usize::from(k > 0 && spec.n_independent > 0);
    if k - from_tail > high_len {
        return Err(TarpError::param(
            "n_active",
            format!("{} active coordinates do not fit in {high_len} high-correlation columns", k - from_tail),
        ));
    }

    let mut rng = stream(spec.seed);
    let mut active: Vec<usize> = sample_indices(&mut rng, high_len, k - from_tail)
        .into_iter()
        .map(|j| high_start + j)
        .collect();
    if from_tail == 1 {
        active.push(region + rng.random_range(0..spec.n_independent));
    }
    active.sort_unstable();
    let mut beta = DVector::zeros(spec.p);
    for &j in &active {
        beta[j] = spec.coef_value;
    }

    let fill = |row: &mut [f64], rng: &mut TarpRng| {
        for &(start, len, rho) in &blocks {
            let g = normal(rng);
            let (a, b) = (rho.sqrt(), (1.0 - rho).sqrt());
            for v in &mut row[start..start + len] {
                *v = a * g + b * normal(rng);
            }
        }
        for v in &mut row[region..] {
            *v = normal(rng);
        }
    };
    let train = rows_from(spec.n, spec.p, &mut rng, fill);
    let test = rows_from(spec.n_test, spec.p, &mut rng, fill);
    assemble(spec, train, test, beta, active, &mut rng)
}

/// Component standard deviations of the rank-3 design.
pub const PCR_SCHEME_SDS: [f64; 3] = [15.0, 10.0, 7.0];

/// Orthonormal `p x 3` loading matrix from the QR of a Gaussian matrix.
pub fn random_loadings<R: Rng + ?Sized>(p: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(p, 3, |_, _| normal(rng));
    g.qr().q()
}

/// Rank-3 design `x = P diag(15, 10, 7) g` with `beta = P[:, 0]`. The first
/// `n_outliers` training rows have their regressors replaced by
/// `N(0, outlier_sd^2 I)` draws; their responses come from the same model.
pub fn gen_scheme3(spec: &SchemeSpec) -> Result<SimulatedData> {
    spec.validate()?;
    if spec.p < 3 {
        return Err(TarpError::param("p", format!("rank-3 design needs p >= 3, got {}", spec.p)));
    }
    if spec.n_outliers >= spec.n {
        return Err(TarpError::param(
            "n_outliers",
            format!("{} outliers for n = {}", spec.n_outliers, spec.n),
        ));
    }
    if !spec.residual_sd.is_finite() || spec.residual_sd < 0.0 {
        return Err(TarpError::param("residual_sd", "must be >= 0"));
    }
    let mut rng = stream(spec.seed);
    let loadings = random_loadings(spec.p, &mut rng);
    let beta: DVector<f64> = loadings.column(0).into_owned();
    let active: Vec<usize> = (0..spec.p).filter(|&j| beta[j] != 0.0).collect();

    let scaled = &loadings * DMatrix::from_diagonal(&DVector::from_column_slice(&PCR_SCHEME_SDS));
    let draw = |rows: usize, rng: &mut TarpRng| {
        let g = DMatrix::from_fn(3, rows, |_, _| normal(rng));
        let mut x = (&scaled * g).transpose();
        if spec.residual_sd > 0.0 {
            for v in x.iter_mut() {
                *v += spec.residual_sd * normal(rng);
            }
        }
        x
    };
    let mut train = draw(spec.n, &mut rng);
    let test = draw(spec.n_test, &mut rng);
    for i in 0..spec.n_outliers {
        for j in 0..spec.p {
            train[(i, j)] = spec.outlier_sd * normal(&mut rng);
        }
    }
    assemble(spec, train, test, beta, active, &mut rng)
}

/// Brownian-bridge paths on `(0, t_max)` observed at `t_j = j t_max/(p+1)`.
/// The driving motion has variance `t_max/4` per unit time, so the pointwise
/// sd peaks at `t_max/4` in the middle of the interval.
pub fn gen_scheme4(spec: &SchemeSpec) -> Result<SimulatedData> {
    spec.validate()?;
    if spec.p < 2 {
        return Err(TarpError::param("p", format!("bridge design needs p >= 2, got {}", spec.p)));
    }
    if !spec.t_max.is_finite() || spec.t_max <= 0.0 {
        return Err(TarpError::param("t_max", "must be finite and > 0"));
    }
    let mut rng = stream(spec.seed);
    let (beta, active) = random_active(spec.p, spec.n_active, spec.coef_value, &mut rng);
    let t_max = spec.t_max;
    let dt = t_max / (spec.p + 1) as f64;
    let step_sd = (t_max / 4.0).sqrt() * dt.sqrt();
    let p = spec.p;
    let fill = |row: &mut [f64], rng: &mut TarpRng| {
        let mut w = 0.0;
        for v in row.iter_mut() {
            w += step_sd * normal(rng);
            *v = w;
        }
        let w_end = w + step_sd * normal(rng);
        for (j, v) in row.iter_mut().enumerate() {
            let t = (j + 1) as f64 * dt;
            *v -= t / t_max * w_end;
        }
        debug_assert_eq!(row.len(), p);
    };
    let train = rows_from(spec.n, spec.p, &mut rng, fill);
    let test = rows_from(spec.n_test, spec.p, &mut rng, fill);
    assemble(spec, train, test, beta, active, &mut rng)
}

pub fn generate(spec: &SchemeSpec) -> Result<SimulatedData> {
    match spec.scheme {
        Scheme::Ar1 => gen_scheme1(spec),
        Scheme::BlockDiag => gen_scheme2(spec),
        Scheme::PcrScheme => gen_scheme3(spec),
        Scheme::BrownianBridge => gen_scheme4(spec),
    }
}

/// Balanced two-class Gaussian toy for the probit path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub n: usize,
    pub n_test: usize,
    pub p: usize,
    /// Leading coordinates whose class means differ.
    pub informative: usize,
    /// Class means are `+-shift` on informative coordinates, so the per-axis
    /// separation is `2 shift` noise sds.
    pub shift: f64,
    pub seed: u64,
}

impl ClusterSpec {
    pub fn new(n: usize, n_test: usize, p: usize, seed: u64) -> Self {
        ClusterSpec {
            n,
            n_test,
            p,
            informative: 5,
            shift: 2.0,
            seed,
        }
    }
}

/// Binary training set plus test rows and labels. Labels alternate 0, 1.
pub fn gen_two_clusters(spec: &ClusterSpec) -> Result<(Dataset, DMatrix<f64>, DVector<f64>)> {
    if spec.n < 2 || spec.n_test == 0 || spec.p == 0 {
        return Err(TarpError::dim("two-cluster toy needs n >= 2, n_test >= 1, p >= 1"));
    }
    if spec.informative == 0 || spec.informative > spec.p {
        return Err(TarpError::param("informative", "must lie in 1..=p"));
    }
    let mut rng = stream(spec.seed);
    let mut draw = |rows: usize| {
        let y = DVector::from_fn(rows, |i, _| (i % 2) as f64);
        let x = DMatrix::from_fn(rows, spec.p, |i, j| {
            let e = normal(&mut rng);
            if j < spec.informative {
                e + (2.0 * y[i] - 1.0) * spec.shift
            } else {
                e
            }
        });
        (x, y)
    };
    let (x, y) = draw(spec.n);
    let (tx, ty) = draw(spec.n_test);
    Ok((Dataset::new(x, y, ResponseKind::Binary)?, tx, ty))
}
