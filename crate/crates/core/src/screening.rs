//! Randomized independence screening.
//!
//! Each predictor gets a marginal utility `r_j` (Pearson correlation with
//! the response), which becomes an inclusion probability
//! `q_j = |r_j|^delta / max_k |r_k|^delta`. A screening mask is one draw of
//! independent `Bernoulli(q_j)` indicators.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Result, TarpError};

/// Redraws attempted before an empty mask falls back to the top column.
pub const EMPTY_MASK_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct UtilityVector {
    r: DVector<f64>,
}

impl UtilityVector {
    pub fn new(r: DVector<f64>) -> Result<Self> {
        if r.iter().any(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(TarpError::param("utility", "entries must lie in [-1, 1]"));
        }
        Ok(UtilityVector { r })
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.r
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    /// Index of the largest |r_j| (first one on ties).
    pub fn argmax_abs(&self) -> usize {
        let mut best = 0;
        for (j, v) in self.r.iter().enumerate() {
            if v.abs() > self.r[best].abs() {
                best = j;
            }
        }
        best
    }
}

/// Pluggable marginal dependence measure.
pub trait MarginalUtility {
    fn utility(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<UtilityVector>;
}

/// Pearson correlation of each column with the response. Used for both
/// continuous and binary responses.
#[derive(Debug, Clone, Copy, Default)]
pub struct PearsonUtility;

impl MarginalUtility for PearsonUtility {
    fn utility(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<UtilityVector> {
        let n = x.nrows();
        if n < 3 {
            return Err(TarpError::dim(format!(
                "marginal utility needs at least 3 rows, got {n}"
            )));
        }
        if y.len() != n {
            return Err(TarpError::dim("response length differs from row count"));
        }
        let y_mean = y.mean();
        let yc = y.add_scalar(-y_mean);
        let y_ss = yc.norm_squared();
        let r = DVector::from_iterator(
            x.ncols(),
            x.column_iter().map(|col| {
                let mean = col.mean();
                let mut sxy = 0.0;
                let mut sxx = 0.0;
                for (xi, yi) in col.iter().zip(yc.iter()) {
                    let d = xi - mean;
                    sxy += d * yi;
                    sxx += d * d;
                }
                if sxx == 0.0 || y_ss == 0.0 {
                    0.0
                } else {
                    (sxy / (sxx.sqrt() * y_ss.sqrt())).clamp(-1.0, 1.0)
                }
            }),
        );
        UtilityVector::new(r)
    }
}

/// Pearson utilities of every column of `data` against its response.
pub fn marginal_utility(data: &Dataset) -> Result<UtilityVector> {
    PearsonUtility.utility(data.x(), data.y())
}

/// `max{0, (1 + ln(p/n)) / 2}`.
pub fn default_delta(n: usize, p: usize) -> f64 {
    let v = (1.0 + (p as f64 / n as f64).ln()) / 2.0;
    v.max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InclusionProbs {
    q: DVector<f64>,
    delta: f64,
    argmax: usize,
    degenerate: bool,
}

impl InclusionProbs {
    /// Every column included with probability one (screening switched off).
    pub fn all_ones(p: usize, delta: f64) -> Self {
        InclusionProbs {
            q: DVector::from_element(p, 1.0),
            delta,
            argmax: 0,
            degenerate: false,
        }
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Column with the largest utility; always has `q = 1` unless degenerate.
    pub fn argmax(&self) -> usize {
        self.argmax
    }

    /// True when every utility was zero and all `q_j` are zero.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Mean of the Poisson-binomial count of selected columns.
    pub fn expected_selected(&self) -> f64 {
        self.q.sum()
    }
}

/// Normalized inclusion probabilities. With `delta = 0` every `q_j` is 1
/// (including zero-utility columns, by the `0^0 = 1` convention). When all
/// utilities are zero and `delta > 0` the result is flagged degenerate with
/// all probabilities zero; the caller picks the fallback.
pub fn inclusion_probabilities(r: &UtilityVector, delta: f64) -> Result<InclusionProbs> {
    if !delta.is_finite() || delta < 0.0 {
        return Err(TarpError::param("delta", format!("must be finite and >= 0, got {delta}")));
    }
    let p = r.len();
    if p == 0 {
        return Err(TarpError::dim("no predictors to screen"));
    }
    let argmax = r.argmax_abs();
    if delta == 0.0 {
        return Ok(InclusionProbs {
            argmax,
            ..InclusionProbs::all_ones(p, 0.0)
        });
    }
    let max_abs = r.values()[argmax].abs();
    if max_abs == 0.0 {
        return Ok(InclusionProbs {
            q: DVector::zeros(p),
            delta,
            argmax,
            degenerate: true,
        });
    }
    // |r_j|^d / max^d computed as (|r_j| / max)^d keeps the top column at
    // exactly 1 and avoids underflow for large delta.
    let q = r.values().map(|v| {
        let ratio = v.abs() / max_abs;
        if ratio == 1.0 {
            1.0
        } else {
            ratio.powf(delta)
        }
    });
    Ok(InclusionProbs {
        q,
        delta,
        argmax,
        degenerate: false,
    })
}

/// The screening indicator vector and its selected column indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GammaMask {
    gamma: Vec<bool>,
    selected: Vec<usize>,
}

impl GammaMask {
    pub fn from_gamma(gamma: Vec<bool>) -> Self {
        let selected = gamma
            .iter()
            .enumerate()
            .filter_map(|(j, &g)| g.then_some(j))
            .collect();
        GammaMask { gamma, selected }
    }

    pub fn from_selected(p: usize, selected: &[usize]) -> Result<Self> {
        let mut gamma = vec![false; p];
        for &j in selected {
            if j >= p {
                return Err(TarpError::dim(format!("selected column {j} out of range for p = {p}")));
            }
            gamma[j] = true;
        }
        Ok(Self::from_gamma(gamma))
    }

    pub fn all(p: usize) -> Self {
        Self::from_gamma(vec![true; p])
    }

    pub fn gamma(&self) -> &[bool] {
        &self.gamma
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn p_gamma(&self) -> usize {
        self.selected.len()
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    /// FNV-1a over the selected indices; a compact fingerprint for records.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &j in &self.selected {
            for b in (j as u64).to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

/// Compact mask description kept per replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSummary {
    pub p_gamma: usize,
    pub fingerprint: u64,
}

impl From<&GammaMask> for MaskSummary {
    fn from(m: &GammaMask) -> Self {
        MaskSummary {
            p_gamma: m.p_gamma(),
            fingerprint: m.fingerprint(),
        }
    }
}

/// Independent Bernoulli(q_j) draws. An empty draw is retried up to
/// [`EMPTY_MASK_RETRIES`] times, after which the top-utility column alone is
/// selected.
pub fn sample_gamma<R: Rng + ?Sized>(q: &InclusionProbs, rng: &mut R) -> GammaMask {
    let p = q.q.len();
    for _ in 0..=EMPTY_MASK_RETRIES {
        let gamma: Vec<bool> = q.q.iter().map(|&qj| rng.random::<f64>() < qj).collect();
        if gamma.iter().any(|&g| g) {
            return GammaMask::from_gamma(gamma);
        }
    }
    let mut gamma = vec![false; p];
    gamma[q.argmax] = true;
    GammaMask::from_gamma(gamma)
}

/// Column submatrix `X_gamma` in selected order, with the original column
/// identifiers.
pub fn export_screened(data: &Dataset, mask: &GammaMask) -> Result<(DMatrix<f64>, Vec<String>)> {
    if mask.len() != data.p() {
        return Err(TarpError::dim(format!(
            "mask has length {}, data has {} columns",
            mask.len(),
            data.p()
        )));
    }
    if mask.is_empty() {
        return Err(TarpError::dim("screening mask selects no columns"));
    }
    let x = data.x().select_columns(mask.selected());
    let names = mask
        .selected()
        .iter()
        .map(|&j| data.names()[j].clone())
        .collect();
    Ok((x, names))
}
