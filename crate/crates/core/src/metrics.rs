//! Evaluation metrics for regression and classification output.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TarpError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mspe: f64,
    pub ecp: f64,
    pub mean_width: f64,
    pub level: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub misclass_rate: f64,
    pub auc: f64,
    pub calibration_msd: f64,
}

fn same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(TarpError::dim(format!("{what}: lengths {a} and {b} differ")));
    }
    if a == 0 {
        return Err(TarpError::dim(format!("{what}: empty input")));
    }
    Ok(())
}

fn check_binary(y: &[f64]) -> Result<()> {
    match y.iter().find(|&&v| v != 0.0 && v != 1.0) {
        Some(v) => Err(TarpError::NotBinary(format!("label {v}"))),
        None => Ok(()),
    }
}

fn check_probs(p: &[f64]) -> Result<()> {
    match p.iter().find(|&&v| !(0.0..=1.0).contains(&v)) {
        Some(v) => Err(TarpError::param("probs", format!("probability {v} outside [0, 1]"))),
        None => Ok(()),
    }
}

pub fn mspe(yhat: &[f64], ytrue: &[f64]) -> Result<f64> {
    same_len(yhat.len(), ytrue.len(), "mspe")?;
    let s: f64 = yhat.iter().zip(ytrue).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / yhat.len() as f64)
}

/// Coverage of closed intervals `[lower, upper]` and their mean width.
pub fn ecp_width(lower: &[f64], upper: &[f64], ytrue: &[f64]) -> Result<(f64, f64)> {
    same_len(lower.len(), upper.len(), "ecp_width")?;
    same_len(lower.len(), ytrue.len(), "ecp_width")?;
    if let Some(i) = lower.iter().zip(upper).position(|(l, u)| l > u) {
        return Err(TarpError::param(
            "interval",
            format!("lower bound exceeds upper bound at index {i}"),
        ));
    }
    let n = ytrue.len() as f64;
    let covered = lower
        .iter()
        .zip(upper)
        .zip(ytrue)
        .filter(|((l, u), y)| *l <= *y && *y <= *u)
        .count();
    let width: f64 = lower.iter().zip(upper).map(|(l, u)| u - l).sum();
    Ok((covered as f64 / n, width / n))
}

pub fn regression_metrics(yhat: &[f64], lower: &[f64], upper: &[f64], ytrue: &[f64], level: f64) -> Result<RegressionMetrics> {
    let (ecp, mean_width) = ecp_width(lower, upper, ytrue)?;
    Ok(RegressionMetrics {
        mspe: mspe(yhat, ytrue)?,
        ecp,
        mean_width,
        level,
    })
}

/// Fraction misclassified; a probability equal to the threshold counts as
/// class 1.
pub fn misclass(probs: &[f64], ytrue: &[f64], threshold: f64) -> Result<f64> {
    same_len(probs.len(), ytrue.len(), "misclass")?;
    check_probs(probs)?;
    check_binary(ytrue)?;
    let wrong = probs
        .iter()
        .zip(ytrue)
        .filter(|(p, y)| (**p >= threshold) != (**y == 1.0))
        .count();
    Ok(wrong as f64 / probs.len() as f64)
}

/// Mid-ranks (1-based) with ties sharing their average rank.
fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Area under the ROC curve via the Mann-Whitney rank statistic.
pub fn roc_auc(scores: &[f64], ytrue: &[f64]) -> Result<f64> {
    same_len(scores.len(), ytrue.len(), "roc_auc")?;
    check_binary(ytrue)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(TarpError::NonFinite("scores"));
    }
    let n_pos = ytrue.iter().filter(|&&y| y == 1.0).count();
    let n_neg = ytrue.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(TarpError::NotBinary("both classes must be present for AUC".into()));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(ytrue).filter(|(_, y)| **y == 1.0).map(|(r, _)| r).sum();
    let (np, nn) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

pub const CALIBRATION_BINS: usize = 10;

/// Mean over non-empty bins of `(observed positive rate - bin midpoint)^2`,
/// with bins `[0, 0.1), ..., [0.9, 1.0]`.
pub fn calibration_msd(probs: &[f64], ytrue: &[f64]) -> Result<f64> {
    same_len(probs.len(), ytrue.len(), "calibration_msd")?;
    check_probs(probs)?;
    check_binary(ytrue)?;
    let mut count = [0usize; CALIBRATION_BINS];
    let mut pos = [0usize; CALIBRATION_BINS];
    for (&p, &y) in probs.iter().zip(ytrue) {
        let b = ((p * CALIBRATION_BINS as f64).floor() as usize).min(CALIBRATION_BINS - 1);
        count[b] += 1;
        if y == 1.0 {
            pos[b] += 1;
        }
    }
    let mut total = 0.0;
    let mut used = 0;
    for b in 0..CALIBRATION_BINS {
        if count[b] == 0 {
            continue;
        }
        let mid = (b as f64 + 0.5) / CALIBRATION_BINS as f64;
        let rate = pos[b] as f64 / count[b] as f64;
        total += (rate - mid) * (rate - mid);
        used += 1;
    }
    Ok(total / used as f64)
}

pub fn classification_metrics(probs: &[f64], ytrue: &[f64]) -> Result<ClassificationMetrics> {
    Ok(ClassificationMetrics {
        misclass_rate: misclass(probs, ytrue, 0.5)?,
        auc: roc_auc(probs, ytrue)?,
        calibration_msd: calibration_msd(probs, ytrue)?,
    })
}

/// Mean and sample standard deviation; the sd of a single value is 0.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, var.sqrt())
}
