//! Experiment plumbing behind the command-line tool: benchmark loops,
//! screening reports and file output.
//!
//! Everything written to `report.csv`, `summary.csv`, `summary.json` and
//! `predictions.csv` depends only on seeds and inputs. Wall-clock numbers go
//! to `timings.json` so the other files stay byte-identical between runs.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{apply_standardization, standardize, write_csv, Dataset, ResponseKind, SplitPlan};
use crate::ensemble::{run_tarp_binary_in_pool, run_tarp_in_pool, with_workers, PhaseTimings, TarpConfig};
use crate::error::{Result, TarpError};
use crate::metrics::{calibration_msd, ecp_width, mean_sd, misclass, mspe, roc_auc};
use crate::rng::{derive_seed, substream, Domain};
use crate::screening::{inclusion_probabilities, marginal_utility, sample_gamma, InclusionProbs};
use crate::simgen::{gen_two_clusters, generate, ClusterSpec, SchemeSpec, SimulatedData};

/// Where the datasets of an experiment come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// A fresh simulated dataset per index; the spec's seed is replaced by
    /// the derived dataset seed.
    Scheme(SchemeSpec),
    /// The binary two-cluster toy, reseeded per index.
    Clusters(ClusterSpec),
    /// One table, re-split at random per index.
    Table { data: DatasetTable, test_fraction: f64 },
}

/// In-memory copy of a loaded table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetTable {
    pub path: PathBuf,
    #[serde(skip)]
    pub rows: Option<TableRows>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRows {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub kind: ResponseKind,
}

impl DatasetTable {
    pub fn from_dataset(path: impl Into<PathBuf>, data: &Dataset) -> Self {
        DatasetTable {
            path: path.into(),
            rows: Some(TableRows {
                x: data.x().clone(),
                y: data.y().clone(),
                kind: data.response_kind(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub label: String,
    pub source: DataSource,
    pub n_datasets: usize,
    /// Master seed; dataset `d` uses `derive_seed(seed, d, Dataset)` for its
    /// data and `derive_seed(seed, d, DatasetFit)` for its fit.
    pub seed: u64,
    pub tarp: TarpConfig,
    pub workers: usize,
}

/// Per-dataset outcome. Classification fields are NaN for continuous runs
/// and vice versa.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetOutcome {
    pub dataset: usize,
    pub data_seed: u64,
    pub fit_seed: u64,
    pub mspe: f64,
    pub ecp: f64,
    pub width: f64,
    pub misclass: f64,
    pub auc: f64,
    pub msd: f64,
    pub p_gamma_mean: f64,
    pub wall_seconds: f64,
    pub timings: PhaseTimings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub n_datasets: usize,
    pub mspe_mean: f64,
    pub mspe_sd: f64,
    pub ecp_mean: f64,
    pub ecp_sd: f64,
    pub width_mean: f64,
    pub width_sd: f64,
    pub misclass_mean: Option<f64>,
    pub misclass_sd: Option<f64>,
    pub auc_mean: Option<f64>,
    pub auc_sd: Option<f64>,
    pub msd_mean: Option<f64>,
    pub msd_sd: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub spec: ExperimentSpec,
    pub row: ReportRow,
    pub datasets: Vec<DatasetOutcome>,
    pub binary: bool,
}

fn train_test_for(source: &DataSource, d: usize, data_seed: u64) -> Result<(Dataset, DMatrix<f64>, DVector<f64>)> {
    match source {
        DataSource::Scheme(spec) => {
            let spec = SchemeSpec {
                seed: data_seed,
                ..spec.clone()
            };
            let SimulatedData {
                train, test_x, test_y, ..
            } = generate(&spec)?;
            Ok((train, test_x, test_y))
        }
        DataSource::Clusters(spec) => {
            let spec = ClusterSpec {
                seed: data_seed,
                ..spec.clone()
            };
            gen_two_clusters(&spec)
        }
        DataSource::Table { data, test_fraction } => {
            let rows = data
                .rows
                .as_ref()
                .ok_or_else(|| TarpError::param("data", "table rows were not loaded"))?;
            let n = rows.x.nrows();
            let plan = SplitPlan::random(n, *test_fraction, &mut substream(data_seed, d as u64, Domain::Split))?;
            let pick = |idx: &[usize]| {
                (
                    rows.x.select_rows(idx),
                    DVector::from_iterator(idx.len(), idx.iter().map(|&i| rows.y[i])),
                )
            };
            let (xtr, ytr) = pick(plan.train_idx());
            let (xte, yte) = pick(plan.test_idx());
            Ok((Dataset::new(xtr, ytr, rows.kind)?, xte, yte))
        }
    }
}

fn run_dataset(spec: &ExperimentSpec, d: usize) -> Result<DatasetOutcome> {
    let data_seed = derive_seed(spec.seed, d as u64, Domain::Dataset);
    let fit_seed = derive_seed(spec.seed, d as u64, Domain::DatasetFit);
    let (raw, test_x, test_y) = train_test_for(&spec.source, d, data_seed)?;
    let train = standardize(&raw)?;
    let xt = apply_standardization(&train, &test_x)?;
    let cfg = TarpConfig {
        seed: fit_seed,
        ..spec.tarp.clone()
    };
    let yt: Vec<f64> = test_y.iter().copied().collect();
    let mut out = DatasetOutcome {
        dataset: d,
        data_seed,
        fit_seed,
        mspe: f64::NAN,
        ecp: f64::NAN,
        width: f64::NAN,
        misclass: f64::NAN,
        auc: f64::NAN,
        msd: f64::NAN,
        p_gamma_mean: f64::NAN,
        wall_seconds: 0.0,
        timings: PhaseTimings::default(),
    };
    if train.response_kind() == ResponseKind::Binary {
        let r = run_tarp_binary_in_pool(&train, &xt, &cfg)?;
        out.misclass = misclass(&r.probs, &yt, 0.5)?;
        out.auc = roc_auc(&r.probs, &yt).unwrap_or(f64::NAN);
        out.msd = calibration_msd(&r.probs, &yt)?;
        out.p_gamma_mean = mean_usize(&r.p_gamma);
        out.wall_seconds = r.wall_seconds;
        out.timings = r.timings;
    } else {
        let r = run_tarp_in_pool(&train, &xt, &cfg)?;
        out.mspe = mspe(&r.yhat, &yt)?;
        let (ecp, width) = ecp_width(&r.lower, &r.upper, &yt)?;
        out.ecp = ecp;
        out.width = width;
        out.p_gamma_mean = mean_usize(&r.p_gamma);
        out.wall_seconds = r.wall_seconds;
        out.timings = r.timings;
    }
    Ok(out)
}

fn mean_usize(v: &[usize]) -> f64 {
    v.iter().sum::<usize>() as f64 / v.len() as f64
}

fn summarize(label: &str, outcomes: &[DatasetOutcome], binary: bool) -> ReportRow {
    let col = |f: fn(&DatasetOutcome) -> f64| mean_sd(&outcomes.iter().map(f).collect::<Vec<_>>());
    let (mspe_mean, mspe_sd) = col(|o| o.mspe);
    let (ecp_mean, ecp_sd) = col(|o| o.ecp);
    let (width_mean, width_sd) = col(|o| o.width);
    let (mc, mcs) = col(|o| o.misclass);
    let (auc, aucs) = col(|o| o.auc);
    let (msd, msds) = col(|o| o.msd);
    let opt = |v: f64| binary.then_some(v);
    ReportRow {
        method: label.to_string(),
        n_datasets: outcomes.len(),
        mspe_mean,
        mspe_sd,
        ecp_mean,
        ecp_sd,
        width_mean,
        width_sd,
        misclass_mean: opt(mc),
        misclass_sd: opt(mcs),
        auc_mean: opt(auc),
        auc_sd: opt(aucs),
        msd_mean: opt(msd),
        msd_sd: opt(msds),
        wall_seconds: outcomes.iter().map(|o| o.wall_seconds).sum(),
    }
}

/// Runs every dataset of the experiment on a pool of `spec.workers` threads
/// and reduces the outcomes in dataset order.
pub fn run_benchmark(spec: &ExperimentSpec) -> Result<BenchmarkReport> {
    if spec.n_datasets == 0 {
        return Err(TarpError::param("n_datasets", "must be >= 1"));
    }
    spec.tarp.validate()?;
    let outcomes: Vec<Result<DatasetOutcome>> = with_workers(spec.workers, || {
        (0..spec.n_datasets)
            .into_par_iter()
            .map(|d| {
                run_dataset(spec, d).map_err(|e| TarpError::Dataset {
                    index: d,
                    seed: derive_seed(spec.seed, d as u64, Domain::Dataset),
                    source: Box::new(e),
                })
            })
            .collect()
    })?;
    let datasets = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let binary = datasets.iter().all(|o| o.mspe.is_nan());
    let row = summarize(&spec.label, &datasets, binary);
    Ok(BenchmarkReport {
        spec: spec.clone(),
        row,
        datasets,
        binary,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| TarpError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| TarpError::io(path, e))
}

fn json_pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// `{}` formatting, with NaN written as an empty cell.
fn cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(cell).unwrap_or_default()
}

/// Writes `report.csv` (one numeric row per dataset), `summary.csv`,
/// `summary.json` and `timings.json` into `dir`.
pub fn write_benchmark(dir: &Path, report: &BenchmarkReport) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let report_path = dir.join("report.csv");
    {
        let mut w = csv::Writer::from_path(&report_path)?;
        if report.binary {
            w.write_record(["dataset", "seed", "misclass", "auc", "msd", "p_gamma_mean"])?;
            for o in &report.datasets {
                w.write_record([
                    o.dataset.to_string(),
                    o.data_seed.to_string(),
                    cell(o.misclass),
                    cell(o.auc),
                    cell(o.msd),
                    cell(o.p_gamma_mean),
                ])?;
            }
        } else {
            w.write_record(["dataset", "seed", "mspe", "ecp", "width", "p_gamma_mean"])?;
            for o in &report.datasets {
                w.write_record([
                    o.dataset.to_string(),
                    o.data_seed.to_string(),
                    cell(o.mspe),
                    cell(o.ecp),
                    cell(o.width),
                    cell(o.p_gamma_mean),
                ])?;
            }
        }
        w.flush().map_err(|e| TarpError::io(&report_path, e))?;
    }

    let row = &report.row;
    let summary_csv = dir.join("summary.csv");
    {
        let mut w = csv::Writer::from_path(&summary_csv)?;
        w.write_record([
            "method",
            "n_datasets",
            "mspe_mean",
            "mspe_sd",
            "ecp_mean",
            "ecp_sd",
            "width_mean",
            "width_sd",
            "misclass_mean",
            "misclass_sd",
            "auc_mean",
            "auc_sd",
            "msd_mean",
            "msd_sd",
        ])?;
        w.write_record([
            row.method.clone(),
            row.n_datasets.to_string(),
            cell(row.mspe_mean),
            cell(row.mspe_sd),
            cell(row.ecp_mean),
            cell(row.ecp_sd),
            cell(row.width_mean),
            cell(row.width_sd),
            opt_cell(row.misclass_mean),
            opt_cell(row.misclass_sd),
            opt_cell(row.auc_mean),
            opt_cell(row.auc_sd),
            opt_cell(row.msd_mean),
            opt_cell(row.msd_sd),
        ])?;
        w.flush().map_err(|e| TarpError::io(&summary_csv, e))?;
    }

    #[derive(Serialize)]
    struct Summary<'a> {
        method: &'a str,
        n_datasets: usize,
        spec: &'a ExperimentSpec,
        dataset_seeds: Vec<u64>,
        fit_seeds: Vec<u64>,
        mspe: [f64; 2],
        ecp: [f64; 2],
        width: [f64; 2],
        misclass: Option<[f64; 2]>,
        auc: Option<[f64; 2]>,
        msd: Option<[f64; 2]>,
    }
    let pair = |m: Option<f64>, s: Option<f64>| m.zip(s).map(|(a, b)| [a, b]);
    let nan_free = |v: f64| if v.is_nan() { 0.0 } else { v };
    let summary = Summary {
        method: &row.method,
        n_datasets: row.n_datasets,
        spec: &report.spec,
        dataset_seeds: report.datasets.iter().map(|o| o.data_seed).collect(),
        fit_seeds: report.datasets.iter().map(|o| o.fit_seed).collect(),
        mspe: [nan_free(row.mspe_mean), nan_free(row.mspe_sd)],
        ecp: [nan_free(row.ecp_mean), nan_free(row.ecp_sd)],
        width: [nan_free(row.width_mean), nan_free(row.width_sd)],
        misclass: pair(row.misclass_mean, row.misclass_sd),
        auc: pair(row.auc_mean, row.auc_sd),
        msd: pair(row.msd_mean, row.msd_sd),
    };
    let summary_json = dir.join("summary.json");
    write_text(&summary_json, &json_pretty(&summary)?)?;

    #[derive(Serialize)]
    struct Timing {
        dataset: usize,
        wall_seconds: f64,
        phases: PhaseTimings,
    }
    let timings: Vec<Timing> = report
        .datasets
        .iter()
        .map(|o| Timing {
            dataset: o.dataset,
            wall_seconds: o.wall_seconds,
            phases: o.timings,
        })
        .collect();
    let timings_json = dir.join("timings.json");
    write_text(&timings_json, &json_pretty(&timings)?)?;
    Ok(vec![report_path, summary_csv, summary_json, timings_json])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenReport {
    pub delta: f64,
    pub q: Vec<f64>,
    /// Mean number of selected columns, the sum of `q`.
    pub expected_selected: f64,
    pub degenerate: bool,
    pub selections: Vec<Vec<usize>>,
    /// Fraction of replicates selecting each column.
    pub frequency: Vec<f64>,
    pub union: Vec<usize>,
    pub names: Vec<String>,
}

/// Draws `replicates` screening masks from the utilities of `data`.
pub fn screen_report(data: &Dataset, delta: f64, replicates: usize, seed: u64) -> Result<ScreenReport> {
    if replicates == 0 {
        return Err(TarpError::param("replicates", "must be >= 1"));
    }
    let p = data.p();
    let q = if delta == 0.0 {
        InclusionProbs::all_ones(p, 0.0)
    } else {
        let r = marginal_utility(data)?;
        inclusion_probabilities(&r, delta)?
    };
    let degenerate = q.is_degenerate();
    let q = if degenerate { InclusionProbs::all_ones(p, delta) } else { q };
    let selections: Vec<Vec<usize>> = (0..replicates)
        .map(|l| sample_gamma(&q, &mut substream(seed, l as u64, Domain::Screen)).selected().to_vec())
        .collect();
    let mut counts = vec![0usize; p];
    for s in &selections {
        for &j in s {
            counts[j] += 1;
        }
    }
    Ok(ScreenReport {
        delta,
        q: q.values().iter().copied().collect(),
        expected_selected: q.expected_selected(),
        degenerate,
        frequency: counts.iter().map(|&c| c as f64 / replicates as f64).collect(),
        union: (0..p).filter(|&j| counts[j] > 0).collect(),
        selections,
        names: data.names().to_vec(),
    })
}

/// Writes `screen_selections.csv` (replicate, column index, column name),
/// `screen_frequency.csv` (column index, q, frequency) and `screen.json`.
pub fn write_screen(dir: &Path, report: &ScreenReport) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let sel = dir.join("screen_selections.csv");
    {
        let mut w = csv::Writer::from_path(&sel)?;
        w.write_record(["replicate", "column", "name"])?;
        for (l, s) in report.selections.iter().enumerate() {
            for &j in s {
                w.write_record([l.to_string(), j.to_string(), report.names[j].clone()])?;
            }
        }
        w.flush().map_err(|e| TarpError::io(&sel, e))?;
    }
    let freq = dir.join("screen_frequency.csv");
    {
        let mut w = csv::Writer::from_path(&freq)?;
        w.write_record(["column", "q", "frequency"])?;
        for j in 0..report.q.len() {
            w.write_record([j.to_string(), cell(report.q[j]), cell(report.frequency[j])])?;
        }
        w.flush().map_err(|e| TarpError::io(&freq, e))?;
    }
    #[derive(Serialize)]
    struct Meta<'a> {
        delta: f64,
        replicates: usize,
        expected_selected: f64,
        mean_selected: f64,
        degenerate: bool,
        union: &'a [usize],
    }
    let mean_selected =
        report.selections.iter().map(Vec::len).sum::<usize>() as f64 / report.selections.len() as f64;
    let meta = dir.join("screen.json");
    write_text(
        &meta,
        &json_pretty(&Meta {
            delta: report.delta,
            replicates: report.selections.len(),
            expected_selected: report.expected_selected,
            mean_selected,
            degenerate: report.degenerate,
            union: &report.union,
        })?,
    )?;
    Ok(vec![sel, freq, meta])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimulationSidecar {
    pub seed: u64,
    pub spec: SchemeSpec,
    pub active_idx: Vec<usize>,
    /// `(index, coefficient)` for every non-zero coefficient.
    pub true_beta_nonzero: Vec<(usize, f64)>,
}

/// Writes `train.csv`, `test.csv` and `sidecar.json`.
pub fn write_simulation(dir: &Path, spec: &SchemeSpec, sim: &SimulatedData) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let train = dir.join("train.csv");
    write_csv(&train, &sim.train)?;
    let test = dir.join("test.csv");
    let test_ds = Dataset::with_names(
        sim.test_x.clone(),
        sim.test_y.clone(),
        ResponseKind::Continuous,
        sim.train.names().to_vec(),
        sim.train.response_name().to_string(),
    )?;
    write_csv(&test, &test_ds)?;
    let sidecar = SimulationSidecar {
        seed: spec.seed,
        spec: spec.clone(),
        active_idx: sim.active_idx.clone(),
        true_beta_nonzero: sim
            .true_beta
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0.0)
            .map(|(j, &b)| (j, b))
            .collect(),
    };
    let side = dir.join("sidecar.json");
    write_text(&side, &json_pretty(&sidecar)?)?;
    Ok(vec![train, test, side])
}

/// Result of a single fit on a train/test pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub config: TarpConfig,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub p: usize,
    pub binary: bool,
    pub delta: f64,
    pub expected_p_gamma: f64,
    pub p_gamma_mean: f64,
    pub p_gamma_min: usize,
    pub p_gamma_max: usize,
    pub m_mean: f64,
    pub mspe: Option<f64>,
    pub ecp: Option<f64>,
    pub width: Option<f64>,
    pub misclass: Option<f64>,
    pub auc: Option<f64>,
}

/// Standardizes `raw_train`, fits with `cfg` and writes `predictions.csv`,
/// `summary.json` and `timings.json` into `dir`.
pub fn fit_and_write(
    dir: &Path,
    raw_train: &Dataset,
    test_x: &DMatrix<f64>,
    test_y: Option<&DVector<f64>>,
    cfg: &TarpConfig,
) -> Result<FitSummary> {
    let train = standardize(raw_train)?;
    let xt = apply_standardization(&train, test_x)?;
    create_dir(dir)?;
    let pred_path = dir.join("predictions.csv");
    let mut w = csv::Writer::from_path(&pred_path)?;
    let binary = train.response_kind() == ResponseKind::Binary;
    let yt: Option<Vec<f64>> = test_y.map(|y| y.iter().copied().collect());
    let mut summary;
    let timings;
    if binary {
        let r = with_workers(cfg.workers, || run_tarp_binary_in_pool(&train, &xt, cfg))??;
        w.write_record(["index", "probability"])?;
        for (i, p) in r.probs.iter().enumerate() {
            w.write_record([i.to_string(), cell(*p)])?;
        }
        summary = base_summary(cfg, &train, xt.nrows(), true, r.delta, r.expected_p_gamma, &r.p_gamma, &r.m);
        if let Some(y) = &yt {
            if y.iter().all(|&v| v == 0.0 || v == 1.0) {
                summary.misclass = Some(misclass(&r.probs, y, 0.5)?);
                summary.auc = roc_auc(&r.probs, y).ok();
            }
        }
        timings = (r.wall_seconds, r.timings);
    } else {
        let r = with_workers(cfg.workers, || run_tarp_in_pool(&train, &xt, cfg))??;
        w.write_record(["index", "yhat", "lower", "upper"])?;
        for i in 0..r.yhat.len() {
            w.write_record([i.to_string(), cell(r.yhat[i]), cell(r.lower[i]), cell(r.upper[i])])?;
        }
        summary = base_summary(cfg, &train, xt.nrows(), false, r.delta, r.expected_p_gamma, &r.p_gamma, &r.m);
        if let Some(y) = &yt {
            summary.mspe = Some(mspe(&r.yhat, y)?);
            let (ecp, width) = ecp_width(&r.lower, &r.upper, y)?;
            summary.ecp = Some(ecp);
            summary.width = Some(width);
        }
        timings = (r.wall_seconds, r.timings);
    }
    w.flush().map_err(|e| TarpError::io(&pred_path, e))?;
    write_text(&dir.join("summary.json"), &json_pretty(&summary)?)?;
    #[derive(Serialize)]
    struct Timing {
        wall_seconds: f64,
        phases: PhaseTimings,
    }
    write_text(
        &dir.join("timings.json"),
        &json_pretty(&Timing {
            wall_seconds: timings.0,
            phases: timings.1,
        })?,
    )?;
    Ok(summary)
}

#[allow(clippy::too_many_arguments)]
fn base_summary(
    cfg: &TarpConfig,
    train: &Dataset,
    n_test: usize,
    binary: bool,
    delta: f64,
    expected: f64,
    p_gamma: &[usize],
    m: &[usize],
) -> FitSummary {
    FitSummary {
        config: cfg.clone(),
        seed: cfg.seed,
        n_train: train.n(),
        n_test,
        p: train.p(),
        binary,
        delta,
        expected_p_gamma: expected,
        p_gamma_mean: mean_usize(p_gamma),
        p_gamma_min: p_gamma.iter().copied().min().unwrap_or(0),
        p_gamma_max: p_gamma.iter().copied().max().unwrap_or(0),
        m_mean: mean_usize(m),
        mspe: None,
        ecp: None,
        width: None,
        misclass: None,
        auc: None,
    }
}
