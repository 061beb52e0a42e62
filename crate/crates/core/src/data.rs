//! Dataset representation, column standardization, splitting and CSV I/O.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TarpError};

/// Columns whose sample sd falls below this (relative to their magnitude)
/// are treated as constant.
const CONSTANT_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseKind {
    Continuous,
    Binary,
}

impl ResponseKind {
    /// Binary iff every value is exactly 0 or 1.
    pub fn infer(y: &DVector<f64>) -> Self {
        if !y.is_empty() && y.iter().all(|&v| v == 0.0 || v == 1.0) {
            ResponseKind::Binary
        } else {
            ResponseKind::Continuous
        }
    }
}

/// Design matrix plus response, with the column statistics needed to map
/// new rows onto the training scale.
///
/// Immutable once built; replicate workers share it by reference.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    response_kind: ResponseKind,
    col_means: DVector<f64>,
    col_scales: DVector<f64>,
    standardized: bool,
    names: Vec<String>,
    response_name: String,
}

impl Dataset {
    /// Builds an unstandardized dataset. Column names default to `x0, x1, ...`.
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, kind: ResponseKind) -> Result<Self> {
        let names = (0..x.ncols()).map(|j| format!("x{j}")).collect();
        Self::with_names(x, y, kind, names, "y".to_string())
    }

    pub fn with_names(
        x: DMatrix<f64>,
        y: DVector<f64>,
        kind: ResponseKind,
        names: Vec<String>,
        response_name: String,
    ) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(TarpError::dim(format!(
                "X has {} rows but y has length {}",
                x.nrows(),
                y.len()
            )));
        }
        if names.len() != x.ncols() {
            return Err(TarpError::dim(format!(
                "{} column names for {} columns",
                names.len(),
                x.ncols()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(TarpError::NonFinite("design matrix"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(TarpError::NonFinite("response"));
        }
        if kind == ResponseKind::Binary && ResponseKind::infer(&y) != ResponseKind::Binary {
            return Err(TarpError::NotBinary(
                "binary response must contain only 0 and 1".into(),
            ));
        }
        let p = x.ncols();
        Ok(Dataset {
            x,
            y,
            response_kind: kind,
            col_means: DVector::zeros(p),
            col_scales: DVector::from_element(p, 1.0),
            standardized: false,
            names,
            response_name,
        })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn response_kind(&self) -> ResponseKind {
        self.response_kind
    }

    pub fn col_means(&self) -> &DVector<f64> {
        &self.col_means
    }

    pub fn col_scales(&self) -> &DVector<f64> {
        &self.col_scales
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    /// A column is flagged constant when its recorded scale is zero.
    pub fn is_constant(&self, j: usize) -> bool {
        self.col_scales[j] == 0.0
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    /// Rows `idx` of this dataset, keeping column statistics.
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.n()) {
            return Err(TarpError::dim(format!(
                "row index {bad} out of range for n = {}",
                self.n()
            )));
        }
        let x = self.x.select_rows(idx);
        let y = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.y[i]));
        Ok(Dataset {
            x,
            y,
            ..self.clone_meta()
        })
    }

    fn clone_meta(&self) -> Dataset {
        Dataset {
            x: DMatrix::zeros(0, 0),
            y: DVector::zeros(0),
            response_kind: self.response_kind,
            col_means: self.col_means.clone(),
            col_scales: self.col_scales.clone(),
            standardized: self.standardized,
            names: self.names.clone(),
            response_name: self.response_name.clone(),
        }
    }
}

/// Column mean and sample standard deviation (divisor n - 1).
fn column_stats(col: nalgebra::DVectorView<'_, f64>) -> (f64, f64) {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Centers and scales every non-constant column by its own mean and sample
/// sd; constant columns are set to 0 and get scale 0.
///
/// Statistics compose: standardizing an already standardized dataset keeps
/// `col_means`/`col_scales` expressed on the original raw scale, so
/// [`apply_standardization`] stays correct for raw test rows.
pub fn standardize(raw: &Dataset) -> Result<Dataset> {
    let n = raw.n();
    if n < 2 {
        return Err(TarpError::dim(format!(
            "standardization needs at least 2 rows, got {n}"
        )));
    }
    let p = raw.p();
    let mut x = raw.x.clone();
    let mut means = DVector::zeros(p);
    let mut scales = DVector::zeros(p);
    for j in 0..p {
        let (mean, sd) = column_stats(raw.x.column(j).as_view());
        let prev_mean = if raw.standardized { raw.col_means[j] } else { 0.0 };
        let prev_scale = if raw.standardized { raw.col_scales[j] } else { 1.0 };
        let constant = prev_scale == 0.0 || sd <= CONSTANT_REL_TOL * (1.0 + mean.abs());
        let mut col = x.column_mut(j);
        if constant {
            col.fill(0.0);
            means[j] = prev_mean + prev_scale * mean;
            scales[j] = 0.0;
        } else {
            for v in col.iter_mut() {
                *v = (*v - mean) / sd;
            }
            means[j] = prev_mean + prev_scale * mean;
            scales[j] = prev_scale * sd;
        }
    }
    Ok(Dataset {
        x,
        y: raw.y.clone(),
        response_kind: raw.response_kind,
        col_means: means,
        col_scales: scales,
        standardized: true,
        names: raw.names.clone(),
        response_name: raw.response_name.clone(),
    })
}

/// Maps raw rows onto the scale of a standardized training set:
/// `(x - mean_j) / scale_j`, with constant columns sent to 0.
pub fn apply_standardization(train: &Dataset, new_x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if new_x.ncols() != train.p() {
        return Err(TarpError::dim(format!(
            "new data has {} columns, training data has {}",
            new_x.ncols(),
            train.p()
        )));
    }
    if !train.standardized {
        return Ok(new_x.clone());
    }
    let mut out = new_x.clone();
    for j in 0..train.p() {
        let (mean, scale) = (train.col_means[j], train.col_scales[j]);
        let mut col = out.column_mut(j);
        if scale == 0.0 {
            col.fill(0.0);
        } else {
            for v in col.iter_mut() {
                *v = (*v - mean) / scale;
            }
        }
    }
    Ok(out)
}

/// Train/test row partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    train_idx: Vec<usize>,
    test_idx: Vec<usize>,
}

impl SplitPlan {
    pub fn new(train_idx: Vec<usize>, test_idx: Vec<usize>, n: usize) -> Result<Self> {
        if train_idx.is_empty() || test_idx.is_empty() {
            return Err(TarpError::dim("train and test index lists must be non-empty"));
        }
        let mut seen = vec![false; n];
        for &i in train_idx.iter().chain(&test_idx) {
            if i >= n {
                return Err(TarpError::dim(format!("split index {i} out of range for n = {n}")));
            }
            if seen[i] {
                return Err(TarpError::dim(format!("split index {i} appears twice")));
            }
            seen[i] = true;
        }
        Ok(SplitPlan {
            train_idx,
            test_idx,
        })
    }

    /// Random split with `round(n * test_fraction)` test rows (at least one
    /// row on each side). Index lists are returned sorted.
    pub fn random<R: Rng + ?Sized>(n: usize, test_fraction: f64, rng: &mut R) -> Result<Self> {
        if !(0.0..1.0).contains(&test_fraction) || test_fraction == 0.0 {
            return Err(TarpError::param("test_fraction", "must lie in (0, 1)"));
        }
        if n < 2 {
            return Err(TarpError::dim("need at least 2 rows to split"));
        }
        let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let mut test = idx[..n_test].to_vec();
        let mut train = idx[n_test..].to_vec();
        test.sort_unstable();
        train.sort_unstable();
        SplitPlan::new(train, test, n)
    }

    pub fn train_idx(&self) -> &[usize] {
        &self.train_idx
    }

    pub fn test_idx(&self) -> &[usize] {
        &self.test_idx
    }
}

/// Which column of a CSV holds the response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResponseColumn {
    Name(String),
    Index(usize),
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub header_row: bool,
    pub response: ResponseColumn,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            header_row: true,
            response: ResponseColumn::Name("y".into()),
        }
    }
}

pub fn read_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| TarpError::io(path, e))?;
    read_csv_from_reader(file, options)
}

/// Header (if any) and numeric rows of a rectangular table.
type Table = (Option<Vec<String>>, Vec<Vec<f64>>, usize);

fn read_table<R: Read>(reader: R, header_row: bool) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut records = rdr.records();
    let mut header: Option<Vec<String>> = None;
    let mut line = 0usize;
    if header_row {
        match records.next() {
            Some(rec) => {
                line += 1;
                header = Some(rec?.iter().map(str::to_string).collect());
            }
            None => return Err(TarpError::dim("CSV is empty")),
        }
    }

    let width = header.as_ref().map(Vec::len);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut ncols = width;
    for rec in records {
        line += 1;
        let rec = rec?;
        let expected = *ncols.get_or_insert(rec.len());
        if rec.len() != expected {
            return Err(TarpError::Ingestion {
                row: line,
                column: String::from("-"),
                message: format!("ragged row: {} fields, expected {expected}", rec.len()),
            });
        }
        let mut row = Vec::with_capacity(expected);
        for (j, cell) in rec.iter().enumerate() {
            let column = header
                .as_ref()
                .map(|h| h[j].clone())
                .unwrap_or_else(|| j.to_string());
            let v: f64 = cell.parse().map_err(|_| TarpError::Ingestion {
                row: line,
                column: column.clone(),
                message: format!("non-numeric cell {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(TarpError::Ingestion {
                    row: line,
                    column,
                    message: format!("non-finite cell {cell:?}"),
                });
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(TarpError::dim("CSV has no data rows"));
    }
    Ok((header, rows, ncols.unwrap_or(0)))
}

fn response_position(header: Option<&Vec<String>>, response: &ResponseColumn) -> Option<usize> {
    match response {
        ResponseColumn::Index(i) => Some(*i),
        ResponseColumn::Name(name) => header.and_then(|h| h.iter().position(|c| c == name)),
    }
}

/// Parses a rectangular numeric table. Row numbers in errors are 1-based
/// and count the header line.
pub fn read_csv_from_reader<R: Read>(reader: R, options: &CsvOptions) -> Result<Dataset> {
    let (header, rows, ncols) = read_table(reader, options.header_row)?;
    let resp = response_position(header.as_ref(), &options.response).ok_or_else(|| {
        let column = match &options.response {
            ResponseColumn::Name(n) => n.clone(),
            ResponseColumn::Index(i) => i.to_string(),
        };
        TarpError::Ingestion {
            row: 1,
            column,
            message: "response column not found".into(),
        }
    })?;
    if resp >= ncols {
        return Err(TarpError::Ingestion {
            row: 1,
            column: resp.to_string(),
            message: format!("response column index out of range ({ncols} columns)"),
        });
    }

    let n = rows.len();
    let p = ncols - 1;
    let feature_cols: Vec<usize> = (0..ncols).filter(|&j| j != resp).collect();
    let x = DMatrix::from_fn(n, p, |i, k| rows[i][feature_cols[k]]);
    let y = DVector::from_iterator(n, rows.iter().map(|r| r[resp]));
    let (names, response_name) = match header {
        Some(h) => (
            feature_cols.iter().map(|&j| h[j].clone()).collect(),
            h[resp].clone(),
        ),
        None => (
            feature_cols.iter().map(|&j| format!("x{j}")).collect(),
            format!("x{resp}"),
        ),
    };
    let kind = ResponseKind::infer(&y);
    Dataset::with_names(x, y, kind, names, response_name)
}

/// Rows to predict: a feature matrix with column names, plus the response
/// when the table has one.
#[derive(Debug, Clone)]
pub struct PredictionRows {
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
    pub y: Option<DVector<f64>>,
}

/// Reads a table whose response column is optional.
pub fn read_prediction_rows(path: impl AsRef<Path>, options: &CsvOptions) -> Result<PredictionRows> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| TarpError::io(path, e))?;
    read_prediction_rows_from_reader(file, options)
}

pub fn read_prediction_rows_from_reader<R: Read>(reader: R, options: &CsvOptions) -> Result<PredictionRows> {
    let (header, rows, ncols) = read_table(reader, options.header_row)?;
    let resp = response_position(header.as_ref(), &options.response).filter(|&r| r < ncols);
    let feature_cols: Vec<usize> = (0..ncols).filter(|&j| Some(j) != resp).collect();
    let n = rows.len();
    let x = DMatrix::from_fn(n, feature_cols.len(), |i, k| rows[i][feature_cols[k]]);
    let y = resp.map(|r| DVector::from_iterator(n, rows.iter().map(|row| row[r])));
    let names = match &header {
        Some(h) => feature_cols.iter().map(|&j| h[j].clone()).collect(),
        None => feature_cols.iter().map(|&j| format!("x{j}")).collect(),
    };
    Ok(PredictionRows { x, names, y })
}

/// Writes predictors then the response as the last column, with a header.
/// Values use the shortest representation that parses back to the same
/// `f64`.
pub fn write_csv(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| TarpError::io(path, e))?;
    write_csv_to(file, data)
}

pub fn write_csv_to<W: Write>(writer: W, data: &Dataset) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = data.names.iter().map(String::as_str).collect();
    header.push(&data.response_name);
    wtr.write_record(&header)?;
    write_matrix_rows(&mut wtr, data.x(), Some(data.y()))?;
    wtr.flush().map_err(|e| TarpError::io("<csv writer>", e))?;
    Ok(())
}

/// Writes a bare matrix with the given header.
pub fn write_matrix_csv(
    path: impl AsRef<Path>,
    header: &[String],
    x: &DMatrix<f64>,
) -> Result<()> {
    let path = path.as_ref();
    if header.len() != x.ncols() {
        return Err(TarpError::dim("header length does not match column count"));
    }
    let file = File::create(path).map_err(|e| TarpError::io(path, e))?;
    let mut wtr = csv::Writer::from_writer(file);
    wtr.write_record(header)?;
    write_matrix_rows(&mut wtr, x, None)?;
    wtr.flush().map_err(|e| TarpError::io(path, e))?;
    Ok(())
}

fn write_matrix_rows<W: Write>(
    wtr: &mut csv::Writer<W>,
    x: &DMatrix<f64>,
    y: Option<&DVector<f64>>,
) -> Result<()> {
    let mut buf = Vec::with_capacity(x.ncols() + 1);
    for i in 0..x.nrows() {
        buf.clear();
        buf.extend(x.row(i).iter().map(|v| format!("{v}")));
        if let Some(y) = y {
            buf.push(format!("{}", y[i]));
        }
        wtr.write_record(&buf)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(x: DMatrix<f64>) -> Dataset {
        let n = x.nrows();
        Dataset::new(x, DVector::from_fn(n, |i, _| i as f64 * 0.5), ResponseKind::Continuous)
            .unwrap()
    }

    #[test]
    fn two_point_column_uses_sample_sd() {
        let d = standardize(&ds(DMatrix::from_column_slice(2, 1, &[1.0, -1.0]))).unwrap();
        assert!((d.col_scales()[0] - 2f64.sqrt()).abs() < 1e-15);
        assert!((d.x()[(0, 0)] - 0.707_106_781_186_547_5).abs() < 1e-12);
        assert!((d.x()[(1, 0)] + 0.707_106_781_186_547_5).abs() < 1e-12);
    }

    #[test]
    fn standardized_column_is_fixed_point() {
        let d = standardize(&ds(DMatrix::from_column_slice(4, 1, &[3.0, 1.0, 4.0, 1.5]))).unwrap();
        let d2 = standardize(&d).unwrap();
        for (a, b) in d.x().iter().zip(d2.x().iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        let col = d.x().column(0);
        let (mean, sd) = column_stats(col.as_view());
        assert!(mean.abs() < 1e-10);
        assert!((sd - 1.0).abs() < 1e-8);
    }

    #[test]
    fn constant_column_zeroed_and_flagged() {
        let x = DMatrix::from_row_slice(3, 2, &[5.0, 1.0, 5.0, 2.0, 5.0, 4.0]);
        let d = standardize(&ds(x)).unwrap();
        assert!(d.is_constant(0));
        assert!(!d.is_constant(1));
        assert_eq!(d.x().column(0).iter().copied().collect::<Vec<_>>(), vec![0.0; 3]);
    }

    #[test]
    fn standardize_rejects_single_row() {
        let err = standardize(&ds(DMatrix::from_element(1, 2, 1.0))).unwrap_err();
        assert!(matches!(err, TarpError::Dimension(_)));
    }

    #[test]
    fn non_finite_input_rejected() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, f64::NAN]);
        let err = Dataset::new(x, DVector::zeros(2), ResponseKind::Continuous).unwrap_err();
        assert!(matches!(err, TarpError::NonFinite(_)));
    }

    #[test]
    fn apply_standardization_examples() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 2.0, 4.0]);
        let train = standardize(&ds(x)).unwrap();
        assert_eq!(train.col_means()[0], 2.0);
        assert_eq!(train.col_scales()[0], 2.0);
        let out = apply_standardization(&train, &DMatrix::from_row_slice(2, 1, &[6.0, 2.0])).unwrap();
        assert_eq!(out[(0, 0)], 2.0);
        assert_eq!(out[(1, 0)], 0.0);

        let bad = apply_standardization(&train, &DMatrix::zeros(1, 2));
        assert!(matches!(bad, Err(TarpError::Dimension(_))));
    }

    #[test]
    fn apply_on_training_rows_reproduces_standardized_matrix() {
        let x = DMatrix::from_fn(7, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 + 0.25 * j as f64);
        let raw = ds(x);
        let train = standardize(&raw).unwrap();
        let again = apply_standardization(&train, raw.x()).unwrap();
        assert_eq!(&again, train.x());
    }

    #[test]
    fn split_plan_invariants() {
        let mut rng = crate::rng::stream(3);
        let plan = SplitPlan::random(10, 0.3, &mut rng).unwrap();
        assert_eq!(plan.test_idx().len(), 3);
        assert_eq!(plan.train_idx().len(), 7);
        let mut all: Vec<usize> = plan.train_idx().iter().chain(plan.test_idx()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(SplitPlan::new(vec![0, 1], vec![1], 3).is_err());
        assert!(SplitPlan::new(vec![], vec![1], 3).is_err());
    }

    #[test]
    fn csv_with_header() {
        let text = "a,b,y\n1,2,3\n4,5,6\n7,8,9.5\n";
        let d = read_csv_from_reader(text.as_bytes(), &CsvOptions::default()).unwrap();
        assert_eq!((d.n(), d.p()), (3, 2));
        assert_eq!(d.y().as_slice(), &[3.0, 6.0, 9.5]);
        assert_eq!(d.names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(d.response_kind(), ResponseKind::Continuous);
    }

    #[test]
    fn csv_binary_response_by_index() {
        let text = "1,0.5,2\n0,0.1,3\n1,0.2,1\n";
        let opts = CsvOptions {
            header_row: false,
            response: ResponseColumn::Index(0),
        };
        let d = read_csv_from_reader(text.as_bytes(), &opts).unwrap();
        assert_eq!(d.response_kind(), ResponseKind::Binary);
        assert_eq!(d.p(), 2);
    }

    #[test]
    fn csv_na_cell_names_row_and_column() {
        let text = "a,b,y\n1,2,3\n4,NA,6\n";
        let err = read_csv_from_reader(text.as_bytes(), &CsvOptions::default()).unwrap_err();
        match err {
            TarpError::Ingestion { row, column, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, "b");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn csv_ragged_and_missing_response() {
        let ragged = "a,y\n1,2\n3\n";
        assert!(matches!(
            read_csv_from_reader(ragged.as_bytes(), &CsvOptions::default()),
            Err(TarpError::Ingestion { row: 3, .. })
        ));
        let missing = "a,b\n1,2\n";
        assert!(matches!(
            read_csv_from_reader(missing.as_bytes(), &CsvOptions::default()),
            Err(TarpError::Ingestion { .. })
        ));
        let inf = "a,y\ninf,2\n";
        assert!(read_csv_from_reader(inf.as_bytes(), &CsvOptions::default()).is_err());
    }
}
