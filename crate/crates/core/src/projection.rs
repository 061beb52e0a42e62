//! Projection matrices and data compression.
//!
//! Three constructions are offered, all `m x p_gamma` and attached to the
//! screened columns through `column_map`:
//!
//! * `Rp`: i.i.d. entries `+-1/sqrt(2 psi)` with probability `psi` each,
//!   zero otherwise.
//! * `SparseRp`: i.i.d. entries `+-n^(kappa/2)/sqrt(m)` with probability
//!   `1/(2 n^kappa)` each, zero otherwise.
//! * `Pcr`: the leading right singular vectors of `X_gamma`, one per row.
//!
//! Columns outside the screening mask never enter the computation.

use nalgebra::{DMatrix, SVD};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TarpError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionKind {
    Rp,
    SparseRp,
    Pcr,
}

impl ProjectionKind {
    fn code(self) -> u8 {
        match self {
            ProjectionKind::Rp => 0,
            ProjectionKind::SparseRp => 1,
            ProjectionKind::Pcr => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(ProjectionKind::Rp),
            1 => Some(ProjectionKind::SparseRp),
            2 => Some(ProjectionKind::Pcr),
            _ => None,
        }
    }
}

/// Coordinate list of the non-zero entries, used to compress with very
/// sparse matrices.
#[derive(Debug, Clone, PartialEq)]
struct Coo {
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

/// Density below which a sparse random matrix also carries a coordinate list.
pub const SPARSE_DENSITY_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    kind: ProjectionKind,
    entries: DMatrix<f64>,
    column_map: Vec<usize>,
    psi: Option<f64>,
    kappa: Option<f64>,
    requested_m: usize,
    coo: Option<Coo>,
}

impl ProjectionMatrix {
    pub fn kind(&self) -> ProjectionKind {
        self.kind
    }

    /// Dense `m x p_gamma` entries.
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn column_map(&self) -> &[usize] {
        &self.column_map
    }

    /// Effective number of rows.
    pub fn m(&self) -> usize {
        self.entries.nrows()
    }

    pub fn p_gamma(&self) -> usize {
        self.entries.ncols()
    }

    pub fn psi(&self) -> Option<f64> {
        self.psi
    }

    pub fn kappa(&self) -> Option<f64> {
        self.kappa
    }

    pub fn requested_m(&self) -> usize {
        self.requested_m
    }

    /// True when a principal-component projection had fewer usable singular
    /// vectors than requested.
    pub fn was_truncated(&self) -> bool {
        self.m() < self.requested_m
    }

    pub fn has_sparse_representation(&self) -> bool {
        self.coo.is_some()
    }

    /// Re-targets the matrix to the given screened columns.
    pub fn with_column_map(mut self, column_map: Vec<usize>) -> Result<Self> {
        if column_map.len() != self.p_gamma() {
            return Err(TarpError::dim(format!(
                "column map has {} entries for {} projection columns",
                column_map.len(),
                self.p_gamma()
            )));
        }
        self.column_map = column_map;
        Ok(self)
    }

    /// Builds a matrix from explicit entries (tests, decoding, custom bases).
    pub fn from_parts(
        kind: ProjectionKind,
        entries: DMatrix<f64>,
        column_map: Vec<usize>,
        psi: Option<f64>,
        kappa: Option<f64>,
    ) -> Result<Self> {
        if column_map.len() != entries.ncols() {
            return Err(TarpError::dim("column map length differs from entry columns"));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(TarpError::NonFinite("projection entries"));
        }
        let requested_m = entries.nrows();
        Ok(ProjectionMatrix {
            kind,
            entries,
            column_map,
            psi,
            kappa,
            requested_m,
            coo: None,
        })
    }
}

fn identity_map(p_gamma: usize) -> Vec<usize> {
    (0..p_gamma).collect()
}

/// Three-point random projection. `psi = 0.5` gives the dense `+-1` matrix.
pub fn gen_rp_matrix<R: Rng + ?Sized>(
    p_gamma: usize,
    m: usize,
    psi: f64,
    rng: &mut R,
) -> Result<ProjectionMatrix> {
    if !(psi > 0.0 && psi <= 0.5) {
        return Err(TarpError::param("psi", format!("must lie in (0, 0.5], got {psi}")));
    }
    if m == 0 || p_gamma == 0 {
        return Err(TarpError::dim("projection needs m >= 1 and p_gamma >= 1"));
    }
    let v = 1.0 / (2.0 * psi).sqrt();
    let two_psi = 2.0 * psi;
    // Row-major fill order keeps the stream consumption independent of the
    // storage layout.
    let mut entries = DMatrix::zeros(m, p_gamma);
    for k in 0..m {
        for j in 0..p_gamma {
            let u: f64 = rng.random();
            entries[(k, j)] = if u < psi {
                v
            } else if u < two_psi {
                -v
            } else {
                0.0
            };
        }
    }
    Ok(ProjectionMatrix {
        kind: ProjectionKind::Rp,
        entries,
        column_map: identity_map(p_gamma),
        psi: Some(psi),
        kappa: None,
        requested_m: m,
        coo: None,
    })
}

/// Very sparse random projection with density `n^-kappa`.
pub fn gen_sparse_rp_matrix<R: Rng + ?Sized>(
    p_gamma: usize,
    m: usize,
    kappa: f64,
    n: usize,
    rng: &mut R,
) -> Result<ProjectionMatrix> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(TarpError::param("kappa", format!("must lie in (0, 1), got {kappa}")));
    }
    if n < 2 {
        return Err(TarpError::param("n", "sparse projection needs n >= 2"));
    }
    if m == 0 || p_gamma == 0 {
        return Err(TarpError::dim("projection needs m >= 1 and p_gamma >= 1"));
    }
    let nk = (n as f64).powf(kappa);
    let half = 0.5 / nk;
    let v = nk.sqrt() / (m as f64).sqrt();
    let mut entries = DMatrix::zeros(m, p_gamma);
    let mut coo = Coo {
        rows: Vec::new(),
        cols: Vec::new(),
        vals: Vec::new(),
    };
    for k in 0..m {
        for j in 0..p_gamma {
            let u: f64 = rng.random();
            let e = if u < half {
                v
            } else if u < 2.0 * half {
                -v
            } else {
                continue;
            };
            entries[(k, j)] = e;
            coo.rows.push(k);
            coo.cols.push(j);
            coo.vals.push(e);
        }
    }
    let density = 1.0 / nk;
    Ok(ProjectionMatrix {
        kind: ProjectionKind::SparseRp,
        entries,
        column_map: identity_map(p_gamma),
        psi: None,
        kappa: Some(kappa),
        requested_m: m,
        coo: (density < SPARSE_DENSITY_THRESHOLD).then_some(coo),
    })
}

/// Leading right singular vectors of `x_gamma`, ordered by decreasing
/// singular value. Each row is sign-normalized so its largest-magnitude
/// entry (first on ties) is positive. When `m` exceeds the numerical rank
/// the matrix is truncated to the rank; see
/// [`ProjectionMatrix::was_truncated`].
pub fn gen_pcr_matrix(x_gamma: &DMatrix<f64>, m: usize) -> Result<ProjectionMatrix> {
    if m == 0 {
        return Err(TarpError::dim("projection needs m >= 1"));
    }
    let (n, pg) = x_gamma.shape();
    if n == 0 || pg == 0 {
        return Err(TarpError::dim("empty screened design"));
    }
    if x_gamma.iter().any(|v| !v.is_finite()) {
        return Err(TarpError::NonFinite("screened design"));
    }
    let svd = SVD::try_new(x_gamma.clone(), false, true, f64::EPSILON, 0)
        .ok_or_else(|| TarpError::Numerical("SVD did not converge".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| TarpError::Numerical("SVD returned no right singular vectors".into()))?;
    let sv = svd.singular_values;

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let smax = order.first().map(|&i| sv[i]).unwrap_or(0.0);
    let tol = smax * (n.max(pg) as f64) * f64::EPSILON;
    let rank = order.iter().filter(|&&i| sv[i] > tol).count();
    let m_eff = m.min(rank);
    if m_eff == 0 {
        return Err(TarpError::Numerical("screened design has rank zero".into()));
    }

    let mut entries = DMatrix::zeros(m_eff, pg);
    for (k, &i) in order.iter().take(m_eff).enumerate() {
        let row = v_t.row(i);
        let mut pivot = 0;
        for j in 1..pg {
            if row[j].abs() > row[pivot].abs() {
                pivot = j;
            }
        }
        let sign = if row[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..pg {
            entries[(k, j)] = sign * row[j];
        }
    }
    Ok(ProjectionMatrix {
        kind: ProjectionKind::Pcr,
        entries,
        column_map: identity_map(pg),
        psi: None,
        kappa: None,
        requested_m: m,
        coo: None,
    })
}

/// `Z = X[:, column_map] * entries^T`.
pub fn compress(x: &DMatrix<f64>, proj: &ProjectionMatrix) -> Result<DMatrix<f64>> {
    let p = x.ncols();
    if let Some(&bad) = proj.column_map.iter().find(|&&j| j >= p) {
        return Err(TarpError::dim(format!(
            "projection references column {bad} but data has {p} columns"
        )));
    }
    if let Some(coo) = &proj.coo {
        let mut z = DMatrix::zeros(x.nrows(), proj.m());
        for ((&k, &j), &v) in coo.rows.iter().zip(&coo.cols).zip(&coo.vals) {
            let src = x.column(proj.column_map[j]);
            let mut dst = z.column_mut(k);
            dst.axpy(v, &src, 1.0);
        }
        return Ok(z);
    }
    let xg = x.select_columns(&proj.column_map);
    Ok(xg * proj.entries.transpose())
}

const DUMP_MAGIC: &[u8; 8] = b"TARPPM01";

/// Serializes a projection matrix as a small little-endian header followed
/// by the entries in row-major order.
///
/// Layout: magic `TARPPM01`, kind `u8`, `m: u64`, `p_gamma: u64`,
/// `psi: f64` (NaN if absent), `kappa: f64` (NaN if absent),
/// `column_map: [u64; p_gamma]`, `entries: [f64; m * p_gamma]`.
pub fn encode_dump(proj: &ProjectionMatrix) -> Vec<u8> {
    let (m, pg) = proj.entries.shape();
    let mut out = Vec::with_capacity(8 + 1 + 32 + 8 * pg * (m + 1));
    out.extend_from_slice(DUMP_MAGIC);
    out.push(proj.kind.code());
    out.extend_from_slice(&(m as u64).to_le_bytes());
    out.extend_from_slice(&(pg as u64).to_le_bytes());
    out.extend_from_slice(&proj.psi.unwrap_or(f64::NAN).to_le_bytes());
    out.extend_from_slice(&proj.kappa.unwrap_or(f64::NAN).to_le_bytes());
    for &c in &proj.column_map {
        out.extend_from_slice(&(c as u64).to_le_bytes());
    }
    for k in 0..m {
        for j in 0..pg {
            out.extend_from_slice(&proj.entries[(k, j)].to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| TarpError::Decode(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Inverse of [`encode_dump`]. Rejects anything malformed rather than
/// panicking.
pub fn decode_dump(bytes: &[u8]) -> Result<ProjectionMatrix> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(8)? != DUMP_MAGIC {
        return Err(TarpError::Decode("bad magic".into()));
    }
    let code = cur.take(1)?[0];
    let kind = ProjectionKind::from_code(code)
        .ok_or_else(|| TarpError::Decode(format!("unknown kind code {code}")))?;
    let m = cur.u64()?;
    let pg = cur.u64()?;
    let psi = cur.f64()?;
    let kappa = cur.f64()?;
    let cells = m
        .checked_mul(pg)
        .and_then(|c| c.checked_add(pg))
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| TarpError::Decode("dimensions overflow".into()))?;
    if cells != (bytes.len() - cur.pos) as u64 {
        return Err(TarpError::Decode(format!(
            "payload has {} bytes, header implies {cells}",
            bytes.len() - cur.pos
        )));
    }
    let (m, pg) = (m as usize, pg as usize);
    let mut column_map = Vec::with_capacity(pg);
    for _ in 0..pg {
        let c = cur.u64()?;
        column_map.push(usize::try_from(c).map_err(|_| TarpError::Decode("column index overflow".into()))?);
    }
    let mut entries = DMatrix::zeros(m, pg);
    for k in 0..m {
        for j in 0..pg {
            entries[(k, j)] = cur.f64()?;
        }
    }
    let opt = |v: f64| (!v.is_nan()).then_some(v);
    let mut proj = ProjectionMatrix::from_parts(kind, entries, column_map, opt(psi), opt(kappa))
        .map_err(|e| TarpError::Decode(e.to_string()))?;
    if kind == ProjectionKind::SparseRp {
        proj.coo = None;
    }
    Ok(proj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use nalgebra::DVector;

    #[test]
    fn rp_half_psi_has_no_zeros() {
        let r = gen_rp_matrix(40, 30, 0.5, &mut stream(1)).unwrap();
        assert!(r.entries().iter().all(|&v| v == 1.0 || v == -1.0));
    }

    #[test]
    fn rp_entries_take_three_values() {
        let psi = 0.2;
        let v = 1.0 / (2.0f64 * psi).sqrt();
        let r = gen_rp_matrix(50, 20, psi, &mut stream(2)).unwrap();
        assert!(r.entries().iter().all(|&e| e == 0.0 || e == v || e == -v));
    }

    #[test]
    fn projected_norm_variance_matches_fourth_moment_expansion() {
        // Var ||Rx||^2 = m [2 ||x||^4 + (1/(2 psi) - 3) sum x^4] for i.i.d. rows.
        let x = DVector::from_fn(12, |i, _| 0.3 + (i as f64 * 0.7).sin());
        let n2 = x.norm_squared();
        let s4: f64 = x.iter().map(|v| v.powi(4)).sum();
        let m = 6;
        let mut rng = stream(31);
        for psi in [0.1, 0.25, 0.5] {
            let draws: Vec<f64> = (0..200_000)
                .map(|_| (gen_rp_matrix(12, m, psi, &mut rng).unwrap().entries() * &x).norm_squared())
                .collect();
            let mean = draws.iter().sum::<f64>() / draws.len() as f64;
            let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
            let exact = m as f64 * (2.0 * n2 * n2 + (1.0 / (2.0 * psi) - 3.0) * s4);
            assert!((mean / (m as f64 * n2) - 1.0).abs() < 0.01, "psi {psi} mean {mean}");
            assert!((var / exact - 1.0).abs() < 0.03, "psi {psi}: {var} vs {exact}");
        }
    }

    #[test]
    fn rp_parameter_checks() {
        let mut rng = stream(0);
        assert!(gen_rp_matrix(3, 3, 0.0, &mut rng).is_err());
        assert!(gen_rp_matrix(3, 3, 0.51, &mut rng).is_err());
        assert!(gen_rp_matrix(0, 3, 0.2, &mut rng).is_err());
        assert!(gen_rp_matrix(3, 0, 0.2, &mut rng).is_err());
    }

    #[test]
    fn rp_moments_monte_carlo() {
        // E[R^2] = 2 psi / (2 psi) = 1; P(R = 0) = 1 - 2 psi.
        let r = gen_rp_matrix(1000, 1000, 0.25, &mut stream(3)).unwrap();
        let n = 1_000_000.0;
        let m2 = r.entries().iter().map(|v| v * v).sum::<f64>() / n;
        let zeros = r.entries().iter().filter(|&&v| v == 0.0).count() as f64 / n;
        assert!((m2 - 1.0).abs() < 0.01, "second moment {m2}");
        assert!((zeros - 0.5).abs() < 0.005, "zero fraction {zeros}");
        for psi in [0.1, 0.4] {
            let r = gen_rp_matrix(1000, 1000, psi, &mut stream(4)).unwrap();
            let m2 = r.entries().iter().map(|v| v * v).sum::<f64>() / n;
            assert!((m2 - 1.0).abs() < 0.01, "psi {psi}: second moment {m2}");
        }
    }

    #[test]
    fn sparse_rp_moments_monte_carlo() {
        // n = 100, kappa = 0.5: density 0.1, second moment 1/m with m = 10.
        let r = gen_sparse_rp_matrix(100_000, 10, 0.5, 100, &mut stream(5)).unwrap();
        let cells = 1_000_000.0;
        let nz = r.entries().iter().filter(|&&v| v != 0.0).count() as f64 / cells;
        let m2 = r.entries().iter().map(|v| v * v).sum::<f64>() / cells;
        assert!((nz - 0.1).abs() < 0.003, "density {nz}");
        assert!((m2 - 0.1).abs() < 0.005, "second moment {m2}");
        let v = 10f64.sqrt() / 10f64.sqrt();
        assert!(r.entries().iter().all(|&e| e == 0.0 || (e.abs() - v).abs() < 1e-15));
    }

    #[test]
    fn sparse_rp_parameter_checks() {
        let mut rng = stream(0);
        assert!(gen_sparse_rp_matrix(5, 2, 0.0, 100, &mut rng).is_err());
        assert!(gen_sparse_rp_matrix(5, 2, 1.0, 100, &mut rng).is_err());
        assert!(gen_sparse_rp_matrix(5, 2, 0.5, 1, &mut rng).is_err());
    }

    #[test]
    fn sparse_compress_matches_dense() {
        let mut rng = stream(9);
        let proj = gen_sparse_rp_matrix(60, 7, 0.9, 100, &mut rng).unwrap();
        assert!(proj.has_sparse_representation());
        let x = DMatrix::from_fn(15, 80, |i, j| ((i * 31 + j * 17) % 13) as f64 - 6.0);
        let proj = proj.with_column_map((10..70).collect()).unwrap();
        let sparse = compress(&x, &proj).unwrap();
        let dense = x.select_columns(proj.column_map()) * proj.entries().transpose();
        assert!((sparse - dense).amax() < 1e-12);
    }

    #[test]
    fn pcr_diagonal_example() {
        let x = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 2.0]);
        let r = gen_pcr_matrix(&x, 1).unwrap();
        assert_eq!(r.m(), 1);
        assert!((r.entries()[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(r.entries()[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn pcr_full_rank_orthonormal_rows() {
        let x = DMatrix::from_fn(12, 5, |i, j| ((i * 7 + j * 11) % 9) as f64 + (i * j) as f64 * 0.1);
        let r = gen_pcr_matrix(&x, 5).unwrap();
        let g = r.entries() * r.entries().transpose();
        assert!((g - DMatrix::identity(5, 5)).amax() < 1e-8);
    }

    #[test]
    fn pcr_truncates_to_rank() {
        let base = DMatrix::from_fn(10, 3, |i, j| (0.3 * (i + 1) as f64).powi(j as i32 + 1));
        let mut x = DMatrix::zeros(10, 4);
        x.columns_mut(0, 3).copy_from(&base);
        x.column_mut(3).copy_from(&base.column(1));
        let r = gen_pcr_matrix(&x, 4).unwrap();
        assert_eq!(r.m(), 3);
        assert!(r.was_truncated());
        assert_eq!(r.requested_m(), 4);
    }

    #[test]
    fn compress_examples() {
        let x = DMatrix::from_fn(4, 3, |i, j| (i + 10 * j) as f64);
        let proj = ProjectionMatrix::from_parts(
            ProjectionKind::Rp,
            DMatrix::from_element(1, 1, 2.0),
            vec![1],
            None,
            None,
        )
        .unwrap();
        let z = compress(&x, &proj).unwrap();
        assert_eq!(z.column(0), x.column(1) * 2.0);

        let zero = compress(&DMatrix::zeros(4, 3), &proj).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));

        let bad = proj.clone().with_column_map(vec![5]).unwrap();
        assert!(compress(&x, &bad).is_err());
    }

    #[test]
    fn compress_orthonormal_columns_gives_squared_singular_values() {
        // X_gamma with orthogonal columns scaled by (3, 2, 1): Z^T Z is the
        // diagonal of squared singular values.
        let mut x = DMatrix::zeros(6, 3);
        x[(0, 0)] = 3.0;
        x[(1, 1)] = 2.0;
        x[(2, 2)] = 1.0;
        let r = gen_pcr_matrix(&x, 3).unwrap();
        let z = compress(&x, &r).unwrap();
        let g = z.transpose() * z;
        let expect = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&[9.0, 4.0, 1.0]));
        assert!((g - expect).amax() < 1e-10);
    }

    #[test]
    fn dump_round_trip_and_rejects_garbage() {
        let proj = gen_rp_matrix(6, 4, 0.3, &mut stream(8))
            .unwrap()
            .with_column_map(vec![0, 3, 4, 9, 10, 11])
            .unwrap();
        let bytes = encode_dump(&proj);
        let back = decode_dump(&bytes).unwrap();
        assert_eq!(back.entries(), proj.entries());
        assert_eq!(back.column_map(), proj.column_map());
        assert_eq!(back.psi(), Some(0.3));
        assert_eq!(back.kappa(), None);

        assert!(decode_dump(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_dump(b"nope").is_err());
        let mut bad = bytes.clone();
        bad[8] = 7;
        assert!(decode_dump(&bad).is_err());
    }

    #[test]
    fn same_seed_same_matrix() {
        let a = gen_rp_matrix(30, 10, 0.2, &mut stream(42)).unwrap();
        let b = gen_rp_matrix(30, 10, 0.2, &mut stream(42)).unwrap();
        assert_eq!(encode_dump(&a), encode_dump(&b));
    }
}
