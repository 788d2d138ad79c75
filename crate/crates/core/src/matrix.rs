//! Dense linear-algebra primitives shared by the decomposition and kernel code.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub type Mat = DMatrix<f64>;

/// Which induced matrix norm to use for feasibility conditions and bounds.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema, Default,
)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// Maximum absolute row sum (induced infinity-norm).
    #[default]
    MaxRowSum,
    /// Maximum absolute column sum (induced 1-norm).
    MaxColumnSum,
}

/// Builds a matrix from row-major data, rejecting bad shapes and non-finite entries.
pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Result<Mat> {
    if rows == 0 || cols == 0 {
        return Err(Error::Parameter(format!(
            "matrix shape {rows}x{cols} must be at least 1x1"
        )));
    }
    if data.len() != rows * cols {
        return Err(Error::Parameter(format!(
            "matrix {rows}x{cols} needs {} entries, got {}",
            rows * cols,
            data.len()
        )));
    }
    if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
        return Err(Error::Parameter(format!("non-finite matrix entry {bad}")));
    }
    Ok(Mat::from_row_slice(rows, cols, data))
}

/// Convenience constructor from nested rows, for literals in tests and presets.
pub fn from_rows(rows: &[&[f64]]) -> Mat {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    let flat: Vec<f64> = rows.iter().flat_map(|row| row.iter().copied()).collect();
    Mat::from_row_slice(r, c, &flat)
}

/// Induced matrix norm of the selected kind. Zero-sized matrices have norm 0.
pub fn norm(m: &Mat, kind: NormKind) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    match kind {
        NormKind::MaxRowSum => m
            .row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max),
        NormKind::MaxColumnSum => m
            .column_iter()
            .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max),
    }
}

/// Norm with the library default kind.
pub fn default_norm(m: &Mat) -> f64 {
    norm(m, NormKind::default())
}

/// Largest absolute entry.
pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

fn rank_tolerance(m: &Mat, sigma_max: f64) -> f64 {
    (m.nrows().max(m.ncols()) as f64) * sigma_max * 1e-12
}

/// Moore-Penrose pseudoinverse via SVD, dropping singular values below
/// `max(rows, cols) * sigma_max * 1e-12`.
pub fn pseudoinverse(m: &Mat) -> Mat {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Mat::zeros(c, r);
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return Mat::zeros(c, r);
    }
    let tol = rank_tolerance(m, smax);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut out = Mat::zeros(c, r);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            out += (vt.row(k).transpose() * u.column(k).transpose()) / s;
        }
    }
    out
}

/// Numerical rank with the same tolerance as [`pseudoinverse`].
pub fn rank(m: &Mat) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    let tol = rank_tolerance(m, smax);
    sv.iter().filter(|&&s| s > tol).count()
}

/// Largest singular value (spectral norm).
pub fn largest_singular_value(m: &Mat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Condition number in the spectral norm; infinite when singular.
pub fn condition_number(m: &Mat) -> f64 {
    let sv = m.clone().singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if smin == 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Inverse of a square matrix, with a named error when singular.
pub fn inverse(m: &Mat, what: &str) -> Result<Mat> {
    if !m.is_square() {
        return Err(Error::Parameter(format!(
            "{what}: cannot invert a non-square matrix"
        )));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    let lu = m.clone().lu();
    let inv = lu
        .try_inverse()
        .ok_or_else(|| Error::Singular(what.to_string()))?;
    if inv.iter().any(|v| !v.is_finite()) || condition_estimate_too_large(m, &inv) {
        return Err(Error::Singular(what.to_string()));
    }
    Ok(inv)
}

fn condition_estimate_too_large(m: &Mat, inv: &Mat) -> bool {
    let c = default_norm(m) * default_norm(inv);
    !c.is_finite() || c > 1e15
}

/// Solves `m * x = rhs` for square `m`.
pub fn solve(m: &Mat, rhs: &Mat, what: &str) -> Result<Mat> {
    Ok(inverse(m, what)? * rhs)
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

/// Matrix exponential `e^{t m}` by scaling and squaring with a degree-13 Pade approximant.
pub fn expm(m: &Mat, t: f64) -> Result<Mat> {
    if !m.is_square() {
        return Err(Error::Parameter("expm needs a square matrix".into()));
    }
    let n = m.nrows();
    let a = m * t;
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Computation("expm argument is not finite".into()));
    }
    let nrm1 = norm(&a, NormKind::MaxColumnSum);
    let s = if nrm1 > THETA13 {
        (nrm1 / THETA13).log2().ceil() as i32
    } else {
        0
    };
    if s > 1000 {
        return Err(Error::Computation(format!(
            "expm overflow: norm {nrm1:.3e}"
        )));
    }
    let a = a / 2f64.powi(s);
    let id = Mat::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE13;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &id * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &id * b[0];
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .ok_or_else(|| Error::Computation("expm Pade denominator singular".into()))?;
    for _ in 0..s {
        r = &r * &r;
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Computation(format!(
            "expm overflow: norm {nrm1:.3e}"
        )));
    }
    Ok(r)
}

/// Exact zero-order-hold discretization: returns `(e^{aq}, int_0^q e^{as} ds b)`.
pub fn zoh(a: &Mat, b: &Mat, q: f64) -> Result<(Mat, Mat)> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n {
        return Err(Error::Parameter(
            "zoh: shape mismatch between a and b".into(),
        ));
    }
    let p = b.ncols();
    let mut aug = Mat::zeros(n + p, n + p);
    aug.view_mut((0, 0), (n, n)).copy_from(a);
    aug.view_mut((0, n), (n, p)).copy_from(b);
    let e = expm(&aug, q)?;
    Ok((
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, p)).into_owned(),
    ))
}

/// Input matrix of the zero-order-hold discretization, `int_0^q e^{as} ds b`.
pub fn zoh_input_matrix(a: &Mat, b: &Mat, q: f64) -> Result<Mat> {
    if q <= 0.0 {
        return Err(Error::Parameter(format!(
            "zoh step must be positive, got {q}"
        )));
    }
    Ok(zoh(a, b, q)?.1)
}

/// Kronecker product.
pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

/// Solves the Sylvester equation `a x + x b = c` by a direct Kronecker solve.
pub fn solve_sylvester(a: &Mat, b: &Mat, c: &Mat) -> Result<Mat> {
    let (m, n) = c.shape();
    if a.shape() != (m, m) || b.shape() != (n, n) {
        return Err(Error::Parameter("sylvester: shape mismatch".into()));
    }
    // Column-major vec: vec(a x) = (I kron a) vec x, vec(x b) = (b^T kron I) vec x.
    let big = kron(&Mat::identity(n, n), a) + kron(&b.transpose(), &Mat::identity(m, m));
    let rhs = Mat::from_column_slice(m * n, 1, c.as_slice());
    let sol = big
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("sylvester operator".into()))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("sylvester operator".into()));
    }
    Ok(Mat::from_column_slice(m, n, sol.as_slice()))
}

/// JSON wire format `{rows, cols, data}` with row-major data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixJson {
    pub fn to_mat(&self) -> Result<Mat> {
        from_row_major(self.rows, self.cols, &self.data)
    }

    /// Like [`MatrixJson::to_mat`] but allows zero columns (empty input matrices).
    pub fn to_mat_allow_empty(&self) -> Result<Mat> {
        if self.cols == 0 && self.data.is_empty() {
            return Ok(Mat::zeros(self.rows, 0));
        }
        self.to_mat()
    }
}

impl From<&Mat> for MatrixJson {
    fn from(m: &Mat) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push(m[(r, c)]);
            }
        }
        MatrixJson {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}
