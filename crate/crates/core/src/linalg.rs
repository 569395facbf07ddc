//! Dense row-major matrices and the two solvers the network is built on:
//! a ridge-regularized symmetric solve and the ADMM lasso iteration used
//! by the sparse feature map.

use serde::{Deserialize, Serialize};

use crate::error::{BelsError, Result};

/// Dense matrix of `f64` stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(BelsError::shape(
                "Matrix::from_vec",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally long rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// `self * other`
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(BelsError::shape(
                "matmul",
                format!("{:?} x {:?}", self.shape(), other.shape()),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * other`
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(self.cols, other.cols);
        out.add_t_matmul(self, other)?;
        Ok(out)
    }

    /// `self += a^T * b`
    pub fn add_t_matmul(&mut self, a: &Matrix, b: &Matrix) -> Result<()> {
        if a.rows != b.rows || self.rows != a.cols || self.cols != b.cols {
            return Err(BelsError::shape(
                "add_t_matmul",
                format!(
                    "acc {:?} += {:?}^T x {:?}",
                    self.shape(),
                    a.shape(),
                    b.shape()
                ),
            ));
        }
        let n = self.cols;
        for r in 0..a.rows {
            let b_row = b.row(r);
            for (i, &ai) in a.row(r).iter().enumerate() {
                if ai == 0.0 {
                    continue;
                }
                let acc = &mut self.data[i * n..(i + 1) * n];
                for (o, &bj) in acc.iter_mut().zip(b_row) {
                    *o += ai * bj;
                }
            }
        }
        Ok(())
    }

    /// `self += a^T * a`, exploiting symmetry. The result is exactly
    /// symmetric.
    pub fn add_gram(&mut self, a: &Matrix) -> Result<()> {
        let n = a.cols;
        if self.rows != n || self.cols != n {
            return Err(BelsError::shape(
                "add_gram",
                format!("acc {:?} += gram of {:?}", self.shape(), a.shape()),
            ));
        }
        for r in 0..a.rows {
            let row = a.row(r);
            for i in 0..n {
                let ai = row[i];
                if ai == 0.0 {
                    continue;
                }
                let acc = &mut self.data[i * n + i..(i + 1) * n];
                for (o, &aj) in acc.iter_mut().zip(&row[i..]) {
                    *o += ai * aj;
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                self.data[i * n + j] = self.data[j * n + i];
            }
        }
        Ok(())
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn hstack(parts: &[&Matrix]) -> Result<Matrix> {
        let rows = parts.first().map_or(0, |p| p.rows);
        if parts.iter().any(|p| p.rows != rows) {
            return Err(BelsError::shape("hstack", "row counts differ"));
        }
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(r));
            }
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Concatenates matrices with equal column counts top to bottom.
    pub fn vstack(parts: &[&Matrix]) -> Result<Matrix> {
        let cols = parts.first().map_or(0, |p| p.cols);
        if parts.iter().any(|p| p.cols != cols) {
            return Err(BelsError::shape("vstack", "column counts differ"));
        }
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        let rows = parts.iter().map(|p| p.rows).sum();
        Ok(Matrix { rows, cols, data })
    }

    /// Adds a row vector to every row.
    pub fn add_row_broadcast(&mut self, bias: &[f64]) -> Result<()> {
        if bias.len() != self.cols {
            return Err(BelsError::shape(
                "add_row_broadcast",
                format!("bias of {} for {} columns", bias.len(), self.cols),
            ));
        }
        for r in 0..self.rows {
            for (v, b) in self.row_mut(r).iter_mut().zip(bias) {
                *v += b;
            }
        }
        Ok(())
    }

    pub fn map_inplace(&mut self, f: impl Fn(f64) -> f64) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        let mut m = self.clone();
        m.map_inplace(|v| v * s);
        m
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(BelsError::shape(
                "add_assign",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    fn zip_with(
        &self,
        other: &Matrix,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(BelsError::shape(
                op,
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// Largest absolute entry (0 for an empty matrix).
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Index of the largest entry in row `r`; ties resolve to the lowest index.
    pub fn row_argmax(&self, r: usize) -> usize {
        argmax(self.row(r))
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn soft_threshold(a: f64, kappa: f64) -> f64 {
    if a > kappa {
        a - kappa
    } else if a < -kappa {
        a + kappa
    } else {
        0.0
    }
}

/// Factorization of a square system matrix, reusable across right-hand sides.
#[derive(Clone, Debug)]
pub enum Factorization {
    /// Lower Cholesky factor.
    Cholesky(Matrix),
    /// Partial-pivoting LU packed in one matrix, with the row permutation.
    Lu { lu: Matrix, perm: Vec<usize> },
}

impl Factorization {
    /// Factors `m`, trying Cholesky first and falling back to pivoted LU
    /// when roundoff has pushed the matrix off positive definiteness.
    pub fn new(m: &Matrix) -> Result<Self> {
        if m.rows != m.cols {
            return Err(BelsError::shape(
                "Factorization::new",
                format!("non-square {:?}", m.shape()),
            ));
        }
        if let Some(l) = cholesky(m) {
            return Ok(Factorization::Cholesky(l));
        }
        lu(m).map(|(lu, perm)| Factorization::Lu { lu, perm })
    }

    pub fn dim(&self) -> usize {
        match self {
            Factorization::Cholesky(l) => l.rows,
            Factorization::Lu { lu, .. } => lu.rows,
        }
    }

    pub fn solve(&self, rhs: &Matrix) -> Result<Matrix> {
        let n = self.dim();
        if rhs.rows != n {
            return Err(BelsError::shape(
                "solve",
                format!("system of size {n} with rhs {:?}", rhs.shape()),
            ));
        }
        let x = match self {
            Factorization::Cholesky(l) => cholesky_solve(l, rhs.clone()),
            Factorization::Lu { lu, perm } => lu_solve(lu, perm, rhs),
        };
        if !x.is_finite() {
            return Err(BelsError::SingularSystem);
        }
        Ok(x)
    }
}

/// Four-lane dot product; the split accumulators let the loop vectorize.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn cholesky(m: &Matrix) -> Option<Matrix> {
    let n = m.rows;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let lj = &l.data[j * n..j * n + j];
        let diag = m.data[j * n + j] - dot(lj, lj);
        if !(diag > 0.0) || !diag.is_finite() {
            return None;
        }
        let djj = diag.sqrt();
        l.data[j * n + j] = djj;
        for i in j + 1..n {
            let (head, tail) = l.data.split_at_mut(i * n);
            let lj = &head[j * n..j * n + j];
            let li = &tail[..j];
            tail[j] = (m.data[i * n + j] - dot(li, lj)) / djj;
        }
    }
    Some(l)
}

fn cholesky_solve(l: &Matrix, mut x: Matrix) -> Matrix {
    let n = l.rows;
    let c = x.cols;
    // L y = b
    for i in 0..n {
        for k in 0..i {
            let lik = l.data[i * n + k];
            if lik == 0.0 {
                continue;
            }
            let (head, tail) = x.data.split_at_mut(i * c);
            for (xi, xk) in tail[..c].iter_mut().zip(&head[k * c..(k + 1) * c]) {
                *xi -= lik * xk;
            }
        }
        let d = l.data[i * n + i];
        for v in &mut x.data[i * c..(i + 1) * c] {
            *v /= d;
        }
    }
    // L^T x = y
    for i in (0..n).rev() {
        for k in i + 1..n {
            let lki = l.data[k * n + i];
            if lki == 0.0 {
                continue;
            }
            let (head, tail) = x.data.split_at_mut(k * c);
            for (xi, xk) in head[i * c..(i + 1) * c].iter_mut().zip(&tail[..c]) {
                *xi -= lki * xk;
            }
        }
        let d = l.data[i * n + i];
        for v in &mut x.data[i * c..(i + 1) * c] {
            *v /= d;
        }
    }
    x
}

fn lu(m: &Matrix) -> Result<(Matrix, Vec<usize>)> {
    let n = m.rows;
    let mut a = m.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    for k in 0..n {
        let (p, pivot) =
            (k..n)
                .map(|i| (i, a.data[i * n + k].abs()))
                .fold(
                    (k, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
        if !(pivot > scale * f64::EPSILON * n as f64) {
            return Err(BelsError::SingularSystem);
        }
        if p != k {
            for j in 0..n {
                a.data.swap(k * n + j, p * n + j);
            }
            perm.swap(k, p);
        }
        let akk = a.data[k * n + k];
        for i in k + 1..n {
            let f = a.data[i * n + k] / akk;
            a.data[i * n + k] = f;
            if f == 0.0 {
                continue;
            }
            for j in k + 1..n {
                a.data[i * n + j] -= f * a.data[k * n + j];
            }
        }
    }
    Ok((a, perm))
}

fn lu_solve(lu: &Matrix, perm: &[usize], rhs: &Matrix) -> Matrix {
    let n = lu.rows;
    let c = rhs.cols;
    let mut x = Matrix::zeros(n, c);
    for (i, &p) in perm.iter().enumerate() {
        x.row_mut(i).copy_from_slice(rhs.row(p));
    }
    for i in 0..n {
        for k in 0..i {
            let f = lu.data[i * n + k];
            if f == 0.0 {
                continue;
            }
            let (head, tail) = x.data.split_at_mut(i * c);
            for (xi, xk) in tail[..c].iter_mut().zip(&head[k * c..(k + 1) * c]) {
                *xi -= f * xk;
            }
        }
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            let f = lu.data[i * n + k];
            if f == 0.0 {
                continue;
            }
            let (head, tail) = x.data.split_at_mut(k * c);
            for (xi, xk) in head[i * c..(i + 1) * c].iter_mut().zip(&tail[..c]) {
                *xi -= f * xk;
            }
        }
        let d = lu.data[i * n + i];
        for v in &mut x.data[i * c..(i + 1) * c] {
            *v /= d;
        }
    }
    x
}

/// Solves `(lambda * I + gram) W = rhs`.
pub fn ridge_solve(gram: &Matrix, rhs: &Matrix, lambda: f64) -> Result<Matrix> {
    if gram.rows != gram.cols || rhs.rows != gram.rows {
        return Err(BelsError::shape(
            "ridge_solve",
            format!("gram {:?}, rhs {:?}", gram.shape(), rhs.shape()),
        ));
    }
    if !(lambda >= 0.0) {
        return Err(BelsError::InvalidConfig(format!(
            "ridge lambda must be non-negative, got {lambda}"
        )));
    }
    let mut system = gram.clone();
    let n = system.rows;
    for i in 0..n {
        system.data[i * n + i] += lambda;
    }
    match Factorization::new(&system).and_then(|f| f.solve(rhs)) {
        Err(BelsError::SingularSystem) if lambda > 0.0 => jittered_solve(system, rhs),
        other => other,
    }
}

/// Last resort for a positive ridge whose system roundoff has made
/// numerically singular: add a diagonal jitter growing by decades from
/// `1e-12` of the largest diagonal entry until the factorization succeeds.
fn jittered_solve(mut system: Matrix, rhs: &Matrix) -> Result<Matrix> {
    let n = system.rows;
    let max_diag = (0..n)
        .map(|i| system.data[i * n + i].abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut added = 0.0;
    for k in 0..8 {
        let target = max_diag * 1e-12 * 10f64.powi(k);
        for i in 0..n {
            system.data[i * n + i] += target - added;
        }
        added = target;
        if let Ok(x) = Factorization::new(&system).and_then(|f| f.solve(rhs)) {
            return Ok(x);
        }
    }
    Err(BelsError::SingularSystem)
}

/// Upper-triangular Cholesky factor `R` with `R^T R = M`, kept current under
/// row additions `M += X^T X` without refactoring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpperCholesky {
    r: Matrix,
}

impl UpperCholesky {
    /// `None` if `m` is not numerically positive definite.
    pub fn factor(m: &Matrix) -> Option<Self> {
        if m.rows != m.cols {
            return None;
        }
        cholesky(m).map(|l| Self { r: l.transpose() })
    }

    /// Factor of `lambda * I`.
    pub fn scaled_identity(n: usize, lambda: f64) -> Option<Self> {
        (lambda > 0.0 && lambda.is_finite()).then(|| Self {
            r: Matrix::identity(n).scaled(lambda.sqrt()),
        })
    }

    pub fn dim(&self) -> usize {
        self.r.rows
    }

    pub fn factor_matrix(&self) -> &Matrix {
        &self.r
    }

    /// Applies `M += x^T x` for every row `x` of `rows` by Givens-style
    /// rank-one updates, column by column so each factor row is visited once.
    pub fn rank_update(&mut self, rows: &Matrix) -> Result<()> {
        let n = self.r.rows;
        if rows.cols != n {
            return Err(BelsError::shape(
                "rank_update",
                format!("factor of size {n}, rows {:?}", rows.shape()),
            ));
        }
        let mut x = rows.data.clone();
        for k in 0..n {
            let (_, rk) = self.r.data.split_at_mut(k * n);
            let rk = &mut rk[k..n];
            for xj in x.chunks_exact_mut(n) {
                let xk = xj[k];
                if xk == 0.0 {
                    continue;
                }
                let rkk = rk[0];
                let r = (rkk * rkk + xk * xk).sqrt();
                let c = r / rkk;
                let s = xk / rkk;
                let inv_c = 1.0 / c;
                rk[0] = r;
                for (ri, xi) in rk[1..].iter_mut().zip(&mut xj[k + 1..]) {
                    let updated = (*ri + s * *xi) * inv_c;
                    *xi = c * *xi - s * updated;
                    *ri = updated;
                }
            }
        }
        if !self.r.is_finite() {
            return Err(BelsError::SingularSystem);
        }
        Ok(())
    }

    /// Solves `R^T R X = rhs`.
    pub fn solve(&self, rhs: &Matrix) -> Result<Matrix> {
        let n = self.r.rows;
        if rhs.rows != n {
            return Err(BelsError::shape(
                "UpperCholesky::solve",
                format!("system of size {n} with rhs {:?}", rhs.shape()),
            ));
        }
        let c = rhs.cols;
        let r = &self.r.data;
        let mut x = Matrix::zeros(n, c);
        let mut col = vec![0.0; n];
        for j in 0..c {
            for (i, v) in col.iter_mut().enumerate() {
                *v = rhs.data[i * c + j];
            }
            // R^T y = b as axpy sweeps over rows of R.
            for k in 0..n {
                let yk = col[k] / r[k * n + k];
                col[k] = yk;
                if yk != 0.0 {
                    for (t, rki) in col[k + 1..].iter_mut().zip(&r[k * n + k + 1..(k + 1) * n]) {
                        *t -= rki * yk;
                    }
                }
            }
            // R x = y as row dot products.
            for i in (0..n).rev() {
                let tail = dot(&r[i * n + i + 1..(i + 1) * n], &col[i + 1..]);
                col[i] = (col[i] - tail) / r[i * n + i];
            }
            for (i, v) in col.iter().enumerate() {
                x.data[i * c + j] = *v;
            }
        }
        if !x.is_finite() {
            return Err(BelsError::SingularSystem);
        }
        Ok(x)
    }
}

/// Iterate state of the scaled-form ADMM lasso solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmmState {
    pub w: Matrix,
    pub o: Matrix,
    pub u: Matrix,
    pub iterations: usize,
    pub rho: f64,
    pub kappa: f64,
}

impl AdmmState {
    /// Zero iterate for a `g x d` coefficient matrix.
    pub fn new(g: usize, d: usize, rho: f64, kappa: f64) -> Self {
        Self {
            w: Matrix::zeros(g, d),
            o: Matrix::zeros(g, d),
            u: Matrix::zeros(g, d),
            iterations: 0,
            rho,
            kappa,
        }
    }

    /// The l1 weight whose shrinkage step equals `kappa`.
    pub fn lambda_sparse(&self) -> f64 {
        self.kappa * self.rho
    }
}

/// Runs `iters` ADMM steps on the lasso problem whose normal-equation
/// pieces are `t2 = z^T z` (g x g) and `t1 = z^T X` (g x d), and returns
/// the sparse map `o^T` (d x g).
///
/// Each step is
/// `w <- (T2 + rho I)^-1 (T1 + rho (o - u))`, `o <- S_{lambda/rho}(w + u)`,
/// `u <- u + w - o`.
pub fn admm_sparse_map(
    t2: &Matrix,
    t1: &Matrix,
    state: &mut AdmmState,
    lambda_sparse: f64,
    iters: usize,
) -> Result<Matrix> {
    let g = t2.rows;
    if t2.cols != g || t1.rows != g || state.w.shape() != t1.shape() {
        return Err(BelsError::shape(
            "admm_sparse_map",
            format!(
                "t2 {:?}, t1 {:?}, state {:?}",
                t2.shape(),
                t1.shape(),
                state.w.shape()
            ),
        ));
    }
    if iters == 0 {
        return Err(BelsError::InvalidConfig(
            "ADMM needs at least one iteration".into(),
        ));
    }
    let rho = state.rho;
    let threshold = lambda_sparse / rho;
    let mut system = t2.clone();
    for i in 0..g {
        system.data[i * g + i] += rho;
    }
    let factor = Factorization::new(&system)?;
    let mut rhs = Matrix::zeros(t1.rows, t1.cols);
    for _ in 0..iters {
        for (((r, &t), &o), &u) in rhs
            .data
            .iter_mut()
            .zip(&t1.data)
            .zip(&state.o.data)
            .zip(&state.u.data)
        {
            *r = t + rho * (o - u);
        }
        state.w = factor.solve(&rhs)?;
        for ((o, &w), &u) in state
            .o
            .data
            .iter_mut()
            .zip(&state.w.data)
            .zip(&state.u.data)
        {
            *o = soft_threshold(w + u, threshold);
        }
        for ((u, &w), &o) in state
            .u
            .data
            .iter_mut()
            .zip(&state.w.data)
            .zip(&state.o.data)
        {
            *u += w - o;
        }
        state.iterations += 1;
    }
    Ok(state.o.transpose())
}
