//! Small dense linear algebra, generic over the scalar.
//!
//! The structure solves (Reeb fields, metric inverses, kernel bases) run on
//! jets as well as plain values. Pivots are always chosen by the order-zero
//! magnitude, so a solve performed on jets picks the pivot sequence of the
//! base point and stays a smooth function of the coordinates.

use crate::error::{QcError, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Clone, Debug)]
pub struct Mat<S: Scalar> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Mat<S> {
    pub fn zeros(template: &S, rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![template.lift(0.0); rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<S>>) -> Self {
        let r = rows.len();
        let c = rows[0].len();
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c);
            data.extend(row);
        }
        Mat { rows: r, cols: c, data }
    }

    pub fn at(&self, r: usize, c: usize) -> &S {
        &self.data[r * self.cols + c]
    }

    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut S {
        &mut self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for c in 0..self.cols {
            self.data.swap(a * self.cols + c, b * self.cols + c);
        }
    }
}

/// Solves `A x = b` for several right-hand sides by Gaussian elimination with
/// partial pivoting on the value part. Returns the solutions and the ratio of
/// largest to smallest pivot magnitude as a cheap conditioning proxy.
pub fn solve<S: Scalar>(a: &Mat<S>, rhs: &[Vec<S>]) -> Result<(Vec<Vec<S>>, f64)> {
    let n = a.rows;
    if a.cols != n {
        return Err(QcError::UsageError("solve requires a square matrix".into()));
    }
    let mut m = a.clone();
    let mut b: Vec<Vec<S>> = rhs.to_vec();
    let mut max_piv: f64 = 0.0;
    let mut min_piv = f64::INFINITY;

    for col in 0..n {
        let mut best = col;
        let mut best_val = m.at(col, col).value().abs();
        for r in col + 1..n {
            let v = m.at(r, col).value().abs();
            if v > best_val {
                best = r;
                best_val = v;
            }
        }
        if best_val < 1e-250 {
            return Err(QcError::DegenerateStructure(
                "singular linear system in structure solve".into(),
            ));
        }
        max_piv = max_piv.max(best_val);
        min_piv = min_piv.min(best_val);
        m.swap_rows(col, best);
        for rhs_col in b.iter_mut() {
            rhs_col.swap(col, best);
        }
        let piv = m.at(col, col).clone();
        let piv_inv = piv.recip()?;
        for r in col + 1..n {
            let factor = m.at(r, col).mul(&piv_inv);
            for c in col..n {
                let sub = factor.mul(m.at(col, c));
                m.at_mut(r, c).sub_assign(&sub);
            }
            for rhs_col in b.iter_mut() {
                let sub = factor.mul(&rhs_col[col]);
                rhs_col[r].sub_assign(&sub);
            }
        }
    }
    // Back substitution.
    let mut out = Vec::with_capacity(b.len());
    for rhs_col in &b {
        let mut x = vec![a.data[0].lift(0.0); n];
        for r in (0..n).rev() {
            let mut acc = rhs_col[r].clone();
            for c in r + 1..n {
                acc.mul_sub_acc(m.at(r, c), &x[c]);
            }
            x[r] = acc.div(m.at(r, r))?;
        }
        out.push(x);
    }
    Ok((out, max_piv / min_piv))
}

/// Matrix inverse via `solve` against the identity.
pub fn invert<S: Scalar>(a: &Mat<S>) -> Result<Mat<S>> {
    let n = a.rows;
    let template = a.data[0].lift(0.0);
    let mut rhs = Vec::with_capacity(n);
    for c in 0..n {
        let mut col = vec![template.lift(0.0); n];
        col[c] = template.lift(1.0);
        rhs.push(col);
    }
    let (cols, _) = solve(a, &rhs)?;
    let mut out = Mat::zeros(&template, n, n);
    for (c, col) in cols.iter().enumerate() {
        for r in 0..n {
            out.set(r, c, col[r].clone());
        }
    }
    Ok(out)
}

/// Basis of the nullspace of a wide matrix, by row reduction with column
/// pivoting on the value part.
pub fn nullspace<S: Scalar>(a: &Mat<S>) -> Result<Vec<Vec<S>>> {
    let template = a.data[0].lift(0.0);
    let (rows, cols) = (a.rows, a.cols);
    let mut m = a.clone();
    let mut pivot_cols = Vec::new();
    let mut r = 0;
    for _ in 0..cols {
        if r >= rows {
            break;
        }
        // best remaining column for row r
        let mut best = None;
        let mut best_val = 1e-10;
        for c in 0..cols {
            if pivot_cols.contains(&c) {
                continue;
            }
            let mut col_best_row = r;
            let mut col_best = m.at(r, c).value().abs();
            for rr in r + 1..rows {
                let v = m.at(rr, c).value().abs();
                if v > col_best {
                    col_best = v;
                    col_best_row = rr;
                }
            }
            if col_best > best_val {
                best_val = col_best;
                best = Some((c, col_best_row));
            }
        }
        let Some((c, piv_row)) = best else { break };
        m.swap_rows(r, piv_row);
        let piv_inv = m.at(r, c).recip()?;
        for cc in 0..cols {
            let v = m.at(r, cc).mul(&piv_inv);
            m.set(r, cc, v);
        }
        for rr in 0..rows {
            if rr == r {
                continue;
            }
            let factor = m.at(rr, c).clone();
            for cc in 0..cols {
                let sub = factor.mul(m.at(r, cc));
                m.at_mut(rr, cc).sub_assign(&sub);
            }
        }
        pivot_cols.push(c);
        r += 1;
    }
    let rank = pivot_cols.len();
    let mut basis = Vec::new();
    for free in 0..cols {
        if pivot_cols.contains(&free) {
            continue;
        }
        let mut v = vec![template.lift(0.0); cols];
        v[free] = template.lift(1.0);
        for (row_idx, &pc) in pivot_cols.iter().enumerate().take(rank) {
            v[pc] = m.at(row_idx, free).neg();
        }
        basis.push(v);
    }
    Ok(basis)
}

/// Modified Gram-Schmidt against a caller-provided inner product, with greedy
/// pivoting on the value-level norm. Returns the orthonormal vectors; fails if
/// a pivot norm falls below `min_pivot`.
pub fn gram_schmidt<S: Scalar>(
    vectors: &[Vec<S>],
    inner: impl Fn(&[S], &[S]) -> S,
    min_pivot: f64,
) -> Result<Vec<Vec<S>>> {
    let mut pool: Vec<Vec<S>> = vectors.to_vec();
    let mut out: Vec<Vec<S>> = Vec::with_capacity(pool.len());
    while !pool.is_empty() {
        // Greedy pivot: largest remaining norm at order zero.
        let mut best = 0;
        let mut best_norm = -1.0;
        for (idx, v) in pool.iter().enumerate() {
            let n = inner(v, v).value();
            if n > best_norm {
                best_norm = n;
                best = idx;
            }
        }
        if best_norm.max(0.0).sqrt() < min_pivot {
            return Err(QcError::DegenerateStructure(format!(
                "orthonormalization pivot {} below {}",
                best_norm.max(0.0).sqrt(),
                min_pivot
            )));
        }
        let mut v = pool.swap_remove(best);
        let norm = inner(&v, &v).sqrt()?;
        let inv_norm = norm.recip()?;
        for c in v.iter_mut() {
            let scaled = c.mul(&inv_norm);
            *c = scaled;
        }
        // Remove the accepted direction from everything left in the pool.
        for w in pool.iter_mut() {
            let proj = inner(w, &v);
            for (wc, vc) in w.iter_mut().zip(&v) {
                wc.mul_sub_acc(&proj, vc);
            }
        }
        out.push(v);
    }
    Ok(out)
}

/// Eigen-decomposition of a small symmetric f64 matrix by cyclic Jacobi.
/// Returns (eigenvalues, eigenvectors as columns).
pub fn symmetric_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[p][q] * m[p][q];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k][p], v[k][q]);
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigenvalues: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    (eigenvalues, v)
}
