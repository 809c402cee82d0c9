//! Small dense linear algebra: just enough for weighted least squares and
//! symmetric positive-definite solves of order up to a few hundred.

use crate::error::{Error, Result};

/// Dense row-major matrix. Used for design matrices and intermediate
/// products; orders here are small so no blocking or pivoting tricks.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Build from row slices; all rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Validation("matrix needs at least one row".into()));
        }
        let cols = rows[0].len();
        if cols == 0 {
            return Err(Error::Validation("matrix needs at least one column".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Validation(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn mul(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.rows,
            "dimension mismatch in matrix product"
        );
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(
            self.cols,
            v.len(),
            "dimension mismatch in matrix-vector product"
        );
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// Symmetric part (A + Aᵀ)/2 packed into a `SymmetricMatrix`.
    pub fn symmetric_part(&self) -> SymmetricMatrix {
        assert_eq!(self.rows, self.cols);
        SymmetricMatrix::from_fn(self.rows, |i, j| 0.5 * (self.get(i, j) + self.get(j, i)))
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Symmetric matrix with packed lower-triangular storage. Symmetry is exact
/// by construction: a single entry backs both (i, j) and (j, i).
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    order: usize,
    // Lower triangle, row by row: (0,0), (1,0), (1,1), (2,0), ...
    entries: Vec<f64>,
}

#[inline]
fn tri_index(i: usize, j: usize) -> usize {
    // requires i >= j
    i * (i + 1) / 2 + j
}

impl SymmetricMatrix {
    pub fn zeros(order: usize) -> Self {
        SymmetricMatrix {
            order,
            entries: vec![0.0; order * (order + 1) / 2],
        }
    }

    pub fn identity(order: usize) -> Self {
        let mut m = SymmetricMatrix::zeros(order);
        for i in 0..order {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let mut m = SymmetricMatrix::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    pub fn from_fn(order: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = SymmetricMatrix::zeros(order);
        for i in 0..order {
            for j in 0..=i {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i >= j {
            self.entries[tri_index(i, j)]
        } else {
            self.entries[tri_index(j, i)]
        }
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        if i >= j {
            self.entries[tri_index(i, j)] = v;
        } else {
            self.entries[tri_index(j, i)] = v;
        }
    }

    /// Rank-one style update: self[i][j] += v, keeping symmetry.
    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        if i >= j {
            self.entries[tri_index(i, j)] += v;
        } else {
            self.entries[tri_index(j, i)] += v;
        }
    }

    pub fn add_scaled(&mut self, other: &SymmetricMatrix, s: f64) {
        assert_eq!(self.order, other.order);
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            *a += s * b;
        }
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.order, self.order);
        for i in 0..self.order {
            for j in 0..self.order {
                m.set(i, j, self.get(i, j));
            }
        }
        m
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.order, v.len());
        let mut out = vec![0.0; self.order];
        for i in 0..self.order {
            let mut s = 0.0;
            for j in 0..self.order {
                s += self.get(i, j) * v[j];
            }
            out[i] = s;
        }
        out
    }

    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        dot(&self.mul_vec(v), v)
    }

    /// Cholesky factorization `self = L Lᵀ`.
    pub fn cholesky(&self) -> Result<Cholesky> {
        Cholesky::new(self)
    }
}

/// Lower-triangular Cholesky factor of a positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    order: usize,
    // Dense lower triangle, row-major full storage for simple solves.
    l: Vec<f64>,
}

impl Cholesky {
    fn new(a: &SymmetricMatrix) -> Result<Self> {
        let n = a.order();
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::NotPositiveDefinite { index: i, pivot: s });
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Ok(Cholesky { order: n, l })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.order);
        let n = self.order;
        let mut x = b.to_vec();
        // forward: L y = b
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.l[i * n + k] * x[k];
            }
            x[i] = s / self.l[i * n + i];
        }
        // backward: Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.l[k * n + i] * x[k];
            }
            x[i] = s / self.l[i * n + i];
        }
        x
    }

    /// Solve `A X = B` column by column.
    pub fn solve_matrix(&self, b: &Matrix) -> Matrix {
        assert_eq!(b.nrows(), self.order);
        let mut out = Matrix::zeros(b.nrows(), b.ncols());
        for j in 0..b.ncols() {
            let col: Vec<f64> = (0..b.nrows()).map(|i| b.get(i, j)).collect();
            let x = self.solve(&col);
            for i in 0..b.nrows() {
                out.set(i, j, x[i]);
            }
        }
        out
    }

    /// Explicit inverse as a symmetric matrix.
    pub fn inverse(&self) -> SymmetricMatrix {
        let n = self.order;
        let mut inv = SymmetricMatrix::zeros(n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.solve(&e);
            e[j] = 0.0;
            for i in j..n {
                inv.set(i, j, col[i]);
            }
        }
        inv
    }

    /// log det A = 2 Σ log L_ii.
    pub fn log_det(&self) -> f64 {
        let n = self.order;
        (0..n).map(|i| self.l[i * n + i].ln()).sum::<f64>() * 2.0
    }
}

/// Solve `M x = b` for symmetric positive-definite `M`.
pub fn solve_spd(m: &SymmetricMatrix, b: &[f64]) -> Result<Vec<f64>> {
    Ok(m.cholesky()?.solve(b))
}

/// Numerical rank of a symmetric positive-semidefinite matrix by pivoted
/// Cholesky with a relative pivot threshold.
pub fn psd_rank(a: &SymmetricMatrix, rel_tol: f64) -> usize {
    pivoted_cholesky(a, rel_tol).len()
}

/// Pivot order selected by diagonally-pivoted Cholesky; stops once the
/// largest remaining diagonal falls below `rel_tol` times the largest
/// original diagonal.
fn pivoted_cholesky(a: &SymmetricMatrix, rel_tol: f64) -> Vec<usize> {
    let n = a.order();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut d: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
    let max_d = d.iter().cloned().fold(0.0f64, f64::max);
    if max_d <= 0.0 {
        return Vec::new();
    }
    let threshold = rel_tol * max_d;
    // l[i][k] for selected columns k, rows in permuted order
    let mut l = vec![vec![0.0f64; n]; n];
    let mut rank = 0;
    for k in 0..n {
        let (j_rel, &piv) = d[k..]
            .iter()
            .enumerate()
            .max_by(|(_, x), (_, y)| x.partial_cmp(y).unwrap())
            .unwrap();
        if piv <= threshold {
            break;
        }
        let j = k + j_rel;
        perm.swap(k, j);
        d.swap(k, j);
        l.swap(k, j);
        let lkk = d[k].sqrt();
        l[k][k] = lkk;
        for i in (k + 1)..n {
            let mut s = a.get(perm[i], perm[k]);
            for t in 0..k {
                s -= l[i][t] * l[k][t];
            }
            let lik = s / lkk;
            l[i][k] = lik;
            d[i] -= lik * lik;
        }
        rank = k + 1;
    }
    perm.truncate(rank);
    perm
}

/// Least-squares style solve of a possibly rank-deficient symmetric PSD
/// system: coordinates outside the pivot set are fixed at zero. Returns the
/// solution and the detected rank. Intended for normal equations, where the
/// system is consistent by construction.
pub fn solve_psd_rank_deficient(
    a: &SymmetricMatrix,
    b: &[f64],
    rel_tol: f64,
) -> Result<(Vec<f64>, usize)> {
    assert_eq!(a.order(), b.len());
    let pivots = pivoted_cholesky(a, rel_tol);
    let rank = pivots.len();
    let mut x = vec![0.0; a.order()];
    if rank == 0 {
        return Ok((x, 0));
    }
    let sub = SymmetricMatrix::from_fn(rank, |i, j| a.get(pivots[i], pivots[j]));
    let rhs: Vec<f64> = pivots.iter().map(|&i| b[i]).collect();
    let sol = sub.cholesky()?.solve(&rhs);
    for (slot, &i) in pivots.iter().enumerate() {
        x[i] = sol[slot];
    }
    Ok((x, rank))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::rng::RngStream;

    /// Independent oracle: Gaussian elimination with full pivoting on the
    /// dense system. Shares no code with the Cholesky path.
    fn solve_full_pivot(a: &SymmetricMatrix, b: &[f64]) -> Vec<f64> {
        let n = a.order();
        let mut m = vec![vec![0.0; n + 1]; n];
        for i in 0..n {
            for j in 0..n {
                m[i][j] = a.get(i, j);
            }
            m[i][n] = b[i];
        }
        let mut col_of_var: Vec<usize> = (0..n).collect();
        for k in 0..n {
            // full pivot search
            let (mut pi, mut pj, mut pv) = (k, k, 0.0f64);
            for i in k..n {
                for j in k..n {
                    if m[i][j].abs() > pv {
                        pv = m[i][j].abs();
                        pi = i;
                        pj = j;
                    }
                }
            }
            assert!(pv > 0.0, "oracle hit a singular matrix");
            m.swap(k, pi);
            for row in m.iter_mut() {
                row.swap(k, pj);
            }
            col_of_var.swap(k, pj);
            for i in (k + 1)..n {
                let f = m[i][k] / m[k][k];
                for j in k..=n {
                    m[i][j] -= f * m[k][j];
                }
            }
        }
        let mut xp = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = m[i][n];
            for j in (i + 1)..n {
                s -= m[i][j] * xp[j];
            }
            xp[i] = s / m[i][i];
        }
        let mut x = vec![0.0; n];
        for (slot, &var) in col_of_var.iter().enumerate() {
            x[var] = xp[slot];
        }
        x
    }

    fn random_spd(rng: &mut RngStream, n: usize) -> SymmetricMatrix {
        // L Lᵀ + n·I is comfortably positive definite
        let mut l = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                l.set(i, j, rng.next_f64() * 2.0 - 1.0);
            }
        }
        let mut a = SymmetricMatrix::from_fn(n, |i, j| {
            let mut s = 0.0;
            for k in 0..n {
                s += l.get(i, k) * l.get(j, k);
            }
            s
        });
        for i in 0..n {
            a.add_to(i, i, n as f64);
        }
        a
    }

    #[test]
    fn identity_solve_returns_rhs() {
        let m = SymmetricMatrix::identity(4);
        let b = vec![1.0, -2.0, 3.5, 0.0];
        assert_eq!(solve_spd(&m, &b).unwrap(), b);
    }

    #[test]
    fn two_by_two_known_solution() {
        let mut m = SymmetricMatrix::zeros(2);
        m.set(0, 0, 2.0);
        m.set(1, 1, 2.0);
        m.set(1, 0, 1.0);
        let x = solve_spd(&m, &[3.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14);
        assert!((x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn matches_full_pivot_elimination_oracle() {
        let mut rng = RngStream::seed_from(20240517);
        for _ in 0..50 {
            let n = 5;
            let a = random_spd(&mut rng, n);
            let b: Vec<f64> = (0..n).map(|_| rng.next_f64() * 4.0 - 2.0).collect();
            let x = solve_spd(&a, &b).unwrap();
            let x_oracle = solve_full_pivot(&a, &b);
            for i in 0..n {
                assert!(
                    (x[i] - x_oracle[i]).abs() <= 1e-10 * (1.0 + x_oracle[i].abs()),
                    "component {i}: {} vs oracle {}",
                    x[i],
                    x_oracle[i]
                );
            }
        }
    }

    #[test]
    fn residual_small_over_random_instances() {
        // 1000 random SPD systems of order <= 20: A x must reproduce b.
        let mut rng = RngStream::seed_from(987654321);
        for trial in 0..1000 {
            let n = 1 + (rng.next_u64() % 20) as usize;
            let a = random_spd(&mut rng, n);
            let b: Vec<f64> = (0..n).map(|_| rng.next_f64() * 10.0 - 5.0).collect();
            let x = solve_spd(&a, &b).unwrap();
            let ax = a.mul_vec(&x);
            let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-30);
            let rnorm = ax
                .iter()
                .zip(&b)
                .map(|(u, v)| (u - v) * (u - v))
                .sum::<f64>()
                .sqrt();
            assert!(
                rnorm <= 1e-10 * bnorm,
                "trial {trial}: relative residual {}",
                rnorm / bnorm
            );
        }
    }

    #[test]
    fn not_positive_definite_is_reported() {
        let mut m = SymmetricMatrix::zeros(2);
        m.set(0, 0, 1.0);
        m.set(1, 1, -1.0);
        match solve_spd(&m, &[1.0, 1.0]) {
            Err(Error::NotPositiveDefinite { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn rank_detection_on_deficient_gram() {
        // gram of [1 1; 1 1; 1 1] (duplicated column) has rank 1
        let mut g = SymmetricMatrix::zeros(2);
        g.set(0, 0, 3.0);
        g.set(1, 1, 3.0);
        g.set(1, 0, 3.0);
        assert_eq!(psd_rank(&g, 1e-12), 1);
        assert_eq!(psd_rank(&SymmetricMatrix::identity(4), 1e-12), 4);
        assert_eq!(psd_rank(&SymmetricMatrix::zeros(3), 1e-12), 0);
    }

    #[test]
    fn rank_deficient_solve_reproduces_consistent_rhs() {
        // A = u uᵀ with u = (1, 2); b = A·(3, 4) is consistent
        let u = [1.0, 2.0];
        let a = SymmetricMatrix::from_fn(2, |i, j| u[i] * u[j]);
        let b = a.mul_vec(&[3.0, 4.0]);
        let (x, rank) = solve_psd_rank_deficient(&a, &b, 1e-12).unwrap();
        assert_eq!(rank, 1);
        let ax = a.mul_vec(&x);
        for i in 0..2 {
            assert!((ax[i] - b[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn log_det_matches_product_of_pivots() {
        let mut rng = RngStream::seed_from(5);
        let a = random_spd(&mut rng, 6);
        let chol = a.cholesky().unwrap();
        // determinant via the oracle: product of pivots of the elimination
        let n = 6;
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                m[i][j] = a.get(i, j);
            }
        }
        let mut det = 1.0;
        for k in 0..n {
            det *= m[k][k];
            for i in (k + 1)..n {
                let f = m[i][k] / m[k][k];
                for j in k..n {
                    m[i][j] -= f * m[k][j];
                }
            }
        }
        assert!((chol.log_det() - det.ln()).abs() < 1e-9);
    }
}
