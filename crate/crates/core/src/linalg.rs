//! Symmetric factorizations for the small p x p systems of the model.

use nalgebra::{DMatrix, DVector};

/// Cholesky factorization with diagonal pivoting, `P A P^T = L L^T`.
///
/// Elimination stops once the largest remaining diagonal falls to or below
/// `rel_tol` times the largest diagonal of `A`; the columns left over are
/// numerically dependent on the ones already factored.
#[derive(Debug, Clone)]
pub struct PivotedCholesky {
    /// n x n, lower triangular in the permuted order; columns >= rank are zero.
    l: DMatrix<f64>,
    /// `perm[k]` is the original index of the k-th pivot.
    perm: Vec<usize>,
    rank: usize,
    /// Smallest residual diagonal left when elimination stopped (0 at full rank).
    residual_min: f64,
    scale: f64,
}

impl PivotedCholesky {
    pub fn new(a: &DMatrix<f64>, rel_tol: f64) -> Self {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "matrix must be square");
        let mut work = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut l = DMatrix::<f64>::zeros(n, n);
        let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
        let threshold = rel_tol * scale;
        let mut rank = n;
        for k in 0..n {
            let (j, d) = (k..n)
                .map(|j| (j, work[(j, j)]))
                .fold((k, f64::NEG_INFINITY), |best, c| if c.1 > best.1 { c } else { best });
            if !(d > threshold) {
                rank = k;
                break;
            }
            if j != k {
                work.swap_rows(k, j);
                work.swap_columns(k, j);
                l.swap_rows(k, j);
                perm.swap(k, j);
            }
            let pivot = d.sqrt();
            l[(k, k)] = pivot;
            for i in k + 1..n {
                l[(i, k)] = work[(i, k)] / pivot;
            }
            for c in k + 1..n {
                let lc = l[(c, k)];
                if lc == 0.0 {
                    continue;
                }
                for r in c..n {
                    let v = work[(r, c)] - l[(r, k)] * lc;
                    work[(r, c)] = v;
                    work[(c, r)] = v;
                }
            }
        }
        let residual_min = (rank..n).map(|j| work[(j, j)]).fold(0.0, f64::min);
        Self {
            l,
            perm,
            rank,
            residual_min,
            scale,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.perm.len()
    }

    /// Original indices of the columns that were not factored.
    pub fn dependent_columns(&self) -> Vec<usize> {
        let mut cols = self.perm[self.rank..].to_vec();
        cols.sort_unstable();
        cols
    }

    /// Most negative residual diagonal relative to the largest input diagonal.
    pub fn relative_residual_min(&self) -> f64 {
        if self.scale > 0.0 {
            self.residual_min / self.scale
        } else {
            self.residual_min
        }
    }

    /// Solves `A x = b`. Requires full rank.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert!(self.is_full_rank(), "solve needs a full-rank factorization");
        let n = self.perm.len();
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[(i, k)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.l[(k, i)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        let mut x = vec![0.0; n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = y[k];
        }
        x
    }

    /// `A^{-1}`. Requires full rank.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.perm.len();
        let mut inv = DMatrix::<f64>::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.solve(&e);
            e[j] = 0.0;
            inv.set_column(j, &DVector::from_vec(col));
        }
        symmetrize(&mut inv);
        inv
    }

    /// `B` (n x rank) in the original ordering with `A ~= B B^T`.
    pub fn factor(&self) -> DMatrix<f64> {
        let n = self.perm.len();
        let mut b = DMatrix::<f64>::zeros(n, self.rank);
        for (k, &p) in self.perm.iter().enumerate() {
            for c in 0..self.rank {
                b[(p, c)] = self.l[(k, c)];
            }
        }
        b
    }
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}
