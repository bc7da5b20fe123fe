//! Minimal row/column compressed storage for the very sparse ladder and
//! spin operators. Only the products the Lindblad right-hand side needs.

use crate::operator::{CMatrix, C64};

#[derive(Clone, Debug)]
pub(crate) struct SparseMatrix {
    dim: usize,
    rows: Vec<Vec<(usize, C64)>>,
    cols: Vec<Vec<(usize, C64)>>,
}

impl SparseMatrix {
    pub fn from_dense(m: &CMatrix) -> Self {
        let dim = m.nrows();
        let mut rows = vec![Vec::new(); dim];
        let mut cols = vec![Vec::new(); dim];
        for j in 0..dim {
            for i in 0..dim {
                let v = m[(i, j)];
                if v.re != 0.0 || v.im != 0.0 {
                    rows[i].push((j, v));
                    cols[j].push((i, v));
                }
            }
        }
        Self { dim, rows, cols }
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Nonzeros of column `j` as `(row, value)`.
    pub fn column(&self, j: usize) -> &[(usize, C64)] {
        &self.cols[j]
    }

    /// `out = scale · S · m`.
    pub fn left_mul_into(&self, m: &CMatrix, scale: C64, out: &mut CMatrix) {
        debug_assert_eq!(m.nrows(), self.dim);
        let ncols = m.ncols();
        for j in 0..ncols {
            let src = m.column(j);
            let mut dst = out.column_mut(j);
            for (i, row) in self.rows.iter().enumerate() {
                let mut acc = C64::new(0.0, 0.0);
                for &(k, v) in row {
                    acc += v * src[k];
                }
                dst[i] = acc * scale;
            }
        }
    }

    /// `out += scale · m · S`.
    pub fn right_mul_add(&self, m: &CMatrix, scale: C64, out: &mut CMatrix) {
        debug_assert_eq!(m.ncols(), self.dim);
        for (j, col) in self.cols.iter().enumerate() {
            for &(k, v) in col {
                let w = v * scale;
                let src = m.column(k);
                let mut dst = out.column_mut(j);
                for (d, s) in dst.iter_mut().zip(src.iter()) {
                    *d += w * s;
                }
            }
        }
    }

    pub fn adjoint(&self) -> Self {
        let conj = |v: &Vec<(usize, C64)>| v.iter().map(|&(k, z)| (k, z.conj())).collect();
        Self {
            dim: self.dim,
            rows: self.cols.iter().map(conj).collect(),
            cols: self.rows.iter().map(conj).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_match_dense() {
        let s = CMatrix::from_fn(4, 4, |i, j| {
            if (i + 2 * j) % 3 == 0 {
                C64::new(i as f64 + 1.0, j as f64 - 1.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let m = CMatrix::from_fn(4, 4, |i, j| C64::new((i * j) as f64, i as f64 - j as f64));
        let sp = SparseMatrix::from_dense(&s);
        let scale = C64::new(0.5, -2.0);

        let mut left = CMatrix::zeros(4, 4);
        sp.left_mul_into(&m, scale, &mut left);
        assert!((left - &s * &m * scale).camax() < 1e-12);

        let mut right = CMatrix::zeros(4, 4);
        sp.right_mul_add(&m, scale, &mut right);
        assert!((right - &m * &s * scale).camax() < 1e-12);

        let adj = sp.adjoint();
        let mut la = CMatrix::zeros(4, 4);
        adj.left_mul_into(&m, C64::new(1.0, 0.0), &mut la);
        assert!((la - s.adjoint() * &m).camax() < 1e-12);
        assert_eq!(sp.nnz(), s.iter().filter(|z| z.norm() > 0.0).count());
    }
}
