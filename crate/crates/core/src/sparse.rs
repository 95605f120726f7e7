//! Coordinate-format sparse matrix with a fixed pattern.

#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `out = A x`
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for ((&r, &c), &v) in self.rows.iter().zip(&self.cols).zip(&self.values) {
            out[r] += v * x[c];
        }
    }

    /// `out = Aᵀ y`
    pub fn tr_mul_vec(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for ((&r, &c), &v) in self.rows.iter().zip(&self.cols).zip(&self.values) {
            out[c] += v * y[r];
        }
    }

    /// Duplicates are summed.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for ((&r, &c), &v) in self.rows.iter().zip(&self.cols).zip(&self.values) {
            d[r][c] += v;
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_agree_with_dense() {
        let a = SparseMatrix {
            nrows: 2,
            ncols: 3,
            rows: vec![0, 0, 1, 1],
            cols: vec![0, 2, 1, 1],
            values: vec![1.0, 2.0, 3.0, 4.0],
        };
        let mut out = [0.0; 2];
        a.mul_vec(&[1.0, 1.0, 1.0], &mut out);
        assert_eq!(out, [3.0, 7.0]);
        let mut back = [0.0; 3];
        a.tr_mul_vec(&[1.0, 2.0], &mut back);
        assert_eq!(back, [1.0, 14.0, 2.0]);
        assert_eq!(a.to_dense(), vec![vec![1.0, 0.0, 2.0], vec![0.0, 7.0, 0.0]]);
    }
}
