//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Symmetric positive definite block-tridiagonal system with `n` square
/// diagonal blocks of size `b`. `lower[i]` is the block at row `i + 1`,
/// column `i`.
#[derive(Clone, Debug)]
pub struct BlockTridiagonal {
    pub diag: Vec<DMatrix<f64>>,
    pub lower: Vec<DMatrix<f64>>,
}

impl BlockTridiagonal {
    pub fn zeros(blocks: usize, size: usize) -> Self {
        Self {
            diag: vec![DMatrix::zeros(size, size); blocks],
            lower: vec![DMatrix::zeros(size, size); blocks.saturating_sub(1)],
        }
    }

    pub fn clear(&mut self) {
        for b in self.diag.iter_mut().chain(self.lower.iter_mut()) {
            b.fill(0.0);
        }
    }

    /// Blockwise sum with a system of the same shape.
    pub fn plus(&self, other: &Self) -> Self {
        let add = |a: &[DMatrix<f64>], b: &[DMatrix<f64>]| a.iter().zip(b).map(|(x, y)| x + y).collect();
        Self {
            diag: add(&self.diag, &other.diag),
            lower: add(&self.lower, &other.lower),
        }
    }

    pub fn blocks(&self) -> usize {
        self.diag.len()
    }

    pub fn block_size(&self) -> usize {
        self.diag.first().map_or(0, |d| d.nrows())
    }

    /// Solves `A x = rhs` by block elimination. Returns `None` when a pivot
    /// block is not positive definite.
    pub fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        let n = self.blocks();
        let b = self.block_size();
        debug_assert_eq!(rhs.len(), n * b);
        let mut pivots: Vec<Cholesky<f64, Dyn>> = Vec::with_capacity(n);
        let mut z: Vec<DVector<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut s = self.diag[i].clone();
            let mut zi = rhs.rows(i * b, b).into_owned();
            if i > 0 {
                let l = &self.lower[i - 1];
                let prev = &pivots[i - 1];
                s -= l * prev.solve(&l.transpose());
                zi -= l * prev.solve(&z[i - 1]);
            }
            pivots.push(Cholesky::new(s)?);
            z.push(zi);
        }
        let mut x = DVector::zeros(n * b);
        for i in (0..n).rev() {
            let mut r = z[i].clone();
            if i + 1 < n {
                r -= self.lower[i].transpose() * x.rows((i + 1) * b, b);
            }
            x.rows_mut(i * b, b).copy_from(&pivots[i].solve(&r));
        }
        Some(x)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.blocks();
        let b = self.block_size();
        let mut m = DMatrix::zeros(n * b, n * b);
        for i in 0..n {
            m.view_mut((i * b, i * b), (b, b)).copy_from(&self.diag[i]);
            if i + 1 < n {
                m.view_mut(((i + 1) * b, i * b), (b, b)).copy_from(&self.lower[i]);
                m.view_mut((i * b, (i + 1) * b), (b, b))
                    .copy_from(&self.lower[i].transpose());
            }
        }
        m
    }
}

/// Cholesky factorization, adding `jitter * I` from the ladder until it
/// succeeds. Returns the factor and the jitter used.
pub fn cholesky_with_jitter(
    m: &DMatrix<f64>,
    ladder: &[f64],
) -> Option<(Cholesky<f64, Dyn>, f64)> {
    for &jitter in ladder {
        let mut a = m.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(a) {
            return Some((c, jitter));
        }
    }
    None
}

/// `ln det` of an SPD matrix from its Cholesky factor.
pub fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub fn mean_rows(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows() as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}
