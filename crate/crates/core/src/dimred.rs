//! PCA compression of flattened paths.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{check_dim, Error, Result};
use crate::linalg::mean_rows;

/// Component cap used when none is requested.
pub const DEFAULT_MAX_COMPONENTS: usize = 50;

/// `min(50, n - 1, d)`, at least 1.
pub fn default_components(n: usize, d: usize) -> usize {
    DEFAULT_MAX_COMPONENTS.min(n.saturating_sub(1)).min(d).max(1)
}

/// Orthonormal rows of `components` span the retained principal subspace.
/// Each row's largest-magnitude entry is positive (first such entry on ties).
#[derive(Clone, Debug, PartialEq)]
pub struct PcaProjection {
    mean: DVector<f64>,
    components: DMatrix<f64>,
    explained_variance: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct PcaMeta {
    n_components: usize,
    dim: usize,
}

impl PcaProjection {
    pub fn fit(y: &DMatrix<f64>, n_components: usize) -> Result<Self> {
        let (n, d) = y.shape();
        if n < 2 {
            return Err(Error::Input("PCA needs at least two rows".into()));
        }
        if n_components == 0 || n_components > n.min(d) {
            return Err(Error::Input(format!(
                "component count {n_components} outside 1..={}",
                n.min(d)
            )));
        }
        let mean = mean_rows(y);
        let mut centered = y.clone();
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let svd = centered.svd(false, true);
        let v_t = svd.v_t.ok_or_else(|| Error::Fit("SVD did not produce right singular vectors".into()))?;
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|a, b| svd.singular_values[*b].total_cmp(&svd.singular_values[*a]).then(a.cmp(b)));
        let mut components = DMatrix::zeros(n_components, d);
        let mut explained_variance = DVector::zeros(n_components);
        for (slot, &i) in order.iter().take(n_components).enumerate() {
            let mut row = v_t.row(i).into_owned();
            let mut lead = 0;
            for j in 1..d {
                if row[j].abs() > row[lead].abs() {
                    lead = j;
                }
            }
            if row[lead] < 0.0 {
                row.neg_mut();
            }
            components.set_row(slot, &row);
            explained_variance[slot] = svd.singular_values[i].powi(2) / (n - 1) as f64;
        }
        Ok(Self {
            mean,
            components,
            explained_variance,
        })
    }

    pub fn fit_default(y: &DMatrix<f64>) -> Result<Self> {
        Self::fit(y, default_components(y.nrows(), y.ncols()))
    }

    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    pub fn explained_variance(&self) -> &DVector<f64> {
        &self.explained_variance
    }

    pub fn encode(&self, y: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.dim(), y.len())?;
        let centered = DVector::from_iterator(y.len(), y.iter().zip(self.mean.iter()).map(|(a, m)| a - m));
        Ok(&self.components * centered)
    }

    pub fn decode(&self, code: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.n_components(), code.len())?;
        Ok(&self.mean + self.components.tr_mul(&DVector::from_column_slice(code)))
    }

    pub fn encode_rows(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.dim(), y.ncols())?;
        let mut centered = y.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.mean.transpose();
        }
        Ok(centered * self.components.transpose())
    }

    pub fn decode_rows(&self, codes: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.n_components(), codes.ncols())?;
        let mut out = codes * &self.components;
        for mut row in out.row_iter_mut() {
            row += self.mean.transpose();
        }
        Ok(out)
    }

    /// Largest absolute entry of `decode(encode(y)) - y` over the rows of `y`.
    pub fn max_reconstruction_error(&self, y: &DMatrix<f64>) -> Result<f64> {
        let back = self.decode_rows(&self.encode_rows(y)?)?;
        Ok((back - y).amax())
    }

    /// Mean squared reconstruction error per entry.
    pub fn reconstruction_mse(&self, y: &DMatrix<f64>) -> Result<f64> {
        let back = self.decode_rows(&self.encode_rows(y)?)?;
        Ok((back - y).norm_squared() / y.len().max(1) as f64)
    }

    pub fn to_container(&self) -> Result<Container> {
        let meta = PcaMeta {
            n_components: self.n_components(),
            dim: self.dim(),
        };
        Ok(Container::new("pca", serde_json::to_value(meta)?)
            .with("mean", DMatrix::from_row_slice(1, self.dim(), self.mean.as_slice()))
            .with("components", self.components.clone())
            .with(
                "explained_variance",
                DMatrix::from_row_slice(1, self.n_components(), self.explained_variance.as_slice()),
            ))
    }

    pub fn from_container(mut c: Container) -> Result<Self> {
        c.expect_kind("pca")?;
        let meta: PcaMeta = c.meta_as()?;
        let mean = c.take("mean")?.row(0).transpose();
        let components = c.take("components")?;
        let explained_variance = c.take("explained_variance")?.row(0).transpose();
        if components.shape() != (meta.n_components, meta.dim) || mean.len() != meta.dim {
            return Err(Error::Format("inconsistent PCA shapes".into()));
        }
        Ok(Self {
            mean,
            components,
            explained_variance,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn generic(n: usize, d: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, d, |i, j| ((i * 31 + j * 17) as f64 * 0.37).sin() + 0.1 * (i as f64) * ((j % 3) as f64))
    }

    #[test]
    fn rank_one_data() {
        let v = DVector::from_vec(vec![0.6, -0.8, 0.0]);
        let y = DMatrix::from_fn(6, 3, |i, j| (i as f64 - 2.0) * 1.7 * v[j]);
        let p = PcaProjection::fit(&y, 3).unwrap();
        let first = p.components().row(0);
        assert!(first.dot(&v.transpose()).abs() >= 1.0 - 1e-8);
        assert!(first[1] > 0.0);
        assert!(p.explained_variance()[1] <= 1e-10 && p.explained_variance()[2] <= 1e-10);
    }

    #[test]
    fn full_rank_is_lossless() {
        let y = generic(12, 7);
        let p = PcaProjection::fit(&y, 7).unwrap();
        assert!(p.max_reconstruction_error(&y).unwrap() <= 1e-8);
        let wide = generic(5, 20);
        let p = PcaProjection::fit(&wide, 4).unwrap();
        assert!(p.max_reconstruction_error(&wide).unwrap() <= 1e-8);
    }

    #[test]
    fn centering_and_orthonormality() {
        let y = generic(10, 6);
        let p = PcaProjection::fit(&y, 4).unwrap();
        let code = p.encode(p.mean().as_slice()).unwrap();
        assert!(code.amax() < 1e-12);
        assert!((p.decode(code.as_slice()).unwrap() - p.mean()).amax() < 1e-12);
        let gram = p.components() * p.components().transpose();
        assert!((gram - DMatrix::identity(4, 4)).amax() < 1e-10);
        let ev = p.explained_variance();
        assert!(ev.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn out_of_range_counts() {
        let y = generic(4, 3);
        assert!(PcaProjection::fit(&y, 0).is_err());
        assert!(PcaProjection::fit(&y, 4).is_err());
        assert!(PcaProjection::fit(&generic(1, 3), 1).is_err());
        let p = PcaProjection::fit(&y, 2).unwrap();
        assert!(p.encode(&[1.0, 2.0]).is_err());
        assert!(p.decode(&[1.0]).is_err());
    }

    #[test]
    fn default_count_rule() {
        assert_eq!(default_components(200, 93), 50);
        assert_eq!(default_components(20, 93), 19);
        assert_eq!(default_components(200, 12), 12);
    }

    #[test]
    fn container_round_trip() {
        let y = generic(9, 5);
        let p = PcaProjection::fit(&y, 3).unwrap();
        let back = PcaProjection::from_container(Container::from_bytes(&p.to_container().unwrap().to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(p, back);
    }
}
