use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{row_vector, vector_from_row, Dataset, Prediction};
use crate::container::Container;
use crate::error::{check_dim, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct KnnMeta {
    k: usize,
    standardize: bool,
}

/// Averages the outputs of the `k` nearest training inputs (Euclidean).
#[derive(Clone, Debug, PartialEq)]
pub struct KnnModel {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    k: usize,
    /// Per-dimension (mean, scale) applied to inputs before measuring
    /// distances, when standardization is on.
    scaling: Option<(DVector<f64>, DVector<f64>)>,
}

impl KnnModel {
    pub fn fit(data: &Dataset, k: usize) -> Result<Self> {
        Self::fit_with(data, k, false)
    }

    pub fn fit_with(data: &Dataset, k: usize, standardize: bool) -> Result<Self> {
        if k == 0 || k > data.len() {
            return Err(Error::Input(format!("k = {k} must lie in 1..={}", data.len())));
        }
        let scaling = standardize.then(|| {
            let mean = crate::linalg::mean_rows(&data.x);
            let scale = DVector::from_iterator(
                data.x.ncols(),
                data.x.column_iter().zip(mean.iter()).map(|(c, m)| {
                    let var = c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / c.len() as f64;
                    if var > 0.0 {
                        var.sqrt()
                    } else {
                        1.0
                    }
                }),
            );
            (mean, scale)
        });
        let mut x = data.x.clone();
        if let Some((mean, scale)) = &scaling {
            for mut row in x.row_iter_mut() {
                for j in 0..row.len() {
                    row[j] = (row[j] - mean[j]) / scale[j];
                }
            }
        }
        Ok(Self {
            x,
            y: data.y.clone(),
            k,
            scaling,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn input_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.y.ncols()
    }

    /// Indices of the `k` nearest rows, nearest first; equal distances keep
    /// row order.
    pub fn neighbors(&self, query: &[f64]) -> Result<Vec<usize>> {
        check_dim(self.input_dim(), query.len())?;
        let q: Vec<f64> = match &self.scaling {
            Some((mean, scale)) => query.iter().enumerate().map(|(j, v)| (v - mean[j]) / scale[j]).collect(),
            None => query.to_vec(),
        };
        let mut dist: Vec<(f64, usize)> = self
            .x
            .row_iter()
            .enumerate()
            .map(|(i, row)| (row.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(dist.into_iter().take(self.k).map(|(_, i)| i).collect())
    }

    pub fn predict(&self, query: &[f64]) -> Result<Prediction> {
        let idx = self.neighbors(query)?;
        let mut y = DVector::zeros(self.output_dim());
        for &i in &idx {
            y += self.y.row(i).transpose();
        }
        y /= idx.len() as f64;
        Ok(Prediction {
            y,
            mode_probability: 1.0,
            source: "knn".into(),
        })
    }

    pub fn to_container(&self) -> Result<Container> {
        let meta = KnnMeta {
            k: self.k,
            standardize: self.scaling.is_some(),
        };
        let mut c = Container::new("knn", serde_json::to_value(meta)?)
            .with("x", self.x.clone())
            .with("y", self.y.clone());
        if let Some((mean, scale)) = &self.scaling {
            c.push("mean", row_vector(mean));
            c.push("scale", row_vector(scale));
        }
        Ok(c)
    }

    pub fn from_container(mut c: Container) -> Result<Self> {
        c.expect_kind("knn")?;
        let meta: KnnMeta = c.meta_as()?;
        let scaling = if meta.standardize {
            Some((vector_from_row(c.get("mean")?), vector_from_row(c.get("scale")?)))
        } else {
            None
        };
        Ok(Self {
            x: c.take("x")?,
            y: c.take("y")?,
            k: meta.k,
            scaling,
        })
    }
}
