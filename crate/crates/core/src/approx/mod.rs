//! Task-to-path regressors: k-nearest neighbours, Gaussian process
//! regression and Bayesian Gaussian mixture regression.

mod bgmr;
mod gpr;
mod knn;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{check_dim, Error, Result};

pub use bgmr::{BgmrConfig, BgmrModel, CovariancePrior};
pub use gpr::{rbf_kernel, GprHyper, GprModel};
pub use knn::KnnModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub dof: usize,
    pub steps: usize,
    pub env_id: String,
    /// Rows of `y` are PCA codes rather than flattened paths.
    pub pca_coded: bool,
}

/// Paired task descriptors (rows of `x`) and outputs (rows of `y`).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>, meta: DatasetMeta) -> Result<Self> {
        check_dim(x.nrows(), y.nrows())?;
        if x.nrows() == 0 {
            return Err(Error::Input("dataset is empty".into()));
        }
        if !x.iter().chain(y.iter()).all(|v| v.is_finite()) {
            return Err(Error::Input("dataset has non-finite entries".into()));
        }
        Ok(Self { x, y, meta })
    }

    /// Dataset without path metadata, for plain regression use.
    pub fn plain(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        let meta = DatasetMeta {
            dof: 0,
            steps: 0,
            env_id: String::new(),
            pca_coded: false,
        };
        Self::new(x, y, meta)
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.y.ncols()
    }

    /// First `n` rows.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(Error::Input(format!("prefix {n} out of range 1..={}", self.len())));
        }
        Ok(Self {
            x: self.x.rows(0, n).into_owned(),
            y: self.y.rows(0, n).into_owned(),
            meta: self.meta.clone(),
        })
    }

    pub fn with_outputs(&self, y: DMatrix<f64>, pca_coded: bool) -> Result<Self> {
        let mut meta = self.meta.clone();
        meta.pca_coded = pca_coded;
        Self::new(self.x.clone(), y, meta)
    }

    pub fn to_container(&self) -> Result<Container> {
        Ok(Container::new("dataset", serde_json::to_value(&self.meta)?)
            .with("x", self.x.clone())
            .with("y", self.y.clone()))
    }

    pub fn from_container(mut c: Container) -> Result<Self> {
        c.expect_kind("dataset")?;
        let meta = c.meta_as()?;
        Self::new(c.take("x")?, c.take("y")?, meta)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub y: DVector<f64>,
    /// Responsibility of the predicting mixture component; 1 for k-NN and GPR.
    pub mode_probability: f64,
    pub source: String,
}

/// A fitted regressor of any kind.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Knn(KnnModel),
    Gpr(GprModel),
    Bgmr(BgmrModel),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Knn(_) => "knn",
            Model::Gpr(_) => "gpr",
            Model::Bgmr(_) => "bgmr",
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Model::Knn(m) => m.input_dim(),
            Model::Gpr(m) => m.input_dim(),
            Model::Bgmr(m) => m.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Model::Knn(m) => m.output_dim(),
            Model::Gpr(m) => m.output_dim(),
            Model::Bgmr(m) => m.output_dim(),
        }
    }

    /// Point prediction; BGMR uses its most responsible component.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        match self {
            Model::Knn(m) => m.predict(x),
            Model::Gpr(m) => m.predict(x),
            Model::Bgmr(m) => m.predict_best(x),
        }
    }

    pub fn to_container(&self) -> Result<Container> {
        match self {
            Model::Knn(m) => m.to_container(),
            Model::Gpr(m) => m.to_container(),
            Model::Bgmr(m) => m.to_container(),
        }
    }

    pub fn from_container(c: Container) -> Result<Self> {
        match c.kind.as_str() {
            "knn" => Ok(Model::Knn(KnnModel::from_container(c)?)),
            "gpr" => Ok(Model::Gpr(GprModel::from_container(c)?)),
            "bgmr" => Ok(Model::Bgmr(BgmrModel::from_container(c)?)),
            other => Err(Error::Format(format!("unknown model kind '{other}'"))),
        }
    }
}

pub(crate) fn row_vector(m: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, m.len(), m.as_slice())
}

pub(crate) fn vector_from_row(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.row(0).iter().copied())
}
