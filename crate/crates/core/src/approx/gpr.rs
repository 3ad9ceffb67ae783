use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Dataset, Prediction};
use crate::container::Container;
use crate::error::{check_dim, Error, Result};
use crate::linalg::cholesky_with_jitter;

/// Diagonal jitter tried in order until `K + noise I` factorizes.
const JITTER_LADDER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];
pub const MIN_NOISE_VARIANCE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GprHyper {
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl GprHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_scale > 0.0 && self.length_scale.is_finite()) {
            return Err(Error::Input(format!("length scale {} must be positive", self.length_scale)));
        }
        if !(self.signal_variance > 0.0 && self.signal_variance.is_finite()) {
            return Err(Error::Input(format!("signal variance {} must be positive", self.signal_variance)));
        }
        if !(self.noise_variance >= MIN_NOISE_VARIANCE && self.noise_variance.is_finite()) {
            return Err(Error::Input(format!(
                "noise variance {} must be at least {MIN_NOISE_VARIANCE}",
                self.noise_variance
            )));
        }
        Ok(())
    }

    /// Median pairwise input distance, mean per-column output variance and
    /// noise variance 1e-6. Degenerate statistics fall back to 1.
    pub fn defaults_for(data: &Dataset) -> Self {
        let n = data.len();
        let mut dists = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                dists.push((data.x.row(i) - data.x.row(j)).norm());
            }
        }
        let length_scale = if dists.is_empty() {
            1.0
        } else {
            dists.sort_by(f64::total_cmp);
            let mid = dists.len() / 2;
            let median = if dists.len() % 2 == 0 {
                0.5 * (dists[mid - 1] + dists[mid])
            } else {
                dists[mid]
            };
            if median > 0.0 {
                median
            } else {
                1.0
            }
        };
        let variance = data
            .y
            .column_iter()
            .map(|c| {
                let m = c.mean();
                c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / c.len() as f64
            })
            .sum::<f64>()
            / data.output_dim().max(1) as f64;
        Self {
            length_scale,
            signal_variance: if variance > 0.0 { variance } else { 1.0 },
            noise_variance: 1e-6,
        }
    }
}

/// `sf2 * exp(-|a - b|^2 / (2 l^2))`.
pub fn rbf_kernel(a: &[f64], b: &[f64], hyper: &GprHyper) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    hyper.signal_variance * (-d2 / (2.0 * hyper.length_scale * hyper.length_scale)).exp()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct GprMeta {
    hyper: GprHyper,
    jitter: f64,
}

/// Zero-mean GP with one RBF kernel shared by every output column.
#[derive(Clone, Debug, PartialEq)]
pub struct GprModel {
    x: DMatrix<f64>,
    hyper: GprHyper,
    jitter: f64,
    /// Lower Cholesky factor of `K + (noise + jitter) I`.
    chol_l: DMatrix<f64>,
    /// `(K + (noise + jitter) I)^-1 Y`.
    alpha: DMatrix<f64>,
}

impl GprModel {
    pub fn fit(data: &Dataset, hyper: GprHyper) -> Result<Self> {
        hyper.validate()?;
        let n = data.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            let xi = data.x.row(i);
            for j in 0..=i {
                let v = rbf_kernel(xi.transpose().as_slice(), data.x.row(j).transpose().as_slice(), &hyper);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
            k[(i, i)] += hyper.noise_variance;
        }
        let (chol, jitter) = cholesky_with_jitter(&k, &JITTER_LADDER)
            .ok_or_else(|| Error::Fit("kernel matrix not positive definite at maximum jitter".into()))?;
        let alpha = chol.solve(&data.y);
        Ok(Self {
            x: data.x.clone(),
            hyper,
            jitter,
            chol_l: chol.l(),
            alpha,
        })
    }

    pub fn fit_default(data: &Dataset) -> Result<Self> {
        Self::fit(data, GprHyper::defaults_for(data))
    }

    pub fn hyper(&self) -> &GprHyper {
        &self.hyper
    }

    /// Jitter that was added on top of the noise variance.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn input_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.alpha.ncols()
    }

    fn cross_kernel(&self, query: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.input_dim(), query.len())?;
        Ok(DVector::from_iterator(
            self.x.nrows(),
            self.x.row_iter().map(|r| rbf_kernel(r.transpose().as_slice(), query, &self.hyper)),
        ))
    }

    /// Posterior mean.
    pub fn predict(&self, query: &[f64]) -> Result<Prediction> {
        let ks = self.cross_kernel(query)?;
        Ok(Prediction {
            y: self.alpha.tr_mul(&ks),
            mode_probability: 1.0,
            source: "gpr".into(),
        })
    }

    /// Posterior variance of the latent function at `query` (shared by all
    /// outputs). Diagnostic only; point predictions never use it.
    pub fn posterior_variance(&self, query: &[f64]) -> Result<f64> {
        let ks = self.cross_kernel(query)?;
        let v = self
            .chol_l
            .solve_lower_triangular(&ks)
            .ok_or_else(|| Error::Fit("singular Cholesky factor".into()))?;
        Ok((self.hyper.signal_variance - v.norm_squared()).max(0.0))
    }

    pub fn to_container(&self) -> Result<Container> {
        let meta = GprMeta {
            hyper: self.hyper,
            jitter: self.jitter,
        };
        Ok(Container::new("gpr", serde_json::to_value(meta)?)
            .with("x", self.x.clone())
            .with("chol_l", self.chol_l.clone())
            .with("alpha", self.alpha.clone()))
    }

    pub fn from_container(mut c: Container) -> Result<Self> {
        c.expect_kind("gpr")?;
        let meta: GprMeta = c.meta_as()?;
        Ok(Self {
            x: c.take("x")?,
            hyper: meta.hyper,
            jitter: meta.jitter,
            chol_l: c.take("chol_l")?,
            alpha: c.take("alpha")?,
        })
    }
}
