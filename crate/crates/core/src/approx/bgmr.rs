//! Bayesian Gaussian mixture regression.
//!
//! A variational Bayes Gaussian mixture is fitted to joint vectors
//! `z = (x, y)` with a symmetric Dirichlet prior on the weights and a
//! Normal-Wishart prior per component:
//!
//! - weights: `alpha0 = 1 / K_max`;
//! - means: `m0` = data mean, `beta0 = 1`;
//! - precisions: `nu0 = dim(z)`, `W0^-1` = empirical covariance of `z`.
//!
//! Each posterior component has a Student-t predictive with
//! `dof = nu - dim(z) + 1` and scale `(beta + 1) / (beta * dof) * W^-1`.
//! Conditioning on `x` uses the x-marginal of each t for the
//! responsibilities and the Gaussian-form conditional mean
//! `m_y + S_yx S_xx^-1 (x - m_x)` for each component's prediction.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use super::{Dataset, Prediction};
use crate::container::Container;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{log_det, mean_rows};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BgmrConfig {
    pub max_components: usize,
    pub max_iters: usize,
    /// Relative change of the lower bound that counts as converged.
    pub tol: f64,
    /// Added to every component scatter matrix and to the prior scale.
    pub reg_covar: f64,
    /// Components whose share of the data falls below this are dropped.
    pub prune_weight: f64,
    pub seed: u64,
    /// Independent initializations; the best final lower bound wins.
    pub n_init: usize,
    /// Prior scale of the component covariances.
    pub covariance_prior: CovariancePrior,
    pub deletion_moves: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariancePrior {
    /// Full empirical covariance of the joint data.
    Empirical,
    /// `ratio` times the diagonal of the empirical covariance.
    Diagonal(f64),
}

impl Default for BgmrConfig {
    fn default() -> Self {
        Self {
            max_components: 10,
            max_iters: 300,
            tol: 1e-8,
            reg_covar: 1e-6,
            prune_weight: 1e-3,
            seed: 0,
            n_init: 1,
            covariance_prior: CovariancePrior::Diagonal(1.0),
            deletion_moves: true,
        }
    }
}

/// Variational posterior over mixture parameters.
struct Posterior {
    alpha: DVector<f64>,
    beta: DVector<f64>,
    nu: DVector<f64>,
    means: Vec<DVector<f64>>,
    /// `W^-1 / nu` per component.
    covs: Vec<DMatrix<f64>>,
    /// Share of the data per component, `N_k / N`.
    shares: DVector<f64>,
}

struct Prior {
    alpha0: f64,
    beta0: f64,
    nu0: f64,
    m0: DVector<f64>,
    scale: DMatrix<f64>,
}

struct FitOutcome {
    post: Posterior,
    lower_bounds: Vec<f64>,
    converged: bool,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn kmeans_resp(z: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = z.nrows();
    let sq = |a: usize, c: &DVector<f64>| -> f64 { z.row(a).iter().zip(c.iter()).map(|(x, y)| (x - y).powi(2)).sum() };
    let mut centers: Vec<DVector<f64>> = vec![z.row(rng.random_range(0..n)).transpose()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq(i, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let c = z.row(pick).transpose();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq(i, &c));
        }
        centers.push(c);
    }
    let mut labels = vec![usize::MAX; n];
    for _ in 0..50 {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let best = (0..k)
                .map(|c| (sq(i, &centers[c]), c))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map(|(_, c)| c)
                .unwrap_or(0);
            if best != *label {
                *label = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            if members.is_empty() {
                continue;
            }
            center.fill(0.0);
            for &i in &members {
                *center += z.row(i).transpose();
            }
            *center /= members.len() as f64;
        }
    }
    let mut resp = DMatrix::zeros(n, k);
    for (i, l) in labels.iter().enumerate() {
        resp[(i, *l)] = 1.0;
    }
    resp
}

fn m_step(z: &DMatrix<f64>, resp: &DMatrix<f64>, prior: &Prior, reg: f64) -> Posterior {
    let (n, d) = z.shape();
    let k = resp.ncols();
    let mut post = Posterior {
        alpha: DVector::zeros(k),
        beta: DVector::zeros(k),
        nu: DVector::zeros(k),
        means: Vec::with_capacity(k),
        covs: Vec::with_capacity(k),
        shares: DVector::zeros(k),
    };
    for c in 0..k {
        let r = resp.column(c);
        let nk = r.sum() + 10.0 * f64::EPSILON;
        let xk = z.tr_mul(&r) / nk;
        let mut centered = z.clone();
        for i in 0..n {
            let w = r[i].sqrt();
            for j in 0..d {
                centered[(i, j)] = (centered[(i, j)] - xk[j]) * w;
            }
        }
        let mut sk = centered.tr_mul(&centered) / nk;
        for j in 0..d {
            sk[(j, j)] += reg;
        }
        let beta = prior.beta0 + nk;
        let nu = prior.nu0 + nk;
        let mean = (&prior.m0 * prior.beta0 + &xk * nk) / beta;
        let diff = &xk - &prior.m0;
        let mut cov = &prior.scale + sk * nk + (&diff * diff.transpose()) * (nk * prior.beta0 / beta);
        cov /= nu;
        post.alpha[c] = prior.alpha0 + nk;
        post.beta[c] = beta;
        post.nu[c] = nu;
        post.means.push(mean);
        post.covs.push(cov);
        post.shares[c] = nk / n as f64;
    }
    post
}

/// Returns normalized log responsibilities, or `None` if a covariance lost
/// positive definiteness.
fn e_step(z: &DMatrix<f64>, post: &Posterior) -> Option<DMatrix<f64>> {
    let (n, d) = z.shape();
    let k = post.alpha.len();
    let digamma_sum = digamma(post.alpha.sum());
    let mut log_rho = DMatrix::zeros(n, k);
    for c in 0..k {
        let chol = Cholesky::new(post.covs[c].clone())?;
        let nu = post.nu[c];
        let log_det_cov = log_det(&chol);
        let e_log_lambda: f64 = (0..d).map(|i| digamma(0.5 * (nu - i as f64))).sum::<f64>()
            + d as f64 * std::f64::consts::LN_2
            - log_det_cov
            - d as f64 * nu.ln();
        let base = digamma(post.alpha[c]) - digamma_sum + 0.5 * e_log_lambda
            - 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * d as f64 / post.beta[c];
        let mut centered = z.transpose();
        for mut col in centered.column_iter_mut() {
            col -= &post.means[c];
        }
        let solved = chol.l_dirty().solve_lower_triangular(&centered)?;
        for i in 0..n {
            log_rho[(i, c)] = base - 0.5 * solved.column(i).norm_squared();
        }
    }
    for mut row in log_rho.row_iter_mut() {
        let v: Vec<f64> = row.iter().copied().collect();
        let lse = log_sum_exp(&v);
        for x in row.iter_mut() {
            *x -= lse;
        }
    }
    Some(log_rho)
}

fn lower_bound(log_resp: &DMatrix<f64>, post: &Posterior) -> Option<f64> {
    let d = post.means[0].len() as f64;
    let entropy: f64 = log_resp.iter().map(|l| if *l > f64::NEG_INFINITY { -l.exp() * l } else { 0.0 }).sum();
    let mut log_wishart = 0.0;
    for c in 0..post.alpha.len() {
        let nu = post.nu[c];
        let chol = Cholesky::new(post.covs[c].clone())?;
        // 0.5 ln|W|
        let half_log_det_w = -0.5 * log_det(&chol) - 0.5 * d * nu.ln();
        let lg: f64 = (0..d as usize).map(|i| ln_gamma(0.5 * (nu - i as f64))).sum();
        log_wishart -= nu * half_log_det_w + nu * d * 0.5 * std::f64::consts::LN_2 + lg;
    }
    let log_dirichlet = ln_gamma(post.alpha.sum()) - post.alpha.iter().map(|a| ln_gamma(*a)).sum::<f64>();
    Some(entropy - log_wishart - log_dirichlet - 0.5 * d * post.beta.iter().map(|b| b.ln()).sum::<f64>())
}

fn run_once(z: &DMatrix<f64>, prior: &Prior, k: usize, cfg: &BgmrConfig, rng: &mut ChaCha8Rng) -> Result<FitOutcome> {
    let fail = || Error::Fit("component covariance lost positive definiteness".into());
    let mut current = refine(z, prior, kmeans_resp(z, k, rng), cfg)?;
    // Greedy deletion: empty one redundant component (smallest first) and
    // re-run; keep the result when the final bound improves. The component
    // count is unchanged, so bounds stay comparable. Only components sharing
    // a noticeable part of their responsibility mass are candidates: in high
    // dimension the bound's complexity term favours merging even cleanly
    // separated modes, which would destroy the multimodal structure.
    'search: while cfg.deletion_moves {
        let log_resp = e_step(z, &current.post).ok_or_else(fail)?;
        let mut alive: Vec<usize> = (0..k)
            .filter(|&c| current.post.shares[c] >= cfg.prune_weight && overlap(&log_resp, c) >= DELETION_OVERLAP)
            .collect();
        if alive.len() < 2 {
            break;
        }
        alive.sort_by(|a, b| current.post.shares[*a].total_cmp(&current.post.shares[*b]));
        let best = final_bound(&current);
        for &victim in &alive {
            let mut resp = DMatrix::zeros(z.nrows(), k);
            for i in 0..z.nrows() {
                let logs: Vec<f64> = (0..k).filter(|&c| c != victim).map(|c| log_resp[(i, c)]).collect();
                let lse = log_sum_exp(&logs);
                for c in (0..k).filter(|&c| c != victim) {
                    resp[(i, c)] = (log_resp[(i, c)] - lse).exp();
                }
            }
            let trial = refine(z, prior, resp, cfg)?;
            if final_bound(&trial) > best + 1e-9 * best.abs().max(1.0) {
                current = trial;
                continue 'search;
            }
        }
        break;
    }
    Ok(current)
}

/// Minimum share of a component's responsibility mass held jointly with
/// other components for it to be offered as a deletion candidate.
const DELETION_OVERLAP: f64 = 0.05;

/// `sum_i r_ic (1 - r_ic) / sum_i r_ic`: zero for hard assignments.
fn overlap(log_resp: &DMatrix<f64>, c: usize) -> f64 {
    let (mut shared, mut mass) = (0.0, 0.0);
    for l in log_resp.column(c).iter() {
        let r = l.exp();
        shared += r * (1.0 - r);
        mass += r;
    }
    if mass > 0.0 {
        shared / mass
    } else {
        0.0
    }
}

fn final_bound(o: &FitOutcome) -> f64 {
    o.lower_bounds.last().copied().unwrap_or(f64::NEG_INFINITY)
}

fn refine(z: &DMatrix<f64>, prior: &Prior, resp: DMatrix<f64>, cfg: &BgmrConfig) -> Result<FitOutcome> {
    let fail = || Error::Fit("component covariance lost positive definiteness".into());
    let mut post = m_step(z, &resp, prior, cfg.reg_covar);
    let mut bounds = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        let log_resp = e_step(z, &post).ok_or_else(fail)?;
        let resp = log_resp.map(f64::exp);
        post = m_step(z, &resp, prior, cfg.reg_covar);
        let lb = lower_bound(&log_resp, &post).ok_or_else(fail)?;
        if !lb.is_finite() {
            return Err(Error::Fit("lower bound is not finite".into()));
        }
        let done = bounds.last().is_some_and(|prev: &f64| (lb - prev).abs() <= cfg.tol * lb.abs().max(1.0));
        bounds.push(lb);
        if done {
            converged = true;
            break;
        }
    }
    Ok(FitOutcome {
        post,
        lower_bounds: bounds,
        converged,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BgmrMeta {
    input_dim: usize,
    converged: bool,
    iterations: usize,
}

/// Fitted mixture of Student-t predictives over `(x, y)`.
#[derive(Clone, Debug)]
pub struct BgmrModel {
    input_dim: usize,
    weights: DVector<f64>,
    means: Vec<DVector<f64>>,
    scales: Vec<DMatrix<f64>>,
    dofs: DVector<f64>,
    converged: bool,
    iterations: usize,
    lower_bounds: Vec<f64>,
    cond: Vec<Conditional>,
}

/// Per-component quantities for conditioning on `x`.
#[derive(Clone, Debug)]
struct Conditional {
    chol_xx: Cholesky<f64, Dyn>,
    /// `S_yx S_xx^-1`.
    gain: DMatrix<f64>,
    /// Log normalizer of the x-marginal t density.
    log_norm: f64,
}

impl PartialEq for BgmrModel {
    fn eq(&self, other: &Self) -> bool {
        self.input_dim == other.input_dim
            && self.weights == other.weights
            && self.means == other.means
            && self.scales == other.scales
            && self.dofs == other.dofs
            && self.converged == other.converged
            && self.iterations == other.iterations
    }
}

impl BgmrModel {
    pub fn fit(data: &Dataset, cfg: &BgmrConfig) -> Result<Self> {
        let n = data.len();
        if n < 2 {
            return Err(Error::Input("BGMR needs at least two samples".into()));
        }
        if cfg.max_components == 0 || cfg.n_init == 0 {
            return Err(Error::Input("BGMR needs at least one component and one initialization".into()));
        }
        let dx = data.input_dim();
        let z = DMatrix::from_fn(n, dx + data.output_dim(), |i, j| {
            if j < dx {
                data.x[(i, j)]
            } else {
                data.y[(i, j - dx)]
            }
        });
        let d = z.ncols();
        let m0 = mean_rows(&z);
        let mut centered = z.clone();
        for mut row in centered.row_iter_mut() {
            row -= m0.transpose();
        }
        let mut scale = centered.tr_mul(&centered) / (n - 1) as f64;
        if let CovariancePrior::Diagonal(ratio) = cfg.covariance_prior {
            if !(ratio > 0.0) {
                return Err(Error::Input(format!("covariance prior ratio {ratio} must be positive")));
            }
            scale = DMatrix::from_diagonal(&(scale.diagonal() * ratio));
        }
        for j in 0..d {
            scale[(j, j)] += cfg.reg_covar;
        }
        let k = cfg.max_components.min(n);
        let prior = Prior {
            alpha0: 1.0 / k as f64,
            beta0: 1.0,
            nu0: d as f64,
            m0,
            scale,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut best: Option<FitOutcome> = None;
        for _ in 0..cfg.n_init {
            let outcome = run_once(&z, &prior, k, cfg, &mut rng)?;
            if best.as_ref().is_none_or(|b| final_bound(&outcome) > final_bound(b)) {
                best = Some(outcome);
            }
        }
        let best = best.expect("n_init >= 1");
        if !best.converged {
            log::warn!("BGMR did not converge within {} iterations", cfg.max_iters);
        }
        let post = &best.post;
        let keep: Vec<usize> = (0..k).filter(|&c| post.shares[c] >= cfg.prune_weight).collect();
        let keep = if keep.is_empty() {
            let top = (0..k).max_by(|a, b| post.shares[*a].total_cmp(&post.shares[*b])).unwrap_or(0);
            vec![top]
        } else {
            keep
        };
        let alpha_sum: f64 = keep.iter().map(|&c| post.alpha[c]).sum();
        let weights = DVector::from_iterator(keep.len(), keep.iter().map(|&c| post.alpha[c] / alpha_sum));
        let mut scales = Vec::with_capacity(keep.len());
        let mut dofs = DVector::zeros(keep.len());
        for (slot, &c) in keep.iter().enumerate() {
            let dof = post.nu[c] - d as f64 + 1.0;
            let factor = (post.beta[c] + 1.0) / (post.beta[c] * dof) * post.nu[c];
            scales.push(&post.covs[c] * factor);
            dofs[slot] = dof;
        }
        let means = keep.iter().map(|&c| post.means[c].clone()).collect();
        Self::assemble(dx, weights, means, scales, dofs, best.converged, best.lower_bounds.len(), best.lower_bounds)
    }

    /// Builds a model from explicit predictive components.
    pub fn from_components(
        input_dim: usize,
        weights: DVector<f64>,
        means: Vec<DVector<f64>>,
        scales: Vec<DMatrix<f64>>,
        dofs: DVector<f64>,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || scales.len() != k || dofs.len() != k {
            return Err(Error::Input("component arrays disagree in length".into()));
        }
        if weights.iter().any(|w| *w < 0.0) || (weights.sum() - 1.0).abs() > 1e-10 {
            return Err(Error::Input("weights must be a probability vector".into()));
        }
        if dofs.iter().any(|v| *v <= 0.0) {
            return Err(Error::Input("degrees of freedom must be positive".into()));
        }
        let d = means[0].len();
        if input_dim == 0 || input_dim >= d {
            return Err(Error::Input("input dimension must leave at least one output".into()));
        }
        for (m, s) in means.iter().zip(&scales) {
            check_dim(d, m.len())?;
            check_dim(d, s.nrows())?;
            check_dim(d, s.ncols())?;
        }
        Self::assemble(input_dim, weights, means, scales, dofs, true, 0, Vec::new())
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        input_dim: usize,
        weights: DVector<f64>,
        means: Vec<DVector<f64>>,
        scales: Vec<DMatrix<f64>>,
        dofs: DVector<f64>,
        converged: bool,
        iterations: usize,
        lower_bounds: Vec<f64>,
    ) -> Result<Self> {
        let dx = input_dim;
        let mut cond = Vec::with_capacity(weights.len());
        for (s, dof) in scales.iter().zip(dofs.iter()) {
            let d = s.nrows();
            let sxx = s.view((0, 0), (dx, dx)).into_owned();
            let syx = s.view((dx, 0), (d - dx, dx)).into_owned();
            let chol_xx = Cholesky::new(sxx).ok_or_else(|| Error::Fit("component x-covariance is not positive definite".into()))?;
            let gain = chol_xx.solve(&syx.transpose()).transpose();
            let p = dx as f64;
            let log_norm = ln_gamma(0.5 * (dof + p)) - ln_gamma(0.5 * dof) - 0.5 * p * (dof * std::f64::consts::PI).ln() - 0.5 * log_det(&chol_xx);
            cond.push(Conditional { chol_xx, gain, log_norm });
        }
        Ok(Self {
            input_dim,
            weights,
            means,
            scales,
            dofs,
            converged,
            iterations,
            lower_bounds,
            cond,
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    /// Predictive t scale matrices over `(x, y)`.
    pub fn scales(&self) -> &[DMatrix<f64>] {
        &self.scales
    }

    pub fn dofs(&self) -> &DVector<f64> {
        &self.dofs
    }

    /// False when the iteration budget ran out first.
    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Variational lower bound after every iteration of the selected run.
    pub fn lower_bounds(&self) -> &[f64] {
        &self.lower_bounds
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.means[0].len() - self.input_dim
    }

    /// `p(k | x)` from the x-marginal t densities.
    pub fn responsibilities(&self, query: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.input_dim, query.len())?;
        let dx = self.input_dim as f64;
        let logs: Vec<f64> = (0..self.components())
            .map(|c| {
                let diff = DVector::from_iterator(
                    self.input_dim,
                    query.iter().zip(self.means[c].iter()).map(|(q, m)| q - m),
                );
                let delta = self.cond[c]
                    .chol_xx
                    .l_dirty()
                    .solve_lower_triangular(&diff)
                    .map_or(f64::INFINITY, |v| v.norm_squared());
                let dof = self.dofs[c];
                self.weights[c].ln() + self.cond[c].log_norm - 0.5 * (dof + dx) * (delta / dof).ln_1p()
            })
            .collect();
        let lse = log_sum_exp(&logs);
        if !lse.is_finite() {
            // every density underflowed: fall back to the prior weights
            return Ok(self.weights.clone());
        }
        Ok(DVector::from_iterator(logs.len(), logs.iter().map(|l| (l - lse).exp())))
    }

    fn conditional_mean(&self, c: usize, query: &[f64]) -> DVector<f64> {
        let dx = self.input_dim;
        let mean = &self.means[c];
        let diff = DVector::from_iterator(dx, query.iter().zip(mean.iter()).map(|(q, m)| q - m));
        mean.rows(dx, mean.len() - dx).into_owned() + &self.cond[c].gain * diff
    }

    /// Conditional mean of the most responsible component (lowest index on
    /// ties).
    pub fn predict_best(&self, query: &[f64]) -> Result<Prediction> {
        let resp = self.responsibilities(query)?;
        let mut best = 0;
        for c in 1..resp.len() {
            if resp[c] > resp[best] {
                best = c;
            }
        }
        Ok(Prediction {
            y: self.conditional_mean(best, query),
            mode_probability: resp[best],
            source: "bgmr".into(),
        })
    }

    /// Up to `top` component predictions by descending responsibility.
    pub fn predict_modes(&self, query: &[f64], top: usize) -> Result<Vec<Prediction>> {
        if top == 0 {
            return Err(Error::Input("top must be at least 1".into()));
        }
        let resp = self.responsibilities(query)?;
        let mut order: Vec<usize> = (0..resp.len()).collect();
        order.sort_by(|a, b| resp[*b].total_cmp(&resp[*a]));
        Ok(order
            .into_iter()
            .take(top)
            .map(|c| Prediction {
                y: self.conditional_mean(c, query),
                mode_probability: resp[c],
                source: "bgmr".into(),
            })
            .collect())
    }

    pub fn to_container(&self) -> Result<Container> {
        let meta = BgmrMeta {
            input_dim: self.input_dim,
            converged: self.converged,
            iterations: self.iterations,
        };
        let k = self.components();
        let d = self.means[0].len();
        let mut stacked = DMatrix::zeros(k * d, d);
        for (c, s) in self.scales.iter().enumerate() {
            stacked.view_mut((c * d, 0), (d, d)).copy_from(s);
        }
        Ok(Container::new("bgmr", serde_json::to_value(meta)?)
            .with("weights", DMatrix::from_column_slice(k, 1, self.weights.as_slice()))
            .with("means", DMatrix::from_fn(k, d, |c, j| self.means[c][j]))
            .with("scales", stacked)
            .with("dofs", DMatrix::from_column_slice(k, 1, self.dofs.as_slice())))
    }

    pub fn from_container(c: Container) -> Result<Self> {
        c.expect_kind("bgmr")?;
        let meta: BgmrMeta = c.meta_as()?;
        let weights = c.get("weights")?.column(0).into_owned();
        let means_m = c.get("means")?;
        let (k, d) = means_m.shape();
        let stacked = c.get("scales")?;
        if weights.len() != k || stacked.shape() != (k * d, d) {
            return Err(Error::Format("inconsistent BGMR shapes".into()));
        }
        let means = (0..k).map(|i| means_m.row(i).transpose()).collect();
        let scales = (0..k).map(|i| stacked.view((i * d, 0), (d, d)).into_owned()).collect();
        let dofs = c.get("dofs")?.column(0).into_owned();
        Self::assemble(meta.input_dim, weights, means, scales, dofs, meta.converged, meta.iterations, Vec::new())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_blobs(centers: &[[f64; 2]], per: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = centers.len() * per;
        let mut x = DMatrix::zeros(n, 1);
        let mut y = DMatrix::zeros(n, 1);
        for (c, center) in centers.iter().enumerate() {
            for i in 0..per {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                x[(c * per + i, 0)] = center[0] + a;
                y[(c * per + i, 0)] = center[1] + b;
            }
        }
        Dataset::plain(x, y).unwrap()
    }

    fn cfg(k: usize) -> BgmrConfig {
        BgmrConfig {
            max_components: k,
            ..BgmrConfig::default()
        }
    }

    #[test]
    fn single_gaussian_gives_one_component() {
        let data = gaussian_blobs(&[[0.0, 0.0]], 400, 1);
        let m = BgmrModel::fit(&data, &cfg(5)).unwrap();
        assert_eq!(m.components(), 1, "weights {:?}", m.weights());
    }

    #[test]
    fn separated_clusters_give_two_components() {
        let data = gaussian_blobs(&[[0.0, 0.0], [10.0, 0.0]], 200, 2);
        let m = BgmrModel::fit(&data, &cfg(5)).unwrap();
        assert_eq!(m.components(), 2, "weights {:?}", m.weights());
        assert!((m.weights().sum() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn lower_bound_is_monotone() {
        let data = gaussian_blobs(&[[0.0, 0.0], [4.0, 3.0], [-3.0, 5.0]], 80, 3);
        let m = BgmrModel::fit(&data, &cfg(8)).unwrap();
        for w in m.lower_bounds().windows(2) {
            assert!(w[1] >= w[0] - 1e-6 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn rejects_single_sample() {
        let data = Dataset::plain(DMatrix::from_element(1, 1, 0.0), DMatrix::from_element(1, 1, 0.0)).unwrap();
        assert!(matches!(BgmrModel::fit(&data, &cfg(3)), Err(Error::Input(_))));
    }

    #[test]
    fn one_component_is_gaussian_conditioning() {
        let mean = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let s = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.5, 0.3, 1.0, -0.2, 0.5, -0.2, 1.5]);
        let m = BgmrModel::from_components(1, DVector::from_element(1, 1.0), vec![mean.clone()], vec![s.clone()], DVector::from_element(1, 7.0)).unwrap();
        let p = m.predict_best(&[2.0]).unwrap();
        // m_y + S_yx / S_xx (x - m_x)
        let expected = [-2.0 + 0.3 / 2.0 * 1.0, 0.5 + 0.5 / 2.0 * 1.0];
        assert!((p.y[0] - expected[0]).abs() < 1e-14 && (p.y[1] - expected[1]).abs() < 1e-14);
        assert_eq!(p.mode_probability, 1.0);
    }

    #[test]
    fn equal_responsibilities_pick_lower_index() {
        let s = DMatrix::identity(2, 2);
        let m = BgmrModel::from_components(
            1,
            DVector::from_vec(vec![0.5, 0.5]),
            vec![DVector::from_vec(vec![-1.0, 5.0]), DVector::from_vec(vec![1.0, -5.0])],
            vec![s.clone(), s],
            DVector::from_vec(vec![4.0, 4.0]),
        )
        .unwrap();
        let p = m.predict_best(&[0.0]).unwrap();
        assert!((p.mode_probability - 0.5).abs() < 1e-15);
        assert!((p.y[0] - 5.0).abs() < 1e-14);
        let modes = m.predict_modes(&[0.0], 5).unwrap();
        assert_eq!(modes.len(), 2);
        assert_eq!(modes[0].y, p.y);
    }

    #[test]
    fn container_round_trip_preserves_predictions() {
        let data = gaussian_blobs(&[[0.0, 0.0], [6.0, 6.0]], 60, 4);
        let m = BgmrModel::fit(&data, &cfg(4)).unwrap();
        let back = BgmrModel::from_container(Container::from_bytes(&m.to_container().unwrap().to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(m, back);
        for q in [-1.0, 0.5, 3.0, 7.5] {
            assert_eq!(m.predict_best(&[q]).unwrap(), back.predict_best(&[q]).unwrap());
        }
    }
}
