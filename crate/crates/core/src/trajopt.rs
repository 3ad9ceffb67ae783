//! Penalty-method trajectory optimizer.
//!
//! Minimizes the discrete-velocity cost `sum_t |q_{t+1} - q_t|^2` subject to
//! fixed endpoints, collision clearance, joint limits and (optionally) a
//! Cartesian tip goal. Constraints enter as squared hinge penalties weighted
//! by `mu`; each penalty subproblem is minimized by descent steps
//! preconditioned with the Gauss-Newton matrix of the sum-of-squares
//! objective (block tridiagonal in time), with an Armijo backtracking line
//! search. Active collision hinges add their finite-difference curvature to
//! that matrix when it stays positive definite (clipped per sample if not).
//! `mu` grows tenfold whenever a subproblem settles with constraints still
//! violated; the starting `mu` is the multiplier estimate of the warm start
//! when that start is already stationary.
//!
//! Collision gradients are central finite differences of the per-pair signed
//! distances. A mobile base is checked against the capsule its footprint
//! sweeps between consecutive steps, which is exact for straight motions. An
//! arm is checked at `substeps + 1` configurations per step, each with its
//! distances reduced by how far the links can travel within half a sample
//! spacing, so every instant of the interpolated motion is covered and links
//! cannot jump over obstacles between samples.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geometry::shapes::Point;
use crate::geometry::{jacobian_unchecked, tip_unchecked, Configuration, Environment, Path, Robot};
use crate::linalg::BlockTridiagonal;
use crate::task::{Goal, Task};

/// Penetration allowed by [`is_valid`], meters.
pub const VALID_COLLISION_TOL: f64 = 1e-4;
/// Endpoint residual allowed by [`is_valid`], radians or meters.
pub const VALID_ENDPOINT_TOL: f64 = 1e-3;
const VALID_LIMIT_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Config(Configuration),
    Cartesian(Point),
}

/// One planning problem: start, terminal constraint, horizon.
#[derive(Clone, Debug)]
pub struct Problem<'a> {
    pub env: &'a Environment,
    pub q_init: Configuration,
    pub terminal: Terminal,
    pub steps: usize,
    /// Interpolated collision checks between consecutive configurations.
    pub substeps: usize,
}

pub const DEFAULT_SUBSTEPS: usize = 2;

impl<'a> Problem<'a> {
    pub fn new(env: &'a Environment, q_init: Configuration, terminal: Terminal, steps: usize) -> Result<Self> {
        check_dim(env.dof(), q_init.dim())?;
        match &terminal {
            Terminal::Config(g) => check_dim(env.dof(), g.dim())?,
            Terminal::Cartesian(_) => {
                if !matches!(env.robot(), Robot::Arm { .. }) {
                    return Err(Error::Input("Cartesian terminal needs an arm".into()));
                }
            }
        }
        if steps == 0 {
            return Err(Error::Input("a path needs at least one step".into()));
        }
        Ok(Self {
            env,
            q_init,
            terminal,
            steps,
            substeps: DEFAULT_SUBSTEPS,
        })
    }

    pub fn from_task(env: &'a Environment, task: &Task, steps: usize) -> Result<Self> {
        let terminal = match &task.goal {
            Goal::Config(g) => Terminal::Config(g.clone()),
            Goal::Cartesian(p) => Terminal::Cartesian(*p),
        };
        Self::new(env, task.q_init.clone(), terminal, steps)
    }

    pub fn with_substeps(mut self, substeps: usize) -> Self {
        self.substeps = substeps;
        self
    }

    pub fn dof(&self) -> usize {
        self.env.dof()
    }

    fn check_path(&self, path: &Path) -> Result<()> {
        check_dim(self.dof(), path.dof())?;
        if path.steps() != self.steps {
            return Err(Error::Input(format!(
                "path has {} steps, problem expects {}",
                path.steps(),
                self.steps
            )));
        }
        Ok(())
    }

    /// Where collision is evaluated: swept capsules for a base, bounded
    /// motion samples plus the final configuration for an arm.
    fn samples(&self) -> Vec<Sample> {
        if matches!(self.env.robot(), Robot::Base2d { .. }) {
            return (0..self.steps).map(Sample::Sweep).collect();
        }
        let per_step = self.substeps + 1;
        let mut out = Vec::with_capacity(self.steps * per_step + 1);
        for t in 0..self.steps {
            for j in 0..per_step {
                out.push(Sample::Motion(t, j as f64 / per_step as f64, 0.5 / per_step as f64));
            }
        }
        out.push(Sample::Point(self.steps));
        out
    }
}

#[derive(Clone, Copy, Debug)]
enum Sample {
    /// The configuration `q_t`.
    Point(usize),
    /// The arm over `s ± half_width` of the motion from `q_t` to `q_{t+1}`.
    Motion(usize, f64, f64),
    /// The base footprint swept from `q_t` to `q_{t+1}`.
    Sweep(usize),
}

impl Sample {
    fn step(self) -> usize {
        match self {
            Sample::Point(t) | Sample::Motion(t, ..) | Sample::Sweep(t) => t,
        }
    }

    /// Clearance-adjusted pair distances as a function of `v`, which is
    /// `q_t` for a point and `(q_t, q_{t+1})` otherwise. `scratch` holds
    /// `dof` values.
    fn eval(self, env: &Environment, v: &[f64], scratch: &mut [f64], out: &mut Vec<f64>) {
        let dof = scratch.len();
        match self {
            Sample::Point(_) => env.pair_distances(v, out),
            Sample::Motion(_, s, w) => {
                env.motion_distances(&v[..dof], &v[dof..], s, w, scratch, out);
            }
            Sample::Sweep(_) => {
                env.sweep_distances(&v[..dof], &v[dof..], out);
            }
        }
    }

    fn variables(self, path: &Path) -> Vec<f64> {
        match self {
            Sample::Point(t) => path.config(t).to_vec(),
            Sample::Motion(t, ..) | Sample::Sweep(t) => [path.config(t), path.config(t + 1)].concat(),
        }
    }

    fn distances(self, env: &Environment, path: &Path, scratch: &mut [f64], out: &mut Vec<f64>) {
        match self {
            Sample::Point(t) => env.pair_distances(path.config(t), out),
            Sample::Motion(t, s, w) => {
                env.motion_distances(path.config(t), path.config(t + 1), s, w, scratch, out);
            }
            Sample::Sweep(t) => {
                env.sweep_distances(path.config(t), path.config(t + 1), out);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Budget of descent iterations over all penalty levels.
    pub max_iters: usize,
    pub mu_init: f64,
    pub mu_factor: f64,
    pub mu_max: f64,
    /// Gradient norm required at the final penalty level.
    pub grad_tol: f64,
    /// Gradient norm that ends a penalty level whose minimizer is still
    /// infeasible.
    pub level_grad_tol: f64,
    /// Descent iterations after which a penalty level ends regardless.
    pub level_max_iters: usize,
    pub fd_step: f64,
    /// Adds the second-order part of the collision hinges to the
    /// Gauss-Newton system whenever it stays positive definite.
    pub curvature: bool,
    /// Penetration tolerated at convergence, meters.
    pub collision_tol: f64,
    pub terminal_tol: f64,
    pub limit_tol: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
    /// Consecutive penalty increases that fail to halve the constraint
    /// violation before the solve gives up; 0 disables the check.
    pub stall_levels: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            mu_init: 10.0,
            mu_factor: 10.0,
            mu_max: 1e7,
            grad_tol: 1e-4,
            level_grad_tol: 1e-2,
            level_max_iters: 60,
            fd_step: 1e-5,
            curvature: true,
            collision_tol: 1e-5,
            terminal_tol: 1e-6,
            limit_tol: 1e-8,
            armijo: 1e-4,
            max_backtracks: 40,
            stall_levels: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIter,
    PenaltyStalled,
    Cancelled,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub mu: f64,
    pub objective: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveResult {
    pub path: Path,
    /// Discrete-velocity cost of `path`.
    pub cost: f64,
    pub valid: bool,
    pub iterations: usize,
    /// Seconds spent inside [`solve`].
    pub wall_time: f64,
    pub termination: Termination,
    pub max_violation: f64,
    pub final_mu: f64,
    /// Penalty objective after each accepted step (and at the start of each
    /// penalty level).
    #[serde(skip)]
    pub trace: Vec<TracePoint>,
}

/// Cooperative cancellation flag shared between solver threads.
#[derive(Clone, Debug, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

/// `sum_t |q_{t+1} - q_t|^2`.
pub fn path_cost(path: &Path) -> f64 {
    (0..path.steps())
        .map(|t| {
            path.config(t)
                .iter()
                .zip(path.config(t + 1))
                .map(|(a, b)| (b - a) * (b - a))
                .sum::<f64>()
        })
        .sum()
}

#[derive(Clone, Copy, Debug, Default)]
struct Violations {
    collision: f64,
    terminal: f64,
    start: f64,
    limits: f64,
}

impl Violations {
    fn max(&self) -> f64 {
        self.collision.max(self.terminal).max(self.start).max(self.limits)
    }

    fn within(&self, opts: &SolverOptions) -> bool {
        self.collision <= opts.collision_tol && self.terminal <= opts.terminal_tol && self.limits <= opts.limit_tol
    }
}

fn measure(problem: &Problem, path: &Path) -> Violations {
    let env = problem.env;
    let dof = problem.dof();
    let mut v = Violations::default();
    let mut buf = Vec::with_capacity(env.pair_count());
    let mut c = vec![0.0; dof];
    for sample in problem.samples() {
        sample.distances(env, path, &mut c, &mut buf);
        for d in &buf {
            v.collision = v.collision.max(-d);
        }
    }
    v.start = max_abs_diff(path.first(), &problem.q_init);
    v.terminal = terminal_residual(problem, path.last());
    for q in path.configs() {
        for (x, [lo, hi]) in q.iter().zip(env.joint_limits()) {
            v.limits = v.limits.max(lo - x).max(x - hi);
        }
    }
    v
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn terminal_residual(problem: &Problem, q_last: &[f64]) -> f64 {
    match &problem.terminal {
        Terminal::Config(g) => max_abs_diff(q_last, g),
        Terminal::Cartesian(p) => {
            let tip = tip_unchecked(problem.env, q_last);
            (tip[0] - p[0]).hypot(tip[1] - p[1])
        }
    }
}

/// Feasibility check: clearance along the path (swept footprint for a base,
/// bounded motion samples for an arm), endpoint residuals, joint limits.
pub fn is_valid(problem: &Problem, path: &Path) -> bool {
    if problem.check_path(path).is_err() || !path.as_flat().iter().all(|v| v.is_finite()) {
        return false;
    }
    let v = measure(problem, path);
    v.collision <= VALID_COLLISION_TOL
        && v.start <= VALID_ENDPOINT_TOL
        && v.terminal <= VALID_ENDPOINT_TOL
        && v.limits <= VALID_LIMIT_TOL
}

/// Penalized objective and its Gauss-Newton linearization over the free
/// configurations `q_1 .. q_last_free`.
struct Linearizer<'p, 'e> {
    problem: &'p Problem<'e>,
    opts: &'p SolverOptions,
    samples: Vec<Sample>,
    /// Number of free configurations (q_T is fixed for configuration goals).
    free: usize,
    dof: usize,
}

impl<'p, 'e> Linearizer<'p, 'e> {
    fn new(problem: &'p Problem<'e>, opts: &'p SolverOptions) -> Self {
        let free = match problem.terminal {
            Terminal::Config(_) => problem.steps - 1,
            Terminal::Cartesian(_) => problem.steps,
        };
        Self {
            problem,
            opts,
            samples: problem.samples(),
            free,
            dof: problem.dof(),
        }
    }

    fn is_free(&self, t: usize) -> bool {
        t >= 1 && t <= self.free
    }

    fn objective(&self, path: &Path, mu: f64) -> f64 {
        let env = self.problem.env;
        let mut penalty = 0.0;
        let mut buf = Vec::with_capacity(env.pair_count());
        let mut c = vec![0.0; self.dof];
        for &sample in &self.samples {
            sample.distances(env, path, &mut c, &mut buf);
            penalty += buf.iter().map(|d| if *d < 0.0 { d * d } else { 0.0 }).sum::<f64>();
        }
        for t in 1..=self.free {
            for (x, [lo, hi]) in path.config(t).iter().zip(env.joint_limits()) {
                let r = (lo - x).max(x - hi).max(0.0);
                penalty += r * r;
            }
        }
        if let Terminal::Cartesian(p) = &self.problem.terminal {
            let tip = tip_unchecked(env, path.last());
            penalty += (tip[0] - p[0]).powi(2) + (tip[1] - p[1]).powi(2);
        }
        path_cost(path) + mu * penalty
    }

    /// Returns the objective; fills the gradient, the Gauss-Newton system
    /// and, if requested, the second-order part of the collision hinges.
    fn linearize(
        &self,
        path: &Path,
        mu: f64,
        grad: &mut DVector<f64>,
        sys: &mut BlockTridiagonal,
        mut curv: Option<&mut Curvature>,
    ) -> f64 {
        let (dof, env) = (self.dof, self.problem.env);
        grad.fill(0.0);
        sys.clear();
        if let Some(curv) = curv.as_deref_mut() {
            curv.exact.clear();
            curv.convex.clear();
        }
        let idx = |t: usize| t - 1;

        // smoothness
        let mut objective = 0.0;
        for t in 0..self.problem.steps {
            let (a, b) = (path.config(t), path.config(t + 1));
            for i in 0..dof {
                let d = b[i] - a[i];
                objective += d * d;
                if self.is_free(t + 1) {
                    grad[idx(t + 1) * dof + i] += 2.0 * d;
                    sys.diag[idx(t + 1)][(i, i)] += 2.0;
                }
                if self.is_free(t) {
                    grad[idx(t) * dof + i] -= 2.0 * d;
                    sys.diag[idx(t)][(i, i)] += 2.0;
                }
                if self.is_free(t) && self.is_free(t + 1) {
                    sys.lower[idx(t)][(i, i)] -= 2.0;
                }
            }
        }

        // collision hinges, differentiated in the sample's own variables
        // (see `Sample::eval`) and lifted onto (q_t, q_{t+1})
        let pairs = env.pair_count();
        let mut c = vec![0.0; dof];
        let mut base = Vec::with_capacity(pairs);
        let mut fd = FiniteDiff::new(pairs);
        for &sample in &self.samples {
            sample.distances(env, path, &mut c, &mut base);
            let active: Vec<usize> = (0..pairs).filter(|&k| base[k] < 0.0).collect();
            if active.is_empty() {
                continue;
            }
            let t = sample.step();
            let v = sample.variables(path);
            let coupled = v.len() > dof;
            let lift = DMatrix::<f64>::identity(2 * dof, v.len());
            let mut eval = |x: &[f64], out: &mut Vec<f64>| sample.eval(env, x, &mut c, out);
            let (g, hess) = fd.derivatives(&mut eval, v, &base, &active, self.opts.fd_step, self.opts.curvature);
            let free_a = self.is_free(t);
            let free_b = coupled && self.is_free(t + 1);
            let w = 2.0 * mu;
            let mut gn = DMatrix::zeros(2 * dof, 2 * dof);
            let mut gv = DVector::zeros(2 * dof);
            for (a, &k) in active.iter().enumerate() {
                let r = -base[k];
                objective += mu * r * r;
                let g2 = &lift * g.row(a).transpose();
                gv -= &g2 * (w * r);
                gn += &g2 * g2.transpose() * w;
            }
            scatter_vector(grad, &gv, t, free_a, free_b, dof);
            scatter_block(sys, &gn, t, free_a, free_b, dof);
            if let Some(curv) = curv.as_deref_mut() {
                let mut hv = DMatrix::zeros(lift.ncols(), lift.ncols());
                for (a, &k) in active.iter().enumerate() {
                    hv -= &hess[a] * (w * -base[k]);
                }
                let block = &lift * hv * lift.transpose();
                scatter_block(&mut curv.convex, &positive_part(block.clone()), t, free_a, free_b, dof);
                scatter_block(&mut curv.exact, &block, t, free_a, free_b, dof);
            }
        }

        // joint limits
        for t in 1..=self.free {
            for (i, (x, [lo, hi])) in path.config(t).iter().zip(env.joint_limits()).enumerate() {
                let over = x - hi;
                let under = lo - x;
                if over > 0.0 {
                    objective += mu * over * over;
                    grad[idx(t) * dof + i] += 2.0 * mu * over;
                    sys.diag[idx(t)][(i, i)] += 2.0 * mu;
                } else if under > 0.0 {
                    objective += mu * under * under;
                    grad[idx(t) * dof + i] -= 2.0 * mu * under;
                    sys.diag[idx(t)][(i, i)] += 2.0 * mu;
                }
            }
        }

        // Cartesian goal
        if let Terminal::Cartesian(p) = &self.problem.terminal {
            let q = path.last();
            let tip = tip_unchecked(env, q);
            let r = [tip[0] - p[0], tip[1] - p[1]];
            objective += mu * (r[0] * r[0] + r[1] * r[1]);
            let j = jacobian_unchecked(env, q);
            let last = idx(self.free);
            for a in 0..dof {
                grad[last * dof + a] += 2.0 * mu * (j[(0, a)] * r[0] + j[(1, a)] * r[1]);
                for b in 0..dof {
                    sys.diag[last][(a, b)] += 2.0 * mu * (j[(0, a)] * j[(0, b)] + j[(1, a)] * j[(1, b)]);
                }
            }
        }
        objective
    }

    /// Penalty weight the warm start is tuned for: the least-squares
    /// multiplier making it stationary, snapped to the schedule
    /// `mu_init * mu_factor^k`. A warm start that is not close to stationary
    /// for any weight starts at `mu_init`.
    fn starting_penalty(&self, path: &Path, grad: &mut DVector<f64>, sys: &mut BlockTridiagonal) -> f64 {
        let o = self.opts;
        self.linearize(path, 0.0, grad, sys, None);
        let smooth = grad.clone();
        self.linearize(path, 1.0, grad, sys, None);
        let penalty = &*grad - &smooth;
        let norm2 = penalty.norm_squared();
        if norm2 <= f64::MIN_POSITIVE {
            return o.mu_init;
        }
        let estimate = -smooth.dot(&penalty) / norm2;
        // cosine between the smoothness pull and the penalty push
        let fit = estimate * norm2.sqrt() / smooth.norm().max(f64::MIN_POSITIVE);
        if !(estimate > o.mu_init) || o.mu_factor <= 1.0 || fit < STATIONARY_FIT {
            return o.mu_init;
        }
        let k = ((estimate / o.mu_init).ln() / o.mu_factor.ln()).round();
        (o.mu_init * o.mu_factor.powf(k)).min(o.mu_max)
    }

    fn apply(&self, path: &Path, step: &DVector<f64>, alpha: f64, out: &mut Path) {
        out.clone_from(path);
        for t in 1..=self.free {
            let q = out.config_mut(t);
            for i in 0..self.dof {
                q[i] += alpha * step[(t - 1) * self.dof + i];
            }
        }
    }
}

/// Second-order part of the collision hinges, as is and with each
/// sample's block clipped to positive semidefinite.
struct Curvature {
    exact: BlockTridiagonal,
    convex: BlockTridiagonal,
}

/// Minimum cosine between the smoothness gradient and the negated penalty
/// gradient for a warm start to count as a penalty-level stationary point.
const STATIONARY_FIT: f64 = 0.99;

/// The matrix with its negative eigenvalues clipped to zero.
fn positive_part(m: DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.symmetric_eigen();
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()
}

/// Finite differences of a vector-valued distance function.
struct FiniteDiff {
    plus: Vec<f64>,
    minus: Vec<f64>,
    /// Values at `v + HESSIAN_STEP e_i`, one buffer per variable.
    axis: Vec<Vec<f64>>,
    cross: Vec<f64>,
}

/// Step of the second differences; the gradient step is too small for them.
const HESSIAN_STEP: f64 = 1e-4;

impl FiniteDiff {
    fn new(pairs: usize) -> Self {
        Self {
            plus: Vec::with_capacity(pairs),
            minus: Vec::with_capacity(pairs),
            axis: Vec::new(),
            cross: Vec::with_capacity(pairs),
        }
    }

    /// Central-difference gradient rows (one per active pair) and, with
    /// `hessian`, one Hessian per active pair: central second differences on
    /// the diagonal, forward ones off it. `base` holds the values at `v`.
    fn derivatives(
        &mut self,
        f: &mut impl FnMut(&[f64], &mut Vec<f64>),
        mut v: Vec<f64>,
        base: &[f64],
        active: &[usize],
        h: f64,
        hessian: bool,
    ) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let m = v.len();
        let mut g = DMatrix::zeros(active.len(), m);
        for i in 0..m {
            let orig = v[i];
            v[i] = orig + h;
            f(&v, &mut self.plus);
            v[i] = orig - h;
            f(&v, &mut self.minus);
            v[i] = orig;
            for (a, &k) in active.iter().enumerate() {
                g[(a, i)] = (self.plus[k] - self.minus[k]) / (2.0 * h);
            }
        }
        if !hessian {
            return (g, Vec::new());
        }
        let e = HESSIAN_STEP;
        let mut hs = vec![DMatrix::zeros(m, m); active.len()];
        self.axis.resize_with(m, Vec::new);
        for i in 0..m {
            let orig = v[i];
            v[i] = orig + e;
            f(&v, &mut self.axis[i]);
            v[i] = orig - e;
            f(&v, &mut self.minus);
            v[i] = orig;
            for (a, &k) in active.iter().enumerate() {
                hs[a][(i, i)] = (self.axis[i][k] - 2.0 * base[k] + self.minus[k]) / (e * e);
            }
        }
        for i in 0..m {
            for j in 0..i {
                let (oi, oj) = (v[i], v[j]);
                v[i] = oi + e;
                v[j] = oj + e;
                f(&v, &mut self.cross);
                v[i] = oi;
                v[j] = oj;
                for (a, &k) in active.iter().enumerate() {
                    let x = (self.cross[k] - self.axis[i][k] - self.axis[j][k] + base[k]) / (e * e);
                    hs[a][(i, j)] = x;
                    hs[a][(j, i)] = x;
                }
            }
        }
        (g, hs)
    }
}

/// Adds a gradient over (q_t, q_{t+1}) into the free-variable gradient.
fn scatter_vector(grad: &mut DVector<f64>, g: &DVector<f64>, t: usize, free_a: bool, free_b: bool, dof: usize) {
    if free_a {
        let mut seg = grad.rows_mut((t - 1) * dof, dof);
        seg += g.rows(0, dof);
    }
    if free_b {
        let mut seg = grad.rows_mut(t * dof, dof);
        seg += g.rows(dof, dof);
    }
}

/// Adds a symmetric matrix over (q_t, q_{t+1}) into the block system.
fn scatter_block(sys: &mut BlockTridiagonal, m: &DMatrix<f64>, t: usize, free_a: bool, free_b: bool, dof: usize) {
    if free_a {
        sys.diag[t - 1] += m.view((0, 0), (dof, dof));
    }
    if free_b {
        sys.diag[t] += m.view((dof, dof), (dof, dof));
    }
    if free_a && free_b {
        sys.lower[t - 1] += m.view((dof, 0), (dof, dof));
    }
}

/// Runs the penalty loop from `warm_start`. The endpoints fixed by the
/// problem are written into the path before optimizing.
pub fn solve(problem: &Problem, warm_start: &Path, opts: &SolverOptions, cancel: Option<&CancelToken>) -> Result<SolveResult> {
    let clock = Instant::now();
    problem.check_path(warm_start)?;
    let mut path = warm_start.clone();
    path.config_mut(0).copy_from_slice(&problem.q_init);
    if let Terminal::Config(g) = &problem.terminal {
        let last = problem.steps;
        path.config_mut(last).copy_from_slice(g);
    }
    if !path.as_flat().iter().all(|v| v.is_finite()) {
        return Err(Error::Solver("warm start has non-finite entries".into()));
    }

    let lin = Linearizer::new(problem, opts);
    let n = lin.free * lin.dof;
    let mut grad = DVector::zeros(n);
    let mut sys = BlockTridiagonal::zeros(lin.free, lin.dof);
    let mut curv = opts.curvature.then(|| Curvature {
        exact: sys.clone(),
        convex: sys.clone(),
    });
    let mut trial = path.clone();
    let mut trace = Vec::new();
    let mut mu = if lin.free == 0 {
        opts.mu_init
    } else {
        lin.starting_penalty(&path, &mut grad, &mut sys)
    };
    let mut iterations = 0;
    let mut last_violation = f64::INFINITY;
    let mut stalled = 0;

    let termination = if lin.free == 0 {
        Termination::Converged
    } else {
        'outer: loop {
            let mut first = true;
            let mut level_iters = 0;
            // one penalty level
            loop {
                if cancel.is_some_and(CancelToken::is_cancelled) {
                    break 'outer Termination::Cancelled;
                }
                let f = lin.linearize(&path, mu, &mut grad, &mut sys, curv.as_mut());
                if !f.is_finite() || !grad.iter().all(|g| g.is_finite()) {
                    return Err(Error::Solver(format!(
                        "non-finite objective {f} at iteration {iterations} (mu = {mu})"
                    )));
                }
                if first {
                    trace.push(TracePoint { mu, objective: f });
                    first = false;
                }
                let gnorm = grad.norm();
                if gnorm <= opts.grad_tol {
                    break;
                }
                // an infeasible level only needs a rough minimizer before
                // the penalty grows
                if gnorm <= opts.level_grad_tol && !measure(problem, &path).within(opts) {
                    break;
                }
                if iterations >= opts.max_iters {
                    break 'outer Termination::MaxIter;
                }
                if level_iters >= opts.level_max_iters {
                    break;
                }
                // Newton step while the hinge curvature keeps the system
                // positive definite, then its convex part, then Gauss-Newton
                let rhs = -&grad;
                let descent = |s: &DVector<f64>| grad.dot(s) < 0.0;
                let newton = curv.as_ref().and_then(|c| {
                    sys.plus(&c.exact)
                        .solve(&rhs)
                        .filter(descent)
                        .or_else(|| sys.plus(&c.convex).solve(&rhs).filter(descent))
                });
                let Some(step) = newton.or_else(|| sys.solve(&rhs)) else {
                    return Err(Error::Solver(format!(
                        "Gauss-Newton system not positive definite at iteration {iterations}"
                    )));
                };
                let slope = grad.dot(&step);
                let mut alpha = 1.0;
                let mut accepted = None;
                for _ in 0..opts.max_backtracks {
                    lin.apply(&path, &step, alpha, &mut trial);
                    let ft = lin.objective(&trial, mu);
                    if ft.is_finite() && ft <= f + opts.armijo * alpha * slope {
                        accepted = Some(ft);
                        break;
                    }
                    alpha *= 0.5;
                }
                let Some(ft) = accepted else { break };
                std::mem::swap(&mut path, &mut trial);
                iterations += 1;
                level_iters += 1;
                trace.push(TracePoint { mu, objective: ft });
                if f - ft <= 1e-13 * f.abs().max(1.0) {
                    break;
                }
            }
            let v = measure(problem, &path);
            if v.within(opts) {
                break 'outer Termination::Converged;
            }
            if mu >= opts.mu_max {
                break 'outer Termination::PenaltyStalled;
            }
            // a tenfold penalty should shrink the violation about tenfold;
            // when it repeatedly does not, the path is stuck in a local
            // minimum through an obstacle
            let worst = v.max();
            stalled = if worst > 0.5 * last_violation { stalled + 1 } else { 0 };
            if opts.stall_levels > 0 && stalled >= opts.stall_levels {
                break 'outer Termination::PenaltyStalled;
            }
            last_violation = worst;
            mu = (mu * opts.mu_factor).min(opts.mu_max);
        }
    };

    let max_violation = measure(problem, &path).max();
    let valid = is_valid(problem, &path);
    Ok(SolveResult {
        cost: path_cost(&path),
        path,
        valid,
        iterations,
        wall_time: clock.elapsed().as_secs_f64(),
        termination,
        max_violation,
        final_mu: mu,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{straight_line_path, Obstacle};
    use std::f64::consts::PI;

    fn open_base() -> Environment {
        Environment::base2d("open", 0.1, vec![[-5.0, 5.0], [-5.0, 5.0], [-PI, PI]], vec![]).unwrap()
    }

    fn pillar() -> Environment {
        Environment::base2d(
            "pillar",
            0.1,
            vec![[-5.0, 5.0], [-5.0, 5.0], [-PI, PI]],
            vec![Obstacle::Circle {
                center: [0.0, 0.0],
                radius: 0.5,
            }],
        )
        .unwrap()
    }

    #[test]
    fn cost_examples() {
        let p = straight_line_path(&[0.0], &[1.0], 4, &[]).unwrap();
        assert!((path_cost(&p) - 0.25).abs() < 1e-15);
        assert_eq!(path_cost(&Path::constant(&[1.0, 2.0], 5).unwrap()), 0.0);
        let p = Path::from_flat(2, vec![0.0, 0.0, 1.0, 0.5, 0.2, 3.0, -1.0, 0.0]).unwrap();
        assert!((path_cost(&p) - path_cost(&p.reversed())).abs() < 1e-15);
    }

    #[test]
    fn obstacle_free_converges_to_straight_line() {
        let env = open_base();
        let problem = Problem::new(&env, vec![0.0, 0.0, 0.0].into(), Terminal::Config(vec![2.0, 1.0, 0.5].into()), 30).unwrap();
        let mut warm = straight_line_path(&[0.0; 3], &[2.0, 1.0, 0.5], 30, &[]).unwrap();
        for t in 1..30 {
            warm.config_mut(t)[0] += (t as f64 * 0.7).sin();
            warm.config_mut(t)[2] -= (t as f64 * 0.3).cos();
        }
        let res = solve(&problem, &warm, &SolverOptions::default(), None).unwrap();
        let line = straight_line_path(&[0.0; 3], &[2.0, 1.0, 0.5], 30, &[]).unwrap();
        assert!(res.valid);
        assert_eq!(res.termination, Termination::Converged);
        assert!((res.cost - path_cost(&line)).abs() < 1e-10);
    }

    #[test]
    fn invalid_paths_are_rejected() {
        let env = pillar();
        let problem = Problem::new(&env, vec![-1.0, 1.0, 0.0].into(), Terminal::Config(vec![1.0, 1.0, 0.0].into()), 10).unwrap();
        let line = straight_line_path(&[-1.0, 1.0, 0.0], &[1.0, 1.0, 0.0], 10, &[]).unwrap();
        assert!(is_valid(&problem, &line));

        let mut bad = line.clone();
        bad.config_mut(5).copy_from_slice(&[0.3, 0.0, 0.0]);
        assert!(!is_valid(&problem, &bad));

        let mut off = line.clone();
        off.config_mut(10)[2] += 0.1;
        assert!(!is_valid(&problem, &off));
    }

    #[test]
    fn detour_around_pillar() {
        let env = pillar();
        let problem = Problem::new(&env, vec![-1.5, 0.1, 0.0].into(), Terminal::Config(vec![1.5, 0.0, 0.0].into()), 30).unwrap();
        let warm = straight_line_path(&[-1.5, 0.1, 0.0], &[1.5, 0.0, 0.0], 30, &[]).unwrap();
        let res = solve(&problem, &warm, &SolverOptions::default(), None).unwrap();
        assert!(res.valid, "{:?} {}", res.termination, res.max_violation);
        assert!(res.cost > path_cost(&warm));
    }

    #[test]
    fn cartesian_goal_reached() {
        let env = Environment::arm("arm", vec![1.0, 1.0, 0.5], vec![[-PI, PI]; 3], vec![]).unwrap();
        let problem = Problem::new(&env, vec![0.0; 3].into(), Terminal::Cartesian([0.5, 1.5]), 20).unwrap();
        let warm = Path::constant(&[0.0; 3], 20).unwrap();
        let res = solve(&problem, &warm, &SolverOptions::default(), None).unwrap();
        assert!(res.valid, "{:?}", res.termination);
        let tip = crate::geometry::forward_kinematics(&env, res.path.last()).unwrap().tip;
        assert!((tip[0] - 0.5).hypot(tip[1] - 1.5) < 1e-5);
    }

    #[test]
    fn cancelled_before_start() {
        let env = pillar();
        let problem = Problem::new(&env, vec![-1.5, 0.1, 0.0].into(), Terminal::Config(vec![1.5, 0.0, 0.0].into()), 30).unwrap();
        let warm = straight_line_path(&[-1.5, 0.1, 0.0], &[1.5, 0.0, 0.0], 30, &[]).unwrap();
        let token = CancelToken::new();
        token.cancel();
        let res = solve(&problem, &warm, &SolverOptions::default(), Some(&token)).unwrap();
        assert_eq!(res.termination, Termination::Cancelled);
        assert_eq!(res.iterations, 0);
    }

    #[test]
    fn wrong_shape_warm_start() {
        let env = open_base();
        let problem = Problem::new(&env, vec![0.0; 3].into(), Terminal::Config(vec![1.0; 3].into()), 10).unwrap();
        let warm = Path::constant(&[0.0; 3], 9).unwrap();
        assert!(solve(&problem, &warm, &SolverOptions::default(), None).is_err());
    }
}
