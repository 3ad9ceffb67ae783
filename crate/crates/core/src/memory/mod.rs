//! The memory of motion: a database of solved tasks plus the regressors
//! trained on it, used to warm-start, rank goals and race solvers.

mod ensemble;
mod metric;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path as FsPath;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{BgmrConfig, BgmrModel, Dataset, DatasetMeta, GprHyper, GprModel, KnnModel, Model};
use crate::container::Container;
use crate::dimred::{default_components, PcaProjection};
use crate::error::{check_dim, Error, Result};
use crate::geometry::{inverse_kinematics, signed_distance, straight_line_path, Environment, Path};
use crate::task::{sample_task, Goal, Task, TaskFamily, TaskSpec};
use crate::trajopt::{solve, Problem, SolverOptions, DEFAULT_SUBSTEPS};

pub use ensemble::{ensemble_solve, Candidate, EnsembleMode, EnsembleOutcome, MethodStatus, MethodTrace, PARALLEL_BUDGET};
pub use metric::{expand_cartesian_goal, rank_goals, select_goal_by_metric, MetricOutcome, METRIC_IK_GOALS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Knn,
    Gpr,
    Bgmr,
    KnnPca,
    GprPca,
    BgmrPca,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Knn, Method::Gpr, Method::Bgmr, Method::KnnPca, Method::GprPca, Method::BgmrPca];

    pub fn name(self) -> &'static str {
        match self {
            Method::Knn => "knn",
            Method::Gpr => "gpr",
            Method::Bgmr => "bgmr",
            Method::KnnPca => "knn_pca",
            Method::GprPca => "gpr_pca",
            Method::BgmrPca => "bgmr_pca",
        }
    }

    pub fn uses_pca(self) -> bool {
        matches!(self, Method::KnnPca | Method::GprPca | Method::BgmrPca)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown method '{s}'")))
    }
}

/// Per-field overrides of the default GPR hyperparameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GprOverrides {
    pub length_scale: Option<f64>,
    pub signal_variance: Option<f64>,
    pub noise_variance: Option<f64>,
}

impl GprOverrides {
    pub fn resolve(&self, data: &Dataset) -> GprHyper {
        let d = GprHyper::defaults_for(data);
        GprHyper {
            length_scale: self.length_scale.unwrap_or(d.length_scale),
            signal_variance: self.signal_variance.unwrap_or(d.signal_variance),
            noise_variance: self.noise_variance.unwrap_or(d.noise_variance),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub knn_k: usize,
    pub knn_standardize: bool,
    pub gpr: GprOverrides,
    pub bgmr: BgmrConfig,
    /// PCA code size; `None` means `min(50, N - 1, d_y)`.
    pub pca_components: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            knn_k: 1,
            knn_standardize: false,
            gpr: GprOverrides::default(),
            bgmr: BgmrConfig::default(),
            pca_components: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub n: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub steps: usize,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub models: ModelConfig,
    /// Attempts allowed per requested sample.
    #[serde(default = "default_retry_factor")]
    pub retry_factor: usize,
}

fn default_retry_factor() -> usize {
    10
}

impl BuildConfig {
    pub fn new(n: usize, methods: Vec<Method>, seed: u64, steps: usize) -> Self {
        Self {
            n,
            methods,
            seed,
            steps,
            solver: SolverOptions::default(),
            models: ModelConfig::default(),
            retry_factor: default_retry_factor(),
        }
    }
}

/// Provenance and shapes, persisted as `meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryMeta {
    pub env_id: String,
    pub family: TaskFamily,
    pub dof: usize,
    pub steps: usize,
    pub descriptor_dim: usize,
    pub spec: TaskSpec,
    pub n_requested: usize,
    pub n_stored: usize,
    pub attempts: usize,
    pub acceptance_rate: f64,
    /// Fewer than `n_requested` valid samples were found.
    pub partial: bool,
    pub seed: u64,
    pub build_wall_time: f64,
    pub methods: Vec<Method>,
    pub models: ModelConfig,
    pub solver: SolverOptions,
    /// Largest absolute PCA reconstruction error on the training paths.
    pub pca_error_bound: Option<f64>,
}

/// Valid (task, path) pairs gathered by repeated sampling and solving.
#[derive(Clone, Debug)]
pub struct Collection {
    pub tasks: Vec<Task>,
    pub paths: Vec<Path>,
    pub attempts: usize,
    pub wall_time: f64,
}

/// Initial guess used while building: straight line through the spec's
/// waypoints, or towards an IK solution of a Cartesian goal.
pub fn initial_guess<R: Rng + ?Sized>(env: &Environment, spec: &TaskSpec, task: &Task, steps: usize, rng: &mut R) -> Result<Option<Path>> {
    let via = spec.choose_waypoints(rng);
    match &task.goal {
        Goal::Config(g) => Ok(Some(straight_line_path(&task.q_init, g, steps, &via)?)),
        Goal::Cartesian(p) => {
            let sols = inverse_kinematics(env, *p, 1, rng)?;
            match sols.solutions.first() {
                Some(g) => Ok(Some(straight_line_path(&task.q_init, g, steps, &via)?)),
                None => Ok(None),
            }
        }
    }
}

/// Samples and solves tasks until `n` valid pairs exist or `retry_factor * n`
/// attempts are spent. Attempt `i` draws from its own generator seeded by the
/// `i`-th output of a master generator, so a smaller `n` yields a prefix of a
/// larger one.
pub fn collect(env: &Environment, spec: &TaskSpec, cfg: &BuildConfig) -> Result<Collection> {
    if cfg.n == 0 {
        return Err(Error::Input("memory size must be at least 1".into()));
    }
    spec.validate(env)?;
    let clock = Instant::now();
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tasks = Vec::with_capacity(cfg.n);
    let mut paths = Vec::with_capacity(cfg.n);
    let budget = cfg.retry_factor.max(1) * cfg.n;
    let mut attempts = 0;
    while tasks.len() < cfg.n && attempts < budget {
        attempts += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(master.random());
        let task = sample_task(env, spec, &mut rng)?;
        let Some(warm) = initial_guess(env, spec, &task, cfg.steps, &mut rng)? else {
            continue;
        };
        let problem = Problem::from_task(env, &task, cfg.steps)?;
        let result = solve(&problem, &warm, &cfg.solver, None)?;
        if result.valid {
            tasks.push(task);
            paths.push(result.path);
        }
    }
    if tasks.len() < cfg.n {
        log::warn!("memory build stopped at {} of {} samples after {attempts} attempts", tasks.len(), cfg.n);
    }
    Ok(Collection {
        tasks,
        paths,
        attempts,
        wall_time: clock.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug)]
pub struct Memory {
    pub meta: MemoryMeta,
    /// Task descriptors and flattened raw paths.
    pub dataset: Dataset,
    models: BTreeMap<Method, Model>,
    pca: Option<PcaProjection>,
}

/// Collects a database and trains every requested method on it.
pub fn build_memory(env: &Environment, spec: &TaskSpec, cfg: &BuildConfig) -> Result<Memory> {
    let collection = collect(env, spec, cfg)?;
    Memory::train(env, spec, cfg, &collection)
}

impl Memory {
    /// Trains on the first `cfg.n` pairs of `collection` (all of them if it
    /// holds fewer).
    pub fn train(env: &Environment, spec: &TaskSpec, cfg: &BuildConfig, collection: &Collection) -> Result<Self> {
        if cfg.methods.is_empty() {
            return Err(Error::Input("no methods requested".into()));
        }
        let n = collection.tasks.len().min(cfg.n);
        if n == 0 {
            return Err(Error::Fit("no valid samples were collected".into()));
        }
        let clock = Instant::now();
        let dof = env.dof();
        let x_dim = collection.tasks[0].descriptor().len();
        let y_dim = dof * (cfg.steps + 1);
        let x = DMatrix::from_fn(n, x_dim, |i, j| collection.tasks[i].descriptor()[j]);
        let mut y = DMatrix::zeros(n, y_dim);
        for (i, p) in collection.paths.iter().take(n).enumerate() {
            check_dim(y_dim, p.as_flat().len())?;
            y.row_mut(i).copy_from_slice(p.as_flat());
        }
        let dataset = Dataset::new(
            x,
            y,
            DatasetMeta {
                dof,
                steps: cfg.steps,
                env_id: env.id().to_string(),
                pca_coded: false,
            },
        )?;
        let (models, pca, pca_error_bound) = fit_models(&dataset, &cfg.methods, &cfg.models)?;
        // attempts are pro-rated when training on a prefix of a larger collection
        let attempts = if n < collection.tasks.len() {
            ((collection.attempts as f64) * n as f64 / collection.tasks.len() as f64).round() as usize
        } else {
            collection.attempts
        };
        let meta = MemoryMeta {
            env_id: env.id().to_string(),
            family: spec.family,
            dof,
            steps: cfg.steps,
            descriptor_dim: x_dim,
            spec: spec.clone(),
            n_requested: cfg.n,
            n_stored: n,
            attempts,
            acceptance_rate: n as f64 / attempts.max(1) as f64,
            partial: n < cfg.n,
            seed: cfg.seed,
            build_wall_time: collection.wall_time * n as f64 / collection.tasks.len() as f64 + clock.elapsed().as_secs_f64(),
            methods: cfg.methods.clone(),
            models: cfg.models.clone(),
            solver: cfg.solver.clone(),
            pca_error_bound,
        };
        Ok(Self {
            meta,
            dataset,
            models,
            pca,
        })
    }

    pub fn len(&self) -> usize {
        self.dataset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.is_empty()
    }

    pub fn methods(&self) -> impl Iterator<Item = Method> + '_ {
        self.models.keys().copied()
    }

    pub fn model(&self, method: Method) -> Result<&Model> {
        self.models
            .get(&method)
            .ok_or_else(|| Error::Input(format!("method '{method}' is not trained in this memory")))
    }

    pub fn pca(&self) -> Option<&PcaProjection> {
        self.pca.as_ref()
    }

    /// The `i`-th stored task.
    pub fn task(&self, i: usize) -> Result<Task> {
        if i >= self.len() {
            return Err(Error::Input(format!("task index {i} out of range")));
        }
        let x: Vec<f64> = self.dataset.x.row(i).iter().copied().collect();
        Task::from_descriptor(self.meta.family, &x, self.meta.dof, self.meta.spec.fixed_init.as_ref())
    }

    /// The `i`-th stored path.
    pub fn path(&self, i: usize) -> Result<Path> {
        if i >= self.len() {
            return Err(Error::Input(format!("path index {i} out of range")));
        }
        Path::from_flat(self.meta.dof, self.dataset.y.row(i).iter().copied().collect())
    }

    fn check_task(&self, task: &Task) -> Result<Vec<f64>> {
        if task.family != self.meta.family {
            return Err(Error::Input(format!(
                "task family {:?} does not match memory family {:?}",
                task.family, self.meta.family
            )));
        }
        check_dim(self.meta.dof, task.q_init.dim())?;
        let x = task.descriptor();
        check_dim(self.meta.descriptor_dim, x.len())?;
        Ok(x)
    }

    fn to_path(&self, method: Method, y: &[f64], task: &Task) -> Result<Path> {
        let flat = if method.uses_pca() {
            let pca = self.pca.as_ref().ok_or_else(|| Error::Format("PCA method without a projection".into()))?;
            pca.decode(y)?.as_slice().to_vec()
        } else {
            y.to_vec()
        };
        let mut path = Path::from_flat(self.meta.dof, flat)?;
        check_dim(self.meta.steps, path.steps())?;
        path.config_mut(0).copy_from_slice(&task.q_init);
        if let Goal::Config(g) = &task.goal {
            let last = path.steps();
            path.config_mut(last).copy_from_slice(g);
        }
        Ok(path)
    }

    /// Predicted path with the task's exact endpoints written in.
    pub fn predict_warm_start(&self, method: Method, task: &Task) -> Result<Path> {
        let x = self.check_task(task)?;
        let pred = self.model(method)?.predict(&x)?;
        self.to_path(method, pred.y.as_slice(), task)
    }

    /// One warm start per mixture component, most responsible first, with
    /// their responsibilities. Other methods return their single prediction.
    pub fn predict_modes(&self, method: Method, task: &Task, top: usize) -> Result<Vec<(Path, f64)>> {
        let x = self.check_task(task)?;
        match self.model(method)? {
            Model::Bgmr(m) => m
                .predict_modes(&x, top)?
                .into_iter()
                .map(|p| Ok((self.to_path(method, p.y.as_slice(), task)?, p.mode_probability)))
                .collect(),
            other => {
                let p = other.predict(&x)?;
                Ok(vec![(self.to_path(method, p.y.as_slice(), task)?, 1.0)])
            }
        }
    }

    /// The optimization problem for `task` at this memory's horizon.
    pub fn problem<'e>(&self, env: &'e Environment, task: &Task) -> Result<Problem<'e>> {
        if env.id() != self.meta.env_id {
            log::warn!("memory built for '{}' used with environment '{}'", self.meta.env_id, env.id());
        }
        Ok(Problem::from_task(env, task, self.meta.steps)?.with_substeps(DEFAULT_SUBSTEPS))
    }

    /// Retrains the requested methods on the first `n` stored pairs.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        let dataset = self.dataset.prefix(n)?;
        let methods: Vec<Method> = self.models.keys().copied().collect();
        let (models, pca, pca_error_bound) = fit_models(&dataset, &methods, &self.meta.models)?;
        let mut meta = self.meta.clone();
        meta.attempts = ((meta.attempts as f64) * n as f64 / self.len() as f64).round() as usize;
        meta.n_stored = n;
        meta.n_requested = n;
        meta.partial = false;
        meta.acceptance_rate = n as f64 / meta.attempts.max(1) as f64;
        meta.pca_error_bound = pca_error_bound;
        Ok(Self {
            meta,
            dataset,
            models,
            pca,
        })
    }

    pub fn save(&self, dir: impl AsRef<FsPath>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&self.meta)?)?;
        self.dataset.to_container()?.save(dir.join("dataset.bin"))?;
        for (method, model) in &self.models {
            model.to_container()?.save(dir.join(format!("model_{method}.bin")))?;
        }
        if let Some(pca) = &self.pca {
            pca.to_container()?.save(dir.join("pca.bin"))?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<FsPath>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: MemoryMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
        let dataset = Dataset::from_container(Container::load(dir.join("dataset.bin"))?)?;
        let mut models = BTreeMap::new();
        for &method in &meta.methods {
            let model = Model::from_container(Container::load(dir.join(format!("model_{method}.bin")))?)?;
            models.insert(method, model);
        }
        let pca_file = dir.join("pca.bin");
        let pca = if pca_file.exists() {
            Some(PcaProjection::from_container(Container::load(pca_file)?)?)
        } else {
            None
        };
        if meta.methods.iter().any(|m| m.uses_pca()) && pca.is_none() {
            return Err(Error::Format("memory lists PCA methods but has no pca.bin".into()));
        }
        Ok(Self {
            meta,
            dataset,
            models,
            pca,
        })
    }
}

type Fitted = (BTreeMap<Method, Model>, Option<PcaProjection>, Option<f64>);

fn fit_models(dataset: &Dataset, methods: &[Method], cfg: &ModelConfig) -> Result<Fitted> {
    let (pca, codes, bound) = if methods.iter().any(|m| m.uses_pca()) {
        if dataset.len() < 2 {
            return Err(Error::Fit("PCA needs at least two stored paths".into()));
        }
        let k = cfg
            .pca_components
            .unwrap_or_else(|| default_components(dataset.len(), dataset.output_dim()))
            .min(dataset.len().min(dataset.output_dim()));
        let pca = PcaProjection::fit(&dataset.y, k)?;
        let codes = dataset.with_outputs(pca.encode_rows(&dataset.y)?, true)?;
        let bound = pca.max_reconstruction_error(&dataset.y)?;
        (Some(pca), Some(codes), Some(bound))
    } else {
        (None, None, None)
    };
    let mut models = BTreeMap::new();
    for &method in methods {
        let data = if method.uses_pca() { codes.as_ref().expect("codes fitted") } else { dataset };
        let model = match method {
            Method::Knn | Method::KnnPca => Model::Knn(KnnModel::fit_with(data, cfg.knn_k.min(data.len()), cfg.knn_standardize)?),
            Method::Gpr | Method::GprPca => Model::Gpr(GprModel::fit(data, cfg.gpr.resolve(data))?),
            Method::Bgmr | Method::BgmrPca => Model::Bgmr(BgmrModel::fit(data, &cfg.bgmr)?),
        };
        models.insert(method, model);
    }
    Ok((models, pca, bound))
}

/// True when `q` is inside the joint limits and clear of every obstacle.
pub(crate) fn config_is_free(env: &Environment, q: &[f64]) -> bool {
    env.within_limits(q, 0.0) && signed_distance(env, q).is_ok_and(|d| d >= 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Obstacle, Waypoint};
    use crate::task::{SampleBox, WaypointMode};
    use crate::trajopt::path_cost;
    use std::f64::consts::PI;

    fn open_spec() -> (Environment, TaskSpec) {
        let env = Environment::base2d("open", 0.1, vec![[-3.0, 3.0], [-3.0, 3.0], [-PI, PI]], vec![]).unwrap();
        let spec = TaskSpec {
            family: TaskFamily::CfgToCfg,
            init_box: Some(SampleBox::new(vec![-2.0, -2.0, -1.0], vec![-1.0, 2.0, 1.0]).unwrap()),
            fixed_init: None,
            goal_box: SampleBox::new(vec![1.0, -2.0, -1.0], vec![2.0, 2.0, 1.0]).unwrap(),
            waypoints: vec![],
            waypoint_mode: WaypointMode::None,
            max_attempts: 100,
        };
        (env, spec)
    }

    #[test]
    fn single_sample_in_open_space_is_the_straight_line() {
        let (env, spec) = open_spec();
        let mem = build_memory(&env, &spec, &BuildConfig::new(1, vec![Method::Knn], 7, 10)).unwrap();
        assert_eq!(mem.len(), 1);
        let task = mem.task(0).unwrap();
        let line = straight_line_path(&task.q_init, task.goal_config().unwrap(), 10, &[]).unwrap();
        let stored = mem.path(0).unwrap();
        assert!((path_cost(&stored) - path_cost(&line)).abs() < 1e-9);
        assert_eq!(mem.meta.attempts, 1);
    }

    #[test]
    fn knn_recall_and_endpoint_snapping() {
        let (env, spec) = open_spec();
        let mem = build_memory(&env, &spec, &BuildConfig::new(6, vec![Method::Knn, Method::Gpr, Method::GprPca], 3, 8)).unwrap();
        let task = mem.task(2).unwrap();
        assert_eq!(mem.predict_warm_start(Method::Knn, &task).unwrap(), mem.path(2).unwrap());
        let other = Task::new(TaskFamily::CfgToCfg, vec![-1.5, 0.3, 0.1].into(), Goal::Config(vec![1.2, -0.4, 0.2].into())).unwrap();
        for m in [Method::Knn, Method::Gpr, Method::GprPca] {
            let p = mem.predict_warm_start(m, &other).unwrap();
            assert_eq!((p.steps(), p.dof()), (8, 3));
            assert_eq!(p.first(), other.q_init.as_slice());
            assert_eq!(p.last(), other.goal_config().unwrap().as_slice());
        }
        assert!(matches!(mem.predict_warm_start(Method::Bgmr, &other), Err(Error::Input(_))));
    }

    #[test]
    fn prefix_property() {
        let (env, spec) = open_spec();
        let small = collect(&env, &spec, &BuildConfig::new(3, vec![Method::Knn], 11, 6)).unwrap();
        let large = collect(&env, &spec, &BuildConfig::new(5, vec![Method::Knn], 11, 6)).unwrap();
        assert_eq!(small.tasks[..], large.tasks[..3]);
    }

    #[test]
    fn retry_ceiling_gives_partial_memory() {
        // the goal region is walled off, so most tasks fail
        let env = Environment::base2d(
            "wall",
            0.1,
            vec![[-3.0, 3.0], [-3.0, 3.0], [-PI, PI]],
            vec![Obstacle::Rect {
                min: [-0.2, -3.0],
                max: [0.2, 3.0],
            }],
        )
        .unwrap();
        let (_, mut spec) = open_spec();
        spec.waypoints = vec![Waypoint {
            config: vec![0.0, 0.0, 0.0].into(),
            label: "through".into(),
        }];
        let _ = &mut spec;
        let mut cfg = BuildConfig::new(2, vec![Method::Knn], 5, 6);
        cfg.retry_factor = 1;
        match build_memory(&env, &spec, &cfg) {
            Ok(mem) => assert!(mem.meta.partial || mem.len() == 2),
            Err(e) => assert!(matches!(e, Error::Fit(_))),
        }
    }
}
