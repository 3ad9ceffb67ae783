//! Scenario documents: one JSON file naming an environment file, a task
//! distribution, the train/test sizes and the methods to evaluate.

use std::fs;
use std::path::{Path as FsPath, PathBuf};

use memmo::memory::{BuildConfig, Method, ModelConfig};
use memmo::{Environment, SolverOptions, TaskFamily, TaskSpec};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, BenchResult};

/// Horizon used by every scenario unless overridden.
pub const DEFAULT_STEPS: usize = 30;

/// Secondary configuration-goal memory used to rank IK goals of a Cartesian
/// scenario by predicted warm-start cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub task_spec: TaskSpec,
    pub n_train: usize,
    pub method: Method,
    /// IK goals generated per Cartesian target.
    #[serde(default = "default_goals")]
    pub goals: usize,
}

fn default_goals() -> usize {
    memmo::memory::METRIC_IK_GOALS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    #[serde(default)]
    pub description: String,
    /// Environment file, relative to the scenario file.
    pub environment: PathBuf,
    pub task_spec: TaskSpec,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<MetricSpec>,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub models: ModelConfig,
    /// Training sizes for the sweep, ascending.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep_sizes: Vec<usize>,
}

fn default_steps() -> usize {
    DEFAULT_STEPS
}

/// A scenario together with its loaded environment.
#[derive(Clone, Debug)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub env: Environment,
    pub source: PathBuf,
}

impl Scenario {
    pub fn from_json(text: &str) -> BenchResult<Self> {
        serde_json::from_str(text).map_err(|e| BenchError::Config(format!("scenario: {e}")))
    }

    /// Reads the scenario and its environment, then validates both.
    pub fn load(path: impl AsRef<FsPath>) -> BenchResult<LoadedScenario> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        let scenario = Self::from_json(&text)?;
        let env_path = path.parent().unwrap_or_else(|| FsPath::new(".")).join(&scenario.environment);
        let env = load_environment(&env_path)?;
        scenario.validate(&env)?;
        Ok(LoadedScenario {
            scenario,
            env,
            source: path.to_path_buf(),
        })
    }

    pub fn validate(&self, env: &Environment) -> BenchResult<()> {
        let bad = |m: String| Err(BenchError::Config(format!("scenario '{}': {m}", self.id)));
        if self.n_test == 0 {
            return bad("n_test must be at least 1".into());
        }
        if self.n_train == 0 {
            return bad("n_train must be at least 1".into());
        }
        if self.steps < 2 {
            return bad("steps must be at least 2".into());
        }
        if self.methods.is_empty() {
            return bad("methods list is empty".into());
        }
        if !self.sweep_sizes.windows(2).all(|w| w[0] < w[1]) || self.sweep_sizes.first() == Some(&0) {
            return bad("sweep sizes must be positive and strictly ascending".into());
        }
        self.task_spec.validate(env).map_err(|e| BenchError::Config(e.to_string()))?;
        if let Some(m) = &self.metric {
            if self.task_spec.family != TaskFamily::CfgToCartesian {
                return bad("metric ranking applies to Cartesian scenarios only".into());
            }
            if m.task_spec.family == TaskFamily::CfgToCartesian {
                return bad("metric memory must have configuration goals".into());
            }
            if m.n_train == 0 || m.goals == 0 {
                return bad("metric n_train and goals must be positive".into());
            }
            m.task_spec.validate(env).map_err(|e| BenchError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn build_config(&self, n: usize) -> BuildConfig {
        let mut cfg = BuildConfig::new(n, self.methods.clone(), self.seed, self.steps);
        cfg.solver = self.solver.clone();
        cfg.models = self.models.clone();
        cfg
    }

    /// Build settings for the metric memory; its seed is offset so its
    /// tasks differ from the main memory's.
    pub fn metric_build_config(&self) -> Option<BuildConfig> {
        self.metric.as_ref().map(|m| {
            let mut cfg = BuildConfig::new(m.n_train, vec![m.method], self.seed.wrapping_add(METRIC_SEED_OFFSET), self.steps);
            cfg.solver = self.solver.clone();
            cfg.models = self.models.clone();
            cfg
        })
    }

    /// Seed of the held-out test stream, disjoint from the training stream.
    pub fn test_seed(&self) -> u64 {
        self.seed ^ TEST_SEED_MASK
    }
}

const METRIC_SEED_OFFSET: u64 = 0x4D45_5452_4943;
const TEST_SEED_MASK: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn load_environment(path: &FsPath) -> BenchResult<Environment> {
    let text = fs::read_to_string(path).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
    Environment::from_json(&text).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))
}
