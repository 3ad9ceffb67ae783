//! Planning tasks and the uniform task distributions they are drawn from.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geometry::{self, shapes::Point, Configuration, EnvKind, Environment, Waypoint};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskFamily {
    /// Random start and goal configurations; `x = (q_init, q_goal)`.
    CfgToCfg,
    /// Fixed start, random goal configuration; `x = q_goal`.
    FixedInitToCfg,
    /// Fixed start, random Cartesian tip goal; `x = p_goal`.
    CfgToCartesian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Goal {
    Config(Configuration),
    Cartesian(Point),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub family: TaskFamily,
    pub q_init: Configuration,
    pub goal: Goal,
}

impl Task {
    pub fn new(family: TaskFamily, q_init: Configuration, goal: Goal) -> Result<Self> {
        match (&family, &goal) {
            (TaskFamily::CfgToCartesian, Goal::Cartesian(_)) => {}
            (TaskFamily::CfgToCfg | TaskFamily::FixedInitToCfg, Goal::Config(g)) => {
                check_dim(q_init.dim(), g.dim())?;
            }
            _ => {
                return Err(Error::Input(format!(
                    "goal kind does not match task family {family:?}"
                )))
            }
        }
        Ok(Self {
            family,
            q_init,
            goal,
        })
    }

    /// The regressor input `x` for this task.
    pub fn descriptor(&self) -> Vec<f64> {
        match (&self.family, &self.goal) {
            (TaskFamily::CfgToCfg, Goal::Config(g)) => {
                self.q_init.iter().chain(g.iter()).copied().collect()
            }
            (_, Goal::Config(g)) => g.to_vec(),
            (_, Goal::Cartesian(p)) => p.to_vec(),
        }
    }

    pub fn goal_config(&self) -> Option<&Configuration> {
        match &self.goal {
            Goal::Config(g) => Some(g),
            Goal::Cartesian(_) => None,
        }
    }

    /// Inverse of [`Task::descriptor`]; fixed-start families need `fixed_init`.
    pub fn from_descriptor(
        family: TaskFamily,
        x: &[f64],
        dof: usize,
        fixed_init: Option<&Configuration>,
    ) -> Result<Task> {
        let fixed = || {
            fixed_init
                .cloned()
                .ok_or_else(|| Error::Input("fixed-start family needs the start configuration".into()))
        };
        match family {
            TaskFamily::CfgToCfg => {
                check_dim(2 * dof, x.len())?;
                Task::new(family, x[..dof].to_vec().into(), Goal::Config(x[dof..].to_vec().into()))
            }
            TaskFamily::FixedInitToCfg => {
                check_dim(dof, x.len())?;
                Task::new(family, fixed()?, Goal::Config(x.to_vec().into()))
            }
            TaskFamily::CfgToCartesian => {
                check_dim(2, x.len())?;
                Task::new(family, fixed()?, Goal::Cartesian([x[0], x[1]]))
            }
        }
    }

    /// Same start, planning to configuration `q_goal` instead.
    pub fn with_config_goal(&self, q_goal: Configuration) -> Result<Task> {
        let family = match self.family {
            TaskFamily::CfgToCfg => TaskFamily::CfgToCfg,
            _ => TaskFamily::FixedInitToCfg,
        };
        Task::new(family, self.q_init.clone(), Goal::Config(q_goal))
    }
}

/// Axis-aligned sampling box; `lo == hi` in a dimension pins it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SampleBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let b = Self { lo, hi };
        b.validate()?;
        Ok(b)
    }

    fn validate(&self) -> Result<()> {
        check_dim(self.lo.len(), self.hi.len())?;
        if self.lo.iter().zip(&self.hi).any(|(l, h)| !(l <= h)) {
            return Err(Error::Input("sampling box needs lo <= hi".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        v.len() == self.dim()
            && v.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(x, (l, h))| x >= l && x <= h)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| if l == h { *l } else { l + (h - l) * rng.random::<f64>() })
            .collect()
    }
}

/// How the straight-line initial guess picks a via point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaypointMode {
    #[default]
    None,
    /// Always through the first declared waypoint.
    First,
    /// Uniformly random waypoint per sample.
    Random,
}

/// A uniform task distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub family: TaskFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_box: Option<SampleBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_init: Option<Configuration>,
    pub goal_box: SampleBox,
    #[serde(default)]
    pub waypoints: Vec<Waypoint>,
    #[serde(default)]
    pub waypoint_mode: WaypointMode,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: usize,
}

fn default_max_attempts() -> usize {
    1000
}

impl TaskSpec {
    pub fn validate(&self, env: &Environment) -> Result<()> {
        let dof = env.dof();
        self.goal_box.validate()?;
        match self.family {
            TaskFamily::CfgToCfg => {
                let b = self
                    .init_box
                    .as_ref()
                    .ok_or_else(|| Error::Input("cfg-to-cfg tasks need an init_box".into()))?;
                b.validate()?;
                check_dim(dof, b.dim())?;
                check_dim(dof, self.goal_box.dim())?;
            }
            TaskFamily::FixedInitToCfg | TaskFamily::CfgToCartesian => {
                let q = self
                    .fixed_init
                    .as_ref()
                    .ok_or_else(|| Error::Input("fixed-init tasks need fixed_init".into()))?;
                check_dim(dof, q.dim())?;
                let goal_dim = if self.family == TaskFamily::CfgToCartesian {
                    if env.kind() != EnvKind::Arm {
                        return Err(Error::Input("Cartesian goals need an arm".into()));
                    }
                    2
                } else {
                    dof
                };
                check_dim(goal_dim, self.goal_box.dim())?;
            }
        }
        for w in &self.waypoints {
            check_dim(dof, w.config.dim())?;
        }
        if self.waypoint_mode != WaypointMode::None && self.waypoints.is_empty() {
            return Err(Error::Input("waypoint mode set but no waypoints declared".into()));
        }
        Ok(())
    }

    /// Via points for one initial guess, drawn per [`WaypointMode`].
    pub fn choose_waypoints<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Waypoint> {
        match self.waypoint_mode {
            WaypointMode::None => vec![],
            WaypointMode::First => self.waypoints.first().cloned().into_iter().collect(),
            WaypointMode::Random => {
                let i = rng.random_range(0..self.waypoints.len());
                vec![self.waypoints[i].clone()]
            }
        }
    }
}

fn free_at_rest(env: &Environment, q: &[f64]) -> bool {
    env.within_limits(q, 0.0) && geometry::signed_distance(env, q).is_ok_and(|d| d >= 0.0)
}

/// Draws a task uniformly from `spec`, resampling configurations that collide
/// (and Cartesian goals inside obstacles or out of reach).
pub fn sample_task<R: Rng + ?Sized>(env: &Environment, spec: &TaskSpec, rng: &mut R) -> Result<Task> {
    spec.validate(env)?;
    for _ in 0..spec.max_attempts.max(1) {
        let task = match spec.family {
            TaskFamily::CfgToCfg => {
                let q_init = spec.init_box.as_ref().expect("validated").sample(rng);
                let q_goal = spec.goal_box.sample(rng);
                if !free_at_rest(env, &q_init) || !free_at_rest(env, &q_goal) {
                    continue;
                }
                Task::new(spec.family, q_init.into(), Goal::Config(q_goal.into()))?
            }
            TaskFamily::FixedInitToCfg => {
                let q_goal = spec.goal_box.sample(rng);
                if !free_at_rest(env, &q_goal) {
                    continue;
                }
                let q_init = spec.fixed_init.clone().expect("validated");
                Task::new(spec.family, q_init, Goal::Config(q_goal.into()))?
            }
            TaskFamily::CfgToCartesian => {
                let p = spec.goal_box.sample(rng);
                let p = [p[0], p[1]];
                let reach = env.reach().expect("validated arm");
                let base = match env.robot() {
                    geometry::Robot::Arm { base, .. } => *base,
                    geometry::Robot::Base2d { .. } => [0.0, 0.0],
                };
                if env.point_clearance(p) < 0.0 || (p[0] - base[0]).hypot(p[1] - base[1]) > reach {
                    continue;
                }
                let q_init = spec.fixed_init.clone().expect("validated");
                Task::new(spec.family, q_init, Goal::Cartesian(p))?
            }
        };
        return Ok(task);
    }
    Err(Error::Sampling(spec.max_attempts))
}
