use std::time::Instant;

use rand::Rng;

use super::{config_is_free, Memory, Method};
use crate::error::{Error, Result};
use crate::geometry::{inverse_kinematics, Environment, Path};
use crate::task::{Goal, Task};
use crate::trajopt::{path_cost, solve, CancelToken, SolveResult, SolverOptions};

/// Configuration goals generated per Cartesian target.
pub const METRIC_IK_GOALS: usize = 5;

#[derive(Clone, Debug)]
pub struct MetricOutcome {
    pub chosen: usize,
    pub goals: Vec<Task>,
    /// Path cost of each goal's predicted warm start.
    pub costs: Vec<f64>,
    pub warm: Path,
    pub result: SolveResult,
    /// Seconds spent predicting and costing warm starts.
    pub predict_time: f64,
}

/// Up to `m` collision-free IK configurations for a Cartesian task, each as a
/// configuration-goal task with the same start. Returns the goals and the
/// seconds spent in IK.
pub fn expand_cartesian_goal<R: Rng + ?Sized>(env: &Environment, task: &Task, m: usize, rng: &mut R) -> Result<(Vec<Task>, f64)> {
    let Goal::Cartesian(p) = task.goal else {
        return Err(Error::Input("goal expansion needs a Cartesian task".into()));
    };
    let clock = Instant::now();
    let sols = inverse_kinematics(env, p, m, rng)?;
    if sols.unreachable {
        return Err(Error::Metric(format!("target ({:.3}, {:.3}) is out of reach", p[0], p[1])));
    }
    let goals = sols
        .solutions
        .into_iter()
        .filter(|q| config_is_free(env, q))
        .map(|q| task.with_config_goal(q))
        .collect::<Result<Vec<_>>>()?;
    if goals.is_empty() {
        return Err(Error::Metric("no collision-free IK solution; fall back to a direct Cartesian solve".into()));
    }
    Ok((goals, clock.elapsed().as_secs_f64()))
}

/// Index of the cheapest predicted warm start (lowest index on ties), the
/// cost vector and the chosen warm start.
pub fn rank_goals(memory: &Memory, method: Method, goals: &[Task]) -> Result<(usize, Vec<f64>, Path)> {
    let first = goals.first().ok_or_else(|| Error::Input("goal list is empty".into()))?;
    if goals.iter().any(|g| g.family != first.family) {
        return Err(Error::Input("goals mix task families".into()));
    }
    let mut warm = Vec::with_capacity(goals.len());
    let mut costs = Vec::with_capacity(goals.len());
    for g in goals {
        let p = memory.predict_warm_start(method, g)?;
        costs.push(path_cost(&p));
        warm.push(p);
    }
    let mut chosen = 0;
    for (i, c) in costs.iter().enumerate() {
        if *c < costs[chosen] {
            chosen = i;
        }
    }
    Ok((chosen, costs, warm.swap_remove(chosen)))
}

/// Ranks the goals by predicted warm-start cost and solves only the cheapest.
pub fn select_goal_by_metric(
    memory: &Memory,
    method: Method,
    env: &Environment,
    goals: &[Task],
    opts: &SolverOptions,
    cancel: Option<&CancelToken>,
) -> Result<MetricOutcome> {
    let clock = Instant::now();
    let (chosen, costs, warm) = rank_goals(memory, method, goals)?;
    let predict_time = clock.elapsed().as_secs_f64();
    let problem = memory.problem(env, &goals[chosen])?;
    let result = solve(&problem, &warm, opts, cancel)?;
    Ok(MetricOutcome {
        chosen,
        goals: goals.to_vec(),
        costs,
        warm,
        result,
        predict_time,
    })
}
