//! Held-out evaluation of warm-start strategies and the training-size sweep.

use std::fs;
use std::path::{Path as FsPath, PathBuf};
use std::time::Instant;

use memmo::memory::{
    collect, ensemble_solve, expand_cartesian_goal, initial_guess, rank_goals, BuildConfig, Candidate, EnsembleMode, Memory, Method,
};
use memmo::task::sample_task;
use memmo::trajopt::solve;
use memmo::{Environment, Path, Problem, SolveResult, Task, TaskSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, BenchResult};
use crate::report::{aggregate, row_fields, write_csv, write_jsonl, ReportRow, TaskRecord, CSV_COLUMNS};
use crate::scenario::{LoadedScenario, Scenario};
use crate::svg;

pub const STD_ROW: &str = "std";
pub const ENSEMBLE_ROW: &str = "ensemble";

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub mode: EnsembleMode,
    /// Fill the time columns of `report.csv`.
    pub wall_clock: bool,
    /// Memory cache directory; defaults to `<out>/memory`.
    pub memory_dir: Option<PathBuf>,
    /// Build missing or stale memories instead of failing.
    pub build: bool,
    pub n_test: Option<usize>,
    pub seed: Option<u64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            mode: EnsembleMode::Serial,
            wall_clock: false,
            memory_dir: None,
            build: true,
            n_test: None,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub seed: u64,
    pub n_train: usize,
    pub rows: Vec<ReportRow>,
    pub records: Vec<TaskRecord>,
}

impl Report {
    pub fn row(&self, method: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Success flags of one method, indexed by task.
    pub fn successes(&self, method: &str) -> Vec<bool> {
        let mut out = Vec::new();
        for r in self.records.iter().filter(|r| r.method == method) {
            if out.len() <= r.task {
                out.resize(r.task + 1, false);
            }
            out[r.task] = r.success;
        }
        out
    }
}

/// A held-out task with the seed of its private generator.
#[derive(Clone, Debug)]
pub struct TestTask {
    pub task: Task,
    pub seed: u64,
}

/// Independent generator streams per test task.
const STD_STREAM: u64 = 1;
const IK_STREAM: u64 = 2;

fn task_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// `n` tasks from `spec`; task `i` depends only on `seed` and `i`.
pub fn test_tasks(env: &Environment, spec: &TaskSpec, n: usize, seed: u64) -> BenchResult<Vec<TestTask>> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let s: u64 = master.random();
            let task = sample_task(env, spec, &mut task_rng(s, 0))?;
            Ok(TestTask { task, seed: s })
        })
        .collect()
}

fn cache_matches(mem: &Memory, env: &Environment, spec: &TaskSpec, cfg: &BuildConfig) -> bool {
    let m = &mem.meta;
    m.env_id == env.id()
        && m.seed == cfg.seed
        && m.n_requested == cfg.n
        && m.steps == cfg.steps
        && &m.spec == spec
        && m.solver == cfg.solver
        && m.models == cfg.models
        && cfg.methods.iter().all(|x| m.methods.contains(x))
}

/// Loads the memory cached in `dir` when it matches `cfg`, otherwise builds
/// (and caches) it if allowed.
pub fn obtain_memory(env: &Environment, spec: &TaskSpec, cfg: &BuildConfig, dir: Option<&FsPath>, build: bool) -> BenchResult<Memory> {
    if let Some(d) = dir {
        if d.join("meta.json").exists() {
            let mem = Memory::load(d)?;
            if cache_matches(&mem, env, spec, cfg) {
                log::info!("loaded cached memory from {}", d.display());
                return Ok(mem);
            }
            if !build {
                return Err(BenchError::Config(format!("memory in {} does not match the scenario", d.display())));
            }
            log::warn!("memory in {} is stale; rebuilding", d.display());
        }
    }
    if !build {
        return Err(BenchError::Config("no memory available and building is disabled".into()));
    }
    log::info!("building memory of {} samples", cfg.n);
    let mem = memmo::memory::build_memory(env, spec, cfg)?;
    if mem.meta.partial {
        log::warn!("memory is partial: {} of {} samples", mem.meta.n_stored, mem.meta.n_requested);
    }
    if let Some(d) = dir {
        mem.save(d)?;
    }
    Ok(mem)
}

/// Evaluates every strategy of a scenario on held-out tasks.
pub struct Evaluator<'a> {
    pub env: &'a Environment,
    pub scenario: &'a Scenario,
    pub memory: &'a Memory,
    pub metric_memory: Option<&'a Memory>,
    pub mode: EnsembleMode,
}

/// A prepared strategy for one task: warm start plus the problem it targets.
struct Prepared<'e> {
    name: String,
    problem: Option<Problem<'e>>,
    warm: Option<Path>,
    chosen_goal: Option<usize>,
    prep_time: f64,
    error: Option<String>,
}

impl<'a> Evaluator<'a> {
    pub fn metric_row(&self) -> Option<String> {
        match (&self.scenario.metric, self.metric_memory) {
            (Some(m), Some(_)) => Some(format!("metric_{}", m.method)),
            _ => None,
        }
    }

    /// Report rows in table order.
    pub fn row_names(&self) -> Vec<String> {
        let mut names = vec![STD_ROW.to_string()];
        names.extend(self.scenario.methods.iter().map(|m| m.name().to_string()));
        names.extend(self.metric_row());
        names.push(ENSEMBLE_ROW.into());
        names
    }

    fn prepare_std(&self, t: &TestTask) -> Prepared<'a> {
        let clock = Instant::now();
        let out = (|| -> BenchResult<(Problem<'a>, Option<Path>)> {
            let problem = self.memory.problem(self.env, &t.task)?;
            let warm = initial_guess(self.env, &self.scenario.task_spec, &t.task, self.scenario.steps, &mut task_rng(t.seed, STD_STREAM))?;
            Ok((problem, warm))
        })();
        let prep_time = clock.elapsed().as_secs_f64();
        match out {
            Ok((problem, Some(warm))) => Prepared::ok(STD_ROW, problem, warm, None, prep_time),
            Ok((_, None)) => Prepared::failed(STD_ROW, "no IK solution for the straight-line guess".into(), prep_time),
            Err(e) => Prepared::failed(STD_ROW, e.to_string(), prep_time),
        }
    }

    fn prepare_method(&self, method: Method, t: &TestTask) -> Prepared<'a> {
        let clock = Instant::now();
        let out = (|| -> BenchResult<(Problem<'a>, Path)> {
            Ok((self.memory.problem(self.env, &t.task)?, self.memory.predict_warm_start(method, &t.task)?))
        })();
        let prep_time = clock.elapsed().as_secs_f64();
        match out {
            Ok((problem, warm)) => Prepared::ok(method.name(), problem, warm, None, prep_time),
            Err(e) => Prepared::failed(method.name(), e.to_string(), prep_time),
        }
    }

    fn prepare_metric(&self, name: &str, t: &TestTask) -> Prepared<'a> {
        let (spec, memory) = (self.scenario.metric.as_ref().expect("metric row"), self.metric_memory.expect("metric row"));
        let clock = Instant::now();
        let out = (|| -> BenchResult<(Problem<'a>, Path, usize)> {
            let (goals, _) = expand_cartesian_goal(self.env, &t.task, spec.goals, &mut task_rng(t.seed, IK_STREAM))?;
            let (chosen, _, warm) = rank_goals(memory, spec.method, &goals)?;
            Ok((memory.problem(self.env, &goals[chosen])?, warm, chosen))
        })();
        let prep_time = clock.elapsed().as_secs_f64();
        match out {
            Ok((problem, warm, chosen)) => Prepared::ok(name, problem, warm, Some(chosen), prep_time),
            Err(e) => Prepared::failed(name, e.to_string(), prep_time),
        }
    }

    fn record(&self, task: usize, p: &Prepared, result: Option<&SolveResult>) -> TaskRecord {
        TaskRecord {
            task,
            method: p.name.clone(),
            success: result.is_some_and(|r| r.valid),
            cost: result.map(|r| r.cost),
            iterations: result.map_or(0, |r| r.iterations),
            time: p.prep_time + result.map_or(0.0, |r| r.wall_time),
            termination: result.map(|r| format!("{:?}", r.termination).to_lowercase()),
            max_violation: result.map(|r| r.max_violation),
            winner: None,
            chosen_goal: p.chosen_goal,
            error: p.error.clone(),
        }
    }

    /// Records for one task in [`Evaluator::row_names`] order, plus the
    /// solved paths for overlays.
    pub fn evaluate(&self, index: usize, t: &TestTask) -> BenchResult<(Vec<TaskRecord>, Vec<(String, Path)>)> {
        let mut prepared = vec![self.prepare_std(t)];
        prepared.extend(self.scenario.methods.iter().map(|&m| self.prepare_method(m, t)));
        if let Some(name) = self.metric_row() {
            prepared.push(self.prepare_metric(&name, t));
        }
        let mut records = Vec::with_capacity(prepared.len() + 1);
        let mut paths = Vec::new();
        for p in &prepared {
            let result = match (&p.problem, &p.warm) {
                (Some(problem), Some(warm)) => Some(solve(problem, warm, &self.scenario.solver, None)?),
                _ => None,
            };
            if let Some(r) = &result {
                paths.push((p.name.clone(), r.path.clone()));
            }
            records.push(self.record(index, p, result.as_ref()));
        }

        // learned methods first, the metric next and the baseline last
        let mut order: Vec<&Prepared> = prepared[1..].iter().collect();
        order.push(&prepared[0]);
        let candidates: Vec<Candidate> = order
            .iter()
            .filter_map(|p| match (&p.problem, &p.warm) {
                (Some(problem), Some(warm)) => Some(Candidate {
                    name: p.name.clone(),
                    problem: problem.clone(),
                    warm: warm.clone(),
                }),
                _ => None,
            })
            .collect();
        let prep_time: f64 = prepared.iter().map(|p| p.prep_time).sum();
        let clock = Instant::now();
        let outcome = if candidates.is_empty() {
            None
        } else {
            Some(ensemble_solve(&candidates, self.mode, &self.scenario.solver))
        };
        let elapsed = clock.elapsed().as_secs_f64();
        let result = outcome.as_ref().and_then(|o| o.result.clone());
        let last = outcome.as_ref().and_then(|o| o.traces.iter().rev().find_map(|t| t.result.clone()));
        let shown = result.as_ref().or(last.as_ref());
        if let (Some(r), Some(w)) = (&result, outcome.as_ref().and_then(|o| o.winner.clone())) {
            paths.push((format!("{ENSEMBLE_ROW} ({w})"), r.path.clone()));
        }
        records.push(TaskRecord {
            task: index,
            method: ENSEMBLE_ROW.into(),
            success: result.is_some(),
            cost: shown.map(|r| r.cost),
            iterations: shown.map_or(0, |r| r.iterations),
            time: prep_time + elapsed,
            termination: shown.map(|r| format!("{:?}", r.termination).to_lowercase()),
            max_violation: shown.map(|r| r.max_violation),
            winner: outcome.and_then(|o| o.winner),
            chosen_goal: None,
            error: if candidates.is_empty() { Some("no strategy produced a warm start".into()) } else { None },
        });
        Ok((records, paths))
    }

    pub fn evaluate_all(&self, tasks: &[TestTask]) -> BenchResult<(Vec<TaskRecord>, Vec<(String, Path)>)> {
        let mut records = Vec::with_capacity(tasks.len() * (self.scenario.methods.len() + 3));
        let mut first_paths = Vec::new();
        for (i, t) in tasks.iter().enumerate() {
            let (recs, paths) = self.evaluate(i, t)?;
            if i == 0 {
                first_paths = paths;
            }
            records.extend(recs);
            log::debug!("task {}/{} done", i + 1, tasks.len());
        }
        Ok((records, first_paths))
    }
}

impl Prepared<'_> {
    fn ok<'e>(name: &str, problem: Problem<'e>, warm: Path, chosen_goal: Option<usize>, prep_time: f64) -> Prepared<'e> {
        Prepared {
            name: name.into(),
            problem: Some(problem),
            warm: Some(warm),
            chosen_goal,
            prep_time,
            error: None,
        }
    }

    fn failed<'e>(name: &str, error: String, prep_time: f64) -> Prepared<'e> {
        Prepared {
            name: name.into(),
            problem: None,
            warm: None,
            chosen_goal: None,
            prep_time,
            error: Some(error),
        }
    }
}

fn effective(loaded: &LoadedScenario, opts: &EvalOptions) -> Scenario {
    let mut s = loaded.scenario.clone();
    if let Some(seed) = opts.seed {
        s.seed = seed;
    }
    if let Some(n) = opts.n_test {
        s.n_test = n;
    }
    s
}

fn metric_memory(env: &Environment, s: &Scenario, dir: &FsPath, build: bool) -> BenchResult<Option<Memory>> {
    match (&s.metric, s.metric_build_config()) {
        (Some(m), Some(cfg)) => Ok(Some(obtain_memory(env, &m.task_spec, &cfg, Some(&dir.join("metric")), build)?)),
        _ => Ok(None),
    }
}

fn timing_note(opts: &EvalOptions) -> Option<&'static str> {
    (opts.wall_clock && opts.mode == EnsembleMode::Parallel).then_some("ensemble timing from parallel mode is machine-dependent")
}

/// Builds or loads the memory, evaluates `n_test` held-out tasks and writes
/// `report.csv`, `raw.jsonl` and `overlay.svg` (first test task) to `out`.
pub fn run_scenario(loaded: &LoadedScenario, out: &FsPath, opts: &EvalOptions) -> BenchResult<Report> {
    let s = effective(loaded, opts);
    s.validate(&loaded.env)?;
    fs::create_dir_all(out)?;
    let mem_dir = opts.memory_dir.clone().unwrap_or_else(|| out.join("memory"));
    let memory = obtain_memory(&loaded.env, &s.task_spec, &s.build_config(s.n_train), Some(&mem_dir), opts.build)?;
    let metric = metric_memory(&loaded.env, &s, &mem_dir, opts.build)?;
    let tasks = test_tasks(&loaded.env, &s.task_spec, s.n_test, s.test_seed())?;
    let ev = Evaluator {
        env: &loaded.env,
        scenario: &s,
        memory: &memory,
        metric_memory: metric.as_ref(),
        mode: opts.mode,
    };
    let (records, paths) = ev.evaluate_all(&tasks)?;
    let rows = aggregate(&records, &ev.row_names(), s.seed);
    write_csv(&out.join("report.csv"), &rows, opts.wall_clock, timing_note(opts))?;
    write_jsonl(&out.join("raw.jsonl"), &records)?;
    let labelled: Vec<(String, &Path)> = paths.iter().map(|(n, p)| (n.clone(), p)).collect();
    fs::write(out.join("overlay.svg"), svg::render(&loaded.env, &labelled))?;
    Ok(Report {
        scenario: s.id.clone(),
        seed: s.seed,
        n_train: memory.len(),
        rows,
        records,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRecord {
    pub size: usize,
    #[serde(flatten)]
    pub record: TaskRecord,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepReport {
    pub scenario: String,
    pub sizes: Vec<usize>,
    pub reports: Vec<Report>,
}

/// Evaluates memories trained on nested prefixes of one collection against
/// one fixed test batch. Writes `sweep.csv` (long format: one row per size
/// and method), `sweep_raw.jsonl` and `report_<size>.csv`.
pub fn run_size_sweep(loaded: &LoadedScenario, sizes: &[usize], out: &FsPath, opts: &EvalOptions) -> BenchResult<SweepReport> {
    let s = effective(loaded, opts);
    s.validate(&loaded.env)?;
    if sizes.is_empty() || !sizes.windows(2).all(|w| w[0] < w[1]) || sizes[0] == 0 {
        return Err(BenchError::Config("sweep sizes must be positive and strictly ascending".into()));
    }
    if !opts.build {
        return Err(BenchError::Config("a sweep rebuilds its memories; building cannot be disabled".into()));
    }
    fs::create_dir_all(out)?;
    let largest = *sizes.last().expect("non-empty");
    let collection = collect(&loaded.env, &s.task_spec, &s.build_config(largest))?;
    let mem_dir = opts.memory_dir.clone().unwrap_or_else(|| out.join("memory"));
    let metric = metric_memory(&loaded.env, &s, &mem_dir, true)?;
    let tasks = test_tasks(&loaded.env, &s.task_spec, s.n_test, s.test_seed())?;

    let mut reports = Vec::with_capacity(sizes.len());
    let mut long = Vec::new();
    let mut raw = Vec::new();
    for &n in sizes {
        let memory = Memory::train(&loaded.env, &s.task_spec, &s.build_config(n), &collection)?;
        let ev = Evaluator {
            env: &loaded.env,
            scenario: &s,
            memory: &memory,
            metric_memory: metric.as_ref(),
            mode: opts.mode,
        };
        let (records, _) = ev.evaluate_all(&tasks)?;
        let rows = aggregate(&records, &ev.row_names(), s.seed);
        write_csv(&out.join(format!("report_{n}.csv")), &rows, opts.wall_clock, timing_note(opts))?;
        long.extend(rows.iter().map(|r| (n, r.clone())));
        raw.extend(records.iter().map(|r| SweepRecord { size: n, record: r.clone() }));
        log::info!("sweep size {n} done");
        reports.push(Report {
            scenario: s.id.clone(),
            seed: s.seed,
            n_train: memory.len(),
            rows,
            records,
        });
    }
    write_sweep_csv(&out.join("sweep.csv"), &long, opts.wall_clock)?;
    write_jsonl(&out.join("sweep_raw.jsonl"), &raw)?;
    Ok(SweepReport {
        scenario: s.id,
        sizes: sizes.to_vec(),
        reports,
    })
}

fn write_sweep_csv(path: &FsPath, rows: &[(usize, ReportRow)], wall_clock: bool) -> BenchResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["size"];
    header.extend(CSV_COLUMNS);
    w.write_record(&header)?;
    for (n, r) in rows {
        let mut rec = vec![n.to_string()];
        rec.extend(row_fields(r, wall_clock));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
