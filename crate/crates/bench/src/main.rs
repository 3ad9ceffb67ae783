use std::fs;
use std::io::{self, Write};
use std::path::{Path as FsPath, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use memmo::memory::{ensemble_solve, expand_cartesian_goal, select_goal_by_metric, Candidate, EnsembleMode, Memory, Method};
use memmo::trajopt::solve;
use memmo::{Environment, Goal, SolveResult, Task, TaskFamily};
use memmo_bench::scenario::load_environment;
use memmo_bench::{obtain_memory, run_scenario, run_size_sweep, svg, BenchError, BenchResult, EvalOptions, LoadedScenario, Scenario};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

/// Memory-of-motion planner and benchmark harness.
#[derive(Parser, Debug)]
#[command(name = "memmo", version)]
struct Cli {
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Environment file; overrides the scenario's.
    #[arg(long, global = true)]
    env: Option<PathBuf>,
    /// Memory directory (cache for eval, target for build, source for plan).
    #[arg(long, global = true)]
    memory: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Run ensembles in listed order, first valid wins (default).
    #[arg(long, global = true, conflicts_with = "parallel")]
    serial: bool,
    /// Race ensemble members on threads.
    #[arg(long, global = true)]
    parallel: bool,
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Collect solved tasks and train the scenario's methods.
    Build {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario's training size.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Plan one task and write the path as JSON plus an SVG overlay.
    Plan(PlanArgs),
    /// Evaluate every strategy of a scenario on held-out tasks.
    Eval {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        n_test: Option<usize>,
        /// Fill the time columns of the report.
        #[arg(long)]
        wall_clock: bool,
        /// Fail instead of building a missing memory.
        #[arg(long)]
        no_build: bool,
    },
    /// Evaluate nested training sizes against one test batch.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// Ascending sizes; defaults to the scenario's sweep sizes.
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
        #[arg(long)]
        n_test: Option<usize>,
        #[arg(long)]
        wall_clock: bool,
    },
    /// Print a memory's provenance.
    Inspect,
}

#[derive(Args, Debug)]
struct PlanArgs {
    /// Scenario supplying the environment when --env is absent.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Method name, `std`, `metric` or `ensemble`.
    #[arg(long, default_value = "ensemble")]
    method: String,
    /// Start configuration, comma-separated (cfg-to-cfg memories).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    start: Vec<f64>,
    /// Goal configuration, comma-separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    goal: Vec<f64>,
    /// Cartesian tip target `x,y`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    target: Vec<f64>,
    /// Use the memory's `i`-th stored task.
    #[arg(long)]
    task_index: Option<usize>,
}

/// Planning ran but produced no valid path.
struct PlanFailure;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(PlanFailure)) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Writes one line to stdout; a closed pipe is not an error.
fn emit(text: &str) {
    let _ = writeln!(io::stdout().lock(), "{text}");
}

fn exit_code(e: &BenchError) -> u8 {
    use memmo::Error as E;
    match e {
        BenchError::Config(_) | BenchError::Json(_) => 2,
        BenchError::Core(E::Input(_) | E::Dimension { .. } | E::Format(_) | E::Json(_) | E::Io(_)) => 2,
        BenchError::Io(_) | BenchError::Csv(_) => 2,
        BenchError::Core(_) => 1,
    }
}

fn mode(cli: &Cli) -> EnsembleMode {
    if cli.parallel {
        EnsembleMode::Parallel
    } else {
        EnsembleMode::Serial
    }
}

fn load_scenario(cli: &Cli, path: &FsPath) -> BenchResult<LoadedScenario> {
    let mut loaded = Scenario::load(path)?;
    if let Some(env) = &cli.env {
        loaded.env = load_environment(env)?;
        loaded.scenario.validate(&loaded.env)?;
    }
    if let Some(seed) = cli.seed {
        loaded.scenario.seed = seed;
    }
    Ok(loaded)
}

fn run(cli: &Cli) -> BenchResult<Result<(), PlanFailure>> {
    match &cli.command {
        Command::Build { scenario, n } => {
            let loaded = load_scenario(cli, scenario)?;
            let s = &loaded.scenario;
            let dir = cli.memory.clone().unwrap_or_else(|| cli.out.join("memory"));
            let mem = obtain_memory(&loaded.env, &s.task_spec, &s.build_config(n.unwrap_or(s.n_train)), Some(&dir), true)?;
            if let (Some(m), Some(cfg)) = (&s.metric, s.metric_build_config()) {
                obtain_memory(&loaded.env, &m.task_spec, &cfg, Some(&dir.join("metric")), true)?;
            }
            emit(&serde_json::to_string_pretty(&summary(&mem, &dir))?);
            Ok(Ok(()))
        }
        Command::Eval {
            scenario,
            n_test,
            wall_clock,
            no_build,
        } => {
            let loaded = load_scenario(cli, scenario)?;
            let opts = EvalOptions {
                mode: mode(cli),
                wall_clock: *wall_clock,
                memory_dir: cli.memory.clone(),
                build: !no_build,
                n_test: *n_test,
                seed: None,
            };
            let report = run_scenario(&loaded, &cli.out, &opts)?;
            emit(fs::read_to_string(cli.out.join("report.csv"))?.trim_end());
            log::info!("{} tasks evaluated against a memory of {}", loaded.scenario.n_test, report.n_train);
            Ok(Ok(()))
        }
        Command::Sweep {
            scenario,
            sizes,
            n_test,
            wall_clock,
        } => {
            let loaded = load_scenario(cli, scenario)?;
            let sizes = if sizes.is_empty() { loaded.scenario.sweep_sizes.clone() } else { sizes.clone() };
            let opts = EvalOptions {
                mode: mode(cli),
                wall_clock: *wall_clock,
                memory_dir: cli.memory.clone(),
                build: true,
                n_test: *n_test,
                seed: None,
            };
            run_size_sweep(&loaded, &sizes, &cli.out, &opts)?;
            emit(fs::read_to_string(cli.out.join("sweep.csv"))?.trim_end());
            Ok(Ok(()))
        }
        Command::Inspect => {
            let dir = cli
                .memory
                .clone()
                .ok_or_else(|| BenchError::Config("inspect needs --memory".into()))?;
            let mem = Memory::load(&dir)?;
            let mut doc = serde_json::to_value(&mem.meta)?;
            doc["models_present"] = json!(mem.methods().map(|m| m.name()).collect::<Vec<_>>());
            doc["pca_components"] = json!(mem.pca().map(|p| p.n_components()));
            emit(&serde_json::to_string_pretty(&doc)?);
            Ok(Ok(()))
        }
        Command::Plan(args) => plan(cli, args),
    }
}

fn summary(mem: &Memory, dir: &FsPath) -> serde_json::Value {
    json!({
        "memory": dir.display().to_string(),
        "env_id": mem.meta.env_id,
        "n_requested": mem.meta.n_requested,
        "n_stored": mem.meta.n_stored,
        "attempts": mem.meta.attempts,
        "acceptance_rate": mem.meta.acceptance_rate,
        "partial": mem.meta.partial,
        "methods": mem.meta.methods,
    })
}

fn plan_task(args: &PlanArgs, mem: &Memory) -> BenchResult<Task> {
    if let Some(i) = args.task_index {
        return Ok(mem.task(i)?);
    }
    let fixed = mem.meta.spec.fixed_init.clone();
    let need = |what: &str| BenchError::Config(format!("{:?} memories need --{what}", mem.meta.family));
    let task = match mem.meta.family {
        TaskFamily::CfgToCfg => {
            if args.start.is_empty() || args.goal.is_empty() {
                return Err(need("start and --goal"));
            }
            Task::new(mem.meta.family, args.start.clone().into(), Goal::Config(args.goal.clone().into()))?
        }
        TaskFamily::FixedInitToCfg => {
            if args.goal.is_empty() {
                return Err(need("goal"));
            }
            let start = if args.start.is_empty() { fixed.ok_or_else(|| need("start"))? } else { args.start.clone().into() };
            Task::new(mem.meta.family, start, Goal::Config(args.goal.clone().into()))?
        }
        TaskFamily::CfgToCartesian => {
            if args.target.len() != 2 {
                return Err(need("target x,y"));
            }
            let start = if args.start.is_empty() { fixed.ok_or_else(|| need("start"))? } else { args.start.clone().into() };
            Task::new(mem.meta.family, start, Goal::Cartesian([args.target[0], args.target[1]]))?
        }
    };
    Ok(task)
}

fn plan(cli: &Cli, args: &PlanArgs) -> BenchResult<Result<(), PlanFailure>> {
    let env: Environment = match (&cli.env, &args.scenario) {
        (Some(e), _) => load_environment(e)?,
        (None, Some(s)) => Scenario::load(s)?.env,
        (None, None) => return Err(BenchError::Config("plan needs --env or --scenario".into())),
    };
    let dir = cli.memory.clone().unwrap_or_else(|| cli.out.join("memory"));
    if !dir.join("meta.json").exists() {
        return Err(BenchError::Config(format!("no memory in {}; run `memmo build` first", dir.display())));
    }
    let mem = Memory::load(&dir)?;
    let task = plan_task(args, &mem)?;
    let opts = mem.meta.solver.clone();
    fs::create_dir_all(&cli.out)?;

    let outcome: Result<(String, SolveResult), String> = match args.method.as_str() {
        "std" => {
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed.unwrap_or(mem.meta.seed));
            match memmo::memory::initial_guess(&env, &mem.meta.spec, &task, mem.meta.steps, &mut rng)? {
                Some(warm) => Ok(("std".into(), solve(&mem.problem(&env, &task)?, &warm, &opts, None)?)),
                None => Err("no IK solution for the straight-line guess".into()),
            }
        }
        "metric" => {
            let metric_dir = dir.join("metric");
            if !metric_dir.join("meta.json").exists() {
                return Err(BenchError::Config(format!("metric planning needs a configuration memory in {}", metric_dir.display())));
            }
            let metric = Memory::load(&metric_dir)?;
            let method = *metric.meta.methods.first().ok_or_else(|| BenchError::Config("metric memory has no model".into()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed.unwrap_or(mem.meta.seed));
            match expand_cartesian_goal(&env, &task, memmo::memory::METRIC_IK_GOALS, &mut rng) {
                Ok((goals, _)) => {
                    let out = select_goal_by_metric(&metric, method, &env, &goals, &opts, None)?;
                    Ok((format!("metric_{method}"), out.result))
                }
                Err(e @ memmo::Error::Metric(_)) => Err(e.to_string()),
                Err(e) => return Err(e.into()),
            }
        }
        "ensemble" => {
            let problem = mem.problem(&env, &task)?;
            let candidates = mem
                .methods()
                .map(|m| {
                    Ok(Candidate {
                        name: m.name().into(),
                        problem: problem.clone(),
                        warm: mem.predict_warm_start(m, &task)?,
                    })
                })
                .collect::<BenchResult<Vec<_>>>()?;
            let out = ensemble_solve(&candidates, mode(cli), &opts);
            match (out.winner, out.result) {
                (Some(w), Some(r)) => Ok((format!("ensemble ({w})"), r)),
                _ => Ok((
                    "ensemble".into(),
                    out.traces
                        .into_iter()
                        .rev()
                        .find_map(|t| t.result)
                        .ok_or_else(|| BenchError::Config("no ensemble member produced a result".into()))?,
                )),
            }
        }
        name => {
            let method: Method = name
                .parse()
                .map_err(|_| BenchError::Config(format!("unknown method '{name}'")))?;
            let warm = mem.predict_warm_start(method, &task)?;
            Ok((name.to_string(), solve(&mem.problem(&env, &task)?, &warm, &opts, None)?))
        }
    };

    match outcome {
        Ok((label, result)) => {
            let record = json!({
                "status": if result.valid { "ok" } else { "failed" },
                "method": label,
                "task": task,
                "valid": result.valid,
                "cost": result.cost,
                "iterations": result.iterations,
                "termination": result.termination,
                "max_violation": result.max_violation,
                "path": result.path,
            });
            fs::write(cli.out.join("path.json"), serde_json::to_string_pretty(&record)?)?;
            fs::write(cli.out.join("path.svg"), svg::render(&env, &[(label, &result.path)]))?;
            emit(&serde_json::to_string(&record)?);
            Ok(if result.valid { Ok(()) } else { Err(PlanFailure) })
        }
        Err(error) => {
            let record = json!({
                "status": "failed",
                "method": args.method,
                "task": task,
                "error": error,
            });
            fs::write(cli.out.join("path.json"), serde_json::to_string_pretty(&record)?)?;
            emit(&serde_json::to_string(&record)?);
            Ok(Err(PlanFailure))
        }
    }
}
