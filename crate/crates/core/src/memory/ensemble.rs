use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::geometry::Path;
use crate::trajopt::{solve, CancelToken, Problem, SolveResult, SolverOptions, Termination};

/// Wall-clock budget per task in parallel mode.
pub const PARALLEL_BUDGET: Duration = Duration::from_secs(30);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    /// Listed order, first valid result wins; the reference semantics.
    Serial,
    /// One thread per candidate, first valid result to commit wins.
    Parallel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodStatus {
    Won,
    /// Stopped (or, in serial mode, never started) after another candidate won.
    Cancelled,
    Invalid,
    /// Finished valid after the winner had already committed.
    LostRace,
}

/// One racing solver: a name, the problem it solves and its warm start.
#[derive(Clone, Debug)]
pub struct Candidate<'a> {
    pub name: String,
    pub problem: Problem<'a>,
    pub warm: Path,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MethodTrace {
    pub name: String,
    pub status: MethodStatus,
    pub result: Option<SolveResult>,
    /// Solver error, if the solve aborted.
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnsembleOutcome {
    pub winner: Option<String>,
    pub result: Option<SolveResult>,
    /// In candidate order.
    pub traces: Vec<MethodTrace>,
}

impl EnsembleOutcome {
    pub fn success(&self) -> bool {
        self.winner.is_some()
    }

    fn from_traces(traces: Vec<MethodTrace>) -> Self {
        let won = traces.iter().find(|t| t.status == MethodStatus::Won);
        Self {
            winner: won.map(|t| t.name.clone()),
            result: won.and_then(|t| t.result.clone()),
            traces,
        }
    }
}

pub fn ensemble_solve(candidates: &[Candidate], mode: EnsembleMode, opts: &SolverOptions) -> EnsembleOutcome {
    match mode {
        EnsembleMode::Serial => serial(candidates, opts),
        EnsembleMode::Parallel => parallel(candidates, opts, PARALLEL_BUDGET),
    }
}

fn serial(candidates: &[Candidate], opts: &SolverOptions) -> EnsembleOutcome {
    let mut traces = Vec::with_capacity(candidates.len());
    let mut done = false;
    for c in candidates {
        if done {
            traces.push(MethodTrace {
                name: c.name.clone(),
                status: MethodStatus::Cancelled,
                result: None,
                error: None,
            });
            continue;
        }
        let (status, result, error) = match solve(&c.problem, &c.warm, opts, None) {
            Ok(r) if r.valid => {
                done = true;
                (MethodStatus::Won, Some(r), None)
            }
            Ok(r) => (MethodStatus::Invalid, Some(r), None),
            Err(e) => (MethodStatus::Invalid, None, Some(e.to_string())),
        };
        traces.push(MethodTrace {
            name: c.name.clone(),
            status,
            result,
            error,
        });
    }
    EnsembleOutcome::from_traces(traces)
}

pub(crate) fn parallel(candidates: &[Candidate], opts: &SolverOptions, budget: Duration) -> EnsembleOutcome {
    let token = CancelToken::new();
    let latch: Mutex<Option<usize>> = Mutex::new(None);
    let finished = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<MethodTrace>>> = candidates.iter().map(|_| Mutex::new(None)).collect();
    let start = Instant::now();
    thread::scope(|s| {
        for (i, c) in candidates.iter().enumerate() {
            let (token, latch, finished, slots) = (&token, &latch, &finished, &slots);
            s.spawn(move || {
                let outcome = solve(&c.problem, &c.warm, opts, Some(token));
                let trace = match outcome {
                    Ok(r) if r.valid => {
                        let mut winner = latch.lock().expect("latch poisoned");
                        let status = if winner.is_none() {
                            *winner = Some(i);
                            token.cancel();
                            MethodStatus::Won
                        } else {
                            MethodStatus::LostRace
                        };
                        MethodTrace {
                            name: c.name.clone(),
                            status,
                            result: Some(r),
                            error: None,
                        }
                    }
                    Ok(r) => MethodTrace {
                        name: c.name.clone(),
                        status: if r.termination == Termination::Cancelled {
                            MethodStatus::Cancelled
                        } else {
                            MethodStatus::Invalid
                        },
                        result: Some(r),
                        error: None,
                    },
                    Err(e) => MethodTrace {
                        name: c.name.clone(),
                        status: MethodStatus::Invalid,
                        result: None,
                        error: Some(e.to_string()),
                    },
                };
                *slots[i].lock().expect("slot poisoned") = Some(trace);
                finished.fetch_add(1, Ordering::SeqCst);
            });
        }
        // watchdog
        while finished.load(Ordering::SeqCst) < candidates.len() {
            if start.elapsed() >= budget {
                token.cancel();
                break;
            }
            thread::sleep(Duration::from_millis(2));
        }
    });
    let traces = slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot poisoned").expect("every worker stores a trace"))
        .collect();
    EnsembleOutcome::from_traces(traces)
}
