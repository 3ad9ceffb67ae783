//! End-to-end acceptance checks. Runs every check, prints one PASS/FAIL line
//! each and exits nonzero if any failed.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use memmo::approx::{BgmrConfig, BgmrModel, Dataset, GprHyper, GprModel};
use memmo::dimred::{default_components, PcaProjection};
use memmo::geometry::straight_line_path;
use memmo::trajopt::solve;
use memmo::{path_cost, Environment, Problem, SolverOptions, Terminal};
use memmo_bench::{run_scenario, EvalOptions, Report, Scenario};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn scenario_path(id: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{id}.json"))
}

/// Scenario reports, each evaluated once in serial mode.
struct Bench {
    root: tempfile::TempDir,
    reports: BTreeMap<&'static str, (Report, f64)>,
}

impl Bench {
    fn report(&mut self, id: &'static str) -> &(Report, f64) {
        if !self.reports.contains_key(id) {
            let clock = Instant::now();
            let loaded = Scenario::load(scenario_path(id)).expect("scenario loads");
            let report = run_scenario(&loaded, &self.root.path().join(id), &EvalOptions::default()).expect("scenario runs");
            eprintln!("  {id}: {:.0} s", clock.elapsed().as_secs_f64());
            self.reports.insert(id, (report, clock.elapsed().as_secs_f64()));
        }
        &self.reports[id]
    }
}

fn success(r: &Report, row: &str) -> f64 {
    r.row(row).unwrap_or_else(|| panic!("row {row} missing")).success_pct
}

fn multimodality(b: &mut Bench) -> Outcome {
    let (r, secs) = b.report("base-multimodal");
    let (gpr, knn, bgmr) = (success(r, "gpr"), success(r, "knn"), success(r, "bgmr"));
    let pass = gpr <= 20.0 && knn >= 70.0 && bgmr >= 70.0 && gpr <= bgmr - 40.0 && *secs <= 600.0;
    outcome(pass, format!("base-multimodal success gpr {gpr:.0}%, knn {knn:.0}%, bgmr {bgmr:.0}% in {secs:.0} s"))
}

fn unimodal_parity(b: &mut Bench) -> Outcome {
    let (r, _) = b.report("base-unimodal");
    let learned: Vec<f64> = ["knn", "gpr", "bgmr"].iter().map(|m| success(r, m)).collect();
    let std = success(r, "std");
    let spread = learned.iter().cloned().fold(f64::MIN, f64::max) - learned.iter().cloned().fold(f64::MAX, f64::min);
    let pass = spread <= 15.0 && learned.iter().all(|s| *s >= std - 5.0);
    outcome(pass, format!("base-unimodal knn/gpr/bgmr {learned:?}%, spread {spread:.0}, std {std:.0}%"))
}

fn warm_start_speedup(b: &mut Bench) -> Outcome {
    let (r, _) = b.report("arm-fixed-init");
    let per_task = |m: &str| -> BTreeMap<usize, usize> {
        r.records.iter().filter(|x| x.method == m && x.success).map(|x| (x.task, x.iterations)).collect()
    };
    let (std, gpr) = (per_task("std"), per_task("gpr"));
    let both: Vec<usize> = std.keys().filter(|t| gpr.contains_key(t)).copied().collect();
    if both.is_empty() {
        return outcome(false, "arm-fixed-init: no task solved by both std and gpr".into());
    }
    let mean = |m: &BTreeMap<usize, usize>| both.iter().map(|t| m[t] as f64).sum::<f64>() / both.len() as f64;
    let (s, g) = (mean(&std), mean(&gpr));
    outcome(g <= 0.67 * s, format!("arm-fixed-init mean iterations gpr {g:.1} vs std {s:.1} (ratio {:.2}) over {} tasks", g / s, both.len()))
}

fn ensemble_dominance(b: &mut Bench) -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    for id in ["base-multimodal", "base-unimodal", "arm-fixed-init", "arm-random-init", "arm-cartesian"] {
        let (r, _) = b.report(id);
        let ensemble = r.successes("ensemble");
        let individual: Vec<&str> = r.rows.iter().map(|x| x.method.as_str()).filter(|m| *m != "ensemble").collect();
        let union: Vec<bool> = (0..ensemble.len())
            .map(|t| individual.iter().any(|m| r.successes(m).get(t).copied().unwrap_or(false)))
            .collect();
        if union != ensemble {
            pass = false;
            notes.push(format!("{id}: success set differs from the union"));
        }
        if id == "arm-random-init" {
            let best = individual.iter().map(|m| (success(r, m), *m)).fold((f64::MIN, ""), |a, b| if b.0 > a.0 { b } else { a });
            let e = success(r, "ensemble");
            pass &= e >= best.0 + 3.0;
            notes.push(format!("arm-random-init ensemble {e:.0}% vs best {} {:.0}%", best.1, best.0));
        }
    }
    notes.insert(0, "union property on 5 scenarios".into());
    outcome(pass, notes.join("; "))
}

fn metric_gain(b: &mut Bench) -> Outcome {
    let (r, _) = b.report("arm-cartesian");
    let Some(metric) = r.rows.iter().find(|x| x.method.starts_with("metric_")) else {
        return outcome(false, "arm-cartesian has no metric row".into());
    };
    let gpr = r.row("gpr").expect("gpr row");
    let cost = |row: &memmo_bench::ReportRow| row.cost.map_or(f64::INFINITY, |c| c.mean);
    let pass = metric.success_pct >= gpr.success_pct + 10.0 && cost(metric) <= cost(gpr);
    outcome(
        pass,
        format!(
            "arm-cartesian {} {:.0}% cost {:.3} vs gpr {:.0}% cost {:.3}",
            metric.method,
            metric.success_pct,
            cost(metric),
            gpr.success_pct,
            cost(gpr)
        ),
    )
}

fn gpr_oracle() -> Outcome {
    // two points: mean(x*) = k*^T (K + s I)^-1 y, solved by Cramer's rule
    let hyper = GprHyper {
        length_scale: 0.7,
        signal_variance: 1.3,
        noise_variance: 1e-2,
    };
    let (xs, ys) = ([0.0, 1.0], [1.0, -0.5]);
    let data = Dataset::plain(DMatrix::from_column_slice(2, 1, &xs), DMatrix::from_column_slice(2, 1, &ys)).unwrap();
    let model = GprModel::fit(&data, hyper).unwrap();
    let s = hyper.noise_variance + model.jitter();
    let k = |a: f64, b: f64| 1.3 * (-(a - b) * (a - b) / (2.0 * 0.49)).exp();
    let (a11, a12, a22) = (k(0.0, 0.0) + s, k(0.0, 1.0), k(1.0, 1.0) + s);
    let det = a11 * a22 - a12 * a12;
    let alpha = [(a22 * ys[0] - a12 * ys[1]) / det, (a11 * ys[1] - a12 * ys[0]) / det];
    let mut worst: f64 = 0.0;
    for q in [-0.5, 0.0, 0.3, 0.5, 0.9, 1.0, 2.2] {
        let expected = k(q, xs[0]) * alpha[0] + k(q, xs[1]) * alpha[1];
        worst = worst.max((model.predict(&[q]).unwrap().y[0] - expected).abs());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut interp: f64 = 0.0;
    for _ in 0..100 {
        let (n, dim, dy) = (rng.random_range(2..20), rng.random_range(1..4), rng.random_range(1..4));
        // A side of 2n keeps random packing at spacing 0.5 far from jamming, even in 1-D.
        let side = 2.0 * n as f64;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        while rows.len() < n {
            let p: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..side)).collect();
            if rows.iter().all(|r| r.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>() >= 0.25) {
                rows.push(p);
            }
        }
        let x = DMatrix::from_fn(n, dim, |i, j| rows[i][j]);
        let y = DMatrix::from_fn(n, dy, |_, _| rng.random_range(-3.0..3.0));
        let h = GprHyper {
            length_scale: 1.0,
            signal_variance: 1.0,
            noise_variance: 1e-8,
        };
        let m = GprModel::fit(&Dataset::plain(x, y.clone()).unwrap(), h).unwrap();
        for (i, r) in rows.iter().enumerate() {
            let p = m.predict(r).unwrap();
            for j in 0..dy {
                interp = interp.max((p.y[j] - y[(i, j)]).abs());
            }
        }
    }
    outcome(
        worst <= 1e-10 && interp <= 1e-3,
        format!("two-point oracle gap {worst:.1e}; worst interpolation error {interp:.1e} over 100 datasets"),
    )
}

fn bgmr_modes() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let xs: Vec<f64> = (0..100).map(|_| rng.random_range(0.0..1.0)).collect();
    let x = DMatrix::from_fn(200, 1, |i, _| xs[i / 2]);
    let y = DMatrix::from_fn(200, 1, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
    let data = Dataset::plain(x, y).unwrap();
    let bgmr = BgmrModel::fit(&data, &BgmrConfig::default()).unwrap();
    let gpr = GprModel::fit_default(&data).unwrap();
    let queries: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..1.0)).collect();
    let (mut near, mut middle, mut gpr_off) = (0, 0, 0);
    for q in &queries {
        let b = bgmr.predict_best(&[*q]).unwrap().y[0];
        near += usize::from((b - 1.0).abs() <= 0.1 || (b + 1.0).abs() <= 0.1);
        middle += usize::from(b.abs() < 0.5);
        gpr_off += usize::from(gpr.predict(&[*q]).unwrap().y[0].abs() > 0.1);
    }
    let frac = near as f64 / queries.len() as f64;
    outcome(
        frac >= 0.95 && middle == 0 && gpr_off == 0,
        format!(
            "bgmr ({} components) near a mode on {:.0}% of queries, {middle} in (-0.5, 0.5); gpr off zero on {gpr_off}",
            bgmr.components(),
            100.0 * frac
        ),
    )
}

fn pca_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let y = DMatrix::from_fn(40, 25, |_, _| rng.random_range(-2.0..2.0));
    let full = PcaProjection::fit(&y, 25).unwrap().max_reconstruction_error(&y).unwrap();
    let mut monotone = true;
    for _ in 0..20 {
        let (n, d) = (rng.random_range(5..40), rng.random_range(5..40));
        let basis = DMatrix::from_fn(4, d, |_, _| rng.random_range(-1.0..1.0));
        let codes = DMatrix::from_fn(n, 4, |_, _| rng.random_range(-1.0..1.0));
        let y = codes * basis + DMatrix::from_fn(n, d, |_, _| rng.random_range(-0.05..0.05));
        let mut last = f64::INFINITY;
        for k in 1..=n.min(d) {
            let e = PcaProjection::fit(&y, k).unwrap().reconstruction_mse(&y).unwrap();
            monotone &= e <= last + 1e-12;
            last = e;
        }
    }
    let (d, k) = (420, default_components(1000, 420));
    outcome(
        full <= 1e-8 && monotone && 8 * k < d,
        format!("full-rank error {full:.1e}; error monotone over 20 datasets: {monotone}; {d} floats -> {k} codes per path"),
    )
}

fn convex_exactness() -> Outcome {
    let base = Environment::base2d("empty", 0.1, vec![[-3.0, 3.0], [-3.0, 3.0], [-PI, PI]], vec![]).unwrap();
    let arm = Environment::arm("free-arm", vec![0.5; 4], vec![[-PI, PI], [-2.8, 2.8], [-2.8, 2.8], [-2.8, 2.8]], vec![]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut worst, mut invalid): (f64, usize) = (0.0, 0);
    for env in [&base, &arm] {
        let lim = env.joint_limits().to_vec();
        for _ in 0..50 {
            let mut draw = || lim.iter().map(|[lo, hi]| rng.random_range(lo * 0.9..hi * 0.9)).collect::<Vec<f64>>();
            let (a, b) = (draw(), draw());
            let steps = 30;
            let problem = Problem::new(env, a.clone().into(), Terminal::Config(b.clone().into()), steps).unwrap();
            let mut warm = straight_line_path(&a, &b, steps, &[]).unwrap();
            for t in 1..steps {
                for v in warm.config_mut(t) {
                    *v += rng.random_range(-0.3..0.3);
                }
            }
            let r = solve(&problem, &warm, &SolverOptions::default(), None).unwrap();
            invalid += usize::from(!r.valid);
            worst = worst.max((r.cost - path_cost(&straight_line_path(&a, &b, steps, &[]).unwrap())).abs());
        }
    }
    outcome(worst <= 1e-6 && invalid == 0, format!("100 obstacle-free pairs (base and arm): worst cost gap {worst:.1e}, {invalid} invalid"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let loaded = Scenario::load(scenario_path("base-multimodal")).unwrap();
    let mut csv = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        run_scenario(&loaded, &out, &EvalOptions::default()).unwrap();
        csv.push(fs::read(out.join("report.csv")).unwrap());
    }
    outcome(csv[0] == csv[1], format!("two serial base-multimodal runs: report.csv identical = {}", csv[0] == csv[1]))
}

fn main() -> ExitCode {
    let mut bench = Bench {
        root: tempfile::tempdir().expect("temp dir"),
        reports: BTreeMap::new(),
    };
    let checks: Vec<(&str, Box<dyn FnOnce(&mut Bench) -> Outcome>)> = vec![
        ("multimodality", Box::new(multimodality)),
        ("unimodal parity", Box::new(unimodal_parity)),
        ("warm-start speedup", Box::new(warm_start_speedup)),
        ("ensemble dominance", Box::new(ensemble_dominance)),
        ("metric over goals", Box::new(metric_gain)),
        ("gpr oracle", Box::new(|_| gpr_oracle())),
        ("bgmr mode picking", Box::new(|_| bgmr_modes())),
        ("pca suite", Box::new(|_| pca_suite())),
        ("convex exactness", Box::new(|_| convex_exactness())),
        ("determinism", Box::new(|_| determinism())),
    ];
    let mut failed = 0;
    let mut lines = Vec::new();
    for (name, check) in checks {
        let o = check(&mut bench);
        failed += usize::from(!o.pass);
        let line = format!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        println!("{line}");
        lines.push(line);
    }
    println!("\nacceptance summary");
    for l in &lines {
        println!("{l}");
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} check(s) failed");
        ExitCode::FAILURE
    }
}
