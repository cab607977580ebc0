//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if a gating criterion fails.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use mlbpgd::harness::experiments::{
    build_problem, run_experiment_with, run_multilevel, run_single_level, ExperimentReport,
};
use mlbpgd::harness::trace_io::{strip_timing, trace_csv};
use mlbpgd::harness::{Experiment, ExperimentConfig};
use mlbpgd::linops::{equidistant_angles, parallel_beam, DenseMatrix};
use mlbpgd::objectives::CoarseModel;
use mlbpgd::solver::CoarseEvent;
use mlbpgd::vector::max_abs_diff;
use mlbpgd::{
    bpgd_run, bpgd_update, build_coarse_model, divergence, geometry_for, ml_bpgd_run, smoothness_constant,
    ArmijoParams, BregmanProx, FeasibleRegion, GeometryKind, GeometrySpec, GridVector, LevelSpec,
    LinearOperator, Model, Objective, SolverOptions, TransferPair, TriggerParams,
};

const ORACLE_TOL: f64 = 1e-3;
const ORACLE_INSTANCES: usize = 200;
const ORACLE_SECONDS: f64 = 30.0;
const FIXED_POINT_TOL: f64 = 1e-8;
const FIXED_POINT_ITERS: usize = 5;
const COHERENCE_TOL: f64 = 1e-10;
const SLACK_TOL: f64 = -1e-12;
const MASS_TOL: f64 = 1e-10;
const FEASIBLE_SAMPLES: usize = 1000;
const MONOTONE_TOL: f64 = 1e-10;
const FD_TOL: f64 = 1e-5;
const SMOOTH_PAIRS: usize = 10_000;
const SMOOTH_REL_TOL: f64 = 1e-10;
/// Floating-point allowance on `D_f` when it is formed from three
/// evaluations of size `|f|`.
const ROUNDOFF: f64 = 64.0 * f64::EPSILON;
const TRACE_TOL: f64 = 1e-8;
const ADJOINT_TOL: f64 = 1e-12;
const MATCH_ITERS: usize = 30;
const SUBLINEAR_FACTOR: f64 = 1.05;
const SUBLINEAR_K: usize = 200;
const REFERENCE_ITERS: usize = 5000;

type Verdict = Result<String, String>;

struct Runs {
    reports: Vec<ExperimentReport>,
    configs: Vec<ExperimentConfig>,
}

impl Runs {
    fn new() -> Self {
        let options = SolverOptions { capture_events: 100_000 };
        let mut reports = Vec::new();
        let mut configs = Vec::new();
        for e in [Experiment::Deconv, Experiment::Tomo, Experiment::Ddesign] {
            let cfg = ExperimentConfig::defaults(e);
            reports.push(run_experiment_with(&cfg, &options).expect("experiment run"));
            configs.push(cfg);
        }
        Self { reports, configs }
    }
}

fn ok_if(pass: bool, detail: String) -> Verdict {
    if pass {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// 1

#[derive(Clone, Copy, Debug)]
enum Pair {
    Quadratic,
    Orthant,
    Shifted,
    Upper,
    Double,
    Entropy,
    FermiDirac,
    Simplex,
    TranslatedSimplex,
}

struct Instance {
    geom: GeometrySpec,
    region: FeasibleRegion,
    x: Vec<f64>,
    g: Vec<f64>,
    tau: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

fn draw_instance(pair: Pair, n: usize, rng: &mut ChaCha20Rng) -> Instance {
    loop {
        let l: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u: Vec<f64> = l.iter().map(|l| l + rng.gen_range(0.5..3.0)).collect();
        let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tau = rng.gen_range(0.1..1.0);
        let above = |rng: &mut ChaCha20Rng, l: &[f64]| l.iter().map(|l| l + rng.gen_range(0.05..3.0)).collect::<Vec<_>>();
        let zeros = vec![0.0; n];
        let (geom, region, x, lo, hi) = match pair {
            Pair::Quadratic => {
                let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let lo = x.iter().map(|v| v - 50.0).collect();
                let hi = x.iter().map(|v| v + 50.0).collect();
                (GeometrySpec::quadratic(n), FeasibleRegion::unbounded(n), x, lo, hi)
            }
            Pair::Orthant | Pair::Entropy => {
                let x = above(rng, &zeros);
                let geom = if matches!(pair, Pair::Orthant) { GeometrySpec::log_barrier(n) } else { GeometrySpec::neg_entropy(n) };
                (geom, FeasibleRegion::orthant(n), x, zeros.clone(), vec![50.0; n])
            }
            Pair::Shifted => {
                let x = above(rng, &l);
                let hi = l.iter().map(|l| l + 50.0).collect();
                let geom = GeometrySpec::shifted_log_barrier(l.clone()).unwrap();
                let region = FeasibleRegion::new_box(l.clone(), vec![f64::INFINITY; n]).unwrap();
                (geom, region, x, l.clone(), hi)
            }
            Pair::Upper => {
                let x: Vec<f64> = u.iter().map(|u| u - rng.gen_range(0.05..3.0)).collect();
                let lo = u.iter().map(|u| u - 50.0).collect();
                let geom = GeometrySpec::upper_log_barrier(u.clone()).unwrap();
                let region = FeasibleRegion::new_box(vec![f64::NEG_INFINITY; n], u.clone()).unwrap();
                (geom, region, x, lo, u.clone())
            }
            Pair::Double | Pair::FermiDirac => {
                let x = l.iter().zip(&u).map(|(l, u)| l + (u - l) * rng.gen_range(0.05..0.95)).collect();
                let geom = if matches!(pair, Pair::Double) {
                    GeometrySpec::double_log_barrier(l.clone(), u.clone()).unwrap()
                } else {
                    GeometrySpec::fermi_dirac(l.clone(), u.clone()).unwrap()
                };
                (geom, FeasibleRegion::new_box(l.clone(), u.clone()).unwrap(), x, l.clone(), u.clone())
            }
            Pair::Simplex | Pair::TranslatedSimplex => {
                let base = if matches!(pair, Pair::Simplex) { zeros.clone() } else { l.clone() };
                let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
                let x: Vec<f64> = if matches!(pair, Pair::Simplex) {
                    let s: f64 = raw.iter().sum();
                    raw.iter().map(|v| v / s).collect()
                } else {
                    base.iter().zip(&raw).map(|(l, r)| l + r).collect()
                };
                let total = x.iter().sum();
                let geom = if matches!(pair, Pair::Simplex) {
                    GeometrySpec::log_barrier(n)
                } else {
                    GeometrySpec::shifted_log_barrier(base.clone()).unwrap()
                };
                let region = FeasibleRegion::simplex(base.clone(), total).unwrap();
                (geom, region, x, base, vec![total; n])
            }
        };
        let bounded = match pair {
            Pair::Orthant | Pair::Shifted => x.iter().zip(&lo).zip(&g).all(|((x, l), g)| 1.0 / (x - l) + tau * g >= 0.1),
            Pair::Upper => x.iter().zip(&hi).zip(&g).all(|((x, u), g)| 1.0 / (u - x) - tau * g >= 0.1),
            _ => true,
        };
        if bounded {
            return Instance { geom, region, x, g, tau, lo, hi };
        }
    }
}

/// Nested grid search of a convex function on an open box: 80 interior
/// nodes per axis, then the window shrinks to four cells around the best
/// node; eight rounds end far below a 1e-4 step.
fn grid_search(f: impl Fn(&[f64]) -> Option<f64>, mut lo: Vec<f64>, mut hi: Vec<f64>) -> Vec<f64> {
    const NODES: usize = 81;
    let n = lo.len();
    let mut best: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
    for _ in 0..8 {
        let h: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| (b - a) / NODES as f64).collect();
        let mut value = f64::INFINITY;
        let mut point = vec![0.0; n];
        let total = (NODES - 1).pow(n as u32);
        for idx in 0..total {
            let mut rest = idx;
            for d in 0..n {
                point[d] = lo[d] + h[d] * (1 + rest % (NODES - 1)) as f64;
                rest /= NODES - 1;
            }
            if let Some(v) = f(&point) {
                if v < value {
                    value = v;
                    best.copy_from_slice(&point);
                }
            }
        }
        for d in 0..n {
            lo[d] = lo[d].max(best[d] - 2.0 * h[d]);
            hi[d] = hi[d].min(best[d] + 2.0 * h[d]);
        }
    }
    best
}

fn oracle_argmin(inst: &Instance) -> Vec<f64> {
    let subproblem = |u: &[f64]| {
        let lin: f64 = inst.g.iter().zip(u.iter().zip(&inst.x)).map(|(g, (u, x))| g * (u - x)).sum();
        divergence(&inst.geom, u, &inst.x).ok().map(|d| inst.tau * lin + d)
    };
    match &inst.region {
        FeasibleRegion::TranslatedSimplex { lower, total } => {
            if lower.len() == 1 {
                return vec![*total];
            }
            let (l0, l1) = (lower[0], lower[1]);
            let t = grid_search(|t| subproblem(&[t[0], total - t[0]]), vec![l0], vec![total - l1]);
            vec![t[0], total - t[0]]
        }
        FeasibleRegion::Box { .. } => grid_search(subproblem, inst.lo.clone(), inst.hi.clone()),
    }
}

fn subproblem_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let pairs = [
        Pair::Quadratic,
        Pair::Orthant,
        Pair::Shifted,
        Pair::Upper,
        Pair::Double,
        Pair::Entropy,
        Pair::FermiDirac,
        Pair::Simplex,
        Pair::TranslatedSimplex,
    ];
    let mut worst = 0.0f64;
    let mut worst_pair = Pair::Quadratic;
    let mut count = 0;
    for pair in pairs {
        for n in [1, 2] {
            for _ in 0..ORACLE_INSTANCES {
                let inst = draw_instance(pair, n, &mut rng);
                let out = bpgd_update(&inst.geom, &inst.region, &GridVector::new(inst.x.clone()), &inst.g, inst.tau)
                    .map_err(|e| format!("{pair:?} n={n}: {e}"))?;
                let dev = max_abs_diff(out.as_slice(), &oracle_argmin(&inst));
                if dev > worst {
                    worst = dev;
                    worst_pair = pair;
                }
                count += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ok_if(
        worst <= ORACLE_TOL && secs < ORACLE_SECONDS,
        format!("{count} instances, max deviation {worst:.2e} ({worst_pair:?}), {secs:.1} s"),
    )
}

// 2

fn fixed_point() -> Verdict {
    let mut details = Vec::new();
    let mut worst = 0.0f64;
    for e in [Experiment::Deconv, Experiment::Tomo] {
        let mut cfg = ExperimentConfig::defaults(e);
        cfg.lambda = f64::INFINITY;
        cfg.iters = FIXED_POINT_ITERS;
        let mut problem = build_problem(&cfg).map_err(|e| e.to_string())?;
        problem.x0 = problem.clean.clone();
        let sl = run_single_level(&problem, FIXED_POINT_ITERS).map_err(|e| e.to_string())?;
        let ml = run_multilevel(&problem, &cfg, &SolverOptions::default(), |_, _| {}).map_err(|e| e.to_string())?;
        let d = max_abs_diff(sl.x.as_slice(), problem.x0.as_slice()).max(max_abs_diff(ml.x.as_slice(), problem.x0.as_slice()));
        details.push(format!("{e} {d:.1e}"));
        worst = worst.max(d);
    }
    let design = |n: usize| Arc::new(Objective::d_design(&DenseMatrix::identity(n)).unwrap());
    let levels = vec![
        LevelSpec::with_default_step(design(15), GeometryKind::LogBarrier, FeasibleRegion::standard_simplex(15), 1, Some(TransferPair::line(15).unwrap()), Some(0.0)).unwrap(),
        LevelSpec::with_default_step(design(7), GeometryKind::LogBarrier, FeasibleRegion::standard_simplex(7), 3, None, Some(0.0)).unwrap(),
    ];
    let x0 = GridVector::filled(15, 1.0 / 15.0);
    let prox = BregmanProx::new(GeometrySpec::log_barrier(15), FeasibleRegion::standard_simplex(15)).unwrap();
    let (sl, _) = bpgd_run(levels[0].objective.as_ref(), &prox, &x0, levels[0].tau, FIXED_POINT_ITERS).map_err(|e| e.to_string())?;
    let (ml, _) = ml_bpgd_run(&levels, &TriggerParams::default(), &ArmijoParams::default(), &x0, FIXED_POINT_ITERS)
        .map_err(|e| e.to_string())?;
    let d = max_abs_diff(sl.as_slice(), x0.as_slice()).max(max_abs_diff(ml.as_slice(), x0.as_slice()));
    details.push(format!("ddesign {d:.1e}"));
    worst = worst.max(d);
    ok_if(worst <= FIXED_POINT_TOL, format!("max movement {}", details.join(", ")))
}

// 3, 4, 5, 7

fn sufficient_descent(runs: &Runs) -> Verdict {
    let mut pass = true;
    let mut details = Vec::new();
    for r in &runs.reports {
        for (name, t) in [("sl", &r.sl.trace), ("ml", &r.ml.trace)] {
            let d = &t.diagnostics;
            pass &= d.sufficient_descent_violations == 0 && d.smoothing_steps > 0;
            details.push(format!(
                "{}/{name} {} steps {} bad worst {:.1e}",
                r.experiment, d.smoothing_steps, d.sufficient_descent_violations, d.worst_sufficient_descent
            ));
        }
    }
    ok_if(pass, details.join("; "))
}

fn coherence(runs: &Runs) -> Verdict {
    let mut pass = true;
    let mut details = Vec::new();
    for r in &runs.reports {
        let d = &r.ml.trace.diagnostics;
        let mut recomputed = 0.0f64;
        for ev in d.events.iter().filter(|ev| ev.level == 1) {
            let fine = r.problem.levels[0].objective.as_ref();
            let coarse = r.problem.levels[1].objective.clone();
            let (_, g) = fine.eval_grad(&ev.parent_point).map_err(|e| e.to_string())?;
            let target = ev.transfer.restrict(g.as_slice()).map_err(|e| e.to_string())?;
            let model = build_coarse_model(coarse, target.as_slice(), ev.anchor.clone()).map_err(|e| e.to_string())?;
            let (_, gm) = model.eval_grad(&ev.anchor).map_err(|e| e.to_string())?;
            recomputed = recomputed.max(max_abs_diff(gm.as_slice(), target.as_slice()) / g.norm_inf());
        }
        pass &= d.coherence_checks > 0 && d.worst_coherence <= COHERENCE_TOL && recomputed <= COHERENCE_TOL;
        details.push(format!(
            "{} {} builds, worst {:.1e} (recomputed {:.1e})",
            r.experiment, d.coherence_checks, d.worst_coherence, recomputed
        ));
    }
    ok_if(pass, details.join("; "))
}

fn descent_sign(runs: &Runs) -> Verdict {
    let mut applied = 0;
    let mut violations = 0;
    let mut details = Vec::new();
    for r in &runs.reports {
        let d = &r.ml.trace.diagnostics;
        applied += d.corrections_applied;
        violations += d.non_descent_skips;
        details.push(format!("{} {} applied {} non-descent", r.experiment, d.corrections_applied, d.non_descent_skips));
    }
    ok_if(violations == 0 && applied > 0, details.join("; "))
}

fn monotone(runs: &Runs) -> Verdict {
    let mut pass = true;
    let mut details = Vec::new();
    for r in &runs.reports {
        let t = &r.ml.trace;
        let worst = t
            .records
            .windows(2)
            .map(|w| (w[1].fval - w[0].fval) / w[0].fval.abs().max(1.0))
            .fold(f64::NEG_INFINITY, f64::max);
        pass &= t.is_monotone(MONOTONE_TOL) && t.diagnostics.monotonicity_violations == 0;
        details.push(format!("{} {} iters, max relative rise {worst:.1e}", r.experiment, t.records.len() - 1));
    }
    ok_if(pass, details.join("; "))
}

// 6

fn sample_coarse_point(region: &FeasibleRegion, anchor: &[f64], rng: &mut ChaCha20Rng) -> Vec<f64> {
    match region {
        FeasibleRegion::Box { lower, upper } => lower
            .iter()
            .zip(upper)
            .zip(anchor)
            .map(|((&l, &u), &a)| {
                let s: f64 = match rng.gen_range(0..10) {
                    0 => 0.0,
                    1 => 1.0,
                    _ => rng.gen_range(0.0..1.0),
                };
                if u.is_finite() {
                    l + s * (u - l)
                } else {
                    l + 4.0 * s * (a - l)
                }
            })
            .collect(),
        FeasibleRegion::TranslatedSimplex { lower, total } => {
            let free = total - lower.iter().sum::<f64>();
            let mut e: Vec<f64> = (0..lower.len()).map(|_| -rng.gen_range(f64::MIN_POSITIVE..1.0f64).ln()).collect();
            if rng.gen_range(0..10) == 0 {
                let k = rng.gen_range(0..e.len());
                e.iter_mut().enumerate().for_each(|(i, v)| *v = if i == k { 1.0 } else { 0.0 });
            }
            let s: f64 = e.iter().sum();
            lower.iter().zip(&e).map(|(l, v)| l + free * v / s).collect()
        }
    }
}

fn prolonged_slack(ev: &CoarseEvent, region: &FeasibleRegion, rng: &mut ChaCha20Rng) -> Result<(f64, f64), String> {
    let w = sample_coarse_point(region, ev.anchor.as_slice(), rng);
    let d: Vec<f64> = w.iter().zip(ev.anchor.iter()).map(|(w, a)| w - a).collect();
    let z = ev.parent_point.axpy(1.0, ev.transfer.prolong(&d).map_err(|e| e.to_string())?.as_slice());
    let mass = match &ev.parent_region {
        FeasibleRegion::TranslatedSimplex { total, .. } => (z.sum() - total).abs() / total.abs().max(1.0),
        FeasibleRegion::Box { .. } => 0.0,
    };
    Ok((ev.parent_region.slack(z.as_slice()), mass))
}

fn feasibility(runs: &Runs) -> Verdict {
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let mut pass = true;
    let mut details = Vec::new();
    for r in &runs.reports {
        let events = &r.ml.trace.diagnostics.events;
        for level in 1..r.problem.levels.len() {
            let at_level: Vec<&CoarseEvent> = events.iter().filter(|e| e.level == level).collect();
            if at_level.is_empty() {
                pass = false;
                details.push(format!("{} level {level}: no coarse builds", r.experiment));
                continue;
            }
            let (mut slack, mut mass) = (f64::INFINITY, 0.0f64);
            for i in 0..FEASIBLE_SAMPLES {
                let ev = at_level[i % at_level.len()];
                for region in [&ev.raw_region, &ev.region] {
                    let (s, m) = prolonged_slack(ev, region, &mut rng)?;
                    slack = slack.min(s);
                    mass = mass.max(m);
                }
            }
            pass &= slack >= SLACK_TOL && mass <= MASS_TOL;
            details.push(format!("{} level {level}: min slack {slack:.1e} mass {mass:.1e}", r.experiment));
        }
    }
    ok_if(pass, details.join("; "))
}

// 8

/// Largest relative error of a fourth-order central difference along random
/// directions. The step stays well inside the positive part of the domain.
fn fd_error(model: &dyn Model, x: &GridVector, rng: &mut ChaCha20Rng) -> Result<f64, String> {
    let (_, g) = model.eval_grad(x).map_err(|e| e.to_string())?;
    let smallest = x.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    let h = 1e-4 * x.norm_inf().max(1e-3).min(1e3 * smallest);
    let at = |t: f64, dir: &[f64]| model.value(x.axpy(t, dir).as_slice()).map_err(|e| e.to_string());
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let dir: Vec<f64> = (0..x.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fd = (8.0 * (at(h, &dir)? - at(-h, &dir)?) - (at(2.0 * h, &dir)? - at(-2.0 * h, &dir)?)) / (12.0 * h);
        let exact = g.dot(&dir);
        worst = worst.max((fd - exact).abs() / exact.abs().max(1e-12));
    }
    Ok(worst)
}

fn interior_point(e: Experiment, n: usize, rng: &mut ChaCha20Rng) -> GridVector {
    match e {
        Experiment::Ddesign => {
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.8)).collect();
            let s: f64 = raw.iter().sum();
            GridVector::new(raw.iter().map(|v| v / s).collect())
        }
        Experiment::Tomo => GridVector::new((0..n).map(|_| rng.gen_range(0.1..0.9)).collect()),
        _ => GridVector::new((0..n).map(|_| rng.gen_range(0.2..1.5)).collect()),
    }
}

fn small_design() -> Objective {
    let op = parallel_beam(7, &equidistant_angles(12), 7).unwrap();
    Objective::d_design_from_atoms(op.to_csr()).unwrap()
}

/// Pairs `(x, y)` whose componentwise log-ratio has a random spread, so the
/// sample covers near and far pairs alike.
fn sample_pair(e: Experiment, n: usize, rng: &mut ChaCha20Rng) -> (GridVector, GridVector) {
    let x = interior_point(e, n, rng);
    let spread = 10f64.powf(rng.gen_range(-2.0..0.0));
    let mut y: Vec<f64> = x.iter().map(|v| v * (spread * rng.gen_range(-1.0..1.0f64)).exp()).collect();
    match e {
        Experiment::Tomo => y.iter_mut().for_each(|v| *v = v.clamp(1e-3, 1.0 - 1e-3)),
        Experiment::Ddesign => {
            let s: f64 = y.iter().sum();
            y.iter_mut().for_each(|v| *v /= s);
        }
        _ => {}
    }
    (x, GridVector::new(y))
}

fn smoothness_pairs(e: Experiment, obj: &Objective, geom: &GeometrySpec, rng: &mut ChaCha20Rng) -> Result<f64, String> {
    let l = smoothness_constant(obj).map_err(|e| e.to_string())?;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..SMOOTH_PAIRS {
        let (x, y) = sample_pair(e, obj.dim(), rng);
        let fx = obj.value(x.as_slice()).map_err(|e| e.to_string())?;
        let (fy, gy) = obj.eval_grad(&y).map_err(|e| e.to_string())?;
        let lin = gy.dot(x.sub(y.as_slice()).as_slice());
        let df = fx - fy - lin;
        let dphi = divergence(geom, x.as_slice(), y.as_slice()).map_err(|e| e.to_string())?;
        let slack = SMOOTH_REL_TOL * dphi.abs() + ROUNDOFF * (fx.abs() + fy.abs() + lin.abs());
        if df < -slack {
            return Err(format!("{e}: D_f = {df:.3e} < 0"));
        }
        worst = worst.max((df - l * dphi - slack) / dphi.max(f64::MIN_POSITIVE));
    }
    Ok(worst)
}

fn certification(runs: &Runs) -> Verdict {
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let mut fd = 0.0f64;
    for r in &runs.reports {
        for level in &r.problem.levels {
            let x = interior_point(r.experiment, level.dim(), &mut rng);
            fd = fd.max(fd_error(level.objective.as_ref(), &x, &mut rng)?);
        }
        for ev in r.ml.trace.diagnostics.events.iter().take(3) {
            let base = r.problem.levels[ev.level].objective.clone();
            let target: Vec<f64> = (0..ev.anchor.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let model: CoarseModel = build_coarse_model(base, &target, ev.anchor.clone()).map_err(|e| e.to_string())?;
            fd = fd.max(fd_error(&model, &ev.anchor, &mut rng)?);
        }
    }
    let ls = Objective::least_squares(
        LinearOperator::Dense(DenseMatrix::from_rows(&[vec![1.0, 2.0, 0.5], vec![0.0, 1.0, -1.0]]).unwrap()),
        vec![0.3, -0.2],
    )
    .map_err(|e| e.to_string())?;
    fd = fd.max(fd_error(&ls, &GridVector::new(vec![0.4, -0.7, 1.1]), &mut rng)?);

    let mut smooth = Vec::new();
    let mut rel_over = f64::NEG_INFINITY;
    for r in runs.reports.iter().filter(|r| r.experiment != Experiment::Ddesign) {
        let fine = r.problem.fine();
        let geom = geometry_for(fine.geometry, &fine.region).map_err(|e| e.to_string())?;
        let w = smoothness_pairs(r.experiment, &fine.objective, &geom, &mut rng)?;
        rel_over = rel_over.max(w);
        smooth.push(format!("{} {w:.1e}", r.experiment));
    }
    let design = small_design();
    let w = smoothness_pairs(Experiment::Ddesign, &design, &GeometrySpec::log_barrier(design.dim()), &mut rng)?;
    rel_over = rel_over.max(w);
    smooth.push(format!("ddesign {w:.1e}"));

    let mut trace = 0.0f64;
    let dd = runs.reports.iter().find(|r| r.experiment == Experiment::Ddesign).expect("ddesign run");
    for obj in [dd.problem.fine().objective.as_ref(), &design] {
        let m = obj.design_rank().expect("design objective") as f64;
        for _ in 0..10 {
            let x = interior_point(Experiment::Ddesign, obj.dim(), &mut rng);
            let (_, g) = obj.eval_grad(&x).map_err(|e| e.to_string())?;
            trace = trace.max((-x.dot(g.as_slice()) - m).abs() / m);
        }
    }
    ok_if(
        fd <= FD_TOL && rel_over <= 0.0 && trace <= TRACE_TOL,
        format!(
            "fd {fd:.1e}; max (D_f - L D_phi)/D_phi over {SMOOTH_PAIRS} pairs: {}; trace {trace:.1e}",
            smooth.join(", ")
        ),
    )
}

// 9

fn transfers(runs: &Runs) -> Verdict {
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let mut pairs: Vec<TransferPair> = runs
        .reports
        .iter()
        .flat_map(|r| r.problem.levels.iter().filter_map(|l| l.transfer.clone()))
        .collect();
    for c in [1, 2, 5, 12] {
        pairs.push(TransferPair::line(2 * c + 1).unwrap());
        pairs.push(TransferPair::square(2 * c + 1).unwrap());
        pairs.push(TransferPair::rows(c + 1, 2 * c + 1).unwrap());
    }
    // The inner-product defect is measured relative to |Pw| |v|, its
    // Cauchy-Schwarz scale.
    let (mut adjoint, mut mass) = (0.0f64, 0.0f64);
    for t in &pairs {
        for j in 0..t.coarse_len() {
            let s: f64 = t.column(j).iter().map(|(_, v)| v).sum();
            if s != 1.0 {
                return Err(format!("column {j} of a {}-to-{} transfer sums to {s}", t.fine_len(), t.coarse_len()));
            }
        }
        for _ in 0..100 {
            let w: Vec<f64> = (0..t.coarse_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..t.fine_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let pw = t.prolong(&w).map_err(|e| e.to_string())?;
            let rv = t.restrict(&v).map_err(|e| e.to_string())?;
            let lhs = pw.dot(&v);
            let rhs = rv.dot(&w);
            adjoint = adjoint.max((lhs - rhs).abs() / (pw.norm2() * GridVector::new(v).norm2()));
            let ws: f64 = w.iter().sum();
            mass = mass.max((pw.sum() - ws).abs() / ws.abs().max(1.0));
        }
    }
    ok_if(
        adjoint <= ADJOINT_TOL && mass <= ADJOINT_TOL,
        format!("{} transfers, adjoint {adjoint:.1e}, mass {mass:.1e}, column sums exact", pairs.len()),
    )
}

// 10

fn speedup(runs: &Runs) -> Verdict {
    let deconv = &runs.reports[0];
    let matched = deconv.ml_iterations_to_match(60);
    let d = runs.reports[2].design.as_ref().expect("design summary");
    let pass_ml = matched.is_some_and(|k| k <= MATCH_ITERS);
    let pass_design = d.top_k_residual <= d.equidistant_residual;
    ok_if(
        pass_ml && pass_design,
        format!(
            "deconv ML reaches SL@60 at iteration {} (limit {MATCH_ITERS}); ddesign top-{} residual {:.4} vs equidistant {:.4}",
            matched.map_or("never".into(), |k| k.to_string()),
            d.top_k.len(),
            d.top_k_residual,
            d.equidistant_residual
        ),
    )
}

// 11

fn sublinear(runs: &Runs) -> Verdict {
    let cfg = &runs.configs[0];
    let problem = build_problem(cfg).map_err(|e| e.to_string())?;
    let fine = problem.fine();
    let prox = problem.fine_prox().map_err(|e| e.to_string())?;
    let (x_ref, trace) =
        bpgd_run(fine.objective.as_ref(), &prox, &problem.x0, fine.tau, REFERENCE_ITERS).map_err(|e| e.to_string())?;
    let f_ref = fine.objective.value(x_ref.as_slice()).map_err(|e| e.to_string())?;
    let l = smoothness_constant(&fine.objective).map_err(|e| e.to_string())?;
    let bound = l * divergence(prox.geometry(), x_ref.as_slice(), problem.x0.as_slice()).map_err(|e| e.to_string())?;
    let ratio = trace.records[1..=SUBLINEAR_K]
        .iter()
        .map(|r| r.iter as f64 * (r.fval - f_ref) / bound)
        .fold(f64::NEG_INFINITY, f64::max);
    ok_if(ratio <= SUBLINEAR_FACTOR, format!("max k (f_k - f_ref) / (L D) = {ratio:.4} for k <= {SUBLINEAR_K}"))
}

// 12

fn determinism(runs: &Runs) -> Verdict {
    let mut checked = 0;
    for (cfg, first) in runs.configs.iter().zip(&runs.reports) {
        let again = run_experiment_with(cfg, &SolverOptions::default()).map_err(|e| e.to_string())?;
        for (a, b) in [(&first.sl.trace, &again.sl.trace), (&first.ml.trace, &again.ml.trace)] {
            let ca = trace_csv(a, first.f_ref).map_err(|e| e.to_string())?;
            let cb = trace_csv(b, again.f_ref).map_err(|e| e.to_string())?;
            if strip_timing(&ca) != strip_timing(&cb) {
                return Err(format!("{} traces differ", cfg.experiment));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} trace pairs byte-identical without cpu_seconds"))
}

fn main() -> ExitCode {
    let started = Instant::now();
    let runs = Runs::new();
    let criteria: Vec<(u8, &str, bool, Box<dyn Fn(&Runs) -> Verdict>)> = vec![
        (1, "subproblem oracle equivalence", true, Box::new(|_| subproblem_oracle())),
        (2, "fixed points", true, Box::new(|_| fixed_point())),
        (3, "sufficient descent", true, Box::new(sufficient_descent)),
        (4, "first-order coherence", true, Box::new(coherence)),
        (5, "descent direction sign", true, Box::new(descent_sign)),
        (6, "feasibility consistency", true, Box::new(feasibility)),
        (7, "monotone convergence", true, Box::new(monotone)),
        (8, "gradient and smoothness", true, Box::new(certification)),
        (9, "transfer operators", true, Box::new(transfers)),
        (10, "comparative speedup (soft)", false, Box::new(speedup)),
        (11, "sublinear diagnostic", true, Box::new(sublinear)),
        (12, "end-to-end determinism", true, Box::new(determinism)),
    ];
    let mut gating_failures = 0;
    for (id, name, gating, check) in criteria {
        let t = Instant::now();
        let (passed, detail) = match check(&runs) {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        if !passed && gating {
            gating_failures += 1;
        }
        let status = if passed { "PASS" } else { "FAIL" };
        println!("{status} {id:>2} {name:<30} [{:.1} s] {detail}", t.elapsed().as_secs_f64());
    }
    println!("acceptance finished in {:.1} s, {gating_failures} gating failures", started.elapsed().as_secs_f64());
    if gating_failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
