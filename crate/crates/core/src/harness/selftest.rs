//! Quick invariant suite behind the `selftest` subcommand.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::config::{Experiment, ExperimentConfig};
use super::data::{crater_phantom, poisson_degrade};
use super::experiments::{build_problem, run_multilevel};
use super::image_io::{decode_pgm, encode_pgm};
use crate::geometry::{divergence, BregmanProx, FeasibleRegion, GeometryKind, GeometrySpec};
use crate::linops::{blur_operator, TransferPair};
use crate::objectives::Model;
use crate::solver::SolverOptions;
use crate::vector::{dot, GridVector};

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for SelftestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{} {:<28} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        Ok(())
    }
}

fn check(report: &mut SelftestReport, name: &'static str, result: Result<String, String>) {
    let (passed, detail) = match result {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    report.checks.push(Check { name, passed, detail });
}

pub fn selftest(seed: u64) -> SelftestReport {
    let mut report = SelftestReport::default();
    check(&mut report, "bpgd update vs grid search", update_oracle(seed));
    check(&mut report, "transfer identities", transfer_identities(seed));
    check(&mut report, "gradients vs differences", gradient_check(seed));
    check(&mut report, "io roundtrips", io_roundtrips(seed));
    for experiment in [Experiment::Deconv, Experiment::Tomo, Experiment::Ddesign] {
        let name = match experiment {
            Experiment::Deconv => "deconv invariants",
            Experiment::Tomo => "tomo invariants",
            _ => "ddesign invariants",
        };
        check(&mut report, name, run_invariants(experiment, seed));
    }
    report
}

/// Grid search of `tau g (u - x) + D(u, x)` on `(lo, hi)`, refined three
/// times around the best node; valid because the objective is convex.
fn grid_argmin(geom: &GeometrySpec, lo: f64, hi: f64, x: f64, g: f64, tau: f64) -> f64 {
    let steps = 2000;
    let (mut a, mut b) = (lo, hi);
    let mut best = x;
    for _ in 0..4 {
        let h = (b - a) / steps as f64;
        let mut value = f64::INFINITY;
        for i in 1..steps {
            let u = a + h * i as f64;
            if let Ok(d) = divergence(geom, &[u], &[x]) {
                let v = tau * g * (u - x) + d;
                if v < value {
                    value = v;
                    best = u;
                }
            }
        }
        a = (best - 2.0 * h).max(a);
        b = (best + 2.0 * h).min(b);
    }
    best
}

fn update_oracle(seed: u64) -> Result<String, String> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let kinds = [
        GeometryKind::ShiftedLogBarrier,
        GeometryKind::UpperLogBarrier,
        GeometryKind::DoubleLogBarrier,
        GeometryKind::NegEntropy,
        GeometryKind::FermiDirac,
    ];
    let mut worst = 0.0f64;
    for kind in kinds {
        for _ in 0..10 {
            let (l, u) = (0.0, 2.0);
            let geom = match kind {
                GeometryKind::ShiftedLogBarrier => GeometrySpec::shifted_log_barrier(vec![l]),
                GeometryKind::UpperLogBarrier => GeometrySpec::upper_log_barrier(vec![u]),
                GeometryKind::DoubleLogBarrier => GeometrySpec::double_log_barrier(vec![l], vec![u]),
                GeometryKind::NegEntropy => Ok(GeometrySpec::neg_entropy(1)),
                _ => GeometrySpec::fermi_dirac(vec![l], vec![u]),
            }
            .map_err(|e| e.to_string())?;
            let region = FeasibleRegion::new_box(geom.lower().to_vec(), geom.upper().to_vec()).map_err(|e| e.to_string())?;
            let prox = BregmanProx::new(geom.clone(), region).map_err(|e| e.to_string())?;
            let x = rng.gen_range(0.3..1.7);
            let g = rng.gen_range(-0.5..0.5);
            let out = prox.update(&GridVector::new(vec![x]), &[g], 1.0).map_err(|e| e.to_string())?;
            let hi = if kind.needs_upper() { u } else { 100.0 };
            let lo = if kind.needs_lower() { l } else { -100.0 };
            worst = worst.max((out[0] - grid_argmin(&geom, lo, hi, x, g, 1.0)).abs());
        }
    }
    if worst <= 1e-3 {
        Ok(format!("max deviation {worst:.2e}"))
    } else {
        Err(format!("max deviation {worst:.2e} > 1e-3"))
    }
}

fn transfer_identities(seed: u64) -> Result<String, String> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for t in [TransferPair::line(15), TransferPair::square(15), TransferPair::rows(4, 7)] {
        let t = t.map_err(|e| e.to_string())?;
        let w: Vec<f64> = (0..t.coarse_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..t.fine_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pw = t.prolong(&w).map_err(|e| e.to_string())?;
        let rv = t.restrict(&v).map_err(|e| e.to_string())?;
        worst = worst.max((dot(&pw, &v) - dot(&w, &rv)).abs());
        worst = worst.max((pw.sum() - w.iter().sum::<f64>()).abs());
        for j in 0..t.coarse_len() {
            let s: f64 = t.column(j).iter().map(|(_, v)| v).sum();
            if s != 1.0 {
                return Err(format!("column {j} sums to {s}"));
            }
        }
    }
    if worst <= 1e-12 {
        Ok(format!("max defect {worst:.2e}"))
    } else {
        Err(format!("max defect {worst:.2e} > 1e-12"))
    }
}

fn gradient_check(seed: u64) -> Result<String, String> {
    let mut worst = 0.0f64;
    for experiment in [Experiment::Deconv, Experiment::Tomo, Experiment::Ddesign] {
        let cfg = small_config(experiment, seed);
        let problem = build_problem(&cfg).map_err(|e| e.to_string())?;
        for level in &problem.levels {
            let model = level.objective.as_ref();
            let n = model.dim();
            let mut rng = ChaCha20Rng::seed_from_u64(seed ^ n as u64);
            let x: Vec<f64> = match experiment {
                Experiment::Ddesign => {
                    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
                    let s: f64 = raw.iter().sum();
                    raw.iter().map(|v| v / s).collect()
                }
                _ => (0..n).map(|_| rng.gen_range(0.2..0.8)).collect(),
            };
            let x = GridVector::new(x);
            let (_, g) = model.eval_grad(&x).map_err(|e| e.to_string())?;
            let dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let h = 1e-6 * x.norm_inf();
            let plus = model.value(&x.axpy(h, &dir)).map_err(|e| e.to_string())?;
            let minus = model.value(&x.axpy(-h, &dir)).map_err(|e| e.to_string())?;
            let fd = (plus - minus) / (2.0 * h);
            let exact = dot(&g, &dir);
            worst = worst.max((fd - exact).abs() / exact.abs().max(1e-8));
        }
    }
    if worst <= 1e-5 {
        Ok(format!("max relative error {worst:.2e}"))
    } else {
        Err(format!("max relative error {worst:.2e} > 1e-5"))
    }
}

fn io_roundtrips(seed: u64) -> Result<String, String> {
    let x = crater_phantom(15);
    let once = decode_pgm(&encode_pgm(&x).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let twice = decode_pgm(&encode_pgm(&once).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    if once != twice {
        return Err("save/load is not idempotent".into());
    }
    let op = blur_operator(15, 5, 1.0).map_err(|e| e.to_string())?;
    let a = poisson_degrade(&x, &op, 50.0, seed).map_err(|e| e.to_string())?;
    let b = poisson_degrade(&x, &op, 50.0, seed).map_err(|e| e.to_string())?;
    if a != b {
        return Err("seeded degradation is not reproducible".into());
    }
    Ok("pgm idempotent, sampling reproducible".into())
}

/// Reduced-size configuration used by the selftest.
pub fn small_config(experiment: Experiment, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::defaults(experiment);
    cfg.seed = seed;
    match experiment {
        Experiment::Deconv => {
            cfg.grid_exponent = 5;
            cfg.set_levels(3);
            cfg.psf_dim = 5;
            cfg.iters = 8;
        }
        Experiment::Tomo => {
            cfg.grid_exponent = 5;
            cfg.angles = vec![16, 8];
            cfg.detectors = vec![31, 15];
            cfg.iters = 8;
        }
        _ => {
            cfg.angles = vec![24, 24];
            cfg.iters = 6;
        }
    }
    cfg.sl_iters = cfg.iters;
    cfg
}

fn run_invariants(experiment: Experiment, seed: u64) -> Result<String, String> {
    let cfg = small_config(experiment, seed);
    let problem = build_problem(&cfg).map_err(|e| e.to_string())?;
    let out = run_multilevel(&problem, &cfg, &SolverOptions::default(), |_, _| {}).map_err(|e| e.to_string())?;
    let d = &out.trace.diagnostics;
    let mut failures = Vec::new();
    if d.sufficient_descent_violations > 0 {
        failures.push(format!("{} sufficient-descent violations", d.sufficient_descent_violations));
    }
    if d.worst_coherence > 1e-10 {
        failures.push(format!("coherence error {:.2e}", d.worst_coherence));
    }
    if d.infeasible_iterates > 0 {
        failures.push(format!("{} infeasible iterates", d.infeasible_iterates));
    }
    if !out.trace.is_monotone(1e-10) {
        failures.push("objective increased".into());
    }
    if failures.is_empty() {
        let triggered = out.trace.records.iter().filter(|r| r.any_trigger()).count();
        Ok(format!("{} iterations, {triggered} with coarse corrections", cfg.iters))
    } else {
        Err(failures.join("; "))
    }
}
