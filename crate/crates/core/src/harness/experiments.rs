//! Drivers for the deconvolution, tomography and design experiments.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use log::info;

use super::config::{Experiment, ExperimentConfig};
use super::data::{crater_phantom, disc_phantom, poisson_degrade, sprite_phantom};
use super::image_io::{load_pgm, save_pgm};
use super::trace_io::{best_value, emit_plot_data, fmt17, write_trace_csv};
use super::HarnessError;
use crate::error::Error;
use crate::geometry::{BregmanProx, FeasibleRegion, GeometryKind};
use crate::hierarchy::{geometry_for, LevelSpec};
use crate::linops::{blur_operator, equidistant_angles, parallel_beam, LinearOperator, TransferPair};
use crate::objectives::Objective;
use crate::solver::{bpgd_run, ml_bpgd_run_with, SolverOptions, SolverTrace};
use crate::vector::{GridShape, GridVector};

/// Everything a solver run needs, plus the ground truth.
#[derive(Debug, Clone)]
pub struct Problem {
    pub experiment: Experiment,
    pub levels: Vec<LevelSpec>,
    pub x0: GridVector,
    pub clean: GridVector,
    /// Measured data on the finest level.
    pub data: Vec<f64>,
}

impl Problem {
    pub fn fine(&self) -> &LevelSpec {
        &self.levels[0]
    }

    /// Fine-level prox for single-level runs.
    pub fn fine_prox(&self) -> Result<BregmanProx, Error> {
        let fine = self.fine();
        BregmanProx::new(geometry_for(fine.geometry, &fine.region)?, fine.region.clone())
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub x: GridVector,
    pub trace: SolverTrace,
}

/// Angle selection and least-squares comparison of the design experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSummary {
    /// Summed weight per angle of the multilevel solution.
    pub angle_weights: Vec<f64>,
    pub top_k: Vec<usize>,
    pub equidistant: Vec<usize>,
    pub top_k_residual: f64,
    pub equidistant_residual: f64,
    pub top_k_recon: GridVector,
    pub equidistant_recon: GridVector,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub experiment: Experiment,
    pub problem: Problem,
    pub sl: RunOutcome,
    pub ml: RunOutcome,
    /// Best objective value over both runs.
    pub f_ref: f64,
    /// Relative image error `||x^k - clean|| / ||clean||` of the multilevel run.
    pub ml_image_error: Vec<f64>,
    pub snapshots: Vec<(usize, GridVector)>,
    pub design: Option<DesignSummary>,
}

impl ExperimentReport {
    /// First multilevel iteration whose value is at most the single-level
    /// value after `sl_iter` iterations.
    pub fn ml_iterations_to_match(&self, sl_iter: usize) -> Option<usize> {
        let target = self.sl.trace.records.get(sl_iter)?.fval;
        self.ml.trace.records.iter().find(|r| r.fval <= target).map(|r| r.iter)
    }
}

fn phantom(cfg: &ExperimentConfig, side: usize, fallback: fn(usize) -> GridVector) -> Result<GridVector, HarnessError> {
    match &cfg.input {
        None => Ok(fallback(side)),
        Some(path) => {
            let img = load_pgm(path)?;
            if img.shape() != GridShape::Square(side) {
                return Err(HarnessError::Config(format!(
                    "{} is {:?}, expected a {side} x {side} image",
                    path.display(),
                    img.shape()
                )));
            }
            Ok(img)
        }
    }
}

/// Restricts a flat image through the square transfer chain.
fn restrict_image(x: &[f64], side: usize) -> Result<GridVector, Error> {
    TransferPair::square(side)?.restrict(x)
}

pub fn build_deconv(cfg: &ExperimentConfig) -> Result<Problem, HarnessError> {
    let sides = cfg.sides();
    let clean = phantom(cfg, sides[0], crater_phantom)?;
    let blur0 = blur_operator(sides[0], cfg.psf_dim, cfg.psf_sigma)?;
    let b = poisson_degrade(&clean, &blur0, cfg.lambda, cfg.seed)?;
    let mut levels = Vec::with_capacity(cfg.levels);
    let mut data = GridVector::square(b.clone(), sides[0]);
    for (l, &side) in sides.iter().enumerate() {
        if l > 0 {
            data = restrict_image(&data, sides[l - 1])?;
        }
        let op = if l == 0 { blur0.clone() } else { blur_operator(side, cfg.psf_dim, cfg.psf_sigma)? };
        let objective = Arc::new(Objective::kl_data_model(op, data.to_vec())?);
        let transfer = (l + 1 < sides.len()).then(|| TransferPair::square(side)).transpose()?;
        levels.push(LevelSpec::with_default_step(
            objective,
            GeometryKind::ShiftedLogBarrier,
            FeasibleRegion::orthant(side * side),
            cfg.smoothing[l],
            transfer,
            Some(0.0),
        )?);
    }
    let x0 = GridVector::square(vec![0.5; sides[0] * sides[0]], sides[0]);
    Ok(Problem { experiment: Experiment::Deconv, levels, x0, clean, data: b })
}

pub fn build_tomo(cfg: &ExperimentConfig) -> Result<Problem, HarnessError> {
    let sides = cfg.sides();
    let clean = phantom(cfg, sides[0], disc_phantom)?;
    let proj0 = parallel_beam(sides[0], &equidistant_angles(cfg.angles[0]), cfg.detectors[0])?;
    let b = poisson_degrade(&clean, &proj0, cfg.lambda, cfg.seed)?;
    let mut levels = Vec::with_capacity(cfg.levels);
    let mut sino = b.clone();
    for (l, &side) in sides.iter().enumerate() {
        let op = if l == 0 {
            proj0.clone()
        } else {
            let stride = cfg.angles[l - 1] / cfg.angles[l];
            let fine_det = cfg.detectors[l - 1];
            let line = TransferPair::line(fine_det)?;
            let scale = side as f64 / sides[l - 1] as f64;
            let mut coarse = Vec::with_capacity(cfg.angles[l] * cfg.detectors[l]);
            for a in 0..cfg.angles[l] {
                let row = &sino[a * stride * fine_det..(a * stride + 1) * fine_det];
                coarse.extend(line.restrict(row)?.iter().map(|v| v * scale));
            }
            sino = coarse;
            parallel_beam(side, &equidistant_angles(cfg.angles[l]), cfg.detectors[l])?
        };
        let (op, kept) = op.drop_zero_rows();
        let data: Vec<f64> = kept.iter().map(|&i| sino[i]).collect();
        let objective = Arc::new(Objective::kl_model_data(op, data)?);
        let transfer = (l + 1 < sides.len()).then(|| TransferPair::square(side)).transpose()?;
        let n = side * side;
        levels.push(LevelSpec::with_default_step(
            objective,
            GeometryKind::FermiDirac,
            FeasibleRegion::unit_box(n),
            cfg.smoothing[l],
            transfer,
            Some(0.0),
        )?);
    }
    let x0 = GridVector::square(vec![0.5; sides[0] * sides[0]], sides[0]);
    Ok(Problem { experiment: Experiment::Tomo, levels, x0, clean, data: b })
}

pub fn build_ddesign(cfg: &ExperimentConfig) -> Result<Problem, HarnessError> {
    let sides = cfg.sides();
    let clean = phantom(cfg, sides[0], sprite_phantom)?;
    let mut levels = Vec::with_capacity(cfg.levels);
    for (l, &side) in sides.iter().enumerate() {
        let angles = cfg.angles[l];
        let det = cfg.detectors[l];
        let rays = angles * det;
        if rays < side * side {
            return Err(Error::Rank(format!("level {l}: {rays} rays for {} pixels", side * side)).into());
        }
        let atoms = parallel_beam(side, &equidistant_angles(angles), det)?.to_csr();
        let objective = Arc::new(Objective::d_design_from_atoms(atoms)?);
        let transfer = (l + 1 < sides.len()).then(|| TransferPair::rows(angles, det)).transpose()?;
        let region = if l == 0 {
            FeasibleRegion::standard_simplex(rays)
        } else {
            FeasibleRegion::simplex(vec![0.0; rays], 1.0)?
        };
        levels.push(LevelSpec::with_default_step(
            objective,
            GeometryKind::LogBarrier,
            region,
            cfg.smoothing[l],
            transfer,
            Some(0.0),
        )?);
    }
    let n = cfg.angles[0] * cfg.detectors[0];
    let x0 = GridVector::matrix(vec![1.0 / n as f64; n], cfg.angles[0], cfg.detectors[0]);
    // the Fisher matrix must be positive definite at the start
    crate::objectives::Model::eval_grad(levels[0].objective.as_ref(), &x0)
        .map_err(|e| HarnessError::Solver(Error::Rank(format!("initial design: {e}"))))?;
    Ok(Problem { experiment: Experiment::Ddesign, levels, x0, clean, data: vec![] })
}

pub fn build_problem(cfg: &ExperimentConfig) -> Result<Problem, HarnessError> {
    match cfg.experiment {
        Experiment::Deconv => build_deconv(cfg),
        Experiment::Tomo => build_tomo(cfg),
        Experiment::Ddesign => build_ddesign(cfg),
        Experiment::Selftest => Err(HarnessError::Config("selftest has no problem instance".into())),
    }
}

pub fn run_single_level(problem: &Problem, iters: usize) -> Result<RunOutcome, HarnessError> {
    let fine = problem.fine();
    let (x, trace) = bpgd_run(fine.objective.as_ref(), &problem.fine_prox()?, &problem.x0, fine.tau, iters)?;
    Ok(RunOutcome { x, trace })
}

/// Multilevel run; `observe` sees every iterate.
pub fn run_multilevel(
    problem: &Problem,
    cfg: &ExperimentConfig,
    options: &SolverOptions,
    observe: impl FnMut(usize, &GridVector),
) -> Result<RunOutcome, HarnessError> {
    let (x, trace) =
        ml_bpgd_run_with(&problem.levels, &cfg.trigger, &cfg.armijo, &problem.x0, cfg.iters, options, observe)?;
    Ok(RunOutcome { x, trace })
}

/// Runs SL and ML on the configured experiment without writing files.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    run_experiment_with(cfg, &SolverOptions::default())
}

pub fn run_experiment_with(cfg: &ExperimentConfig, options: &SolverOptions) -> Result<ExperimentReport, HarnessError> {
    cfg.validate()?;
    let problem = build_problem(cfg)?;
    let clean_norm = problem.clean.norm2().max(f64::MIN_POSITIVE);
    let image_side = problem.clean.len();
    let mut ml_image_error = Vec::new();
    let mut snapshots = Vec::new();
    let sl = run_single_level(&problem, cfg.sl_iters)?;
    let ml = run_multilevel(&problem, cfg, options, |k, x| {
        if x.len() == image_side {
            ml_image_error.push(x.sub(&problem.clean).norm2() / clean_norm);
            if k % cfg.snapshot_every == 0 {
                snapshots.push((k, x.clone()));
            }
        }
    })?;
    let f_ref = best_value(&[&sl.trace, &ml.trace]);
    let design = if cfg.experiment == Experiment::Ddesign { Some(design_comparison(cfg, &problem, &ml.x)?) } else { None };
    info!(
        "{}: SL {} -> {}, ML {} -> {}",
        cfg.experiment,
        fmt17(sl.trace.records[0].fval),
        fmt17(sl.trace.last_value().unwrap_or(f64::NAN)),
        fmt17(ml.trace.records[0].fval),
        fmt17(ml.trace.last_value().unwrap_or(f64::NAN))
    );
    Ok(ExperimentReport { experiment: cfg.experiment, problem, sl, ml, f_ref, ml_image_error, snapshots, design })
}

/// Indices of the `k` largest weights, ties broken by the lower index,
/// returned in ascending order.
pub fn top_k_angles(weights: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..weights.len()).collect();
    idx.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let mut top: Vec<usize> = idx.into_iter().take(k).collect();
    top.sort_unstable();
    top
}

pub fn equidistant_subset(count: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| i * count / k).collect()
}

/// Least squares `min ||A x - b||^2 / 2` by gradient descent from zero with
/// step `1 / ||A||_2^2`.
pub fn least_squares_gd(op: &LinearOperator, b: &[f64], iters: usize) -> Result<GridVector, Error> {
    let n = op.cols();
    let lipschitz = spectral_norm_sq(op)?;
    let step = 1.0 / lipschitz.max(f64::MIN_POSITIVE);
    let mut x = vec![0.0; n];
    for _ in 0..iters {
        let r: Vec<f64> = op.apply(&x)?.iter().zip(b).map(|(a, b)| a - b).collect();
        let g = op.apply_adjoint(&r)?;
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= step * gi;
        }
    }
    Ok(GridVector::new(x))
}

/// Upper estimate of `||A||_2^2` by power iteration on `A^T A`, padded by 1%.
fn spectral_norm_sq(op: &LinearOperator) -> Result<f64, Error> {
    let n = op.cols();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut est = 0.0;
    for _ in 0..100 {
        let w = op.apply_adjoint(&op.apply(&v)?)?;
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        est = norm;
        v = w.iter().map(|x| x / norm).collect();
    }
    Ok(1.01 * est)
}

fn design_comparison(cfg: &ExperimentConfig, problem: &Problem, weights: &[f64]) -> Result<DesignSummary, HarnessError> {
    let angles = cfg.angles[0];
    let det = cfg.detectors[0];
    let side = cfg.fine_side();
    let angle_weights: Vec<f64> = weights.chunks(det).map(|c| c.iter().sum()).collect();
    let k = cfg.top_k();
    let top_k = top_k_angles(&angle_weights, k);
    let equidistant = equidistant_subset(angles, k);
    let all = equidistant_angles(angles);
    let reconstruct = |subset: &[usize]| -> Result<(GridVector, f64), HarnessError> {
        let theta: Vec<f64> = subset.iter().map(|&i| all[i]).collect();
        let op = parallel_beam(side, &theta, det)?;
        let b = if cfg.lambda.is_finite() {
            poisson_degrade(&problem.clean, &op, cfg.lambda, cfg.seed)?
        } else {
            op.apply(&problem.clean)?
        };
        let x = least_squares_gd(&op, &b, cfg.lsq_iters)?.with_shape(GridShape::Square(side));
        let residual = x.sub(&problem.clean).norm2();
        Ok((x, residual))
    };
    let (top_k_recon, top_k_residual) = reconstruct(&top_k)?;
    let (equidistant_recon, equidistant_residual) = reconstruct(&equidistant)?;
    Ok(DesignSummary {
        angle_weights,
        top_k,
        equidistant,
        top_k_residual,
        equidistant_residual,
        top_k_recon,
        equidistant_recon,
    })
}

/// Writes traces, plot data, images and a summary into `dir`.
pub fn write_artifacts(report: &ExperimentReport, cfg: &ExperimentConfig, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))?;
    write_trace_csv(&report.sl.trace, report.f_ref, &dir.join("sl_trace.csv"))?;
    write_trace_csv(&report.ml.trace, report.f_ref, &dir.join("ml_trace.csv"))?;
    emit_plot_data(&report.sl.trace, &report.ml.trace, report.f_ref, &dir.join("plot.csv"))?;
    save_pgm(&report.problem.clean, &dir.join("clean.pgm"))?;
    match report.experiment {
        Experiment::Ddesign => {
            let d = report.design.as_ref().expect("design summary");
            save_pgm(&d.top_k_recon, &dir.join("recon_top_k.pgm"))?;
            save_pgm(&d.equidistant_recon, &dir.join("recon_equidistant.pgm"))?;
            let mut w = String::from("angle,sl_weight,ml_weight\n");
            let det = cfg.detectors[0];
            for (a, ml) in d.angle_weights.iter().enumerate() {
                let sl: f64 = report.sl.x[a * det..(a + 1) * det].iter().sum();
                let _ = writeln!(w, "{a},{},{}", fmt17(sl), fmt17(*ml));
            }
            write_text(&dir.join("angle_weights.csv"), &w)?;
        }
        _ => {
            let fine_side = cfg.fine_side();
            let shaped = |x: &GridVector| x.clone().with_shape(GridShape::Square(fine_side));
            save_pgm(&shaped(&report.sl.x), &dir.join("sl_recon.pgm"))?;
            save_pgm(&shaped(&report.ml.x), &dir.join("ml_recon.pgm"))?;
            if report.experiment == Experiment::Deconv {
                let data = GridVector::square(report.problem.data.clone(), fine_side);
                save_pgm(&data, &dir.join("data.pgm"))?;
            }
            for (k, x) in &report.snapshots {
                save_pgm(&shaped(x), &dir.join(format!("ml_iter_{k:04}.pgm")))?;
            }
        }
    }
    write_text(&dir.join("summary.txt"), &summary(report, cfg))
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

/// `key = value` summary of a run.
pub fn summary(report: &ExperimentReport, cfg: &ExperimentConfig) -> String {
    let d = &report.ml.trace.diagnostics;
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("experiment", cfg.experiment.to_string());
    kv("seed", cfg.seed.to_string());
    kv("levels", cfg.levels.to_string());
    kv("f_ref", fmt17(report.f_ref));
    kv("sl_final", fmt17(report.sl.trace.last_value().unwrap_or(f64::NAN)));
    kv("ml_final", fmt17(report.ml.trace.last_value().unwrap_or(f64::NAN)));
    if let Some(k) = report.ml_iterations_to_match(cfg.sl_iters) {
        kv("ml_iters_to_sl_final", k.to_string());
    }
    let triggered = report.ml.trace.records.iter().filter(|r| r.any_trigger()).count();
    kv("ml_triggered_iters", triggered.to_string());
    kv("corrections_applied", d.corrections_applied.to_string());
    kv("non_descent_skips", d.non_descent_skips.to_string());
    kv("zero_moves", d.zero_moves.to_string());
    kv("line_search_failures", d.line_search_failures.to_string());
    kv("worst_coherence", fmt17(d.worst_coherence));
    kv("sufficient_descent_violations", d.sufficient_descent_violations.to_string());
    kv("monotonicity_violations", d.monotonicity_violations.to_string());
    if let Some(design) = &report.design {
        kv("top_k", format!("{:?}", design.top_k));
        kv("equidistant", format!("{:?}", design.equidistant));
        kv("top_k_residual", fmt17(design.top_k_residual));
        kv("equidistant_residual", fmt17(design.equidistant_residual));
    }
    s
}

pub fn run_deconv(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    run_and_write(cfg, Experiment::Deconv)
}

pub fn run_tomo(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    run_and_write(cfg, Experiment::Tomo)
}

pub fn run_ddesign(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    run_and_write(cfg, Experiment::Ddesign)
}

fn run_and_write(cfg: &ExperimentConfig, expected: Experiment) -> Result<ExperimentReport, HarnessError> {
    if cfg.experiment != expected {
        return Err(HarnessError::Config(format!("config is for {}, not {expected}", cfg.experiment)));
    }
    let report = run_experiment(cfg)?;
    write_artifacts(&report, cfg, &cfg.output)?;
    Ok(report)
}
