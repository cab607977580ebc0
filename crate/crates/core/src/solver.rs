//! Single-level BPGD, Armijo backtracking and the multilevel V-cycle.

use std::sync::Arc;
use std::time::Instant;

use log::{debug, warn};

use crate::error::{check_len, Error, Result};
use crate::geometry::{divergence, BregmanProx, FeasibleRegion};
use crate::hierarchy::{adapt_region, geometry_for, trigger, validate_levels, LevelSpec, TriggerParams};
use crate::linops::TransferPair;
use crate::objectives::{build_coarse_model, CoarseModel, Model, Objective};
use crate::vector::{dot, max_abs_diff, norm_inf, GridVector};

/// Backtracking constants: `alpha = beta^m * alpha_bar`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmijoParams {
    pub sigma: f64,
    pub beta: f64,
    pub alpha_bar: f64,
}

impl Default for ArmijoParams {
    fn default() -> Self {
        Self { sigma: 1e-4, beta: 0.5, alpha_bar: 1.0 }
    }
}

impl ArmijoParams {
    pub fn validate(&self) -> Result<()> {
        let open = |v: f64| v > 0.0 && v < 1.0;
        if !open(self.sigma) || !open(self.beta) || !(self.alpha_bar > 0.0 && self.alpha_bar <= 1.0) {
            return Err(Error::Arg(format!("invalid Armijo parameters {self:?}")));
        }
        Ok(())
    }
}

pub const MAX_BACKTRACKS: usize = 60;

/// Result of an accepted line search.
#[derive(Debug, Clone)]
pub struct LineSearch {
    pub alpha: f64,
    pub x: GridVector,
    pub value: f64,
    pub backtracks: usize,
}

/// Armijo backtracking along `d` from `x`, rejecting trial points that are
/// not strictly inside `region` or outside the model's domain.
pub fn armijo(
    model: &dyn Model,
    x: &GridVector,
    d: &[f64],
    region: &FeasibleRegion,
    p: &ArmijoParams,
) -> Result<LineSearch> {
    let (fx, g) = model.eval_grad(x)?;
    armijo_from(model, x, fx, dot(&g, d), d, region, p)
}

fn armijo_from(
    model: &dyn Model,
    x: &GridVector,
    fx: f64,
    slope: f64,
    d: &[f64],
    region: &FeasibleRegion,
    p: &ArmijoParams,
) -> Result<LineSearch> {
    check_len("search direction", x.len(), d.len())?;
    if !(slope < 0.0) {
        return Err(Error::Descent(slope));
    }
    let mut alpha = p.alpha_bar;
    for backtracks in 0..=MAX_BACKTRACKS {
        let trial = x.axpy(alpha, d);
        if region.contains_strictly(&trial) {
            if let Ok(value) = model.value(&trial) {
                if value <= fx + p.sigma * alpha * slope {
                    return Ok(LineSearch { alpha, x: trial, value, backtracks });
                }
            }
        }
        alpha *= p.beta;
    }
    Err(Error::LineSearch(MAX_BACKTRACKS))
}

/// One row of a solver trace.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub fval: f64,
    /// Cumulative wall-clock seconds since the run started.
    pub seconds: f64,
    /// Deepest level visited in this iteration (0 = fine step only).
    pub deepest_level: usize,
    /// `triggered[l]`: level `l` handed over to level `l + 1`.
    pub triggered: Vec<bool>,
    /// Accepted line-search step per level; `None` without a correction.
    pub alpha: Vec<Option<f64>>,
    /// `D_phi(x^k, x^{k+1})` on the finest level.
    pub step_divergence: f64,
}

impl IterationRecord {
    pub fn any_trigger(&self) -> bool {
        self.triggered.iter().any(|t| *t)
    }

    pub fn alpha_finest(&self) -> Option<f64> {
        self.alpha.first().copied().flatten()
    }
}

/// A coarse-level construction kept for offline feasibility checks.
#[derive(Debug, Clone)]
pub struct CoarseEvent {
    pub iter: usize,
    /// Index of the coarse level that was built.
    pub level: usize,
    pub parent_region: FeasibleRegion,
    pub parent_point: GridVector,
    pub anchor: GridVector,
    pub raw_region: FeasibleRegion,
    pub region: FeasibleRegion,
    pub transfer: TransferPair,
}

/// Invariant monitors accumulated during a run.
#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    pub smoothing_steps: usize,
    pub sufficient_descent_violations: usize,
    /// Largest `f(x+) - f(x) + D(x, x+)/tau`, relative to `max(1, |f(x)|)`.
    pub worst_sufficient_descent: f64,
    pub coherence_checks: usize,
    /// Largest `||grad psi(anchor) - R grad parent||_inf / ||grad parent||_inf`.
    pub worst_coherence: f64,
    pub corrections_applied: usize,
    /// Corrections dropped because the prolonged step did not point downhill.
    pub non_descent_skips: usize,
    /// Corrections dropped because coarse smoothing did not move.
    pub zero_moves: usize,
    pub line_search_failures: usize,
    pub coarse_build_failures: usize,
    /// Message of the most recent coarse-level failure.
    pub last_failure: Option<String>,
    pub infeasible_iterates: usize,
    pub monotonicity_violations: usize,
    pub events: Vec<CoarseEvent>,
}

impl Diagnostics {
    fn check_descent(&mut self, before: f64, after: f64, dist: f64, tau: f64) {
        self.smoothing_steps += 1;
        let excess = after - before + dist / tau;
        let rel = excess / before.abs().max(1.0);
        if rel > self.worst_sufficient_descent {
            self.worst_sufficient_descent = rel;
        }
        if after > before - dist / tau + 1e-10 * before.abs() {
            self.sufficient_descent_violations += 1;
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SolverTrace {
    pub records: Vec<IterationRecord>,
    pub diagnostics: Diagnostics,
}

impl SolverTrace {
    pub fn values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.fval).collect()
    }

    pub fn last_value(&self) -> Option<f64> {
        self.records.last().map(|r| r.fval)
    }

    /// True iff objective values never increase by more than `rel_tol`
    /// (relative).
    pub fn is_monotone(&self, rel_tol: f64) -> bool {
        self.records.windows(2).all(|w| w[1].fval <= w[0].fval + rel_tol * w[0].fval.abs().max(1e-300))
    }
}

/// Run-time knobs that do not change the iterates.
#[derive(Debug, Clone, Default)]
pub struct SolverOptions {
    /// Keep up to this many coarse constructions in the diagnostics.
    pub capture_events: usize,
}

/// Objective of one level inside a V-cycle.
enum LevelModel {
    Fine(Arc<Objective>),
    Coarse(CoarseModel),
}

impl LevelModel {
    fn as_model(&self) -> &dyn Model {
        match self {
            LevelModel::Fine(f) => f.as_ref(),
            LevelModel::Coarse(c) => c,
        }
    }
}

/// Iterate of one level: point, value and gradient are kept consistent.
struct LevelState {
    model: LevelModel,
    prox: BregmanProx,
    tau: f64,
    x: GridVector,
    fx: f64,
    grad: GridVector,
    anchor: Option<GridVector>,
}

impl LevelState {
    /// One BPGD step, with the sufficient-descent monitor.
    fn smooth(&mut self, diag: &mut Diagnostics) -> Result<f64> {
        let next = self.prox.update(&self.x, &self.grad, self.tau)?;
        let (f_next, g_next) = self.model.as_model().eval_grad(&next)?;
        let dist = divergence(self.prox.geometry(), &self.x, &next)?;
        diag.check_descent(self.fx, f_next, dist, self.tau);
        if !self.prox.region().contains_strictly(&next) {
            diag.infeasible_iterates += 1;
        }
        self.x = next;
        self.fx = f_next;
        self.grad = g_next;
        Ok(dist)
    }
}

/// Plain BPGD: `x^{k+1} = argmin_u tau <grad f(x^k), u - x^k> + D(u, x^k)`.
pub fn bpgd_run(
    model: &dyn Model,
    prox: &BregmanProx,
    x0: &GridVector,
    tau: f64,
    iters: usize,
) -> Result<(GridVector, SolverTrace)> {
    let start = Instant::now();
    let mut trace = SolverTrace::default();
    let (fx, grad) = model.eval_grad(x0)?;
    let mut x = x0.clone();
    let (mut fx, mut grad) = (fx, grad);
    trace.records.push(record(0, fx, &start, 0, 0, 0.0));
    for k in 1..=iters {
        let next = prox.update(&x, &grad, tau)?;
        let (f_next, g_next) = model.eval_grad(&next)?;
        let dist = divergence(prox.geometry(), &x, &next)?;
        trace.diagnostics.check_descent(fx, f_next, dist, tau);
        if f_next > fx + 1e-10 * fx.abs() {
            trace.diagnostics.monotonicity_violations += 1;
        }
        x = next;
        fx = f_next;
        grad = g_next;
        trace.records.push(record(k, fx, &start, 0, 0, dist));
    }
    Ok((x, trace))
}

fn record(iter: usize, fval: f64, start: &Instant, deepest: usize, links: usize, dist: f64) -> IterationRecord {
    IterationRecord {
        iter,
        fval,
        seconds: start.elapsed().as_secs_f64(),
        deepest_level: deepest,
        triggered: vec![false; links],
        alpha: vec![None; links],
        step_divergence: dist,
    }
}

/// Multilevel BPGD with V-cycles.
///
/// Each outer iteration descends while the trigger fires (restrict, adapt
/// the region, build a first-order coherent coarse model, smooth), then
/// ascends applying the prolonged correction with an Armijo search and one
/// post-smoothing step per level. Without a trigger the iteration is a
/// single fine BPGD step.
pub fn ml_bpgd_run(
    levels: &[LevelSpec],
    trigger_params: &TriggerParams,
    armijo_params: &ArmijoParams,
    x0: &GridVector,
    iters: usize,
) -> Result<(GridVector, SolverTrace)> {
    ml_bpgd_run_with(levels, trigger_params, armijo_params, x0, iters, &SolverOptions::default(), |_, _| {})
}

/// [`ml_bpgd_run`] with options and a per-iteration observer, called with
/// `(k, x^k)` for `k = 0..=iters`.
pub fn ml_bpgd_run_with(
    levels: &[LevelSpec],
    trigger_params: &TriggerParams,
    armijo_params: &ArmijoParams,
    x0: &GridVector,
    iters: usize,
    options: &SolverOptions,
    mut observe: impl FnMut(usize, &GridVector),
) -> Result<(GridVector, SolverTrace)> {
    validate_levels(levels)?;
    armijo_params.validate()?;
    let start = Instant::now();
    let links = levels.len() - 1;
    let fine = &levels[0];
    let fine_prox = BregmanProx::new(geometry_for(fine.geometry, &fine.region)?, fine.region.clone())?;
    if !fine_prox.region().contains_strictly(x0) {
        return Err(Error::Domain("initial point is not strictly feasible".into()));
    }
    let fine_model = LevelModel::Fine(fine.objective.clone());
    let (fx, grad) = fine_model.as_model().eval_grad(x0)?;
    let mut top = LevelState {
        model: fine_model,
        prox: fine_prox,
        tau: fine.tau,
        x: x0.clone(),
        fx,
        grad,
        anchor: None,
    };
    let mut trace = SolverTrace::default();
    let mut last_trigger: Vec<Option<GridVector>> = vec![None; links];
    trace.records.push(record(0, top.fx, &start, 0, links, 0.0));
    observe(0, &top.x);

    for k in 1..=iters {
        let x_before = top.x.clone();
        let f_before = top.fx;
        let mut rec = record(k, 0.0, &start, 0, links, 0.0);

        // descend
        let mut stack = vec![top];
        for l in 0..links {
            let transfer = levels[l].transfer.expect("validated transfer");
            let parent = stack.last().expect("nonempty stack");
            let target = transfer.restrict(&parent.grad)?;
            let dist = match &last_trigger[l] {
                None => f64::INFINITY,
                Some(prev) => divergence(parent.prox.geometry(), &parent.x, prev).unwrap_or(f64::INFINITY),
            };
            if !trigger(&parent.grad, &target, dist, trigger_params) {
                break;
            }
            let child = match build_level(&levels[l + 1], l + 1, parent, &transfer, target, k, options, &mut trace.diagnostics) {
                Ok(child) => child,
                Err(err) => {
                    warn!("iteration {k}: coarse level {} not built: {err}", l + 1);
                    trace.diagnostics.coarse_build_failures += 1;
                    trace.diagnostics.last_failure = Some(err.to_string());
                    break;
                }
            };
            last_trigger[l] = Some(parent.x.clone());
            rec.triggered[l] = true;
            let mut child = child;
            let mut smoothed = Ok(());
            for _ in 0..levels[l + 1].smoothing_iters {
                if let Err(err) = child.smooth(&mut trace.diagnostics) {
                    smoothed = Err(err);
                    break;
                }
            }
            if let Err(err) = smoothed {
                warn!("iteration {k}: smoothing failed on level {}: {err}", l + 1);
                trace.diagnostics.coarse_build_failures += 1;
                trace.diagnostics.last_failure = Some(err.to_string());
                break;
            }
            stack.push(child);
        }
        rec.deepest_level = stack.len() - 1;

        // ascend
        while stack.len() > 1 {
            let child = stack.pop().expect("child level");
            let l = stack.len() - 1;
            let transfer = levels[l].transfer.expect("validated transfer");
            let anchor = child.anchor.as_ref().expect("coarse anchor");
            let parent = stack.last_mut().expect("parent level");
            let movement = child.x.sub(anchor);
            if norm_inf(&movement) == 0.0 {
                trace.diagnostics.zero_moves += 1;
                rec.triggered[l] = false;
            } else {
                let d = transfer.prolong(&movement)?;
                let slope = dot(&parent.grad, &d);
                if !(slope < 0.0) {
                    debug!("iteration {k}: level {l} correction is not a descent direction ({slope:e})");
                    trace.diagnostics.non_descent_skips += 1;
                    rec.triggered[l] = false;
                } else {
                    match armijo_from(parent.model.as_model(), &parent.x, parent.fx, slope, &d, parent.prox.region(), armijo_params) {
                        Ok(ls) => {
                            trace.diagnostics.corrections_applied += 1;
                            rec.alpha[l] = Some(ls.alpha);
                            let (fz, gz) = parent.model.as_model().eval_grad(&ls.x)?;
                            parent.x = ls.x;
                            parent.fx = fz;
                            parent.grad = gz;
                        }
                        Err(err) => {
                            debug!("iteration {k}: level {l} line search failed: {err}");
                            trace.diagnostics.line_search_failures += 1;
                        }
                    }
                }
            }
            parent.smooth(&mut trace.diagnostics)?;
        }
        top = stack.pop().expect("fine level");
        if rec.deepest_level == 0 {
            top.smooth(&mut trace.diagnostics)?;
        }

        if top.fx > f_before + 1e-10 * f_before.abs() {
            trace.diagnostics.monotonicity_violations += 1;
        }
        rec.fval = top.fx;
        rec.step_divergence = divergence(top.prox.geometry(), &x_before, &top.x).unwrap_or(f64::NAN);
        rec.seconds = start.elapsed().as_secs_f64();
        trace.records.push(rec);
        observe(k, &top.x);
    }
    Ok((top.x, trace))
}

fn build_level(
    level: &LevelSpec,
    index: usize,
    parent: &LevelState,
    transfer: &TransferPair,
    target: GridVector,
    iter: usize,
    options: &SolverOptions,
    diag: &mut Diagnostics,
) -> Result<LevelState> {
    let anchor = transfer.restrict(&parent.x)?;
    let adapted = adapt_region(parent.prox.region(), &parent.x, &anchor, transfer, level.domain_floor)?;
    let geometry = geometry_for(level.geometry, &adapted.clipped)?;
    let prox = BregmanProx::new(geometry, adapted.clipped.clone())?;
    let model = build_coarse_model(level.objective.clone(), &target, anchor.clone())?;
    let (fx, grad) = model.eval_grad(&anchor)?;
    diag.coherence_checks += 1;
    let scale = norm_inf(&parent.grad).max(f64::MIN_POSITIVE);
    let coherence = max_abs_diff(&grad, &target) / scale;
    diag.worst_coherence = diag.worst_coherence.max(coherence);
    if diag.events.len() < options.capture_events {
        diag.events.push(CoarseEvent {
            iter,
            level: index,
            parent_region: parent.prox.region().clone(),
            parent_point: parent.x.clone(),
            anchor: anchor.clone(),
            raw_region: adapted.raw,
            region: adapted.clipped,
            transfer: *transfer,
        });
    }
    Ok(LevelState {
        model: LevelModel::Coarse(model),
        prox,
        tau: level.tau,
        x: anchor.clone(),
        fx,
        grad,
        anchor: Some(anchor),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GeometrySpec;
    use crate::linops::LinearOperator;
    use crate::objectives::smoothness_constant;
    use approx::assert_abs_diff_eq;

    struct Parabola;

    impl Model for Parabola {
        fn dim(&self) -> usize {
            1
        }
        fn value(&self, x: &[f64]) -> Result<f64> {
            Ok(x[0] * x[0])
        }
        fn eval_grad(&self, x: &GridVector) -> Result<(f64, GridVector)> {
            Ok((x[0] * x[0], GridVector::new(vec![2.0 * x[0]])))
        }
    }

    #[test]
    fn armijo_accepts_full_newton_step() {
        let x = GridVector::new(vec![3.0]);
        let ls = armijo(&Parabola, &x, &[-3.0], &FeasibleRegion::unbounded(1), &ArmijoParams::default()).unwrap();
        assert_eq!(ls.alpha, 1.0);
        assert_eq!(ls.x[0], 0.0);
    }

    #[test]
    fn armijo_backtracks_for_interiority() {
        let x = GridVector::new(vec![3.0]);
        let region = FeasibleRegion::new_box(vec![1.0], vec![f64::INFINITY]).unwrap();
        let ls = armijo(&Parabola, &x, &[-3.0], &region, &ArmijoParams::default()).unwrap();
        assert!(ls.alpha < 1.0);
        assert!(ls.x[0] > 1.0);
    }

    #[test]
    fn armijo_rejects_ascent() {
        let x = GridVector::new(vec![3.0]);
        let err = armijo(&Parabola, &x, &[1.0], &FeasibleRegion::unbounded(1), &ArmijoParams::default()).unwrap_err();
        assert!(matches!(err, Error::Descent(_)));
    }

    fn toy() -> (Objective, BregmanProx, f64) {
        let obj = Objective::kl_data_model(LinearOperator::Identity(2), vec![1.0, 2.0]).unwrap();
        let prox = BregmanProx::new(GeometrySpec::log_barrier(2), FeasibleRegion::orthant(2)).unwrap();
        let tau = 1.0 / smoothness_constant(&obj).unwrap();
        (obj, prox, tau)
    }

    #[test]
    fn bpgd_toy_descends() {
        let (obj, prox, tau) = toy();
        let (_, trace) = bpgd_run(&obj, &prox, &GridVector::new(vec![2.0, 1.0]), tau, 25).unwrap();
        let v = trace.values();
        assert!(v.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(trace.diagnostics.sufficient_descent_violations, 0);
    }

    #[test]
    fn single_step_is_one_update() {
        let (obj, prox, tau) = toy();
        let x0 = GridVector::new(vec![2.0, 1.0]);
        let (x, _) = bpgd_run(&obj, &prox, &x0, tau, 1).unwrap();
        let (_, g) = obj.eval_grad(&x0).unwrap();
        assert_eq!(x, prox.update(&x0, &g, tau).unwrap());
    }

    #[test]
    fn bpgd_fixed_point() {
        let (obj, prox, tau) = toy();
        let x0 = GridVector::new(vec![1.0, 2.0]);
        let (x, _) = bpgd_run(&obj, &prox, &x0, tau, 10).unwrap();
        assert!(max_abs_diff(&x, &x0) <= 1e-8);
    }

    #[test]
    fn single_level_ml_matches_bpgd() {
        let (obj, prox, tau) = toy();
        let level = LevelSpec {
            objective: Arc::new(obj.clone()),
            geometry: crate::geometry::GeometryKind::LogBarrier,
            region: FeasibleRegion::orthant(2),
            tau,
            smoothing_iters: 1,
            transfer: None,
            domain_floor: Some(0.0),
        };
        let x0 = GridVector::new(vec![2.0, 1.0]);
        let (x_ml, t_ml) = ml_bpgd_run(&[level], &TriggerParams::default(), &ArmijoParams::default(), &x0, 7).unwrap();
        let (x_sl, t_sl) = bpgd_run(&obj, &prox, &x0, tau, 7).unwrap();
        assert_eq!(x_ml, x_sl);
        for (a, b) in t_ml.values().iter().zip(t_sl.values()) {
            assert_abs_diff_eq!(*a, b, epsilon = 0.0);
        }
    }
}
