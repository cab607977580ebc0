//! Bregman reference functions and the exact BPGD subproblem solvers.
//!
//! Every reference function here is separable, `phi(x) = sum_i phi_i(x_i)`,
//! with the scalar pieces shifted by per-component bounds. The subproblem
//!
//! ```text
//! argmin_{u in C}  tau <g, u - x> + D_phi(u, x)
//! ```
//!
//! is solved in closed form whenever the mirror map is explicitly
//! invertible, by a scalar quadratic (with a bisection fallback) for the
//! doubly bounded log-barrier, and by a one-dimensional dual root for the
//! translated simplex.

use std::fmt;

use crate::error::{check_len, Error, Result};
use crate::vector::GridVector;

/// Reference function family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GeometryKind {
    /// `x^2 / 2` on the whole line.
    Quadratic,
    /// Burg entropy `-ln x` on the positive orthant (lower bound fixed at 0).
    LogBarrier,
    /// `-ln(x - l)` on `(l, inf)`.
    ShiftedLogBarrier,
    /// `-ln(u - x)` on `(-inf, u)`.
    UpperLogBarrier,
    /// `-ln(x - l) - ln(u - x)` on `(l, u)`.
    DoubleLogBarrier,
    /// `(x - l) ln(x - l) - (x - l)` on `[l, inf)`, usually with `l = 0`.
    NegEntropy,
    /// `(x - l) ln(x - l) + (u - x) ln(u - x)` on `[l, u]`.
    FermiDirac,
}

impl GeometryKind {
    pub const ALL: [GeometryKind; 7] = [
        GeometryKind::Quadratic,
        GeometryKind::LogBarrier,
        GeometryKind::ShiftedLogBarrier,
        GeometryKind::UpperLogBarrier,
        GeometryKind::DoubleLogBarrier,
        GeometryKind::NegEntropy,
        GeometryKind::FermiDirac,
    ];

    /// Whether the family has a finite lower bound.
    pub fn needs_lower(self) -> bool {
        !matches!(self, GeometryKind::Quadratic | GeometryKind::UpperLogBarrier)
    }

    /// Whether the family has a finite upper bound.
    pub fn needs_upper(self) -> bool {
        matches!(
            self,
            GeometryKind::UpperLogBarrier | GeometryKind::DoubleLogBarrier | GeometryKind::FermiDirac
        )
    }

    /// Entropies are finite on the closed boundary; barriers are not.
    fn closed_domain(self) -> bool {
        matches!(self, GeometryKind::NegEntropy | GeometryKind::FermiDirac)
    }
}

impl fmt::Display for GeometryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// A reference function together with its per-component shifts.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometrySpec {
    kind: GeometryKind,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl GeometrySpec {
    /// Validates the bound layout required by `kind`. Bounds that a kind
    /// does not use must be `-inf` / `+inf`.
    pub fn new(kind: GeometryKind, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_len("geometry upper bound", lower.len(), upper.len())?;
        for (i, (&l, &u)) in lower.iter().zip(&upper).enumerate() {
            if l.is_nan() || u.is_nan() {
                return Err(Error::Arg(format!("NaN bound at component {i}")));
            }
            let lower_ok = if kind.needs_lower() { l.is_finite() } else { l == f64::NEG_INFINITY };
            let upper_ok = if kind.needs_upper() { u.is_finite() } else { u == f64::INFINITY };
            if !lower_ok || !upper_ok {
                return Err(Error::Arg(format!(
                    "{kind} has invalid bounds ({l}, {u}) at component {i}"
                )));
            }
            if kind == GeometryKind::LogBarrier && l != 0.0 {
                return Err(Error::Arg(format!(
                    "LogBarrier has lower bound 0, got {l} at component {i}; use ShiftedLogBarrier"
                )));
            }
            if l.is_finite() && u.is_finite() && l >= u {
                return Err(Error::Arg(format!("empty interval ({l}, {u}) at component {i}")));
            }
        }
        Ok(Self { kind, lower, upper })
    }

    pub fn quadratic(n: usize) -> Self {
        Self::new(GeometryKind::Quadratic, vec![f64::NEG_INFINITY; n], vec![f64::INFINITY; n])
            .expect("valid quadratic geometry")
    }

    pub fn log_barrier(n: usize) -> Self {
        Self::new(GeometryKind::LogBarrier, vec![0.0; n], vec![f64::INFINITY; n])
            .expect("valid log-barrier geometry")
    }

    pub fn shifted_log_barrier(lower: Vec<f64>) -> Result<Self> {
        let n = lower.len();
        Self::new(GeometryKind::ShiftedLogBarrier, lower, vec![f64::INFINITY; n])
    }

    pub fn upper_log_barrier(upper: Vec<f64>) -> Result<Self> {
        let n = upper.len();
        Self::new(GeometryKind::UpperLogBarrier, vec![f64::NEG_INFINITY; n], upper)
    }

    pub fn double_log_barrier(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        Self::new(GeometryKind::DoubleLogBarrier, lower, upper)
    }

    pub fn neg_entropy(n: usize) -> Self {
        Self::new(GeometryKind::NegEntropy, vec![0.0; n], vec![f64::INFINITY; n])
            .expect("valid entropy geometry")
    }

    pub fn fermi_dirac(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        Self::new(GeometryKind::FermiDirac, lower, upper)
    }

    pub fn kind(&self) -> GeometryKind {
        self.kind
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// True iff `t` lies strictly inside the domain of component `i`.
    fn interior_at(&self, i: usize, t: f64) -> bool {
        t.is_finite() && t > self.lower[i] && t < self.upper[i]
    }

    fn closure_at(&self, i: usize, t: f64) -> bool {
        if self.kind.closed_domain() {
            t.is_finite() && t >= self.lower[i] && t <= self.upper[i]
        } else {
            self.interior_at(i, t)
        }
    }

    pub fn is_interior(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().enumerate().all(|(i, &t)| self.interior_at(i, t))
    }

    fn require_interior(&self, x: &[f64]) -> Result<()> {
        check_len("geometry point", self.dim(), x.len())?;
        match x.iter().enumerate().find(|&(i, &t)| !self.interior_at(i, t)) {
            None => Ok(()),
            Some((i, &t)) => Err(Error::Domain(format!(
                "component {i} = {t} not inside ({}, {}) of {}",
                self.lower[i], self.upper[i], self.kind
            ))),
        }
    }

    fn scalar_value(&self, i: usize, t: f64) -> f64 {
        let (l, u) = (self.lower[i], self.upper[i]);
        match self.kind {
            GeometryKind::Quadratic => 0.5 * t * t,
            GeometryKind::LogBarrier | GeometryKind::ShiftedLogBarrier => -(t - l).ln(),
            GeometryKind::UpperLogBarrier => -(u - t).ln(),
            GeometryKind::DoubleLogBarrier => -(t - l).ln() - (u - t).ln(),
            GeometryKind::NegEntropy => xlogx(t - l) - (t - l),
            GeometryKind::FermiDirac => xlogx(t - l) + xlogx(u - t),
        }
    }

    fn scalar_grad(&self, i: usize, t: f64) -> f64 {
        let (l, u) = (self.lower[i], self.upper[i]);
        match self.kind {
            GeometryKind::Quadratic => t,
            GeometryKind::LogBarrier | GeometryKind::ShiftedLogBarrier => -1.0 / (t - l),
            GeometryKind::UpperLogBarrier => 1.0 / (u - t),
            GeometryKind::DoubleLogBarrier => -1.0 / (t - l) + 1.0 / (u - t),
            GeometryKind::NegEntropy => (t - l).ln(),
            GeometryKind::FermiDirac => ((t - l) / (u - t)).ln(),
        }
    }

    /// Per-component Bregman divergence `D(t, s)` with `t` in the closure
    /// and `s` interior, written in cancellation-free form.
    fn scalar_divergence(&self, i: usize, t: f64, s: f64) -> f64 {
        let (l, u) = (self.lower[i], self.upper[i]);
        let d = match self.kind {
            GeometryKind::Quadratic => 0.5 * (t - s) * (t - s),
            GeometryKind::LogBarrier | GeometryKind::ShiftedLogBarrier => burg_div(t - l, s - l),
            GeometryKind::UpperLogBarrier => burg_div(u - t, u - s),
            GeometryKind::DoubleLogBarrier => burg_div(t - l, s - l) + burg_div(u - t, u - s),
            GeometryKind::NegEntropy => kl_div(t - l, s - l),
            GeometryKind::FermiDirac => kl_div(t - l, s - l) + kl_div(u - t, u - s),
        };
        d.max(0.0)
    }
}

/// `t ln t` with `0 ln 0 = 0`.
pub(crate) fn xlogx(t: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t * t.ln()
    }
}

/// `p/q - ln(p/q) - 1`
fn burg_div(p: f64, q: f64) -> f64 {
    let e = (p - q) / q;
    e - e.ln_1p()
}

/// `p ln(p/q) - p + q`, with `p = 0` allowed.
fn kl_div(p: f64, q: f64) -> f64 {
    if p == 0.0 {
        return q;
    }
    let e = (p - q) / q;
    q * ((1.0 + e) * e.ln_1p() - e)
}

/// Value and gradient of the reference function at an interior point.
pub fn ref_eval(geom: &GeometrySpec, x: &GridVector) -> Result<(f64, GridVector)> {
    geom.require_interior(x)?;
    let value = x.iter().enumerate().map(|(i, &t)| geom.scalar_value(i, t)).sum();
    let grad = x
        .iter()
        .enumerate()
        .map(|(i, &t)| geom.scalar_grad(i, t))
        .collect::<GridVector>()
        .with_shape(x.shape());
    Ok((value, grad))
}

/// `D_phi(x, y) = phi(x) - phi(y) - <grad phi(y), x - y>`.
///
/// `x` may touch the closed boundary for the entropies; `y` must be interior.
pub fn divergence(geom: &GeometrySpec, x: &[f64], y: &[f64]) -> Result<f64> {
    geom.require_interior(y)?;
    check_len("divergence first argument", geom.dim(), x.len())?;
    let mut total = 0.0;
    for (i, (&t, &s)) in x.iter().zip(y).enumerate() {
        if !geom.closure_at(i, t) {
            return Err(Error::Domain(format!(
                "component {i} = {t} outside the domain of {}",
                geom.kind
            )));
        }
        total += geom.scalar_divergence(i, t, s);
    }
    Ok(total)
}

/// Constraint set of a BPGD subproblem.
#[derive(Debug, Clone, PartialEq)]
pub enum FeasibleRegion {
    /// `[lower, upper]`, entries may be infinite.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// `{x : <1, x> = total, x >= lower}`.
    TranslatedSimplex { lower: Vec<f64>, total: f64 },
}

/// Relative tolerance on the simplex equality used by the interior test.
pub const SIMPLEX_SUM_TOL: f64 = 1e-9;

impl FeasibleRegion {
    pub fn new_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_len("box upper bound", lower.len(), upper.len())?;
        if let Some(i) = lower.iter().zip(&upper).position(|(l, u)| !(l <= u)) {
            return Err(Error::Arg(format!(
                "box bounds out of order at {i}: {} > {}",
                lower[i], upper[i]
            )));
        }
        Ok(FeasibleRegion::Box { lower, upper })
    }

    pub fn unbounded(n: usize) -> Self {
        FeasibleRegion::Box { lower: vec![f64::NEG_INFINITY; n], upper: vec![f64::INFINITY; n] }
    }

    pub fn orthant(n: usize) -> Self {
        FeasibleRegion::Box { lower: vec![0.0; n], upper: vec![f64::INFINITY; n] }
    }

    pub fn unit_box(n: usize) -> Self {
        FeasibleRegion::Box { lower: vec![0.0; n], upper: vec![1.0; n] }
    }

    pub fn simplex(lower: Vec<f64>, total: f64) -> Result<Self> {
        if lower.iter().any(|l| !l.is_finite()) {
            return Err(Error::Arg("simplex lower bounds must be finite".into()));
        }
        let floor: f64 = lower.iter().sum();
        if !(total > floor) {
            return Err(Error::Infeasible(format!(
                "simplex total {total} does not exceed <1, l> = {floor}"
            )));
        }
        Ok(FeasibleRegion::TranslatedSimplex { lower, total })
    }

    pub fn standard_simplex(n: usize) -> Self {
        FeasibleRegion::TranslatedSimplex { lower: vec![0.0; n], total: 1.0 }
    }

    pub fn dim(&self) -> usize {
        match self {
            FeasibleRegion::Box { lower, .. } | FeasibleRegion::TranslatedSimplex { lower, .. } => {
                lower.len()
            }
        }
    }

    pub fn lower(&self) -> &[f64] {
        match self {
            FeasibleRegion::Box { lower, .. } | FeasibleRegion::TranslatedSimplex { lower, .. } => {
                lower
            }
        }
    }

    /// Upper bounds; `+inf` for the simplex.
    pub fn upper(&self) -> Vec<f64> {
        match self {
            FeasibleRegion::Box { upper, .. } => upper.clone(),
            FeasibleRegion::TranslatedSimplex { lower, .. } => vec![f64::INFINITY; lower.len()],
        }
    }

    /// Strict (relative) interior membership.
    pub fn contains_strictly(&self, x: &[f64]) -> bool {
        if x.len() != self.dim() || x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match self {
            FeasibleRegion::Box { lower, upper } => {
                x.iter().zip(lower.iter().zip(upper)).all(|(&t, (&l, &u))| t > l && t < u)
            }
            FeasibleRegion::TranslatedSimplex { lower, total } => {
                let sum: f64 = x.iter().sum();
                x.iter().zip(lower).all(|(&t, &l)| t > l)
                    && (sum - total).abs() <= SIMPLEX_SUM_TOL * total.abs().max(1.0)
            }
        }
    }

    /// Smallest signed distance to the inequality constraints; negative means
    /// violated.
    pub fn slack(&self, x: &[f64]) -> f64 {
        let lower_slack = x.iter().zip(self.lower()).map(|(t, l)| t - l);
        let slack = lower_slack.fold(f64::INFINITY, f64::min);
        match self {
            FeasibleRegion::Box { upper, .. } => {
                x.iter().zip(upper).map(|(t, u)| u - t).fold(slack, f64::min)
            }
            FeasibleRegion::TranslatedSimplex { .. } => slack,
        }
    }

    fn describe(&self) -> String {
        match self {
            FeasibleRegion::Box { .. } => "Box".into(),
            FeasibleRegion::TranslatedSimplex { .. } => "TranslatedSimplex".into(),
        }
    }
}

/// A validated (geometry, region) pair that can solve BPGD subproblems.
#[derive(Debug, Clone)]
pub struct BregmanProx {
    geometry: GeometrySpec,
    region: FeasibleRegion,
}

impl BregmanProx {
    /// Rejects pairings whose geometry domain does not coincide with the
    /// region (no silent substitution of one entropy for another).
    pub fn new(geometry: GeometrySpec, region: FeasibleRegion) -> Result<Self> {
        check_len("region", geometry.dim(), region.dim())?;
        let mismatch = || Error::Pairing {
            geometry: geometry.kind.to_string(),
            region: region.describe(),
        };
        match &region {
            FeasibleRegion::Box { lower, upper } => {
                if geometry.kind == GeometryKind::Quadratic {
                    if lower.iter().any(|l| l.is_finite()) || upper.iter().any(|u| u.is_finite()) {
                        return Err(mismatch());
                    }
                } else if geometry.lower.as_slice() != lower.as_slice()
                    || geometry.upper.as_slice() != upper.as_slice()
                {
                    return Err(mismatch());
                }
            }
            FeasibleRegion::TranslatedSimplex { lower, .. } => {
                let barrier = matches!(
                    geometry.kind,
                    GeometryKind::LogBarrier | GeometryKind::ShiftedLogBarrier
                );
                if !barrier || geometry.lower.as_slice() != lower.as_slice() {
                    return Err(mismatch());
                }
            }
        }
        Ok(Self { geometry, region })
    }

    pub fn geometry(&self) -> &GeometrySpec {
        &self.geometry
    }

    pub fn region(&self) -> &FeasibleRegion {
        &self.region
    }

    pub fn into_parts(self) -> (GeometrySpec, FeasibleRegion) {
        (self.geometry, self.region)
    }

    /// Unique minimizer of `tau <g, u - x> + D_phi(u, x)` over the region.
    pub fn update(&self, x: &GridVector, g: &[f64], tau: f64) -> Result<GridVector> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::Step(tau));
        }
        check_len("gradient", x.len(), g.len())?;
        self.geometry.require_interior(x)?;
        if !self.region.contains_strictly(x) {
            return Err(Error::Domain("iterate is not strictly inside the region".into()));
        }
        let geom = &self.geometry;
        let out: Vec<f64> = match &self.region {
            FeasibleRegion::TranslatedSimplex { lower, total } => {
                let c: Vec<f64> = x
                    .iter()
                    .zip(g)
                    .zip(lower)
                    .map(|((&t, &gi), &l)| tau * gi + 1.0 / (t - l))
                    .collect();
                let xi = simplex_dual_root(&c, lower, *total)?;
                c.iter().zip(lower).map(|(&ci, &l)| l + 1.0 / (ci + xi)).collect()
            }
            FeasibleRegion::Box { .. } => {
                let mut out = Vec::with_capacity(x.len());
                for (i, (&t, &gi)) in x.iter().zip(g).enumerate() {
                    out.push(self.box_update(i, t, tau * gi)?);
                }
                out
            }
        };
        let out = GridVector::new(out).with_shape(x.shape());
        if !geom.is_interior(&out) || !self.region.contains_strictly(&out) {
            return Err(Error::Domain(
                "BPGD update left the open domain (step too large for floating point)".into(),
            ));
        }
        Ok(out)
    }

    fn box_update(&self, i: usize, t: f64, step: f64) -> Result<f64> {
        let geom = &self.geometry;
        let (l, u) = (geom.lower[i], geom.upper[i]);
        let next = match geom.kind {
            GeometryKind::Quadratic => t - step,
            GeometryKind::NegEntropy => l + (t - l) * (-step).exp(),
            GeometryKind::LogBarrier | GeometryKind::ShiftedLogBarrier => {
                let denom = 1.0 / (t - l) + step;
                if !(denom > 0.0) {
                    return Err(Error::Unbounded(format!(
                        "component {i}: 1/(x-l) + tau g = {denom} <= 0"
                    )));
                }
                l + 1.0 / denom
            }
            GeometryKind::UpperLogBarrier => {
                let denom = 1.0 / (u - t) - step;
                if !(denom > 0.0) {
                    return Err(Error::Unbounded(format!(
                        "component {i}: 1/(u-x) - tau g = {denom} <= 0"
                    )));
                }
                u - 1.0 / denom
            }
            GeometryKind::FermiDirac => {
                // logistic form of l + (u - l) r / (1 + r), r = (x-l)/(u-x) e^{-step}
                let z = ((t - l) / (u - t)).ln() - step;
                let (lo_frac, hi_frac) = logistic_pair(z);
                if lo_frac <= hi_frac {
                    l + (u - l) * lo_frac
                } else {
                    u - (u - l) * hi_frac
                }
            }
            GeometryKind::DoubleLogBarrier => {
                let target = geom.scalar_grad(i, t) - step;
                double_barrier_inverse(target, l, u)?
            }
        };
        if !next.is_finite() {
            return Err(Error::Domain(format!("component {i}: non-finite update")));
        }
        Ok(next)
    }
}

/// `(sigmoid(z), sigmoid(-z))` computed without overflow.
fn logistic_pair(z: f64) -> (f64, f64) {
    if z >= 0.0 {
        let e = (-z).exp();
        (1.0 / (1.0 + e), e / (1.0 + e))
    } else {
        let e = z.exp();
        (e / (1.0 + e), 1.0 / (1.0 + e))
    }
}

/// Solves `-1/(t-l) + 1/(u-t) = y` for `t` in `(l, u)`.
///
/// With `t = c + s`, `c = (l+u)/2`, `h = (u-l)/2` the condition becomes
/// `y s^2 + 2 s - y h^2 = 0`, whose root inside `(-h, h)` is
/// `s = y h^2 / (1 + sqrt(1 + y^2 h^2))`.
fn double_barrier_inverse(y: f64, l: f64, u: f64) -> Result<f64> {
    let c = 0.5 * (l + u);
    let h = 0.5 * (u - l);
    let yh = y * h;
    let s = if yh.abs() > 1e150 {
        h * yh.signum() * (1.0 - 1.0 / yh.abs())
    } else {
        y * h * h / (1.0 + (1.0 + yh * yh).sqrt())
    };
    let t = c + s;
    if t > l && t < u {
        return Ok(t);
    }
    // fall back to bisection on the monotone residual
    let eps = 1e-14 * (u - l);
    let residual = |t: f64| -1.0 / (t - l) + 1.0 / (u - t) - y;
    let (mut lo, mut hi) = (l + eps, u - eps);
    if residual(lo) > 0.0 || residual(hi) < 0.0 {
        if y.abs() * (u - l) > 1e13 {
            return Err(Error::Domain(format!(
                "double barrier target {y} maps closer to the boundary than floating point resolves"
            )));
        }
        return Err(Error::Root(format!("double barrier target {y} not bracketed on ({l}, {u})")));
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if residual(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-12 * (u - l) {
            return Ok(0.5 * (lo + hi));
        }
    }
    Err(Error::Root("double barrier bisection did not converge".into()))
}

const DUAL_ROOT_MAX_ITERS: usize = 200;

/// Finds `xi` with `sum_i (l_i + 1/(c_i + xi)) = total` and every
/// `c_i + xi > 0`.
///
/// This is the dual of the log-barrier subproblem over the translated
/// simplex: the primal solution is `l + 1/(c + xi)`. With `l = 0` the
/// residual reduces to `sum_i 1/(c_i + xi) - total`. Writing
/// `mass = total - <1, l>`, the root lies in
/// `[a + 1/mass, a + n/mass]` with `a = -min_i c_i`; on that bracket the
/// residual is convex and strictly decreasing, so Newton from the left end
/// is monotone. Bisection guards every step.
pub fn simplex_dual_root(c: &[f64], lower: &[f64], total: f64) -> Result<f64> {
    check_len("simplex lower bound", c.len(), lower.len())?;
    if c.is_empty() {
        return Err(Error::Arg("empty simplex".into()));
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::Root("non-finite dual coefficients".into()));
    }
    let mass = total - lower.iter().sum::<f64>();
    if !(mass > 0.0) {
        return Err(Error::Infeasible(format!("simplex mass {mass} is not positive")));
    }
    let n = c.len() as f64;
    let a = -c.iter().copied().fold(f64::INFINITY, f64::min);
    let residual = |xi: f64| -> (f64, f64) {
        let mut value = -mass;
        let mut slope = 0.0;
        for &ci in c {
            let r = 1.0 / (ci + xi);
            value += r;
            slope -= r * r;
        }
        (value, slope)
    };
    let tol = 1e-10 * total.abs().max(1.0);
    let mut lo = a + 1.0 / mass;
    let mut hi = a + n / mass;
    // keep the bracket valid under rounding of `a + 1/mass`
    while residual(lo).0 < 0.0 {
        let gap = lo - a;
        lo = a + 0.5 * gap;
        if gap <= f64::EPSILON * a.abs() {
            return Err(Error::Root("lower bracket collapsed onto the pole".into()));
        }
    }
    let mut grow = 0;
    while residual(hi).0 > 0.0 {
        hi = a + 2.0 * (hi - a);
        grow += 1;
        if grow > 200 {
            return Err(Error::Root("no sign change found for the simplex dual".into()));
        }
    }
    let mut xi = lo;
    for _ in 0..DUAL_ROOT_MAX_ITERS {
        let (value, slope) = residual(xi);
        if value.abs() <= tol {
            return Ok(polish(xi, value, slope, &residual));
        }
        if value > 0.0 {
            lo = xi;
        } else {
            hi = xi;
        }
        let newton = xi - value / slope;
        xi = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= 4.0 * f64::EPSILON * xi.abs().max(1.0) {
            let (value, _) = residual(xi);
            if value.abs() <= tol {
                return Ok(xi);
            }
            return Err(Error::Root(format!(
                "bracket exhausted with residual {value:e} above tolerance {tol:e}"
            )));
        }
    }
    Err(Error::Root("simplex dual root did not converge".into()))
}

/// A few extra Newton steps once the tolerance is met, kept only while the
/// residual shrinks.
fn polish(mut xi: f64, mut value: f64, mut slope: f64, residual: &impl Fn(f64) -> (f64, f64)) -> f64 {
    for _ in 0..4 {
        if value == 0.0 || slope == 0.0 {
            break;
        }
        let next = xi - value / slope;
        let (v, s) = residual(next);
        if !(v.abs() < value.abs()) {
            break;
        }
        xi = next;
        value = v;
        slope = s;
    }
    xi
}

/// Convenience wrapper validating the pair on every call.
pub fn bpgd_update(
    geom: &GeometrySpec,
    region: &FeasibleRegion,
    x: &GridVector,
    g: &[f64],
    tau: f64,
) -> Result<GridVector> {
    BregmanProx::new(geom.clone(), region.clone())?.update(x, g, tau)
}
