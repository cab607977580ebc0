//! Coarse constraint construction, level stacks and the coarse-correction
//! trigger.

use std::sync::Arc;

use log::debug;

use crate::error::{check_len, Error, Result};
use crate::geometry::{FeasibleRegion, GeometryKind, GeometrySpec};
use crate::linops::TransferPair;
use crate::objectives::{smoothness_constant, Model, Objective};

/// Coarse-correction thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerParams {
    /// Required ratio between coarse and fine gradient norms.
    pub kappa: f64,
    /// Minimum fine gradient norm.
    pub epsilon: f64,
    /// Minimum Bregman distance to the last point that triggered.
    pub epsilon_x: f64,
}

impl Default for TriggerParams {
    fn default() -> Self {
        Self { kappa: 0.49, epsilon: 1e-3, epsilon_x: 1e-2 }
    }
}

impl TriggerParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.kappa) || !unit(self.epsilon) || !(self.epsilon_x > 0.0) {
            return Err(Error::Arg(format!("invalid trigger parameters {self:?}")));
        }
        Ok(())
    }
}

/// Decides whether the current iterate should descend one level.
///
/// `breg_dist_to_last_trigger` is `+inf` when the level has not triggered
/// before.
pub fn trigger(
    grad_parent: &[f64],
    grad_coarse_at_anchor: &[f64],
    breg_dist_to_last_trigger: f64,
    p: &TriggerParams,
) -> bool {
    let fine = norm2(grad_parent);
    let coarse = norm2(grad_coarse_at_anchor);
    coarse >= p.kappa * fine && fine >= p.epsilon && breg_dist_to_last_trigger >= p.epsilon_x
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_transfer_shapes(
    x_prev: &[f64],
    x_coarse: &[f64],
    transfer: &TransferPair,
) -> Result<()> {
    check_len("fine point", transfer.fine_len(), x_prev.len())?;
    check_len("coarse point", transfer.coarse_len(), x_coarse.len())
}

/// Recursive l-inf bound adaptation: every `w` in the returned box satisfies
/// `x_prev + P (w - x_coarse) in [l_prev, u_prev]`.
///
/// `P` has nonnegative entries, so only the `P_tj > 0` branch of the
/// recursion is active.
pub fn adapt_box_bounds(
    l_prev: &[f64],
    u_prev: &[f64],
    x_prev: &[f64],
    x_coarse: &[f64],
    transfer: &TransferPair,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_transfer_shapes(x_prev, x_coarse, transfer)?;
    check_len("fine lower bound", x_prev.len(), l_prev.len())?;
    check_len("fine upper bound", x_prev.len(), u_prev.len())?;
    if let Some(t) = (0..x_prev.len()).find(|&t| !(x_prev[t] > l_prev[t] && x_prev[t] < u_prev[t])) {
        return Err(Error::Domain(format!(
            "fine point component {t} = {} not strictly inside [{}, {}]",
            x_prev[t], l_prev[t], u_prev[t]
        )));
    }
    let scale = 1.0 / transfer.p_inf_norm();
    let mut lower = Vec::with_capacity(x_coarse.len());
    let mut upper = Vec::with_capacity(x_coarse.len());
    let mut nudged = 0usize;
    for (j, &xc) in x_coarse.iter().enumerate() {
        let column = transfer.column(j);
        let low_gap = column
            .iter()
            .filter(|(_, p)| *p > 0.0)
            .map(|&(t, _)| l_prev[t] - x_prev[t])
            .fold(f64::NEG_INFINITY, f64::max);
        let high_gap = column
            .iter()
            .filter(|(_, p)| *p > 0.0)
            .map(|&(t, _)| u_prev[t] - x_prev[t])
            .fold(f64::INFINITY, f64::min);
        let margin = 1e-12 * xc.abs().max(1.0);
        let mut l = xc + scale * low_gap;
        let mut u = xc + scale * high_gap;
        if l >= xc {
            l = xc - margin;
            nudged += 1;
        }
        if u <= xc {
            u = xc + margin;
            nudged += 1;
        }
        lower.push(l);
        upper.push(u);
    }
    if nudged > 0 {
        debug!("strictness margin applied to {nudged} adapted bounds");
    }
    Ok((lower, upper))
}

/// Coarse translated simplex `{w : <1, w> = <1, x_coarse>, w >= l}` with `l`
/// from the lower-bound recursion.
///
/// Prolongation with a column-sum-one `P` preserves the sum, so every such
/// `w` prolongs into `{z : <1, z> = <1, x_prev>, z >= l_prev}`.
pub fn adapt_simplex(
    l_prev: &[f64],
    x_prev: &[f64],
    x_coarse: &[f64],
    transfer: &TransferPair,
) -> Result<FeasibleRegion> {
    let u_prev = vec![f64::INFINITY; l_prev.len()];
    let (lower, _) = adapt_box_bounds(l_prev, &u_prev, x_prev, x_coarse, transfer)?;
    let total: f64 = x_coarse.iter().sum();
    FeasibleRegion::simplex(lower, total)
}

/// Region handed to the coarse level: the adapted region (`raw`) and the
/// region actually used after intersecting with the objective's natural
/// domain (`clipped`).
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedRegion {
    pub raw: FeasibleRegion,
    pub clipped: FeasibleRegion,
}

/// Adapts `parent` to the coarse level, raising lower bounds to `floor`
/// when given. The clipped region is a subset of the raw one, so
/// prolongation feasibility is inherited.
pub fn adapt_region(
    parent: &FeasibleRegion,
    x_prev: &[f64],
    x_coarse: &[f64],
    transfer: &TransferPair,
    floor: Option<f64>,
) -> Result<AdaptedRegion> {
    let raw = match parent {
        FeasibleRegion::Box { lower, upper } => {
            let (l, u) = adapt_box_bounds(lower, upper, x_prev, x_coarse, transfer)?;
            FeasibleRegion::new_box(l, u)?
        }
        FeasibleRegion::TranslatedSimplex { lower, .. } => {
            adapt_simplex(lower, x_prev, x_coarse, transfer)?
        }
    };
    let clipped = match floor {
        None => raw.clone(),
        Some(f) => {
            if let Some(j) = x_coarse.iter().position(|&v| !(v > f)) {
                return Err(Error::Domain(format!(
                    "coarse anchor component {j} = {} is not above the domain floor {f}",
                    x_coarse[j]
                )));
            }
            let lift = |l: &[f64]| l.iter().map(|&v| v.max(f)).collect::<Vec<_>>();
            match &raw {
                FeasibleRegion::Box { lower, upper } => FeasibleRegion::new_box(lift(lower), upper.clone())?,
                FeasibleRegion::TranslatedSimplex { lower, total } => {
                    FeasibleRegion::simplex(lift(lower), *total)?
                }
            }
        }
    };
    Ok(AdaptedRegion { raw, clipped })
}

/// Builds the level geometry matching `region` for the given family.
pub fn geometry_for(kind: GeometryKind, region: &FeasibleRegion) -> Result<GeometrySpec> {
    let lower = region.lower().to_vec();
    let upper = region.upper();
    match (kind, region) {
        (GeometryKind::Quadratic, _) => Ok(GeometrySpec::quadratic(lower.len())),
        (GeometryKind::LogBarrier | GeometryKind::ShiftedLogBarrier, _)
            if lower.iter().all(|&l| l == 0.0) && upper.iter().all(|u| u.is_infinite()) =>
        {
            Ok(GeometrySpec::log_barrier(lower.len()))
        }
        (GeometryKind::LogBarrier | GeometryKind::ShiftedLogBarrier, _) => {
            GeometrySpec::shifted_log_barrier(lower)
        }
        (GeometryKind::NegEntropy, FeasibleRegion::Box { .. }) => {
            GeometrySpec::new(GeometryKind::NegEntropy, lower, upper)
        }
        (GeometryKind::UpperLogBarrier, FeasibleRegion::Box { .. }) => GeometrySpec::upper_log_barrier(upper),
        (GeometryKind::DoubleLogBarrier, FeasibleRegion::Box { .. }) => {
            GeometrySpec::double_log_barrier(lower, upper)
        }
        (GeometryKind::FermiDirac, FeasibleRegion::Box { .. }) => GeometrySpec::fermi_dirac(lower, upper),
        (kind, _) => Err(Error::Pairing { geometry: kind.to_string(), region: "TranslatedSimplex".into() }),
    }
}

/// One level of a multilevel problem.
#[derive(Debug, Clone)]
pub struct LevelSpec {
    pub objective: Arc<Objective>,
    /// Reference-function family, instantiated on each (adapted) region.
    pub geometry: GeometryKind,
    /// Feasible set; on coarse levels only its variant (box or simplex)
    /// matters since bounds are recomputed every visit.
    pub region: FeasibleRegion,
    pub tau: f64,
    /// BPGD steps per visit (the finest level's value is unused: it takes a
    /// single post-smoothing step).
    pub smoothing_iters: usize,
    /// Transfer to the next coarser level; `None` on the coarsest.
    pub transfer: Option<TransferPair>,
    /// Lower bound of the objective's natural domain, enforced on adapted
    /// regions.
    pub domain_floor: Option<f64>,
}

impl LevelSpec {
    /// A level using the inverse relative-smoothness constant as step size.
    pub fn with_default_step(
        objective: Arc<Objective>,
        geometry: GeometryKind,
        region: FeasibleRegion,
        smoothing_iters: usize,
        transfer: Option<TransferPair>,
        domain_floor: Option<f64>,
    ) -> Result<Self> {
        let tau = 1.0 / smoothness_constant(&objective)?;
        Ok(Self { objective, geometry, region, tau, smoothing_iters, transfer, domain_floor })
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }
}

/// Checks a level stack: shapes chain through the transfers, dimensions
/// strictly decrease, and steps lie in `(0, 1/L]`.
pub fn validate_levels(levels: &[LevelSpec]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::Arg("at least one level is required".into()));
    }
    for (i, level) in levels.iter().enumerate() {
        if !(level.tau > 0.0) {
            return Err(Error::Step(level.tau));
        }
        if let Ok(l) = smoothness_constant(&level.objective) {
            if level.tau > (1.0 + 1e-12) / l {
                return Err(Error::Arg(format!(
                    "level {i}: step {} exceeds 1/L = {}",
                    level.tau,
                    1.0 / l
                )));
            }
        }
        check_len("level region", level.dim(), level.region.dim())?;
        let is_last = i + 1 == levels.len();
        match (&level.transfer, is_last) {
            (Some(_), true) => {
                return Err(Error::Arg("the coarsest level must not carry a transfer".into()))
            }
            (None, false) => return Err(Error::Arg(format!("level {i} needs a transfer"))),
            (Some(t), false) => {
                check_len("transfer fine side", level.dim(), t.fine_len())?;
                check_len("transfer coarse side", levels[i + 1].dim(), t.coarse_len())?;
                if levels[i + 1].dim() >= level.dim() {
                    return Err(Error::Arg("level dimensions must strictly decrease".into()));
                }
            }
            (None, true) => {}
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::TransferPair;
    use approx::assert_abs_diff_eq;

    #[test]
    fn infinite_bounds_propagate() {
        let t = TransferPair::line(3).unwrap();
        let x = [1.0, 2.0, 3.0];
        let xc = t.restrict(&x).unwrap();
        let (l, u) = adapt_box_bounds(&[f64::NEG_INFINITY; 3], &[f64::INFINITY; 3], &x, &xc, &t).unwrap();
        assert_eq!(l, vec![f64::NEG_INFINITY]);
        assert_eq!(u, vec![f64::INFINITY]);
    }

    #[test]
    fn hand_evaluated_lower_bound() {
        let t = TransferPair::line(3).unwrap();
        let (l, _) = adapt_box_bounds(&[0.0; 3], &[f64::INFINITY; 3], &[1.0, 2.0, 3.0], &[2.0], &t).unwrap();
        // 2 + (1 / 0.5) * max(-1, -2, -3)
        assert_abs_diff_eq!(l[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_boundary_point() {
        let t = TransferPair::line(3).unwrap();
        let err = adapt_box_bounds(&[0.0; 3], &[1.0; 3], &[0.0, 0.5, 0.5], &[0.375], &t).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn simplex_uniform_point() {
        let t = TransferPair::line(7).unwrap();
        let x = vec![1.0 / 7.0; 7];
        let xc = t.restrict(&x).unwrap();
        let region = adapt_simplex(&[0.0; 7], &x, &xc, &t).unwrap();
        match &region {
            FeasibleRegion::TranslatedSimplex { lower, total } => {
                assert_abs_diff_eq!(*total, xc.sum(), epsilon = 1e-15);
                assert!(lower.iter().zip(xc.iter()).all(|(l, c)| l < c));
            }
            _ => panic!("expected simplex"),
        }
        assert!(region.contains_strictly(&xc));
    }

    #[test]
    fn trigger_examples() {
        let p = TriggerParams::default();
        assert!(!trigger(&[0.0, 0.0], &[0.0], f64::INFINITY, &p));
        assert!(trigger(&[1.0, 0.0], &[1.0], f64::INFINITY, &p));
        assert!(!trigger(&[1.0, 0.0], &[1.0], 0.0, &p));
        assert!(!trigger(&[1.0, 0.0], &[0.4], f64::INFINITY, &p));
    }

    #[test]
    fn clipping_keeps_anchor_interior() {
        let t = TransferPair::line(3).unwrap();
        let x = [0.5, 0.6, 0.5];
        let xc = t.restrict(&x).unwrap();
        let r = adapt_region(&FeasibleRegion::orthant(3), &x, &xc, &t, Some(0.0)).unwrap();
        assert_eq!(r.clipped.lower(), &[0.0]);
        assert!(r.raw.lower()[0] < 0.0);
        assert!(r.clipped.contains_strictly(&xc));
    }

    #[test]
    fn geometry_factory_matches_region() {
        let region = FeasibleRegion::new_box(vec![-0.5, 0.0], vec![2.0, 1.0]).unwrap();
        let g = geometry_for(GeometryKind::FermiDirac, &region).unwrap();
        assert_eq!(g.lower(), region.lower());
        let simplex = FeasibleRegion::simplex(vec![0.1, -0.2], 1.0).unwrap();
        let g = geometry_for(GeometryKind::ShiftedLogBarrier, &simplex).unwrap();
        assert_eq!(g.kind(), GeometryKind::ShiftedLogBarrier);
        assert!(geometry_for(GeometryKind::FermiDirac, &simplex).is_err());
        let g = geometry_for(GeometryKind::ShiftedLogBarrier, &FeasibleRegion::orthant(2)).unwrap();
        assert_eq!(g.kind(), GeometryKind::LogBarrier);
    }
}
