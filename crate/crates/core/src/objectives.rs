//! Fine objectives, their gradients and relative-smoothness constants, and
//! the linearly shifted coarse models.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::geometry::xlogx;
use crate::linops::{CsrMatrix, DenseMatrix, LinearOperator};
use crate::vector::{dot, GridVector};

/// Anything with a value and a gradient.
pub trait Model: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn eval_grad(&self, x: &GridVector) -> Result<(f64, GridVector)>;
}

/// The supported fine objectives.
#[derive(Debug, Clone)]
pub enum Objective {
    /// `KL(b, Ax) = <b, ln(b / Ax)> - <1, b - Ax>` (Poisson negative log-likelihood).
    KlDataModel { op: LinearOperator, data: Vec<f64> },
    /// `KL(Ax, b) = <Ax, ln(Ax / b)> - <1, Ax - b>`.
    KlModelData { op: LinearOperator, data: Vec<f64> },
    /// `-ln det(H Diag(x) H^T)`; `atoms` stores `H^T`, one row per design point.
    DDesign { atoms: CsrMatrix },
    /// `||Ax - b||^2 / 2`.
    LeastSquares { op: LinearOperator, data: Vec<f64> },
}

fn validate_kl(op: &LinearOperator, data: &[f64]) -> Result<()> {
    check_len("KL data", op.rows(), data.len())?;
    if let Some(i) = data.iter().position(|b| !(*b > 0.0) || !b.is_finite()) {
        return Err(Error::Arg(format!("KL data must be strictly positive, b[{i}] = {}", data[i])));
    }
    let csr = op.to_csr();
    for i in 0..csr.rows() {
        let (_, vals) = csr.row(i);
        if vals.iter().any(|v| *v < 0.0) {
            return Err(Error::Arg(format!("operator row {i} has a negative entry")));
        }
        if !vals.iter().any(|v| *v > 0.0) {
            return Err(Error::Arg(format!("operator row {i} is zero")));
        }
    }
    Ok(())
}

impl Objective {
    pub fn kl_data_model(op: LinearOperator, data: Vec<f64>) -> Result<Self> {
        validate_kl(&op, &data)?;
        Ok(Objective::KlDataModel { op, data })
    }

    pub fn kl_model_data(op: LinearOperator, data: Vec<f64>) -> Result<Self> {
        validate_kl(&op, &data)?;
        Ok(Objective::KlModelData { op, data })
    }

    /// D-optimal design for an explicit `m x n` matrix `H`.
    pub fn d_design(h: &DenseMatrix) -> Result<Self> {
        let transposed: Vec<Vec<(usize, f64)>> = (0..h.cols())
            .map(|i| (0..h.rows()).filter(|&r| h.get(r, i) != 0.0).map(|r| (r, h.get(r, i))).collect())
            .collect();
        Self::d_design_from_atoms(CsrMatrix::from_rows(h.rows(), &transposed)?)
    }

    /// D-optimal design with `H = A^T`, where row `i` of `atoms` is the
    /// `i`-th column of `H`.
    pub fn d_design_from_atoms(atoms: CsrMatrix) -> Result<Self> {
        if atoms.rows() < atoms.cols() {
            return Err(Error::Rank(format!(
                "{} design points cannot span {} parameters",
                atoms.rows(),
                atoms.cols()
            )));
        }
        Ok(Objective::DDesign { atoms })
    }

    pub fn least_squares(op: LinearOperator, data: Vec<f64>) -> Result<Self> {
        check_len("least-squares data", op.rows(), data.len())?;
        Ok(Objective::LeastSquares { op, data })
    }

    /// Number of model parameters `m` of a design problem.
    pub fn design_rank(&self) -> Option<usize> {
        match self {
            Objective::DDesign { atoms } => Some(atoms.cols()),
            _ => None,
        }
    }

    pub fn operator(&self) -> Option<&LinearOperator> {
        match self {
            Objective::KlDataModel { op, .. }
            | Objective::KlModelData { op, .. }
            | Objective::LeastSquares { op, .. } => Some(op),
            Objective::DDesign { .. } => None,
        }
    }

    fn forward(op: &LinearOperator, x: &[f64]) -> Result<Vec<f64>> {
        let ax = op.apply(x)?;
        if let Some(i) = ax.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::Domain(format!("(Ax)[{i}] = {} is not positive", ax[i])));
        }
        Ok(ax)
    }

    fn fisher(atoms: &CsrMatrix, x: &[f64]) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        let m = atoms.cols();
        let mut info = DMatrix::<f64>::zeros(m, m);
        for (i, &w) in x.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let (cols, vals) = atoms.row(i);
            for (&a, &va) in cols.iter().zip(vals) {
                for (&b, &vb) in cols.iter().zip(vals) {
                    info[(a, b)] += w * va * vb;
                }
            }
        }
        info.cholesky()
            .ok_or_else(|| Error::Domain("information matrix is not positive definite".into()))
    }

    fn log_det(chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> f64 {
        chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum()
    }
}

impl Model for Objective {
    fn dim(&self) -> usize {
        match self {
            Objective::KlDataModel { op, .. }
            | Objective::KlModelData { op, .. }
            | Objective::LeastSquares { op, .. } => op.cols(),
            Objective::DDesign { atoms } => atoms.rows(),
        }
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        check_len("objective input", self.dim(), x.len())?;
        match self {
            Objective::KlDataModel { op, data } => {
                let ax = Self::forward(op, x)?;
                Ok(data.iter().zip(&ax).map(|(&b, &a)| b * (b / a).ln() - b + a).sum())
            }
            Objective::KlModelData { op, data } => {
                let ax = Self::forward(op, x)?;
                Ok(ax.iter().zip(data).map(|(&a, &b)| xlogx(a) - a * b.ln() - a + b).sum())
            }
            Objective::DDesign { atoms } => Ok(-Self::log_det(&Self::fisher(atoms, x)?)),
            Objective::LeastSquares { op, data } => {
                let ax = op.apply(x)?;
                Ok(0.5 * ax.iter().zip(data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            }
        }
    }

    fn eval_grad(&self, x: &GridVector) -> Result<(f64, GridVector)> {
        check_len("objective input", self.dim(), x.len())?;
        let (value, grad) = match self {
            Objective::KlDataModel { op, data } => {
                let ax = Self::forward(op, x)?;
                let value = data.iter().zip(&ax).map(|(&b, &a)| b * (b / a).ln() - b + a).sum();
                let resid: Vec<f64> = data.iter().zip(&ax).map(|(&b, &a)| 1.0 - b / a).collect();
                (value, op.apply_adjoint(&resid)?)
            }
            Objective::KlModelData { op, data } => {
                let ax = Self::forward(op, x)?;
                let logs: Vec<f64> = ax.iter().zip(data).map(|(&a, &b)| (a / b).ln()).collect();
                let value = ax.iter().zip(&logs).zip(data).map(|((&a, &l), &b)| a * l - a + b).sum();
                (value, op.apply_adjoint(&logs)?)
            }
            Objective::DDesign { atoms } => {
                let chol = Self::fisher(atoms, x)?;
                let value = -Self::log_det(&chol);
                let inv = chol.inverse();
                let grad = (0..atoms.rows())
                    .map(|i| {
                        let (cols, vals) = atoms.row(i);
                        let mut q = 0.0;
                        for (&a, &va) in cols.iter().zip(vals) {
                            for (&b, &vb) in cols.iter().zip(vals) {
                                q += va * vb * inv[(a, b)];
                            }
                        }
                        -q
                    })
                    .collect();
                (value, grad)
            }
            Objective::LeastSquares { op, data } => {
                let resid: Vec<f64> = op.apply(x)?.iter().zip(data).map(|(a, b)| a - b).collect();
                let value = 0.5 * dot(&resid, &resid);
                (value, op.apply_adjoint(&resid)?)
            }
        };
        Ok((value, GridVector::new(grad).with_shape(x.shape())))
    }
}

/// Relative-smoothness constant of `obj` with respect to its natural
/// reference function.
pub fn smoothness_constant(obj: &Objective) -> Result<f64> {
    match obj {
        // ||b||_1 relative to the log-barrier
        Objective::KlDataModel { data, .. } => Ok(data.iter().sum()),
        // induced 1-norm relative to the negative entropy
        Objective::KlModelData { op, .. } => Ok(op.norm_1()),
        // relative to the log-barrier
        Objective::DDesign { .. } => Ok(1.0),
        Objective::LeastSquares { .. } => {
            Err(Error::Unsupported("least squares takes an external step size".into()))
        }
    }
}

/// `f(x) + <v, x - anchor>`: a coarse objective made first-order coherent
/// with its parent at `anchor`.
#[derive(Debug, Clone)]
pub struct CoarseModel {
    base: Arc<Objective>,
    shift: Vec<f64>,
    anchor: GridVector,
    anchor_offset: f64,
}

impl CoarseModel {
    pub fn base(&self) -> &Objective {
        &self.base
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn anchor(&self) -> &GridVector {
        &self.anchor
    }
}

impl Model for CoarseModel {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.base.value(x)? + dot(&self.shift, x) - self.anchor_offset)
    }

    fn eval_grad(&self, x: &GridVector) -> Result<(f64, GridVector)> {
        let (value, grad) = self.base.eval_grad(x)?;
        let value = value + dot(&self.shift, x) - self.anchor_offset;
        Ok((value, grad.zip_map(&self.shift, |g, v| g + v)))
    }
}

/// Builds `psi(x) = f_coarse(x) + <v, x - anchor>` with
/// `v = target_grad - grad f_coarse(anchor)`, so `grad psi(anchor) = target_grad`.
pub fn build_coarse_model(
    f_coarse: Arc<Objective>,
    target_grad: &[f64],
    anchor: GridVector,
) -> Result<CoarseModel> {
    check_len("coarse target gradient", f_coarse.dim(), target_grad.len())?;
    let (_, g) = f_coarse.eval_grad(&anchor)?;
    let shift: Vec<f64> = target_grad.iter().zip(g.iter()).map(|(t, g)| t - g).collect();
    let anchor_offset = dot(&shift, &anchor);
    Ok(CoarseModel { base: f_coarse, shift, anchor, anchor_offset })
}

/// Solves `M y = rhs` for the information matrix at `x`; used by tests and
/// diagnostics.
pub fn fisher_solve(obj: &Objective, x: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    match obj {
        Objective::DDesign { atoms } => {
            let chol = Objective::fisher(atoms, x)?;
            Ok(chol.solve(&DVector::from_column_slice(rhs)).as_slice().to_vec())
        }
        _ => Err(Error::Unsupported("only design objectives have an information matrix".into())),
    }
}
