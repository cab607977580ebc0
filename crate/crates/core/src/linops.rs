//! Forward operators and grid-transfer operators.

use crate::error::{check_len, Error, Result};
use crate::vector::GridVector;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != rows + 1 || row_ptr[0] != 0 || row_ptr[rows] != col_idx.len() {
            return Err(Error::Shape("inconsistent CSR row offsets".into()));
        }
        check_len("CSR values", col_idx.len(), values.len())?;
        if row_ptr.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Shape("CSR row offsets must be non-decreasing".into()));
        }
        if let Some(&c) = col_idx.iter().find(|&&c| c >= cols) {
            return Err(Error::Shape(format!("CSR column {c} out of range {cols}")));
        }
        Ok(Self { rows, cols, row_ptr, col_idx, values })
    }

    /// Builds from per-row `(column, value)` lists; entries are kept in the
    /// given order.
    pub fn from_rows(cols: usize, rows: &[Vec<(usize, f64)>]) -> Result<Self> {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for &(c, v) in row {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self::new(rows.len(), cols, row_ptr, col_idx, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum()
            })
            .collect()
    }

    pub fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (i, &yi) in y.iter().enumerate() {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                out[c] += v * yi;
            }
        }
        out
    }

    /// Drops the listed rows, keeping the order of the rest.
    pub fn select_rows(&self, keep: &[usize]) -> Self {
        let rows: Vec<Vec<(usize, f64)>> = keep
            .iter()
            .map(|&i| {
                let (c, v) = self.row(i);
                c.iter().copied().zip(v.iter().copied()).collect()
            })
            .collect();
        Self::from_rows(self.cols, &rows).expect("row subset of a valid matrix")
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len("dense matrix data", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged dense rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { rows: n, cols: n, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| crate::vector::dot(self.row(i), x)).collect()
    }

    pub fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (i, &yi) in y.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * yi;
            }
        }
        out
    }

    pub fn to_csr(&self) -> CsrMatrix {
        let rows: Vec<Vec<(usize, f64)>> = (0..self.rows)
            .map(|i| {
                self.row(i).iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, &v)| (j, v)).collect()
            })
            .collect();
        CsrMatrix::from_rows(self.cols, &rows).expect("dense to csr")
    }
}

/// Zero-padded 2D correlation of a `side x side` image with a centered,
/// odd-sized square kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2D {
    kernel: Vec<f64>,
    kdim: usize,
    side: usize,
}

impl Conv2D {
    pub fn new(kernel: Vec<f64>, kdim: usize, side: usize) -> Result<Self> {
        if kdim % 2 == 0 {
            return Err(Error::Arg(format!("kernel width {kdim} must be odd")));
        }
        check_len("kernel", kdim * kdim, kernel.len())?;
        if side == 0 {
            return Err(Error::Arg("image side must be positive".into()));
        }
        Ok(Self { kernel, kdim, side })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let (n, k) = (self.side as isize, self.kdim as isize);
        let r = k / 2;
        let mut out = vec![0.0; x.len()];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    let si = i + p - r;
                    if si < 0 || si >= n {
                        continue;
                    }
                    let krow = &self.kernel[(p * k) as usize..((p + 1) * k) as usize];
                    let xrow = &x[(si * n) as usize..((si + 1) * n) as usize];
                    let q_lo = (r - j).max(0);
                    let q_hi = (n - j + r).min(k);
                    for q in q_lo..q_hi {
                        acc += krow[q as usize] * xrow[(j + q - r) as usize];
                    }
                }
                out[(i * n + j) as usize] = acc;
            }
        }
        out
    }

    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        let (n, k) = (self.side as isize, self.kdim as isize);
        let r = k / 2;
        let mut out = vec![0.0; y.len()];
        for a in 0..n {
            for b in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    let i = a - p + r;
                    if i < 0 || i >= n {
                        continue;
                    }
                    for q in 0..k {
                        let j = b - q + r;
                        if j < 0 || j >= n {
                            continue;
                        }
                        acc += self.kernel[(p * k + q) as usize] * y[(i * n + j) as usize];
                    }
                }
                out[(a * n + b) as usize] = acc;
            }
        }
        out
    }
}

/// Linear forward operator.
#[derive(Debug, Clone, PartialEq)]
pub enum LinearOperator {
    Identity(usize),
    Dense(DenseMatrix),
    SparseCsr(CsrMatrix),
    Conv2D(Conv2D),
    Projector { angles: Vec<f64>, detectors: usize, side: usize, matrix: CsrMatrix },
}

impl LinearOperator {
    pub fn rows(&self) -> usize {
        match self {
            LinearOperator::Identity(n) => *n,
            LinearOperator::Dense(m) => m.rows(),
            LinearOperator::SparseCsr(m) | LinearOperator::Projector { matrix: m, .. } => m.rows(),
            LinearOperator::Conv2D(c) => c.side * c.side,
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            LinearOperator::Identity(n) => *n,
            LinearOperator::Dense(m) => m.cols(),
            LinearOperator::SparseCsr(m) | LinearOperator::Projector { matrix: m, .. } => m.cols(),
            LinearOperator::Conv2D(c) => c.side * c.side,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("operator input", self.cols(), x.len())?;
        Ok(match self {
            LinearOperator::Identity(_) => x.to_vec(),
            LinearOperator::Dense(m) => m.apply(x),
            LinearOperator::SparseCsr(m) | LinearOperator::Projector { matrix: m, .. } => m.apply(x),
            LinearOperator::Conv2D(c) => c.apply(x),
        })
    }

    pub fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("adjoint input", self.rows(), y.len())?;
        Ok(match self {
            LinearOperator::Identity(_) => y.to_vec(),
            LinearOperator::Dense(m) => m.apply_adjoint(y),
            LinearOperator::SparseCsr(m) | LinearOperator::Projector { matrix: m, .. } => {
                m.apply_adjoint(y)
            }
            LinearOperator::Conv2D(c) => c.apply_adjoint(y),
        })
    }

    /// Absolute column sums, i.e. `|A|^T 1`.
    pub fn abs_column_sums(&self) -> Vec<f64> {
        match self {
            LinearOperator::Identity(n) => vec![1.0; *n],
            LinearOperator::Dense(m) => {
                let mut out = vec![0.0; m.cols()];
                for i in 0..m.rows() {
                    for (o, v) in out.iter_mut().zip(m.row(i)) {
                        *o += v.abs();
                    }
                }
                out
            }
            LinearOperator::SparseCsr(m) | LinearOperator::Projector { matrix: m, .. } => {
                let abs = CsrMatrix { values: m.values.iter().map(|v| v.abs()).collect(), ..m.clone() };
                abs.apply_adjoint(&vec![1.0; m.rows()])
            }
            LinearOperator::Conv2D(c) => {
                let abs = Conv2D { kernel: c.kernel.iter().map(|v| v.abs()).collect(), ..c.clone() };
                abs.apply_adjoint(&vec![1.0; c.side * c.side])
            }
        }
    }

    /// Induced 1-norm (maximum absolute column sum).
    pub fn norm_1(&self) -> f64 {
        self.abs_column_sums().into_iter().fold(0.0, f64::max)
    }

    /// Explicit sparse form, for operators that are consumed row by row.
    pub fn to_csr(&self) -> CsrMatrix {
        match self {
            LinearOperator::Identity(n) => {
                let rows: Vec<Vec<(usize, f64)>> = (0..*n).map(|i| vec![(i, 1.0)]).collect();
                CsrMatrix::from_rows(*n, &rows).expect("identity to csr")
            }
            LinearOperator::Dense(m) => m.to_csr(),
            LinearOperator::SparseCsr(m) | LinearOperator::Projector { matrix: m, .. } => m.clone(),
            LinearOperator::Conv2D(c) => {
                let (side, k) = (c.side as isize, c.kdim as isize);
                let r = k / 2;
                let n = c.side * c.side;
                let rows: Vec<Vec<(usize, f64)>> = (0..n as isize)
                    .map(|idx| {
                        let (i, j) = (idx / side, idx % side);
                        let mut row = Vec::new();
                        for p in 0..k {
                            let si = i + p - r;
                            if si < 0 || si >= side {
                                continue;
                            }
                            for q in 0..k {
                                let sj = j + q - r;
                                let v = c.kernel[(p * k + q) as usize];
                                if sj >= 0 && sj < side && v != 0.0 {
                                    row.push(((si * side + sj) as usize, v));
                                }
                            }
                        }
                        row
                    })
                    .collect();
                CsrMatrix::from_rows(n, &rows).expect("conv to csr")
            }
        }
    }

    /// Removes rows that are identically zero; returns the kept row indices.
    pub fn drop_zero_rows(&self) -> (LinearOperator, Vec<usize>) {
        let csr = self.to_csr();
        let keep: Vec<usize> =
            (0..csr.rows()).filter(|&i| csr.row(i).1.iter().any(|v| *v != 0.0)).collect();
        if keep.len() == csr.rows() {
            return (self.clone(), keep);
        }
        let matrix = csr.select_rows(&keep);
        let op = match self {
            LinearOperator::Projector { angles, detectors, side, .. } => LinearOperator::Projector {
                angles: angles.clone(),
                detectors: *detectors,
                side: *side,
                matrix,
            },
            _ => LinearOperator::SparseCsr(matrix),
        };
        (op, keep)
    }
}

/// Normalized `dim x dim` Gaussian point spread function, row-major.
pub fn gaussian_psf(dim: usize, sigma: f64) -> Result<Vec<f64>> {
    if dim % 2 == 0 {
        return Err(Error::Arg(format!("PSF width {dim} must be odd")));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Arg(format!("PSF sigma {sigma} must be positive")));
    }
    let r = (dim / 2) as f64;
    let mut k: Vec<f64> = (0..dim * dim)
        .map(|idx| {
            let i = (idx / dim) as f64 - r;
            let j = (idx % dim) as f64 - r;
            (-(i * i + j * j) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    Ok(k)
}

/// Blur operator on a `side x side` grid.
pub fn blur_operator(side: usize, dim: usize, sigma: f64) -> Result<LinearOperator> {
    Ok(LinearOperator::Conv2D(Conv2D::new(gaussian_psf(dim, sigma)?, dim, side)?))
}

/// Equidistant angles `k pi / count` for `k = 0..count`.
pub fn equidistant_angles(count: usize) -> Vec<f64> {
    (0..count).map(|k| k as f64 * std::f64::consts::PI / count as f64).collect()
}

/// Parallel-beam system matrix on unit pixels covering `[0, side]^2`.
///
/// Row `a * detectors + j` is the ray at angle `angles[a]` through the
/// centre of detector bin `j`; bins tile the image width. The ray at angle
/// `theta` and signed offset `s` from the image centre runs along
/// `(-sin theta, cos theta)`, so angle 0 gives rays parallel to the row
/// axis that cross one full image column each. Entries are the intersection
/// lengths of the ray with each pixel. Pixel `(r, c)` covers
/// `[c, c+1] x [r, r+1]` and has flat index `r * side + c`.
pub fn parallel_beam(side: usize, angles: &[f64], detectors: usize) -> Result<LinearOperator> {
    if side == 0 || detectors == 0 {
        return Err(Error::Arg("grid side and detector count must be >= 1".into()));
    }
    if angles.is_empty() {
        return Err(Error::Arg("at least one projection angle is required".into()));
    }
    if angles.iter().any(|a| !a.is_finite()) {
        return Err(Error::Arg("non-finite projection angle".into()));
    }
    let n = side as f64;
    let width = n / detectors as f64;
    let mut rows = Vec::with_capacity(angles.len() * detectors);
    for &theta in angles {
        let (sin, cos) = theta.sin_cos();
        for j in 0..detectors {
            let s = -0.5 * n + (j as f64 + 0.5) * width;
            let origin = (0.5 * n + s * cos, 0.5 * n + s * sin);
            let dir = (-sin, cos);
            rows.push(trace_ray(side, origin, dir));
        }
    }
    let matrix = CsrMatrix::from_rows(side * side, &rows)?;
    Ok(LinearOperator::Projector { angles: angles.to_vec(), detectors, side, matrix })
}

/// Siddon traversal of the line `origin + t dir` (unit `dir`) through the
/// pixel grid.
fn trace_ray(side: usize, origin: (f64, f64), dir: (f64, f64)) -> Vec<(usize, f64)> {
    let n = side as f64;
    let (ox, oy) = origin;
    let (dx, dy) = dir;
    const PARALLEL: f64 = 1e-12;
    // parametric window where the line is inside the square
    let (mut t_lo, mut t_hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for (o, d) in [(ox, dx), (oy, dy)] {
        if d.abs() < PARALLEL {
            if o <= 0.0 || o >= n {
                return Vec::new();
            }
        } else {
            let (a, b) = ((0.0 - o) / d, (n - o) / d);
            t_lo = t_lo.max(a.min(b));
            t_hi = t_hi.min(a.max(b));
        }
    }
    if !(t_hi > t_lo) {
        return Vec::new();
    }
    let mut knots = vec![t_lo, t_hi];
    for (o, d) in [(ox, dx), (oy, dy)] {
        if d.abs() < PARALLEL {
            continue;
        }
        for k in 0..=side {
            let t = (k as f64 - o) / d;
            if t > t_lo && t < t_hi {
                knots.push(t);
            }
        }
    }
    knots.sort_by(f64::total_cmp);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(2 * side);
    for w in knots.windows(2) {
        let len = w[1] - w[0];
        if len <= 1e-12 {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let c = (ox + mid * dx).floor();
        let r = (oy + mid * dy).floor();
        if c < 0.0 || r < 0.0 || c >= n || r >= n {
            continue;
        }
        let idx = r as usize * side + c as usize;
        match out.last_mut() {
            Some(last) if last.0 == idx => last.1 += len,
            _ => out.push((idx, len)),
        }
    }
    out
}

/// Layout handled by a transfer pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferLayout {
    /// A line of `fine` nodes.
    Line,
    /// A `fine x fine` image, tensor-product stencil.
    Square,
    /// `blocks` independent lines of `fine` nodes stored row-major
    /// (the 1D stencil applied along each row of a matrix).
    Rows { blocks: usize },
}

/// Linear-interpolation prolongation `P` and its transpose `R = P^T`.
///
/// Coarse node `j` feeds fine nodes `2j, 2j+1, 2j+2` with weights
/// `1/4, 1/2, 1/4`, so every column of `P` sums to one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransferPair {
    fine: usize,
    layout: TransferLayout,
}

const STENCIL: [f64; 3] = [0.25, 0.5, 0.25];

impl TransferPair {
    fn new(fine: usize, layout: TransferLayout) -> Result<Self> {
        if fine < 3 || fine % 2 == 0 {
            return Err(Error::Arg(format!(
                "fine side {fine} must be odd and at least 3 for a balanced stencil"
            )));
        }
        if let TransferLayout::Rows { blocks: 0 } = layout {
            return Err(Error::Arg("row transfer needs at least one block".into()));
        }
        Ok(Self { fine, layout })
    }

    pub fn line(fine: usize) -> Result<Self> {
        Self::new(fine, TransferLayout::Line)
    }

    pub fn square(fine_side: usize) -> Result<Self> {
        Self::new(fine_side, TransferLayout::Square)
    }

    pub fn rows(blocks: usize, fine: usize) -> Result<Self> {
        Self::new(fine, TransferLayout::Rows { blocks })
    }

    pub fn layout(&self) -> TransferLayout {
        self.layout
    }

    pub fn fine_side(&self) -> usize {
        self.fine
    }

    pub fn coarse_side(&self) -> usize {
        (self.fine - 1) / 2
    }

    pub fn fine_len(&self) -> usize {
        match self.layout {
            TransferLayout::Line => self.fine,
            TransferLayout::Square => self.fine * self.fine,
            TransferLayout::Rows { blocks } => blocks * self.fine,
        }
    }

    pub fn coarse_len(&self) -> usize {
        let c = self.coarse_side();
        match self.layout {
            TransferLayout::Line => c,
            TransferLayout::Square => c * c,
            TransferLayout::Rows { blocks } => blocks * c,
        }
    }

    /// Nonzero entries `(fine index, weight)` of column `j` of `P`.
    pub fn column(&self, j: usize) -> Vec<(usize, f64)> {
        let c = self.coarse_side();
        let f = self.fine;
        match self.layout {
            TransferLayout::Line => line_column(j, 0),
            TransferLayout::Rows { .. } => line_column(j % c, (j / c) * f),
            TransferLayout::Square => {
                let (a, b) = (j / c, j % c);
                let mut out = Vec::with_capacity(9);
                for (da, wa) in STENCIL.iter().enumerate() {
                    for (db, wb) in STENCIL.iter().enumerate() {
                        out.push(((2 * a + da) * f + 2 * b + db, wa * wb));
                    }
                }
                out
            }
        }
    }

    pub fn prolong(&self, w: &[f64]) -> Result<GridVector> {
        check_len("prolongation input", self.coarse_len(), w.len())?;
        let mut out = vec![0.0; self.fine_len()];
        for (j, &wj) in w.iter().enumerate() {
            for (t, p) in self.column(j) {
                out[t] += p * wj;
            }
        }
        Ok(self.shape_fine(out))
    }

    pub fn restrict(&self, x: &[f64]) -> Result<GridVector> {
        check_len("restriction input", self.fine_len(), x.len())?;
        let out = (0..self.coarse_len())
            .map(|j| self.column(j).into_iter().map(|(t, p)| p * x[t]).sum())
            .collect();
        Ok(self.shape_coarse(out))
    }

    /// `||P||_inf`, the maximum row sum, computed from the stencil.
    pub fn p_inf_norm(&self) -> f64 {
        let mut rows = vec![0.0; self.fine_len()];
        for j in 0..self.coarse_len() {
            for (t, p) in self.column(j) {
                rows[t] += p;
            }
        }
        rows.into_iter().fold(0.0, f64::max)
    }

    fn shape_fine(&self, v: Vec<f64>) -> GridVector {
        match self.layout {
            TransferLayout::Line => GridVector::new(v),
            TransferLayout::Square => GridVector::square(v, self.fine),
            TransferLayout::Rows { blocks } => GridVector::matrix(v, blocks, self.fine),
        }
    }

    fn shape_coarse(&self, v: Vec<f64>) -> GridVector {
        let c = self.coarse_side();
        match self.layout {
            TransferLayout::Line => GridVector::new(v),
            TransferLayout::Square => GridVector::square(v, c),
            TransferLayout::Rows { blocks } => GridVector::matrix(v, blocks, c),
        }
    }
}

fn line_column(j: usize, offset: usize) -> Vec<(usize, f64)> {
    STENCIL.iter().enumerate().map(|(d, &w)| (offset + 2 * j + d, w)).collect()
}
