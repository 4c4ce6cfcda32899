//! Finite-dimensional operator algebra underlying the G-calculus.
//!
//! Matrices are dense and row-major (dimensions stay tiny at desk scale).
//! A [`DiagTensor`] stacks `n` diagonal `d×d` blocks and stores only their
//! diagonals, so the "every block is diagonal" invariant holds by
//! construction.
//!
//! The generator of a diagonal volatility box is
//! `G(A) = ½ sup_{σ² ∈ [σ̲², σ̄²]} σ² : A`. For diagonal `A` the supremum of
//! this linear functional over a box sits at a corner, which gives the closed
//! form used throughout: `½ Σ_j (σ̄²_j a_j⁺ − σ̲²_j a_j⁻)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{neg, pos, sqrt};

/// Absolute tolerance for algebraic identities.
pub const ALGEBRA_TOL: f64 = 1e-12;

/// Largest dimension `d` accepted by the algebra.
pub const MAX_DIM: usize = 4;

/// Default number of volatility grid points per axis, corners included.
pub const DEFAULT_GRID_POINTS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                what: "matrix data",
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(d: usize) -> Self {
        Self::from_diag(&vec![1.0; d])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let d = diag.len();
        let mut m = Self::zeros(d, d);
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * d + i] = v;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Dimension {
                    what: "matrix row",
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.is_square()
            && (0..self.rows)
                .all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }

    pub fn is_diagonal(&self, tol: f64) -> bool {
        self.is_square()
            && (0..self.rows).all(|i| (0..self.cols).all(|j| i == j || self.get(i, j).abs() <= tol))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn scaled(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension {
                what: "matrix product",
                expected: self.cols,
                found: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    /// Frobenius norm `|γ| = sqrt(γ : γ)`.
    pub fn norm(&self) -> f64 {
        sqrt(self.data.iter().map(|v| v * v).sum())
    }

    fn norm_one(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.get(i, j).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Gauss-Jordan inverse with partial pivoting.
    pub fn inverse(&self) -> Result<Matrix> {
        if !self.is_square() {
            return Err(Error::Dimension {
                what: "inverse of non-square matrix",
                expected: self.rows,
                found: self.cols,
            });
        }
        let d = self.rows;
        let mut a = self.clone();
        let mut inv = Matrix::identity(d);
        for col in 0..d {
            let pivot = (col..d)
                .max_by(|&x, &y| a.get(x, col).abs().total_cmp(&a.get(y, col).abs()))
                .unwrap_or(col);
            let p = a.get(pivot, col);
            if p == 0.0 || !p.is_finite() {
                return Err(Error::IllConditioned(f64::INFINITY));
            }
            if pivot != col {
                for j in 0..d {
                    a.data.swap(pivot * d + j, col * d + j);
                    inv.data.swap(pivot * d + j, col * d + j);
                }
            }
            for j in 0..d {
                a.data[col * d + j] /= p;
                inv.data[col * d + j] /= p;
            }
            for i in 0..d {
                if i == col {
                    continue;
                }
                let factor = a.get(i, col);
                if factor != 0.0 {
                    for j in 0..d {
                        a.data[i * d + j] -= factor * a.data[col * d + j];
                        inv.data[i * d + j] -= factor * inv.data[col * d + j];
                    }
                }
            }
        }
        Ok(inv)
    }

    /// Condition number in the 1-norm; infinite for singular matrices.
    pub fn condition_number(&self) -> f64 {
        match self.inverse() {
            Ok(inv) => self.norm_one() * inv.norm_one(),
            Err(_) => f64::INFINITY,
        }
    }
}

/// `a : b = tr(a* b)`.
pub fn colon_product(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.rows != b.rows || a.cols != b.cols {
        return Err(Error::Dimension {
            what: "colon product",
            expected: a.rows * a.cols,
            found: b.rows * b.cols,
        });
    }
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum())
}

/// `η = (η¹, …, ηⁿ)` with every `ηⁱ` a diagonal `d×d` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagTensor {
    n: usize,
    d: usize,
    diag: Vec<f64>,
}

impl DiagTensor {
    /// Builds from the block diagonals, `entries[i * d + j] = ηⁱ_jj`.
    pub fn new(n: usize, d: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * d {
            return Err(Error::Dimension {
                what: "diagonal tensor entries",
                expected: n * d,
                found: entries.len(),
            });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("diagonal tensor entries must be finite"));
        }
        Ok(Self { n, d, diag: entries })
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        Self {
            n,
            d,
            diag: vec![0.0; n * d],
        }
    }

    /// Every block equal to the identity.
    pub fn identity(n: usize, d: usize) -> Self {
        Self {
            n,
            d,
            diag: vec![1.0; n * d],
        }
    }

    pub fn from_blocks(blocks: &[Matrix]) -> Result<Self> {
        let d = blocks.first().map_or(0, |b| b.rows());
        let mut diag = Vec::with_capacity(blocks.len() * d);
        for b in blocks {
            if b.rows() != d || b.cols() != d {
                return Err(Error::Dimension {
                    what: "tensor block",
                    expected: d,
                    found: b.rows().max(b.cols()),
                });
            }
            if !b.is_diagonal(0.0) {
                return Err(Error::input("tensor blocks must be diagonal"));
            }
            diag.extend(b.diagonal());
        }
        Self::new(blocks.len(), d, diag)
    }

    pub fn blocks(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn entries(&self) -> &[f64] {
        &self.diag
    }

    /// Diagonal of block `i`.
    pub fn block_diag(&self, i: usize) -> &[f64] {
        &self.diag[i * self.d..(i + 1) * self.d]
    }

    pub fn block(&self, i: usize) -> Matrix {
        Matrix::from_diag(self.block_diag(i))
    }

    /// `|η| = sqrt(Σᵢ ηⁱ : ηⁱ)`.
    pub fn norm(&self) -> f64 {
        sqrt(self.diag.iter().map(|v| v * v).sum())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DiagTensor {
        DiagTensor {
            n: self.n,
            d: self.d,
            diag: self.diag.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sub(&self, other: &DiagTensor) -> Result<DiagTensor> {
        self.check_same(other)?;
        Ok(DiagTensor {
            n: self.n,
            d: self.d,
            diag: self.diag.iter().zip(&other.diag).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn add(&self, other: &DiagTensor) -> Result<DiagTensor> {
        self.check_same(other)?;
        Ok(DiagTensor {
            n: self.n,
            d: self.d,
            diag: self.diag.iter().zip(&other.diag).map(|(a, b)| a + b).collect(),
        })
    }

    fn check_same(&self, other: &DiagTensor) -> Result<()> {
        if self.n != other.n || self.d != other.d {
            return Err(Error::Dimension {
                what: "tensor shapes",
                expected: self.n * self.d,
                found: other.n * other.d,
            });
        }
        Ok(())
    }
}

/// `η : γ = (η¹ : γ, …, ηⁿ : γ)`.
pub fn tensor_contract(eta: &DiagTensor, gamma: &Matrix) -> Result<Vec<f64>> {
    if gamma.rows() != eta.d || gamma.cols() != eta.d {
        return Err(Error::Dimension {
            what: "tensor contraction",
            expected: eta.d,
            found: gamma.rows().max(gamma.cols()),
        });
    }
    if !gamma.is_symmetric(ALGEBRA_TOL) {
        return Err(Error::input("tensor contraction needs a symmetric matrix"));
    }
    Ok((0..eta.n)
        .map(|i| {
            eta.block_diag(i)
                .iter()
                .enumerate()
                .map(|(j, v)| v * gamma.get(j, j))
                .sum()
        })
        .collect())
}

/// `η · θ = Σᵢ (ηⁱ)* θⁱ`, a `d×d` (diagonal) matrix.
pub fn tensor_dot(eta: &DiagTensor, theta: &DiagTensor) -> Result<Matrix> {
    eta.check_same(theta)?;
    let mut out = vec![0.0; eta.d];
    for i in 0..eta.n {
        for (j, o) in out.iter_mut().enumerate() {
            *o += eta.block_diag(i)[j] * theta.block_diag(i)[j];
        }
    }
    Ok(Matrix::from_diag(&out))
}

/// `ξ · η = Σᵢ ξⁱ ηⁱ`.
pub fn scalar_dot(xi: &[f64], eta: &DiagTensor) -> Result<Matrix> {
    if xi.len() != eta.n {
        return Err(Error::Dimension {
            what: "vector-tensor product",
            expected: eta.n,
            found: xi.len(),
        });
    }
    let mut out = vec![0.0; eta.d];
    for (i, x) in xi.iter().enumerate() {
        for (j, o) in out.iter_mut().enumerate() {
            *o += x * eta.block_diag(i)[j];
        }
    }
    Ok(Matrix::from_diag(&out))
}

/// `ξ · η : γ = Σᵢ ξⁱ ηⁱ : γ`.
pub fn scalar_dot_colon(xi: &[f64], eta: &DiagTensor, gamma: &Matrix) -> Result<f64> {
    let c = tensor_contract(eta, gamma)?;
    if xi.len() != c.len() {
        return Err(Error::Dimension {
            what: "vector-tensor product",
            expected: c.len(),
            found: xi.len(),
        });
    }
    Ok(xi.iter().zip(&c).map(|(a, b)| a * b).sum())
}

/// Entry-wise positive and negative parts, `η = η⁺ − η⁻`.
pub fn pos_neg_split(eta: &DiagTensor) -> (DiagTensor, DiagTensor) {
    (eta.map(pos), eta.map(neg))
}

/// Diagonal volatility box `σ̲² ≤ σ² ≤ σ̄²` together with its finite
/// scenario grid.
#[derive(Clone, Debug, PartialEq)]
pub struct VolatilityBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
    grid_points: usize,
}

impl VolatilityBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, grid_points: usize) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension {
                what: "volatility box bounds",
                expected: lower.len(),
                found: upper.len(),
            });
        }
        let d = lower.len();
        if d == 0 || d > MAX_DIM {
            return Err(Error::Capacity {
                what: "dimension",
                value: d,
                cap: MAX_DIM,
            });
        }
        for (j, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
                return Err(Error::input(format!(
                    "axis {j}: need 0 < lower ({lo}) <= upper ({hi})"
                )));
            }
        }
        if grid_points < 2 {
            return Err(Error::input("volatility grid needs at least the two corners"));
        }
        Ok(Self {
            lower,
            upper,
            grid_points,
        })
    }

    /// Same bounds on every axis.
    pub fn uniform(d: usize, lower: f64, upper: f64, grid_points: usize) -> Result<Self> {
        Self::new(vec![lower; d], vec![upper; d], grid_points)
    }

    /// Single-point box `σ̲² = σ̄² = σ²`.
    pub fn degenerate(sigma2: Vec<f64>) -> Result<Self> {
        Self::new(sigma2.clone(), sigma2, 2)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn grid_points(&self) -> usize {
        self.grid_points
    }

    /// `σ̲²_min = minᵢ σ̲²ᵢᵢ`.
    pub fn lower_min(&self) -> f64 {
        self.lower.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `σ̄²_max = maxᵢ σ̄²ᵢᵢ`.
    pub fn upper_max(&self) -> f64 {
        self.upper.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_degenerate(&self) -> bool {
        self.lower == self.upper
    }

    pub fn contains(&self, sigma2: &[f64], tol: f64) -> bool {
        sigma2.len() == self.dim()
            && sigma2
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(s, (lo, hi))| *s >= lo - tol && *s <= hi + tol)
    }

    /// Uniform grid over `[σ̲²_jj, σ̄²_jj]` including both ends; a single
    /// point on degenerate axes.
    pub fn axis_grid(&self, axis: usize) -> Vec<f64> {
        let (lo, hi) = (self.lower[axis], self.upper[axis]);
        if lo == hi {
            return vec![lo];
        }
        let m = self.grid_points - 1;
        (0..=m)
            .map(|i| {
                if i == m {
                    hi
                } else {
                    lo + (hi - lo) * (i as f64) / (m as f64)
                }
            })
            .collect()
    }

    /// The product grid `Σ_h`, sorted lexicographically ascending.
    pub fn scenario_grid(&self) -> ScenarioGrid {
        let axes: Vec<Vec<f64>> = (0..self.dim()).map(|j| self.axis_grid(j)).collect();
        let count: usize = axes.iter().map(Vec::len).product();
        let d = self.dim();
        let mut points = Vec::with_capacity(count * d);
        for idx in 0..count {
            // axis 0 varies slowest
            let mut rem = idx;
            let mut sel = [0usize; MAX_DIM];
            for j in (0..d).rev() {
                sel[j] = rem % axes[j].len();
                rem /= axes[j].len();
            }
            for j in 0..d {
                points.push(axes[j][sel[j]]);
            }
        }
        ScenarioGrid { d, points }
    }

    /// Scalar `G` of one diagonal block.
    #[inline]
    pub fn g_of_diag(&self, diag: &[f64]) -> f64 {
        0.5 * diag
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&a, (lo, hi))| hi * pos(a) - lo * neg(a))
            .sum::<f64>()
    }

    /// Corner attaining `sup σ² : diag`; zero entries pick the lower bound.
    pub fn argmax_corner(&self, diag: &[f64]) -> Vec<f64> {
        diag.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&a, (&lo, &hi))| if a > 0.0 { hi } else { lo })
            .collect()
    }
}

/// Finite volatility scenarios, each a diagonal `σ²` stored by its
/// diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioGrid {
    d: usize,
    points: Vec<f64>,
}

impl ScenarioGrid {
    pub fn len(&self) -> usize {
        self.points.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn get(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks(self.d)
    }
}

/// `G(η) = (G(η¹), …, G(ηⁿ))` by the corner formula.
pub fn g_diag(eta: &DiagTensor, vol: &VolatilityBox) -> Result<Vec<f64>> {
    if eta.d != vol.dim() {
        return Err(Error::Dimension {
            what: "G of tensor",
            expected: vol.dim(),
            found: eta.d,
        });
    }
    Ok((0..eta.n).map(|i| vol.g_of_diag(eta.block_diag(i))).collect())
}

/// `max_{σ² ∈ Σ_h} ½ tr[A σ²]` over the finite scenario grid.
pub fn g_sym_bruteforce(a: &Matrix, vol: &VolatilityBox) -> Result<f64> {
    if a.rows() != vol.dim() || a.cols() != vol.dim() {
        return Err(Error::Dimension {
            what: "G of matrix",
            expected: vol.dim(),
            found: a.rows().max(a.cols()),
        });
    }
    if !a.is_symmetric(ALGEBRA_TOL) {
        return Err(Error::input("G is defined on symmetric matrices"));
    }
    let diag = a.diagonal();
    Ok(vol
        .scenario_grid()
        .iter()
        .map(|s| 0.5 * s.iter().zip(&diag).map(|(x, y)| x * y).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Upper bound on the condition number accepted for `P`.
pub const MAX_CONDITION: f64 = 1e12;

/// `B̃ = P X` for a G-normal `X` with independent components in `vol`.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationSpec {
    p: Matrix,
    vol: VolatilityBox,
}

impl CorrelationSpec {
    pub fn new(p: Matrix, vol: VolatilityBox) -> Result<Self> {
        if !p.is_square() || p.rows() != vol.dim() {
            return Err(Error::Dimension {
                what: "correlation matrix",
                expected: vol.dim(),
                found: p.rows(),
            });
        }
        let cond = p.condition_number();
        if !(cond <= MAX_CONDITION) {
            return Err(Error::IllConditioned(cond));
        }
        Ok(Self { p, vol })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.p
    }

    pub fn volatility(&self) -> &VolatilityBox {
        &self.vol
    }

    /// `G̃(A) = ½ E[⟨A B̃₁, B̃₁⟩] = G(P* A P)`, restricted to diagonal `σ²`.
    pub fn g_tilde(&self, a: &Matrix) -> Result<f64> {
        let pap = self.p.transpose().matmul(a)?.matmul(&self.p)?;
        let diag = pap.diagonal();
        Ok(self.vol.g_of_diag(&diag))
    }
}

/// Entry-wise bounds `(Q̲, Q̄)` on the covariance of `B̃₁ = P X`:
/// `q̄ᵢⱼ = Σₗ (pᵢₗpⱼₗ)⁺ σ̄²ₗₗ − (pᵢₗpⱼₗ)⁻ σ̲²ₗₗ`, `q̲ᵢⱼ` the matching infimum.
pub fn correlated_bounds(spec: &CorrelationSpec) -> (Matrix, Matrix) {
    let d = spec.vol.dim();
    let (lo, hi) = (spec.vol.lower(), spec.vol.upper());
    let mut qlo = Matrix::zeros(d, d);
    let mut qhi = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let (mut a, mut b) = (0.0, 0.0);
            for l in 0..d {
                let w = spec.p.get(i, l) * spec.p.get(j, l);
                b += hi[l] * pos(w) - lo[l] * neg(w);
                a += lo[l] * pos(w) - hi[l] * neg(w);
            }
            qlo.set(i, j, a);
            qhi.set(i, j, b);
        }
    }
    (qlo, qhi)
}
