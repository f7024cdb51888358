//! Dense complex linear algebra for small Hilbert spaces.
//!
//! Matrices and vectors are plain `nalgebra` dynamic types. On top of them this
//! module adds the quantum-specific pieces the rest of the crate relies on:
//! a Hermitian eigensolver with reproducible eigenpair ordering, the
//! Hermitian / anti-Hermitian split and the positive / negative split of a
//! Hermitian operator, and a compressed operator for hot matrix-vector loops.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

/// Absolute Hermiticity tolerance used by the public helpers.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Components of a positive split lighter than this are reported absent.
pub const WEIGHT_CUTOFF: f64 = 1e-12;
/// Amplitudes below this modulus are skipped when fixing the global phase.
const PHASE_THRESHOLD: f64 = 1e-9;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Builds a matrix from rows of `(re, im)` pairs.
pub fn from_rows(rows: &[&[(f64, f64)]]) -> CMatrix {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    CMatrix::from_fn(n, m, |i, j| c(rows[i][j].0, rows[i][j].1))
}

pub fn from_real_rows(rows: &[&[f64]]) -> CMatrix {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    CMatrix::from_fn(n, m, |i, j| c(rows[i][j], 0.0))
}

pub fn basis(dim: usize, index: usize) -> CVector {
    let mut v = CVector::zeros(dim);
    v[index] = ONE;
    v
}

pub fn identity(dim: usize) -> CMatrix {
    CMatrix::identity(dim, dim)
}

/// `|a><b|`
pub fn outer(a: &CVector, b: &CVector) -> CMatrix {
    a * b.adjoint()
}

pub fn projector(psi: &CVector) -> CMatrix {
    outer(psi, psi)
}

pub fn trace(a: &CMatrix) -> Complex64 {
    a.diagonal().sum()
}

pub fn max_abs(a: &CMatrix) -> f64 {
    a.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// `max |A - A^dagger|` entrywise.
pub fn hermiticity_defect(a: &CMatrix) -> f64 {
    if !a.is_square() {
        return f64::INFINITY;
    }
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn is_hermitian(a: &CMatrix, tol: f64) -> bool {
    hermiticity_defect(a) <= tol
}

/// `(A + A^dagger) / 2`
pub fn hermitian_part(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()) * c(0.5, 0.0)
}

pub fn is_finite(a: &CMatrix) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn check_square(a: &CMatrix, dim: usize) -> Result<()> {
    if a.nrows() != dim || a.ncols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: if a.nrows() != dim { a.nrows() } else { a.ncols() },
        });
    }
    Ok(())
}

fn check_hermitian(a: &CMatrix) -> Result<()> {
    let scale = max_abs(a).max(1.0);
    let defect = hermiticity_defect(a);
    if defect > HERMITIAN_TOL * scale {
        return Err(Error::NonHermitianInput { defect });
    }
    Ok(())
}

/// Rotates `v` so that its first significant amplitude is real and positive.
pub fn fix_phase(v: &mut CVector) {
    if let Some(first) = v.iter().find(|z| z.norm() > PHASE_THRESHOLD).copied() {
        let phase = first.conj() / first.norm();
        for z in v.iter_mut() {
            *z *= phase;
        }
    }
}

fn lexicographic(a: &CVector, b: &CVector) -> Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        let ord = x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im));
        if ord != Ordering::Equal {
            return ord;
        }
    }
    Ordering::Equal
}

#[derive(Clone, Debug)]
pub struct HermitianEigen {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal, phase-fixed, matching `eigenvalues`.
    pub eigenvectors: Vec<CVector>,
}

impl HermitianEigen {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn reconstruct(&self) -> CMatrix {
        let n = self.eigenvectors.first().map_or(0, |v| v.len());
        let mut out = CMatrix::zeros(n, n);
        for (lambda, v) in self.eigenvalues.iter().zip(&self.eigenvectors) {
            out += projector(v) * c(*lambda, 0.0);
        }
        out
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }
}

/// Full spectral decomposition of a Hermitian matrix.
///
/// Eigenpairs come back in ascending eigenvalue order. Eigenvalues closer
/// than `1e-10` (relative to the spectral scale) count as tied and are
/// ordered by the lexicographic order of their phase-fixed eigenvectors,
/// so repeated calls on equal input always produce the same basis.
pub fn hermitian_eig(a: &CMatrix) -> Result<HermitianEigen> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            found: a.ncols(),
        });
    }
    check_hermitian(a)?;
    let n = a.nrows();
    let sym = hermitian_part(a);
    let eig = nalgebra::SymmetricEigen::new(sym);

    let mut pairs: Vec<(f64, CVector)> = (0..n)
        .map(|k| {
            let mut v: CVector = eig.eigenvectors.column(k).into_owned();
            let norm = v.norm();
            if norm > 0.0 {
                v /= c(norm, 0.0);
            }
            fix_phase(&mut v);
            (eig.eigenvalues[k], v)
        })
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));

    let scale = pairs
        .iter()
        .fold(0.0_f64, |acc, (l, _)| acc.max(l.abs()))
        .max(1.0);
    let tie = 1e-10 * scale;
    let mut start = 0;
    while start < pairs.len() {
        let mut end = start + 1;
        while end < pairs.len() && pairs[end].0 - pairs[end - 1].0 <= tie {
            end += 1;
        }
        if end - start > 1 {
            pairs[start..end].sort_by(|x, y| lexicographic(&x.1, &y.1));
        }
        start = end;
    }

    let (eigenvalues, eigenvectors) = pairs.into_iter().unzip();
    Ok(HermitianEigen {
        eigenvalues,
        eigenvectors,
    })
}

/// `X = X_h + i X_a` with both parts Hermitian.
pub fn split_hermitian(x: &CMatrix) -> (CMatrix, CMatrix) {
    let xd = x.adjoint();
    let h = (x + &xd) * c(0.5, 0.0);
    let a = (x - &xd) * c(0.0, -0.5);
    (h, a)
}

/// A weighted density operator `weight * rho`, with its eigen-decomposition
/// into pure states kept alongside for unraveling.
#[derive(Clone, Debug)]
pub struct WeightedState {
    pub weight: f64,
    pub rho: CMatrix,
    /// `(probability, state)` with probabilities summing to one.
    pub components: Vec<(f64, CVector)>,
}

#[derive(Clone, Debug)]
pub struct PositiveSplit {
    pub plus: Option<WeightedState>,
    pub minus: Option<WeightedState>,
}

impl PositiveSplit {
    pub fn mu_plus(&self) -> f64 {
        self.plus.as_ref().map_or(0.0, |w| w.weight)
    }

    pub fn mu_minus(&self) -> f64 {
        self.minus.as_ref().map_or(0.0, |w| w.weight)
    }

    pub fn recombine(&self, dim: usize) -> CMatrix {
        let mut out = CMatrix::zeros(dim, dim);
        if let Some(p) = &self.plus {
            out += &p.rho * c(p.weight, 0.0);
        }
        if let Some(m) = &self.minus {
            out -= &m.rho * c(m.weight, 0.0);
        }
        out
    }
}

fn weighted_from(pairs: Vec<(f64, CVector)>) -> Option<WeightedState> {
    let weight: f64 = pairs.iter().map(|(w, _)| w).sum();
    if weight < WEIGHT_CUTOFF {
        return None;
    }
    let dim = pairs[0].1.len();
    let mut rho = CMatrix::zeros(dim, dim);
    let components: Vec<(f64, CVector)> = pairs
        .into_iter()
        .map(|(w, v)| {
            rho += projector(&v) * c(w / weight, 0.0);
            (w / weight, v)
        })
        .collect();
    Some(WeightedState {
        weight,
        rho,
        components,
    })
}

/// `A = mu_plus rho_plus - mu_minus rho_minus` with unit-trace positive parts.
pub fn split_positive(a: &CMatrix) -> Result<PositiveSplit> {
    let eig = hermitian_eig(a)?;
    let mut plus = Vec::new();
    let mut minus = Vec::new();
    for (lambda, v) in eig.eigenvalues.into_iter().zip(eig.eigenvectors) {
        if lambda > 0.0 {
            plus.push((lambda, v));
        } else if lambda < 0.0 {
            minus.push((-lambda, v));
        }
    }
    // Descending weight so the dominant component comes first.
    plus.reverse();
    Ok(PositiveSplit {
        plus: weighted_from(plus),
        minus: weighted_from(minus),
    })
}

/// Pure-state decomposition of a positive operator: `(weight, state)` pairs
/// with weight above [`WEIGHT_CUTOFF`], heaviest first.
pub fn pure_decomposition(rho: &CMatrix) -> Result<Vec<(f64, CVector)>> {
    let eig = hermitian_eig(rho)?;
    let mut out: Vec<(f64, CVector)> = eig
        .eigenvalues
        .into_iter()
        .zip(eig.eigenvectors)
        .filter(|(l, _)| *l > WEIGHT_CUTOFF)
        .collect();
    out.reverse();
    Ok(out)
}

/// `<psi|A|psi>`
pub fn expectation(a: &CMatrix, psi: &CVector) -> Result<Complex64> {
    if a.ncols() != psi.len() || a.nrows() != psi.len() {
        return Err(Error::DimensionMismatch {
            expected: a.ncols(),
            found: psi.len(),
        });
    }
    Ok(psi.dotc(&(a * psi)))
}

/// Row-compressed copy of a dense operator for repeated matrix-vector products.
#[derive(Clone, Debug)]
pub struct SparseOp {
    dim: usize,
    row_start: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<Complex64>,
}

impl SparseOp {
    pub fn from_dense(a: &CMatrix) -> Self {
        let dim = a.nrows();
        let mut row_start = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut values = Vec::new();
        row_start.push(0);
        for i in 0..dim {
            for j in 0..a.ncols() {
                let z = a[(i, j)];
                if z.re != 0.0 || z.im != 0.0 {
                    cols.push(j);
                    values.push(z);
                }
            }
            row_start.push(cols.len());
        }
        Self {
            dim,
            row_start,
            cols,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn apply_into(&self, x: &[Complex64], out: &mut [Complex64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.dim) {
            let range = self.row_start[i]..self.row_start[i + 1];
            *o = self.values[range.clone()]
                .iter()
                .zip(&self.cols[range])
                .fold(ZERO, |acc, (v, &j)| acc + v * x[j]);
        }
    }

    pub fn apply(&self, x: &CVector) -> CVector {
        let mut out = CVector::zeros(self.dim);
        self.apply_into(x.as_slice(), out.as_mut_slice());
        out
    }

    /// `<x|A|x>`
    pub fn expectation(&self, x: &[Complex64]) -> Complex64 {
        let mut acc = ZERO;
        for i in 0..self.dim {
            let mut row = ZERO;
            for k in self.row_start[i]..self.row_start[i + 1] {
                row += self.values[k] * x[self.cols[k]];
            }
            acc += x[i].conj() * row;
        }
        acc
    }
}

pub fn norm_sqr(x: &[Complex64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum()
}
