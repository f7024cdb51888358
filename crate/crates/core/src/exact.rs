//! Deterministic reference solutions: fixed-step RK4 on density operators,
//! the counting-moment hierarchy, and dynamical maps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::{self, c, CMatrix};
use crate::model::TnpModel;

/// Condition-number limit above which a map is treated as non-invertible.
pub const MAX_CONDITION: f64 = 1e10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub t1: f64,
    pub dt: f64,
}

impl TimeGrid {
    pub fn new(t0: f64, t1: f64, dt: f64) -> Result<Self> {
        let g = Self { t0, t1, dt };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.t0.is_finite() || !self.t1.is_finite() || self.t1 < self.t0 {
            return Err(Error::InvalidParameter(format!(
                "bad time grid [{}, {}] with dt = {}",
                self.t0, self.t1, self.dt
            )));
        }
        let steps = (self.t1 - self.t0) / self.dt;
        if (steps - steps.round()).abs() > 0.5 || steps.round() > 1e9 {
            return Err(Error::InvalidParameter(format!(
                "time span {} is not a whole number of steps of {}",
                self.t1 - self.t0,
                self.dt
            )));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        ((self.t1 - self.t0) / self.dt).round() as usize
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps()).map(|k| self.time(k)).collect()
    }

    /// Index of the grid point closest to `t`.
    pub fn index_of(&self, t: f64) -> usize {
        (((t - self.t0) / self.dt).round().max(0.0) as usize).min(self.steps())
    }
}

#[derive(Clone, Debug)]
pub struct OperatorTrajectory {
    pub grid: TimeGrid,
    pub values: Vec<CMatrix>,
}

impl OperatorTrajectory {
    pub fn last(&self) -> &CMatrix {
        self.values.last().expect("trajectory has at least the initial value")
    }

    pub fn traces(&self) -> Vec<f64> {
        self.values.iter().map(|m| linops::trace(m).re).collect()
    }

    /// Linear interpolation between stored grid points, clamped at the ends.
    pub fn interpolate(&self, t: f64) -> CMatrix {
        let x = (t - self.grid.t0) / self.grid.dt;
        let n = self.values.len() - 1;
        if x <= 0.0 {
            return self.values[0].clone();
        }
        let k = x.floor() as usize;
        if k >= n {
            return self.values[n].clone();
        }
        let w = x - k as f64;
        if w < 1e-12 {
            return self.values[k].clone();
        }
        &self.values[k] * c(1.0 - w, 0.0) + &self.values[k + 1] * c(w, 0.0)
    }
}

fn rk4<F>(rho0: &CMatrix, grid: &TimeGrid, symmetrize: bool, rhs: F) -> Result<OperatorTrajectory>
where
    F: Fn(f64, &CMatrix) -> Result<CMatrix>,
{
    grid.validate()?;
    let dt = grid.dt;
    let half = c(dt / 2.0, 0.0);
    let mut values = Vec::with_capacity(grid.steps() + 1);
    let mut y = rho0.clone();
    values.push(y.clone());
    for k in 0..grid.steps() {
        let t = grid.time(k);
        let k1 = rhs(t, &y)?;
        let k2 = rhs(t + dt / 2.0, &(&y + &k1 * half))?;
        let k3 = rhs(t + dt / 2.0, &(&y + &k2 * half))?;
        let k4 = rhs(t + dt, &(&y + &k3 * c(dt, 0.0)))?;
        y += (k1 + (k2 + k3) * c(2.0, 0.0) + k4) * c(dt / 6.0, 0.0);
        if !linops::is_finite(&y) {
            return Err(Error::NonFiniteState { time: t + dt });
        }
        if symmetrize {
            y = linops::hermitian_part(&y);
        }
        values.push(y.clone());
    }
    Ok(OperatorTrajectory {
        grid: *grid,
        values,
    })
}

/// Integrates the model's master equation (source included) from `rho0`.
pub fn integrate(model: &TnpModel, rho0: &CMatrix, grid: &TimeGrid) -> Result<OperatorTrajectory> {
    linops::check_square(rho0, model.dim())?;
    let defect = linops::hermiticity_defect(rho0);
    if defect > linops::HERMITIAN_TOL * linops::max_abs(rho0).max(1.0) {
        return Err(Error::NonHermitianInput { defect });
    }
    rk4(rho0, grid, true, |t, rho| model.apply_liouvillian(t, rho))
}

#[derive(Clone, Debug)]
pub struct Hierarchy {
    /// `τ_0 … τ_kmax` on the grid.
    pub taus: Vec<OperatorTrajectory>,
}

impl Hierarchy {
    /// `μ_k(t) = tr τ_k(t)` on the grid.
    pub fn moments(&self) -> Vec<Vec<f64>> {
        self.taus.iter().map(|tr| tr.traces()).collect()
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.taus[0].grid
    }
}

/// Solves `dτ_k/dt = L[τ_k] + k J[τ_{k−1}]` with `τ_0(0) = rho0`, `τ_k(0) = 0`,
/// where `J[ρ] = γ_c L_c ρ L_c†` for the counting channel `c`.
pub fn solve_hierarchy(
    base: &TnpModel,
    counting_channel: usize,
    k_max: usize,
    rho0: &CMatrix,
    grid: &TimeGrid,
) -> Result<Hierarchy> {
    let channel = base.channels().get(counting_channel).ok_or_else(|| {
        Error::InvalidParameter(format!(
            "counting channel {counting_channel} out of range ({} channels)",
            base.channels().len()
        ))
    })?;
    let mut taus = vec![rk4(rho0, grid, true, |t, rho| base.apply_homogeneous(t, rho))?];
    let zero = CMatrix::zeros(base.dim(), base.dim());
    for k in 1..=k_max {
        let prev = &taus[k - 1];
        let next = rk4(&zero, grid, true, |t, tau| {
            let src = prev.interpolate(t);
            let jump = &channel.op * src * channel.op.adjoint() * c(k as f64 * channel.rate.eval(t), 0.0);
            Ok(base.apply_homogeneous(t, tau)? + jump)
        })?;
        taus.push(next);
    }
    Ok(Hierarchy { taus })
}

/// A linear map on `d×d` operators, stored as a `d²×d²` matrix acting on
/// column-stacked operators (`vec(A)[i + d·j] = A[(i, j)]`).
#[derive(Clone, Debug)]
pub struct DynamicalMap {
    pub dim: usize,
    pub matrix: CMatrix,
    pub t: f64,
}

impl DynamicalMap {
    pub fn identity(dim: usize, t: f64) -> Self {
        Self {
            dim,
            matrix: linops::identity(dim * dim),
            t,
        }
    }

    pub fn from_fn(dim: usize, t: f64, f: impl Fn(&CMatrix) -> CMatrix) -> Self {
        let d2 = dim * dim;
        let mut matrix = CMatrix::zeros(d2, d2);
        for col in 0..d2 {
            let mut e = CMatrix::zeros(dim, dim);
            e[(col % dim, col / dim)] = linops::ONE;
            let out = f(&e);
            matrix.column_mut(col).copy_from_slice(out.as_slice());
        }
        Self { dim, matrix, t }
    }

    pub fn apply(&self, a: &CMatrix) -> Result<CMatrix> {
        linops::check_square(a, self.dim)?;
        let v = &self.matrix * linops::CVector::from_column_slice(a.as_slice());
        Ok(CMatrix::from_column_slice(self.dim, self.dim, v.as_slice()))
    }

    /// Hilbert–Schmidt adjoint: `tr[A† Λ(B)] = tr[Λ†(A)† B]`.
    pub fn adjoint(&self) -> Self {
        Self {
            dim: self.dim,
            matrix: self.matrix.adjoint(),
            t: self.t,
        }
    }

    /// `self ∘ other`
    pub fn compose(&self, other: &DynamicalMap) -> Self {
        Self {
            dim: self.dim,
            matrix: &self.matrix * &other.matrix,
            t: self.t,
        }
    }

    /// Inverse with a 1-norm condition check.
    pub fn inverse(&self) -> Result<CMatrix> {
        let n1 = one_norm(&self.matrix);
        let inv = self
            .matrix
            .clone()
            .lu()
            .try_inverse()
            .ok_or(Error::SingularMap { condition: f64::INFINITY })?;
        let condition = n1 * one_norm(&inv);
        if !condition.is_finite() || condition > MAX_CONDITION {
            return Err(Error::SingularMap { condition });
        }
        Ok(inv)
    }
}

fn one_norm(a: &CMatrix) -> f64 {
    a.column_iter()
        .map(|col| col.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `Λ_t` at every grid point, one RK4 solve per basis operator.
pub fn propagate_map(model: &TnpModel, grid: &TimeGrid) -> Result<Vec<DynamicalMap>> {
    let d = model.dim();
    let d2 = d * d;
    let columns: Vec<OperatorTrajectory> = (0..d2)
        .into_par_iter()
        .map(|col| {
            let mut e = CMatrix::zeros(d, d);
            e[(col % d, col / d)] = linops::ONE;
            // Basis operators are not Hermitian, so no symmetrization here.
            rk4(&e, grid, false, |t, x| model.apply_homogeneous(t, x))
        })
        .collect::<Result<_>>()?;
    Ok((0..=grid.steps())
        .map(|k| {
            let mut matrix = CMatrix::zeros(d2, d2);
            for (col, traj) in columns.iter().enumerate() {
                matrix.column_mut(col).copy_from_slice(traj.values[k].as_slice());
            }
            DynamicalMap {
                dim: d,
                matrix,
                t: grid.time(k),
            }
        })
        .collect())
}

/// `Λ_{t,s} = Λ_t Λ_s^{−1}`
pub fn intermediate_map(maps: &[DynamicalMap], s: usize, t: usize) -> Result<DynamicalMap> {
    let (ms, mt) = match (maps.get(s), maps.get(t)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::InvalidParameter(format!(
                "map indices ({s}, {t}) out of range ({} maps)",
                maps.len()
            )))
        }
    };
    if s == t {
        return Ok(DynamicalMap::identity(ms.dim, mt.t));
    }
    let inv = ms.inverse()?;
    Ok(DynamicalMap {
        dim: mt.dim,
        matrix: &mt.matrix * inv,
        t: mt.t,
    })
}
