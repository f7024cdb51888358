//! Divisibility diagnostics for intermediate maps `Λ_{t+dt,t}`.
//!
//! Complete positivity is read off the spectrum of the Choi state, positivity
//! of a qubit map from the largest image norm of the Bloch sphere.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::exact::{self, DynamicalMap, TimeGrid};
use crate::linops::{self, c, CMatrix};
use crate::model::builders::pauli_ops;
use crate::model::TnpModel;

const SPHERE_POINTS: usize = 4096;
const REFINE_SEEDS: usize = 8;
const REFINE_STEPS: usize = 20;
/// Relative tolerance, in units of the spectral range, for calling an eigenvalue negative.
pub const NEGATIVITY_TOL: f64 = 1e-8;

/// `J = (1/d) Σ_ij Λ[|i⟩⟨j|] ⊗ |i⟩⟨j|`, trace one for trace-preserving maps.
pub fn choi_matrix(map: &DynamicalMap) -> CMatrix {
    let d = map.dim;
    let mut j = CMatrix::zeros(d * d, d * d);
    let scale = c(1.0 / d as f64, 0.0);
    for jj in 0..d {
        for i in 0..d {
            let col = i + d * jj;
            for b in 0..d {
                for a in 0..d {
                    j[(a * d + i, b * d + jj)] = map.matrix[(a + d * b, col)] * scale;
                }
            }
        }
    }
    j
}

/// Ascending eigenvalues of the normalized Choi state.
pub fn choi_eigenvalues(map: &DynamicalMap) -> Result<Vec<f64>> {
    if map.matrix.nrows() != map.dim * map.dim || map.matrix.ncols() != map.dim * map.dim {
        return Err(Error::DimensionMismatch {
            expected: map.dim * map.dim,
            found: map.matrix.nrows(),
        });
    }
    let j = linops::hermitian_part(&choi_matrix(map));
    Ok(linops::hermitian_eig(&j)?.eigenvalues)
}

/// True when the smallest eigenvalue is below `−NEGATIVITY_TOL · (max − min)`.
pub fn has_negative(eigenvalues: &[f64]) -> bool {
    let (Some(&lo), Some(&hi)) = (eigenvalues.first(), eigenvalues.last()) else {
        return false;
    };
    lo < -NEGATIVITY_TOL * (hi - lo).max(f64::MIN_POSITIVE)
}

/// Bloch representation `r ↦ M r + c` of a qubit map.
#[derive(Clone, Debug, PartialEq)]
pub struct BlochAffine {
    pub m: Matrix3<f64>,
    pub c: Vector3<f64>,
}

impl BlochAffine {
    pub fn apply(&self, r: &Vector3<f64>) -> Vector3<f64> {
        self.m * r + self.c
    }
}

pub fn bloch_affine(map: &DynamicalMap) -> Result<BlochAffine> {
    if map.dim != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: map.dim,
        });
    }
    let p = pauli_ops();
    let sigma = [&p.x, &p.y, &p.z];
    let mut m = Matrix3::zeros();
    let mut cv = Vector3::zeros();
    let image_id = map.apply(&p.identity)?;
    for (a, sa) in sigma.iter().enumerate() {
        cv[a] = 0.5 * linops::trace(&(*sa * &image_id)).re;
        for (b, sb) in sigma.iter().enumerate() {
            let image = map.apply(sb)?;
            m[(a, b)] = 0.5 * linops::trace(&(*sa * &image)).re;
        }
    }
    Ok(BlochAffine { m, c: cv })
}

fn fibonacci_sphere(n: usize) -> impl Iterator<Item = Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n).map(move |i| {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let r = (1.0 - z * z).sqrt();
        let phi = golden * i as f64;
        Vector3::new(r * phi.cos(), r * phi.sin(), z)
    })
}

/// `max_{‖v‖=1} ‖M v + c‖`: sphere sampling followed by ascent from the best samples.
pub fn max_bloch_norm(ba: &BlochAffine) -> f64 {
    let mut samples: Vec<(f64, Vector3<f64>)> = fibonacci_sphere(SPHERE_POINTS)
        .map(|v| (ba.apply(&v).norm(), v))
        .collect();
    samples.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = samples[0].0;
    for (_, seed) in samples.iter().take(REFINE_SEEDS) {
        let mut v = *seed;
        for _ in 0..REFINE_STEPS {
            // For a convex objective the normalized gradient never decreases it.
            let g = ba.m.transpose() * ba.apply(&v);
            let n = g.norm();
            if n < 1e-300 {
                break;
            }
            v = g / n;
            best = best.max(ba.apply(&v).norm());
        }
    }
    best
}

/// Which picture the diagnosed maps belong to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Picture {
    /// The propagator of the model as given.
    #[default]
    AsGiven,
    /// The Hilbert–Schmidt adjoint of the model's propagator.
    Adjoint,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntervalDiagnostics {
    /// Interval midpoint.
    pub t: f64,
    /// Ascending Choi eigenvalues.
    pub choi: Vec<f64>,
    pub max_bloch_norm: Option<f64>,
}

impl IntervalDiagnostics {
    pub fn min_choi(&self) -> f64 {
        self.choi[0]
    }

    pub fn cp_violated(&self) -> bool {
        has_negative(&self.choi)
    }
}

/// Diagnostics for consecutive intermediate maps of a propagator series.
pub fn report_from_maps(maps: &[DynamicalMap]) -> Result<Vec<IntervalDiagnostics>> {
    (0..maps.len().saturating_sub(1))
        .into_par_iter()
        .map(|k| {
            let inter = exact::intermediate_map(maps, k, k + 1)?;
            let choi = choi_eigenvalues(&inter)?;
            let max_bloch_norm = if inter.dim == 2 {
                Some(max_bloch_norm(&bloch_affine(&inter)?))
            } else {
                None
            };
            Ok(IntervalDiagnostics {
                t: 0.5 * (maps[k].t + maps[k + 1].t),
                choi,
                max_bloch_norm,
            })
        })
        .collect()
}

/// Per-interval diagnostics of the model's propagator on `grid`.
pub fn divisibility_report(model: &TnpModel, grid: &TimeGrid, picture: Picture) -> Result<Vec<IntervalDiagnostics>> {
    let mut maps = exact::propagate_map(model, grid)?;
    if picture == Picture::Adjoint {
        maps = maps.iter().map(DynamicalMap::adjoint).collect();
    }
    report_from_maps(&maps)
}
