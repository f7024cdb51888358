//! Creation of new realizations from an inhomogeneous source term.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::linops::{self, CMatrix, CVector};

/// Eigenvalues above this (negative) bound are clamped to zero.
pub const SOURCE_NEGATIVE_TOL: f64 = 1e-6;

/// Spectral decomposition `S = Σ_i η_i |ξ_i⟩⟨ξ_i|` of a source term.
#[derive(Clone, Debug)]
pub struct SourceSpectrum {
    pub rates: Vec<f64>,
    pub states: Vec<CVector>,
}

impl SourceSpectrum {
    pub fn new(source: &CMatrix) -> Result<Self> {
        let eig = linops::hermitian_eig(source)?;
        if eig.min() < -SOURCE_NEGATIVE_TOL {
            return Err(Error::NegativeSource(eig.min()));
        }
        let mut rates = Vec::new();
        let mut states = Vec::new();
        for (eta, xi) in eig.eigenvalues.into_iter().zip(eig.eigenvectors) {
            if eta > 0.0 {
                rates.push(eta);
                states.push(xi);
            }
        }
        Ok(Self { rates, states })
    }

    /// `(eigen index, copies)` with copies drawn from `Poisson(η_i n_ref dt)`.
    pub fn draw<R: Rng>(&self, n_ref: u64, dt: f64, rng: &mut R) -> Vec<(usize, u64)> {
        let mut out = Vec::new();
        for (i, eta) in self.rates.iter().enumerate() {
            let mean = eta * n_ref as f64 * dt;
            if !(mean > 0.0) {
                continue;
            }
            let k = match Poisson::new(mean) {
                Ok(p) => p.sample(rng) as u64,
                Err(_) => mean.round() as u64,
            };
            if k > 0 {
                out.push((i, k));
            }
        }
        out
    }
}

/// New realizations created by `source` over one step: each eigenstate
/// `ξ_i` receives `Poisson(η_i n_ref dt)` copies.
pub fn source_creation_events<R: Rng>(
    source: &CMatrix,
    n_ref: u64,
    dt: f64,
    rng: &mut R,
) -> Result<Vec<(CVector, u64)>> {
    let spec = SourceSpectrum::new(source)?;
    Ok(spec
        .draw(n_ref, dt, rng)
        .into_iter()
        .map(|(i, k)| (spec.states[i].clone(), k))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::{basis, c, projector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_source_creates_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(source_creation_events(&CMatrix::zeros(2, 2), 100, 0.1, &mut rng)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn poisson_mean_matches_rate() {
        let eta = 3.0 / (1e4 * 1e-3);
        let s = projector(&basis(2, 0)) * c(eta, 0.0);
        let spec = SourceSpectrum::new(&s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut total = 0u64;
        for _ in 0..10_000 {
            for (i, k) in spec.draw(10_000, 1e-3, &mut rng) {
                assert!((spec.states[i].clone() - basis(2, 0)).norm() < 1e-12);
                total += k;
            }
        }
        let mean = total as f64 / 1e4;
        assert!((mean - 3.0).abs() < 0.06, "{mean}");
    }

    #[test]
    fn negative_source_rejected() {
        let s = projector(&basis(2, 0)) * c(-1e-3, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            source_creation_events(&s, 10, 0.1, &mut rng),
            Err(Error::NegativeSource(_))
        ));
        let tiny = projector(&basis(2, 0)) * c(-1e-9, 0.0);
        assert!(source_creation_events(&tiny, 10, 0.1, &mut rng).unwrap().is_empty());
    }
}
