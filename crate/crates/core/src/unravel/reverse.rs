//! Reverse jumps for branches with negative rates.
//!
//! A negative branch `j` acting on a source state `ψ′` with
//! `ψ ∝ L_j ψ′` moves each realization in `ψ` back to `ψ′` with probability
//! `|γ_j| ‖L_j ψ′‖² (N_ψ′ / N_ψ) dt` (rate-operator form:
//! `|λ_α^{ψ′}| (N_ψ′ / N_ψ) dt` when `ψ` is the eigenvector `χ_α^{ψ′}`).

use std::collections::HashMap;

use num_complex::Complex64;

use super::{gauge_vector, rate_operator_eigen, Method, EIGEN_PRUNE};
use crate::ensemble::{CanonicalKey, Ensemble};
use crate::error::{Error, Result};
use crate::linops::{self, CMatrix, CVector, ZERO};
use crate::model::GeneratorAt;

/// `|γ| ‖L ψ′‖² (N_ψ′ / N_ψ) dt`, zero when the rate is non-negative or
/// either count vanishes.
pub fn reverse_jump_probability(
    rate: f64,
    source: &CVector,
    op: &CMatrix,
    n_target: u64,
    n_source: u64,
    dt: f64,
) -> f64 {
    if rate >= 0.0 || n_target == 0 || n_source == 0 {
        return 0.0;
    }
    let n = (op * source).norm_squared();
    rate.abs() * n * n_source as f64 / n_target as f64 * dt
}

/// `|λ| (N_ψ′ / N_ψ) dt` for a negative rate-operator eigenvalue of the source.
pub fn ro_reverse_jump_probability(lambda: f64, n_target: u64, n_source: u64, dt: f64) -> f64 {
    if lambda >= 0.0 || n_target == 0 || n_source == 0 {
        return 0.0;
    }
    lambda.abs() * n_source as f64 / n_target as f64 * dt
}

#[derive(Clone, Debug)]
struct Entry {
    branch: usize,
    source: Vec<Complex64>,
    /// `|rate| ‖L ψ′‖² N_ψ′ dt`; divide by `N_ψ` for a probability.
    weight: f64,
}

/// Per-step immutable view of the ensemble used to resolve reverse jumps.
#[derive(Clone, Debug, Default)]
pub(crate) struct ReverseTable {
    counts: HashMap<CanonicalKey, u64>,
    by_target: HashMap<CanonicalKey, Vec<usize>>,
    entries: Vec<Entry>,
    /// Total reverse weight whose target state has no realizations.
    pub unmatched: f64,
}

impl ReverseTable {
    pub fn build(g: &GeneratorAt, method: &Method, ensemble: &Ensemble, dt: f64) -> Result<Self> {
        let snapshot = ensemble.count_snapshot();
        let mut sources: Vec<(&CanonicalKey, u64, usize)> =
            snapshot.iter().map(|(k, (n, i))| (k, *n, *i)).collect();
        // Deterministic entry order independent of hash iteration.
        sources.sort_by_key(|s| s.2);
        let mut table = ReverseTable {
            counts: snapshot.iter().map(|(k, (n, _))| (k.clone(), *n)).collect(),
            ..Default::default()
        };
        let d = ensemble.dim();
        let mut phi = vec![ZERO; d];
        for (_, count, idx) in sources {
            let psi = ensemble.member(idx).state;
            match method {
                Method::Mcwf => {
                    for (j, ch) in g.channels.iter().enumerate() {
                        if ch.rate >= 0.0 {
                            continue;
                        }
                        ch.sparse.apply_into(psi, &mut phi);
                        let n = linops::norm_sqr(&phi);
                        if n <= 0.0 {
                            continue;
                        }
                        let inv = 1.0 / n.sqrt();
                        let target: Vec<Complex64> = phi.iter().map(|z| z * inv).collect();
                        table.insert(&target, j, psi, ch.rate.abs() * n * count as f64 * dt);
                    }
                }
                Method::RateOperator(strategy) => {
                    let gauge = gauge_vector(strategy, psi, g.t, d)?;
                    let eig = rate_operator_eigen(g, psi, gauge.as_deref(), &mut phi)?;
                    for (alpha, (lambda, chi)) in eig.eigenvalues.iter().zip(&eig.eigenvectors).enumerate() {
                        if *lambda < -EIGEN_PRUNE {
                            table.insert(chi.as_slice(), alpha, psi, lambda.abs() * count as f64 * dt);
                        }
                    }
                }
            }
        }
        Ok(table)
    }

    fn insert(&mut self, target: &[Complex64], branch: usize, source: &[Complex64], weight: f64) {
        let key = CanonicalKey::of(target);
        if !self.counts.contains_key(&key) {
            self.unmatched += weight;
            return;
        }
        self.by_target.entry(key).or_default().push(self.entries.len());
        self.entries.push(Entry {
            branch,
            source: source.to_vec(),
            weight,
        });
    }

    /// Appends `(entry, probability)` for every reverse jump out of `psi`.
    pub fn lookup(&self, psi: &[Complex64], out: &mut Vec<(usize, f64)>) {
        if self.entries.is_empty() {
            return;
        }
        let key = CanonicalKey::of(psi);
        let (Some(list), Some(&n_psi)) = (self.by_target.get(&key), self.counts.get(&key)) else {
            return;
        };
        for &e in list {
            out.push((e, self.entries[e].weight / n_psi as f64));
        }
    }

    pub fn branch(&self, entry: usize) -> usize {
        self.entries[entry].branch
    }

    pub fn source_state(&self, entry: usize) -> &[Complex64] {
        &self.entries[entry].source
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReverseSource {
    pub branch: usize,
    pub state: CVector,
    pub probability: f64,
}

/// All reverse jumps available to a realization in `psi` given the ensemble
/// counts; `NoSourceState` when there is none.
pub fn reverse_sources(
    g: &GeneratorAt,
    method: &Method,
    ensemble: &Ensemble,
    psi: &CVector,
    dt: f64,
) -> Result<Vec<ReverseSource>> {
    let table = ReverseTable::build(g, method, ensemble, dt)?;
    let mut found = Vec::new();
    table.lookup(psi.as_slice(), &mut found);
    if found.is_empty() {
        return Err(Error::NoSourceState);
    }
    Ok(found
        .into_iter()
        .map(|(e, p)| ReverseSource {
            branch: table.branch(e),
            state: CVector::from_column_slice(table.source_state(e)),
            probability: p,
        })
        .collect())
}
