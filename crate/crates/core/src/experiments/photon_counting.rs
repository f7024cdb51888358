//! Factorial moments of the photon count of a driven thermal oscillator.
//!
//! Stage `k` unravels `dτ_k/dt = L[τ_k] + k J[τ_{k−1}]` with `τ_k(0) = 0`,
//! so its ensemble starts empty and is populated by the source built from
//! the stage `k − 1` ensemble, batch by batch.

use serde::{Deserialize, Serialize};

use super::{record_interval, EngineConfig};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::exact::{self, OperatorTrajectory, TimeGrid};
use crate::linops::{self, c, CMatrix, CVector, SparseOp};
use crate::model::builders::{tilted_lindbladian, EMISSION_CHANNEL};
use crate::model::TnpModel;
use crate::unravel::{self, SourceMode};

/// Largest population allowed in the two highest Fock levels.
pub const LEAKAGE_LIMIT: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhotonCountingConfig {
    pub gamma: f64,
    pub nbar: f64,
    pub omega: f64,
    pub phi: f64,
    pub zeta_list: Vec<f64>,
    pub k_max: usize,
    /// Fock-space dimension.
    pub n_max: usize,
    pub dt: f64,
    pub t_final: f64,
    pub n_trajectories: u64,
    pub seed: u64,
    /// Number of recorded times after `t = 0`.
    pub record_points: usize,
    pub engine: EngineConfig,
}

impl Default for PhotonCountingConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            nbar: 0.5,
            omega: 1.0,
            phi: 0.2,
            zeta_list: vec![-0.02, 0.0, 0.02],
            k_max: 4,
            n_max: 20,
            dt: 1e-2,
            t_final: 3.0,
            n_trajectories: 10_000,
            seed: 0,
            record_points: 10,
            engine: EngineConfig {
                // High Fock states have emission probabilities above the default bound.
                max_event_probability: 1.0,
                ..EngineConfig::default()
            },
        }
    }
}

impl PhotonCountingConfig {
    pub fn validate(&self) -> Result<()> {
        self.engine.validate()?;
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidParameter("gamma must be positive".into()));
        }
        if self.n_max < 3 {
            return Err(Error::InvalidParameter("n_max must be at least 3".into()));
        }
        if self.n_trajectories == 0 {
            return Err(Error::InvalidParameter("n_trajectories must be positive".into()));
        }
        if let Some(z) = self.zeta_list.iter().find(|z| !(**z > -1.0)) {
            return Err(Error::InvalidParameter(format!("zeta must exceed -1, got {z}")));
        }
        self.grid()?;
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(0.0, self.t_final, self.dt)
    }

    /// `(|0⟩ + |1⟩)/√2` in the truncated Fock space.
    pub fn initial_state(&self) -> CVector {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut v = CVector::zeros(self.n_max);
        v[0] = c(s, 0.0);
        v[1] = c(s, 0.0);
        v
    }

    pub fn base_model(&self) -> Result<TnpModel> {
        tilted_lindbladian(self.gamma, self.nbar, self.omega, self.phi, 0.0, self.n_max)
    }

    fn stage_seed(&self, stage: u64) -> u64 {
        self.seed.wrapping_add(stage.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentSeries {
    pub times: Vec<f64>,
    /// Trajectory estimate of `tr τ_0`.
    pub mu0: Vec<f64>,
    /// `moments[k − 1][i]` estimates `μ_k(t_i)`.
    pub moments: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
    pub exact: Vec<Vec<f64>>,
}

/// Fails with `CutoffLeakage` if the state puts more than `limit` of its
/// population into the two highest Fock levels at any grid time.
pub fn check_cutoff(states: &OperatorTrajectory, limit: f64) -> Result<()> {
    for x in &states.values {
        let d = x.nrows();
        let top = x[(d - 1, d - 1)].re.abs() + x[(d - 2, d - 2)].re.abs();
        if top > limit {
            return Err(Error::CutoffLeakage { population: top, limit });
        }
    }
    Ok(())
}

/// `J_b = γ_c(t) Σ_{i∈b} N_i L|ψ_i⟩⟨ψ_i|L† / N_b` per batch.
fn jump_sums(e: &Ensemble, op: &SparseOp, rate: f64) -> Vec<CMatrix> {
    e.batch_outer_sums(Some(op))
        .into_iter()
        .zip(e.batch_refs())
        .map(|(s, &nb)| s * c(rate / nb as f64, 0.0))
        .collect()
}

pub fn run_photon_counting(cfg: &PhotonCountingConfig) -> Result<MomentSeries> {
    cfg.validate()?;
    let base = cfg.base_model()?;
    let grid = cfg.grid()?;
    let psi0 = cfg.initial_state();
    let hierarchy = exact::solve_hierarchy(&base, EMISSION_CHANNEL, cfg.k_max, &linops::projector(&psi0), &grid)?;
    check_cutoff(&hierarchy.taus[0], LEAKAGE_LIMIT)?;

    let counting = &base.channels()[EMISSION_CHANNEL];
    let op = SparseOp::from_dense(&counting.op);
    let mut options = cfg.engine.run_options(record_interval(grid.steps(), cfg.record_points)?);
    options.record_states = false;
    options.count_distinct = false;

    let b = cfg.engine.n_batches;
    let initial = Ensemble::sample_initial_batched(&[(1.0, psi0)], cfg.n_trajectories, cfg.stage_seed(0), b)?;
    let mut sums: Vec<Vec<CMatrix>> = Vec::new();
    let mut observe = |k: usize, e: &Ensemble| -> Result<()> {
        if cfg.k_max > 0 {
            sums.push(jump_sums(e, &op, counting.rate.eval(grid.time(k))));
        }
        Ok(())
    };
    let (_, rec0) = unravel::run_with(&base, initial, &grid, &options, SourceMode::Model, &mut observe)?;
    let times = rec0.times();
    let mu0 = (0..times.len()).map(|i| rec0.trace(i)).collect();

    let mut series = MomentSeries {
        times,
        mu0,
        moments: Vec::new(),
        se: Vec::new(),
        exact: Vec::new(),
    };
    for k in 1..=cfg.k_max {
        let prev = std::mem::take(&mut sums);
        let kf = k as f64;
        // Trapezoidal source over each step.
        let source = move |step: usize, _t: f64, batch: usize| -> Result<Option<CMatrix>> {
            let s = (&prev[step][batch] + &prev[step + 1][batch]) * c(0.5 * kf, 0.0);
            Ok(Some(linops::hermitian_part(&s)))
        };
        let empty = Ensemble::empty(cfg.n_max, cfg.n_trajectories, cfg.stage_seed(k as u64), b);
        let mut observe = |j: usize, e: &Ensemble| -> Result<()> {
            if k < cfg.k_max {
                sums.push(jump_sums(e, &op, counting.rate.eval(grid.time(j))));
            }
            Ok(())
        };
        let (_, rec) = unravel::run_with(&base, empty, &grid, &options, SourceMode::PerBatch(&source), &mut observe)?;
        let n = rec.points.len();
        series.moments.push((0..n).map(|i| rec.trace(i)).collect());
        series.se.push((0..n).map(|i| rec.trace_se(i)).collect());
        series.exact.push(
            rec.points
                .iter()
                .map(|p| linops::trace(&hierarchy.taus[k].values[p.step]).re)
                .collect(),
        );
    }
    Ok(series)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TiltedRow {
    pub t: f64,
    pub zeta: f64,
    pub trace_est: f64,
    pub trace_se: f64,
    pub trace_exact: f64,
}

/// `tr ρ_ζ(t)` by direct unraveling of the tilted generator, per `ζ`.
pub fn run_tilted_trace(cfg: &PhotonCountingConfig) -> Result<Vec<TiltedRow>> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let psi0 = cfg.initial_state();
    let mut options = cfg.engine.run_options(record_interval(grid.steps(), cfg.record_points)?);
    options.record_states = false;
    options.count_distinct = false;
    let mut rows = Vec::new();
    for (z, &zeta) in cfg.zeta_list.iter().enumerate() {
        let model = tilted_lindbladian(cfg.gamma, cfg.nbar, cfg.omega, cfg.phi, zeta, cfg.n_max)?;
        let exact = exact::integrate(&model, &linops::projector(&psi0), &grid)?;
        let e = Ensemble::sample_initial_batched(
            &[(1.0, psi0.clone())],
            cfg.n_trajectories,
            cfg.stage_seed(1000 + z as u64),
            cfg.engine.n_batches,
        )?;
        let (_, rec) = unravel::run(&model, e, &grid, &options)?;
        for (i, p) in rec.points.iter().enumerate() {
            rows.push(TiltedRow {
                t: p.t,
                zeta,
                trace_est: rec.trace(i),
                trace_se: rec.trace_se(i),
                trace_exact: linops::trace(&exact.values[p.step]).re,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PhotonCountingConfig {
        PhotonCountingConfig {
            n_max: 14,
            t_final: 0.5,
            dt: 1e-2,
            k_max: 2,
            n_trajectories: 2000,
            record_points: 5,
            ..Default::default()
        }
    }

    #[test]
    fn small_hierarchy_matches_exact() {
        let s = run_photon_counting(&small()).unwrap();
        assert_eq!(s.times.len(), 6);
        assert!(s.mu0.iter().all(|&m| m == 1.0));
        for k in 0..2 {
            assert_eq!(s.moments[k][0], 0.0);
            for i in 1..s.times.len() {
                let err = (s.moments[k][i] - s.exact[k][i]).abs();
                assert!(err < 4.0 * s.se[k][i] + 1e-3, "k={} i={i} {} vs {}", k + 1, s.moments[k][i], s.exact[k][i]);
            }
        }
    }

    #[test]
    fn zero_tilt_keeps_trace() {
        let cfg = PhotonCountingConfig {
            zeta_list: vec![0.0],
            ..small()
        };
        for row in run_tilted_trace(&cfg).unwrap() {
            assert_eq!(row.trace_est, 1.0);
            assert!((row.trace_exact - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn tiny_cutoff_leaks() {
        let cfg = PhotonCountingConfig {
            n_max: 4,
            ..small()
        };
        assert!(matches!(run_photon_counting(&cfg), Err(Error::CutoffLeakage { .. })));
    }
}
