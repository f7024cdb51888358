//! Unraveling of observables evolving under a Heisenberg-picture generator.
//!
//! An observable `X = μ⁺ρ⁺ − μ⁻ρ⁻` is split into weighted density operators,
//! each unraveled by its own ensemble; `X(t)` is recombined from the ensemble
//! averages and paired with a fixed Schrödinger-picture state.

use serde::{Deserialize, Serialize};

use super::{record_interval, EngineConfig};
use crate::config::MatrixSpec;
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::exact::{self, TimeGrid};
use crate::linops::{self, c, CMatrix};
use crate::model::builders::{heisenberg_qubit, pauli_ops};
use crate::model::{number_or_tagged, TimeScalar, TnpModel};
use crate::unravel;

/// Required ratio `|ε(t)| / max γ_±(t)` over the grid.
pub const DRIVE_RATIO: f64 = 10.0;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Observable {
    pub label: String,
    pub op: MatrixSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeisenbergConfig {
    #[serde(deserialize_with = "number_or_tagged")]
    pub eps: TimeScalar,
    #[serde(deserialize_with = "number_or_tagged")]
    pub gamma_minus: TimeScalar,
    #[serde(deserialize_with = "number_or_tagged")]
    pub gamma_plus: TimeScalar,
    pub observables: Vec<Observable>,
    /// Bloch vector of the state paired with `X(t)`.
    pub bloch_state: [f64; 3],
    pub dt: f64,
    pub t_final: f64,
    /// Realizations per positive component.
    pub n_trajectories: u64,
    pub seed: u64,
    pub record_points: usize,
    pub engine: EngineConfig,
}

impl Default for HeisenbergConfig {
    fn default() -> Self {
        Self {
            eps: TimeScalar::constant(20.0),
            gamma_minus: TimeScalar::exponential(2.0, -3.0),
            gamma_plus: TimeScalar::constant(0.1),
            observables: vec![
                Observable {
                    label: "x".into(),
                    op: MatrixSpec::named("sigma_x"),
                },
                Observable {
                    label: "z".into(),
                    op: MatrixSpec::named("sigma_z"),
                },
            ],
            bloch_state: [0.6, 0.0, 0.8],
            dt: 1e-3,
            t_final: 3.0,
            n_trajectories: 20_000,
            seed: 0,
            record_points: 30,
            engine: EngineConfig::default(),
        }
    }
}

impl HeisenbergConfig {
    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(0.0, self.t_final, self.dt)
    }

    pub fn model(&self) -> Result<TnpModel> {
        heisenberg_qubit(self.eps.clone(), self.gamma_minus.clone(), self.gamma_plus.clone())
    }

    /// `(𝟙 + r·σ)/2`
    pub fn paired_state(&self) -> Result<CMatrix> {
        let [x, y, z] = self.bloch_state;
        if !(x * x + y * y + z * z <= 1.0 + 1e-12) {
            return Err(Error::InvalidParameter("bloch_state must lie in the unit ball".into()));
        }
        let p = pauli_ops();
        Ok((p.identity + p.x * c(x, 0.0) + p.y * c(y, 0.0) + p.z * c(z, 0.0)) * c(0.5, 0.0))
    }

    pub fn validate(&self) -> Result<()> {
        self.engine.validate()?;
        for s in [&self.eps, &self.gamma_minus, &self.gamma_plus] {
            s.validate()?;
        }
        if self.n_trajectories == 0 {
            return Err(Error::InvalidParameter("n_trajectories must be positive".into()));
        }
        if self.observables.is_empty() {
            return Err(Error::InvalidParameter("at least one observable is required".into()));
        }
        self.paired_state()?;
        let grid = self.grid()?;
        for t in grid.times() {
            let drive = self.eps.eval(t).abs();
            let rate = self.gamma_minus.eval(t).max(self.gamma_plus.eval(t));
            if drive < DRIVE_RATIO * rate * (1.0 - 1e-12) {
                return Err(Error::InvalidParameter(format!(
                    "drive |ε| = {drive} is not strong against rate {rate} at t = {t}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservableSeries {
    pub label: String,
    /// `tr[X(t) ρ]` with its standard error and the exact value.
    pub est: Vec<f64>,
    pub se: Vec<f64>,
    pub exact: Vec<f64>,
    pub trace_est: Vec<f64>,
    pub trace_se: Vec<f64>,
    pub trace_exact: Vec<f64>,
    /// Distinct states summed over the component ensembles.
    pub distinct: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeisenbergSeries {
    pub times: Vec<f64>,
    pub observables: Vec<ObservableSeries>,
}

pub fn run_heisenberg(cfg: &HeisenbergConfig) -> Result<HeisenbergSeries> {
    cfg.validate()?;
    let model = cfg.model()?;
    let grid = cfg.grid()?;
    let paired = cfg.paired_state()?;
    let options = cfg.engine.run_options(record_interval(grid.steps(), cfg.record_points)?);
    let mut times = Vec::new();
    let mut out = Vec::new();
    for (o, obs) in cfg.observables.iter().enumerate() {
        let x0 = obs.op.resolve()?;
        linops::check_square(&x0, 2)?;
        let (h, a) = linops::split_hermitian(&x0);
        let defect = linops::max_abs(&a);
        if defect > linops::HERMITIAN_TOL {
            return Err(Error::NonHermitianInput { defect });
        }
        let split = linops::split_positive(&h)?;
        let exact_x = exact::integrate(&model, &h, &grid)?;

        let parts = [(1.0, &split.plus), (-1.0, &split.minus)];
        let mut series: Option<ObservableSeries> = None;
        for (p, (sign, part)) in parts.iter().enumerate() {
            let Some(ws) = part else { continue };
            let seed = cfg.seed.wrapping_add(((2 * o + p) as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let e = Ensemble::sample_initial_batched(&ws.components, cfg.n_trajectories, seed, cfg.engine.n_batches)?;
            let (_, rec) = unravel::run(&model, e, &grid, &options)?;
            let w = sign * ws.weight;
            let s = series.get_or_insert_with(|| {
                let n = rec.points.len();
                times = rec.times();
                ObservableSeries {
                    label: obs.label.clone(),
                    est: vec![0.0; n],
                    se: vec![0.0; n],
                    exact: Vec::new(),
                    trace_est: vec![0.0; n],
                    trace_se: vec![0.0; n],
                    trace_exact: Vec::new(),
                    distinct: vec![0; n],
                }
            });
            for i in 0..rec.points.len() {
                let (v, se) = rec
                    .functional(i, |st| linops::trace(&(st * &paired)).re)
                    .expect("states are recorded");
                s.est[i] += w * v;
                s.se[i] += (w * se).powi(2);
                s.trace_est[i] += w * rec.trace(i);
                s.trace_se[i] += (w * rec.trace_se(i)).powi(2);
                s.distinct[i] += rec.points[i].distinct.unwrap_or(0);
            }
        }
        let mut s = match series {
            Some(s) => s,
            None => {
                // X(0) = 0 stays zero.
                let n = cfg.record_points + 1;
                times = (0..n).map(|i| grid.time(i * grid.steps() / cfg.record_points)).collect();
                ObservableSeries {
                    label: obs.label.clone(),
                    est: vec![0.0; n],
                    se: vec![0.0; n],
                    exact: Vec::new(),
                    trace_est: vec![0.0; n],
                    trace_se: vec![0.0; n],
                    trace_exact: Vec::new(),
                    distinct: vec![0; n],
                }
            }
        };
        for v in s.se.iter_mut().chain(s.trace_se.iter_mut()) {
            *v = v.sqrt();
        }
        for &t in &times {
            let x = &exact_x.values[grid.index_of(t)];
            s.exact.push(linops::trace(&(x * &paired)).re);
            s.trace_exact.push(linops::trace(x).re);
        }
        out.push(s);
    }
    Ok(HeisenbergSeries { times, observables: out })
}
