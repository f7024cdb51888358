//! End-to-end numerical studies: photon-counting moments and Heisenberg-picture observables.

mod heisenberg;
mod photon_counting;

use serde::{Deserialize, Serialize};

pub use heisenberg::{run_heisenberg, HeisenbergConfig, HeisenbergSeries, Observable, ObservableSeries, DRIVE_RATIO};
pub use photon_counting::{
    check_cutoff, run_photon_counting, run_tilted_trace, MomentSeries, PhotonCountingConfig, TiltedRow,
    LEAKAGE_LIMIT,
};

use crate::unravel::{Method, RunOptions};

/// Unraveling choice as written in configuration files.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    #[default]
    Mcwf,
    /// Rate operator with `C_ψ = 0`.
    Ro,
}

impl MethodKind {
    pub fn method(self) -> Method {
        match self {
            MethodKind::Mcwf => Method::Mcwf,
            MethodKind::Ro => Method::RateOperator(Default::default()),
        }
    }
}

/// Settings shared by the trajectory runs of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub method: MethodKind,
    pub reverse_jumps: bool,
    pub n_batches: usize,
    pub bootstrap_resamples: usize,
    pub max_event_probability: f64,
    pub merge_duplicates: bool,
    pub threads: Option<usize>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            method: MethodKind::Mcwf,
            reverse_jumps: false,
            n_batches: 50,
            bootstrap_resamples: 200,
            max_event_probability: crate::unravel::DEFAULT_MAX_EVENT_PROBABILITY,
            merge_duplicates: false,
            threads: None,
        }
    }
}

impl EngineConfig {
    pub fn run_options(&self, record_every: usize) -> RunOptions {
        RunOptions {
            method: self.method.method(),
            reverse_jumps: self.reverse_jumps,
            record_every,
            threads: self.threads,
            max_event_probability: self.max_event_probability,
            merge_duplicates: self.merge_duplicates,
            record_states: true,
            count_distinct: true,
            bootstrap_resamples: self.bootstrap_resamples,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.n_batches < 2 {
            return Err(crate::Error::InvalidParameter("n_batches must be at least 2".into()));
        }
        if self.threads == Some(0) {
            return Err(crate::Error::InvalidParameter("threads must be positive".into()));
        }
        Ok(())
    }
}

/// Step interval giving `points` evenly spaced records after `t = 0`.
pub(crate) fn record_interval(steps: usize, points: usize) -> crate::Result<usize> {
    if points == 0 || !steps.is_multiple_of(points) {
        return Err(crate::Error::InvalidParameter(format!(
            "{steps} steps cannot be split into {points} record intervals"
        )));
    }
    Ok(steps / points)
}
