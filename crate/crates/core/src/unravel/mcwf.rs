//! Single-realization entry points for jumps along the channel operators.

use super::{with_single, Method, StepContext, StepOutcome, StepProbabilities, StepSettings, Workspace};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::linops::{c, CMatrix, CVector};
use crate::model::TnpModel;

/// Outcome probabilities with reverse jumps off and the default event bound.
pub fn step_probabilities(model: &TnpModel, psi: &CVector, t: f64, dt: f64) -> Result<StepProbabilities> {
    step_probabilities_with(model, psi, t, &StepSettings::new(dt))
}

pub fn step_probabilities_with(
    model: &TnpModel,
    psi: &CVector,
    t: f64,
    settings: &StepSettings,
) -> Result<StepProbabilities> {
    with_single(model, &Method::Mcwf, psi, t, settings, None, |ws, ctx, _| {
        Ok(ws.probabilities(ctx.settings.dt))
    })
}

/// `(1 − iK dt)ψ`, normalized.
pub fn deterministic_step(model: &TnpModel, psi: &CVector, t: f64, dt: f64) -> Result<CVector> {
    let settings = StepSettings::new(dt);
    settings.validate()?;
    if psi.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: psi.len(),
        });
    }
    let g = model.at(t);
    let ctx = StepContext {
        g: &g,
        settings,
        method: &Method::Mcwf,
        reverse: None,
    };
    let mut ws = Workspace::new(model.dim(), g.channels.len());
    ws.deterministic(&ctx, psi.as_slice())?;
    Ok(CVector::from_column_slice(&ws.det))
}

/// Advances one realization using the quantile `u ∈ [0, 1)`. Reverse jumps
/// are resolved against `snapshot` when enabled.
pub fn advance_trajectory(
    model: &TnpModel,
    psi: &CVector,
    t: f64,
    settings: &StepSettings,
    snapshot: Option<&Ensemble>,
    u: f64,
) -> Result<StepOutcome> {
    with_single(model, &Method::Mcwf, psi, t, settings, snapshot, |ws, ctx, psi| {
        ws.select(ctx, psi, u)
    })
}

/// Analytic expectation of `Σ_copies |φ⟩⟨φ|` after one step from `psi`.
pub fn expected_step(
    model: &TnpModel,
    method: &Method,
    psi: &CVector,
    t: f64,
    settings: &StepSettings,
    snapshot: Option<&Ensemble>,
) -> Result<CMatrix> {
    with_single(model, method, psi, t, settings, snapshot, |ws, ctx, psi| ws.expected(ctx, psi))
}

/// Expected ensemble average `E[Σ_i N_i |ψ_i⟩⟨ψ_i|] / N_ref` after one step,
/// including source creation.
pub fn expected_ensemble_step(
    model: &TnpModel,
    method: &Method,
    ensemble: &Ensemble,
    t: f64,
    settings: &StepSettings,
) -> Result<CMatrix> {
    let d = ensemble.dim();
    let mut out = CMatrix::zeros(d, d);
    for m in ensemble.members() {
        let psi = CVector::from_column_slice(m.state);
        let e = expected_step(model, method, &psi, t, settings, Some(ensemble))?;
        out += e * c(m.multiplicity as f64, 0.0);
    }
    out *= c(1.0 / ensemble.n_ref() as f64, 0.0);
    if let Some(s) = model.source_value(t) {
        out += s * c(settings.dt, 0.0);
    }
    Ok(out)
}
