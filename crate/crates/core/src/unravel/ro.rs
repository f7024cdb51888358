//! Single-realization entry points for the rate-operator unraveling.

use super::{gauge_vector, rate_operator_matrix, with_single, Method, RoStrategy, StepOutcome, StepProbabilities, StepSettings};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::linops::{self, CMatrix, CVector, HermitianEigen, ZERO};
use crate::model::TnpModel;

/// `R_ψ` and its spectral decomposition.
#[derive(Clone, Debug)]
pub struct RateOperator {
    pub matrix: CMatrix,
    pub eigen: HermitianEigen,
}

pub fn rate_operator(model: &TnpModel, psi: &CVector, t: f64, strategy: &RoStrategy) -> Result<RateOperator> {
    if psi.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: psi.len(),
        });
    }
    let g = model.at(t);
    let gauge = gauge_vector(strategy, psi.as_slice(), t, model.dim())?;
    let mut scratch = vec![ZERO; model.dim()];
    let matrix = rate_operator_matrix(&g, psi.as_slice(), gauge.as_deref(), &mut scratch);
    let eigen = linops::hermitian_eig(&matrix)?;
    Ok(RateOperator { matrix, eigen })
}

/// Probabilities per eigenbranch of `R_ψ` (ascending eigenvalue order).
pub fn ro_step_probabilities(
    model: &TnpModel,
    strategy: &RoStrategy,
    psi: &CVector,
    t: f64,
    settings: &StepSettings,
) -> Result<StepProbabilities> {
    let method = Method::RateOperator(strategy.clone());
    with_single(model, &method, psi, t, settings, None, |ws, ctx, _| {
        Ok(ws.probabilities(ctx.settings.dt))
    })
}

pub fn ro_advance_trajectory(
    model: &TnpModel,
    strategy: &RoStrategy,
    psi: &CVector,
    t: f64,
    settings: &StepSettings,
    snapshot: Option<&Ensemble>,
    u: f64,
) -> Result<StepOutcome> {
    let method = Method::RateOperator(strategy.clone());
    with_single(model, &method, psi, t, settings, snapshot, |ws, ctx, psi| ws.select(ctx, psi, u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::{basis, c, projector};
    use crate::model::builders::pauli_ops;
    use crate::model::JumpChannel;
    use crate::unravel::mcwf::expected_step;

    fn plus() -> CVector {
        CVector::from_vec(vec![c(1.0, 0.0), c(1.0, 0.0)]) / c(2f64.sqrt(), 0.0)
    }

    #[test]
    fn single_channel_rate_operator_is_rank_one() {
        let p = pauli_ops();
        let model = TnpModel::new(2).with_channel(JumpChannel::new("decay", 1.0, p.minus.clone()));
        let r = rate_operator(&model, &plus(), 0.0, &RoStrategy::Zero).unwrap();
        assert!((r.matrix.clone() - projector(&basis(2, 0)) * c(0.5, 0.0)).norm() < 1e-14);
        assert!((r.eigen.max() - 0.5).abs() < 1e-14);
        assert!(r.eigen.min().abs() < 1e-14);
        let pr = ro_step_probabilities(&model, &RoStrategy::Zero, &plus(), 0.0, &StepSettings::new(0.01)).unwrap();
        assert!((pr.p_jump_total() - 0.005).abs() < 1e-14);
    }

    #[test]
    fn gauge_keeps_trace_and_expectation() {
        let p = pauli_ops();
        let model = TnpModel::new(2)
            .with_hamiltonian(p.x.clone() * c(0.4, 0.0))
            .with_channel(JumpChannel::new("decay", 1.0, p.minus.clone()))
            .with_channel(JumpChannel::new("dephase", 0.5, p.z.clone()));
        let gauge = RoStrategy::user(|_, _| pauli_ops().identity * c(0.3, 0.0));
        let psi = plus();
        let r0 = rate_operator(&model, &psi, 0.0, &RoStrategy::Zero).unwrap();
        let r1 = rate_operator(&model, &psi, 0.0, &gauge).unwrap();
        assert!((linops::trace(&r1.matrix).re - linops::trace(&r0.matrix).re - 0.3).abs() < 1e-13);
        let settings = StepSettings::new(1e-3);
        for method in [Method::RateOperator(RoStrategy::Zero), Method::RateOperator(gauge)] {
            let e = expected_step(&model, &method, &psi, 0.0, &settings, None).unwrap();
            let rho = projector(&psi);
            let want = &rho + model.apply_liouvillian(0.0, &rho).unwrap() * c(1e-3, 0.0);
            assert!((e - want).norm() < 5e-6);
        }
    }

    #[test]
    fn jumps_land_on_eigenvectors() {
        let p = pauli_ops();
        let model = TnpModel::new(2).with_channel(JumpChannel::new("decay", 1.0, p.minus.clone()));
        let out =
            ro_advance_trajectory(&model, &RoStrategy::Zero, &plus(), 0.0, &StepSettings::new(0.01), None, 0.001)
                .unwrap();
        match out {
            StepOutcome::Jump { state, .. } => assert!((state[0].norm() - 1.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }
}
