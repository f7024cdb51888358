use num_complex::Complex64;

use super::{Decay, JumpChannel, OpSchedule, TimeScalar, TnpModel};
use crate::error::{Error, Result};
use crate::linops::{c, from_rows, identity, CMatrix};

/// Qubit operators in the basis (|0⟩, |1⟩) with σ_z|0⟩ = |0⟩.
#[derive(Clone, Debug)]
pub struct PauliOps {
    pub identity: CMatrix,
    pub x: CMatrix,
    pub y: CMatrix,
    pub z: CMatrix,
    /// σ_− = |0⟩⟨1|
    pub minus: CMatrix,
    /// σ_+ = |1⟩⟨0|
    pub plus: CMatrix,
}

pub fn pauli_ops() -> PauliOps {
    let o = (0.0, 0.0);
    let l = (1.0, 0.0);
    PauliOps {
        identity: identity(2),
        x: from_rows(&[&[o, l], &[l, o]]),
        y: from_rows(&[&[o, (0.0, -1.0)], &[(0.0, 1.0), o]]),
        z: from_rows(&[&[l, o], &[o, (-1.0, 0.0)]]),
        minus: from_rows(&[&[o, l], &[o, o]]),
        plus: from_rows(&[&[o, o], &[l, o]]),
    }
}

/// Truncated ladder operators on the Fock states |0⟩ … |dim−1⟩.
#[derive(Clone, Debug)]
pub struct BosonOps {
    pub annihilation: CMatrix,
    pub creation: CMatrix,
    pub number: CMatrix,
}

pub fn boson_ops(dim: usize) -> Result<BosonOps> {
    if dim < 2 {
        return Err(Error::InvalidParameter(format!(
            "Fock cutoff must be at least 2, got {dim}"
        )));
    }
    let mut a = CMatrix::zeros(dim, dim);
    for n in 1..dim {
        a[(n - 1, n)] = c((n as f64).sqrt(), 0.0);
    }
    let adag = a.adjoint();
    let number = &adag * &a;
    Ok(BosonOps {
        annihilation: a,
        creation: adag,
        number,
    })
}

/// Index of the photon-emission channel in [`tilted_lindbladian`].
pub const EMISSION_CHANNEL: usize = 0;

/// Thermal oscillator with a coherent drive and counting field `zeta` on the
/// emission channel: `L + ζJ` with `J[ρ] = γ(n̄+1) a ρ a†`.
pub fn tilted_lindbladian(
    gamma: f64,
    nbar: f64,
    omega: f64,
    phi: f64,
    zeta: f64,
    dim: usize,
) -> Result<TnpModel> {
    if !(nbar >= 0.0) {
        return Err(Error::InvalidParameter(format!("nbar must be non-negative, got {nbar}")));
    }
    if !(zeta > -1.0) {
        return Err(Error::InvalidParameter(format!("zeta must exceed -1, got {zeta}")));
    }
    if !gamma.is_finite() || !omega.is_finite() || !phi.is_finite() {
        return Err(Error::InvalidParameter("oscillator parameters must be finite".into()));
    }
    let b = boson_ops(dim)?;
    let phase = Complex64::from_polar(1.0, 2.0 * phi);
    let h = (&b.annihilation * phase + &b.creation * phase.conj()) * c(omega / 2.0, 0.0);
    let emission = gamma * (nbar + 1.0);
    let mut model = TnpModel::new(dim)
        .with_hamiltonian(h)
        .with_channel(JumpChannel::new("emission", emission * (1.0 + zeta), b.annihilation.clone()))
        .with_channel(JumpChannel::new("absorption", gamma * nbar, b.creation.clone()));
    if zeta != 0.0 {
        // Keep Γ at the untilted Γ_L.
        let extra = &b.number * c(-zeta * emission, 0.0);
        model = model.with_decay(Decay::LindbladPlus(extra.into()));
    }
    Ok(model)
}

/// Adjoint generator of a driven, damped qubit acting on observables:
/// `dX/dt = i[εσ_x, X] + Σ γ_± (σ_∓† X σ_∓ − ½{σ_∓†σ_∓, X})`.
///
/// The operator slot takes `σ_+` for the `γ_−` channel, and `Γ` is the
/// Schrödinger-picture decay operator, which differs from `Γ_L` here.
pub fn heisenberg_qubit(
    eps: TimeScalar,
    gamma_minus: TimeScalar,
    gamma_plus: TimeScalar,
) -> Result<TnpModel> {
    for s in [&eps, &gamma_minus, &gamma_plus] {
        s.validate()?;
    }
    let p = pauli_ops();
    let excited = &p.plus * &p.minus;
    let ground = &p.minus * &p.plus;
    let model = TnpModel::new(2)
        .with_hamiltonian(OpSchedule::scaled(eps, -p.x.clone()))
        .with_channel(JumpChannel::new("minus", gamma_minus.clone(), p.plus.clone()))
        .with_channel(JumpChannel::new("plus", gamma_plus.clone(), p.minus.clone()))
        .with_decay(Decay::Explicit(OpSchedule::Terms(vec![
            (gamma_minus, excited),
            (gamma_plus, ground),
        ])));
    Ok(model)
}

/// The Schrödinger-picture generator whose adjoint is [`heisenberg_qubit`].
pub fn schrodinger_qubit(
    eps: TimeScalar,
    gamma_minus: TimeScalar,
    gamma_plus: TimeScalar,
) -> Result<TnpModel> {
    for s in [&eps, &gamma_minus, &gamma_plus] {
        s.validate()?;
    }
    let p = pauli_ops();
    Ok(TnpModel::new(2)
        .with_hamiltonian(OpSchedule::scaled(eps, p.x.clone()))
        .with_channel(JumpChannel::new("minus", gamma_minus, p.minus.clone()))
        .with_channel(JumpChannel::new("plus", gamma_plus, p.plus.clone())))
}
