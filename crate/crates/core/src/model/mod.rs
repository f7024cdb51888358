//! Trace-nonpreserving Lindblad-like generators.
//!
//! A [`TnpModel`] describes
//!
//! ```text
//! dρ/dt = −i[H, ρ] + Σ_j γ_j L_j ρ L_j† − ½{Γ, ρ} + S(t)
//! ```
//!
//! where `Γ` is an arbitrary Hermitian operator. The trace is preserved
//! exactly when `Γ = Γ_L = Σ_j γ_j L_j† L_j`; [`Decay::Lindblad`] selects
//! that case symbolically so the trace-preserving branch stays exact.

pub mod builders;
mod scalar;

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linops::{self, c, CMatrix, SparseOp, HERMITIAN_TOL};

pub use scalar::{number_or_tagged, TimeScalar};

/// A time-dependent operator.
#[derive(Clone)]
pub enum OpSchedule {
    Constant(CMatrix),
    /// `Σ_k f_k(t) A_k`
    Terms(Vec<(TimeScalar, CMatrix)>),
    Custom(Arc<dyn Fn(f64) -> CMatrix + Send + Sync>),
}

impl OpSchedule {
    pub fn zero(dim: usize) -> Self {
        OpSchedule::Constant(CMatrix::zeros(dim, dim))
    }

    pub fn scaled(coeff: TimeScalar, op: CMatrix) -> Self {
        OpSchedule::Terms(vec![(coeff, op)])
    }

    pub fn custom(f: impl Fn(f64) -> CMatrix + Send + Sync + 'static) -> Self {
        OpSchedule::Custom(Arc::new(f))
    }

    pub fn eval(&self, t: f64) -> CMatrix {
        match self {
            OpSchedule::Constant(m) => m.clone(),
            OpSchedule::Terms(terms) => {
                let n = terms.first().map_or(0, |(_, m)| m.nrows());
                let mut out = CMatrix::zeros(n, n);
                for (f, m) in terms {
                    out += m * c(f.eval(t), 0.0);
                }
                out
            }
            OpSchedule::Custom(f) => f(t),
        }
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        match self {
            OpSchedule::Constant(m) => linops::check_square(m, dim),
            OpSchedule::Terms(terms) => {
                for (f, m) in terms {
                    f.validate()?;
                    linops::check_square(m, dim)?;
                }
                Ok(())
            }
            OpSchedule::Custom(f) => linops::check_square(&f(0.0), dim),
        }
    }
}

impl fmt::Debug for OpSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpSchedule::Constant(m) => write!(f, "Constant({}x{})", m.nrows(), m.ncols()),
            OpSchedule::Terms(t) => write!(f, "Terms({:?})", t.iter().map(|(s, _)| s).collect::<Vec<_>>()),
            OpSchedule::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl From<CMatrix> for OpSchedule {
    fn from(m: CMatrix) -> Self {
        OpSchedule::Constant(m)
    }
}

#[derive(Clone, Debug)]
pub struct JumpChannel {
    pub label: String,
    pub rate: TimeScalar,
    pub op: CMatrix,
}

impl JumpChannel {
    pub fn new(label: impl Into<String>, rate: impl Into<TimeScalar>, op: CMatrix) -> Self {
        Self {
            label: label.into(),
            rate: rate.into(),
            op,
        }
    }
}

/// The anticommutator operator `Γ`.
#[derive(Clone, Debug)]
pub enum Decay {
    /// `Γ = Γ_L`: trace preserving.
    Lindblad,
    /// `Γ = Γ_L + extra(t)`
    LindbladPlus(OpSchedule),
    Explicit(OpSchedule),
}

/// Inhomogeneous term added to the generator; must stay positive semidefinite.
#[derive(Clone, Debug)]
pub struct SourceTerm {
    pub value: OpSchedule,
}

#[derive(Clone, Debug)]
pub struct TnpModel {
    dim: usize,
    hamiltonian: OpSchedule,
    channels: Vec<JumpChannel>,
    decay: Decay,
    source: Option<SourceTerm>,
}

impl TnpModel {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            hamiltonian: OpSchedule::zero(dim),
            channels: Vec::new(),
            decay: Decay::Lindblad,
            source: None,
        }
    }

    pub fn with_hamiltonian(mut self, h: impl Into<OpSchedule>) -> Self {
        self.hamiltonian = h.into();
        self
    }

    pub fn with_channel(mut self, channel: JumpChannel) -> Self {
        self.channels.push(channel);
        self
    }

    pub fn with_decay(mut self, decay: Decay) -> Self {
        self.decay = decay;
        self
    }

    pub fn with_source(mut self, source: Option<SourceTerm>) -> Self {
        self.source = source;
        self
    }

    /// Checks dimensions and Hermiticity of `H(0)` and `Γ(0)`.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        self.hamiltonian.check_dim(self.dim)?;
        for ch in &self.channels {
            ch.rate.validate()?;
            linops::check_square(&ch.op, self.dim)?;
        }
        match &self.decay {
            Decay::Lindblad => {}
            Decay::LindbladPlus(s) | Decay::Explicit(s) => s.check_dim(self.dim)?,
        }
        if let Some(src) = &self.source {
            src.value.check_dim(self.dim)?;
        }
        let h0 = self.hamiltonian(0.0);
        let defect = linops::hermiticity_defect(&h0);
        if defect > HERMITIAN_TOL * linops::max_abs(&h0).max(1.0) {
            return Err(Error::NonHermitianInput { defect });
        }
        let g0 = self.gamma(0.0);
        let defect = linops::hermiticity_defect(&g0);
        if defect > HERMITIAN_TOL * linops::max_abs(&g0).max(1.0) {
            return Err(Error::NonHermitianInput { defect });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn channels(&self) -> &[JumpChannel] {
        &self.channels
    }

    pub fn decay(&self) -> &Decay {
        &self.decay
    }

    pub fn source(&self) -> Option<&SourceTerm> {
        self.source.as_ref()
    }

    pub fn is_trace_preserving(&self) -> bool {
        matches!(self.decay, Decay::Lindblad)
    }

    pub fn hamiltonian(&self, t: f64) -> CMatrix {
        self.hamiltonian.eval(t)
    }

    pub fn rates(&self, t: f64) -> Vec<f64> {
        self.channels.iter().map(|ch| ch.rate.eval(t)).collect()
    }

    /// `Γ_L(t) = Σ_j γ_j(t) L_j† L_j`
    pub fn gamma_l(&self, t: f64) -> CMatrix {
        let mut out = CMatrix::zeros(self.dim, self.dim);
        for ch in &self.channels {
            out += ch.op.adjoint() * &ch.op * c(ch.rate.eval(t), 0.0);
        }
        out
    }

    pub fn gamma(&self, t: f64) -> CMatrix {
        match &self.decay {
            Decay::Lindblad => self.gamma_l(t),
            Decay::LindbladPlus(extra) => self.gamma_l(t) + extra.eval(t),
            Decay::Explicit(g) => g.eval(t),
        }
    }

    /// `Γ_L − Γ`, exactly zero for [`Decay::Lindblad`].
    pub fn trace_generator(&self, t: f64) -> CMatrix {
        match &self.decay {
            Decay::Lindblad => CMatrix::zeros(self.dim, self.dim),
            Decay::LindbladPlus(extra) => -extra.eval(t),
            Decay::Explicit(g) => self.gamma_l(t) - g.eval(t),
        }
    }

    /// `K = H − (i/2) Γ`
    pub fn effective_hamiltonian(&self, t: f64) -> CMatrix {
        self.hamiltonian(t) - self.gamma(t) * c(0.0, 0.5)
    }

    pub fn source_value(&self, t: f64) -> Option<CMatrix> {
        self.source.as_ref().map(|s| s.value.eval(t))
    }

    /// The homogeneous part of the generator applied to `rho`.
    pub fn apply_homogeneous(&self, t: f64, rho: &CMatrix) -> Result<CMatrix> {
        linops::check_square(rho, self.dim)?;
        let k = self.effective_hamiltonian(t);
        // −i[H,ρ] − ½{Γ,ρ} = −i(Kρ − ρK†)
        let mut out = (&k * rho - rho * k.adjoint()) * c(0.0, -1.0);
        for ch in &self.channels {
            let rate = ch.rate.eval(t);
            if rate != 0.0 {
                out += &ch.op * rho * ch.op.adjoint() * c(rate, 0.0);
            }
        }
        Ok(out)
    }

    /// `L[ρ] + S(t)`
    pub fn apply_liouvillian(&self, t: f64, rho: &CMatrix) -> Result<CMatrix> {
        let mut out = self.apply_homogeneous(t, rho)?;
        if let Some(s) = self.source_value(t) {
            out += s;
        }
        Ok(out)
    }

    /// `tr[(Γ_L − Γ) ρ]`
    pub fn trace_derivative(&self, t: f64, rho: &CMatrix) -> Result<f64> {
        linops::check_square(rho, self.dim)?;
        if self.is_trace_preserving() {
            return Ok(0.0);
        }
        Ok(linops::trace(&(self.trace_generator(t) * rho)).re)
    }

    /// Evaluates every operator at `t` for the trajectory inner loops.
    pub fn at(&self, t: f64) -> GeneratorAt {
        let hamiltonian = self.hamiltonian(t);
        let gamma = self.gamma(t);
        let effective = &hamiltonian - &gamma * c(0.0, 0.5);
        let channels = self
            .channels
            .iter()
            .map(|ch| ChannelAt {
                rate: ch.rate.eval(t),
                op: ch.op.clone(),
                sparse: SparseOp::from_dense(&ch.op),
            })
            .collect();
        let trace_generator = if self.is_trace_preserving() {
            None
        } else {
            let g = self.trace_generator(t);
            Some(SparseOp::from_dense(&g))
        };
        GeneratorAt {
            t,
            dim: self.dim,
            effective_sparse: SparseOp::from_dense(&effective),
            hamiltonian,
            gamma,
            effective,
            channels,
            trace_generator,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ChannelAt {
    pub rate: f64,
    pub op: CMatrix,
    pub sparse: SparseOp,
}

/// A model frozen at one instant.
#[derive(Clone, Debug)]
pub struct GeneratorAt {
    pub t: f64,
    pub dim: usize,
    pub hamiltonian: CMatrix,
    pub gamma: CMatrix,
    pub effective: CMatrix,
    pub effective_sparse: SparseOp,
    pub channels: Vec<ChannelAt>,
    /// `Γ_L − Γ`; `None` when the model is trace preserving.
    pub trace_generator: Option<SparseOp>,
}

impl GeneratorAt {
    /// `<ψ|Γ_L − Γ|ψ>`, exactly zero in the trace-preserving case.
    pub fn trace_rate(&self, psi: &[Complex64]) -> f64 {
        self.trace_generator
            .as_ref()
            .map_or(0.0, |g| g.expectation(psi).re)
    }
}
