//! Piecewise-deterministic unravelings with replication and disappearance.
//!
//! Each realization in state `ψ` evolves over one step `dt` by exactly one of
//! the following outcomes: a forward jump, a reverse jump (negative rates,
//! reverse mode only), disappearance, replication into two copies of the
//! deterministic state, or deterministic evolution
//! `ψ ↦ (1 − iK dt)ψ / ‖(1 − iK dt)ψ‖`.
//! Disappearance and replication happen with probabilities
//! `max(0, ∓⟨Γ_L − Γ⟩_ψ dt)` so that the expected count follows the trace.

pub mod mcwf;
pub mod ro;
mod reverse;
mod run;
mod source;

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::linops::{self, c, CMatrix, CVector, ZERO};
use crate::model::GeneratorAt;

pub use reverse::{ro_reverse_jump_probability, reverse_jump_probability, reverse_sources, ReverseSource};
pub(crate) use reverse::ReverseTable;
pub use run::{run, run_with, RecordPoint, RunOptions, RunRecord, SourceMode};
pub use source::{source_creation_events, SourceSpectrum};

/// Eigenbranches of the rate operator below this magnitude are dropped.
pub const EIGEN_PRUNE: f64 = 1e-14;
/// Default bound on the per-step event probability `Σ p_j + p_d`.
pub const DEFAULT_MAX_EVENT_PROBABILITY: f64 = 0.1;
const MIN_NORM: f64 = 1e-14;

/// User-supplied `C_ψ`, evaluated as `f(ψ, t)`.
pub type GaugeFn = Arc<dyn Fn(&CVector, f64) -> CMatrix + Send + Sync>;

/// The freedom `C_ψ` of the rate-operator unraveling.
#[derive(Clone, Default)]
pub enum RoStrategy {
    #[default]
    Zero,
    User(GaugeFn),
}

impl RoStrategy {
    pub fn user(f: impl Fn(&CVector, f64) -> CMatrix + Send + Sync + 'static) -> Self {
        RoStrategy::User(Arc::new(f))
    }
}

impl fmt::Debug for RoStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RoStrategy::Zero => write!(f, "Zero"),
            RoStrategy::User(_) => write!(f, "User(..)"),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub enum Method {
    /// Jumps along the channel operators `L_j`.
    #[default]
    Mcwf,
    /// Jumps to eigenstates of the state-dependent rate operator.
    RateOperator(RoStrategy),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSettings {
    pub dt: f64,
    pub reverse_jumps: bool,
    /// Upper bound on `Σ p_j + p_rev + p_d`; exceeding it raises `StepTooLarge`.
    pub max_event_probability: f64,
}

impl StepSettings {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            reverse_jumps: false,
            max_event_probability: DEFAULT_MAX_EVENT_PROBABILITY,
        }
    }

    pub fn with_reverse_jumps(mut self, on: bool) -> Self {
        self.reverse_jumps = on;
        self
    }

    pub fn with_max_event_probability(mut self, limit: f64) -> Self {
        self.max_event_probability = limit;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.max_event_probability > 0.0) {
            return Err(Error::InvalidParameter(
                "max_event_probability must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome probabilities for one realization over one step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepProbabilities {
    /// Per branch (channel for MCWF, eigenvector for RO), signed.
    pub p_jump: Vec<f64>,
    /// `1 − Σ p_j − |⟨Γ_L − Γ⟩_ψ| dt`
    pub p_det: f64,
    pub p_d: f64,
    pub p_c: f64,
    pub dt: f64,
}

impl StepProbabilities {
    pub fn p_jump_total(&self) -> f64 {
        self.p_jump.iter().sum()
    }

    /// `Σ p_j + p_det + p_d + p_c`, equal to one.
    pub fn total(&self) -> f64 {
        self.p_jump_total() + self.p_det + self.p_d + self.p_c
    }

    /// `p_T = p_det + p_J + 2 p_c = 1 + ⟨Γ_L − Γ⟩_ψ dt`
    pub fn p_t(&self) -> f64 {
        self.p_det + self.p_jump_total() + 2.0 * self.p_c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome {
    Deterministic(CVector),
    Jump { branch: usize, state: CVector },
    Vanish,
    /// Both the realization and its new copy end in this state.
    Replicate(CVector),
    ReverseJump { branch: usize, state: CVector },
    SourceCreation { index: usize, state: CVector },
}

impl StepOutcome {
    /// `(multiplicity, state)` pairs produced by this outcome.
    pub fn states(&self) -> Vec<(u64, &CVector)> {
        match self {
            StepOutcome::Deterministic(s)
            | StepOutcome::Jump { state: s, .. }
            | StepOutcome::ReverseJump { state: s, .. }
            | StepOutcome::SourceCreation { state: s, .. } => vec![(1, s)],
            StepOutcome::Replicate(s) => vec![(2, s)],
            StepOutcome::Vanish => vec![],
        }
    }
}

/// Everything fixed during one step.
pub(crate) struct StepContext<'a> {
    pub g: &'a GeneratorAt,
    pub settings: StepSettings,
    pub method: &'a Method,
    pub reverse: Option<&'a ReverseTable>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Forward {
    pub branch: usize,
    pub slot: usize,
    pub p: f64,
}

/// Scratch buffers and per-state results, reused across members.
pub(crate) struct Workspace {
    dim: usize,
    /// Flattened candidate jump targets (unnormalized for MCWF).
    pub targets: Vec<Complex64>,
    pub target_norms: Vec<f64>,
    pub forward: Vec<Forward>,
    /// `(entry index in the reverse table, probability)`
    pub reverse: Vec<(usize, f64)>,
    /// Signed forward probabilities of every branch, for reporting.
    pub signed: Vec<f64>,
    pub x: f64,
    pub p_d: f64,
    pub p_c: f64,
    pub p_det_draw: f64,
    /// `C_ψ ψ` for the rate-operator deterministic map.
    gauge: Option<Vec<Complex64>>,
    pub det: Vec<Complex64>,
    scratch: Vec<Complex64>,
    pub counts: Vec<u64>,
}

impl Workspace {
    pub fn new(dim: usize, n_channels: usize) -> Self {
        let slots = n_channels.max(dim);
        Self {
            dim,
            targets: vec![ZERO; slots * dim],
            target_norms: vec![0.0; slots],
            forward: Vec::with_capacity(slots),
            reverse: Vec::new(),
            signed: Vec::with_capacity(slots),
            x: 0.0,
            p_d: 0.0,
            p_c: 0.0,
            p_det_draw: 1.0,
            gauge: None,
            det: vec![ZERO; dim],
            scratch: vec![ZERO; dim],
            counts: Vec::new(),
        }
    }

    pub fn target(&self, slot: usize) -> &[Complex64] {
        &self.targets[slot * self.dim..(slot + 1) * self.dim]
    }

    /// Fills in all outcome probabilities for a realization in `psi`.
    pub fn evaluate(&mut self, ctx: &StepContext, psi: &[Complex64]) -> Result<()> {
        self.forward.clear();
        self.reverse.clear();
        self.signed.clear();
        self.gauge = None;
        let g = ctx.g;
        let dt = ctx.settings.dt;
        let d = self.dim;
        match ctx.method {
            Method::Mcwf => {
                for (j, ch) in g.channels.iter().enumerate() {
                    let slot = &mut self.targets[j * d..(j + 1) * d];
                    ch.sparse.apply_into(psi, slot);
                    let n = linops::norm_sqr(slot);
                    self.target_norms[j] = n.sqrt();
                    let p = ch.rate * n * dt;
                    self.signed.push(p);
                    if p > 0.0 {
                        self.forward.push(Forward { branch: j, slot: j, p });
                    } else if p < 0.0 && !ctx.settings.reverse_jumps {
                        return Err(Error::NegativeProbability {
                            branch: j,
                            probability: p,
                            time: g.t,
                        });
                    }
                }
            }
            Method::RateOperator(strategy) => {
                let gauge = gauge_vector(strategy, psi, g.t, d)?;
                let eig = rate_operator_eigen(g, psi, gauge.as_deref(), &mut self.scratch)?;
                for (alpha, (lambda, chi)) in eig.eigenvalues.iter().zip(&eig.eigenvectors).enumerate() {
                    let lambda = if lambda.abs() < EIGEN_PRUNE { 0.0 } else { *lambda };
                    let p = lambda * dt;
                    self.signed.push(p);
                    if p > 0.0 {
                        self.targets[alpha * d..(alpha + 1) * d].copy_from_slice(chi.as_slice());
                        self.target_norms[alpha] = 1.0;
                        self.forward.push(Forward {
                            branch: alpha,
                            slot: alpha,
                            p,
                        });
                    } else if p < 0.0 && !ctx.settings.reverse_jumps {
                        return Err(Error::NegativeProbability {
                            branch: alpha,
                            probability: p,
                            time: g.t,
                        });
                    }
                }
                self.gauge = gauge;
            }
        }
        self.x = g.trace_rate(psi);
        self.p_d = (-self.x * dt).max(0.0);
        self.p_c = (self.x * dt).max(0.0);
        if let Some(table) = ctx.reverse {
            table.lookup(psi, &mut self.reverse);
        }
        let jumps: f64 = self.forward.iter().map(|f| f.p).sum();
        let rev: f64 = self.reverse.iter().map(|r| r.1).sum();
        let events = jumps + rev + self.p_d;
        if events > ctx.settings.max_event_probability {
            return Err(Error::StepTooLarge {
                probability: events,
                limit: ctx.settings.max_event_probability,
                time: g.t,
            });
        }
        let det = 1.0 - events - self.p_c;
        if det < -1e-12 {
            return Err(Error::StepTooLarge {
                probability: events + self.p_c,
                limit: 1.0,
                time: g.t,
            });
        }
        self.p_det_draw = det.max(0.0);
        Ok(())
    }

    /// The probabilities of the last evaluated state as reported quantities.
    pub fn probabilities(&self, dt: f64) -> StepProbabilities {
        let p_jump = self.signed.clone();
        let p_det = 1.0 - p_jump.iter().sum::<f64>() - self.x.abs() * dt;
        StepProbabilities {
            p_jump,
            p_det,
            p_d: self.p_d,
            p_c: self.p_c,
            dt,
        }
    }

    /// Writes the normalized deterministic successor of `psi` into `self.det`.
    pub fn deterministic(&mut self, ctx: &StepContext, psi: &[Complex64]) -> Result<()> {
        let dt = ctx.settings.dt;
        ctx.g.effective_sparse.apply_into(psi, &mut self.scratch);
        let mi_dt = c(0.0, -dt);
        for ((d, p), s) in self.det.iter_mut().zip(psi).zip(&self.scratch) {
            *d = p + mi_dt * s;
        }
        if let Some(u) = &self.gauge {
            for (d, u) in self.det.iter_mut().zip(u) {
                *d -= u * (dt / 2.0);
            }
        }
        let norm = linops::norm_sqr(&self.det).sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFiniteState { time: ctx.g.t + dt });
        }
        if norm < MIN_NORM {
            return Err(Error::ZeroNorm(norm));
        }
        let inv = 1.0 / norm;
        for z in self.det.iter_mut() {
            *z *= inv;
        }
        Ok(())
    }

    /// Normalized copy of forward target `slot`.
    pub fn jump_state(&self, slot: usize) -> CVector {
        let inv = 1.0 / self.target_norms[slot];
        CVector::from_iterator(self.dim, self.target(slot).iter().map(|z| z * inv))
    }

    /// Splits `m` realizations over the outcome categories, in the order
    /// `[forward | reverse | p_d or p_c | deterministic]`.
    pub fn split<R: Rng>(&mut self, m: u64, rng: &mut R) {
        let n_cat = self.forward.len() + self.reverse.len() + 2;
        self.counts.clear();
        self.counts.resize(n_cat, 0);
        let vr = self.p_d.max(self.p_c);
        let probs = self
            .forward
            .iter()
            .map(|f| f.p)
            .chain(self.reverse.iter().map(|r| r.1))
            .chain(std::iter::once(vr));
        if m == 1 {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (k, p) in probs.enumerate() {
                acc += p;
                if u < acc {
                    self.counts[k] = 1;
                    return;
                }
            }
            self.counts[n_cat - 1] = 1;
            return;
        }
        let mut left = m;
        let mut mass = 1.0;
        for (k, p) in probs.enumerate() {
            if left == 0 {
                break;
            }
            if p <= 0.0 {
                continue;
            }
            let q = (p / mass).clamp(0.0, 1.0);
            let n = if q >= 1.0 {
                left
            } else {
                Binomial::new(left, q).map_or(0, |b| b.sample(rng))
            };
            self.counts[k] = n;
            left -= n;
            mass -= p;
        }
        self.counts[n_cat - 1] = left;
    }

    /// Outcome for a single realization given a quantile `u ∈ [0, 1)`.
    pub fn select(&mut self, ctx: &StepContext, psi: &[Complex64], u: f64) -> Result<StepOutcome> {
        let mut acc = 0.0;
        for f in self.forward.clone() {
            acc += f.p;
            if u < acc {
                return Ok(StepOutcome::Jump {
                    branch: f.branch,
                    state: self.jump_state(f.slot),
                });
            }
        }
        for &(entry, p) in &self.reverse {
            acc += p;
            if u < acc {
                let table = ctx.reverse.expect("reverse entries imply a table");
                return Ok(StepOutcome::ReverseJump {
                    branch: table.branch(entry),
                    state: CVector::from_column_slice(table.source_state(entry)),
                });
            }
        }
        acc += self.p_d.max(self.p_c);
        if u < acc {
            if self.p_d > 0.0 {
                return Ok(StepOutcome::Vanish);
            }
            self.deterministic(ctx, psi)?;
            return Ok(StepOutcome::Replicate(CVector::from_column_slice(&self.det)));
        }
        self.deterministic(ctx, psi)?;
        Ok(StepOutcome::Deterministic(CVector::from_column_slice(&self.det)))
    }

    /// `Σ_outcomes P(outcome) Σ_copies |φ⟩⟨φ|` for the evaluated state.
    pub fn expected(&mut self, ctx: &StepContext, psi: &[Complex64]) -> Result<CMatrix> {
        let d = self.dim;
        let mut out = CMatrix::zeros(d, d);
        for f in &self.forward {
            let v = self.jump_state(f.slot);
            out += linops::projector(&v) * c(f.p, 0.0);
        }
        if let Some(table) = ctx.reverse {
            for &(entry, p) in &self.reverse {
                let v = CVector::from_column_slice(table.source_state(entry));
                out += linops::projector(&v) * c(p, 0.0);
            }
        }
        self.deterministic(ctx, psi)?;
        let det = CVector::from_column_slice(&self.det);
        out += linops::projector(&det) * c(self.p_det_draw + 2.0 * self.p_c, 0.0);
        Ok(out)
    }
}

/// `C_ψ ψ`, or `None` for the zero strategy.
fn gauge_vector(strategy: &RoStrategy, psi: &[Complex64], t: f64, d: usize) -> Result<Option<Vec<Complex64>>> {
    match strategy {
        RoStrategy::Zero => Ok(None),
        RoStrategy::User(f) => {
            let cm = f(&CVector::from_column_slice(psi), t);
            linops::check_square(&cm, d)?;
            if !linops::is_finite(&cm) {
                return Err(Error::NonFiniteState { time: t });
            }
            let u = &cm * CVector::from_column_slice(psi);
            Ok(Some(u.as_slice().to_vec()))
        }
    }
}

/// `R_ψ = Σ_j γ_j L_j|ψ⟩⟨ψ|L_j† + ½(C_ψ|ψ⟩⟨ψ| + |ψ⟩⟨ψ|C_ψ†)`
pub(crate) fn rate_operator_matrix(
    g: &GeneratorAt,
    psi: &[Complex64],
    gauge: Option<&[Complex64]>,
    scratch: &mut [Complex64],
) -> CMatrix {
    let d = psi.len();
    let mut r = CMatrix::zeros(d, d);
    for ch in &g.channels {
        if ch.rate == 0.0 {
            continue;
        }
        ch.sparse.apply_into(psi, scratch);
        for j in 0..d {
            let s = scratch[j].conj() * ch.rate;
            for i in 0..d {
                r[(i, j)] += scratch[i] * s;
            }
        }
    }
    if let Some(u) = gauge {
        for j in 0..d {
            for i in 0..d {
                r[(i, j)] += (u[i] * psi[j].conj() + psi[i] * u[j].conj()) * 0.5;
            }
        }
    }
    linops::hermitian_part(&r)
}

/// Evaluates a single realization and hands the prepared workspace to `f`.
pub(crate) fn with_single<T>(
    model: &crate::model::TnpModel,
    method: &Method,
    psi: &CVector,
    t: f64,
    settings: &StepSettings,
    snapshot: Option<&crate::ensemble::Ensemble>,
    f: impl FnOnce(&mut Workspace, &StepContext, &[Complex64]) -> Result<T>,
) -> Result<T> {
    settings.validate()?;
    if psi.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: psi.len(),
        });
    }
    let g = model.at(t);
    let table = match snapshot {
        Some(e) if settings.reverse_jumps => Some(ReverseTable::build(&g, method, e, settings.dt)?),
        _ => None,
    };
    let ctx = StepContext {
        g: &g,
        settings: *settings,
        method,
        reverse: table.as_ref(),
    };
    let mut ws = Workspace::new(model.dim(), g.channels.len());
    ws.evaluate(&ctx, psi.as_slice())?;
    f(&mut ws, &ctx, psi.as_slice())
}

fn rate_operator_eigen(
    g: &GeneratorAt,
    psi: &[Complex64],
    gauge: Option<&[Complex64]>,
    scratch: &mut [Complex64],
) -> Result<linops::HermitianEigen> {
    linops::hermitian_eig(&rate_operator_matrix(g, psi, gauge, scratch))
}
