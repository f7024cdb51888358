//! JSON run configuration.
//!
//! Operators are builtin names or rows of `[re, im]` pairs, time-dependent
//! coefficients are plain numbers or tagged [`TimeScalar`] objects.

mod matrix;

use serde::{Deserialize, Serialize};

pub use matrix::{MatrixSpec, VectorSpec};

use crate::divisibility::Picture;
use crate::error::{Error, Result};
use crate::exact::TimeGrid;
use crate::experiments::{EngineConfig, HeisenbergConfig, MethodKind, Observable, PhotonCountingConfig};
use crate::linops::{self, CMatrix};
use crate::model::builders::{heisenberg_qubit, schrodinger_qubit, tilted_lindbladian};
use crate::model::{Decay, JumpChannel, OpSchedule, SourceTerm, TimeScalar, TnpModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Exact,
    Moments,
    Heisenberg,
    Divisibility,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Exact => "exact",
            Command::Moments => "moments",
            Command::Heisenberg => "heisenberg",
            Command::Divisibility => "divisibility",
        }
    }
}

/// A coefficient: a plain number or a tagged time function.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarSpec {
    Number(f64),
    Function(TimeScalar),
}

impl ScalarSpec {
    pub fn resolve(&self) -> Result<TimeScalar> {
        let s = match self {
            ScalarSpec::Number(v) => TimeScalar::constant(*v),
            ScalarSpec::Function(f) => f.clone(),
        };
        s.validate()?;
        Ok(s)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub coeff: ScalarSpec,
    pub op: MatrixSpec,
}

/// A constant operator or a sum of `coeff(t) · op` terms.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OperatorSpec {
    Terms(Vec<TermSpec>),
    Constant(MatrixSpec),
}

impl OperatorSpec {
    pub fn resolve(&self, dim: usize) -> Result<OpSchedule> {
        match self {
            OperatorSpec::Constant(m) => {
                let m = m.resolve()?;
                linops::check_square(&m, dim)?;
                Ok(OpSchedule::Constant(m))
            }
            OperatorSpec::Terms(terms) => {
                let mut out = Vec::with_capacity(terms.len());
                for t in terms {
                    let m = t.op.resolve()?;
                    linops::check_square(&m, dim)?;
                    out.push((t.coeff.resolve()?, m));
                }
                Ok(OpSchedule::Terms(out))
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub label: String,
    pub rate: ScalarSpec,
    pub op: MatrixSpec,
}

/// The decay operator `Γ`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaSpec {
    /// `Γ = Γ_L` (trace preserving).
    #[default]
    Lindblad,
    /// `Γ = Γ_L + extra`
    LindbladPlus(OperatorSpec),
    Explicit(OperatorSpec),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    General {
        dim: usize,
        #[serde(default)]
        hamiltonian: Option<OperatorSpec>,
        #[serde(default)]
        channels: Vec<ChannelSpec>,
        #[serde(default)]
        gamma: GammaSpec,
        #[serde(default)]
        source: Option<OperatorSpec>,
    },
    HeisenbergQubit {
        eps: ScalarSpec,
        gamma_minus: ScalarSpec,
        gamma_plus: ScalarSpec,
    },
    SchrodingerQubit {
        eps: ScalarSpec,
        gamma_minus: ScalarSpec,
        gamma_plus: ScalarSpec,
    },
    Tilted {
        gamma: f64,
        nbar: f64,
        omega: f64,
        phi: f64,
        zeta: f64,
        n_max: usize,
    },
}

impl ModelSpec {
    pub fn build(&self) -> Result<TnpModel> {
        let model = match self {
            ModelSpec::General {
                dim,
                hamiltonian,
                channels,
                gamma,
                source,
            } => {
                let d = *dim;
                if d == 0 {
                    return Err(Error::Config("model dim must be positive".into()));
                }
                let mut m = TnpModel::new(d);
                if let Some(h) = hamiltonian {
                    m = m.with_hamiltonian(h.resolve(d)?);
                }
                for ch in channels {
                    let op = ch.op.resolve()?;
                    linops::check_square(&op, d)?;
                    m = m.with_channel(JumpChannel::new(ch.label.clone(), ch.rate.resolve()?, op));
                }
                m = m.with_decay(match gamma {
                    GammaSpec::Lindblad => Decay::Lindblad,
                    GammaSpec::LindbladPlus(op) => Decay::LindbladPlus(op.resolve(d)?),
                    GammaSpec::Explicit(op) => Decay::Explicit(op.resolve(d)?),
                });
                if let Some(s) = source {
                    m = m.with_source(Some(SourceTerm { value: s.resolve(d)? }));
                }
                m
            }
            ModelSpec::HeisenbergQubit {
                eps,
                gamma_minus,
                gamma_plus,
            } => heisenberg_qubit(eps.resolve()?, gamma_minus.resolve()?, gamma_plus.resolve()?)?,
            ModelSpec::SchrodingerQubit {
                eps,
                gamma_minus,
                gamma_plus,
            } => schrodinger_qubit(eps.resolve()?, gamma_minus.resolve()?, gamma_plus.resolve()?)?,
            ModelSpec::Tilted {
                gamma,
                nbar,
                omega,
                phi,
                zeta,
                n_max,
            } => tilted_lindbladian(*gamma, *nbar, *omega, *phi, *zeta, *n_max)?,
        };
        model.validate()?;
        Ok(model)
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DivisibilitySpec {
    /// Diagnose the adjoint of the model's propagator instead of the propagator.
    pub adjoint: bool,
}

impl DivisibilitySpec {
    pub fn picture(&self) -> Picture {
        if self.adjoint {
            Picture::Adjoint
        } else {
            Picture::AsGiven
        }
    }
}

/// Initial condition: a pure state or a density operator.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    State(VectorSpec),
    Density(MatrixSpec),
}

impl InitialSpec {
    pub fn resolve(&self, dim: usize) -> Result<CMatrix> {
        let rho = match self {
            InitialSpec::State(v) => {
                let v = v.resolve()?;
                linops::projector(&v)
            }
            InitialSpec::Density(m) => m.resolve()?,
        };
        linops::check_square(&rho, dim)?;
        let defect = linops::hermiticity_defect(&rho);
        if defect > linops::HERMITIAN_TOL {
            return Err(Error::NonHermitianInput { defect });
        }
        let eig = linops::hermitian_eig(&rho)?;
        if eig.min() < -1e-10 {
            return Err(Error::Config("initial density operator must be positive".into()));
        }
        Ok(rho)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub t_final: Option<f64>,
    #[serde(default)]
    pub n_trajectories: Option<u64>,
    #[serde(default)]
    pub method: Option<MethodKind>,
    #[serde(default)]
    pub reverse_jumps: Option<bool>,
    /// Record every this many steps (`simulate`, `exact`).
    #[serde(default)]
    pub record_every: Option<usize>,
    #[serde(default)]
    pub engine: Option<EngineConfig>,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub initial: Option<InitialSpec>,
    /// Observables reported by `simulate` and `exact`.
    #[serde(default)]
    pub observables: Vec<Observable>,
    #[serde(default)]
    pub photon_counting: Option<PhotonCountingConfig>,
    #[serde(default)]
    pub heisenberg: Option<HeisenbergConfig>,
    #[serde(default)]
    pub divisibility: Option<DivisibilitySpec>,
}

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_T_FINAL: f64 = 1.0;
pub const DEFAULT_N_TRAJECTORIES: u64 = 10_000;

impl RunConfig {
    /// Parses and validates a configuration document.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn require_model(&self) -> Result<&ModelSpec> {
        self.model
            .as_ref()
            .ok_or_else(|| Error::Config(format!("'{}' needs a 'model'", self.command.name())))
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(0.0, self.t_final.unwrap_or(DEFAULT_T_FINAL), self.dt.unwrap_or(DEFAULT_DT))
    }

    pub fn engine(&self) -> EngineConfig {
        let mut e = self.engine.clone().unwrap_or_default();
        if let Some(m) = self.method {
            e.method = m;
        }
        if let Some(r) = self.reverse_jumps {
            e.reverse_jumps = r;
        }
        e
    }

    /// Model and initial density operator for `simulate` and `exact`.
    pub fn model_and_initial(&self) -> Result<(TnpModel, CMatrix)> {
        let model = self.require_model()?.build()?;
        let initial = self
            .initial
            .as_ref()
            .ok_or_else(|| Error::Config(format!("'{}' needs an 'initial' state", self.command.name())))?;
        let rho = initial.resolve(model.dim())?;
        Ok((model, rho))
    }

    pub fn observables(&self, dim: usize) -> Result<Vec<(String, CMatrix)>> {
        self.observables
            .iter()
            .map(|o| {
                let m = o.op.resolve()?;
                linops::check_square(&m, dim)?;
                Ok((o.label.clone(), m))
            })
            .collect()
    }

    /// Photon-counting settings with top-level overrides applied.
    pub fn photon_counting(&self) -> PhotonCountingConfig {
        let mut c = self.photon_counting.clone().unwrap_or_default();
        c.seed = self.seed;
        if let Some(v) = self.dt {
            c.dt = v;
        }
        if let Some(v) = self.t_final {
            c.t_final = v;
        }
        if let Some(v) = self.n_trajectories {
            c.n_trajectories = v;
        }
        if let Some(m) = self.method {
            c.engine.method = m;
        }
        if let Some(r) = self.reverse_jumps {
            c.engine.reverse_jumps = r;
        }
        c
    }

    /// Heisenberg settings with top-level overrides applied.
    pub fn heisenberg(&self) -> HeisenbergConfig {
        let mut c = self.heisenberg.clone().unwrap_or_default();
        c.seed = self.seed;
        if let Some(v) = self.dt {
            c.dt = v;
        }
        if let Some(v) = self.t_final {
            c.t_final = v;
        }
        if let Some(v) = self.n_trajectories {
            c.n_trajectories = v;
        }
        if let Some(m) = self.method {
            c.engine.method = m;
        }
        if let Some(r) = self.reverse_jumps {
            c.engine.reverse_jumps = r;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(n) = self.n_trajectories {
            if n == 0 {
                return Err(Error::Config("n_trajectories must be positive".into()));
            }
        }
        if self.record_every == Some(0) {
            return Err(Error::Config("record_every must be positive".into()));
        }
        match self.command {
            Command::Simulate | Command::Exact => {
                let (model, _) = self.model_and_initial()?;
                self.observables(model.dim())?;
                let grid = self.grid()?;
                if self.command == Command::Simulate {
                    self.engine().validate()?;
                    if let Some(k) = self.record_every {
                        if k > grid.steps() {
                            return Err(Error::Config("record_every exceeds the number of steps".into()));
                        }
                    }
                }
            }
            Command::Divisibility => {
                self.require_model()?.build()?;
                self.grid()?;
            }
            Command::Moments => self.photon_counting().validate()?,
            Command::Heisenberg => {
                let h = self.heisenberg();
                h.validate()?;
                for o in &h.observables {
                    o.op.resolve()?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DECAY: &str = r#"{
        "command": "simulate",
        "seed": 7,
        "dt": 0.001,
        "t_final": 0.1,
        "n_trajectories": 100,
        "model": {
            "kind": "general",
            "dim": 2,
            "channels": [{"label": "decay", "rate": 1.0, "op": "sigma_minus"}],
            "gamma": {"lindblad_plus": "identity"}
        },
        "initial": {"state": [[1, 0], [1, 0]]},
        "observables": [{"label": "z", "op": "sigma_z"}]
    }"#;

    #[test]
    fn parses_general_model() {
        let cfg = RunConfig::from_json(DECAY).unwrap();
        let (model, rho) = cfg.model_and_initial().unwrap();
        assert_eq!(model.dim(), 2);
        assert!(!model.is_trace_preserving());
        assert!((linops::trace(&rho).re - 1.0).abs() < 1e-14);
        assert_eq!(cfg.observables(2).unwrap().len(), 1);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_models() {
        let extra = DECAY.replace("\"seed\": 7,", "\"seed\": 7, \"bogus\": 1,");
        assert!(matches!(RunConfig::from_json(&extra), Err(Error::Config(_))));
        let wrong_dim = DECAY.replace("\"dim\": 2", "\"dim\": 3");
        assert!(RunConfig::from_json(&wrong_dim).is_err());
        let no_model = r#"{"command": "exact"}"#;
        assert!(RunConfig::from_json(no_model).is_err());
    }

    #[test]
    fn time_functions_and_terms() {
        let text = r#"{
            "command": "divisibility",
            "model": {"kind": "heisenberg_qubit",
                      "eps": 20,
                      "gamma_minus": {"kind": "exponential", "scale": 2, "rate": -3},
                      "gamma_plus": 0.1},
            "divisibility": {"adjoint": true}
        }"#;
        let cfg = RunConfig::from_json(text).unwrap();
        assert_eq!(cfg.divisibility.unwrap().picture(), Picture::Adjoint);
        let terms: OperatorSpec =
            serde_json::from_str(r#"[{"coeff": {"kind": "constant", "value": 2}, "op": "sigma_x"}]"#).unwrap();
        let s = terms.resolve(2).unwrap();
        assert!((s.eval(0.0)[(0, 1)].re - 2.0).abs() < 1e-15);
    }

    #[test]
    fn experiment_overrides() {
        let cfg = RunConfig::from_json(r#"{"command": "moments", "seed": 3, "n_trajectories": 50}"#).unwrap();
        let pc = cfg.photon_counting();
        assert_eq!(pc.seed, 3);
        assert_eq!(pc.n_trajectories, 50);
        assert_eq!(pc.n_max, 20);
    }
}
