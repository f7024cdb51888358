use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::{self, c, CMatrix, CVector};
use crate::model::builders::{boson_ops, pauli_ops};

/// An operator in a configuration file: a builtin name such as `"sigma_x"`
/// or `"annihilation(6)"`, or explicit rows of `[re, im]` entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Named(String),
    Rows(Vec<Vec<[f64; 2]>>),
}

impl MatrixSpec {
    pub fn named(name: &str) -> Self {
        MatrixSpec::Named(name.to_string())
    }

    pub fn from_matrix(m: &CMatrix) -> Self {
        MatrixSpec::Rows(
            (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
                .collect(),
        )
    }

    pub fn resolve(&self) -> Result<CMatrix> {
        match self {
            MatrixSpec::Named(name) => builtin(name),
            MatrixSpec::Rows(rows) => {
                let n = rows.len();
                if n == 0 {
                    return Err(Error::Config("matrix has no rows".into()));
                }
                let mut m = CMatrix::zeros(n, n);
                for (i, row) in rows.iter().enumerate() {
                    if row.len() != n {
                        return Err(Error::Config(format!(
                            "matrix row {i} has {} entries, expected {n}",
                            row.len()
                        )));
                    }
                    for (j, [re, im]) in row.iter().enumerate() {
                        if !re.is_finite() || !im.is_finite() {
                            return Err(Error::Config(format!("matrix entry ({i}, {j}) is not finite")));
                        }
                        m[(i, j)] = c(*re, *im);
                    }
                }
                Ok(m)
            }
        }
    }
}

/// A state vector as a list of `[re, im]` amplitudes; normalized on resolve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VectorSpec(pub Vec<[f64; 2]>);

impl VectorSpec {
    pub fn resolve(&self) -> Result<CVector> {
        if self.0.is_empty() {
            return Err(Error::Config("state has no amplitudes".into()));
        }
        let v = CVector::from_iterator(self.0.len(), self.0.iter().map(|[re, im]| c(*re, *im)));
        let n = v.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::Config("state must have a finite, nonzero norm".into()));
        }
        Ok(v / c(n, 0.0))
    }
}

fn builtin(name: &str) -> Result<CMatrix> {
    let (base, arg) = match name.split_once('(') {
        Some((b, rest)) => {
            let inner = rest
                .strip_suffix(')')
                .ok_or_else(|| Error::Config(format!("malformed operator name '{name}'")))?;
            let n: usize = inner
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad dimension in '{name}'")))?;
            (b.trim(), Some(n))
        }
        None => (name.trim(), None),
    };
    let p = pauli_ops();
    let qubit = |m: &CMatrix| -> Result<CMatrix> {
        match arg {
            None | Some(2) => Ok(m.clone()),
            Some(n) => Err(Error::Config(format!("'{base}' is a qubit operator, got dimension {n}"))),
        }
    };
    let sized = || arg.ok_or_else(|| Error::Config(format!("'{base}' needs a dimension, e.g. '{base}(4)'")));
    match base {
        "sigma_x" => qubit(&p.x),
        "sigma_y" => qubit(&p.y),
        "sigma_z" => qubit(&p.z),
        "sigma_minus" => qubit(&p.minus),
        "sigma_plus" => qubit(&p.plus),
        "identity" => match arg {
            None => Ok(p.identity),
            Some(0) => Err(Error::Config("identity dimension must be positive".into())),
            Some(n) => Ok(linops::identity(n)),
        },
        "annihilation" => Ok(boson_ops(sized()?)?.annihilation),
        "creation" => Ok(boson_ops(sized()?)?.creation),
        "number" => Ok(boson_ops(sized()?)?.number),
        _ => Err(Error::Config(format!("unknown operator '{name}'"))),
    }
}
