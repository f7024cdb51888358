use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A real coefficient that may depend on time (rates, drive amplitudes).
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeScalar {
    Constant {
        value: f64,
    },
    /// `scale * exp(rate * t)`; a negative `rate` decays.
    Exponential {
        scale: f64,
        rate: f64,
    },
    /// `amplitude * sin(frequency * t + phase) + offset`
    Sinusoid {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: f64,
    },
    /// Piecewise-linear interpolation, held constant outside the table.
    Table {
        times: Vec<f64>,
        values: Vec<f64>,
    },
    #[serde(skip)]
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl TimeScalar {
    pub fn constant(value: f64) -> Self {
        TimeScalar::Constant { value }
    }

    pub fn exponential(scale: f64, rate: f64) -> Self {
        TimeScalar::Exponential { scale, rate }
    }

    pub fn cosine(amplitude: f64, frequency: f64) -> Self {
        TimeScalar::Sinusoid {
            amplitude,
            frequency,
            phase: std::f64::consts::FRAC_PI_2,
            offset: 0.0,
        }
    }

    pub fn table(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let s = TimeScalar::Table { times, values };
        s.validate()?;
        Ok(s)
    }

    pub fn custom(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        TimeScalar::Custom(Arc::new(f))
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |x: f64, what: &str| {
            if x.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{what} must be finite")))
            }
        };
        match self {
            TimeScalar::Constant { value } => finite(*value, "constant value"),
            TimeScalar::Exponential { scale, rate } => {
                finite(*scale, "exponential scale")?;
                finite(*rate, "exponential rate")
            }
            TimeScalar::Sinusoid {
                amplitude,
                frequency,
                phase,
                offset,
            } => {
                for (x, w) in [
                    (amplitude, "amplitude"),
                    (frequency, "frequency"),
                    (phase, "phase"),
                    (offset, "offset"),
                ] {
                    finite(*x, w)?;
                }
                Ok(())
            }
            TimeScalar::Table { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return Err(Error::InvalidParameter(
                        "table needs equally many (non-zero) times and values".into(),
                    ));
                }
                if times.iter().chain(values).any(|x| !x.is_finite()) {
                    return Err(Error::InvalidParameter("table entries must be finite".into()));
                }
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidParameter(
                        "table times must be strictly increasing".into(),
                    ));
                }
                Ok(())
            }
            TimeScalar::Custom(_) => Ok(()),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeScalar::Constant { value } => *value,
            TimeScalar::Exponential { scale, rate } => scale * (rate * t).exp(),
            TimeScalar::Sinusoid {
                amplitude,
                frequency,
                phase,
                offset,
            } => amplitude * (frequency * t + phase).sin() + offset,
            TimeScalar::Table { times, values } => {
                let k = times.partition_point(|&x| x <= t);
                if k == 0 {
                    values[0]
                } else if k == times.len() {
                    values[k - 1]
                } else {
                    let (t0, t1) = (times[k - 1], times[k]);
                    let w = (t - t0) / (t1 - t0);
                    values[k - 1] * (1.0 - w) + values[k] * w
                }
            }
            TimeScalar::Custom(f) => f(t),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, TimeScalar::Constant { .. })
    }
}

impl fmt::Debug for TimeScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeScalar::Constant { value } => write!(f, "Constant({value})"),
            TimeScalar::Exponential { scale, rate } => write!(f, "{scale}*exp({rate}*t)"),
            TimeScalar::Sinusoid {
                amplitude,
                frequency,
                phase,
                offset,
            } => write!(f, "{amplitude}*sin({frequency}*t+{phase})+{offset}"),
            TimeScalar::Table { times, .. } => write!(f, "Table({} points)", times.len()),
            TimeScalar::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Deserializes a plain number as a constant, or a tagged [`TimeScalar`].
pub fn number_or_tagged<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<TimeScalar, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Tagged(TimeScalar),
    }
    Ok(match Repr::deserialize(d)? {
        Repr::Number(v) => TimeScalar::constant(v),
        Repr::Tagged(s) => s,
    })
}

impl From<f64> for TimeScalar {
    fn from(value: f64) -> Self {
        TimeScalar::constant(value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluates_each_kind() {
        assert_eq!(TimeScalar::constant(2.5).eval(7.0), 2.5);
        assert!((TimeScalar::exponential(2.0, -3.0).eval(1.0) - 2.0 * (-3.0f64).exp()).abs() < 1e-15);
        assert!((TimeScalar::cosine(1.0, 2.0).eval(0.3) - (0.6f64).cos()).abs() < 1e-15);
        let tab = TimeScalar::table(vec![0.0, 1.0, 3.0], vec![0.0, 2.0, -2.0]).unwrap();
        assert_eq!(tab.eval(-1.0), 0.0);
        assert_eq!(tab.eval(0.5), 1.0);
        assert_eq!(tab.eval(2.0), 0.0);
        assert_eq!(tab.eval(9.0), -2.0);
    }

    #[test]
    fn table_requires_increasing_times() {
        assert!(TimeScalar::table(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        assert!(TimeScalar::table(vec![0.0, 1.0], vec![1.0]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let s: TimeScalar =
            serde_json::from_str(r#"{"kind":"sinusoid","amplitude":1,"frequency":2,"phase":0.5}"#)
                .unwrap();
        assert!((s.eval(0.0) - 0.5f64.sin()).abs() < 1e-15);
        let back = serde_json::to_string(&s).unwrap();
        let again: TimeScalar = serde_json::from_str(&back).unwrap();
        assert_eq!(again.eval(1.3), s.eval(1.3));
        assert!(serde_json::from_str::<TimeScalar>(r#"{"kind":"constant","value":1,"x":2}"#).is_err());
    }
}
