//! Closed-form evolution of the initial logits toward the labels.

use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::logits::LogitMatrix;

pub const DEFAULT_TARGET_COEFF: f64 = 0.5;

/// How the effective time scale `T` (the product of learning rate and time) is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum TimeScale {
    /// Calibrated so the median pooled mean eigenvalue gets coefficient `target_coeff`.
    #[default]
    Auto,
    Fixed(f64),
}

impl FromStr for TimeScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "auto" {
            return Ok(TimeScale::Auto);
        }
        let raw = s.strip_prefix("fixed:").unwrap_or(s);
        let t: f64 = raw
            .parse()
            .map_err(|_| Error::Config(format!("invalid time scale `{s}`")))?;
        TimeScale::fixed(t)
    }
}

impl fmt::Display for TimeScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeScale::Auto => f.write_str("auto"),
            TimeScale::Fixed(t) => write!(f, "fixed:{t}"),
        }
    }
}

impl TimeScale {
    pub fn fixed(t: f64) -> Result<Self> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::Config(format!(
                "time scale must be a non-negative number, got {t}"
            )));
        }
        Ok(TimeScale::Fixed(t))
    }
}

impl Serialize for TimeScale {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TimeScale::Auto => s.serialize_str("auto"),
            TimeScale::Fixed(t) => s.serialize_f64(*t),
        }
    }
}

impl<'de> Deserialize<'de> for TimeScale {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let parsed = match Raw::deserialize(d)? {
            Raw::Num(t) => TimeScale::fixed(t),
            Raw::Text(s) => s.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolutionConfig {
    pub time: TimeScale,
    pub target_coeff: f64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            time: TimeScale::Auto,
            target_coeff: DEFAULT_TARGET_COEFF,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_coeff > 0.0 && self.target_coeff < 1.0) {
            return Err(Error::Config(format!(
                "evolution.target_coeff must lie in (0, 1), got {}",
                self.target_coeff
            )));
        }
        Ok(())
    }

    /// Resolves `T` against a pool of mean eigenvalues.
    pub fn resolve(&self, pooled_eigs: &[f64]) -> Result<f64> {
        match self.time {
            TimeScale::Fixed(t) => Ok(t),
            TimeScale::Auto => calibrate_time_scale(pooled_eigs, self.target_coeff),
        }
    }
}

/// `T = −ln(target) / median(positive eigenvalues)`.
pub fn calibrate_time_scale(all_mean_eigs: &[f64], target_coeff: f64) -> Result<f64> {
    if !(target_coeff > 0.0 && target_coeff < 1.0) {
        return Err(Error::Config(format!(
            "target coefficient must lie in (0, 1), got {target_coeff}"
        )));
    }
    let mut positive: Vec<f64> = all_mean_eigs
        .iter()
        .copied()
        .filter(|&l| l > 0.0 && l.is_finite())
        .collect();
    if positive.is_empty() {
        return Err(Error::AllZeroEigenvalues);
    }
    positive.sort_by(f64::total_cmp);
    let m = positive.len();
    let median = if m % 2 == 1 {
        positive[m / 2]
    } else {
        0.5 * (positive[m / 2 - 1] + positive[m / 2])
    };
    Ok(-target_coeff.ln() / median)
}

/// Per-class interpolation weights `c_k = exp(−λ̄_k T)` on the initial logits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvolutionCoefficients {
    time_scale: f64,
    coeffs: Vec<f64>,
}

impl EvolutionCoefficients {
    pub fn new(mean_eigs: &[f64], time_scale: f64) -> Result<Self> {
        if !(time_scale >= 0.0 && time_scale.is_finite()) {
            return Err(Error::Config(format!(
                "time scale must be a non-negative number, got {time_scale}"
            )));
        }
        let coeffs = mean_eigs
            .iter()
            .enumerate()
            .map(|(k, &l)| {
                if !(l >= 0.0 && l.is_finite()) {
                    return Err(Error::Config(format!(
                        "mean eigenvalue of class {k} is {l}"
                    )));
                }
                if l == 0.0 {
                    warn!("class {k} has zero mean eigenvalue; its logits are not evolved");
                }
                Ok((-l * time_scale).exp())
            })
            .collect::<Result<_>>()?;
        Ok(EvolutionCoefficients { time_scale, coeffs })
    }

    /// Coefficients given directly, for tests and overrides.
    pub fn from_coeffs(coeffs: Vec<f64>) -> Result<Self> {
        if let Some(c) = coeffs.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::Config(format!("coefficient {c} is outside [0, 1]")));
        }
        Ok(EvolutionCoefficients {
            time_scale: f64::NAN,
            coeffs,
        })
    }

    pub fn time_scale(&self) -> f64 {
        self.time_scale
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolvedLogits {
    pub values: LogitMatrix,
    pub coefficients: EvolutionCoefficients,
}

/// Row `n` becomes `(1 − c_{y_n}) · onehot(y_n) + c_{y_n} · log_init[n]`.
pub fn evolve(
    log_init: &LogitMatrix,
    labels: &[u32],
    coeffs: &EvolutionCoefficients,
) -> Result<EvolvedLogits> {
    if labels.len() != log_init.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} logit rows",
            labels.len(),
            log_init.nrows()
        )));
    }
    let mut out = log_init.values().to_owned();
    for (n, mut row) in out.rows_mut().into_iter().enumerate() {
        let y = labels[n] as usize;
        let c = *coeffs
            .coeffs
            .get(y)
            .ok_or(Error::MissingClassCoefficient(y))?;
        row.mapv_inplace(|p| c * p);
        row[y] += 1.0 - c;
    }
    Ok(EvolvedLogits {
        values: LogitMatrix::from_trusted(out),
        coefficients: coeffs.clone(),
    })
}
