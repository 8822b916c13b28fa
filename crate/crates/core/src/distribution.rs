use serde::{Deserialize, Serialize};

use crate::error::{QsqError, Result};
use crate::fourier::check_dimension;

const SUM_TOLERANCE: f64 = 1e-9;

/// Explicit probability vector over `{0,1}^n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDistribution")]
pub struct Distribution {
    n: usize,
    probs: Vec<f64>,
}

#[derive(Deserialize)]
struct RawDistribution {
    n: usize,
    probs: Vec<f64>,
}

impl TryFrom<RawDistribution> for Distribution {
    type Error = QsqError;
    fn try_from(raw: RawDistribution) -> Result<Self> {
        Distribution::new(raw.n, raw.probs)
    }
}

impl Distribution {
    pub fn new(n: usize, probs: Vec<f64>) -> Result<Self> {
        check_dimension(n)?;
        if probs.len() != 1 << n {
            return Err(QsqError::InvalidDistribution(format!(
                "expected {} probabilities, found {}",
                1usize << n,
                probs.len()
            )));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(QsqError::InvalidDistribution("negative or non-finite probability".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(QsqError::InvalidDistribution(format!("probabilities sum to {total}")));
        }
        Ok(Self { n, probs })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        check_dimension(n)?;
        let len = 1usize << n;
        Ok(Self { n, probs: vec![1.0 / len as f64; len] })
    }

    /// Normalises nonnegative weights.
    pub fn from_weights(n: usize, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(QsqError::InvalidDistribution("weights must have a positive finite sum".into()));
        }
        Self::new(n, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn prob(&self, x: usize) -> f64 {
        self.probs[x]
    }

    pub fn is_uniform(&self) -> bool {
        let u = 1.0 / self.probs.len() as f64;
        self.probs.iter().all(|p| (p - u).abs() <= 1e-12)
    }
}

/// JSON form accepted wherever a distribution is configured: either the
/// string `"uniform"` or an explicit `{"n":..,"probs":[..]}` object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DistributionSpec {
    Named(NamedDistribution),
    Explicit(Distribution),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NamedDistribution {
    Uniform,
}

impl DistributionSpec {
    pub fn resolve(&self, n: usize) -> Result<Distribution> {
        match self {
            DistributionSpec::Named(NamedDistribution::Uniform) => Distribution::uniform(n),
            DistributionSpec::Explicit(d) if d.dimension() == n => Ok(d.clone()),
            DistributionSpec::Explicit(d) => {
                Err(QsqError::DimensionMismatch { expected: n, found: d.dimension() })
            }
        }
    }
}
