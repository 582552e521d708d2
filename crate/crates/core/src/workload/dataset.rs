use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Scalar;

/// z-score of the 90th percentile of the standard normal.
const Z90: f64 = 1.2815515655446004;

/// Published token-length percentiles of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub name: String,
    pub prompt_p50: u32,
    pub prompt_p90: u32,
    pub decode_p50: u32,
    pub decode_p90: u32,
}

impl DatasetStats {
    pub fn sharegpt() -> Self {
        Self::new("sharegpt", 1730, 5696, 415, 834)
    }

    pub fn azure_conv() -> Self {
        Self::new("azure-conv", 928, 3830, 41, 342)
    }

    pub fn azure_code() -> Self {
        Self::new("azure-code", 1930, 6251, 8, 43)
    }

    pub fn all() -> Vec<Self> {
        vec![Self::sharegpt(), Self::azure_conv(), Self::azure_code()]
    }

    pub fn by_name(name: &str) -> Option<Self> {
        Self::all().into_iter().find(|d| d.name == name)
    }

    pub fn new(
        name: &str,
        prompt_p50: u32,
        prompt_p90: u32,
        decode_p50: u32,
        decode_p90: u32,
    ) -> Self {
        DatasetStats {
            name: name.to_string(),
            prompt_p50,
            prompt_p90,
            decode_p50,
            decode_p90,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (what, p50, p90) in [
            ("prompt", self.prompt_p50, self.prompt_p90),
            ("decode", self.decode_p50, self.decode_p90),
        ] {
            if p50 < 1 || p90 < 1 {
                return Err(Error::InvalidStats(format!(
                    "{}: {what} percentiles must be >= 1",
                    self.name
                )));
            }
            if p50 > p90 {
                return Err(Error::InvalidStats(format!(
                    "{}: {what} p50 {p50} exceeds p90 {p90}",
                    self.name
                )));
            }
        }
        Ok(())
    }

    pub fn prompt_fit(&self) -> Result<LogNormalFit<f64>> {
        fit_lognormal(self.prompt_p50 as f64, self.prompt_p90 as f64)
    }

    pub fn decode_fit(&self) -> Result<LogNormalFit<f64>> {
        fit_lognormal(self.decode_p50 as f64, self.decode_p90 as f64)
    }
}

/// Parameters of a lognormal: `ln X ~ Normal(mu, sigma^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogNormalFit<S> {
    pub mu: S,
    pub sigma: S,
}

impl<S: Scalar> LogNormalFit<S> {
    pub fn mean(&self) -> S {
        (self.mu + self.sigma * self.sigma / S::lit(2.0)).exp()
    }
}

/// Fits a lognormal through a median and a 90th percentile.
///
/// `p50 == p90` yields a point mass (`sigma = 0`).
pub fn fit_lognormal<S: Scalar>(p50: S, p90: S) -> Result<LogNormalFit<S>> {
    if !(p50 >= S::one() && p90 >= S::one()) {
        return Err(Error::InvalidStats(format!(
            "percentiles must be >= 1, got p50={p50} p90={p90}"
        )));
    }
    if p50 > p90 {
        return Err(Error::InvalidStats(format!("p50 {p50} exceeds p90 {p90}")));
    }
    let mu = p50.ln();
    let sigma = (p90.ln() - mu) / S::lit(Z90);
    Ok(LogNormalFit { mu, sigma })
}
