//! Model parameters for the two-factor Black-Karasinski short rate
//!
//! ```text
//! d ln r = alpha1 (ln m - ln r) dt + sigma1 dZ1
//! d ln m = alpha2 (mu' - ln m) dt + sigma2 dZ2,   dZ1 dZ2 = rho' dt
//! ```

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::KvDoc;

/// Which volatility enters the y-factor constant `eta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EtaSource {
    /// `eta = |alpha1 sigma1 / (alpha1 - alpha2)|`
    #[default]
    AsPrinted,
    /// `eta = |alpha1 sigma2 / (alpha1 - alpha2)|`, the loading of `ln m` on `ln r`
    Derivation,
}

impl EtaSource {
    pub fn as_str(self) -> &'static str {
        match self {
            EtaSource::AsPrinted => "as_printed",
            EtaSource::Derivation => "derivation",
        }
    }
}

impl fmt::Display for EtaSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EtaSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as_printed" => Ok(EtaSource::AsPrinted),
            "derivation" => Ok(EtaSource::Derivation),
            other => Err(Error::param(
                "eta_source",
                format!("unknown value `{other}` (expected as_printed | derivation)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Mean-reversion speed of ln r (1/year).
    pub alpha1: f64,
    /// Mean-reversion speed of ln m (1/year).
    pub alpha2: f64,
    /// Volatility of ln r (1/sqrt(year)).
    pub sigma1: f64,
    /// Volatility of ln m (1/sqrt(year)).
    pub sigma2: f64,
    /// Long-run level of ln m.
    pub mu_prime: f64,
    /// Correlation of the two Brownian shocks.
    pub rho_prime: f64,
    pub r0: f64,
    pub m0: f64,
    /// Timestep length in years.
    pub dt: f64,
    pub n_steps: usize,
}

impl ModelParams {
    /// Builds a parameter set from the reversion level `mu` (a rate, not its
    /// log). `m0` starts at that level.
    pub fn from_level(
        alpha1: f64,
        alpha2: f64,
        sigma1: f64,
        sigma2: f64,
        mu: f64,
        r0: f64,
    ) -> Self {
        ModelParams {
            alpha1,
            alpha2,
            sigma1,
            sigma2,
            mu_prime: mu.ln(),
            rho_prime: 0.0,
            r0,
            m0: mu,
            dt: 1.0 / 12.0,
            n_steps: 12,
        }
    }

    /// Calibrated training column.
    pub fn training() -> Self {
        Self::from_level(0.1759, 0.0785, 0.3423, 0.2242, 0.0377, 0.0307)
    }

    /// Calibrated out-of-sample column.
    pub fn validation() -> Self {
        Self::from_level(0.1776, 0.0819, 0.3407, 0.2177, 0.0377, 0.0394)
    }

    pub fn with_sigmas(mut self, sigma1: f64, sigma2: f64) -> Self {
        self.sigma1 = sigma1;
        self.sigma2 = sigma2;
        self
    }

    pub fn validate(&self) -> Result<()> {
        fn finite(name: &'static str, v: f64) -> Result<()> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(name, format!("must be finite, got {v}")))
            }
        }
        finite("alpha1", self.alpha1)?;
        finite("alpha2", self.alpha2)?;
        finite("sigma1", self.sigma1)?;
        finite("sigma2", self.sigma2)?;
        finite("mu_prime", self.mu_prime)?;
        finite("rho_prime", self.rho_prime)?;
        finite("r0", self.r0)?;
        finite("m0", self.m0)?;
        finite("dt", self.dt)?;
        if self.alpha1 <= 0.0 {
            return Err(Error::param("alpha1", "must be > 0"));
        }
        if self.alpha2 <= 0.0 {
            return Err(Error::param("alpha2", "must be > 0"));
        }
        if self.alpha1 == self.alpha2 {
            return Err(Error::param("alpha2", "must differ from alpha1"));
        }
        if self.sigma1 < 0.0 {
            return Err(Error::param("sigma1", "must be >= 0"));
        }
        if self.sigma2 < 0.0 {
            return Err(Error::param("sigma2", "must be >= 0"));
        }
        if !(-1.0..=1.0).contains(&self.rho_prime) {
            return Err(Error::param("rho_prime", "must lie in [-1, 1]"));
        }
        if self.r0 <= 0.0 {
            return Err(Error::param("r0", "must be > 0"));
        }
        if self.m0 <= 0.0 {
            return Err(Error::param("m0", "must be > 0"));
        }
        if self.dt <= 0.0 {
            return Err(Error::param("dt", "must be > 0"));
        }
        if self.n_steps < 2 {
            return Err(Error::param("n_steps", "must be >= 2"));
        }
        Ok(())
    }

    /// Both volatilities are zero, so the model is deterministic.
    pub fn is_deterministic(&self) -> bool {
        self.sigma1 == 0.0 && self.sigma2 == 0.0
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    pub fn time_grid(&self) -> TimeGrid {
        TimeGrid {
            times: (0..=self.n_steps).map(|k| self.time(k)).collect(),
        }
    }

    /// Stable `key=value` lines; the basis of fingerprints and sidecar files.
    pub fn to_kv(&self, prefix: &str) -> Vec<(String, String)> {
        let f = |k: &str, v: String| (format!("{prefix}{k}"), v);
        vec![
            f("alpha1", fmt_f64(self.alpha1)),
            f("alpha2", fmt_f64(self.alpha2)),
            f("sigma1", fmt_f64(self.sigma1)),
            f("sigma2", fmt_f64(self.sigma2)),
            f("mu_prime", fmt_f64(self.mu_prime)),
            f("rho_prime", fmt_f64(self.rho_prime)),
            f("r0", fmt_f64(self.r0)),
            f("m0", fmt_f64(self.m0)),
            f("dt", fmt_f64(self.dt)),
            f("n_steps", self.n_steps.to_string()),
        ]
    }

    /// Inverse of [`ModelParams::to_kv`].
    pub fn from_kv(doc: &KvDoc, prefix: &str) -> Result<Self> {
        let f = |k: &str| doc.require::<f64>(&format!("{prefix}{k}"));
        let p = ModelParams {
            alpha1: f("alpha1")?,
            alpha2: f("alpha2")?,
            sigma1: f("sigma1")?,
            sigma2: f("sigma2")?,
            mu_prime: f("mu_prime")?,
            rho_prime: f("rho_prime")?,
            r0: f("r0")?,
            m0: f("m0")?,
            dt: f("dt")?,
            n_steps: doc.require(&format!("{prefix}n_steps"))?,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Shortest round-trip decimal form.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    pub times: Vec<f64>,
}

impl TimeGrid {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}
