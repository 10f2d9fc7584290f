//! Method-of-moments next-step predictor.
//!
//! Quantiles are moved to standardized S-space, `z = (ln q - phi(t)) / sd(t)`
//! with `sd(t)^2 = Var[S_t]`, where the theoretical law is `N(0, 1)` at every
//! step. The prediction for `t + 1` keeps `z` and maps it back with the
//! moments of `t + 1`: the previous quantiles are re-centred on the
//! deterministic shift and their dispersion is rescaled by `sd(t+1) / sd(t)`.
//!
//! With both volatilities zero the law is a point mass; standardized values
//! are then plain log-deviations from the zero-shock recursion.

use std::fmt;
use std::str::FromStr;

use crate::analytics::{derive_g2, phi, var_s, G2Stats};
use crate::error::{Error, Result};
use crate::kv::fingerprint;
use crate::params::{EtaSource, ModelParams};
use crate::rng::inverse_normal_cdf;
use crate::sim::deterministic_path;

const RECIPE: &str = "s-space/v1";

/// Extra drift applied by the method-of-moments step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DriftMode {
    /// Identity in standardized space.
    #[default]
    None,
    /// Adds the growth factor of [`drift_index`] to every log-quantile.
    Indexed,
}

impl DriftMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DriftMode::None => "none",
            DriftMode::Indexed => "indexed",
        }
    }
}

impl fmt::Display for DriftMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DriftMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(DriftMode::None),
            "indexed" => Ok(DriftMode::Indexed),
            other => Err(Error::param(
                "drift_mode",
                format!("unknown value `{other}` (expected none | indexed)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedQuantiles {
    pub t: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
enum Regime {
    Gaussian(G2Stats),
    /// `ln r` of the zero-shock recursion for `t = 0..=n_steps + 1`.
    PointMass(Vec<f64>),
}

/// Per-timestep centring and scaling for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    params: ModelParams,
    eta_source: EtaSource,
    drift: DriftMode,
    regime: Regime,
}

impl Standardizer {
    pub fn new(params: &ModelParams, eta_source: EtaSource) -> Result<Self> {
        params.validate()?;
        let regime = if params.is_deterministic() {
            let mut longer = *params;
            longer.n_steps += 1;
            Regime::PointMass(deterministic_path(&longer).iter().map(|r| r.ln()).collect())
        } else {
            Regime::Gaussian(derive_g2(params, eta_source)?)
        };
        Ok(Standardizer {
            params: *params,
            eta_source,
            drift: DriftMode::None,
            regime,
        })
    }

    pub fn with_drift(mut self, drift: DriftMode) -> Self {
        self.drift = drift;
        self
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn eta_source(&self) -> EtaSource {
        self.eta_source
    }

    pub fn drift_mode(&self) -> DriftMode {
        self.drift
    }

    /// `None` for the zero-volatility regime.
    pub fn g2(&self) -> Option<&G2Stats> {
        match &self.regime {
            Regime::Gaussian(g2) => Some(g2),
            Regime::PointMass(_) => None,
        }
    }

    /// Identifies the standardization recipe (not the parameter values).
    pub fn recipe_fingerprint(&self) -> String {
        recipe_fingerprint(self.eta_source)
    }

    /// Log-level the standardized value 0 maps to at step `t`.
    pub fn center(&self, t: usize) -> Result<f64> {
        match &self.regime {
            Regime::Gaussian(_) => Ok(phi(self.params.time(t), &self.params)),
            Regime::PointMass(path) => path.get(t).copied().ok_or(Error::Timestep {
                t,
                reason: "beyond the deterministic path",
            }),
        }
    }

    /// Standard deviation of `S` at step `t`.
    pub fn scale(&self, t: usize) -> Result<f64> {
        match &self.regime {
            Regime::Gaussian(g2) => {
                let v = var_s(self.params.time(t), g2, &self.params)?;
                if v > 0.0 {
                    Ok(v.sqrt())
                } else {
                    Err(Error::Timestep {
                        t,
                        reason: "zero theoretical variance",
                    })
                }
            }
            Regime::PointMass(_) => Ok(1.0),
        }
    }

    pub fn standardize(&self, raw: &[f64], t: usize) -> Result<StandardizedQuantiles> {
        let (c, sd) = (self.center(t)?, self.scale(t)?);
        let values = raw
            .iter()
            .map(|&q| {
                if q > 0.0 && q.is_finite() {
                    Ok((q.ln() - c) / sd)
                } else {
                    Err(Error::param("quantile", format!("must be a positive rate, got {q}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(StandardizedQuantiles { t, values })
    }

    pub fn destandardize(&self, z: &[f64], t: usize) -> Result<Vec<f64>> {
        let (c, sd) = (self.center(t)?, self.scale(t)?);
        Ok(z.iter().map(|v| (c + sd * v).exp()).collect())
    }

    /// The method-of-moments step in standardized space, from `t` to `t + 1`.
    pub fn mom_step(&self, z: &[f64], t: usize) -> Result<Vec<f64>> {
        match self.drift {
            DriftMode::None => Ok(z.to_vec()),
            DriftMode::Indexed => {
                let shift = growth_term(&self.params, self.params.dt) / self.scale(t + 1)?;
                Ok(z.iter().map(|v| v + shift).collect())
            }
        }
    }

    /// Theoretical quantiles of `r` at step `t` for the given probabilities.
    pub fn theoretical_quantiles(&self, t: usize, probs: &[f64]) -> Result<Vec<f64>> {
        let z: Vec<f64> = probs.iter().map(|&p| inverse_normal_cdf(p)).collect();
        self.destandardize(&z, t)
    }
}

pub fn recipe_fingerprint(eta_source: EtaSource) -> String {
    fingerprint(&[
        ("recipe".to_string(), RECIPE.to_string()),
        ("eta_source".to_string(), eta_source.to_string()),
    ])
}

/// Convenience wrapper over [`Standardizer::standardize`].
pub fn standardize(
    raw: &[f64],
    t: usize,
    standardizer: &Standardizer,
) -> Result<StandardizedQuantiles> {
    standardizer.standardize(raw, t)
}

pub fn destandardize(
    sq: &StandardizedQuantiles,
    t: usize,
    standardizer: &Standardizer,
) -> Result<Vec<f64>> {
    standardizer.destandardize(&sq.values, t)
}

/// Predicts the quantiles of `r` at `t + 1` from those at `t`.
pub fn mom_predict(prev: &[f64], t: usize, standardizer: &Standardizer) -> Result<Vec<f64>> {
    if t == 0 {
        return Err(Error::Timestep {
            t,
            reason: "prediction starts from t >= 1",
        });
    }
    let z = standardizer.standardize(prev, t)?;
    let next = standardizer.mom_step(&z.values, t)?;
    standardizer.destandardize(&next, t + 1)
}

fn growth_term(params: &ModelParams, step: f64) -> f64 {
    (params.alpha1 * step).exp() + (params.alpha2 * step).exp()
}

/// `r_t exp((e^{a1 dt} + e^{a2 dt}) + phi(t + dt) - phi(t))` over a step of
/// `step` years starting at `t_years`.
pub fn drift_index_over(r_t: f64, t_years: f64, step: f64, params: &ModelParams) -> f64 {
    r_t * (growth_term(params, step) + phi(t_years + step, params) - phi(t_years, params)).exp()
}

/// [`drift_index_over`] for one model timestep from step `t`.
pub fn drift_index(r_t: f64, t: usize, params: &ModelParams) -> f64 {
    drift_index_over(r_t, params.time(t), params.dt, params)
}
