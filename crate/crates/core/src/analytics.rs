//! Closed-form analytics of the additive Gaussian decomposition
//! `ln r(t) = x(t) + y(t) + phi(t)`.
//!
//! `x` and `y` are Vasicek factors with speeds `alpha1`, `alpha2`, volatilities
//! `sigma_g`, `eta` and shock correlation `rho_g`. `phi` collects the initial
//! conditions and the deterministic reversion level `theta`.

use crate::error::{Error, Result};
use crate::params::{EtaSource, ModelParams};

/// `1 - e^{-x}` without cancellation for small `x`.
#[inline]
fn one_minus_exp_neg(x: f64) -> f64 {
    -(-x).exp_m1()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct G2Stats {
    /// Volatility of the y-factor.
    pub eta: f64,
    /// Volatility of the x-factor.
    pub sigma_g: f64,
    /// Correlation between the x and y shocks.
    pub rho_g: f64,
}

/// Decomposition constants, with `eta` read according to `source`.
pub fn derive_g2(params: &ModelParams, source: EtaSource) -> Result<G2Stats> {
    params.validate()?;
    let ModelParams {
        alpha1,
        alpha2,
        sigma1,
        sigma2,
        rho_prime,
        ..
    } = *params;
    let loaded_vol = match source {
        EtaSource::AsPrinted => sigma1,
        EtaSource::Derivation => sigma2,
    };
    let eta = (alpha1 * loaded_vol / (alpha1 - alpha2)).abs();
    let sigma_sq = sigma1 * sigma1 + eta * eta - 2.0 * rho_prime * sigma1 * eta;
    let sigma_g = sigma_sq.max(0.0).sqrt();
    if sigma_g == 0.0 {
        return Err(Error::Degenerate(
            "x-factor volatility is zero, correlation undefined".into(),
        ));
    }
    let rho_g = (rho_prime * sigma1 - eta) / sigma_g;
    Ok(G2Stats { eta, sigma_g, rho_g })
}

/// Deterministic reversion target of `ln r` induced by the mean path of `ln m`.
pub fn theta(t: f64, params: &ModelParams) -> f64 {
    let decay = (-params.alpha2 * t).exp();
    params.alpha1 * params.m0.ln() * decay
        + params.alpha1 * params.mu_prime * one_minus_exp_neg(params.alpha2 * t)
}

/// Deterministic shift: `ln r0 e^{-a1 t} + int_0^t theta(v) e^{-a1 (t - v)} dv`,
/// integrated in closed form.
pub fn phi(t: f64, params: &ModelParams) -> f64 {
    let ModelParams {
        alpha1: a1,
        alpha2: a2,
        mu_prime,
        r0,
        m0,
        ..
    } = *params;
    let gap = m0.ln() - mu_prime;
    // int_0^t e^{-a2 v} e^{-a1 (t - v)} dv = e^{-a2 t} (1 - e^{-(a1 - a2) t}) / (a1 - a2)
    let cross = (-a2 * t).exp() * one_minus_exp_neg((a1 - a2) * t) / (a1 - a2);
    r0.ln() * (-a1 * t).exp() + mu_prime * one_minus_exp_neg(a1 * t) + a1 * gap * cross
}

/// Mean of `S_t = x_t + y_t` from starting values `x0`, `y0`.
pub fn mean_s(t: f64, x0: f64, y0: f64, params: &ModelParams) -> f64 {
    x0 * (-params.alpha1 * t).exp() + y0 * (-params.alpha2 * t).exp()
}

fn var_terms(t: f64, g2: &G2Stats, params: &ModelParams) -> (f64, f64, f64) {
    let (a1, a2) = (params.alpha1, params.alpha2);
    let x_term = g2.sigma_g * g2.sigma_g / (2.0 * a1) * one_minus_exp_neg(2.0 * a1 * t);
    let cross = one_minus_exp_neg((a1 + a2) * t) / (a1 + a2);
    let y_term = g2.eta * g2.eta / (2.0 * a2) * one_minus_exp_neg(2.0 * a2 * t);
    (x_term, cross, y_term)
}

/// Variance of `S_t`:
/// `sigma^2/(2a1)(1-e^{-2a1 t}) - 2 eta^2/(a1+a2)(1-e^{-(a1+a2)t}) + eta^2/(2a2)(1-e^{-2a2 t})`.
pub fn var_s(t: f64, g2: &G2Stats, params: &ModelParams) -> Result<f64> {
    let (x_term, cross, y_term) = var_terms(t, g2, params);
    let v = x_term - 2.0 * g2.eta * g2.eta * cross + y_term;
    // Roundoff near t = 0 can leave a tiny negative residue.
    let tol = 64.0 * f64::EPSILON * (x_term.abs() + y_term.abs());
    if v < -tol {
        return Err(Error::NegativeVariance { t, value: v });
    }
    Ok(v.max(0.0))
}

/// Variance recomposed from the two correlated factors with the general
/// cross term `2 rho sigma eta`. Coincides with [`var_s`] when `rho' = 0`.
pub fn var_s_recomposed(t: f64, g2: &G2Stats, params: &ModelParams) -> f64 {
    let (x_term, cross, y_term) = var_terms(t, g2, params);
    x_term + 2.0 * g2.rho_g * g2.sigma_g * g2.eta * cross + y_term
}

/// Variance of `S_t` as `t -> infinity`.
pub fn var_s_limit(g2: &G2Stats, params: &ModelParams) -> f64 {
    let (a1, a2) = (params.alpha1, params.alpha2);
    g2.sigma_g * g2.sigma_g / (2.0 * a1) - 2.0 * g2.eta * g2.eta / (a1 + a2)
        + g2.eta * g2.eta / (2.0 * a2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn training() -> ModelParams {
        ModelParams::training()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    // Adaptive Simpson, test-only quadrature oracle.
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, eps: f64) -> f64 {
        fn step<F: Fn(f64) -> f64>(
            f: &F,
            a: f64,
            b: f64,
            fa: f64,
            fm: f64,
            fb: f64,
            whole: f64,
            eps: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            let delta = left + right - whole;
            if depth == 0 || delta.abs() <= 15.0 * eps {
                return left + right + delta / 15.0;
            }
            step(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1)
                + step(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
        }
        let m = 0.5 * (a + b);
        let (fa, fm, fb) = (f(a), f(m), f(b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        step(f, a, b, fa, fm, fb, whole, eps, 40)
    }

    fn phi_by_quadrature(t: f64, p: &ModelParams) -> f64 {
        let integrand = |v: f64| theta(v, p) * (-p.alpha1 * (t - v)).exp();
        p.r0.ln() * (-p.alpha1 * t).exp() + simpson(&integrand, 0.0, t, 1e-13)
    }

    #[test]
    fn g2_constants_for_training_set() {
        // 50-digit reference values.
        let g2 = derive_g2(&training(), EtaSource::AsPrinted).unwrap();
        assert!(rel(g2.eta, 0.618_178_336_755_646_8) < 1e-14);
        assert!(rel(g2.sigma_g, 0.706_621_359_735_168_1) < 1e-14);
        assert!(rel(g2.rho_g, -0.874_836_754_138_498_6) < 1e-14);
    }

    #[test]
    fn rho_is_minus_eta_over_sigma_without_correlation() {
        for source in [EtaSource::AsPrinted, EtaSource::Derivation] {
            let g2 = derive_g2(&ModelParams::validation(), source).unwrap();
            let expected = -g2.eta / g2.sigma_g;
            assert!((g2.rho_g - expected).abs() <= 2.0 * f64::EPSILON);
        }
    }

    #[test]
    fn derivation_source_loads_sigma2() {
        let p = training();
        let g2 = derive_g2(&p, EtaSource::Derivation).unwrap();
        let expected = p.alpha1 * p.sigma2 / (p.alpha1 - p.alpha2);
        assert!(rel(g2.eta, expected) < 1e-15);
    }

    #[test]
    fn zero_sigma1_is_degenerate() {
        let p = training().with_sigmas(0.0, 0.2);
        assert!(matches!(
            derive_g2(&p, EtaSource::AsPrinted),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn equal_speeds_rejected() {
        let mut p = training();
        p.alpha2 = p.alpha1;
        assert!(derive_g2(&p, EtaSource::AsPrinted).is_err());
    }

    #[test]
    fn doubling_sigma1_scales_eta_and_sigma() {
        let p = training();
        let mut q = p;
        q.sigma1 *= 2.0;
        let a = derive_g2(&p, EtaSource::AsPrinted).unwrap();
        let b = derive_g2(&q, EtaSource::AsPrinted).unwrap();
        assert_eq!(b.eta, 2.0 * a.eta);
        assert!(rel(b.sigma_g, 2.0 * a.sigma_g) < 1e-15);
        assert!(rel(b.rho_g, a.rho_g) < 1e-15);
    }

    #[test]
    fn theta_limits_and_reference() {
        let p = training();
        assert_eq!(theta(0.0, &p), p.alpha1 * p.m0.ln());
        assert!(rel(theta(1e4, &p), p.alpha1 * p.mu_prime) < 1e-14);
        assert!(rel(theta(1.0, &p), -0.576_616_942_958_505_5) < 1e-14);
        let mut q = p;
        q.m0 = 0.05;
        assert!(rel(theta(1.0, &q), -0.530_699_111_127_263_4) < 1e-14);
    }

    #[test]
    fn phi_reference_values() {
        let p = training();
        assert_eq!(phi(0.0, &p), p.r0.ln());
        assert!((phi(0.5, &p) - (-3.466_199_529_113_940)).abs() < 1e-13);
        let mut q = p;
        q.m0 = 0.05;
        assert!((phi(0.5, &q) - (-3.442_893_661_155_326)).abs() < 1e-13);
        assert!((phi(1.0, &q) - (-3.406_609_895_827_341)).abs() < 1e-13);
    }

    #[test]
    fn phi_matches_quadrature_at_half_year() {
        let mut p = training();
        p.m0 = 0.05;
        assert!((phi(0.5, &p) - phi_by_quadrature(0.5, &p)).abs() < 1e-10);
    }

    #[test]
    fn phi_ignores_volatility() {
        let p = training();
        let q = p.with_sigmas(0.9, 0.01);
        for t in [0.1, 0.5, 3.0] {
            assert_eq!(phi(t, &p), phi(t, &q));
        }
    }

    #[test]
    fn mean_s_cases() {
        let p = training();
        assert_eq!(mean_s(0.0, 0.3, -0.1, &p), 0.3 - 0.1);
        assert_eq!(mean_s(4.0, 0.0, 0.0, &p), 0.0);
        assert!(rel(mean_s(2.0, 1.0, -1.0, &p), -0.151_283_266_750_408_7) < 1e-13);
    }

    #[test]
    fn var_s_reference_and_limits() {
        let p = training();
        let g2 = derive_g2(&p, EtaSource::AsPrinted).unwrap();
        assert_eq!(var_s(0.0, &g2, &p).unwrap(), 0.0);
        assert!(rel(var_s(1.0, &g2, &p).unwrap(), 0.099_777_867_243_809_99) < 1e-12);
        assert!(rel(var_s_limit(&g2, &p), 0.849_072_193_751_371_1) < 1e-13);
        assert!(rel(var_s(500.0, &g2, &p).unwrap(), var_s_limit(&g2, &p)) < 1e-12);
    }

    #[test]
    fn inconsistent_constants_give_negative_variance() {
        let p = training();
        let g2 = G2Stats {
            eta: 1.0,
            sigma_g: 0.1,
            rho_g: -1.0,
        };
        assert!(matches!(
            var_s(1.0, &g2, &p),
            Err(Error::NegativeVariance { .. })
        ));
    }

    #[test]
    fn var_s_nondecreasing_on_unit_interval() {
        for p in [training(), ModelParams::validation()] {
            for source in [EtaSource::AsPrinted, EtaSource::Derivation] {
                let g2 = derive_g2(&p, source).unwrap();
                let mut prev = 0.0;
                for k in 0..=1000 {
                    let v = var_s(k as f64 / 1000.0, &g2, &p).unwrap();
                    assert!(v >= prev, "k={k} {v} < {prev}");
                    prev = v;
                }
            }
        }
    }

    fn arb_params() -> impl Strategy<Value = ModelParams> {
        (
            0.02f64..1.5,
            0.02f64..1.5,
            0.01f64..0.8,
            0.01f64..0.8,
            0.005f64..0.1,
            0.005f64..0.1,
            0.005f64..0.1,
        )
            .prop_filter("distinct speeds", |(a1, a2, ..)| (a1 - a2).abs() > 0.05)
            .prop_map(|(a1, a2, s1, s2, mu, r0, m0)| {
                let mut p = ModelParams::from_level(a1, a2, s1, s2, mu, r0);
                p.m0 = m0;
                p
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn phi_agrees_with_quadrature(p in arb_params(), t in 0.0f64..3.0) {
            let exact = phi(t, &p);
            let numeric = phi_by_quadrature(t, &p);
            prop_assert!((exact - numeric).abs() < 1e-10, "{exact} vs {numeric}");
        }

        #[test]
        fn recomposed_variance_equals_closed_form(p in arb_params(), t in 0.01f64..5.0) {
            for source in [EtaSource::AsPrinted, EtaSource::Derivation] {
                let g2 = derive_g2(&p, source).unwrap();
                let a = var_s(t, &g2, &p).unwrap();
                let b = var_s_recomposed(t, &g2, &p);
                prop_assert!(rel(a, b) < 1e-12, "{a} vs {b}");
            }
        }

        #[test]
        fn var_s_is_nonnegative(p in arb_params(), t in 0.0f64..10.0) {
            let g2 = derive_g2(&p, EtaSource::AsPrinted).unwrap();
            prop_assert!(var_s(t, &g2, &p).unwrap() >= 0.0);
        }
    }
}
