//! f-divergence families and their convex conjugates.
//!
//! A divergence between distributions `Q` and `P0` on the same atoms is
//! built from a convex generator `phi` with `phi(1) = 0`:
//!
//! ```text
//!     D_phi(Q || P0) = sum_i p0_i * phi(q_i / p0_i)
//! ```
//!
//! Two generator families are supported.
//!
//! **Cressie-Read**, indexed by `k` in `(1, 2]` with conjugate exponent
//! `k* = k / (k - 1)`:
//!
//! ```text
//!     phi_k(t)      = (t^k - k*t + k - 1) / (k * (k - 1))        for t >= 0
//!     phi_k*(t)     = (1/k) * [ ((k-1)*t + 1)_+^k* - 1 ]
//!     phi_k*'(t)    = (k*(k-1)/k) * ((k-1)*t + 1)_+^(k*-1)
//! ```
//!
//! `k = 2` is the chi-squared case, `phi(t) = (t - 1)^2 / 2`.
//!
//! **Smoothed CVaR**, indexed by a tail level `mu` in `(0, 1)`. Its
//! generator is finite on `[0, 1/mu)` and caps likelihood ratios at `1/mu`,
//! which is what makes the worst case resemble a conditional value at risk:
//!
//! ```text
//!     phi_s(t)   = t*ln(t) + ((1 - mu*t)/mu) * ln((1 - mu*t)/(1 - mu))
//!     phi_s*(t)  = (1/mu) * ln(1 - mu + mu*e^t)
//!     phi_s*'(t) = e^t / (1 - mu + mu*e^t)            in (0, 1/mu)
//! ```
//!
//! Outside its domain a generator evaluates to `+inf`; only non-finite
//! arguments are rejected as errors. Conjugates are finite everywhere and
//! the CVaR conjugate is evaluated in a form that never exponentiates a
//! large positive argument, so it stays finite for arguments far beyond
//! `ln(f64::MAX)`.

use crate::error::{Error, Result};
use crate::numeric::pos_pow;

/// Generator family, with the family-specific shape parameter inline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    /// Cressie-Read generator with exponent `k` in `(1, 2]`.
    CressieRead { k: f64 },
    /// Smoothed CVaR generator with tail level `mu` in `(0, 1)`.
    SmoothedCvar { mu: f64 },
}

/// A divergence ball: generator family plus radius `rho`.
///
/// `rho` must be strictly positive; a zero-radius ball collapses the robust
/// problem to plain ERM and is rejected at construction rather than handled
/// as a degenerate special case downstream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceSpec {
    family: Family,
    rho: f64,
}

impl DivergenceSpec {
    /// Cressie-Read ball with exponent `k` in `(1, 2]` and radius `rho > 0`.
    pub fn cressie_read(k: f64, rho: f64) -> Result<Self> {
        if !k.is_finite() || k <= 1.0 || k > 2.0 {
            return Err(Error::InvalidDivergence(format!(
                "Cressie-Read exponent must lie in (1, 2], got {k}"
            )));
        }
        Self::with_family(Family::CressieRead { k }, rho)
    }

    /// Smoothed-CVaR ball with tail level `mu` in `(0, 1)` and radius `rho > 0`.
    pub fn smoothed_cvar(mu: f64, rho: f64) -> Result<Self> {
        if !mu.is_finite() || mu <= 0.0 || mu >= 1.0 {
            return Err(Error::InvalidDivergence(format!(
                "CVaR tail level must lie in (0, 1), got {mu}"
            )));
        }
        Self::with_family(Family::SmoothedCvar { mu }, rho)
    }

    fn with_family(family: Family, rho: f64) -> Result<Self> {
        if !rho.is_finite() || rho <= 0.0 {
            return Err(Error::InvalidDivergence(format!(
                "divergence radius must be strictly positive, got {rho}"
            )));
        }
        Ok(DivergenceSpec { family, rho })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// The Cressie-Read exponent `k`, if this is a Cressie-Read ball.
    pub fn cressie_k(&self) -> Option<f64> {
        match self.family {
            Family::CressieRead { k } => Some(k),
            Family::SmoothedCvar { .. } => None,
        }
    }

    /// Conjugate exponent `k* = k / (k - 1)`, in `[2, inf)`.
    pub fn k_star(&self) -> Option<f64> {
        self.cressie_k().map(|k| k / (k - 1.0))
    }

    /// The CVaR tail level `mu`, if this is a smoothed-CVaR ball.
    pub fn cvar_mu(&self) -> Option<f64> {
        match self.family {
            Family::SmoothedCvar { mu } => Some(mu),
            Family::CressieRead { .. } => None,
        }
    }

    /// Generator value `phi(t)`.
    ///
    /// Returns `+inf` outside the generator's domain (`t < 0`, and
    /// `t > 1/mu` for CVaR; the boundary `t = 1/mu` carries its finite
    /// limit, matching the closed function the conjugate is taken of).
    /// Non-finite `t` is a domain error.
    pub fn phi(&self, t: f64) -> Result<f64> {
        if !t.is_finite() {
            return Err(Error::domain(format!("phi argument must be finite, got {t}")));
        }
        if t < 0.0 {
            return Ok(f64::INFINITY);
        }
        Ok(match self.family {
            Family::CressieRead { k } => {
                if k == 2.0 {
                    // Chi-squared closed form; algebraically identical to the
                    // general expression but exact at k = 2.
                    0.5 * (t - 1.0) * (t - 1.0)
                } else {
                    (pos_pow(t, k) - k * t + k - 1.0) / (k * (k - 1.0))
                }
            }
            Family::SmoothedCvar { mu } => {
                if t * mu > 1.0 {
                    return Ok(f64::INFINITY);
                }
                let t_ln_t = if t == 0.0 { 0.0 } else { t * t.ln() };
                let excess = 1.0 - mu * t;
                if excess <= 0.0 {
                    // Likelihood-ratio cap: the entropy term vanishes in the
                    // limit, leaving t*ln(t) alone.
                    t_ln_t
                } else {
                    t_ln_t + excess / mu * (excess / (1.0 - mu)).ln()
                }
            }
        })
    }

    /// Convex conjugate `phi*(t) = sup_s { t*s - phi(s) }`, finite for all
    /// finite `t`.
    pub fn phi_conj(&self, t: f64) -> Result<f64> {
        if !t.is_finite() {
            return Err(Error::domain(format!(
                "phi_conj argument must be finite, got {t}"
            )));
        }
        Ok(match self.family {
            Family::CressieRead { k } => {
                let k_star = k / (k - 1.0);
                let base = (k - 1.0) * t + 1.0;
                (pos_pow(base, k_star) - 1.0) / k
            }
            Family::SmoothedCvar { mu } => cvar_conj(mu, t),
        })
    }

    /// Derivative of the conjugate, `d/dt phi*(t)`.
    ///
    /// Nondecreasing in `t`; for CVaR it is sandwiched in `(0, 1/mu)`, which
    /// is the likelihood-ratio cap of the family.
    pub fn phi_conj_grad(&self, t: f64) -> Result<f64> {
        if !t.is_finite() {
            return Err(Error::domain(format!(
                "phi_conj_grad argument must be finite, got {t}"
            )));
        }
        Ok(match self.family {
            Family::CressieRead { k } => {
                let k_star = k / (k - 1.0);
                let base = (k - 1.0) * t + 1.0;
                if base <= 0.0 {
                    0.0
                } else {
                    (k_star * (k - 1.0) / k) * pos_pow(base, k_star - 1.0)
                }
            }
            Family::SmoothedCvar { mu } => cvar_conj_grad(mu, t),
        })
    }

    /// Generator derivative `phi'(t)` on the interior of the domain,
    /// the inverse map of `phi_conj_grad`.
    #[cfg(test)]
    pub(crate) fn phi_grad(&self, t: f64) -> f64 {
        match self.family {
            Family::CressieRead { k } => (pos_pow(t, k - 1.0) - 1.0) / (k - 1.0),
            Family::SmoothedCvar { mu } => (t * (1.0 - mu) / (1.0 - mu * t)).ln(),
        }
    }
}

/// Smoothed-CVaR conjugate, overflow-safe for any finite `t`.
///
/// `1 - mu + mu*e^t = e^t * (mu + (1 - mu)*e^-t)`; factoring out `e^t`
/// keeps the exponential bounded for large positive arguments.
#[inline]
pub(crate) fn cvar_conj(mu: f64, t: f64) -> f64 {
    if t > 0.0 {
        (t + (mu + (1.0 - mu) * (-t).exp()).ln()) / mu
    } else {
        (mu * t.exp_m1()).ln_1p() / mu
    }
}

/// Derivative of the smoothed-CVaR conjugate, in `(0, 1/mu)`.
#[inline]
pub(crate) fn cvar_conj_grad(mu: f64, t: f64) -> f64 {
    if t > 0.0 {
        1.0 / (mu + (1.0 - mu) * (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 - mu + mu * e)
    }
}

/// Second derivative of the smoothed-CVaR conjugate, in `(0, 1/(4*mu)]`.
#[inline]
pub(crate) fn cvar_conj_grad2(mu: f64, t: f64) -> f64 {
    if t > 0.0 {
        let e = (-t).exp();
        (1.0 - mu) * e / {
            let d = mu + (1.0 - mu) * e;
            d * d
        }
    } else {
        let e = t.exp();
        let d = 1.0 - mu + mu * e;
        (1.0 - mu) * e / (d * d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chi2(rho: f64) -> DivergenceSpec {
        DivergenceSpec::cressie_read(2.0, rho).unwrap()
    }

    #[test]
    fn constructors_reject_bad_parameters() {
        assert!(DivergenceSpec::cressie_read(1.0, 0.5).is_err());
        assert!(DivergenceSpec::cressie_read(2.5, 0.5).is_err());
        assert!(DivergenceSpec::cressie_read(f64::NAN, 0.5).is_err());
        assert!(DivergenceSpec::cressie_read(2.0, 0.0).is_err());
        assert!(DivergenceSpec::cressie_read(2.0, -1.0).is_err());
        assert!(DivergenceSpec::smoothed_cvar(0.0, 0.5).is_err());
        assert!(DivergenceSpec::smoothed_cvar(1.0, 0.5).is_err());
        assert!(DivergenceSpec::smoothed_cvar(0.5, 0.0).is_err());
    }

    #[test]
    fn conjugate_exponent_is_holder_dual() {
        for k in [2.0, 1.5, 1.25, 1.01] {
            let spec = DivergenceSpec::cressie_read(k, 1.0).unwrap();
            let k_star = spec.k_star().unwrap();
            assert!(
                (1.0 / k + 1.0 / k_star - 1.0).abs() < 1e-12,
                "1/k + 1/k* != 1 for k = {k}"
            );
        }
    }

    #[test]
    fn generator_and_conjugate_gradients_are_inverse_maps() {
        let specs = [
            DivergenceSpec::cressie_read(2.0, 0.5).unwrap(),
            DivergenceSpec::cressie_read(1.5, 2.0).unwrap(),
            DivergenceSpec::smoothed_cvar(0.3, 0.5).unwrap(),
        ];
        for spec in &specs {
            for t in [-2.0, -0.5, 0.1, 0.7, 1.9] {
                let q = spec.phi_conj_grad(t).unwrap();
                if q <= 1e-12 {
                    continue;
                }
                let back = spec.phi_grad(q);
                assert!(
                    (back - t).abs() <= 1e-9 * (1.0 + t.abs()),
                    "phi'((phi*)'({t})) = {back} for {spec:?}"
                );
            }
        }
    }

    #[test]
    fn chi_squared_values() {
        let spec = chi2(1.0);
        assert_eq!(spec.phi(2.0).unwrap(), 0.5);
        assert_eq!(spec.phi(1.0).unwrap(), 0.0);
        assert_eq!(spec.phi(-0.1).unwrap(), f64::INFINITY);
    }

    #[test]
    fn phi_at_one_is_zero_for_every_family() {
        for k in [2.0, 1.7, 1.5, 1.25, 1.05] {
            let spec = DivergenceSpec::cressie_read(k, 1.0).unwrap();
            assert_eq!(spec.phi(1.0).unwrap(), 0.0, "phi(1) != 0 for k = {k}");
        }
        for mu in [0.1, 0.3, 0.5, 0.9] {
            let spec = DivergenceSpec::smoothed_cvar(mu, 1.0).unwrap();
            assert_eq!(spec.phi(1.0).unwrap(), 0.0, "phi(1) != 0 for mu = {mu}");
        }
    }

    #[test]
    fn k2_reduces_to_chi_squared_exactly() {
        let spec = chi2(1.0);
        for t in [0.0, 0.37, 1.0, 1.9, 3.3, 12.5] {
            let expected = 0.5 * (t - 1.0) * (t - 1.0);
            assert_eq!(spec.phi(t).unwrap(), expected, "mismatch at t = {t}");
        }
    }

    #[test]
    fn generators_are_midpoint_convex() {
        let cases: Vec<DivergenceSpec> = vec![
            chi2(1.0),
            DivergenceSpec::cressie_read(1.5, 1.0).unwrap(),
            DivergenceSpec::cressie_read(1.25, 1.0).unwrap(),
            DivergenceSpec::smoothed_cvar(0.3, 1.0).unwrap(),
            DivergenceSpec::smoothed_cvar(0.7, 1.0).unwrap(),
        ];
        for spec in &cases {
            let hi = match spec.family() {
                Family::SmoothedCvar { mu } => 0.999 / mu,
                Family::CressieRead { .. } => 8.0,
            };
            let n = 200;
            for i in 0..n {
                for j in (i + 1)..n {
                    let a = hi * i as f64 / n as f64;
                    let b = hi * j as f64 / n as f64;
                    let mid = 0.5 * (a + b);
                    let lhs = spec.phi(mid).unwrap();
                    let rhs = 0.5 * (spec.phi(a).unwrap() + spec.phi(b).unwrap());
                    assert!(
                        lhs <= rhs + 1e-12,
                        "convexity violated for {:?} at ({a}, {b}): {lhs} > {rhs}",
                        spec.family()
                    );
                }
            }
        }
    }

    #[test]
    fn chi_squared_conjugate_values() {
        let spec = chi2(1.0);
        assert_eq!(spec.phi_conj(1.0).unwrap(), 1.5);
        // (k-1)*t + 1 <= 0: the positive part clamps and the value floors at -1/k.
        assert_eq!(spec.phi_conj(-2.0).unwrap(), -0.5);
    }

    #[test]
    fn cvar_conjugate_values() {
        let spec = DivergenceSpec::smoothed_cvar(0.5, 1.0).unwrap();
        assert_eq!(spec.phi_conj(0.0).unwrap(), 0.0);
        assert_eq!(spec.phi_conj_grad(0.0).unwrap(), 1.0);
    }

    #[test]
    fn cvar_conjugate_never_overflows() {
        let spec = DivergenceSpec::smoothed_cvar(0.2, 1.0).unwrap();
        for t in [700.0, 1_000.0, 1e6, 1e12] {
            let v = spec.phi_conj(t).unwrap();
            assert!(v.is_finite(), "phi_conj({t}) overflowed: {v}");
            // For large t the conjugate approaches (t + ln(mu)) / mu.
            let asymptote = (t + 0.2f64.ln()) / 0.2;
            assert!((v - asymptote).abs() < 1e-6 * asymptote, "phi_conj({t}) = {v}");
            let g = spec.phi_conj_grad(t).unwrap();
            assert!(g > 0.0 && g <= 5.0, "grad out of (0, 1/mu]: {g}");
        }
        assert!(spec.phi_conj(-1e12).unwrap().is_finite());
    }

    #[test]
    fn non_finite_arguments_are_domain_errors() {
        let spec = chi2(1.0);
        assert!(spec.phi(f64::NAN).is_err());
        assert!(spec.phi(f64::INFINITY).is_err());
        assert!(spec.phi_conj(f64::NAN).is_err());
        assert!(spec.phi_conj_grad(f64::NEG_INFINITY).is_err());
    }

    /// The conjugate must match a direct grid maximization of t*s - phi(s).
    #[test]
    fn conjugate_matches_grid_supremum() {
        let cases: Vec<DivergenceSpec> = vec![
            chi2(1.0),
            DivergenceSpec::cressie_read(1.5, 1.0).unwrap(),
            DivergenceSpec::cressie_read(1.25, 1.0).unwrap(),
            DivergenceSpec::smoothed_cvar(0.2, 1.0).unwrap(),
            DivergenceSpec::smoothed_cvar(0.5, 1.0).unwrap(),
        ];
        for spec in &cases {
            let s_hi = match spec.family() {
                // The grid sup over s in [0, 1/mu) is only attained up to the
                // grid resolution; stop just below the pole.
                Family::SmoothedCvar { mu } => (1.0 - 1e-9) / mu,
                Family::CressieRead { .. } => 400.0,
            };
            let grid = 400_000;
            for &t in &[-3.0, -1.0, -0.25, 0.0, 0.4, 1.0, 2.5] {
                let mut sup = f64::NEG_INFINITY;
                for i in 0..=grid {
                    let s = s_hi * i as f64 / grid as f64;
                    let v = t * s - spec.phi(s).unwrap();
                    if v > sup {
                        sup = v;
                    }
                }
                let conj = spec.phi_conj(t).unwrap();
                assert!(
                    (conj - sup).abs() <= 1e-4,
                    "conjugacy gap for {:?} at t = {t}: conj {conj} vs grid sup {sup}",
                    spec.family()
                );
            }
        }
    }

    /// Central differences of phi_conj must reproduce phi_conj_grad.
    #[test]
    fn conjugate_gradient_matches_finite_differences() {
        let cases: Vec<DivergenceSpec> = vec![
            chi2(1.0),
            DivergenceSpec::cressie_read(1.5, 1.0).unwrap(),
            DivergenceSpec::cressie_read(1.25, 1.0).unwrap(),
            DivergenceSpec::smoothed_cvar(0.2, 1.0).unwrap(),
            DivergenceSpec::smoothed_cvar(0.5, 1.0).unwrap(),
        ];
        let h = 1e-6;
        for spec in &cases {
            for i in 0..200 {
                let t = -4.0 + 8.0 * i as f64 / 199.0;
                // Skip the positive-part kink of the Cressie-Read conjugate.
                if let Family::CressieRead { k } = spec.family() {
                    if ((k - 1.0) * t + 1.0).abs() < 1e-3 {
                        continue;
                    }
                }
                let fd = (spec.phi_conj(t + h).unwrap() - spec.phi_conj(t - h).unwrap()) / (2.0 * h);
                let an = spec.phi_conj_grad(t).unwrap();
                let rel = (fd - an).abs() / an.abs().max(1.0);
                assert!(
                    rel <= 1e-6,
                    "gradient mismatch for {:?} at t = {t}: fd {fd} vs analytic {an}",
                    spec.family()
                );
            }
        }
    }

    #[test]
    fn cvar_conjugate_second_derivative_matches_finite_differences() {
        let h = 1e-5;
        for mu in [0.1, 0.4, 0.8] {
            for i in 0..100 {
                let t = -20.0 + 45.0 * i as f64 / 99.0;
                let fd = (cvar_conj_grad(mu, t + h) - cvar_conj_grad(mu, t - h)) / (2.0 * h);
                let an = cvar_conj_grad2(mu, t);
                assert!(
                    (fd - an).abs() <= 1e-7 * (1.0 + an.abs()),
                    "mu {mu}, t {t}: fd {fd} vs analytic {an}"
                );
                assert!(an >= 0.0 && an <= 0.25 / mu + 1e-12, "curvature cap violated: {an}");
            }
        }
    }

    #[test]
    fn conjugate_gradient_is_nondecreasing_and_capped() {
        let spec = DivergenceSpec::smoothed_cvar(0.25, 1.0).unwrap();
        let mut prev = 0.0;
        for i in 0..2000 {
            let t = -50.0 + 0.1 * i as f64;
            let g = spec.phi_conj_grad(t).unwrap();
            assert!(g >= prev - 1e-15, "not monotone at t = {t}");
            assert!(g > 0.0 && g <= 4.0, "outside (0, 1/mu] at t = {t}: {g}");
            prev = g;
        }
    }
}
