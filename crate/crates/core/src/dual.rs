//! The dual objective, its gradients, and its certified constants.
//!
//! For a Cressie-Read ball, the worst case over the divergence ball has the
//! dual form `inf over (lambda >= 0, eta)` of `E[f]`, where per sample
//!
//! ```text
//!     f = A * (loss - eta)_+^k* * lambda^(1-k*) + lambda * c_rho + eta
//!     A = (k-1)^k* / k,   c_rho = rho + 1/(k*(k-1))
//! ```
//!
//! and for the smoothed-CVaR ball
//!
//! ```text
//!     f = lambda * phi*((loss - eta)/lambda) + lambda * rho + eta .
//! ```
//!
//! `f` is jointly convex in `z = (lambda, eta)` for every fixed sample and
//! every fixed model parameter `x`, while the dependence on `x` inherits the
//! loss's non-convexity. Gradients:
//!
//! ```text
//!     d f / d lambda = A * (1 - k*) * (loss - eta)_+^k* * lambda^(-k*) + c_rho
//!     d f / d eta    = 1 - A * k* * (loss - eta)_+^(k*-1) * lambda^(1-k*)
//!     grad_x f       = A * k* * (loss - eta)_+^(k*-1) * lambda^(1-k*) * grad loss
//! ```
//!
//! Restricting `z` to a box keeps the objective smooth. [`compute_domain`]
//! builds the box from bounds on the optimal dual pair: with
//! `omega = (k*(k-1)*rho + 1)^(1/k)` and `a = omega^(-1/(k*-1))`,
//!
//! ```text
//!     lambda_bar = (k-1) * omega^(-(k-1)) * (1 + a/(1-a)) * B
//!     eta_bar    = lambda_bar * (k / ((k-1)^k* * k*))^(1/(k*-1))
//! ```
//!
//! bound every stationary `(lambda, eta)` into `[lambda0, lambda_bar] x
//! [-eta_bar, B]`; truncating below at `lambda0 > 0` costs at most
//! `2 * lambda0 * rho` in objective value. For CVaR the optimal `eta` lies
//! in `[0, B]` and `lambda_bar` is the root of the increasing function
//! `g(lambda) = rho + phi*(-B/lambda) - B/(mu*lambda)`.
//!
//! [`compute_constants`] turns the box plus the loss's `(B, G, L)` bounds
//! into the smoothness and variance constants that size steps and batches.
//! For Cressie-Read they are closed form; for CVaR they are suprema of the
//! closed-form per-sample derivatives over a dense grid, inflated by 1.5 and
//! flagged as empirical.

use serde::Serialize;

use crate::data::Dataset;
use crate::divergence::{cvar_conj, cvar_conj_grad, cvar_conj_grad2, DivergenceSpec, Family};
use crate::error::{Error, Result};
use crate::losses::{LossConstants, LossModel};
use crate::numeric::{axpy, bisect_increasing, clamp, pos, pos_pow};

/// A dual iterate `z = (lambda, eta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DualPoint {
    pub lambda: f64,
    pub eta: f64,
}

impl DualPoint {
    pub fn new(lambda: f64, eta: f64) -> Self {
        DualPoint { lambda, eta }
    }
}

/// Box domain for the dual pair.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DualDomain {
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub eta_lo: f64,
    pub eta_hi: f64,
}

impl DualDomain {
    /// Validated box; bounds must be finite with positive extent and
    /// `lambda_lo > 0`.
    pub fn new(lambda_lo: f64, lambda_hi: f64, eta_lo: f64, eta_hi: f64) -> Result<Self> {
        let all_finite = lambda_lo.is_finite()
            && lambda_hi.is_finite()
            && eta_lo.is_finite()
            && eta_hi.is_finite();
        if !all_finite || lambda_lo <= 0.0 || lambda_hi <= lambda_lo || eta_hi <= eta_lo {
            return Err(Error::config(format!(
                "invalid dual box [{lambda_lo}, {lambda_hi}] x [{eta_lo}, {eta_hi}]"
            )));
        }
        Ok(DualDomain {
            lambda_lo,
            lambda_hi,
            eta_lo,
            eta_hi,
        })
    }

    pub fn contains(&self, z: DualPoint, tol: f64) -> bool {
        z.lambda >= self.lambda_lo - tol
            && z.lambda <= self.lambda_hi + tol
            && z.eta >= self.eta_lo - tol
            && z.eta <= self.eta_hi + tol
    }

    /// Euclidean projection (coordinate clamp).
    pub fn project(&self, z: DualPoint) -> DualPoint {
        DualPoint {
            lambda: clamp(z.lambda, self.lambda_lo, self.lambda_hi),
            eta: clamp(z.eta, self.eta_lo, self.eta_hi),
        }
    }

    pub fn corners(&self) -> [DualPoint; 4] {
        [
            DualPoint::new(self.lambda_lo, self.eta_lo),
            DualPoint::new(self.lambda_lo, self.eta_hi),
            DualPoint::new(self.lambda_hi, self.eta_lo),
            DualPoint::new(self.lambda_hi, self.eta_hi),
        ]
    }

    /// Box diagonal.
    pub fn diameter(&self) -> f64 {
        let dl = self.lambda_hi - self.lambda_lo;
        let de = self.eta_hi - self.eta_lo;
        dl.hypot(de)
    }
}

/// Smoothness and variance constants of the dual objective on a box.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ObjectiveConstants {
    /// Smoothness of `x -> grad_x F`.
    pub l_x: f64,
    /// Smoothness of `z -> grad_z F` over the box.
    pub l_z: f64,
    /// Per-sample `x`-gradient norm bound.
    pub sigma0: f64,
    /// Per-sample `z`-gradient norm bound.
    pub sigma1: f64,
    /// Box diameter.
    pub d: f64,
    /// Curvature constant `D^2 * L_z` scaling the dual step rule.
    pub c: f64,
    /// True when the constants were estimated by sampling rather than
    /// derived in closed form.
    pub empirical: bool,
}

/// Per-`(spec, z)` evaluator with the `lambda` powers hoisted out of the
/// per-sample loop.
pub(crate) enum SampleEval {
    CressieRead {
        a: f64,
        k_star: f64,
        /// `c_rho * lambda + eta`, the loss-independent part of `f`.
        affine: f64,
        c_rho: f64,
        eta: f64,
        /// `lambda^(1-k*)`
        lam_1m: f64,
        /// `lambda^(-k*)`
        lam_neg: f64,
    },
    Cvar {
        mu: f64,
        rho: f64,
        lambda: f64,
        eta: f64,
    },
}

impl SampleEval {
    pub(crate) fn new(spec: &DivergenceSpec, z: DualPoint) -> Result<Self> {
        if !(z.lambda.is_finite() && z.lambda > 0.0) {
            return Err(Error::domain(format!(
                "dual multiplier must be positive and finite, got {}",
                z.lambda
            )));
        }
        if !z.eta.is_finite() {
            return Err(Error::domain(format!("dual shift must be finite, got {}", z.eta)));
        }
        Ok(match spec.family() {
            Family::CressieRead { k } => {
                let k_star = k / (k - 1.0);
                let lam_km1 = pos_pow(z.lambda, k_star - 1.0);
                let c_rho = spec.rho() + 1.0 / (k * (k - 1.0));
                SampleEval::CressieRead {
                    a: pos_pow(k - 1.0, k_star) / k,
                    k_star,
                    affine: c_rho * z.lambda + z.eta,
                    c_rho,
                    eta: z.eta,
                    lam_1m: 1.0 / lam_km1,
                    lam_neg: 1.0 / (lam_km1 * z.lambda),
                }
            }
            Family::SmoothedCvar { mu } => SampleEval::Cvar {
                mu,
                rho: spec.rho(),
                lambda: z.lambda,
                eta: z.eta,
            },
        })
    }

    /// Per-sample objective value.
    #[inline]
    pub(crate) fn f(&self, loss: f64) -> f64 {
        match *self {
            SampleEval::CressieRead {
                a,
                k_star,
                affine,
                eta,
                lam_1m,
                ..
            } => a * pos_pow_or_zero(pos(loss - eta), k_star) * lam_1m + affine,
            SampleEval::Cvar {
                mu,
                rho,
                lambda,
                eta,
            } => lambda * cvar_conj(mu, (loss - eta) / lambda) + lambda * rho + eta,
        }
    }

    /// Per-sample `(d/d lambda, d/d eta)`.
    #[inline]
    pub(crate) fn grad_z(&self, loss: f64) -> (f64, f64) {
        match *self {
            SampleEval::CressieRead {
                a,
                k_star,
                c_rho,
                eta,
                lam_1m,
                lam_neg,
                ..
            } => {
                let excess = pos(loss - eta);
                let e_pow = pos_pow_or_zero(excess, k_star - 1.0);
                let d_lambda = a * (1.0 - k_star) * e_pow * excess * lam_neg + c_rho;
                let d_eta = 1.0 - a * k_star * e_pow * lam_1m;
                (d_lambda, d_eta)
            }
            SampleEval::Cvar {
                mu,
                rho,
                lambda,
                eta,
            } => {
                let u = (loss - eta) / lambda;
                let conj = cvar_conj(mu, u);
                let slope = cvar_conj_grad(mu, u);
                (rho + conj - u * slope, 1.0 - slope)
            }
        }
    }

    /// Coefficient multiplying the loss gradient in `grad_x f`.
    #[inline]
    pub(crate) fn gx_coeff(&self, loss: f64) -> f64 {
        match *self {
            SampleEval::CressieRead {
                a,
                k_star,
                eta,
                lam_1m,
                ..
            } => a * k_star * pos_pow_or_zero(pos(loss - eta), k_star - 1.0) * lam_1m,
            SampleEval::Cvar {
                mu, lambda, eta, ..
            } => cvar_conj_grad(mu, (loss - eta) / lambda),
        }
    }
}

/// `base^p` that also accepts `p = 0` bases of zero (returns zero), since
/// `(loss - eta)_+` legitimately vanishes.
#[inline]
fn pos_pow_or_zero(base: f64, p: f64) -> f64 {
    if base == 0.0 {
        0.0
    } else {
        pos_pow(base, p)
    }
}

/// Per-sample dual objective `f(loss; z)`.
pub fn f_sample(spec: &DivergenceSpec, loss: f64, z: DualPoint) -> Result<f64> {
    Ok(SampleEval::new(spec, z)?.f(loss))
}

/// Per-sample gradient in `z`: `(d/d lambda, d/d eta)`.
pub fn grad_z_sample(spec: &DivergenceSpec, loss: f64, z: DualPoint) -> Result<(f64, f64)> {
    Ok(SampleEval::new(spec, z)?.grad_z(loss))
}

/// Per-sample gradient in `x`, given the loss value and loss gradient.
pub fn grad_x_sample(
    spec: &DivergenceSpec,
    loss: f64,
    loss_grad: &[f64],
    z: DualPoint,
) -> Result<Vec<f64>> {
    let coeff = SampleEval::new(spec, z)?.gx_coeff(loss);
    Ok(loss_grad.iter().map(|g| coeff * g).collect())
}

fn check_batch(batch: &[usize], data: &Dataset) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::domain("batch must contain at least one index"));
    }
    if let Some(&bad) = batch.iter().find(|&&i| i >= data.len()) {
        return Err(Error::domain(format!(
            "batch index {bad} out of range for {} samples",
            data.len()
        )));
    }
    Ok(())
}

/// Mini-batch mean of the dual objective at `(x, z)`.
///
/// The reduction is a fixed left-to-right sum over `batch` order, so a seeded
/// run reproduces bit-identical values.
pub fn batch_objective(
    spec: &DivergenceSpec,
    model: &dyn LossModel,
    data: &Dataset,
    x: &[f64],
    batch: &[usize],
    z: DualPoint,
) -> Result<f64> {
    check_batch(batch, data)?;
    let eval = SampleEval::new(spec, z)?;
    let mut acc = 0.0;
    for &idx in batch {
        acc += eval.f(model.value(x, data, idx));
    }
    Ok(acc / batch.len() as f64)
}

/// Mini-batch mean gradient in `x`.
pub fn batch_grad_x(
    spec: &DivergenceSpec,
    model: &dyn LossModel,
    data: &Dataset,
    x: &[f64],
    batch: &[usize],
    z: DualPoint,
) -> Result<Vec<f64>> {
    check_batch(batch, data)?;
    let eval = SampleEval::new(spec, z)?;
    let mut acc = vec![0.0; model.dim()];
    let mut grad = vec![0.0; model.dim()];
    let scale = 1.0 / batch.len() as f64;
    for &idx in batch {
        let loss = model.value(x, data, idx);
        let coeff = eval.gx_coeff(loss);
        if coeff != 0.0 {
            model.grad(x, data, idx, &mut grad);
            axpy(&mut acc, scale * coeff, &grad);
        }
    }
    Ok(acc)
}

/// Mini-batch mean gradient in `z`.
pub fn batch_grad_z(
    spec: &DivergenceSpec,
    model: &dyn LossModel,
    data: &Dataset,
    x: &[f64],
    batch: &[usize],
    z: DualPoint,
) -> Result<(f64, f64)> {
    check_batch(batch, data)?;
    let eval = SampleEval::new(spec, z)?;
    let mut d_lambda = 0.0;
    let mut d_eta = 0.0;
    for &idx in batch {
        let (dl, de) = eval.grad_z(model.value(x, data, idx));
        d_lambda += dl;
        d_eta += de;
    }
    let scale = 1.0 / batch.len() as f64;
    Ok((d_lambda * scale, d_eta * scale))
}

/// Builds the dual box `[lambda0, lambda_bar] x [eta_lo, B]` for losses
/// bounded by `b`.
///
/// Errors when `lambda0` is not strictly inside `(0, lambda_bar)`: that
/// means the requested lower truncation exceeds the largest multiplier any
/// stationary point can use, so no valid box exists.
pub fn compute_domain(spec: &DivergenceSpec, lambda0: f64, b: f64) -> Result<DualDomain> {
    if !(lambda0.is_finite() && lambda0 > 0.0) {
        return Err(Error::config(format!(
            "lambda0 must be positive and finite, got {lambda0}"
        )));
    }
    if !(b.is_finite() && b > 0.0) {
        return Err(Error::config(format!(
            "loss bound must be positive and finite, got {b}"
        )));
    }
    let rho = spec.rho();
    match spec.family() {
        Family::CressieRead { k } => {
            let k_star = k / (k - 1.0);
            let omega = pos_pow(k * (k - 1.0) * rho + 1.0, 1.0 / k);
            let a = pos_pow(1.0 / omega, 1.0 / (k_star - 1.0));
            let lambda_bar =
                (k - 1.0) / pos_pow(omega, k - 1.0) * (1.0 + a / (1.0 - a)) * b;
            let eta_bar =
                lambda_bar * pos_pow(k / (pos_pow(k - 1.0, k_star) * k_star), 1.0 / (k_star - 1.0));
            if lambda0 >= lambda_bar {
                return Err(Error::config(format!(
                    "lambda0 = {lambda0} is not below lambda_bar = {lambda_bar}; \
                     lower the truncation or shrink rho"
                )));
            }
            DualDomain::new(lambda0, lambda_bar, -eta_bar, b)
        }
        Family::SmoothedCvar { mu } => {
            // lambda_bar is the unique root of the increasing function
            // g(lambda) = rho + phi*(-b/lambda) - b/(mu*lambda).
            let g = |lambda: f64| rho + cvar_conj(mu, -b / lambda) - b / (mu * lambda);
            let lo = 1e-8;
            if g(lo) > 0.0 {
                return Err(Error::config(
                    "divergence radius too large relative to the loss bound".to_string(),
                ));
            }
            let mut hi = 10.0 * b / (mu * rho);
            let mut guard = 0;
            while g(hi) < 0.0 {
                hi *= 2.0;
                guard += 1;
                if guard > 200 {
                    return Err(Error::config(
                        "failed to bracket the CVaR multiplier bound".to_string(),
                    ));
                }
            }
            let lambda_bar = bisect_increasing(g, lo, hi, 0.0, 1e-13);
            if lambda0 >= lambda_bar {
                return Err(Error::config(format!(
                    "lambda0 = {lambda0} is not below lambda_bar = {lambda_bar}; \
                     lower the truncation or shrink rho"
                )));
            }
            DualDomain::new(lambda0, lambda_bar, 0.0, b)
        }
    }
}

/// Smoothness and variance constants on `domain` for a loss with bounds
/// `lc = (B, G, L)`.
pub fn compute_constants(
    spec: &DivergenceSpec,
    domain: &DualDomain,
    lc: &LossConstants,
) -> Result<ObjectiveConstants> {
    if !(lc.b > 0.0 && lc.g > 0.0 && lc.l > 0.0) {
        return Err(Error::config(format!(
            "loss constants must be strictly positive, got B = {}, G = {}, L = {}",
            lc.b, lc.g, lc.l
        )));
    }
    let lambda0 = domain.lambda_lo;
    // Largest possible excess (loss - eta) over the box.
    let s = lc.b - domain.eta_lo;
    let rho = spec.rho();
    let (l_x, l_z, sigma0, sigma1, empirical) = match spec.family() {
        Family::CressieRead { k } => {
            let k_star = k / (k - 1.0);
            let a = pos_pow(k - 1.0, k_star) / k;
            let l_z = if k == 2.0 {
                1.0 / lambda0 + 2.0 * s / (lambda0 * lambda0) + s * s / (lambda0 * lambda0 * lambda0)
            } else {
                a * k_star
                    * (k_star - 1.0)
                    * (pos_pow(s, k_star) / pos_pow(lambda0, k_star + 1.0)
                        + pos_pow(s, k_star - 2.0) / pos_pow(lambda0, k_star - 1.0))
            };
            let lam_1m = 1.0 / pos_pow(lambda0, k_star - 1.0);
            // s > 0 because eta_lo <= 0 < B, so s^(k*-2) is 1 when k* = 2.
            let s_km2 = if k_star == 2.0 {
                1.0
            } else {
                pos_pow(s, k_star - 2.0)
            };
            let l_x = a * k_star * lam_1m * s_km2 * ((k_star - 1.0) * lc.g * lc.g + s * lc.l);
            let sigma0 = a * k_star * pos_pow(s, k_star - 1.0) * lc.g * lam_1m;
            let sigma1 = (rho + 1.0 + 1.0 / (k * (k - 1.0)))
                + a * pos_pow(s, k_star) / pos_pow(lambda0, k_star)
                    * (k_star - 1.0 + lambda0 * k_star / s);
            (l_x, l_z, sigma0, sigma1, false)
        }
        Family::SmoothedCvar { mu } => {
            // No useful closed forms exist for this family's constants, so
            // take suprema of the per-sample derivative formulas over a grid
            // of (loss, lambda, eta) and inflate by 1.5.
            let n_loss = 128;
            let n_lam = 96;
            let n_eta = 48;
            let lam_ratio = (domain.lambda_hi / lambda0).powf(1.0 / (n_lam - 1) as f64);
            let mut max_hess: f64 = 0.0;
            let mut max_lx: f64 = 0.0;
            let mut max_slope: f64 = 0.0;
            let mut max_gz: f64 = 0.0;
            let mut lambda = lambda0;
            for _ in 0..n_lam {
                for ie in 0..n_eta {
                    let eta =
                        domain.eta_lo + (domain.eta_hi - domain.eta_lo) * ie as f64 / (n_eta - 1) as f64;
                    for il in 0..n_loss {
                        let loss = lc.b * il as f64 / (n_loss - 1) as f64;
                        let u = (loss - eta) / lambda;
                        let curv = cvar_conj_grad2(mu, u);
                        let slope = cvar_conj_grad(mu, u);
                        // The per-sample z-Hessian is curv/lambda * [[u^2, u], [u, 1]],
                        // a rank-one matrix with eigenvalue curv*(1 + u^2)/lambda.
                        max_hess = max_hess.max(curv * (1.0 + u * u) / lambda);
                        max_lx = max_lx.max(curv * lc.g * lc.g / lambda + slope * lc.l);
                        max_slope = max_slope.max(slope);
                        let d_lambda = rho + cvar_conj(mu, u) - u * slope;
                        let d_eta = 1.0 - slope;
                        max_gz = max_gz.max(d_lambda.hypot(d_eta));
                    }
                }
                lambda *= lam_ratio;
            }
            (
                1.5 * max_lx,
                1.5 * max_hess,
                1.5 * max_slope * lc.g,
                1.5 * max_gz,
                true,
            )
        }
    };
    let d = domain.diameter();
    let constants = ObjectiveConstants {
        l_x,
        l_z,
        sigma0,
        sigma1,
        d,
        c: d * d * l_z,
        empirical,
    };
    debug_assert!(
        constants.l_x > 0.0
            && constants.l_z > 0.0
            && constants.sigma0 > 0.0
            && constants.sigma1 > 0.0
    );
    Ok(constants)
}
