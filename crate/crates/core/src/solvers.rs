//! Stochastic solvers for the saddle problem `min_x min_{z in M} F(x; z)`.
//!
//! The main algorithm alternates a stochastic gradient step in the model
//! parameters with a Frank-Wolfe (conditional-gradient) step in the dual
//! pair, which never leaves the box `M`:
//!
//! ```text
//!     x_{t+1} = x_t - alpha * mean of n_x sampled grad_x f(x_t; z_t)
//!     v_t     = mean of n_z sampled grad_z f(x_{t+1}; z_t)
//!     e_t     = argmin_{e in M} <e, v_t>          (a box corner)
//!     d_t     = e_t - z_t
//!     g_t     = <d_t, -v_t>                        (Frank-Wolfe gap, >= 0)
//!     gamma_t = clamp(g_t / C, 0, 1)
//!     z_{t+1} = z_t + gamma_t * d_t
//! ```
//!
//! The reported iterate is `(x_{t'+1}, z_{t'})` where `t'` minimizes the
//! recorded stationarity criterion `|grad_x|^2 + g_t^2`, maintained online.
//! Because `gamma_t` is a convex-combination weight, every `z_t` stays in
//! the box without projections, and `g_t` certifies dual suboptimality:
//! for the batch objective, `g_t >= f(x_{t+1}; z_t) - min_{z in M} f(x_{t+1}; z)`.
//!
//! Baselines: projected gradient descent jointly on `(x, lambda, eta)`
//! with a Euclidean box projection, a penalized variant that fixes `lambda`
//! and runs SGD on `(x, eta)`, and plain mini-batch SGD on the mean loss.
//!
//! [`theory_hyperparams`] instantiates the schedule that guarantees an
//! `epsilon`-stationary output: `lambda0 = eps / (8 rho)`, `alpha = 1/(2C)`,
//! `n_x = ceil(12 L_x sigma0^2 / (C eps^2))`, `n_z` the smallest integer
//! obeying both `n_z >= 48 D^2 sigma1^2 / eps^2` and the dual-batch bias
//! bound `< eps / 4`, and `T = ceil(48 C Delta / eps^2)`. These counts are
//! astronomically large for small `eps`; the plan carries them as reals and
//! saturates when asked for a runnable config.
//!
//! All randomness is drawn from named substreams of the master seed (one
//! per purpose), so runs are bitwise reproducible and changing `n_z` does
//! not perturb the `x`-batch sequence. A batch size equal to the dataset
//! size means a full deterministic pass in index order and does not consume
//! the stream.

use serde::Serialize;

use crate::data::{Dataset, RngStreams};
use crate::divergence::{cvar_conj_grad2, DivergenceSpec, Family};
use crate::dual::{
    batch_grad_x, batch_grad_z, batch_objective, compute_constants, DualDomain, DualPoint,
    ObjectiveConstants,
};
use crate::error::{Error, Result};
use crate::losses::{LossConstants, LossModel};
use crate::numeric::{all_finite, axpy, golden_min, norm, pos_pow};
use rand_chacha::ChaCha8Rng;

/// How hyperparameters were chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mode {
    /// Rates from the convergence analysis; `C` must dominate `D^2 L_z`.
    Theory,
    /// User-supplied step, batches, and curvature constant.
    Practical,
}

/// Run parameters shared by all solvers.
#[derive(Debug, Clone, Serialize)]
pub struct SolverConfig {
    pub iterations: u64,
    pub step_alpha: f64,
    pub batch_nx: usize,
    pub batch_nz: usize,
    pub constant_c: f64,
    pub seed: u64,
    pub mode: Mode,
    /// Target stationarity; required in theory mode.
    pub epsilon: Option<f64>,
}

impl SolverConfig {
    fn validate(&self, constants: Option<&ObjectiveConstants>) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::config("iteration count must be at least 1"));
        }
        if self.batch_nx < 1 || self.batch_nz < 1 {
            return Err(Error::config("batch sizes must be at least 1"));
        }
        if !(self.step_alpha.is_finite() && self.step_alpha > 0.0) {
            return Err(Error::config(format!(
                "step size must be positive, got {}",
                self.step_alpha
            )));
        }
        if !(self.constant_c.is_finite() && self.constant_c > 0.0) {
            return Err(Error::config(format!(
                "curvature constant must be positive, got {}",
                self.constant_c
            )));
        }
        if self.mode == Mode::Theory {
            match self.epsilon {
                Some(e) if e.is_finite() && e > 0.0 => {}
                _ => {
                    return Err(Error::config(
                        "theory mode requires a positive stationarity target",
                    ))
                }
            }
            if let Some(c) = constants {
                if self.constant_c < c.d * c.d * c.l_z * (1.0 - 1e-12) {
                    return Err(Error::config(format!(
                        "theory mode needs C >= D^2 L_z = {}, got {}",
                        c.d * c.d * c.l_z,
                        self.constant_c
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One scalar row of a solver trace.
#[derive(Debug, Clone, Serialize)]
pub struct IterateRecord {
    pub t: u64,
    pub lambda: f64,
    pub eta: f64,
    pub grad_x_norm: f64,
    /// Frank-Wolfe gap for the main solver; a projected-step stationarity
    /// surrogate for the baselines (zero where no dual variable exists).
    pub fw_gap: f64,
    pub gamma: f64,
    pub objective_estimate: f64,
}

/// Result of a solver run.
#[derive(Debug, Clone, Serialize)]
pub struct SolverOutput {
    pub x_out: Vec<f64>,
    pub z_out: DualPoint,
    /// Iteration index minimizing `grad_x_norm^2 + fw_gap^2` over the run.
    pub t_prime: u64,
    pub trace: Vec<IterateRecord>,
}

/// Exact linear minimization over the box: each coordinate goes to the
/// bound opposite its gradient sign, with ties resolved to the lower bound.
pub fn lmo_box(gradient: (f64, f64), domain: &DualDomain) -> DualPoint {
    debug_assert!(gradient.0.is_finite() && gradient.1.is_finite());
    DualPoint {
        lambda: if gradient.0 > 0.0 {
            domain.lambda_lo
        } else if gradient.0 < 0.0 {
            domain.lambda_hi
        } else {
            domain.lambda_lo
        },
        eta: if gradient.1 > 0.0 {
            domain.eta_lo
        } else if gradient.1 < 0.0 {
            domain.eta_hi
        } else {
            domain.eta_lo
        },
    }
}

/// Mini-batch indices: uniform with replacement, except that a batch of
/// exactly the dataset size is a full in-order pass and leaves the stream
/// untouched.
fn draw_batch(data: &Dataset, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if n == data.len() {
        (0..n).collect()
    } else {
        data.sample_batch(n, rng)
    }
}

fn non_finite(iteration: u64, z: DualPoint, seed: u64, what: &str) -> Error {
    Error::NonFinite {
        iteration,
        detail: format!(
            "{what} at lambda = {}, eta = {}, master seed {seed}",
            z.lambda, z.eta
        ),
    }
}

/// Main solver; see the module doc for the update rule.
pub fn sfk_dro(
    spec: &DivergenceSpec,
    model: &dyn LossModel,
    data: &Dataset,
    domain: &DualDomain,
    constants: &ObjectiveConstants,
    config: &SolverConfig,
    x0: &[f64],
    z0: DualPoint,
) -> Result<SolverOutput> {
    sfk_dro_observed(spec, model, data, domain, constants, config, x0, z0, |_, _, _| {})
}

/// [`sfk_dro`] with a hook receiving `(t, x_t, z_t)` at the start of every
/// iteration and once more after the loop, so audits can replay the exact
/// iterate sequence.
#[allow(clippy::too_many_arguments)]
pub fn sfk_dro_observed<F>(
    spec: &DivergenceSpec,
    model: &dyn LossModel,
    data: &Dataset,
    domain: &DualDomain,
    constants: &ObjectiveConstants,
    config: &SolverConfig,
    x0: &[f64],
    z0: DualPoint,
    mut observer: F,
) -> Result<SolverOutput>
where
    F: FnMut(u64, &[f64], DualPoint),
{
    config.validate(Some(constants))?;
    if x0.len() != model.dim() {
        return Err(Error::config(format!(
            "initial point has {} coordinates, model expects {}",
            x0.len(),
            model.dim()
        )));
    }
    if !domain.contains(z0, 1e-12) {
        return Err(Error::config(format!(
            "initial dual point ({}, {}) lies outside the box",
            z0.lambda, z0.eta
        )));
    }
    let streams = RngStreams::new(config.seed);
    let mut x_rng = streams.x_batch();
    let mut z_rng = streams.z_batch();
    let mut x = x0.to_vec();
    let mut z = domain.project(z0);
    let mut trace = Vec::with_capacity(config.iterations as usize);
    let mut best_crit = f64::INFINITY;
    let mut t_prime = 0;
    let mut x_out = x.clone();
    let mut z_out = z;
    for t in 0..config.iterations {
        observer(t, &x, z);
        let batch_x = draw_batch(data, config.batch_nx, &mut x_rng);
        let objective_estimate = batch_objective(spec, model, data, &x, &batch_x, z)?;
        let gx = batch_grad_x(spec, model, data, &x, &batch_x, z)?;
        if !objective_estimate.is_finite() || !all_finite(&gx) {
            return Err(non_finite(t, z, config.seed, "non-finite x-gradient or objective"));
        }
        axpy(&mut x, -config.step_alpha, &gx);
        if !all_finite(&x) {
            return Err(non_finite(t, z, config.seed, "non-finite parameter iterate"));
        }
        let batch_z = draw_batch(data, config.batch_nz, &mut z_rng);
        let v = batch_grad_z(spec, model, data, &x, &batch_z, z)?;
        if !(v.0.is_finite() && v.1.is_finite()) {
            return Err(non_finite(t, z, config.seed, "non-finite dual gradient"));
        }
        let e = lmo_box(v, domain);
        let d = (e.lambda - z.lambda, e.eta - z.eta);
        let g = d.0 * (-v.0) + d.1 * (-v.1);
        let gamma = (g / config.constant_c).clamp(0.0, 1.0);
        let grad_x_norm = norm(&gx);
        let crit = grad_x_norm * grad_x_norm + g * g;
        if crit < best_crit {
            best_crit = crit;
            t_prime = t;
            x_out.copy_from_slice(&x);
            z_out = z;
        }
        trace.push(IterateRecord {
            t,
            lambda: z.lambda,
            eta: z.eta,
            grad_x_norm,
            fw_gap: g,
            gamma,
            objective_estimate,
        });
        z = DualPoint {
            lambda: z.lambda + gamma * d.0,
            eta: z.eta + gamma * d.1,
        };
    }
    observer(config.iterations, &x, z);
    Ok(SolverOutput {
        x_out,
        z_out,
        t_prime,
        trace,
    })
}

/// Full-batch best dual response: `min_{z in M} F(x; z)` by nested
/// golden-section search (the objective is jointly convex in `z`).
pub fn best_dual_response(
    spec: &DivergenceSpec,
    model: &dyn LossModel,
    data: &Dataset,
    x: &[f64],
    domain: &DualDomain,
) -> Result<(f64, DualPoint)> {
    let batch: Vec<usize> = (0..data.len()).collect();
    let value_at = |z: DualPoint| -> f64 {
        batch_objective(spec, model, data, x, &batch, z).unwrap_or(f64::INFINITY)
    };
    let inner = |lambda: f64| -> (f64, f64) {
        let (eta, value) = golden_min(
            |eta| value_at(DualPoint::new(lambda, eta)),
            domain.eta_lo,
            domain.eta_hi,
            1e-10,
        );
        (value, eta)
    };
    let (lambda, _) = golden_min(
        |lambda| inner(lambda).0,
        domain.lambda_lo,
        domain.lambda_hi,
        1e-10,
    );
    let (value, eta) = inner(lambda);
    if !value.is_finite() {
        return Err(Error::domain("dual response is not finite"));
    }
    Ok((value, DualPoint::new(lambda, eta)))
}

/// Upper bound on the dual-batch bias `E[min_z f_batch] - min_z F` for a
/// loss bounded by `b`; decreasing in the batch size.
///
/// This bound exists only for the power-divergence family.
pub fn lemma3_bound(spec: &DivergenceSpec, b: f64, n_z: f64) -> Result<f64> {
    let Family::CressieRead { k } = spec.family() else {
        return Err(Error::config(
            "the dual-batch bias bound is defined only for the power-divergence family",
        ));
    };
    let rho = spec.rho();
    let k_star = k / (k - 1.0);
    if k_star == 2.0 {
        Ok(3.0 * b * (1.0 + k * (k - 1.0) * rho).sqrt() * ((4.0 + n_z.ln()) / (4.0 * n_z)).sqrt())
    } else {
        Ok(3.0
            * b
            * pos_pow(1.0 + k * (k - 1.0) * rho, 1.0 / k)
            * pos_pow(
                1.0 / n_z + 1.0 / (pos_pow(2.0, k_star - 1.0) * (k_star - 2.0) * n_z),
                1.0 / k_star,
            ))
    }
}

/// Theory-mode hyperparameter schedule, carrying exact (possibly
/// astronomically large) counts as reals.
#[derive(Debug, Clone, Serialize)]
pub struct TheoryPlan {
    pub lambda0: f64,
    pub domain: DualDomain,
    pub constants: ObjectiveConstants,
    pub alpha: f64,
    pub n_x_exact: f64,
    pub n_z_exact: f64,
    pub iterations_exact: f64,
    pub epsilon: f64,
    /// Feasibility preconditions of the convergence analysis that the
    /// instance fails, if any.
    pub warnings: Vec<String>,
}

impl TheoryPlan {
    /// Runnable config with counts saturated to machine limits.
    pub fn config(&self, seed: u64) -> SolverConfig {
        let clamp_usize = |v: f64| -> usize {
            if v >= usize::MAX as f64 {
                usize::MAX
            } else {
                v.max(1.0) as usize
            }
        };
        let iterations = if self.iterations_exact >= u64::MAX as f64 {
            u64::MAX
        } else {
            self.iterations_exact.max(1.0) as u64
        };
        SolverConfig {
            iterations,
            step_alpha: self.alpha,
            batch_nx: clamp_usize(self.n_x_exact),
            batch_nz: clamp_usize(self.n_z_exact),
            constant_c: self.constants.c,
            seed,
            mode: Mode::Theory,
            epsilon: Some(self.epsilon),
        }
    }
}

/// Derives the theory schedule for target stationarity `epsilon` and
/// initial optimality gap estimate `delta_estimate`.
///
/// `lambda0 = epsilon / (8 rho)`; the domain and constants are recomputed
/// at that truncation; `alpha = 1 / (2 C)`;
/// `n_x = ceil(12 L_x sigma0^2 / (C epsilon^2))`; `n_z` is the smallest
/// integer with `n_z >= 48 D^2 sigma1^2 / epsilon^2` whose bias bound is
/// below `epsilon / 4`; `T = ceil(48 C delta / epsilon^2)`.
pub fn theory_hyperparams(
    spec: &DivergenceSpec,
    loss_constants: &LossConstants,
    epsilon: f64,
    delta_estimate: f64,
) -> Result<TheoryPlan> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::config(format!(
            "stationarity target must be positive, got {epsilon}"
        )));
    }
    if !(delta_estimate.is_finite() && delta_estimate > 0.0) {
        return Err(Error::config(format!(
            "initial gap estimate must be positive, got {delta_estimate}"
        )));
    }
    let lambda0 = epsilon / (8.0 * spec.rho());
    let domain = crate::dual::compute_domain(spec, lambda0, loss_constants.b)?;
    let constants = compute_constants(spec, &domain, loss_constants)?;
    let alpha = 1.0 / (2.0 * constants.c);
    let n_x_exact =
        (12.0 * constants.l_x * constants.sigma0 * constants.sigma0
            / (constants.c * epsilon * epsilon))
            .ceil();
    let variance_floor =
        (48.0 * constants.d * constants.d * constants.sigma1 * constants.sigma1
            / (epsilon * epsilon))
            .ceil();
    let bias_ok = |n: f64| -> bool {
        match lemma3_bound(spec, loss_constants.b, n) {
            Ok(bound) => bound < epsilon / 4.0,
            // No bias bound exists; the variance floor alone decides.
            Err(_) => true,
        }
    };
    let n_z_exact = if bias_ok(variance_floor.max(1.0)) {
        variance_floor.max(1.0)
    } else {
        let mut hi = variance_floor.max(1.0);
        let mut guard = 0;
        while !bias_ok(hi) {
            hi *= 2.0;
            guard += 1;
            if guard > 4000 {
                return Err(Error::config(
                    "dual batch size for the bias bound does not fit in a float",
                ));
            }
        }
        let mut lo = (hi / 2.0).max(variance_floor.max(1.0));
        while hi - lo > 0.5 {
            let mid = ((lo + hi) / 2.0).floor();
            if bias_ok(mid) {
                hi = mid;
            } else {
                lo = mid + 1.0;
            }
            if lo >= hi {
                break;
            }
        }
        hi.max(lo)
    };
    let iterations_exact = (48.0 * constants.c * delta_estimate / (epsilon * epsilon)).ceil();
    let mut warnings = Vec::new();
    if constants.d * constants.d * constants.l_z / constants.l_x < 2.0 {
        warnings.push(format!(
            "curvature ratio D^2 L_z / L_x = {} is below 2; the step rule may be loose",
            constants.d * constants.d * constants.l_z / constants.l_x
        ));
    }
    if constants.d * constants.sigma1 / constants.c > 1.0 {
        warnings.push(format!(
            "gap scale D sigma1 / C = {} exceeds 1; the gap rule may be loose",
            constants.d * constants.sigma1 / constants.c
        ));
    }
    Ok(TheoryPlan {
        lambda0,
        domain,
        constants,
        alpha,
        n_x_exact,
        n_z_exact,
        iterations_exact,
        epsilon,
        warnings,
    })
}

/// Smoothness constant of the joint map `y = (x, lambda, eta)`:
/// `L_y = L_x + L_z + 2 L_xz` with the cross term bounded in closed form
/// for the power family and on a grid (inflated by 1.5) for smoothed CVaR.
pub fn joint_smoothness(
    spec: &DivergenceSpec,
    domain: &DualDomain,
    lc: &LossConstants,
) -> Result<f64> {
    let constants = compute_constants(spec, domain, lc)?;
    let lambda0 = domain.lambda_lo;
    let s = lc.b - domain.eta_lo;
    let cross = match spec.family() {
        Family::CressieRead { k } => {
            let k_star = k / (k - 1.0);
            let a = pos_pow(k - 1.0, k_star) / k;
            a * k_star * (k_star - 1.0) * lc.g * pos_pow(s, k_star - 1.0)
                / pos_pow(lambda0, k_star)
        }
        Family::SmoothedCvar { mu } => {
            let n_lam = 64;
            let n_eta = 32;
            let n_loss = 64;
            let ratio = (domain.lambda_hi / lambda0).powf(1.0 / (n_lam - 1) as f64);
            let mut max_cross: f64 = 0.0;
            let mut lambda = lambda0;
            for _ in 0..n_lam {
                for ie in 0..n_eta {
                    let eta = domain.eta_lo
                        + (domain.eta_hi - domain.eta_lo) * ie as f64 / (n_eta - 1) as f64;
                    for il in 0..n_loss {
                        let loss = lc.b * il as f64 / (n_loss - 1) as f64;
                        let u = (loss - eta) / lambda;
                        let curv = cvar_conj_grad2(mu, u);
                        max_cross = max_cross.max(curv * lc.g * u.hypot(1.0) / lambda);
                    }
                }
                lambda *= ratio;
            }
            1.5 * max_cross
        }
    };
    Ok(constants.l_x + constants.l_z + 2.0 * cross)
}

/// Projected gradient descent jointly on `(x, lambda, eta)`.
///
/// Theory mode steps with `1 / (2 L_y)`; practical mode uses the configured
/// step, which lets comparisons share a step size with the main solver.
pub fn pgd(
    spec: &DivergenceSpec,
    model: &dyn LossModel,
    data: &Dataset,
    domain: &DualDomain,
    config: &SolverConfig,
    x0: &[f64],
    z0: DualPoint,
) -> Result<SolverOutput> {
    config.validate(None)?;
    if x0.len() != model.dim() {
        return Err(Error::config(format!(
            "initial point has {} coordinates, model expects {}",
            x0.len(),
            model.dim()
        )));
    }
    if !domain.contains(z0, 1e-12) {
        return Err(Error::config(format!(
            "initial dual point ({}, {}) lies outside the box",
            z0.lambda, z0.eta
        )));
    }
    let step = match config.mode {
        Mode::Theory => 1.0 / (2.0 * joint_smoothness(spec, domain, &model.constants())?),
        Mode::Practical => config.step_alpha,
    };
    let streams = RngStreams::new(config.seed);
    let mut x_rng = streams.x_batch();
    let mut z_rng = streams.z_batch();
    let mut x = x0.to_vec();
    let mut z = domain.project(z0);
    let mut trace = Vec::with_capacity(config.iterations as usize);
    let mut best_crit = f64::INFINITY;
    let mut t_prime = 0;
    let mut x_out = x.clone();
    let mut z_out = z;
    for t in 0..config.iterations {
        let batch_x = draw_batch(data, config.batch_nx, &mut x_rng);
        let objective_estimate = batch_objective(spec, model, data, &x, &batch_x, z)?;
        let gx = batch_grad_x(spec, model, data, &x, &batch_x, z)?;
        let batch_z = draw_batch(data, config.batch_nz, &mut z_rng);
        let gz = batch_grad_z(spec, model, data, &x, &batch_z, z)?;
        if !objective_estimate.is_finite()
            || !all_finite(&gx)
            || !(gz.0.is_finite() && gz.1.is_finite())
        {
            return Err(non_finite(t, z, config.seed, "non-finite joint gradient"));
        }
        axpy(&mut x, -step, &gx);
        if !all_finite(&x) {
            return Err(non_finite(t, z, config.seed, "non-finite parameter iterate"));
        }
        let moved = domain.project(DualPoint {
            lambda: z.lambda - step * gz.0,
            eta: z.eta - step * gz.1,
        });
        let displacement = (moved.lambda - z.lambda).hypot(moved.eta - z.eta);
        let stationarity = displacement / step;
        let grad_x_norm = norm(&gx);
        let crit = grad_x_norm * grad_x_norm + stationarity * stationarity;
        if crit < best_crit {
            best_crit = crit;
            t_prime = t;
            x_out.copy_from_slice(&x);
            z_out = z;
        }
        trace.push(IterateRecord {
            t,
            lambda: z.lambda,
            eta: z.eta,
            grad_x_norm,
            fw_gap: stationarity,
            gamma: 1.0,
            objective_estimate,
        });
        z = moved;
    }
    Ok(SolverOutput {
        x_out,
        z_out,
        t_prime,
        trace,
    })
}

/// Penalized baseline: `lambda` is frozen and SGD runs on `(x, eta)`, with
/// `eta` clipped to the box after every step.
pub fn pan_dro(
    spec: &DivergenceSpec,
    model: &dyn LossModel,
    data: &Dataset,
    domain: &DualDomain,
    lambda: f64,
    config: &SolverConfig,
    x0: &[f64],
    eta0: f64,
) -> Result<SolverOutput> {
    config.validate(None)?;
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::config(format!(
            "fixed multiplier must be positive, got {lambda}"
        )));
    }
    if x0.len() != model.dim() {
        return Err(Error::config(format!(
            "initial point has {} coordinates, model expects {}",
            x0.len(),
            model.dim()
        )));
    }
    let streams = RngStreams::new(config.seed);
    let mut x_rng = streams.x_batch();
    let mut x = x0.to_vec();
    let mut eta = eta0.clamp(domain.eta_lo, domain.eta_hi);
    let mut trace = Vec::with_capacity(config.iterations as usize);
    let mut best_crit = f64::INFINITY;
    let mut t_prime = 0;
    let mut x_out = x.clone();
    let mut eta_out = eta;
    for t in 0..config.iterations {
        let z = DualPoint::new(lambda, eta);
        let batch = draw_batch(data, config.batch_nx, &mut x_rng);
        let objective_estimate = batch_objective(spec, model, data, &x, &batch, z)?;
        let gx = batch_grad_x(spec, model, data, &x, &batch, z)?;
        let (_, g_eta) = batch_grad_z(spec, model, data, &x, &batch, z)?;
        if !objective_estimate.is_finite() || !all_finite(&gx) || !g_eta.is_finite() {
            return Err(non_finite(t, z, config.seed, "non-finite gradient"));
        }
        let next_eta = (eta - config.step_alpha * g_eta).clamp(domain.eta_lo, domain.eta_hi);
        let stationarity = (eta - next_eta).abs() / config.step_alpha;
        let grad_x_norm = norm(&gx);
        let crit = grad_x_norm * grad_x_norm + stationarity * stationarity;
        axpy(&mut x, -config.step_alpha, &gx);
        if !all_finite(&x) {
            return Err(non_finite(t, z, config.seed, "non-finite parameter iterate"));
        }
        if crit < best_crit {
            best_crit = crit;
            t_prime = t;
            x_out.copy_from_slice(&x);
            eta_out = eta;
        }
        trace.push(IterateRecord {
            t,
            lambda,
            eta,
            grad_x_norm,
            fw_gap: stationarity,
            gamma: 1.0,
            objective_estimate,
        });
        eta = next_eta;
    }
    Ok(SolverOutput {
        x_out,
        z_out: DualPoint::new(lambda, eta_out),
        t_prime,
        trace,
    })
}

/// Mean loss and its gradient over a batch, in fixed index order.
fn mean_loss_and_grad(
    model: &dyn LossModel,
    data: &Dataset,
    x: &[f64],
    batch: &[usize],
) -> (f64, Vec<f64>) {
    let mut value = 0.0;
    let mut acc = vec![0.0; model.dim()];
    let mut grad = vec![0.0; model.dim()];
    let scale = 1.0 / batch.len() as f64;
    for &idx in batch {
        value += model.value(x, data, idx);
        model.grad(x, data, idx, &mut grad);
        axpy(&mut acc, scale, &grad);
    }
    (value * scale, acc)
}

/// Plain mini-batch SGD on the mean loss.
pub fn erm_sgd(
    model: &dyn LossModel,
    data: &Dataset,
    config: &SolverConfig,
    x0: &[f64],
) -> Result<SolverOutput> {
    config.validate(None)?;
    if x0.len() != model.dim() {
        return Err(Error::config(format!(
            "initial point has {} coordinates, model expects {}",
            x0.len(),
            model.dim()
        )));
    }
    let streams = RngStreams::new(config.seed);
    let mut x_rng = streams.x_batch();
    let mut x = x0.to_vec();
    let mut trace = Vec::with_capacity(config.iterations as usize);
    let mut best_crit = f64::INFINITY;
    let mut t_prime = 0;
    let mut x_out = x.clone();
    for t in 0..config.iterations {
        let batch = draw_batch(data, config.batch_nx, &mut x_rng);
        let (objective_estimate, gx) = mean_loss_and_grad(model, data, &x, &batch);
        if !objective_estimate.is_finite() || !all_finite(&gx) {
            return Err(Error::NonFinite {
                iteration: t,
                detail: format!("non-finite mean loss or gradient, master seed {}", config.seed),
            });
        }
        axpy(&mut x, -config.step_alpha, &gx);
        if !all_finite(&x) {
            return Err(Error::NonFinite {
                iteration: t,
                detail: format!("non-finite parameter iterate, master seed {}", config.seed),
            });
        }
        let grad_x_norm = norm(&gx);
        let crit = grad_x_norm * grad_x_norm;
        if crit < best_crit {
            best_crit = crit;
            t_prime = t;
            x_out.copy_from_slice(&x);
        }
        trace.push(IterateRecord {
            t,
            lambda: 0.0,
            eta: 0.0,
            grad_x_norm,
            fw_gap: 0.0,
            gamma: 1.0,
            objective_estimate,
        });
    }
    Ok(SolverOutput {
        x_out,
        z_out: DualPoint::new(0.0, 0.0),
        t_prime,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_imbalanced;
    use crate::losses::SquashedLogistic;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    /// Loss that ignores the parameters entirely.
    struct ConstLoss {
        dim: usize,
        c: f64,
    }

    impl LossModel for ConstLoss {
        fn dim(&self) -> usize {
            self.dim
        }
        fn value(&self, _x: &[f64], _data: &Dataset, _idx: usize) -> f64 {
            self.c
        }
        fn grad(&self, _x: &[f64], _data: &Dataset, _idx: usize, out: &mut [f64]) {
            out.fill(0.0);
        }
        fn correct(&self, _x: &[f64], _data: &Dataset, _idx: usize) -> bool {
            true
        }
        fn constants(&self) -> LossConstants {
            LossConstants {
                b: self.c,
                g: 1e-12,
                l: 1e-12,
                radius: f64::INFINITY,
                empirical: false,
            }
        }
    }

    /// Loss whose gradient turns non-finite away from the origin.
    struct PoisonLoss {
        dim: usize,
    }

    impl LossModel for PoisonLoss {
        fn dim(&self) -> usize {
            self.dim
        }
        fn value(&self, _x: &[f64], _data: &Dataset, _idx: usize) -> f64 {
            0.5
        }
        fn grad(&self, _x: &[f64], _data: &Dataset, _idx: usize, out: &mut [f64]) {
            out.fill(f64::NAN);
        }
        fn correct(&self, _x: &[f64], _data: &Dataset, _idx: usize) -> bool {
            true
        }
        fn constants(&self) -> LossConstants {
            LossConstants {
                b: 1.0,
                g: 1.0,
                l: 1.0,
                radius: f64::INFINITY,
                empirical: false,
            }
        }
    }

    fn tiny_data() -> Dataset {
        gen_imbalanced(2, &[1.0, 0.6], 25, 3, 2.0, 7).unwrap()
    }

    fn practical(iterations: u64, seed: u64) -> SolverConfig {
        SolverConfig {
            iterations,
            step_alpha: 0.05,
            batch_nx: 8,
            batch_nz: 8,
            constant_c: 5.0,
            seed,
            mode: Mode::Practical,
            epsilon: None,
        }
    }

    #[test]
    fn lmo_picks_the_corner_opposite_the_gradient() {
        let domain = DualDomain::new(0.1, 13.66, -13.66, 10.0).unwrap();
        let e = lmo_box((0.5, -2.0), &domain);
        assert_eq!((e.lambda, e.eta), (0.1, 10.0));
        let tie = lmo_box((0.0, 0.0), &domain);
        assert_eq!((tie.lambda, tie.eta), (0.1, -13.66));
    }

    #[test]
    fn lmo_matches_corner_enumeration() {
        let domain = DualDomain::new(0.3, 2.7, -1.2, 4.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let g = (rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            let e = lmo_box(g, &domain);
            let value = e.lambda * g.0 + e.eta * g.1;
            for corner in domain.corners() {
                let corner_value = corner.lambda * g.0 + corner.eta * g.1;
                assert!(
                    value <= corner_value + 1e-15,
                    "corner ({}, {}) beats the oracle",
                    corner.lambda,
                    corner.eta
                );
            }
        }
    }

    #[test]
    fn constant_loss_freezes_x_and_closes_the_dual_gap() {
        let spec = DivergenceSpec::cressie_read(2.0, 0.1).unwrap();
        let data = tiny_data();
        let model = ConstLoss { dim: 3, c: 0.5 };
        // Small multipliers keep the truncation cost rho * lambda below the
        // tolerance everywhere in the box, so any dual minimizer certifies
        // that the robust value of a constant loss is the constant itself.
        let domain = DualDomain::new(1e-6, 6e-4, 0.3, 0.6).unwrap();
        let constants = compute_constants(&spec, &domain, &model.constants()).unwrap();
        let config = SolverConfig {
            iterations: 200_000,
            step_alpha: 0.05,
            batch_nx: 1,
            batch_nz: 1,
            constant_c: 60.0,
            seed: 5,
            mode: Mode::Practical,
            epsilon: None,
        };
        let x0 = vec![0.4, -0.2, 0.1];
        let z0 = DualPoint::new(6e-4, 0.45);
        let out = sfk_dro(&spec, &model, &data, &domain, &constants, &config, &x0, z0).unwrap();
        assert_eq!(out.x_out, x0, "zero gradients must leave x untouched");
        let batch: Vec<usize> = (0..data.len()).collect();
        let final_f =
            batch_objective(&spec, &model, &data, &out.x_out, &batch, out.z_out).unwrap();
        assert!(
            final_f >= 0.5 - 1e-12 && final_f <= 0.5 + 1e-4,
            "robust value of a constant loss is the constant, got {final_f}"
        );
    }

    #[test]
    fn iterates_stay_in_the_box_with_unit_range_gammas() {
        let spec = DivergenceSpec::cressie_read(2.0, 0.5).unwrap();
        let data = tiny_data();
        let model = SquashedLogistic::new(1.0, &data).unwrap();
        let domain = crate::dual::compute_domain(&spec, 0.05, 1.0).unwrap();
        let constants = compute_constants(&spec, &domain, &model.constants()).unwrap();
        let config = practical(300, 9);
        let z0 = DualPoint::new(domain.lambda_hi, domain.eta_hi);
        let out = sfk_dro(
            &spec,
            &model,
            &data,
            &domain,
            &constants,
            &config,
            &vec![0.0; 3],
            z0,
        )
        .unwrap();
        for rec in &out.trace {
            assert!((0.0..=1.0).contains(&rec.gamma), "gamma {} out of range", rec.gamma);
            assert!(rec.fw_gap >= 0.0, "negative gap {}", rec.fw_gap);
            assert!(
                domain.contains(DualPoint::new(rec.lambda, rec.eta), 1e-12),
                "iterate ({}, {}) escaped the box",
                rec.lambda,
                rec.eta
            );
        }
        assert!(domain.contains(out.z_out, 1e-12));
    }

    /// The Frank-Wolfe gap upper-bounds dual suboptimality of the batch
    /// objective; with full batches that objective is the full one, so the
    /// gap must dominate the distance to the golden-section minimum.
    #[test]
    fn fw_gap_dominates_batch_suboptimality() {
        let spec = DivergenceSpec::cressie_read(2.0, 0.3).unwrap();
        let data = tiny_data();
        let model = SquashedLogistic::new(1.0, &data).unwrap();
        let domain = crate::dual::compute_domain(&spec, 0.1, 1.0).unwrap();
        let constants = compute_constants(&spec, &domain, &model.constants()).unwrap();
        let n = data.len();
        let mut config = practical(30, 13);
        config.batch_nx = n;
        config.batch_nz = n;
        let mut iterates: Vec<(Vec<f64>, DualPoint)> = Vec::new();
        let out = sfk_dro_observed(
            &spec,
            &model,
            &data,
            &domain,
            &constants,
            &config,
            &vec![0.1; 3],
            DualPoint::new(domain.lambda_hi, 0.0),
            |_, x, z| iterates.push((x.to_vec(), z)),
        )
        .unwrap();
        let batch: Vec<usize> = (0..n).collect();
        for (t, rec) in out.trace.iter().enumerate() {
            let (x_next, _) = &iterates[t + 1];
            let z_t = iterates[t].1;
            let here = batch_objective(&spec, &model, &data, x_next, &batch, z_t).unwrap();
            let (best, _) = best_dual_response(&spec, &model, &data, x_next, &domain).unwrap();
            assert!(
                rec.fw_gap >= here - best - 1e-9,
                "gap {} under suboptimality {} at t = {t}",
                rec.fw_gap,
                here - best
            );
        }
    }

    #[test]
    fn identical_seeds_reproduce_identical_runs() {
        let spec = DivergenceSpec::smoothed_cvar(0.3, 0.5).unwrap();
        let data = tiny_data();
        let model = SquashedLogistic::new(1.0, &data).unwrap();
        let domain = crate::dual::compute_domain(&spec, 0.05, 1.0).unwrap();
        let constants = compute_constants(&spec, &domain, &model.constants()).unwrap();
        let config = practical(120, 42);
        let z0 = domain.project(DualPoint::new(1.0, 0.2));
        let run = || {
            sfk_dro(
                &spec,
                &model,
                &data,
                &domain,
                &constants,
                &config,
                &vec![0.05; 3],
                z0,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.t_prime, b.t_prime);
        assert_eq!(a.x_out, b.x_out);
        for (ra, rb) in a.trace.iter().zip(&b.trace) {
            assert_eq!(ra.objective_estimate.to_bits(), rb.objective_estimate.to_bits());
            assert_eq!(ra.grad_x_norm.to_bits(), rb.grad_x_norm.to_bits());
            assert_eq!(ra.fw_gap.to_bits(), rb.fw_gap.to_bits());
        }
    }

    #[test]
    fn online_argmin_matches_a_rescan_of_the_trace() {
        let spec = DivergenceSpec::cressie_read(1.5, 0.4).unwrap();
        let data = tiny_data();
        let model = SquashedLogistic::new(1.0, &data).unwrap();
        let domain = crate::dual::compute_domain(&spec, 0.05, 1.0).unwrap();
        let constants = compute_constants(&spec, &domain, &model.constants()).unwrap();
        let out = sfk_dro(
            &spec,
            &model,
            &data,
            &domain,
            &constants,
            &practical(200, 77),
            &vec![0.0; 3],
            DualPoint::new(domain.lambda_hi, 0.5),
        )
        .unwrap();
        let mut best = (f64::INFINITY, 0u64);
        for rec in &out.trace {
            let crit = rec.grad_x_norm * rec.grad_x_norm + rec.fw_gap * rec.fw_gap;
            if crit < best.0 {
                best = (crit, rec.t);
            }
        }
        assert_eq!(out.t_prime, best.1);
    }

    #[test]
    fn theory_plan_reproduces_the_schedule_formulas() {
        let spec = DivergenceSpec::cressie_read(2.0, 1.0).unwrap();
        let lc = LossConstants {
            b: 1.0,
            g: 0.5,
            l: 0.25,
            radius: f64::INFINITY,
            empirical: false,
        };
        let eps = 0.1;
        let plan = theory_hyperparams(&spec, &lc, eps, 3.0).unwrap();
        assert_eq!(plan.lambda0, 0.0125);
        assert_eq!(plan.alpha * 2.0 * plan.constants.c, 1.0);
        let c = &plan.constants;
        assert_eq!(
            plan.n_x_exact,
            (12.0 * c.l_x * c.sigma0 * c.sigma0 / (c.c * eps * eps)).ceil()
        );
        assert_eq!(
            plan.iterations_exact,
            (48.0 * c.c * 3.0 / (eps * eps)).ceil()
        );
        let floor = (48.0 * c.d * c.d * c.sigma1 * c.sigma1 / (eps * eps)).ceil();
        assert!(plan.n_z_exact >= floor);
        assert!(lemma3_bound(&spec, lc.b, plan.n_z_exact).unwrap() < eps / 4.0);
        if plan.n_z_exact > floor {
            assert!(
                lemma3_bound(&spec, lc.b, plan.n_z_exact - 1.0).unwrap() >= eps / 4.0,
                "dual batch size is not minimal"
            );
        }
        let config = plan.config(1);
        assert_eq!(config.mode, Mode::Theory);
        assert_eq!(config.step_alpha, plan.alpha);
    }

    #[test]
    fn oversized_stationarity_target_is_rejected() {
        let spec = DivergenceSpec::cressie_read(2.0, 0.01).unwrap();
        let lc = LossConstants {
            b: 0.1,
            g: 1.0,
            l: 1.0,
            radius: f64::INFINITY,
            empirical: false,
        };
        // lambda0 = eps/(8 rho) far above lambda_bar.
        assert!(theory_hyperparams(&spec, &lc, 50.0, 1.0).is_err());
    }

    #[test]
    fn joint_smoothness_closed_form_example() {
        // k = 2, lambda0 = 1, excess 1, G = 1, L = 1:
        // L_x = G^2 + s L = 2, L_z = 4, cross = 1, so L_y = 8.
        let spec = DivergenceSpec::cressie_read(2.0, 1.0).unwrap();
        let domain = DualDomain::new(1.0, 2.0, -0.5, 0.5).unwrap();
        let lc = LossConstants {
            b: 0.5,
            g: 1.0,
            l: 1.0,
            radius: f64::INFINITY,
            empirical: false,
        };
        assert_relative_eq!(
            joint_smoothness(&spec, &domain, &lc).unwrap(),
            8.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn pgd_keeps_the_dual_iterates_in_the_box() {
        let spec = DivergenceSpec::cressie_read(2.0, 0.5).unwrap();
        let data = tiny_data();
        let model = SquashedLogistic::new(1.0, &data).unwrap();
        let domain = crate::dual::compute_domain(&spec, 0.05, 1.0).unwrap();
        let out = pgd(
            &spec,
            &model,
            &data,
            &domain,
            &practical(200, 3),
            &vec![0.0; 3],
            DualPoint::new(domain.lambda_hi, domain.eta_hi),
        )
        .unwrap();
        for rec in &out.trace {
            assert!(
                domain.contains(DualPoint::new(rec.lambda, rec.eta), 1e-12),
                "iterate ({}, {}) escaped the box",
                rec.lambda,
                rec.eta
            );
        }
    }

    #[test]
    fn pan_dro_freezes_lambda_and_clips_eta() {
        let spec = DivergenceSpec::cressie_read(2.0, 0.5).unwrap();
        let data = tiny_data();
        let model = SquashedLogistic::new(1.0, &data).unwrap();
        let domain = crate::dual::compute_domain(&spec, 0.05, 1.0).unwrap();
        let out = pan_dro(
            &spec,
            &model,
            &data,
            &domain,
            1.0,
            &practical(150, 21),
            &vec![0.0; 3],
            50.0,
        )
        .unwrap();
        for rec in &out.trace {
            assert_eq!(rec.lambda, 1.0);
            assert!(rec.eta >= domain.eta_lo - 1e-12 && rec.eta <= domain.eta_hi + 1e-12);
        }
        assert_eq!(out.z_out.lambda, 1.0);
    }

    #[test]
    fn erm_full_batch_is_plain_gradient_descent() {
        let data = tiny_data();
        let model = SquashedLogistic::new(1.0, &data).unwrap();
        let n = data.len();
        let mut config = practical(3, 2);
        config.batch_nx = n;
        config.step_alpha = 0.1;
        let x0 = vec![0.2, -0.1, 0.05];
        let out = erm_sgd(&model, &data, &config, &x0).unwrap();
        let batch: Vec<usize> = (0..n).collect();
        let mut x = x0.clone();
        for _ in 0..3 {
            let (_, g) = mean_loss_and_grad(&model, &data, &x, &batch);
            axpy(&mut x, -0.1, &g);
        }
        // x_out is the running-best iterate, so compare through the trace:
        // replaying the recursion must reproduce the recorded gradients.
        let (_, g_final) = mean_loss_and_grad(&model, &data, &x, &batch);
        assert!(g_final.iter().all(|v| v.is_finite()));
        let mut x_replay = x0;
        for rec in &out.trace {
            let (value, g) = mean_loss_and_grad(&model, &data, &x_replay, &batch);
            assert_eq!(value.to_bits(), rec.objective_estimate.to_bits());
            assert_eq!(norm(&g).to_bits(), rec.grad_x_norm.to_bits());
            axpy(&mut x_replay, -0.1, &g);
        }
        assert_eq!(x_replay, x);
    }

    #[test]
    fn erm_full_batch_descends_with_a_safe_step() {
        let data = tiny_data();
        let model = SquashedLogistic::new(1.0, &data).unwrap();
        let lc = model.constants();
        let n = data.len();
        let mut config = practical(60, 2);
        config.batch_nx = n;
        config.step_alpha = 1.0 / lc.l;
        let out = erm_sgd(&model, &data, &config, &vec![0.0; 3]).unwrap();
        for pair in out.trace.windows(2) {
            assert!(
                pair[1].objective_estimate <= pair[0].objective_estimate + 1e-12,
                "full-batch descent increased the mean loss"
            );
        }
        assert!(
            out.trace.last().unwrap().objective_estimate
                < out.trace[0].objective_estimate - 1e-4,
            "descent made no progress"
        );
    }

    #[test]
    fn zero_gradient_start_stays_fixed() {
        let data = tiny_data();
        let model = ConstLoss { dim: 3, c: 0.7 };
        let x0 = vec![0.3, 0.3, 0.3];
        let out = erm_sgd(&model, &data, &practical(10, 1), &x0).unwrap();
        assert_eq!(out.x_out, x0);
    }

    #[test]
    fn poisoned_gradients_abort_with_the_iteration() {
        let spec = DivergenceSpec::cressie_read(2.0, 0.5).unwrap();
        let data = tiny_data();
        let model = PoisonLoss { dim: 3 };
        let domain = crate::dual::compute_domain(&spec, 0.05, 1.0).unwrap();
        let constants = compute_constants(&spec, &domain, &model.constants()).unwrap();
        let err = sfk_dro(
            &spec,
            &model,
            &data,
            &domain,
            &constants,
            &practical(5, 1),
            &vec![0.0; 3],
            DualPoint::new(0.1, 0.0),
        )
        .unwrap_err();
        match err {
            Error::NonFinite { iteration, .. } => assert_eq!(iteration, 0),
            other => panic!("expected a non-finite abort, got {other}"),
        }
    }

    #[test]
    fn theory_mode_rejects_an_undersized_curvature_constant() {
        let spec = DivergenceSpec::cressie_read(2.0, 0.5).unwrap();
        let data = tiny_data();
        let model = SquashedLogistic::new(1.0, &data).unwrap();
        let domain = crate::dual::compute_domain(&spec, 0.05, 1.0).unwrap();
        let constants = compute_constants(&spec, &domain, &model.constants()).unwrap();
        let config = SolverConfig {
            iterations: 5,
            step_alpha: 0.01,
            batch_nx: 4,
            batch_nz: 4,
            constant_c: constants.c * 0.5,
            seed: 1,
            mode: Mode::Theory,
            epsilon: Some(0.1),
        };
        assert!(sfk_dro(
            &spec,
            &model,
            &data,
            &domain,
            &constants,
            &config,
            &vec![0.0; 3],
            DualPoint::new(domain.lambda_lo, 0.0),
        )
        .is_err());
    }

    #[test]
    fn out_of_box_starts_are_rejected() {
        let spec = DivergenceSpec::cressie_read(2.0, 0.5).unwrap();
        let data = tiny_data();
        let model = SquashedLogistic::new(1.0, &data).unwrap();
        let domain = crate::dual::compute_domain(&spec, 0.05, 1.0).unwrap();
        let constants = compute_constants(&spec, &domain, &model.constants()).unwrap();
        assert!(sfk_dro(
            &spec,
            &model,
            &data,
            &domain,
            &constants,
            &practical(5, 1),
            &vec![0.0; 3],
            DualPoint::new(domain.lambda_hi * 2.0, 0.0),
        )
        .is_err());
    }
}
