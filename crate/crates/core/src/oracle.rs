//! Exact solvers for the inner worst-case problems on small discrete
//! distributions.
//!
//! Everything here is ground truth for tests: brute force where possible,
//! and otherwise structured one-dimensional root finding on monotone maps,
//! certified by an explicit KKT residual. Nothing in this module is meant
//! to scale past a few dozen atoms.
//!
//! The primal problem on `N` atoms with base weights `p0` is
//!
//! ```text
//!     maximize   sum_i q_i * loss_i
//!     subject to q in the simplex,
//!                sum_i p0_i * phi(q_i / p0_i) <= rho .
//! ```
//!
//! [`primal_worst_case`] solves it in two phases. Projected ascent with an
//! exact Euclidean projection onto the constraint set gives a feasible
//! near-optimal point from `q = p0` and ten random restarts (the problem is
//! concave, so restarts only guard against stalls on the boundary). A KKT
//! refinement then solves the optimality system exactly: the stationary
//! points have the form `q_i = p0_i * (phi')^{-1}((loss_i - eta) / lambda)`,
//! where `eta` is pinned by unit mass (monotone in `eta`) and `lambda` by
//! the divergence budget (monotone in `lambda`), so two nested bisections
//! recover the solution to near machine precision.
//!
//! [`dual_min`] minimizes the dual objective over `(lambda, eta)` by nested
//! golden-section search, valid because the dual is jointly convex there.
//! [`regularized_constrained_value`] solves the divergence-regularized
//! variant of the primal, which must match the box-constrained dual minimum
//! shifted by `lambda0 * rho`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::divergence::{DivergenceSpec, Family};
use crate::dual::{DualDomain, DualPoint, SampleEval};
use crate::error::{Error, Result};
use crate::numeric::golden_min;

/// Largest atom count the oracle accepts.
pub const MAX_ATOMS: usize = 64;

/// Multiplier floor standing in for `lambda -> 0+` when the divergence
/// constraint is slack at the optimum.
const LAMBDA_FLOOR: f64 = 1e-9;

/// A certified worst-case distribution.
#[derive(Debug, Clone, Serialize)]
pub struct WorstCaseResult {
    /// Robust objective `sum_i q_i * loss_i`.
    pub value: f64,
    /// Worst-case weights over the atoms.
    pub q: Vec<f64>,
    /// Divergence actually spent, `sum_i p0_i * phi(q_i / p0_i)`.
    pub divergence_used: f64,
    /// Max violation across the KKT optimality system.
    pub kkt_residual: f64,
}

fn validate_instance(losses: &[f64], p0: &[f64]) -> Result<()> {
    if losses.is_empty() || losses.len() > MAX_ATOMS {
        return Err(Error::oracle(format!(
            "atom count must be in 1..={MAX_ATOMS}, got {}",
            losses.len()
        )));
    }
    if p0.len() != losses.len() {
        return Err(Error::oracle(format!(
            "{} losses but {} base weights",
            losses.len(),
            p0.len()
        )));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::oracle("losses must be finite"));
    }
    if p0.iter().any(|&p| !(p.is_finite() && p > 0.0)) {
        return Err(Error::oracle("base weights must be strictly positive"));
    }
    let mass: f64 = p0.iter().sum();
    if (mass - 1.0).abs() > 1e-9 {
        return Err(Error::oracle(format!(
            "base weights must sum to 1, got {mass}"
        )));
    }
    Ok(())
}

/// `sum_i p0_i * phi(q_i / p0_i)`; infinite when any ratio leaves the
/// divergence's domain.
fn divergence_of(spec: &DivergenceSpec, q: &[f64], p0: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&qi, &pi) in q.iter().zip(p0) {
        acc += pi * spec.phi(qi / pi).expect("finite ratio");
    }
    acc
}

fn expected_loss(q: &[f64], losses: &[f64]) -> f64 {
    q.iter().zip(losses).map(|(&qi, &li)| qi * li).sum()
}

/// Per-family scalar solves used by the Euclidean projection.
enum CoordSolver {
    /// `phi'(t) = t - 1`: the coordinate equation is linear.
    Chi2,
    /// `phi'(t) = (t^(k-1) - 1) / (k - 1)` with `phi'(0) = -1/(k-1)` finite,
    /// so coordinates can park at zero.
    CressieRead { k: f64 },
    /// `phi'(t) = ln(t(1-mu) / (1 - mu t))` on `(0, 1/mu)`: coordinates stay
    /// strictly inside `(0, p0_i / mu)`.
    Cvar { mu: f64 },
}

impl CoordSolver {
    fn new(spec: &DivergenceSpec) -> Self {
        match spec.family() {
            Family::CressieRead { k } if k == 2.0 => CoordSolver::Chi2,
            Family::CressieRead { k } => CoordSolver::CressieRead { k },
            Family::SmoothedCvar { mu } => CoordSolver::Cvar { mu },
        }
    }

    /// Solves `q + theta * phi'(q / p0) = c` for `q` in the divergence's
    /// domain; returns `(q, dq/dc)`, the sensitivity being zero on the
    /// boundary `q = 0`.
    ///
    /// The left side is strictly increasing in `q`, so a bracketed Newton
    /// iteration cannot miss the root.
    fn solve(&self, p0: f64, theta: f64, c: f64) -> (f64, f64) {
        if theta == 0.0 {
            // Plain simplex projection; CVaR keeps its hard mass cap.
            let q = match *self {
                CoordSolver::Cvar { mu } => c.clamp(0.0, p0 / mu),
                _ => c.max(0.0),
            };
            let interior = match *self {
                CoordSolver::Cvar { mu } => c > 0.0 && c < p0 / mu,
                _ => c > 0.0,
            };
            return (q, if interior { 1.0 } else { 0.0 });
        }
        match *self {
            CoordSolver::Chi2 => {
                let slope = 1.0 + theta / p0;
                let q = (c + theta) / slope;
                if q <= 0.0 {
                    (0.0, 0.0)
                } else {
                    (q, 1.0 / slope)
                }
            }
            CoordSolver::CressieRead { k } => {
                let at_zero = -theta / (k - 1.0);
                if c <= at_zero {
                    return (0.0, 0.0);
                }
                // h(q) = q + theta*phi'(q/p0) - c; h(0) < 0 and
                // h(c - at_zero) >= 0 bracket the root.
                let mut lo = 0.0;
                let mut hi = c - at_zero;
                let mut q = hi.min(p0.max(c));
                if q <= lo || q >= hi {
                    q = 0.5 * (lo + hi);
                }
                for _ in 0..80 {
                    let t = q / p0;
                    let h = q + theta * (t.powf(k - 1.0) - 1.0) / (k - 1.0) - c;
                    if h > 0.0 {
                        hi = q;
                    } else {
                        lo = q;
                    }
                    if h.abs() <= 1e-15 * (1.0 + c.abs()) || hi - lo <= 1e-16 * (1.0 + hi) {
                        break;
                    }
                    let dh = 1.0 + theta * t.powf(k - 2.0) / p0;
                    let step = q - h / dh;
                    q = if step > lo && step < hi {
                        step
                    } else {
                        0.5 * (lo + hi)
                    };
                }
                let dh = 1.0 + theta * (q / p0).powf(k - 2.0) / p0;
                (q, 1.0 / dh)
            }
            CoordSolver::Cvar { mu } => {
                let cap = p0 / mu;
                // h(0+) = -inf and h(cap-) = +inf, so the root is interior.
                let mut lo = 0.0;
                let mut hi = cap;
                let mut q = p0;
                for _ in 0..80 {
                    let h = q + theta * (q * (1.0 - mu) / (p0 - mu * q)).ln() - c;
                    if h > 0.0 {
                        hi = q;
                    } else {
                        lo = q;
                    }
                    if h.abs() <= 1e-15 * (1.0 + c.abs()) || hi - lo <= 1e-16 * cap {
                        break;
                    }
                    let dh = 1.0 + theta * (1.0 / q + mu / (p0 - mu * q));
                    let step = q - h / dh;
                    q = if step > lo && step < hi {
                        step
                    } else {
                        0.5 * (lo + hi)
                    };
                }
                let dh = 1.0 + theta * (1.0 / q + mu / (p0 - mu * q));
                (q, 1.0 / dh)
            }
        }
    }
}

/// Exact Euclidean projection onto `{q : q in simplex, divergence <= rho}`.
///
/// KKT multipliers: `tau` for unit mass, `theta >= 0` for the divergence
/// ball. For fixed `(theta, tau)` each coordinate solves a monotone scalar
/// equation; total mass is decreasing in `tau` (solved by safeguarded
/// Newton, warm-started across calls) and the divergence spent is
/// decreasing in `theta` (solved by bisection).
struct Projector<'a> {
    spec: &'a DivergenceSpec,
    p0: &'a [f64],
    solver: CoordSolver,
    warm_tau: f64,
}

impl<'a> Projector<'a> {
    fn new(spec: &'a DivergenceSpec, p0: &'a [f64]) -> Self {
        Projector {
            spec,
            p0,
            solver: CoordSolver::new(spec),
            warm_tau: 0.0,
        }
    }

    /// Fills `q` for fixed multipliers; returns `(mass - 1, d mass / d tau)`.
    fn fill(&self, y: &[f64], theta: f64, tau: f64, q: &mut [f64]) -> (f64, f64) {
        let mut mass = 0.0;
        let mut sens = 0.0;
        for i in 0..y.len() {
            let (qi, dq) = self.solver.solve(self.p0[i], theta, y[i] - tau);
            q[i] = qi;
            mass += qi;
            sens += dq;
        }
        (mass - 1.0, -sens)
    }

    /// Solves `tau` so the coordinates sum to one, writing them into `q`.
    fn solve_tau(&mut self, y: &[f64], theta: f64, q: &mut [f64]) {
        // Bracket: mass is decreasing in tau.
        let mut lo = self.warm_tau;
        let mut hi = self.warm_tau;
        let mut step = 1.0;
        while self.fill(y, theta, lo, q).0 < 0.0 {
            lo -= step;
            step *= 2.0;
            debug_assert!(step < 1e60, "mass bracket failed to expand");
        }
        step = 1.0;
        while self.fill(y, theta, hi, q).0 > 0.0 {
            hi += step;
            step *= 2.0;
            debug_assert!(step < 1e60, "mass bracket failed to expand");
        }
        let mut tau = 0.5 * (lo + hi);
        for _ in 0..60 {
            let (excess, slope) = self.fill(y, theta, tau, q);
            if excess > 0.0 {
                lo = tau;
            } else {
                hi = tau;
            }
            if excess.abs() <= 1e-14 || hi - lo <= 1e-16 * (1.0 + tau.abs()) {
                break;
            }
            // Newton step on the monotone mass map, kept inside the bracket.
            let next = if slope < 0.0 { tau - excess / slope } else { f64::NAN };
            tau = if next.is_finite() && next > lo && next < hi {
                next
            } else {
                0.5 * (lo + hi)
            };
        }
        self.fill(y, theta, tau, q);
        self.warm_tau = tau;
    }

    /// Euclidean projection of `y`.
    fn project(&mut self, y: &[f64]) -> Vec<f64> {
        let rho = self.spec.rho();
        let mut q = vec![0.0; y.len()];
        self.solve_tau(y, 0.0, &mut q);
        if divergence_of(self.spec, &q, self.p0) <= rho {
            return q;
        }
        // The ball constraint is active: bisect theta on the spent
        // divergence, which decreases toward zero as theta grows.
        let mut theta_hi = 1.0;
        loop {
            self.solve_tau(y, theta_hi, &mut q);
            if divergence_of(self.spec, &q, self.p0) <= rho {
                break;
            }
            theta_hi *= 2.0;
            debug_assert!(theta_hi < 1e60, "ball multiplier bracket failed");
        }
        let mut theta_lo = 0.0;
        for _ in 0..55 {
            let theta = 0.5 * (theta_lo + theta_hi);
            self.solve_tau(y, theta, &mut q);
            let spent = divergence_of(self.spec, &q, self.p0);
            if spent > rho {
                theta_lo = theta;
            } else {
                theta_hi = theta;
            }
            if (spent - rho).abs() <= 1e-12 * (1.0 + rho) {
                break;
            }
        }
        // Land on the feasible side of the tolerance band.
        self.solve_tau(y, theta_hi, &mut q);
        let spent = divergence_of(self.spec, &q, self.p0);
        if spent > rho {
            // Shrink toward p0; the divergence is convex along this segment
            // and vanishes at s = 0.
            let mut s_lo = 0.0;
            let mut s_hi = 1.0;
            for _ in 0..60 {
                let s = 0.5 * (s_lo + s_hi);
                let blend: Vec<f64> = q
                    .iter()
                    .zip(self.p0)
                    .map(|(&qi, &pi)| pi + s * (qi - pi))
                    .collect();
                if divergence_of(self.spec, &blend, self.p0) <= rho {
                    s_lo = s;
                } else {
                    s_hi = s;
                }
            }
            for (qi, &pi) in q.iter_mut().zip(self.p0) {
                *qi = pi + s_lo * (*qi - pi);
            }
        }
        q
    }
}

/// Inner stage of the KKT system: for fixed `lambda`, solves `eta` so the
/// stationary weights `q_i = p0_i * (phi')^{-1}((loss_i - eta)/lambda)` have
/// unit mass, and returns them. Mass is non-increasing in `eta`.
fn stationary_weights(
    spec: &DivergenceSpec,
    losses: &[f64],
    p0: &[f64],
    lambda: f64,
) -> (Vec<f64>, f64) {
    let mass_at = |eta: f64| -> f64 {
        losses
            .iter()
            .zip(p0)
            .map(|(&l, &p)| {
                p * spec
                    .phi_conj_grad((l - eta) / lambda)
                    .expect("finite dual argument")
            })
            .sum()
    };
    let max_loss = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_loss = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    // At eta = max loss every argument is <= 0, so the mass is <= 1; push
    // eta down until the mass reaches 1 from above.
    let hi = max_loss;
    let mut offset = (max_loss - min_loss).max(lambda).max(1e-3);
    let mut lo = min_loss - offset;
    let mut guard = 0;
    while mass_at(lo) < 1.0 {
        offset *= 2.0;
        lo = min_loss - offset;
        guard += 1;
        assert!(guard < 300, "stationary mass bracket failed to expand");
    }
    let eta = crate::numeric::bisect_increasing(|e| 1.0 - mass_at(e), lo, hi, 0.0, 1e-14);
    let q: Vec<f64> = losses
        .iter()
        .zip(p0)
        .map(|(&l, &p)| {
            p * spec
                .phi_conj_grad((l - eta) / lambda)
                .expect("finite dual argument")
        })
        .collect();
    (q, eta)
}

/// The exact `lambda = 0` candidate: mass on the max-loss atoms,
/// distributed proportionally to `p0`, which minimizes the divergence among
/// distributions supported on those atoms. Feasible iff the ball constraint
/// is slack at the optimum, in which case it IS the optimum.
fn vertex_solution(
    spec: &DivergenceSpec,
    losses: &[f64],
    p0: &[f64],
) -> Option<(Vec<f64>, f64)> {
    let max_loss = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-12 * (1.0 + max_loss.abs());
    let top_mass: f64 = losses
        .iter()
        .zip(p0)
        .filter(|(&l, _)| l >= max_loss - tol)
        .map(|(_, &p)| p)
        .sum();
    let q: Vec<f64> = losses
        .iter()
        .zip(p0)
        .map(|(&l, &p)| if l >= max_loss - tol { p / top_mass } else { 0.0 })
        .collect();
    if divergence_of(spec, &q, p0) <= spec.rho() {
        Some((q, max_loss))
    } else {
        None
    }
}

/// KKT solution of the divergence-ball linear maximization with the
/// multiplier floored at `lambda_floor`; returns `(q, lambda, eta)`.
///
/// The divergence spent by the stationary weights is non-increasing in
/// `lambda`, so the budget pins `lambda` by bisection; when the budget
/// covers even the hardest vertex the constraint is slack and the exact
/// `lambda = 0` solution applies.
fn kkt_solve(
    spec: &DivergenceSpec,
    losses: &[f64],
    p0: &[f64],
    lambda_floor: f64,
) -> (Vec<f64>, f64, f64) {
    let rho = spec.rho();
    if lambda_floor <= 2.0 * LAMBDA_FLOOR {
        if let Some((q, eta)) = vertex_solution(spec, losses, p0) {
            return (q, 0.0, eta);
        }
    }
    // Tiny multipliers make (loss - eta)/lambda cancellation-limited, so
    // the solved mass can be off by ~1e-16/lambda; rescaling restores it
    // and moves the divergence by far less than the budget tolerance.
    let polish = |mut q: Vec<f64>| -> Vec<f64> {
        let mass: f64 = q.iter().sum();
        if (mass - 1.0).abs() > 1e-15 {
            for qi in &mut q {
                *qi /= mass;
            }
        }
        if divergence_of(spec, &q, p0) > rho {
            let mut s_lo = 0.0;
            let mut s_hi = 1.0;
            for _ in 0..60 {
                let s = 0.5 * (s_lo + s_hi);
                let blend: Vec<f64> = q
                    .iter()
                    .zip(p0)
                    .map(|(&qi, &pi)| pi + s * (qi - pi))
                    .collect();
                if divergence_of(spec, &blend, p0) <= rho {
                    s_lo = s;
                } else {
                    s_hi = s;
                }
            }
            for (qi, &pi) in q.iter_mut().zip(p0) {
                *qi = pi + s_lo * (*qi - pi);
            }
        }
        q
    };
    let spent_at = |lambda: f64| -> f64 {
        let (q, _) = stationary_weights(spec, losses, p0, lambda);
        divergence_of(spec, &q, p0)
    };
    if spent_at(lambda_floor) <= rho {
        let (q, eta) = stationary_weights(spec, losses, p0, lambda_floor);
        return (polish(q), lambda_floor, eta);
    }
    let mut hi = 1.0f64.max(2.0 * lambda_floor);
    let mut guard = 0;
    while spent_at(hi) > rho {
        hi *= 2.0;
        guard += 1;
        assert!(guard < 200, "divergence bracket failed to expand");
    }
    let lambda =
        crate::numeric::bisect_increasing(|l| rho - spent_at(l), lambda_floor, hi, 0.0, 1e-13);
    let (q, eta) = stationary_weights(spec, losses, p0, lambda);
    (polish(q), lambda, eta)
}

/// Max violation of the KKT system at `(q, lambda, eta)`.
///
/// Stationarity is checked in conjugate form, `q_i = p0_i * (phi*)'((loss_i
/// - eta) / lambda)`: it is equivalent to the gradient condition wherever
/// `phi'` is finite, and it stays well conditioned where `phi'` diverges
/// (the mass cap `q = p0 / mu` of the smoothed-quantile family).
fn kkt_residual(
    spec: &DivergenceSpec,
    losses: &[f64],
    p0: &[f64],
    q: &[f64],
    lambda: f64,
    eta: f64,
) -> f64 {
    let rho = spec.rho();
    let mass_gap = (q.iter().sum::<f64>() - 1.0).abs();
    let spent = divergence_of(spec, q, p0);
    // Complementary slackness: with a floored multiplier the budget may be
    // unspent, otherwise it must be exhausted.
    let budget_gap = if lambda <= 2.0 * LAMBDA_FLOOR {
        (spent - rho).max(0.0)
    } else {
        (spent - rho).abs()
    };
    let mut stationarity: f64 = 0.0;
    for ((&l, &p), &qi) in losses.iter().zip(p0).zip(q) {
        let r = if lambda == 0.0 {
            if qi > 1e-12 {
                // Vertex support: the atom must carry exactly the top loss.
                (l - eta).abs()
            } else {
                // Off-support atoms must not carry more loss.
                (l - eta).max(0.0)
            }
        } else {
            let target = p * spec
                .phi_conj_grad((l - eta) / lambda)
                .expect("finite dual argument");
            (qi - target).abs()
        };
        stationarity = stationarity.max(r);
    }
    mass_gap.max(budget_gap).max(stationarity)
}

/// Maximizes `E_Q[loss]` over the divergence ball by projected ascent plus
/// KKT refinement; the result carries a certified residual.
pub fn primal_worst_case(
    spec: &DivergenceSpec,
    losses: &[f64],
    p0: &[f64],
) -> Result<WorstCaseResult> {
    validate_instance(losses, p0)?;
    let max_loss = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_loss = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    if max_loss - min_loss <= 1e-13 * (1.0 + max_loss.abs()) {
        // Constant losses: every feasible Q has the same expectation.
        return Ok(WorstCaseResult {
            value: expected_loss(p0, losses),
            q: p0.to_vec(),
            divergence_used: 0.0,
            kkt_residual: 0.0,
        });
    }

    // Phase 1: projected ascent on the linear objective from p0 and ten
    // random restarts. Each projection is exact, so every iterate is
    // feasible and the best value is a valid lower bound.
    let mut projector = Projector::new(spec, p0);
    let step = 1.0 / (1.0 + losses.iter().fold(0.0f64, |m, l| m.max(l.abs())));
    let mut rng = ChaCha8Rng::seed_from_u64(0x0acc_1e5);
    let mut best_value = f64::NEG_INFINITY;
    let mut best_q = p0.to_vec();
    for restart in 0..11 {
        let mut q: Vec<f64> = if restart == 0 {
            p0.to_vec()
        } else {
            let raw: Vec<f64> = p0
                .iter()
                .map(|&p| p * (0.05 + rng.random::<f64>()))
                .collect();
            let mass: f64 = raw.iter().sum();
            projector.project(&raw.iter().map(|r| r / mass).collect::<Vec<f64>>())
        };
        let mut value = expected_loss(&q, losses);
        for _ in 0..40 {
            let trial: Vec<f64> = q.iter().zip(losses).map(|(&qi, &l)| qi + step * l).collect();
            let next = projector.project(&trial);
            let moved = next
                .iter()
                .zip(&q)
                .fold(0.0f64, |m, (&a, &b)| m.max((a - b).abs()));
            q = next;
            let next_value = expected_loss(&q, losses);
            let stalled = next_value - value <= 1e-14 * (1.0 + value.abs());
            value = next_value;
            if moved <= 1e-13 || stalled {
                break;
            }
        }
        if value > best_value {
            best_value = value;
            best_q = q;
        }
    }

    // Phase 2: exact KKT refinement; this is the certified answer.
    let (q, lambda, eta) = kkt_solve(spec, losses, p0, LAMBDA_FLOOR);
    let value = expected_loss(&q, losses);
    let residual = kkt_residual(spec, losses, p0, &q, lambda, eta);
    // Ascent is a lower bound, so it can only flag a refinement bug.
    debug_assert!(
        best_value <= value + 1e-6 * (1.0 + value.abs()),
        "projected ascent beat the KKT point: {best_value} > {value}"
    );
    let (value, q) = if best_value > value + 1e-6 * (1.0 + value.abs()) {
        (best_value, best_q)
    } else {
        (value, q)
    };
    let divergence_used = divergence_of(spec, &q, p0);
    Ok(WorstCaseResult {
        value,
        q,
        divergence_used,
        kkt_residual: residual,
    })
}

/// Weighted dual objective `sum_i p0_i * f(loss_i; z)`.
fn weighted_dual(spec: &DivergenceSpec, losses: &[f64], p0: &[f64], z: DualPoint) -> f64 {
    let eval = SampleEval::new(spec, z).expect("valid dual point");
    losses
        .iter()
        .zip(p0)
        .map(|(&l, &p)| p * eval.f(l))
        .sum()
}

/// Minimizes the dual objective over `(lambda, eta)` by nested
/// golden-section search; returns the minimum and its argument.
///
/// With a domain the search is restricted to that box. Without one it
/// covers `(0, 10*lambda_bar] x [-10*eta_bar, max loss]`, a region large
/// enough to contain every stationary point of the unconstrained dual.
pub fn dual_min(
    spec: &DivergenceSpec,
    losses: &[f64],
    p0: &[f64],
    domain: Option<&DualDomain>,
) -> Result<(f64, DualPoint)> {
    validate_instance(losses, p0)?;
    let max_loss = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (lambda_lo, lambda_hi, eta_lo, eta_hi) = match domain {
        Some(d) => (d.lambda_lo, d.lambda_hi, d.eta_lo, d.eta_hi),
        None => {
            let b = max_loss.max(1e-6);
            let wide = crate::dual::compute_domain(spec, 1e-300, b)?;
            (
                1e-12,
                10.0 * wide.lambda_hi,
                10.0 * wide.eta_lo.min(-b),
                max_loss.max(wide.eta_hi),
            )
        }
    };
    let inner = |lambda: f64| -> (f64, f64) {
        let (eta, value) = golden_min(
            |eta| weighted_dual(spec, losses, p0, DualPoint::new(lambda, eta)),
            eta_lo,
            eta_hi,
            1e-10,
        );
        (value, eta)
    };
    let (lambda_star, _) = golden_min(|lambda| inner(lambda).0, lambda_lo, lambda_hi, 1e-10);
    let (value, eta_star) = inner(lambda_star);
    Ok((value, DualPoint::new(lambda_star, eta_star)))
}

/// Supremum of `E_Q[loss] - lambda0 * divergence(Q)` over the divergence
/// ball, solved through its KKT system.
///
/// The effective multiplier is `lambda0` plus the ball multiplier, so the
/// same machinery as [`primal_worst_case`] applies with the floor raised to
/// `lambda0`.
pub fn regularized_constrained_value(
    spec: &DivergenceSpec,
    losses: &[f64],
    p0: &[f64],
    lambda0: f64,
) -> Result<f64> {
    validate_instance(losses, p0)?;
    if !(lambda0.is_finite() && lambda0 >= 0.0) {
        return Err(Error::oracle(format!(
            "regularization weight must be nonnegative, got {lambda0}"
        )));
    }
    let max_loss = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_loss = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    if max_loss - min_loss <= 1e-13 * (1.0 + max_loss.abs()) {
        return Ok(expected_loss(p0, losses));
    }
    let (q, _, _) = kkt_solve(spec, losses, p0, lambda0.max(LAMBDA_FLOOR));
    Ok(expected_loss(&q, losses) - lambda0 * divergence_of(spec, &q, p0))
}
