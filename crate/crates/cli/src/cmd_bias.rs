//! `bias`: Monte-Carlo study of the dual mini-batch bias.
//!
//! The inner minimum of the robust objective is estimated on mini-batches:
//! `E[inf_z f_batch]` undershoots `inf_z F`, and the gap shrinks with the
//! batch size at a known rate. For each grid batch size the command runs
//! `trials` independent batches, solves the inner minimization on each
//! batch exactly, and reports the measured gap next to its upper bound,
//! with fitted log-log slopes for both columns.
//!
//! Two sampling modes exist. Without explicit losses, every batch is drawn
//! fresh from the uniform population on `[0, loss_bound]` and the gap is
//! taken against the population minimum in closed form. With explicit
//! losses, batches resample the given atoms with replacement and the gap
//! is taken against the atom-set minimum. In both modes the bound column
//! is an envelope, not an asymptote: the measured gap decays at least as
//! fast, and typically faster once the batch is large enough for the
//! batch minimizer to concentrate.
//!
//! The inner minimization uses the closed-form partial minimum over the
//! multiplier: for the power family with exponent `k` and conjugate
//! exponent `k* = k/(k-1)`,
//!
//! ```text
//!     inf_{lambda >= 0} F(lambda, eta)
//!         = omega * (mean (loss - eta)_+^{k*})^{1/k*} + eta,
//!     omega = (k (k-1) rho + 1)^{1/k}
//! ```
//!
//! leaving a one-dimensional convex search over `eta`. The study is
//! defined for the power family only, since the bound requires it.

use std::path::Path;

use dro_core::data::RngStreams;
use dro_core::{lemma3_bound, DivergenceSpec, Family};
use rand::Rng;

use crate::config::RunConfig;
use crate::errors::{CliError, CliResult};
use crate::pipeline::write_csv;

/// One grid point of the study.
#[derive(Debug, Clone)]
pub struct BiasRow {
    pub n_z: usize,
    pub measured_gap: f64,
    pub lemma3_bound: f64,
    /// Log-log slope fitted to the measured column; same in every row.
    pub fitted_slope: f64,
    /// Log-log slope fitted to the bound column; same in every row.
    pub bound_slope: f64,
}

/// Full study result.
#[derive(Debug, Clone)]
pub struct BiasReport {
    pub rows: Vec<BiasRow>,
    pub full_inf: f64,
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

fn golden(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, x_tol: f64) -> (f64, f64) {
    let mut a = hi - INV_PHI * (hi - lo);
    let mut b = lo + INV_PHI * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    for _ in 0..220 {
        if hi - lo <= x_tol {
            break;
        }
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - INV_PHI * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + INV_PHI * (hi - lo);
            fb = f(b);
        }
    }
    let mid = 0.5 * (lo + hi);
    (mid, f(mid))
}

#[inline]
fn powp(u: f64, p: f64) -> f64 {
    if p == 2.0 {
        u * u
    } else if p == 3.0 {
        u * u * u
    } else {
        u.powf(p)
    }
}

fn cressie_exponents(spec: &DivergenceSpec) -> CliResult<(f64, f64)> {
    let Family::CressieRead { k } = spec.family() else {
        return Err(CliError::Config(
            "the bias study is defined only for the power-divergence family".into(),
        ));
    };
    let k_star = k / (k - 1.0);
    let omega = (k * (k - 1.0) * spec.rho() + 1.0).powf(1.0 / k);
    Ok((k_star, omega))
}

/// Minimizes `omega * m(eta)^{1/k*} + eta` over `eta <= max_loss` with an
/// expanding lower bracket; `m` is the tail moment `mean (loss - eta)_+^{k*}`
/// of whichever population is under study.
fn eta_inf(
    k_star: f64,
    omega: f64,
    m: impl Fn(f64) -> f64,
    min_loss: f64,
    max_loss: f64,
) -> CliResult<f64> {
    let value = |eta: f64| omega * powp(m(eta), 1.0 / k_star) + eta;
    let hi = max_loss;
    let mut lo = min_loss - 1.0 - (max_loss - min_loss);
    for _ in 0..60 {
        let (arg, val) = golden(&value, lo, hi, 1e-9);
        if arg > lo + 1e-6 {
            return Ok(val);
        }
        lo = hi - 2.0 * (hi - lo);
    }
    Err(CliError::Config(
        "inner minimization bracket failed to close".into(),
    ))
}

/// Exact inner minimum `inf_{lambda >= 0, eta} F` on an explicit loss
/// vector with uniform weights.
pub fn cr_unconstrained_inf(spec: &DivergenceSpec, losses: &[f64]) -> CliResult<f64> {
    let (k_star, omega) = cressie_exponents(spec)?;
    let n = losses.len() as f64;
    let max_loss = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_loss = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    let m = |eta: f64| -> f64 {
        let mut acc = 0.0;
        for &l in losses {
            let u = l - eta;
            if u > 0.0 {
                acc += powp(u, k_star);
            }
        }
        acc / n
    };
    eta_inf(k_star, omega, m, min_loss, max_loss)
}

/// Exact inner minimum against the uniform population on `[0, bound]`,
/// whose tail moment has the closed form
/// `E (loss - eta)_+^{k*} = ((b - eta)^{k*+1} - (-eta)_+^{k*+1}) / (b (k*+1))`.
pub fn cr_uniform_inf(spec: &DivergenceSpec, bound: f64) -> CliResult<f64> {
    let (k_star, omega) = cressie_exponents(spec)?;
    let m = |eta: f64| -> f64 {
        if eta >= bound {
            return 0.0;
        }
        let top = powp(bound - eta, k_star + 1.0);
        let bottom = if eta < 0.0 { powp(-eta, k_star + 1.0) } else { 0.0 };
        (top - bottom) / (bound * (k_star + 1.0))
    };
    eta_inf(k_star, omega, m, 0.0, bound)
}

fn fit_slope(points: &[(f64, f64)]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let xm = points.iter().map(|p| p.0).sum::<f64>() / points.len() as f64;
    let ym = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    let sxy: f64 = points.iter().map(|p| (p.0 - xm) * (p.1 - ym)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - xm) * (p.0 - xm)).sum();
    sxy / sxx
}

fn validate_trials(trials: usize) -> CliResult<()> {
    if trials < 30 {
        return Err(CliError::Config(format!(
            "bias study needs at least 30 trials for a stable slope fit, got {trials}"
        )));
    }
    Ok(())
}

fn assemble(
    spec: &DivergenceSpec,
    loss_bound: f64,
    full_inf: f64,
    per_size: Vec<(usize, f64)>,
) -> CliResult<BiasReport> {
    let mut rows = Vec::with_capacity(per_size.len());
    for (n_z, mean_inner) in per_size {
        rows.push(BiasRow {
            n_z,
            measured_gap: (full_inf - mean_inner).abs(),
            lemma3_bound: lemma3_bound(spec, loss_bound, n_z as f64)?,
            fitted_slope: 0.0,
            bound_slope: 0.0,
        });
    }
    let measured: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.measured_gap > 0.0)
        .map(|r| ((r.n_z as f64).ln(), r.measured_gap.ln()))
        .collect();
    let bound: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| ((r.n_z as f64).ln(), r.lemma3_bound.ln()))
        .collect();
    let fitted_slope = fit_slope(&measured);
    let bound_slope = fit_slope(&bound);
    for row in &mut rows {
        row.fitted_slope = fitted_slope;
        row.bound_slope = bound_slope;
    }
    Ok(BiasReport { rows, full_inf })
}

/// Runs the study by resampling an explicit atom set with replacement.
/// `loss_bound` is the range bound entering the gap bound formula.
pub fn study(
    spec: &DivergenceSpec,
    losses: &[f64],
    nz_grid: &[usize],
    trials: usize,
    loss_bound: f64,
    seed: u64,
) -> CliResult<BiasReport> {
    if losses.is_empty() {
        return Err(CliError::Config("bias study needs a nonempty instance".into()));
    }
    validate_trials(trials)?;
    if losses.iter().any(|l| !l.is_finite() || l.abs() > loss_bound + 1e-12) {
        return Err(CliError::Config(format!(
            "instance losses must be finite and bounded by {loss_bound}"
        )));
    }
    let full_inf = cr_unconstrained_inf(spec, losses)?;
    let mut rng = RngStreams::new(seed).z_batch();
    let mut per_size = Vec::with_capacity(nz_grid.len());
    let mut batch = Vec::new();
    for &n_z in nz_grid {
        let mut acc = 0.0;
        for _ in 0..trials {
            batch.clear();
            for _ in 0..n_z {
                batch.push(losses[rng.random_range(0..losses.len())]);
            }
            acc += cr_unconstrained_inf(spec, &batch)?;
        }
        per_size.push((n_z, acc / trials as f64));
    }
    assemble(spec, loss_bound, full_inf, per_size)
}

/// Runs the study with each batch drawn fresh from the uniform population
/// on `[0, loss_bound]`, against the closed-form population minimum.
pub fn study_uniform(
    spec: &DivergenceSpec,
    loss_bound: f64,
    nz_grid: &[usize],
    trials: usize,
    seed: u64,
) -> CliResult<BiasReport> {
    if !(loss_bound.is_finite() && loss_bound > 0.0) {
        return Err(CliError::Config(format!(
            "loss bound must be positive, got {loss_bound}"
        )));
    }
    validate_trials(trials)?;
    let full_inf = cr_uniform_inf(spec, loss_bound)?;
    let mut rng = RngStreams::new(seed).z_batch();
    let mut per_size = Vec::with_capacity(nz_grid.len());
    let mut batch = Vec::new();
    for &n_z in nz_grid {
        let mut acc = 0.0;
        for _ in 0..trials {
            batch.clear();
            for _ in 0..n_z {
                batch.push(loss_bound * rng.random::<f64>());
            }
            acc += cr_unconstrained_inf(spec, &batch)?;
        }
        per_size.push((n_z, acc / trials as f64));
    }
    assemble(spec, loss_bound, full_inf, per_size)
}

pub fn run(config_path: &Path, seed_override: Option<u64>, out_dir: &Path) -> CliResult<()> {
    let rc = RunConfig::load(config_path, seed_override)?;
    let spec = rc.divergence_spec()?;
    let section = rc.bias_section()?;
    let report = match &section.losses {
        Some(losses) => {
            let bound = losses.iter().fold(0.0f64, |m, l| m.max(l.abs()));
            study(&spec, losses, &section.nz_grid, section.trials, bound, rc.seed)?
        }
        None => study_uniform(
            &spec,
            section.loss_bound,
            &section.nz_grid,
            section.trials,
            rc.seed,
        )?,
    };
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.n_z.to_string(),
                r.measured_gap.to_string(),
                r.lemma3_bound.to_string(),
                r.fitted_slope.to_string(),
                r.bound_slope.to_string(),
            ]
        })
        .collect();
    write_csv(
        &out_dir.join(rc.output_name("bias", "bias.csv")),
        &["n_z", "measured_gap", "lemma3_bound", "fitted_slope", "bound_slope"],
        &rows,
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_population_inf_matches_a_dense_sample() {
        for (k, rho, bound) in [(2.0, 0.3, 1.0), (1.5, 1.0, 2.0)] {
            let spec = DivergenceSpec::cressie_read(k, rho).unwrap();
            let n = 200_000;
            let dense: Vec<f64> = (0..n)
                .map(|i| bound * (i as f64 + 0.5) / n as f64)
                .collect();
            let closed = cr_uniform_inf(&spec, bound).unwrap();
            let sampled = cr_unconstrained_inf(&spec, &dense).unwrap();
            assert!(
                (closed - sampled).abs() <= 1e-4 * (1.0 + closed.abs()),
                "population inf {closed} vs dense sample {sampled} at k = {k}"
            );
        }
    }

    #[test]
    fn slope_fit_recovers_an_exact_power_law() {
        let points: Vec<(f64, f64)> = [8.0f64, 16.0, 32.0, 64.0]
            .iter()
            .map(|n| (n.ln(), (3.0 * n.powf(-0.5)).ln()))
            .collect();
        let slope = fit_slope(&points);
        assert!((slope + 0.5).abs() <= 1e-12, "exact power law misfitted: {slope}");
    }

    #[test]
    fn uniform_study_rejects_bad_settings() {
        let cr = DivergenceSpec::cressie_read(2.0, 0.5).unwrap();
        assert!(study_uniform(&cr, 0.0, &[8, 16], 40, 1).is_err());
        assert!(study_uniform(&cr, 1.0, &[8, 16], 5, 1).is_err());
        let cvar = DivergenceSpec::smoothed_cvar(0.3, 0.5).unwrap();
        assert!(study_uniform(&cvar, 1.0, &[8, 16], 40, 1).is_err());
    }
}
