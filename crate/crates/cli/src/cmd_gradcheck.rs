//! `gradcheck`: finite-difference audits of every analytic gradient.
//!
//! Three audits run against central differences: the loss model's
//! parameter gradient, the dual objective's parameter gradient (along a
//! random direction per point), and the dual objective's `(lambda, eta)`
//! gradient (both coordinates). All errors are relative,
//! `|analytic - fd| / (1 + |analytic|)`. The report always lands in
//! `gradcheck.json`; any error above the tolerance exits with status 4
//! and names the worst point.

use std::path::Path;

use dro_core::data::RngStreams;
use dro_core::dual::{batch_grad_x, batch_grad_z, batch_objective};
use dro_core::losses::finite_diff_check;
use dro_core::{Dataset, DivergenceSpec, DualDomain, DualPoint, LossModel};
use rand::Rng;
use serde_json::json;

use crate::config::RunConfig;
use crate::errors::{CliError, CliResult};
use crate::pipeline::{build_dataset, build_model, build_setup, write_text};

const TOLERANCE: f64 = 1e-5;
const LOSS_POINTS: usize = 60;
const DUAL_POINTS: usize = 40;

/// Worst relative error of one audit and where it happened.
#[derive(Debug, Clone)]
pub struct DualAudit {
    pub max_rel_err: f64,
    pub worst_x: Vec<f64>,
    pub worst_z: DualPoint,
}

/// Audits the dual objective's gradients at random points; returns the
/// parameter-direction audit and the dual-pair audit.
pub fn audit_dual(
    spec: &DivergenceSpec,
    model: &dyn LossModel,
    data: &Dataset,
    domain: &DualDomain,
    points: usize,
    seed: u64,
) -> CliResult<(DualAudit, DualAudit)> {
    let mut rng = RngStreams::new(seed).init();
    let batch: Vec<usize> = (0..data.len().min(128)).collect();
    let dim = model.dim();
    let mut x_audit = DualAudit {
        max_rel_err: 0.0,
        worst_x: vec![0.0; dim],
        worst_z: DualPoint::new(domain.lambda_lo, 0.0),
    };
    let mut z_audit = x_audit.clone();
    for _ in 0..points {
        let x: Vec<f64> = (0..dim).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        let log_span = (domain.lambda_hi / domain.lambda_lo).ln();
        let lambda = domain.lambda_lo * (rng.random::<f64>() * log_span).exp();
        let eta = domain.eta_lo + rng.random::<f64>() * (domain.eta_hi - domain.eta_lo);
        let z = DualPoint::new(lambda, eta);
        let value = |xq: &[f64], zq: DualPoint| -> CliResult<f64> {
            Ok(batch_objective(spec, model, data, xq, &batch, zq)?)
        };

        let gx = batch_grad_x(spec, model, data, &x, &batch, z)?;
        let dir: Vec<f64> = (0..dim).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        let dir_norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let analytic: f64 = gx.iter().zip(&dir).map(|(g, d)| g * d / dir_norm).sum();
        let h = 1e-6 * (1.0 + x.iter().map(|v| v * v).sum::<f64>().sqrt());
        let mut xp = x.clone();
        let mut xm = x.clone();
        for i in 0..dim {
            xp[i] += h * dir[i] / dir_norm;
            xm[i] -= h * dir[i] / dir_norm;
        }
        let fd = (value(&xp, z)? - value(&xm, z)?) / (2.0 * h);
        let rel = (analytic - fd).abs() / (1.0 + analytic.abs());
        if rel > x_audit.max_rel_err {
            x_audit = DualAudit {
                max_rel_err: rel,
                worst_x: x.clone(),
                worst_z: z,
            };
        }

        let gz = batch_grad_z(spec, model, data, &x, &batch, z)?;
        let h_l = 1e-6 * lambda.max(1e-3);
        let fd_l = (value(&x, DualPoint::new(lambda + h_l, eta))?
            - value(&x, DualPoint::new(lambda - h_l, eta))?)
            / (2.0 * h_l);
        let h_e = 1e-6 * (1.0 + eta.abs());
        let fd_e = (value(&x, DualPoint::new(lambda, eta + h_e))?
            - value(&x, DualPoint::new(lambda, eta - h_e))?)
            / (2.0 * h_e);
        let rel_l = (gz.0 - fd_l).abs() / (1.0 + gz.0.abs());
        let rel_e = (gz.1 - fd_e).abs() / (1.0 + gz.1.abs());
        let rel = rel_l.max(rel_e);
        if rel > z_audit.max_rel_err {
            z_audit = DualAudit {
                max_rel_err: rel,
                worst_x: x,
                worst_z: z,
            };
        }
    }
    Ok((x_audit, z_audit))
}

pub fn run(config_path: &Path, seed_override: Option<u64>, out_dir: &Path) -> CliResult<()> {
    let rc = RunConfig::load(config_path, seed_override)?;
    let spec = rc.divergence_spec()?;
    let data = build_dataset(&rc.data_spec()?, rc.seed)?;
    let model = build_model(&rc.loss_spec()?, &data)?;
    let section = rc.solver_section()?;
    let setup = build_setup(&section, &spec, model.as_ref(), rc.seed)?;

    let loss_report = finite_diff_check(model.as_ref(), &data, LOSS_POINTS, 1e-6, rc.seed)?;
    let (x_audit, z_audit) = audit_dual(
        &spec,
        model.as_ref(),
        &data,
        &setup.domain,
        DUAL_POINTS,
        rc.seed,
    )?;
    let worst = loss_report
        .max_rel_err
        .max(x_audit.max_rel_err)
        .max(z_audit.max_rel_err);
    let pass = worst <= TOLERANCE;
    let report = json!({
        "tolerance": TOLERANCE,
        "pass": pass,
        "loss_audit": {
            "max_rel_err": loss_report.max_rel_err,
            "worst_point": loss_report.worst_point,
            "worst_sample": loss_report.worst_sample,
            "worst_coord": loss_report.worst_coord,
            "analytic": loss_report.analytic,
            "finite_diff": loss_report.finite_diff,
        },
        "dual_x_audit": {
            "max_rel_err": x_audit.max_rel_err,
            "worst_x": x_audit.worst_x,
            "worst_lambda": x_audit.worst_z.lambda,
            "worst_eta": x_audit.worst_z.eta,
        },
        "dual_z_audit": {
            "max_rel_err": z_audit.max_rel_err,
            "worst_x": z_audit.worst_x,
            "worst_lambda": z_audit.worst_z.lambda,
            "worst_eta": z_audit.worst_z.eta,
        },
    });
    write_text(
        &out_dir.join(rc.output_name("gradcheck", "gradcheck.json")),
        &format!("{}\n", serde_json::to_string_pretty(&report).expect("serializable")),
    )?;
    if !pass {
        return Err(CliError::Violation(format!(
            "worst gradient error {worst:.3e} exceeds {TOLERANCE:.0e}; \
             see gradcheck.json for the offending point"
        )));
    }
    Ok(())
}
