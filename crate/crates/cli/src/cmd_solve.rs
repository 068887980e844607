//! `solve`: run one solver on one dataset, emit a trace and a summary.
//!
//! The trace is JSON lines, one object per iteration, with the raw scalar
//! record plus a trailing moving average of the objective estimate
//! (window from `[output] smoothing_window`, default 5). The summary is a
//! single JSON object with full-batch diagnostics at the reported iterate:
//! objective, gradient norm, the dual gap against the best dual response
//! in the box, an independent oracle cross-check of that gap when the
//! dataset is small enough (at most 64 samples), per-group losses and
//! accuracies, and wall time.

use std::path::Path;
use std::time::Instant;

use dro_core::dual::{batch_grad_x, batch_objective};
use dro_core::{
    best_dual_response, erm_sgd, pan_dro, pgd, sfk_dro, Mode, SolverOutput,
};
use serde_json::json;

use crate::config::{Algorithm, RunConfig};
use crate::errors::CliResult;
use crate::pipeline::{
    box_midpoint, build_dataset, build_model, build_setup, group_stats, initial_point,
    mean_loss, moving_average, write_text,
};

pub fn run(config_path: &Path, seed_override: Option<u64>, out_dir: &Path) -> CliResult<()> {
    let rc = RunConfig::load(config_path, seed_override)?;
    let spec = rc.divergence_spec()?;
    let data = build_dataset(&rc.data_spec()?, rc.seed)?;
    let model = build_model(&rc.loss_spec()?, &data)?;
    let section = rc.solver_section()?;
    let setup = build_setup(&section, &spec, model.as_ref(), rc.seed)?;
    let window = rc.smoothing_window()?;

    let x0 = initial_point(model.as_ref(), rc.seed);
    let z0 = box_midpoint(&setup.domain);
    let clock = Instant::now();
    let out: SolverOutput = match section.algorithm {
        Algorithm::SfkDro => sfk_dro(
            &spec,
            model.as_ref(),
            &data,
            &setup.domain,
            &setup.constants,
            &setup.config,
            &x0,
            z0,
        )?,
        Algorithm::Pgd => pgd(
            &spec,
            model.as_ref(),
            &data,
            &setup.domain,
            &setup.config,
            &x0,
            z0,
        )?,
        Algorithm::PanDro => pan_dro(
            &spec,
            model.as_ref(),
            &data,
            &setup.domain,
            section.fixed_lambda,
            &setup.config,
            &x0,
            z0.eta,
        )?,
        Algorithm::ErmSgd => erm_sgd(model.as_ref(), &data, &setup.config, &x0)?,
    };
    let wall_time = clock.elapsed().as_secs_f64();

    let objectives: Vec<f64> = out.trace.iter().map(|r| r.objective_estimate).collect();
    let smoothed = moving_average(&objectives, window);
    let mut trace_text = String::new();
    for (rec, smooth) in out.trace.iter().zip(&smoothed) {
        let line = json!({
            "t": rec.t,
            "lambda": rec.lambda,
            "eta": rec.eta,
            "grad_x_norm": rec.grad_x_norm,
            "fw_gap": rec.fw_gap,
            "gamma": rec.gamma,
            "objective_estimate": rec.objective_estimate,
            "objective_smoothed": smooth,
        });
        trace_text.push_str(&line.to_string());
        trace_text.push('\n');
    }
    write_text(&out_dir.join(rc.output_name("trace", "trace.jsonl")), &trace_text)?;

    let full: Vec<usize> = (0..data.len()).collect();
    let is_dro = section.algorithm != Algorithm::ErmSgd;
    let (best_value, best_z) =
        best_dual_response(&spec, model.as_ref(), &data, &out.x_out, &setup.domain)?;
    let (objective_full, grad_norm_full, dual_gap) = if is_dro {
        let f = batch_objective(&spec, model.as_ref(), &data, &out.x_out, &full, out.z_out)?;
        let g = batch_grad_x(&spec, model.as_ref(), &data, &out.x_out, &full, out.z_out)?;
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        (f, norm, Some(f - best_value))
    } else {
        let mut acc = vec![0.0; model.dim()];
        let mut grad = vec![0.0; model.dim()];
        for &i in &full {
            model.grad(&out.x_out, &data, i, &mut grad);
            for (a, g) in acc.iter_mut().zip(&grad) {
                *a += g / data.len() as f64;
            }
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        (mean_loss(model.as_ref(), &data, &out.x_out), norm, None)
    };
    // Independent cross-check of the dual gap through the reference
    // minimizer, available only on oracle-sized instances.
    let oracle_dual_gap = if is_dro && data.len() <= 64 {
        let losses: Vec<f64> = (0..data.len())
            .map(|i| model.value(&out.x_out, &data, i))
            .collect();
        let (oracle_value, _) =
            dro_core::oracle::dual_min(&spec, &losses, data.weights(), Some(&setup.domain))?;
        Some(objective_full - oracle_value)
    } else {
        None
    };

    let groups = group_stats(model.as_ref(), &data, &out.x_out);
    let summary = json!({
        "algorithm": section.algorithm.name(),
        "mode": match setup.config.mode { Mode::Theory => "theory", Mode::Practical => "practical" },
        "seed": rc.seed,
        "iterations": setup.config.iterations,
        "batch_nx": setup.config.batch_nx,
        "batch_nz": setup.config.batch_nz,
        "step_alpha": setup.config.step_alpha,
        "constant_c": setup.config.constant_c,
        "t_prime": out.t_prime,
        "z_out": {"lambda": out.z_out.lambda, "eta": out.z_out.eta},
        "domain": {
            "lambda_lo": setup.domain.lambda_lo,
            "lambda_hi": setup.domain.lambda_hi,
            "eta_lo": setup.domain.eta_lo,
            "eta_hi": setup.domain.eta_hi,
        },
        "constants": {
            "l_x": setup.constants.l_x,
            "l_z": setup.constants.l_z,
            "sigma0": setup.constants.sigma0,
            "sigma1": setup.constants.sigma1,
            "d": setup.constants.d,
            "c": setup.constants.c,
            "empirical": setup.constants.empirical,
        },
        "theory_plan": setup.plan.as_ref().map(|p| json!({
            "lambda0": p.lambda0,
            "alpha": p.alpha,
            "n_x_exact": p.n_x_exact,
            "n_z_exact": p.n_z_exact,
            "iterations_exact": p.iterations_exact,
            "epsilon": p.epsilon,
            "warnings": p.warnings,
        })),
        "caps": setup.caps,
        "final": {
            "objective_full": objective_full,
            "grad_x_norm_full": grad_norm_full,
            "dual_gap": dual_gap,
            "oracle_dual_gap": oracle_dual_gap,
            "robust_objective": best_value,
            "best_response": {"lambda": best_z.lambda, "eta": best_z.eta},
            "mean_train_loss": mean_loss(model.as_ref(), &data, &out.x_out),
        },
        "per_group": groups.iter().map(|s| json!({
            "group": s.group,
            "n": s.n,
            "mean_loss": s.mean_loss,
            "accuracy": s.accuracy,
        })).collect::<Vec<_>>(),
        "wall_time_seconds": wall_time,
    });
    write_text(
        &out_dir.join(rc.output_name("summary", "summary.json")),
        &format!("{}\n", serde_json::to_string_pretty(&summary).expect("serializable")),
    )?;
    Ok(())
}
