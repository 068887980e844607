//! `bench`: run all four solvers on the same data across several seeds.
//!
//! Each seed generates a fresh training set and a balanced held-out set
//! (same class geometry, all ratios 1, shifted generation seed), starts
//! every solver from the same initial point, and shares one schedule, so
//! the runs differ only in the update rule. Output is three CSV tables
//! with fixed schemas and no timestamps, making reports byte-reproducible:
//!
//! ```text
//!     curves.csv         solver,seed,t,objective_estimate,objective_smoothed
//!     groups.csv         solver,seed,split,group,n,mean_loss,accuracy
//!     bench_summary.csv  solver,seed,mean_train_loss,worst_group_train_loss,
//!                        mean_holdout_loss,worst_group_holdout_loss,
//!                        robust_train_objective
//! ```

use std::path::Path;

use dro_core::{best_dual_response, erm_sgd, pan_dro, pgd, sfk_dro, SolverOutput};

use crate::config::{Algorithm, DataSpec, RunConfig};
use crate::errors::{CliError, CliResult};
use crate::pipeline::{
    box_midpoint, build_dataset, build_model, build_setup, group_stats, initial_point,
    mean_loss, moving_average, write_csv,
};

/// Offset separating held-out generation seeds from training seeds.
const HOLDOUT_SEED_OFFSET: u64 = 1_000_003;

const SOLVERS: [Algorithm; 4] = [
    Algorithm::SfkDro,
    Algorithm::Pgd,
    Algorithm::PanDro,
    Algorithm::ErmSgd,
];

pub fn run(config_path: &Path, seed_override: Option<u64>, out_dir: &Path) -> CliResult<()> {
    let rc = RunConfig::load(config_path, seed_override)?;
    let spec = rc.divergence_spec()?;
    let loss_spec = rc.loss_spec()?;
    let data_spec = rc.data_spec()?;
    let section = rc.solver_section()?;
    let bench = rc.bench_section()?;
    let window = rc.smoothing_window()?;

    let holdout_spec = match &data_spec {
        DataSpec::Generate {
            classes,
            ratios,
            base_n,
            dim,
            separation,
        } => DataSpec::Generate {
            classes: *classes,
            ratios: vec![1.0; ratios.len()],
            base_n: bench.holdout_base_n.unwrap_or(*base_n),
            dim: *dim,
            separation: *separation,
        },
        DataSpec::Csv { .. } => {
            return Err(CliError::Config(
                "bench requires generated data so a held-out split can be drawn".into(),
            ))
        }
    };

    let mut curves: Vec<Vec<String>> = Vec::new();
    let mut groups: Vec<Vec<String>> = Vec::new();
    let mut summary: Vec<Vec<String>> = Vec::new();
    for &seed in &bench.seeds {
        let train = build_dataset(&data_spec, seed)?;
        let holdout = build_dataset(&holdout_spec, seed.wrapping_add(HOLDOUT_SEED_OFFSET))?;
        let model = build_model(&loss_spec, &train)?;
        let setup = build_setup(&section, &spec, model.as_ref(), seed)?;
        let x0 = initial_point(model.as_ref(), seed);
        let z0 = box_midpoint(&setup.domain);
        for algorithm in SOLVERS {
            let out: SolverOutput = match algorithm {
                Algorithm::SfkDro => sfk_dro(
                    &spec,
                    model.as_ref(),
                    &train,
                    &setup.domain,
                    &setup.constants,
                    &setup.config,
                    &x0,
                    z0,
                )?,
                Algorithm::Pgd => pgd(
                    &spec,
                    model.as_ref(),
                    &train,
                    &setup.domain,
                    &setup.config,
                    &x0,
                    z0,
                )?,
                Algorithm::PanDro => pan_dro(
                    &spec,
                    model.as_ref(),
                    &train,
                    &setup.domain,
                    section.fixed_lambda,
                    &setup.config,
                    &x0,
                    z0.eta,
                )?,
                Algorithm::ErmSgd => erm_sgd(model.as_ref(), &train, &setup.config, &x0)?,
            };
            let objectives: Vec<f64> =
                out.trace.iter().map(|r| r.objective_estimate).collect();
            let smoothed = moving_average(&objectives, window);
            for (rec, smooth) in out.trace.iter().zip(&smoothed) {
                curves.push(vec![
                    algorithm.name().to_string(),
                    seed.to_string(),
                    rec.t.to_string(),
                    rec.objective_estimate.to_string(),
                    smooth.to_string(),
                ]);
            }
            let mut worst_train = f64::NEG_INFINITY;
            for stat in group_stats(model.as_ref(), &train, &out.x_out) {
                worst_train = worst_train.max(stat.mean_loss);
                groups.push(vec![
                    algorithm.name().to_string(),
                    seed.to_string(),
                    "train".to_string(),
                    stat.group.to_string(),
                    stat.n.to_string(),
                    stat.mean_loss.to_string(),
                    stat.accuracy.to_string(),
                ]);
            }
            let mut worst_holdout = f64::NEG_INFINITY;
            for stat in group_stats(model.as_ref(), &holdout, &out.x_out) {
                worst_holdout = worst_holdout.max(stat.mean_loss);
                groups.push(vec![
                    algorithm.name().to_string(),
                    seed.to_string(),
                    "holdout".to_string(),
                    stat.group.to_string(),
                    stat.n.to_string(),
                    stat.mean_loss.to_string(),
                    stat.accuracy.to_string(),
                ]);
            }
            let (robust, _) =
                best_dual_response(&spec, model.as_ref(), &train, &out.x_out, &setup.domain)?;
            summary.push(vec![
                algorithm.name().to_string(),
                seed.to_string(),
                mean_loss(model.as_ref(), &train, &out.x_out).to_string(),
                worst_train.to_string(),
                mean_loss(model.as_ref(), &holdout, &out.x_out).to_string(),
                worst_holdout.to_string(),
                robust.to_string(),
            ]);
        }
    }
    write_csv(
        &out_dir.join(rc.output_name("curves", "curves.csv")),
        &["solver", "seed", "t", "objective_estimate", "objective_smoothed"],
        &curves,
    )?;
    write_csv(
        &out_dir.join(rc.output_name("groups", "groups.csv")),
        &["solver", "seed", "split", "group", "n", "mean_loss", "accuracy"],
        &groups,
    )?;
    write_csv(
        &out_dir.join(rc.output_name("bench_summary", "bench_summary.csv")),
        &[
            "solver",
            "seed",
            "mean_train_loss",
            "worst_group_train_loss",
            "mean_holdout_loss",
            "worst_group_holdout_loss",
            "robust_train_objective",
        ],
        &summary,
    )?;
    Ok(())
}
