//! Shared plumbing between commands: dataset and model construction, the
//! practical/theory schedule resolution, and small report helpers.

use std::path::Path;

use dro_core::data::{gen_imbalanced, load_csv, RngStreams};
use dro_core::dual::{compute_constants, compute_domain};
use dro_core::losses::{SquashedLogistic, TinyMlp};
use dro_core::{
    theory_hyperparams, Dataset, DivergenceSpec, DualDomain, DualPoint, LossModel, Mode,
    ObjectiveConstants, SolverConfig, TheoryPlan,
};

use crate::config::{DataSpec, LossSpec, SolverSection};
use crate::errors::{CliError, CliResult};

pub fn build_dataset(spec: &DataSpec, seed: u64) -> CliResult<Dataset> {
    match spec {
        DataSpec::Generate {
            classes,
            ratios,
            base_n,
            dim,
            separation,
        } => Ok(gen_imbalanced(*classes, ratios, *base_n, *dim, *separation, seed)?),
        DataSpec::Csv { path, label_column } => Ok(load_csv(path, label_column)?),
    }
}

pub fn build_model(spec: &LossSpec, data: &Dataset) -> CliResult<Box<dyn LossModel>> {
    match spec {
        LossSpec::SquashedLogistic { scale } => {
            Ok(Box::new(SquashedLogistic::new(*scale, data)?))
        }
        LossSpec::TinyMlp {
            hidden,
            scale,
            radius,
            bound_seed,
        } => Ok(Box::new(TinyMlp::new(
            *hidden,
            data.group_count(),
            *scale,
            *radius,
            data,
            *bound_seed,
        )?)),
    }
}

/// A runnable schedule: the dual box, its constants, the solver config,
/// and theory-mode bookkeeping.
pub struct Setup {
    pub domain: DualDomain,
    pub constants: ObjectiveConstants,
    pub config: SolverConfig,
    pub plan: Option<TheoryPlan>,
    /// Human-readable notes about execution caps applied to theory counts.
    pub caps: Vec<String>,
}

pub fn build_setup(
    section: &SolverSection,
    spec: &DivergenceSpec,
    model: &dyn LossModel,
    seed: u64,
) -> CliResult<Setup> {
    let lc = model.constants();
    match section.mode {
        Mode::Theory => {
            let epsilon = section.epsilon.expect("validated by solver_section");
            let delta = section.delta_estimate.unwrap_or(1.0);
            let plan = theory_hyperparams(spec, &lc, epsilon, delta)?;
            let mut config = plan.config(seed);
            let mut caps = Vec::new();
            if let Some(t) = section.iterations {
                if t < config.iterations {
                    caps.push(format!(
                        "iterations capped to {t} (schedule asks for {})",
                        plan.iterations_exact
                    ));
                    config.iterations = t;
                }
            }
            if let Some(nx) = section.batch_nx {
                if nx < config.batch_nx {
                    caps.push(format!(
                        "batch_nx capped to {nx} (schedule asks for {})",
                        plan.n_x_exact
                    ));
                    config.batch_nx = nx;
                }
            }
            if let Some(nz) = section.batch_nz {
                if nz < config.batch_nz {
                    caps.push(format!(
                        "batch_nz capped to {nz} (schedule asks for {})",
                        plan.n_z_exact
                    ));
                    config.batch_nz = nz;
                }
            }
            Ok(Setup {
                domain: plan.domain,
                constants: plan.constants.clone(),
                config,
                plan: Some(plan),
                caps,
            })
        }
        Mode::Practical => {
            let lambda0 = section.lambda0.unwrap_or(1e-3);
            let domain = compute_domain(spec, lambda0, lc.b)?;
            let constants = compute_constants(spec, &domain, &lc)?;
            let config = SolverConfig {
                iterations: section.iterations.expect("validated by solver_section"),
                step_alpha: section.step_alpha.unwrap_or(0.05),
                batch_nx: section.batch_nx.unwrap_or(8),
                batch_nz: section.batch_nz.unwrap_or(8),
                constant_c: section.constant_c.unwrap_or(10.0),
                seed,
                mode: Mode::Practical,
                epsilon: section.epsilon,
            };
            Ok(Setup {
                domain,
                constants,
                config,
                plan: None,
                caps: Vec::new(),
            })
        }
    }
}

/// Center of the dual box, the default initial `z`.
pub fn box_midpoint(domain: &DualDomain) -> DualPoint {
    DualPoint::new(
        0.5 * (domain.lambda_lo + domain.lambda_hi),
        0.5 * (domain.eta_lo + domain.eta_hi),
    )
}

/// Initial parameters drawn from the dedicated init stream.
pub fn initial_point(model: &dyn LossModel, seed: u64) -> Vec<f64> {
    let mut rng = RngStreams::new(seed).init();
    model.init(&mut rng)
}

/// Trailing moving average with the window clipped at the series start.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1, "window must be at least 1");
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        let n = (i + 1).min(window);
        out.push(sum / n as f64);
    }
    out
}

/// Per-group mean loss, accuracy, and size at parameters `x`.
pub struct GroupStat {
    pub group: usize,
    pub n: usize,
    pub mean_loss: f64,
    pub accuracy: f64,
}

pub fn group_stats(model: &dyn LossModel, data: &Dataset, x: &[f64]) -> Vec<GroupStat> {
    let groups = data.group_count();
    let mut count = vec![0usize; groups];
    let mut loss = vec![0.0; groups];
    let mut hits = vec![0usize; groups];
    for i in 0..data.len() {
        let g = data.group_id(i);
        count[g] += 1;
        loss[g] += model.value(x, data, i);
        if model.correct(x, data, i) {
            hits[g] += 1;
        }
    }
    (0..groups)
        .map(|g| GroupStat {
            group: g,
            n: count[g],
            mean_loss: if count[g] > 0 { loss[g] / count[g] as f64 } else { 0.0 },
            accuracy: if count[g] > 0 {
                hits[g] as f64 / count[g] as f64
            } else {
                0.0
            },
        })
        .collect()
}

/// Mean loss over the whole dataset.
pub fn mean_loss(model: &dyn LossModel, data: &Dataset, x: &[f64]) -> f64 {
    let total: f64 = (0..data.len()).map(|i| model.value(x, data, i)).sum();
    total / data.len() as f64
}

pub fn write_text(path: &Path, content: &str) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Io(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    std::fs::write(path, content)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

/// CSV emission with a fixed header; every row must match its width.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        assert_eq!(row.len(), header.len(), "csv row width mismatch");
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_average_clips_the_leading_window() {
        let values = [4.0, 2.0, 6.0, 0.0, 8.0];
        let smoothed = moving_average(&values, 3);
        assert_eq!(smoothed[0], 4.0);
        assert_eq!(smoothed[1], 3.0);
        assert_eq!(smoothed[2], 4.0);
        assert_eq!(smoothed[3], (2.0 + 6.0 + 0.0) / 3.0);
        assert_eq!(smoothed[4], (6.0 + 0.0 + 8.0) / 3.0);
    }

    #[test]
    fn group_stats_cover_every_sample() {
        let data = gen_imbalanced(3, &[1.0, 0.5, 0.25], 40, 4, 2.0, 11).unwrap();
        let model = SquashedLogistic::new(1.0, &data).unwrap();
        let stats = group_stats(&model, &data, &vec![0.1; 4]);
        assert_eq!(stats.len(), 3);
        let total: usize = stats.iter().map(|s| s.n).sum();
        assert_eq!(total, data.len());
        for s in &stats {
            assert!(s.mean_loss >= 0.0 && s.mean_loss <= 1.0);
            assert!(s.accuracy >= 0.0 && s.accuracy <= 1.0);
        }
    }
}
