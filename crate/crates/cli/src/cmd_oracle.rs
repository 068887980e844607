//! `oracle`: certified worst-case weights for an explicit small instance.
//!
//! The instance is a loss vector (and optional base weights, uniform by
//! default) from the `[oracle]` section. The command emits the primal
//! worst-case value and weights, the dual value from the reference 2-d
//! minimizer, their gap, and the KKT residual of the certificate.

use std::path::Path;

use dro_core::oracle::{dual_min, primal_worst_case};
use serde_json::json;

use crate::config::RunConfig;
use crate::errors::CliResult;
use crate::pipeline::write_text;

pub fn run(config_path: &Path, seed_override: Option<u64>, out_dir: &Path) -> CliResult<()> {
    let rc = RunConfig::load(config_path, seed_override)?;
    let spec = rc.divergence_spec()?;
    let section = rc.oracle_section()?;
    let n = section.losses.len();
    let p0 = section
        .weights
        .unwrap_or_else(|| vec![1.0 / n as f64; n]);
    let primal = primal_worst_case(&spec, &section.losses, &p0)?;
    let (dual_value, dual_point) = dual_min(&spec, &section.losses, &p0, None)?;
    let report = json!({
        "atoms": n,
        "primal_value": primal.value,
        "dual_value": dual_value,
        "duality_gap": dual_value - primal.value,
        "worst_case_weights": primal.q,
        "divergence_used": primal.divergence_used,
        "kkt_residual": primal.kkt_residual,
        "dual_minimizer": {"lambda": dual_point.lambda, "eta": dual_point.eta},
    });
    write_text(
        &out_dir.join(rc.output_name("oracle", "oracle.json")),
        &format!("{}\n", serde_json::to_string_pretty(&report).expect("serializable")),
    )?;
    Ok(())
}
