//! Run configuration: a flat, INI-style text format.
//!
//! ```text
//!     # full-line comments start with '#' or ';'
//!     [section]
//!     key = value
//!     list = 1, 2, 3
//! ```
//!
//! Section and key names are case-sensitive and drawn from a fixed
//! vocabulary; an unknown section or key is a configuration error, so a
//! typo can never silently fall back to a default. Values never span
//! lines and inline comments are not supported (a `#` inside a value is
//! part of the value).
//!
//! Recognized sections and keys:
//!
//! ```text
//!     [divergence]  family (cressie-read | smoothed-cvar), k, mu, rho
//!     [loss]        model (squashed-logistic | tiny-mlp), scale,
//!                   hidden, radius, bound_seed
//!     [data]        source (generate | csv), path, label_column,
//!                   classes, ratios (comma list or "default"),
//!                   base_n, dim, separation
//!     [solver]      algorithm (sfk-dro | pgd | pan-dro | erm-sgd),
//!                   mode (practical | theory), iterations, step_alpha,
//!                   batch_nx, batch_nz, constant_c, lambda0,
//!                   epsilon, delta_estimate, fixed_lambda, seed
//!     [output]      trace, summary, oracle, bias, curves, groups,
//!                   bench_summary, gradcheck, smoothing_window
//!     [bias]        losses (explicit atoms) or loss_bound (uniform population),
//!                   nz_grid, trials
//!     [bench]       seeds, holdout_base_n
//!     [oracle]      losses, weights
//! ```
//!
//! In theory mode the schedule (step, batch sizes, iteration count) is
//! derived from `epsilon` and `delta_estimate`; `iterations`, `batch_nx`,
//! and `batch_nz`, when present, act as execution caps on the derived
//! counts and the applied caps are reported in the summary. In practical
//! mode `iterations` is required and the remaining fields default to
//! `step_alpha = 0.05`, `batch_nx = batch_nz = 8`, `constant_c = 10`,
//! `lambda0 = 1e-3`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dro_core::{DivergenceSpec, Mode};

use crate::errors::{CliError, CliResult};

const VOCABULARY: &[(&str, &[&str])] = &[
    ("divergence", &["family", "k", "mu", "rho"]),
    ("loss", &["model", "scale", "hidden", "radius", "bound_seed"]),
    (
        "data",
        &[
            "source",
            "path",
            "label_column",
            "classes",
            "ratios",
            "base_n",
            "dim",
            "separation",
        ],
    ),
    (
        "solver",
        &[
            "algorithm",
            "mode",
            "iterations",
            "step_alpha",
            "batch_nx",
            "batch_nz",
            "constant_c",
            "lambda0",
            "epsilon",
            "delta_estimate",
            "fixed_lambda",
            "seed",
        ],
    ),
    (
        "output",
        &[
            "trace",
            "summary",
            "oracle",
            "bias",
            "curves",
            "groups",
            "bench_summary",
            "gradcheck",
            "smoothing_window",
        ],
    ),
    ("bias", &["losses", "loss_bound", "nz_grid", "trials"]),
    ("bench", &["seeds", "holdout_base_n"]),
    ("oracle", &["losses", "weights"]),
];

/// Parsed key-value sections, unvalidated beyond the vocabulary.
#[derive(Debug, Default)]
pub struct Ini {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl Ini {
    pub fn parse(text: &str) -> CliResult<Ini> {
        let mut ini = Ini::default();
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let Some(name) = name.strip_suffix(']') else {
                    return Err(CliError::Config(format!(
                        "line {line_no}: unterminated section header '{line}'"
                    )));
                };
                let name = name.trim();
                if name.is_empty() {
                    return Err(CliError::Config(format!(
                        "line {line_no}: empty section name"
                    )));
                }
                ini.sections.entry(name.to_string()).or_default();
                current = Some(name.to_string());
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!(
                    "line {line_no}: expected 'key = value', got '{line}'"
                )));
            };
            let Some(section) = &current else {
                return Err(CliError::Config(format!(
                    "line {line_no}: key '{}' appears before any [section]",
                    key.trim()
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            let entries = ini.sections.get_mut(section).expect("section exists");
            if entries.insert(key.clone(), value).is_some() {
                return Err(CliError::Config(format!(
                    "line {line_no}: duplicate key '{key}' in section [{section}]"
                )));
            }
        }
        ini.check_vocabulary()?;
        Ok(ini)
    }

    fn check_vocabulary(&self) -> CliResult<()> {
        for (section, entries) in &self.sections {
            let Some((_, allowed)) = VOCABULARY.iter().find(|(s, _)| s == section) else {
                let known: Vec<&str> = VOCABULARY.iter().map(|(s, _)| *s).collect();
                return Err(CliError::Config(format!(
                    "unknown section [{section}]; known sections: {}",
                    known.join(", ")
                )));
            };
            for key in entries.keys() {
                if !allowed.contains(&key.as_str()) {
                    return Err(CliError::Config(format!(
                        "unknown key '{key}' in section [{section}]; allowed: {}",
                        allowed.join(", ")
                    )));
                }
            }
        }
        Ok(())
    }

    fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(|v| v.as_str())
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }
}

fn parse_scalar<T: std::str::FromStr>(
    section: &str,
    key: &str,
    value: &str,
    kind: &str,
) -> CliResult<T> {
    value.parse().map_err(|_| {
        CliError::Config(format!(
            "section [{section}] key '{key}': cannot parse '{value}' as {kind}"
        ))
    })
}

fn parse_list<T: std::str::FromStr>(
    section: &str,
    key: &str,
    value: &str,
    kind: &str,
) -> CliResult<Vec<T>> {
    value
        .split(',')
        .map(|item| parse_scalar(section, key, item.trim(), kind))
        .collect()
}

/// Which solver a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    SfkDro,
    Pgd,
    PanDro,
    ErmSgd,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::SfkDro => "sfk-dro",
            Algorithm::Pgd => "pgd",
            Algorithm::PanDro => "pan-dro",
            Algorithm::ErmSgd => "erm-sgd",
        }
    }
}

/// Loss model choice with its constructor arguments.
#[derive(Debug, Clone)]
pub enum LossSpec {
    SquashedLogistic { scale: f64 },
    TinyMlp { hidden: usize, scale: f64, radius: f64, bound_seed: u64 },
}

/// Dataset source.
#[derive(Debug, Clone)]
pub enum DataSpec {
    Generate {
        classes: usize,
        ratios: Vec<f64>,
        base_n: usize,
        dim: usize,
        separation: f64,
    },
    Csv { path: PathBuf, label_column: String },
}

/// The `[solver]` section, typed but not yet turned into a runnable
/// schedule (theory mode derives most fields later).
#[derive(Debug, Clone)]
pub struct SolverSection {
    pub algorithm: Algorithm,
    pub mode: Mode,
    pub iterations: Option<u64>,
    pub step_alpha: Option<f64>,
    pub batch_nx: Option<usize>,
    pub batch_nz: Option<usize>,
    pub constant_c: Option<f64>,
    pub lambda0: Option<f64>,
    pub epsilon: Option<f64>,
    pub delta_estimate: Option<f64>,
    pub fixed_lambda: f64,
}

/// The `[bias]` section.
#[derive(Debug, Clone)]
pub struct BiasSection {
    pub losses: Option<Vec<f64>>,
    pub loss_bound: f64,
    pub nz_grid: Vec<usize>,
    pub trials: usize,
}

/// The `[bench]` section.
#[derive(Debug, Clone)]
pub struct BenchSection {
    pub seeds: Vec<u64>,
    pub holdout_base_n: Option<usize>,
}

/// The `[oracle]` section.
#[derive(Debug, Clone)]
pub struct OracleSection {
    pub losses: Vec<f64>,
    pub weights: Option<Vec<f64>>,
}

/// A loaded configuration plus the resolved master seed.
#[derive(Debug)]
pub struct RunConfig {
    ini: Ini,
    pub seed: u64,
}

impl RunConfig {
    /// Reads and parses `path`; `seed_override` (the `--seed` flag) wins
    /// over the `[solver] seed` key, which defaults to 0.
    pub fn load(path: &Path, seed_override: Option<u64>) -> CliResult<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        let ini = Ini::parse(&text)?;
        let seed = match seed_override {
            Some(s) => s,
            None => match ini.get("solver", "seed") {
                Some(v) => parse_scalar("solver", "seed", v, "an unsigned integer")?,
                None => 0,
            },
        };
        Ok(RunConfig { ini, seed })
    }

    fn require(&self, section: &str, key: &str) -> CliResult<&str> {
        self.ini.get(section, key).ok_or_else(|| {
            CliError::Config(format!("missing key '{key}' in section [{section}]"))
        })
    }

    fn f64_opt(&self, section: &str, key: &str) -> CliResult<Option<f64>> {
        self.ini
            .get(section, key)
            .map(|v| parse_scalar(section, key, v, "a number"))
            .transpose()
    }

    fn u64_opt(&self, section: &str, key: &str) -> CliResult<Option<u64>> {
        self.ini
            .get(section, key)
            .map(|v| parse_scalar(section, key, v, "an unsigned integer"))
            .transpose()
    }

    fn usize_opt(&self, section: &str, key: &str) -> CliResult<Option<usize>> {
        self.ini
            .get(section, key)
            .map(|v| parse_scalar(section, key, v, "an unsigned integer"))
            .transpose()
    }

    pub fn divergence_spec(&self) -> CliResult<DivergenceSpec> {
        let family = self.require("divergence", "family")?;
        let rho = parse_scalar(
            "divergence",
            "rho",
            self.require("divergence", "rho")?,
            "a number",
        )?;
        match family {
            "cressie-read" => {
                let k = parse_scalar(
                    "divergence",
                    "k",
                    self.require("divergence", "k")?,
                    "a number",
                )?;
                Ok(DivergenceSpec::cressie_read(k, rho)?)
            }
            "smoothed-cvar" => {
                let mu = parse_scalar(
                    "divergence",
                    "mu",
                    self.require("divergence", "mu")?,
                    "a number",
                )?;
                Ok(DivergenceSpec::smoothed_cvar(mu, rho)?)
            }
            other => Err(CliError::Config(format!(
                "unknown divergence family '{other}'; expected cressie-read or smoothed-cvar"
            ))),
        }
    }

    pub fn loss_spec(&self) -> CliResult<LossSpec> {
        let model = self.require("loss", "model")?;
        let scale = self.f64_opt("loss", "scale")?.unwrap_or(1.0);
        match model {
            "squashed-logistic" => Ok(LossSpec::SquashedLogistic { scale }),
            "tiny-mlp" => Ok(LossSpec::TinyMlp {
                hidden: self.usize_opt("loss", "hidden")?.unwrap_or(8),
                scale,
                radius: self.f64_opt("loss", "radius")?.unwrap_or(10.0),
                bound_seed: self.u64_opt("loss", "bound_seed")?.unwrap_or(0),
            }),
            other => Err(CliError::Config(format!(
                "unknown loss model '{other}'; expected squashed-logistic or tiny-mlp"
            ))),
        }
    }

    pub fn data_spec(&self) -> CliResult<DataSpec> {
        let source = self.require("data", "source")?;
        match source {
            "generate" => {
                let classes = self.usize_opt("data", "classes")?.unwrap_or(2);
                let ratios = match self.ini.get("data", "ratios") {
                    None | Some("default") => {
                        let defaults = dro_core::data::DEFAULT_IMBALANCE_RATIOS;
                        if classes > defaults.len() {
                            return Err(CliError::Config(format!(
                                "default ratios cover up to {} classes, got {classes}",
                                defaults.len()
                            )));
                        }
                        defaults[..classes].to_vec()
                    }
                    Some(v) => parse_list("data", "ratios", v, "a number")?,
                };
                Ok(DataSpec::Generate {
                    classes,
                    ratios,
                    base_n: self.usize_opt("data", "base_n")?.unwrap_or(100),
                    dim: self.usize_opt("data", "dim")?.unwrap_or(5),
                    separation: self.f64_opt("data", "separation")?.unwrap_or(2.0),
                })
            }
            "csv" => Ok(DataSpec::Csv {
                path: PathBuf::from(self.require("data", "path")?),
                label_column: self
                    .ini
                    .get("data", "label_column")
                    .unwrap_or("label")
                    .to_string(),
            }),
            other => Err(CliError::Config(format!(
                "unknown data source '{other}'; expected generate or csv"
            ))),
        }
    }

    pub fn solver_section(&self) -> CliResult<SolverSection> {
        let algorithm = match self.ini.get("solver", "algorithm").unwrap_or("sfk-dro") {
            "sfk-dro" => Algorithm::SfkDro,
            "pgd" => Algorithm::Pgd,
            "pan-dro" => Algorithm::PanDro,
            "erm-sgd" => Algorithm::ErmSgd,
            other => {
                return Err(CliError::Config(format!(
                    "unknown algorithm '{other}'; expected sfk-dro, pgd, pan-dro, or erm-sgd"
                )))
            }
        };
        let mode = match self.ini.get("solver", "mode").unwrap_or("practical") {
            "practical" => Mode::Practical,
            "theory" => Mode::Theory,
            other => {
                return Err(CliError::Config(format!(
                    "unknown mode '{other}'; expected practical or theory"
                )))
            }
        };
        let section = SolverSection {
            algorithm,
            mode,
            iterations: self.u64_opt("solver", "iterations")?,
            step_alpha: self.f64_opt("solver", "step_alpha")?,
            batch_nx: self.usize_opt("solver", "batch_nx")?,
            batch_nz: self.usize_opt("solver", "batch_nz")?,
            constant_c: self.f64_opt("solver", "constant_c")?,
            lambda0: self.f64_opt("solver", "lambda0")?,
            epsilon: self.f64_opt("solver", "epsilon")?,
            delta_estimate: self.f64_opt("solver", "delta_estimate")?,
            fixed_lambda: self.f64_opt("solver", "fixed_lambda")?.unwrap_or(1.0),
        };
        match section.mode {
            Mode::Theory => {
                if section.epsilon.is_none() {
                    return Err(CliError::Config(
                        "theory mode requires 'epsilon' in [solver]".into(),
                    ));
                }
            }
            Mode::Practical => {
                if section.iterations.is_none() {
                    return Err(CliError::Config(
                        "practical mode requires 'iterations' in [solver]".into(),
                    ));
                }
            }
        }
        Ok(section)
    }

    pub fn bias_section(&self) -> CliResult<BiasSection> {
        let losses = self
            .ini
            .get("bias", "losses")
            .map(|v| parse_list("bias", "losses", v, "a number"))
            .transpose()?;
        let nz_grid = match self.ini.get("bias", "nz_grid") {
            Some(v) => parse_list("bias", "nz_grid", v, "an unsigned integer")?,
            None => (3..=12).map(|p| 1usize << p).collect(),
        };
        let trials = self.usize_opt("bias", "trials")?.unwrap_or(200);
        if trials < 30 {
            return Err(CliError::Config(format!(
                "bias study needs at least 30 trials for a stable slope fit, got {trials}"
            )));
        }
        if nz_grid.len() < 2 {
            return Err(CliError::Config(
                "bias study needs at least 2 grid points".into(),
            ));
        }
        if nz_grid.iter().any(|&n| n == 0) {
            return Err(CliError::Config("bias grid contains a zero batch size".into()));
        }
        Ok(BiasSection {
            losses,
            loss_bound: self.f64_opt("bias", "loss_bound")?.unwrap_or(1.0),
            nz_grid,
            trials,
        })
    }

    pub fn bench_section(&self) -> CliResult<BenchSection> {
        let seeds = match self.ini.get("bench", "seeds") {
            Some(v) => parse_list("bench", "seeds", v, "an unsigned integer")?,
            None => vec![1, 2, 3, 4, 5],
        };
        if seeds.is_empty() {
            return Err(CliError::Config("bench needs at least one seed".into()));
        }
        Ok(BenchSection {
            seeds,
            holdout_base_n: self.usize_opt("bench", "holdout_base_n")?,
        })
    }

    pub fn oracle_section(&self) -> CliResult<OracleSection> {
        let losses = parse_list(
            "oracle",
            "losses",
            self.require("oracle", "losses")?,
            "a number",
        )?;
        let weights = self
            .ini
            .get("oracle", "weights")
            .map(|v| parse_list("oracle", "weights", v, "a number"))
            .transpose()?;
        Ok(OracleSection { losses, weights })
    }

    /// Output file name for `key`, falling back to `default`.
    pub fn output_name(&self, key: &str, default: &str) -> String {
        self.ini
            .get("output", key)
            .unwrap_or(default)
            .to_string()
    }

    pub fn smoothing_window(&self) -> CliResult<usize> {
        let w = self.usize_opt("output", "smoothing_window")?.unwrap_or(5);
        if w == 0 {
            return Err(CliError::Config("smoothing window must be at least 1".into()));
        }
        Ok(w)
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.ini.has_section(section)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unknown_keys_and_sections() {
        let bad_key = "[divergence]\nfamily = cressie-read\nkk = 2\n";
        let err = Ini::parse(bad_key).unwrap_err();
        assert!(err.to_string().contains("unknown key 'kk'"), "{err}");
        let bad_section = "[divergences]\nfamily = cressie-read\n";
        let err = Ini::parse(bad_section).unwrap_err();
        assert!(err.to_string().contains("unknown section"), "{err}");
    }

    #[test]
    fn rejects_duplicates_and_orphan_keys() {
        let dup = "[solver]\nseed = 1\nseed = 2\n";
        assert!(Ini::parse(dup).unwrap_err().to_string().contains("duplicate"));
        let orphan = "seed = 1\n";
        assert!(Ini::parse(orphan)
            .unwrap_err()
            .to_string()
            .contains("before any [section]"));
    }

    #[test]
    fn parses_sections_with_comments_and_lists() {
        let text = "\
# study setup
[divergence]
family = cressie-read
k = 2.0
rho = 0.5

[bias]
; explicit instance
losses = 0.1, 0.9, 0.4
trials = 50
";
        let ini = Ini::parse(text).unwrap();
        assert_eq!(ini.get("divergence", "k"), Some("2.0"));
        assert_eq!(ini.get("bias", "losses"), Some("0.1, 0.9, 0.4"));
    }

    #[test]
    fn theory_mode_requires_epsilon() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ini");
        std::fs::write(&path, "[solver]\nmode = theory\n").unwrap();
        let rc = RunConfig::load(&path, None).unwrap();
        let err = rc.solver_section().unwrap_err();
        assert!(err.to_string().contains("epsilon"), "{err}");
    }

    #[test]
    fn seed_flag_overrides_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ini");
        std::fs::write(&path, "[solver]\nmode = practical\niterations = 5\nseed = 3\n")
            .unwrap();
        assert_eq!(RunConfig::load(&path, None).unwrap().seed, 3);
        assert_eq!(RunConfig::load(&path, Some(11)).unwrap().seed, 11);
    }
}
