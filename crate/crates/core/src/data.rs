//! Datasets, synthetic generation, CSV loading, and batch sampling.
//!
//! Everything that touches randomness goes through [`RngStreams`], which
//! derives one independent ChaCha stream per purpose from a single master
//! seed. Batch draws for the model update, batch draws for the dual update,
//! and parameter initialization each consume their own stream, so changing
//! one batch size never perturbs the other streams and a master seed pins
//! the whole run bit-for-bit.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Default class-frequency ratios for the ten-class imbalanced benchmark.
///
/// Class `c` receives `round(base_n * ratio[c])` training points, so the
/// rarest class is scarcer than the most common by a factor of about 3.5.
pub const DEFAULT_IMBALANCE_RATIOS: [f64; 10] = [
    0.804, 0.543, 0.997, 0.593, 0.390, 0.285, 0.959, 0.806, 0.967, 0.660,
];

/// An in-memory dataset: row-major features plus integer labels.
///
/// `weights` is the sample distribution the robust problem is anchored to;
/// it is a probability vector. `group_ids` partition the samples for
/// worst-group reporting and default to the labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<i64>,
    weights: Vec<f64>,
    group_ids: Vec<usize>,
}

impl Dataset {
    /// Builds a dataset with uniform weights and label-derived groups.
    ///
    /// `features` is row-major with `labels.len() * dim` entries; every
    /// feature must be finite and there must be at least one sample.
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<i64>) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::data("dataset must contain at least one sample"));
        }
        if dim == 0 {
            return Err(Error::data("feature dimension must be at least 1"));
        }
        if features.len() != n * dim {
            return Err(Error::data(format!(
                "feature buffer holds {} values, expected {} ({} samples x {} dims)",
                features.len(),
                n * dim,
                n,
                dim
            )));
        }
        if let Some(bad) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!(
                "non-finite feature at row {}, column {}",
                bad / dim,
                bad % dim
            )));
        }
        let group_ids = labels
            .iter()
            .map(|&l| l.max(0) as usize)
            .collect::<Vec<_>>();
        Ok(Dataset {
            features,
            dim,
            labels,
            weights: vec![1.0 / n as f64; n],
            group_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn feature_row(&self, idx: usize) -> &[f64] {
        &self.features[idx * self.dim..(idx + 1) * self.dim]
    }

    pub fn label(&self, idx: usize) -> i64 {
        self.labels[idx]
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn group_id(&self, idx: usize) -> usize {
        self.group_ids[idx]
    }

    /// Number of distinct groups (group ids are dense from 0).
    pub fn group_count(&self) -> usize {
        self.group_ids.iter().copied().max().map_or(0, |m| m + 1)
    }

    /// Largest feature-row Euclidean norm; loss constants derive from it.
    pub fn max_feature_norm(&self) -> f64 {
        (0..self.len())
            .map(|i| crate::numeric::norm(self.feature_row(i)))
            .fold(0.0, f64::max)
    }

    /// Draws `n` indices i.i.d. uniformly with replacement.
    ///
    /// Sampling is always with replacement so that batch gradients are
    /// unbiased for the weighted objective under uniform weights.
    pub fn sample_batch(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let len = self.len();
        (0..n).map(|_| rng.random_range(0..len)).collect()
    }
}

/// Loads a comma-separated file with a header row.
///
/// All columns other than `label_column` become features in file order;
/// the label column must parse as integers. Cells are trimmed but not
/// quoted: the format is plain numeric CSV. Ragged rows, non-numeric
/// cells, a missing label column, and an empty file each produce their own
/// diagnostic.
pub fn load_csv(path: &Path, label_column: &str) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::data(format!("{} is empty", path.display())))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let label_idx = columns
        .iter()
        .position(|c| *c == label_column)
        .ok_or_else(|| {
            Error::data(format!(
                "label column {label_column:?} not found in header [{}]",
                columns.join(", ")
            ))
        })?;
    let dim = columns.len() - 1;
    if dim == 0 {
        return Err(Error::data("file has no feature columns besides the label"));
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (line_no, line) in lines {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != columns.len() {
            return Err(Error::data(format!(
                "row {} has {} cells, header has {}",
                line_no + 1,
                cells.len(),
                columns.len()
            )));
        }
        for (col, cell) in cells.iter().enumerate() {
            if col == label_idx {
                let label: i64 = cell.parse().map_err(|_| {
                    Error::data(format!(
                        "row {}, column {:?}: label {cell:?} is not an integer",
                        line_no + 1,
                        columns[col]
                    ))
                })?;
                labels.push(label);
            } else {
                let value: f64 = cell.parse().map_err(|_| {
                    Error::data(format!(
                        "row {}, column {:?}: cell {cell:?} is not numeric",
                        line_no + 1,
                        columns[col]
                    ))
                })?;
                features.push(value);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::data(format!(
            "{} has a header but no data rows",
            path.display()
        )));
    }
    Dataset::new(features, dim, labels)
}

/// Generates an imbalanced Gaussian-cluster classification dataset.
///
/// Class `c` is a unit-covariance Gaussian centered at distance
/// `separation` from the origin (centers spread on a circle in the first
/// two coordinates) and contributes `round(base_n * ratios[c])` samples.
/// Labels are `0..classes` and double as group ids.
pub fn gen_imbalanced(
    classes: usize,
    ratios: &[f64],
    base_n: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::data(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    if ratios.len() != classes {
        return Err(Error::data(format!(
            "{} ratios supplied for {classes} classes",
            ratios.len()
        )));
    }
    if !separation.is_finite() || separation < 0.0 {
        return Err(Error::data(format!("invalid separation {separation}")));
    }
    let mut rng = RngStreams::new(seed).data_gen();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (c, &ratio) in ratios.iter().enumerate() {
        if !(ratio.is_finite() && ratio > 0.0) {
            return Err(Error::data(format!("class {c} has invalid ratio {ratio}")));
        }
        let count = (base_n as f64 * ratio).round() as usize;
        if count == 0 {
            return Err(Error::data(format!(
                "class {c} rounds to zero samples (base_n {base_n}, ratio {ratio})"
            )));
        }
        let center = class_center(c, classes, dim, separation);
        for _ in 0..count {
            for coord in &center {
                let noise: f64 = rng.sample(StandardNormal);
                features.push(coord + noise);
            }
            labels.push(c as i64);
        }
    }
    Dataset::new(features, dim, labels)
}

/// Cluster center for class `c`: `separation` times a unit direction,
/// equally spaced by angle in the first two coordinates.
fn class_center(c: usize, classes: usize, dim: usize, separation: f64) -> Vec<f64> {
    let angle = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
    let mut center = vec![0.0; dim];
    center[0] = separation * angle.cos();
    if dim > 1 {
        center[1] = separation * angle.sin();
    }
    center
}

/// Named ChaCha substreams derived from one master seed.
///
/// Every purpose gets its own stream id, so consuming values from one
/// stream (say, a larger dual batch) leaves the others untouched.
#[derive(Debug, Clone, Copy)]
pub struct RngStreams {
    master: u64,
}

impl RngStreams {
    pub fn new(master: u64) -> Self {
        RngStreams { master }
    }

    /// Stream feeding model-update (`x`) batch draws.
    pub fn x_batch(&self) -> ChaCha8Rng {
        self.stream(1)
    }

    /// Stream feeding dual-update (`z`) batch draws.
    pub fn z_batch(&self) -> ChaCha8Rng {
        self.stream(2)
    }

    /// Stream feeding parameter initialization.
    pub fn init(&self) -> ChaCha8Rng {
        self.stream(3)
    }

    /// Stream feeding synthetic data generation.
    pub fn data_gen(&self) -> ChaCha8Rng {
        self.stream(4)
    }

    fn stream(&self, id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(id);
        rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn rejects_empty_and_ragged_input() {
        assert!(Dataset::new(vec![], 2, vec![]).is_err());
        assert!(Dataset::new(vec![1.0, 2.0, 3.0], 2, vec![0, 1]).is_err());
        assert!(Dataset::new(vec![1.0, f64::NAN], 2, vec![0]).is_err());
    }

    #[test]
    fn uniform_weights_sum_to_one() {
        let data = Dataset::new(vec![0.0, 1.0, 2.0, 3.0], 2, vec![0, 1]).unwrap();
        let total: f64 = data.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(data.group_count(), 2);
    }

    #[test]
    fn csv_roundtrip() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "x0, x1, y").unwrap();
        writeln!(file, "0.5, -1.25, 1").unwrap();
        writeln!(file, "2.0, 3.5, 0").unwrap();
        let data = load_csv(file.path(), "y").unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.dim(), 2);
        assert_eq!(data.feature_row(0), &[0.5, -1.25]);
        assert_eq!(data.label(1), 0);
    }

    #[test]
    fn csv_errors_are_distinct() {
        let write = |content: &str| {
            let mut file = tempfile::NamedTempFile::new().unwrap();
            write!(file, "{content}").unwrap();
            file
        };

        let empty = write("");
        let err = load_csv(empty.path(), "y").unwrap_err().to_string();
        assert!(err.contains("empty"), "unexpected: {err}");

        let ragged = write("a,b,y\n1,2,0\n1,2\n");
        let err = load_csv(ragged.path(), "y").unwrap_err().to_string();
        assert!(err.contains("cells"), "unexpected: {err}");

        let non_numeric = write("a,b,y\n1,oops,0\n");
        let err = load_csv(non_numeric.path(), "y").unwrap_err().to_string();
        assert!(err.contains("not numeric"), "unexpected: {err}");

        let bad_label = write("a,b,y\n1,2,0.5\n");
        let err = load_csv(bad_label.path(), "y").unwrap_err().to_string();
        assert!(err.contains("not an integer"), "unexpected: {err}");

        let no_label = write("a,b\n1,2\n");
        let err = load_csv(no_label.path(), "y").unwrap_err().to_string();
        assert!(err.contains("label column"), "unexpected: {err}");

        let header_only = write("a,b,y\n");
        let err = load_csv(header_only.path(), "y").unwrap_err().to_string();
        assert!(err.contains("no data rows"), "unexpected: {err}");
    }

    #[test]
    fn generator_counts_follow_ratios() {
        let data = gen_imbalanced(3, &[1.0, 0.5, 0.25], 100, 4, 3.0, 7).unwrap();
        assert_eq!(data.len(), 100 + 50 + 25);
        let count = |c: i64| data.labels().iter().filter(|&&l| l == c).count();
        assert_eq!(count(0), 100);
        assert_eq!(count(1), 50);
        assert_eq!(count(2), 25);
        assert_eq!(data.dim(), 4);
    }

    #[test]
    fn generator_is_deterministic_in_the_seed() {
        let a = gen_imbalanced(2, &[1.0, 0.3], 50, 3, 2.0, 11).unwrap();
        let b = gen_imbalanced(2, &[1.0, 0.3], 50, 3, 2.0, 11).unwrap();
        let c = gen_imbalanced(2, &[1.0, 0.3], 50, 3, 2.0, 12).unwrap();
        assert_eq!(a.feature_row(7), b.feature_row(7));
        assert_ne!(a.feature_row(7), c.feature_row(7));
    }

    /// Two well-separated classes must be linearly separable to 99%+ by the
    /// simplest mean-difference classifier.
    #[test]
    fn wide_separation_is_linearly_classifiable() {
        let data = gen_imbalanced(2, &[1.0, 1.0], 500, 2, 10.0, 3).unwrap();
        let mut means = [[0.0; 2]; 2];
        let mut counts = [0usize; 2];
        for i in 0..data.len() {
            let c = data.label(i) as usize;
            counts[c] += 1;
            means[c][0] += data.feature_row(i)[0];
            means[c][1] += data.feature_row(i)[1];
        }
        for c in 0..2 {
            means[c][0] /= counts[c] as f64;
            means[c][1] /= counts[c] as f64;
        }
        let w = [means[1][0] - means[0][0], means[1][1] - means[0][1]];
        let mid = [
            0.5 * (means[1][0] + means[0][0]),
            0.5 * (means[1][1] + means[0][1]),
        ];
        let mut correct = 0;
        for i in 0..data.len() {
            let row = data.feature_row(i);
            let score = w[0] * (row[0] - mid[0]) + w[1] * (row[1] - mid[1]);
            let predicted = if score > 0.0 { 1 } else { 0 };
            if predicted == data.label(i) {
                correct += 1;
            }
        }
        let accuracy = correct as f64 / data.len() as f64;
        assert!(accuracy >= 0.99, "accuracy only {accuracy}");
    }

    #[test]
    fn batch_sampling_is_uniform() {
        // Chi-squared goodness of fit over 10 atoms, 1e5 draws. The 0.999
        // critical value for 9 degrees of freedom is 27.877.
        let data = Dataset::new((0..10).map(|i| i as f64).collect(), 1, vec![0; 10]).unwrap();
        let mut rng = RngStreams::new(42).x_batch();
        let draws = 100_000;
        let mut counts = [0usize; 10];
        for idx in data.sample_batch(draws, &mut rng) {
            counts[idx] += 1;
        }
        let expected = draws as f64 / 10.0;
        let stat: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(stat < 27.877, "chi-squared statistic {stat} rejects uniformity");
    }

    #[test]
    fn streams_are_independent() {
        let streams = RngStreams::new(5);
        let mut x1 = streams.x_batch();
        let a: u64 = x1.random();
        // Consuming the z stream must not shift the x stream.
        let mut z = streams.z_batch();
        let _: [u64; 32] = std::array::from_fn(|_| z.random());
        let mut x2 = streams.x_batch();
        let b: u64 = x2.random();
        assert_eq!(a, b);
        let z_first: u64 = streams.z_batch().random();
        assert_ne!(a, z_first, "streams must differ");
    }
}
