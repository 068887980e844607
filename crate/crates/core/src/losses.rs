//! Bounded loss models with certified smoothness constants.
//!
//! The robust objective needs three numbers from a loss: a range bound `B`
//! with `0 <= loss <= B`, a gradient bound `G`, and a gradient Lipschitz
//! constant `L`. For the squashed logistic model all three follow in closed
//! form from the data's feature norms. For the small MLP they are estimated
//! by sampling and inflated by a safety factor, and the constants carry an
//! `empirical` flag so downstream theory-mode planning can warn that its
//! guarantees are only as good as the estimate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numeric::{axpy, dot, norm};

/// Range, gradient, and curvature bounds for a loss model.
///
/// Valid on the ball `|x| <= radius`; `radius` is infinite when the bounds
/// hold globally. `empirical` marks sampled (rather than proved) constants.
#[derive(Debug, Clone, Copy)]
pub struct LossConstants {
    /// Uniform range bound: `0 <= loss <= b`.
    pub b: f64,
    /// Gradient norm bound.
    pub g: f64,
    /// Gradient Lipschitz constant.
    pub l: f64,
    /// Radius of validity for the bounds.
    pub radius: f64,
    /// True when the constants were estimated by sampling.
    pub empirical: bool,
}

/// A per-sample loss with gradients and certified constants.
///
/// Implementations read samples from a [`Dataset`] by index so solvers can
/// stream mini-batches without materializing per-sample views.
pub trait LossModel {
    /// Parameter dimension.
    fn dim(&self) -> usize;

    /// Loss of parameters `x` on sample `idx`.
    fn value(&self, x: &[f64], data: &Dataset, idx: usize) -> f64;

    /// Gradient with respect to `x`, written into `out`.
    fn grad(&self, x: &[f64], data: &Dataset, idx: usize, out: &mut [f64]);

    /// Whether the model's prediction on sample `idx` matches its label.
    fn correct(&self, x: &[f64], data: &Dataset, idx: usize) -> bool;

    /// Range/gradient/curvature bounds.
    fn constants(&self) -> LossConstants;

    /// Initial parameter vector. Defaults to zeros.
    fn init(&self, _rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![0.0; self.dim()]
    }
}

/// Largest value of `|sigma''|` for the logistic sigmoid, attained at
/// `sigma = (1 +- 1/sqrt(3)) / 2`.
const SIGMOID_CURVATURE_MAX: f64 = 0.09622504486493763; // 1 / (6 * sqrt(3))

#[inline]
fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Binary classification loss `B * sigmoid(-y * <a, x>)`.
///
/// Squashing the margin through a sigmoid keeps the loss in `[0, B]` no
/// matter how far `x` wanders, at the price of non-convexity in `x`: the
/// sigmoid is concave on half its range. Labels are mapped to the sign
/// convention `y = +1` for positive labels and `y = -1` otherwise.
#[derive(Debug, Clone)]
pub struct SquashedLogistic {
    dim: usize,
    scale: f64,
    max_feature_norm: f64,
}

impl SquashedLogistic {
    pub fn new(scale: f64, data: &Dataset) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::config(format!(
                "squashed logistic scale must be positive, got {scale}"
            )));
        }
        Ok(SquashedLogistic {
            dim: data.dim(),
            scale,
            max_feature_norm: data.max_feature_norm(),
        })
    }

    #[inline]
    fn label_sign(label: i64) -> f64 {
        if label > 0 {
            1.0
        } else {
            -1.0
        }
    }
}

impl LossModel for SquashedLogistic {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64], data: &Dataset, idx: usize) -> f64 {
        let y = Self::label_sign(data.label(idx));
        self.scale * sigmoid(-y * dot(data.feature_row(idx), x))
    }

    fn grad(&self, x: &[f64], data: &Dataset, idx: usize, out: &mut [f64]) {
        let row = data.feature_row(idx);
        let y = Self::label_sign(data.label(idx));
        let s = sigmoid(-y * dot(row, x));
        let coeff = -self.scale * y * s * (1.0 - s);
        for (o, a) in out.iter_mut().zip(row) {
            *o = coeff * a;
        }
    }

    fn correct(&self, x: &[f64], data: &Dataset, idx: usize) -> bool {
        let margin = dot(data.feature_row(idx), x);
        let y = Self::label_sign(data.label(idx));
        y * margin > 0.0
    }

    fn constants(&self) -> LossConstants {
        let a = self.max_feature_norm;
        LossConstants {
            b: self.scale,
            // |sigma'| <= 1/4 and |sigma''| <= 1/(6*sqrt(3)), both global.
            g: self.scale * a / 4.0,
            l: self.scale * a * a * SIGMOID_CURVATURE_MAX,
            radius: f64::INFINITY,
            empirical: false,
        }
    }
}

/// One-hidden-layer tanh network with softmax output.
///
/// The loss is `B * (1 - p_label)`, which stays in `[0, B]` by
/// construction. Parameters are the flattened `[W1 | b1 | W2 | b2]` with
/// `W1: hidden x input` and `W2: classes x hidden`, both row-major.
///
/// No closed-form gradient bounds exist for this model, so `G` and `L` are
/// sampled suprema over the declared parameter ball, inflated by 1.5; the
/// constants carry `empirical = true`.
#[derive(Debug, Clone)]
pub struct TinyMlp {
    input: usize,
    hidden: usize,
    classes: usize,
    scale: f64,
    constants: LossConstants,
}

impl TinyMlp {
    /// Builds the model and estimates its constants on `data`.
    ///
    /// `radius` bounds the parameter ball the constants are certified on;
    /// `seed` fixes the estimation draws.
    pub fn new(
        hidden: usize,
        classes: usize,
        scale: f64,
        radius: f64,
        data: &Dataset,
        seed: u64,
    ) -> Result<Self> {
        if hidden == 0 || hidden > 32 {
            return Err(Error::config(format!(
                "hidden width must be in 1..=32, got {hidden}"
            )));
        }
        if classes < 2 {
            return Err(Error::config(format!(
                "need at least 2 classes, got {classes}"
            )));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::config(format!("scale must be positive, got {scale}")));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::config(format!(
                "parameter radius must be positive and finite, got {radius}"
            )));
        }
        for i in 0..data.len() {
            let label = data.label(i);
            if label < 0 || label as usize >= classes {
                return Err(Error::config(format!(
                    "sample {i} has label {label}, outside 0..{classes}"
                )));
            }
        }
        let mut model = TinyMlp {
            input: data.dim(),
            hidden,
            classes,
            scale,
            constants: LossConstants {
                b: scale,
                g: 0.0,
                l: 0.0,
                radius,
                empirical: true,
            },
        };
        let (g, l) = model.estimate_bounds(data, radius, seed);
        model.constants.g = g;
        model.constants.l = l;
        Ok(model)
    }

    fn param_count(&self) -> usize {
        self.hidden * self.input + self.hidden + self.classes * self.hidden + self.classes
    }

    /// Forward pass; fills `act` (hidden activations) and `probs`.
    fn forward(&self, x: &[f64], row: &[f64], act: &mut [f64], probs: &mut [f64]) {
        let (w1, b1, w2, b2) = self.split(x);
        for h in 0..self.hidden {
            let pre = dot(&w1[h * self.input..(h + 1) * self.input], row) + b1[h];
            act[h] = pre.tanh();
        }
        let mut max_logit = f64::NEG_INFINITY;
        for c in 0..self.classes {
            let logit = dot(&w2[c * self.hidden..(c + 1) * self.hidden], act) + b2[c];
            probs[c] = logit;
            max_logit = max_logit.max(logit);
        }
        let mut total = 0.0;
        for p in probs.iter_mut() {
            *p = (*p - max_logit).exp();
            total += *p;
        }
        for p in probs.iter_mut() {
            *p /= total;
        }
    }

    fn split<'a>(&self, x: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64], &'a [f64]) {
        let n1 = self.hidden * self.input;
        let n2 = n1 + self.hidden;
        let n3 = n2 + self.classes * self.hidden;
        (&x[..n1], &x[n1..n2], &x[n2..n3], &x[n3..])
    }

    fn estimate_bounds(&self, data: &Dataset, radius: f64, seed: u64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = self.param_count();
        let samples: Vec<usize> = (0..data.len().min(48)).collect();
        let mut g_max: f64 = 0.0;
        let mut l_max: f64 = 0.0;
        let mut grad_a = vec![0.0; dim];
        let mut grad_b = vec![0.0; dim];
        for trial in 0..160 {
            // Bias half the draws to the shell, where norms peak.
            let target = if trial % 2 == 0 {
                radius
            } else {
                radius * rng.random::<f64>()
            };
            let mut x: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let scale = target / norm(&x).max(1e-12);
            x.iter_mut().for_each(|v| *v *= scale);
            let step = 1e-3 * radius.min(1.0);
            let mut x2 = x.clone();
            let coord_count = 3.min(dim);
            for _ in 0..coord_count {
                let j = rng.random_range(0..dim);
                x2[j] += step * (rng.random::<f64>() - 0.5);
            }
            let dx = {
                let mut d = 0.0;
                for j in 0..dim {
                    let diff = x2[j] - x[j];
                    d += diff * diff;
                }
                d.sqrt()
            };
            for &idx in &samples {
                self.grad(&x, data, idx, &mut grad_a);
                g_max = g_max.max(norm(&grad_a));
                if dx > 0.0 {
                    self.grad(&x2, data, idx, &mut grad_b);
                    let mut diff = 0.0;
                    for j in 0..dim {
                        let d = grad_b[j] - grad_a[j];
                        diff += d * d;
                    }
                    l_max = l_max.max(diff.sqrt() / dx);
                }
            }
        }
        (1.5 * g_max, 1.5 * l_max)
    }
}

impl LossModel for TinyMlp {
    fn dim(&self) -> usize {
        self.param_count()
    }

    fn value(&self, x: &[f64], data: &Dataset, idx: usize) -> f64 {
        let mut act = vec![0.0; self.hidden];
        let mut probs = vec![0.0; self.classes];
        self.forward(x, data.feature_row(idx), &mut act, &mut probs);
        self.scale * (1.0 - probs[data.label(idx) as usize])
    }

    fn grad(&self, x: &[f64], data: &Dataset, idx: usize, out: &mut [f64]) {
        let row = data.feature_row(idx);
        let label = data.label(idx) as usize;
        let mut act = vec![0.0; self.hidden];
        let mut probs = vec![0.0; self.classes];
        self.forward(x, row, &mut act, &mut probs);

        // d loss / d logit_c = B * p_label * (p_c - [c == label])
        let p_y = probs[label];
        let mut dlogits = probs.clone();
        dlogits[label] -= 1.0;
        dlogits.iter_mut().for_each(|d| *d *= self.scale * p_y);

        let (_, _, w2, _) = self.split(x);
        let n1 = self.hidden * self.input;
        let n2 = n1 + self.hidden;
        let n3 = n2 + self.classes * self.hidden;
        out.fill(0.0);
        // W2 and b2 blocks.
        for c in 0..self.classes {
            let d = dlogits[c];
            axpy(&mut out[n2 + c * self.hidden..n2 + (c + 1) * self.hidden], d, &act);
            out[n3 + c] = d;
        }
        // Backpropagate through tanh into W1 and b1.
        for h in 0..self.hidden {
            let mut dact = 0.0;
            for c in 0..self.classes {
                dact += dlogits[c] * w2[c * self.hidden + h];
            }
            let dpre = dact * (1.0 - act[h] * act[h]);
            axpy(&mut out[h * self.input..(h + 1) * self.input], dpre, row);
            out[n1 + h] = dpre;
        }
    }

    fn correct(&self, x: &[f64], data: &Dataset, idx: usize) -> bool {
        let mut act = vec![0.0; self.hidden];
        let mut probs = vec![0.0; self.classes];
        self.forward(x, data.feature_row(idx), &mut act, &mut probs);
        let mut best = 0;
        for c in 1..self.classes {
            if probs[c] > probs[best] {
                best = c;
            }
        }
        best as i64 == data.label(idx)
    }

    fn constants(&self) -> LossConstants {
        self.constants
    }

    fn init(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        // Small random init to break hidden-unit symmetry; zeros would pin
        // every hidden unit to the same trajectory.
        let spread = 0.3 / (self.input as f64).sqrt();
        (0..self.param_count())
            .map(|_| spread * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

/// Result of a finite-difference gradient audit.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst error `|analytic - fd| / (1 + |analytic|)` over all audited
    /// points, where the norms are Euclidean over the full gradient.
    pub max_rel_err: f64,
    /// Parameter point at which the worst error occurred.
    pub worst_point: Vec<f64>,
    /// Sample index at the worst point.
    pub worst_sample: usize,
    /// Coordinate with the largest single-entry discrepancy.
    pub worst_coord: usize,
    /// Analytic and finite-difference values at that coordinate.
    pub analytic: f64,
    pub finite_diff: f64,
}

/// Audits a loss model's gradient against central differences.
///
/// Draws `n_points` random parameter points (scaled to the model's declared
/// radius when finite), pairs each with a random sample, and compares the
/// full gradient against a central difference with step `step` per
/// coordinate.
pub fn finite_diff_check(
    model: &dyn LossModel,
    data: &Dataset,
    n_points: usize,
    step: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if n_points == 0 {
        return Err(Error::config("gradient audit needs at least one point"));
    }
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::config(format!("invalid audit step {step}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = model.dim();
    let radius = model.constants().radius;
    let spread = if radius.is_finite() {
        radius / (dim as f64).sqrt()
    } else {
        1.0
    };
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_point: vec![0.0; dim],
        worst_sample: 0,
        worst_coord: 0,
        analytic: 0.0,
        finite_diff: 0.0,
    };
    let mut analytic = vec![0.0; dim];
    let mut fd = vec![0.0; dim];
    for _ in 0..n_points {
        let mut x: Vec<f64> = (0..dim)
            .map(|_| spread * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let idx = rng.random_range(0..data.len());
        model.grad(&x, data, idx, &mut analytic);
        for j in 0..dim {
            let h = step * (1.0 + x[j].abs());
            let orig = x[j];
            x[j] = orig + h;
            let up = model.value(&x, data, idx);
            x[j] = orig - h;
            let down = model.value(&x, data, idx);
            x[j] = orig;
            fd[j] = (up - down) / (2.0 * h);
        }
        let mut diff_sq = 0.0;
        let mut worst_coord = 0;
        let mut worst_gap = -1.0;
        for j in 0..dim {
            let d = analytic[j] - fd[j];
            diff_sq += d * d;
            if d.abs() > worst_gap {
                worst_gap = d.abs();
                worst_coord = j;
            }
        }
        let rel = diff_sq.sqrt() / (1.0 + norm(&analytic));
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_point.copy_from_slice(&x);
            report.worst_sample = idx;
            report.worst_coord = worst_coord;
            report.analytic = analytic[worst_coord];
            report.finite_diff = fd[worst_coord];
        }
    }
    Ok(report)
}
