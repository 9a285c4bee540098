//! Class-balanced cross-entropy and its output-layer gradient.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Scores are clamped to `[SCORE_EPS, 1 - SCORE_EPS]` before logarithms.
pub const SCORE_EPS: f64 = 1e-12;

fn clamp_score(s: f64) -> f64 {
    s.clamp(SCORE_EPS, 1.0 - SCORE_EPS)
}

fn check_binary(labels: &Array1<f64>) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::Shape("label vector is empty".into()));
    }
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::Shape("labels must be 0 or 1".into()));
    }
    Ok(())
}

/// Fraction of the sample belonging to the dominant (negative) class:
/// `beta = 1 - mean(labels)`.
pub fn beta_of(labels: &Array1<f64>) -> Result<f64> {
    check_binary(labels)?;
    Ok(1.0 - labels.sum() / labels.len() as f64)
}

/// Mean over the batch of `-[beta * y * ln(s) + (1 - beta) * (1 - y) * ln(1 - s)]`.
pub fn balanced_ce(scores: &Array1<f64>, labels: &Array1<f64>, beta: f64) -> Result<f64> {
    check_binary(labels)?;
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (&s, &y) in scores.iter().zip(labels.iter()) {
        let s = clamp_score(s);
        total -= beta * y * s.ln() + (1.0 - beta) * (1.0 - y) * (1.0 - s).ln();
    }
    Ok(total / labels.len() as f64)
}

/// Per-sample loss weighting: coefficient `alpha` on the positive term and
/// `nu` on the negative term, summed and divided by `normalizer`.
///
/// Balanced cross-entropy is `alpha = beta`, `nu = 1 - beta` for every
/// sample; the domain discriminator uses `alpha = nu = class weight`; rows
/// excluded from a loss get both coefficients zero.
#[derive(Debug, Clone)]
pub struct LossSpec {
    pub labels: Array1<f64>,
    pub alpha: Array1<f64>,
    pub nu: Array1<f64>,
    pub normalizer: f64,
}

impl LossSpec {
    pub fn balanced(beta: f64, labels: &Array1<f64>) -> Result<Self> {
        check_binary(labels)?;
        let n = labels.len();
        Ok(LossSpec {
            labels: labels.clone(),
            alpha: Array1::from_elem(n, beta),
            nu: Array1::from_elem(n, 1.0 - beta),
            normalizer: n as f64,
        })
    }

    /// Same weight on both terms of each sample, e.g. per-domain class
    /// weights for the discriminator.
    pub fn per_sample(weights: Array1<f64>, labels: &Array1<f64>) -> Result<Self> {
        check_binary(labels)?;
        if weights.len() != labels.len() {
            return Err(Error::Shape("weight/label length mismatch".into()));
        }
        let n = labels.len();
        Ok(LossSpec {
            labels: labels.clone(),
            alpha: weights.clone(),
            nu: weights,
            normalizer: n as f64,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Loss value for a column of scores.
    pub fn loss(&self, scores: &Array2<f64>) -> f64 {
        let mut total = 0.0;
        for (i, &y) in self.labels.iter().enumerate() {
            let s = clamp_score(scores[(i, 0)]);
            total -= self.alpha[i] * y * s.ln() + self.nu[i] * (1.0 - y) * (1.0 - s).ln();
        }
        total / self.normalizer
    }

    /// Gradient of [`Self::loss`] with respect to the sigmoid pre-activation.
    pub fn output_delta(&self, scores: &Array2<f64>) -> Array2<f64> {
        let mut delta = Array2::zeros(scores.raw_dim());
        for (i, &y) in self.labels.iter().enumerate() {
            let s = clamp_score(scores[(i, 0)]);
            delta[(i, 0)] =
                (-self.alpha[i] * y * (1.0 - s) + self.nu[i] * (1.0 - y) * s) / self.normalizer;
        }
        delta
    }
}
