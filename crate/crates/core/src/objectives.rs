//! The ensemble-risk objective over a matrix of per-source proxy scores, and
//! its exact gradient with respect to the mixture weights.
//!
//! For the cross-entropy kinds the matrix stores natural-log scores
//! `ln f_p(x_i)` and the mixture is formed in log space. For `Mse` it stores
//! raw predictions and scalar targets.
//!
//! Accumulation is sequential in row order, so results are bit-reproducible.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simplex::{GradientVector, MixtureWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `-ln f(x)`: generative modelling, score is the log-mass of the sample.
    CeUnconditional,
    /// `-ln f_y(x)`: score is the log-probability of the true label.
    CeConditional,
    /// `(f(x) - y)^2` with scalar targets.
    Mse,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::CeUnconditional => "ce_unconditional",
            LossKind::CeConditional => "ce_conditional",
            LossKind::Mse => "mse",
        }
    }

    pub fn is_ce(self) -> bool {
        !matches!(self, LossKind::Mse)
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `N` target samples by `P` sources of proxy scores.
///
/// Rows are equally weighted unless explicit row weights are attached (used
/// for exact expectations over a finite alphabet).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    loss_kind: LossKind,
    scores: Vec<f64>,
    targets: Option<Vec<f64>>,
    sample_ids: Vec<String>,
    source_ids: Vec<String>,
    row_weights: Option<Vec<f64>>,
}

impl PredictionMatrix {
    /// `scores` is row-major, `sample_ids.len()` rows by `source_ids.len()`
    /// columns.
    pub fn new(
        loss_kind: LossKind,
        scores: Vec<f64>,
        targets: Option<Vec<f64>>,
        sample_ids: Vec<String>,
        source_ids: Vec<String>,
    ) -> Result<Self> {
        let n = sample_ids.len();
        let p = source_ids.len();
        if p == 0 {
            return Err(Error::NoSources);
        }
        if n == 0 {
            return Err(Error::NoSamples);
        }
        if scores.len() != n * p {
            return Err(Error::LengthMismatch {
                what: "scores",
                expected: n * p,
                found: scores.len(),
            });
        }
        let mut seen = HashSet::new();
        for id in &source_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateSource(id.clone()));
            }
        }
        let mut seen = HashSet::new();
        for id in &sample_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid(format!("duplicate sample id `{id}`")));
            }
        }
        if let Some(index) = scores.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "scores",
                index,
            });
        }
        if loss_kind == LossKind::CeConditional {
            if let Some(index) = scores.iter().position(|&v| v > 0.0) {
                return Err(Error::invalid(format!(
                    "conditional CE log-probability must be <= 0, got {} for sample `{}`, source `{}`",
                    scores[index],
                    sample_ids[index / p],
                    source_ids[index % p]
                )));
            }
        }
        match (loss_kind, &targets) {
            (LossKind::Mse, None) => return Err(Error::MissingTargets),
            (LossKind::Mse, Some(y)) => {
                if y.len() != n {
                    return Err(Error::LengthMismatch {
                        what: "targets",
                        expected: n,
                        found: y.len(),
                    });
                }
                if let Some(index) = y.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        what: "targets",
                        index,
                    });
                }
            }
            (_, Some(_)) => {
                return Err(Error::invalid("targets are only used by the mse loss"));
            }
            (_, None) => {}
        }
        Ok(Self {
            loss_kind,
            scores,
            targets,
            sample_ids,
            source_ids,
            row_weights: None,
        })
    }

    /// Attaches nonnegative row weights; they are normalized to sum to one.
    /// Zero-weight rows are skipped entirely during evaluation.
    pub fn with_row_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.n_samples() {
            return Err(Error::LengthMismatch {
                what: "row weights",
                expected: self.n_samples(),
                found: weights.len(),
            });
        }
        if let Some(index) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid(format!(
                "row weight {} at row {index} must be finite and >= 0",
                weights[index]
            )));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("row weights must have positive total"));
        }
        self.row_weights = Some(weights.into_iter().map(|w| w / total).collect());
        Ok(self)
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss_kind
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn n_sources(&self) -> usize {
        self.source_ids.len()
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn source_ids(&self) -> &[String] {
        &self.source_ids
    }

    pub fn targets(&self) -> Option<&[f64]> {
        self.targets.as_deref()
    }

    pub fn row_weights(&self) -> Option<&[f64]> {
        self.row_weights.as_deref()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_sources();
        &self.scores[i * p..(i + 1) * p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.scores.chunks_exact(self.n_sources())
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::NoSamples);
        }
        let p = self.n_sources();
        let mut scores = Vec::with_capacity(rows.len() * p);
        let mut sample_ids = Vec::with_capacity(rows.len());
        for &i in rows {
            if i >= self.n_samples() {
                return Err(Error::invalid(format!("row {i} out of range")));
            }
            scores.extend_from_slice(self.row(i));
            sample_ids.push(self.sample_ids[i].clone());
        }
        let targets = self
            .targets
            .as_ref()
            .map(|y| rows.iter().map(|&i| y[i]).collect());
        let m = PredictionMatrix::new(
            self.loss_kind,
            scores,
            targets,
            sample_ids,
            self.source_ids.clone(),
        )?;
        match &self.row_weights {
            Some(w) => m.with_row_weights(rows.iter().map(|&i| w[i]).collect()),
            None => Ok(m),
        }
    }

    fn check_weights(&self, weights: &MixtureWeights) -> Result<()> {
        if weights.len() != self.n_sources() {
            return Err(Error::LengthMismatch {
                what: "mixture weights",
                expected: self.n_sources(),
                found: weights.len(),
            });
        }
        Ok(())
    }

    // (row index, row weight) for every row that takes part in the average.
    fn weighted_rows(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        let uniform = 1.0 / self.n_samples() as f64;
        (0..self.n_samples()).filter_map(move |i| {
            let w = self.row_weights.as_ref().map_or(uniform, |ws| ws[i]);
            (w > 0.0).then_some((i, w))
        })
    }
}

/// `ln sum_p w_p exp(s_p)` by shifted log-sum-exp. Sources with zero weight
/// are skipped, so their scores may be anything (including `-inf`).
pub fn mix_log_scores(log_row: &[f64], weights: &MixtureWeights) -> Result<f64> {
    if log_row.len() != weights.len() {
        return Err(Error::LengthMismatch {
            what: "score row",
            expected: weights.len(),
            found: log_row.len(),
        });
    }
    mix_log_row(log_row, weights.values()).ok_or_else(|| Error::ZeroProbability {
        sample_id: "<row>".to_string(),
    })
}

fn mix_log_row(row: &[f64], w: &[f64]) -> Option<f64> {
    let mut shift = f64::NEG_INFINITY;
    for (&s, &wp) in row.iter().zip(w) {
        if wp > 0.0 && s > shift {
            shift = s;
        }
    }
    if shift == f64::NEG_INFINITY {
        return None;
    }
    let mut acc = 0.0;
    for (&s, &wp) in row.iter().zip(w) {
        if wp > 0.0 {
            acc += wp * (s - shift).exp();
        }
    }
    let out = shift + acc.ln();
    (out > f64::NEG_INFINITY).then_some(out)
}

/// Mean cross-entropy of the weighted ensemble, in nats.
pub fn ce_objective(m: &PredictionMatrix, weights: &MixtureWeights) -> Result<f64> {
    ce_eval(m, weights, false).map(|(v, _)| v)
}

/// `g_p = -mean_i f_p(x_i) / f_w(x_i)`.
pub fn ce_gradient(m: &PredictionMatrix, weights: &MixtureWeights) -> Result<GradientVector> {
    let (_, g) = ce_eval(m, weights, true)?;
    GradientVector::new(g)
}

/// Mean squared error of the weighted ensemble prediction.
pub fn mse_objective(m: &PredictionMatrix, weights: &MixtureWeights) -> Result<f64> {
    mse_eval(m, weights, false).map(|(v, _)| v)
}

/// `g_p = 2 mean_i (f_w(x_i) - y_i) f_p(x_i)`.
pub fn mse_gradient(m: &PredictionMatrix, weights: &MixtureWeights) -> Result<GradientVector> {
    let (_, g) = mse_eval(m, weights, true)?;
    GradientVector::new(g)
}

/// Objective for whichever loss the matrix carries.
pub fn objective(m: &PredictionMatrix, weights: &MixtureWeights) -> Result<f64> {
    if m.loss_kind.is_ce() {
        ce_objective(m, weights)
    } else {
        mse_objective(m, weights)
    }
}

/// Objective and gradient in one pass over the rows.
pub fn objective_and_gradient(
    m: &PredictionMatrix,
    weights: &MixtureWeights,
) -> Result<(f64, GradientVector)> {
    let (v, g) = if m.loss_kind.is_ce() {
        ce_eval(m, weights, true)?
    } else {
        mse_eval(m, weights, true)?
    };
    Ok((v, GradientVector::new(g)?))
}

fn ce_eval(m: &PredictionMatrix, weights: &MixtureWeights, want_grad: bool) -> Result<(f64, Vec<f64>)> {
    if !m.loss_kind.is_ce() {
        return Err(Error::WrongLossKind {
            expected: "ce_unconditional or ce_conditional",
            found: m.loss_kind.as_str(),
        });
    }
    m.check_weights(weights)?;
    let w = weights.values();
    let p = m.n_sources();
    let mut loss = 0.0;
    let mut grad = vec![0.0; if want_grad { p } else { 0 }];
    for (i, rw) in m.weighted_rows() {
        let row = m.row(i);
        let mixed = mix_log_row(row, w).ok_or_else(|| Error::ZeroProbability {
            sample_id: m.sample_ids[i].clone(),
        })?;
        loss -= rw * mixed;
        if want_grad {
            for (gp, &s) in grad.iter_mut().zip(row) {
                *gp -= rw * (s - mixed).exp();
            }
        }
    }
    Ok((loss, grad))
}

fn mse_eval(m: &PredictionMatrix, weights: &MixtureWeights, want_grad: bool) -> Result<(f64, Vec<f64>)> {
    if m.loss_kind != LossKind::Mse {
        return Err(Error::WrongLossKind {
            expected: "mse",
            found: m.loss_kind.as_str(),
        });
    }
    let y = m.targets.as_ref().ok_or(Error::MissingTargets)?;
    m.check_weights(weights)?;
    let w = weights.values();
    let p = m.n_sources();
    let mut loss = 0.0;
    let mut grad = vec![0.0; if want_grad { p } else { 0 }];
    for (i, rw) in m.weighted_rows() {
        let row = m.row(i);
        let pred: f64 = row.iter().zip(w).map(|(f, wp)| f * wp).sum();
        let resid = pred - y[i];
        loss += rw * resid * resid;
        if want_grad {
            for (gp, &f) in grad.iter_mut().zip(row) {
                *gp += 2.0 * rw * resid * f;
            }
        }
    }
    Ok((loss, grad))
}
