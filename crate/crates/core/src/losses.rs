//! Cross-entropy kernel shared by the supervised and consistency terms, and
//! the weighted combination of the three terms.

use crate::error::{Error, Result};
use crate::raster::{LabelMap, LogitGrad, ProbMap, IGNORE};

/// Lower bound applied to probabilities before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CeOutput {
    pub loss: f64,
    /// Gradient with respect to the pre-softmax logits.
    pub grad: LogitGrad,
    pub valid_pixels: usize,
}

/// Mean cross-entropy over non-[`IGNORE`] pixels.
///
/// The logit gradient is `(p - onehot) / V` on valid pixels and zero on ignored ones.
pub fn ce_loss(pred: &ProbMap, target: &LabelMap) -> Result<CeOutput> {
    if pred.height() != target.height() || pred.width() != target.width() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{} vs target {}x{}",
            pred.height(),
            pred.width(),
            target.height(),
            target.width()
        )));
    }
    let c = pred.num_classes();
    target.validate(c)?;
    let valid = target.data().iter().filter(|&&l| l != IGNORE).count();
    if valid == 0 {
        return Err(Error::DegenerateTarget);
    }
    let inv = 1.0 / valid as f64;
    let mut loss = 0.0;
    let mut grad = LogitGrad::zeros(pred.height(), pred.width(), c);
    for ((row, g), &label) in pred.rows().zip(grad.data.chunks_exact_mut(c)).zip(target.data()) {
        if label == IGNORE {
            continue;
        }
        loss -= row[label as usize].max(PROB_FLOOR).ln();
        for (gv, &p) in g.iter_mut().zip(row) {
            *gv = p * inv;
        }
        g[label as usize] -= inv;
    }
    Ok(CeOutput {
        loss: loss * inv,
        grad,
        valid_pixels: valid,
    })
}

/// `L_s + L_t + lambda * L_u`.
pub fn combined_loss(source: f64, target: f64, unlabeled: f64, lambda: f64) -> Result<f64> {
    for (name, v) in [("L_s", source), ("L_t", target), ("L_u", unlabeled), ("lambda", lambda)] {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("{name} is not finite ({v})")));
        }
    }
    Ok(source + target + lambda * unlabeled)
}

/// Per-step loss breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub source: f64,
    pub target: f64,
    pub unlabeled: f64,
    pub lambda: f64,
    pub total: f64,
    pub source_pixels: usize,
    pub target_pixels: usize,
    pub unlabeled_pixels: usize,
}

impl LossReport {
    /// Fills `total` from the three terms. Non-finite terms are still recorded
    /// so a failing step can be dumped, but the result is an error.
    pub fn finalize(mut self) -> Result<Self, (Self, Error)> {
        match combined_loss(self.source, self.target, self.unlabeled, self.lambda) {
            Ok(total) => {
                self.total = total;
                Ok(self)
            }
            Err(e) => {
                self.total = f64::NAN;
                Err((self, e))
            }
        }
    }
}

impl std::fmt::Display for LossReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "L_s={} ({} px) L_t={} ({} px) L_u={} ({} px) lambda={} total={}",
            self.source,
            self.source_pixels,
            self.target,
            self.target_pixels,
            self.unlabeled,
            self.unlabeled_pixels,
            self.lambda,
            self.total
        )
    }
}
