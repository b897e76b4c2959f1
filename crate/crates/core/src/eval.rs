//! Confusion matrices and intersection-over-union scoring.

use crate::error::{Error, Result};
use crate::model::SegNetwork;
use crate::pseudo::argmax_label;
use crate::raster::{LabelMap, SegImage, IGNORE};

/// `C x C` pixel counts; rows are ground truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_counts(num_classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != num_classes * num_classes {
            return Err(Error::ShapeMismatch(format!(
                "{} counts for {num_classes} classes",
                counts.len()
            )));
        }
        Ok(Self {
            num_classes,
            counts,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one prediction / ground-truth pair. Ground-truth [`IGNORE`] pixels are skipped.
    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if pred.height() != gt.height() || pred.width() != gt.width() {
            return Err(Error::ShapeMismatch(format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        if pred.contains_ignore() {
            return Err(Error::InvalidInput("prediction contains IGNORE".into()));
        }
        pred.validate(self.num_classes)?;
        gt.validate(self.num_classes)?;
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            if g != IGNORE {
                self.counts[g as usize * self.num_classes + p as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::ShapeMismatch(format!(
                "cannot merge {}-class and {}-class matrices",
                self.num_classes, other.num_classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// `TP / (TP + FP + FN)` per class; `None` when the class is absent from
    /// both ground truth and prediction.
    pub fn iou_per_class(&self) -> Vec<Option<f64>> {
        let c = self.num_classes;
        (0..c)
            .map(|k| {
                let tp = self.get(k, k);
                let row: u64 = (0..c).map(|j| self.get(k, j)).sum();
                let col: u64 = (0..c).map(|i| self.get(i, k)).sum();
                let denom = row + col - tp;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }

    /// Mean of the defined IoUs within `subset`.
    pub fn mean_iou(&self, subset: &[usize]) -> Result<f64> {
        if let Some(&bad) = subset.iter().find(|&&k| k >= self.num_classes) {
            return Err(Error::InvalidInput(format!(
                "class {bad} outside 0..{}",
                self.num_classes
            )));
        }
        let ious = self.iou_per_class();
        let defined: Vec<f64> = subset.iter().filter_map(|&k| ious[k]).collect();
        if defined.is_empty() {
            return Err(Error::DegenerateEval(subset.to_vec()));
        }
        Ok(defined.iter().sum::<f64>() / defined.len() as f64)
    }

    /// Mean over all classes.
    pub fn mean_iou_all(&self) -> Result<f64> {
        let all: Vec<usize> = (0..self.num_classes).collect();
        self.mean_iou(&all)
    }
}

/// Scores `net` on a set of image / ground-truth pairs.
pub fn evaluate<'a, I>(net: &SegNetwork, items: I) -> Result<ConfusionMatrix>
where
    I: IntoIterator<Item = (&'a SegImage, &'a LabelMap)>,
{
    let mut cm = ConfusionMatrix::new(net.config().num_classes);
    for (image, gt) in items {
        let pred = argmax_label(&net.predict(image)?);
        cm.accumulate(&pred, gt)?;
    }
    Ok(cm)
}
