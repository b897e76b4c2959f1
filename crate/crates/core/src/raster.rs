//! Raster value types: images, label maps, per-pixel class distributions and
//! binary masks. All layouts are row-major `H x W (x depth)`.

use crate::error::{Error, Result};

/// Reserved label value excluded from every loss and metric.
pub const IGNORE: u8 = 255;

/// Tolerance on the per-pixel simplex sum of a [`ProbMap`].
pub const SIMPLEX_TOLERANCE: f64 = 1e-5;

/// An `H x W x channels` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegImage {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl SegImage {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidInput(format!(
                "image dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "image {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::InvalidInput(format!(
                "image value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds an image by clamping every value into `[0, 1]`. Non-finite values become 0.
    pub fn from_clamped(height: usize, width: usize, channels: usize, mut data: Vec<f64>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        }
        Self::new(height, width, channels, data)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// An `H x W` map of class ids, with [`IGNORE`] marking unlabeled pixels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "label map {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Self {
        Self {
            height,
            width,
            data: vec![label; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn contains_ignore(&self) -> bool {
        self.data.contains(&IGNORE)
    }

    /// Checks every value is a class id below `num_classes` or [`IGNORE`].
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self
            .data
            .iter()
            .find(|&&l| l != IGNORE && l as usize >= num_classes)
        {
            Some(&label) => Err(Error::InvalidLabel { label, num_classes }),
            None => Ok(()),
        }
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }
}

/// Per-pixel class distribution, `H x W x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    height: usize,
    width: usize,
    num_classes: usize,
    data: Vec<f64>,
}

impl ProbMap {
    /// Validates the simplex invariant. Rows that are entirely zero are rejected.
    pub fn new(height: usize, width: usize, num_classes: usize, data: Vec<f64>) -> Result<Self> {
        let map = Self::unchecked(height, width, num_classes, data)?;
        for (px, row) in map.data.chunks_exact(num_classes).enumerate() {
            if row.iter().any(|p| !(p.is_finite() && (0.0..=1.0).contains(p))) {
                return Err(Error::InvalidInput(format!(
                    "pixel {px}: probability outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
                return Err(Error::InvalidInput(format!(
                    "pixel {px}: probabilities sum to {sum}"
                )));
            }
        }
        Ok(map)
    }

    /// Shape-checked constructor that skips the simplex check. Used for one-hot
    /// maps, whose ignored rows are all zero.
    pub(crate) fn unchecked(height: usize, width: usize, num_classes: usize, data: Vec<f64>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidInput("num_classes must be positive".into()));
        }
        if data.len() != height * width * num_classes {
            return Err(Error::ShapeMismatch(format!(
                "prob map {height}x{width}x{num_classes} needs {} values, got {}",
                height * width * num_classes,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            num_classes,
            data,
        })
    }

    /// Per-pixel softmax of an `H x W x C` logit field.
    pub fn softmax(height: usize, width: usize, num_classes: usize, mut logits: Vec<f64>) -> Result<Self> {
        if num_classes == 0 || logits.len() != height * width * num_classes {
            return Err(Error::ShapeMismatch(format!(
                "logit field of length {} is not {height}x{width}x{num_classes}",
                logits.len()
            )));
        }
        for row in logits.chunks_exact_mut(num_classes) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        Ok(Self {
            height,
            width,
            num_classes,
            data: logits,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.num_classes;
        &self.data[start..start + self.num_classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.num_classes)
    }
}

/// Binary `H x W` mixing mask: 1 selects the first image, 0 the second.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl MixMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "mask {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidInput(format!("mask value {v} is not 0 or 1")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            data: vec![u8::from(value); height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col] == 1
    }

    /// `1 - M`.
    pub fn complement(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| 1 - v).collect(),
        }
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }
}

/// Upstream gradient with respect to the pre-softmax logits, `H x W x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitGrad {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub data: Vec<f64>,
}

impl LogitGrad {
    pub fn zeros(height: usize, width: usize, num_classes: usize) -> Self {
        Self {
            height,
            width,
            num_classes,
            data: vec![0.0; height * width * num_classes],
        }
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        for v in &mut self.data {
            *v *= factor;
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_out_of_range() {
        assert!(SegImage::new(1, 1, 1, vec![1.5]).is_err());
        assert!(SegImage::new(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(SegImage::new(0, 1, 1, vec![]).is_err());
        assert!(SegImage::new(1, 2, 1, vec![0.5]).is_err());
        assert!(SegImage::new(1, 1, 1, vec![1.0]).is_ok());
    }

    #[test]
    fn prob_map_checks_simplex() {
        assert!(ProbMap::new(1, 1, 2, vec![0.5, 0.5]).is_ok());
        assert!(ProbMap::new(1, 1, 2, vec![0.5, 0.4]).is_err());
        assert!(ProbMap::new(1, 1, 2, vec![1.2, -0.2]).is_err());
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let p = ProbMap::softmax(2, 3, 4, vec![0.0; 24]).unwrap();
        assert!(p.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let p = ProbMap::softmax(1, 1, 2, vec![1000.0, 999.0]).unwrap();
        let e = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((p.data()[0] - e).abs() < 1e-12);
    }

    #[test]
    fn mask_rejects_non_binary() {
        assert!(MixMask::new(1, 2, vec![0, 2]).is_err());
        let m = MixMask::new(1, 2, vec![0, 1]).unwrap();
        assert_eq!(m.complement().data(), &[1, 0]);
    }

    #[test]
    fn label_validation() {
        let l = LabelMap::new(1, 3, vec![0, IGNORE, 4]).unwrap();
        assert!(l.validate(5).is_ok());
        assert!(matches!(
            l.validate(4),
            Err(Error::InvalidLabel { label: 4, num_classes: 4 })
        ));
    }
}
