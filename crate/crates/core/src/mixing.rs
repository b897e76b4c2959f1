//! Category-level mask construction and mask-based mixing of images and labels.
//!
//! A mask is built from a predicted label map: half of the classes present
//! (rounded up) are drawn uniformly without replacement and the mask is 1
//! exactly on the pixels of the drawn classes. The block-wise variant applies
//! the same rule independently inside each of `p x p` blocks, consuming the
//! random stream in row-major block order.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::raster::{LabelMap, MixMask, SegImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixVariant {
    /// Whole-image class selection.
    ClassMix,
    /// Per-block class selection over a `p x p` grid.
    ComplexMix,
}

impl fmt::Display for MixVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MixVariant::ClassMix => "classmix",
            MixVariant::ComplexMix => "complexmix",
        })
    }
}

impl FromStr for MixVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classmix" => Ok(MixVariant::ClassMix),
            "complexmix" => Ok(MixVariant::ComplexMix),
            other => Err(Error::InvalidConfig(format!("unknown mix variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixConfig {
    pub variant: MixVariant,
    /// Blocks per side for [`MixVariant::ComplexMix`].
    pub block_count: usize,
    pub rng_seed: u64,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            variant: MixVariant::ClassMix,
            block_count: 2,
            rng_seed: 0,
        }
    }
}

impl MixConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_count == 0 {
            return Err(Error::InvalidConfig("mix.block_count must be >= 1".into()));
        }
        Ok(())
    }
}

fn check_prediction(pred: &LabelMap) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::InvalidInput("empty prediction map".into()));
    }
    if pred.contains_ignore() {
        return Err(Error::InvalidInput(
            "prediction used for mask construction contains IGNORE".into(),
        ));
    }
    Ok(())
}

/// Draws `ceil(|K| / 2)` of the given (sorted, distinct) classes.
fn select_classes<R: Rng + ?Sized>(present: &[u8], rng: &mut R) -> [bool; 256] {
    let take = present.len().div_ceil(2);
    let mut chosen = [false; 256];
    for i in index::sample(rng, present.len(), take) {
        chosen[present[i] as usize] = true;
    }
    chosen
}

fn classes_in(pred: &LabelMap, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Vec<u8> {
    let mut seen = [false; 256];
    for r in rows {
        for c in cols.clone() {
            seen[pred.get(r, c) as usize] = true;
        }
    }
    (0..=255u8).filter(|&c| seen[c as usize]).collect()
}

/// Row (or column) range of block `index` out of `count` along an axis of `len`.
pub fn block_bounds(len: usize, count: usize, index: usize) -> std::ops::Range<usize> {
    (index * len / count)..((index + 1) * len / count)
}

/// Whole-image mask from a predicted label map.
pub fn classmix_mask<R: Rng + ?Sized>(pred: &LabelMap, rng: &mut R) -> Result<MixMask> {
    check_prediction(pred)?;
    let present = classes_in(pred, 0..pred.height(), 0..pred.width());
    let chosen = select_classes(&present, rng);
    let data = pred.data().iter().map(|&l| u8::from(chosen[l as usize])).collect();
    MixMask::new(pred.height(), pred.width(), data)
}

/// Block-wise mask: the selection rule is applied independently inside each
/// block of a `p x p` grid with floor-based boundaries.
pub fn complexmix_mask<R: Rng + ?Sized>(pred: &LabelMap, cfg: &MixConfig, rng: &mut R) -> Result<MixMask> {
    check_prediction(pred)?;
    cfg.validate()?;
    let (h, w) = (pred.height(), pred.width());
    let p = cfg.block_count;
    if p > h.min(w) {
        return Err(Error::InvalidConfig(format!(
            "block count {p} exceeds image side min({h}, {w})"
        )));
    }
    let mut data = vec![0u8; h * w];
    for br in 0..p {
        let rows = block_bounds(h, p, br);
        for bc in 0..p {
            let cols = block_bounds(w, p, bc);
            let present = classes_in(pred, rows.clone(), cols.clone());
            let chosen = select_classes(&present, rng);
            for r in rows.clone() {
                for c in cols.clone() {
                    data[r * w + c] = u8::from(chosen[pred.get(r, c) as usize]);
                }
            }
        }
    }
    MixMask::new(h, w, data)
}

/// Dispatches on `cfg.variant`.
pub fn generate_mask<R: Rng + ?Sized>(pred: &LabelMap, cfg: &MixConfig, rng: &mut R) -> Result<MixMask> {
    match cfg.variant {
        MixVariant::ClassMix => classmix_mask(pred, rng),
        MixVariant::ComplexMix => complexmix_mask(pred, cfg, rng),
    }
}

/// `M * a + (1 - M) * b`, per pixel across all channels.
pub fn mix_images(a: &SegImage, b: &SegImage, mask: &MixMask) -> Result<SegImage> {
    if a.height() != b.height()
        || a.width() != b.width()
        || a.channels() != b.channels()
        || a.height() != mask.height()
        || a.width() != mask.width()
    {
        return Err(Error::InvalidInput(format!(
            "cannot mix {}x{}x{} with {}x{}x{} under a {}x{} mask",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels(),
            mask.height(),
            mask.width()
        )));
    }
    let ch = a.channels();
    let mut out = Vec::with_capacity(a.data().len());
    for ((pa, pb), &m) in a
        .data()
        .chunks_exact(ch)
        .zip(b.data().chunks_exact(ch))
        .zip(mask.data())
    {
        out.extend_from_slice(if m == 1 { pa } else { pb });
    }
    SegImage::new(a.height(), a.width(), ch, out)
}

/// Label counterpart of [`mix_images`]; [`IGNORE`](crate::raster::IGNORE) propagates from the selected side.
pub fn mix_labels(a: &LabelMap, b: &LabelMap, mask: &MixMask) -> Result<LabelMap> {
    if a.height() != b.height()
        || a.width() != b.width()
        || a.height() != mask.height()
        || a.width() != mask.width()
    {
        return Err(Error::InvalidInput(format!(
            "cannot mix label maps {}x{} and {}x{} under a {}x{} mask",
            a.height(),
            a.width(),
            b.height(),
            b.width(),
            mask.height(),
            mask.width()
        )));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .zip(mask.data())
        .map(|((&la, &lb), &m)| if m == 1 { la } else { lb })
        .collect();
    LabelMap::new(a.height(), a.width(), data)
}
