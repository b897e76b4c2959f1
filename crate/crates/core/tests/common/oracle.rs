//! Random instances and straightforward reference implementations used to
//! cross-check the library kernels.

use std::collections::HashSet;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use ssdda_core::mixing::block_bounds;
use ssdda_core::{LabelMap, MixMask, ProbMap, SegImage, IGNORE};

pub fn random_labels<R: Rng>(rng: &mut R, h: usize, w: usize, classes: u8, ignore_rate: f64) -> LabelMap {
    let data = (0..h * w)
        .map(|_| {
            if rng.gen_bool(ignore_rate) {
                IGNORE
            } else {
                rng.gen_range(0..classes)
            }
        })
        .collect();
    LabelMap::new(h, w, data).unwrap()
}

/// Softmax of Gaussian logits with standard deviation `scale`.
pub fn random_probs<R: Rng>(rng: &mut R, h: usize, w: usize, c: usize, scale: f64) -> ProbMap {
    let logits = (0..h * w * c)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect::<Vec<f64>>();
    ProbMap::softmax(h, w, c, logits).unwrap()
}

pub fn random_image<R: Rng>(rng: &mut R, h: usize, w: usize, channels: usize) -> SegImage {
    let data = (0..h * w * channels).map(|_| rng.gen::<f64>()).collect();
    SegImage::new(h, w, channels, data).unwrap()
}

/// Mean of `-ln max(p[label], 1e-12)` over non-IGNORE pixels, one pixel at a time.
pub fn ce_oracle(probs: &ProbMap, labels: &LabelMap) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for r in 0..labels.height() {
        for c in 0..labels.width() {
            let l = labels.get(r, c);
            if l == IGNORE {
                continue;
            }
            let p = probs.pixel(r, c)[l as usize];
            sum += -(if p < 1e-12 { 1e-12f64 } else { p }).ln();
            n += 1;
        }
    }
    sum / n as f64
}

/// Per-class IoU from pixel index sets: `|P ∩ G| / |P ∪ G|` over pixels with
/// scored ground truth.
pub fn iou_oracle(pred: &LabelMap, gt: &LabelMap, c: usize) -> Vec<Option<f64>> {
    (0..c as u8)
        .map(|k| {
            let scored = |i: &usize| gt.data()[*i] != IGNORE;
            let p: HashSet<usize> = (0..pred.data().len())
                .filter(scored)
                .filter(|&i| pred.data()[i] == k)
                .collect();
            let g: HashSet<usize> = (0..gt.data().len()).filter(|&i| gt.data()[i] == k).collect();
            let union = p.union(&g).count();
            (union > 0).then(|| p.intersection(&g).count() as f64 / union as f64)
        })
        .collect()
}

pub fn mean_defined(ious: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = ious.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Checks the selection rule inside one rectangle: the mask is 1 exactly on
/// the pixels of a set `S` of `ceil(|K| / 2)` classes present there.
pub fn check_selection(
    pred: &LabelMap,
    mask: &MixMask,
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
) -> Result<(), String> {
    let mut present = HashSet::new();
    let mut chosen = HashSet::new();
    for r in rows.clone() {
        for c in cols.clone() {
            present.insert(pred.get(r, c));
            if mask.data()[r * mask.width() + c] > 1 {
                return Err(format!("mask value {} at ({r}, {c})", mask.data()[r * mask.width() + c]));
            }
            if mask.get(r, c) {
                chosen.insert(pred.get(r, c));
            }
        }
    }
    let want = present.len().div_ceil(2);
    if chosen.len() != want {
        return Err(format!("{} classes selected out of {}, expected {want}", chosen.len(), present.len()));
    }
    for r in rows {
        for c in cols.clone() {
            if mask.get(r, c) != chosen.contains(&pred.get(r, c)) {
                return Err(format!("pixel ({r}, {c}) disagrees with class membership"));
            }
        }
    }
    Ok(())
}

/// Every pixel belongs to exactly one `p x p` block.
pub fn check_tiling(h: usize, w: usize, p: usize) -> Result<(), String> {
    let mut hits = vec![0u32; h * w];
    for br in 0..p {
        for bc in 0..p {
            for r in block_bounds(h, p, br) {
                for c in block_bounds(w, p, bc) {
                    hits[r * w + c] += 1;
                }
            }
        }
    }
    match hits.iter().position(|&n| n != 1) {
        Some(i) => Err(format!("pixel {i} covered {} times", hits[i])),
        None => Ok(()),
    }
}

/// `m ? a : b` computed pixel by pixel.
pub fn mix_oracle(a: &SegImage, b: &SegImage, m: &MixMask) -> Vec<f64> {
    let ch = a.channels();
    let mut out = Vec::with_capacity(a.data().len());
    for r in 0..a.height() {
        for c in 0..a.width() {
            let src = if m.get(r, c) { a } else { b };
            out.extend_from_slice(&src.data()[(r * a.width() + c) * ch..][..ch]);
        }
    }
    out
}

/// Argmax with ties to the lowest index.
pub fn argmax(row: &[f64]) -> u8 {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best as u8
}
