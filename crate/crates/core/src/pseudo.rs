//! Hard pseudo-labels from class distributions.

use crate::error::{Error, Result};
use crate::raster::{LabelMap, ProbMap, IGNORE};

/// Per-pixel argmax. Ties resolve to the lowest class index.
pub fn argmax_label(probs: &ProbMap) -> LabelMap {
    let data = probs
        .rows()
        .map(|row| {
            let mut best = 0;
            for (c, &p) in row.iter().enumerate().skip(1) {
                if p > row[best] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    LabelMap::new(probs.height(), probs.width(), data).expect("argmax preserves shape")
}

/// One-hot encoding. [`IGNORE`] pixels become all-zero rows, which every
/// loss treats as masked out.
pub fn one_hot(labels: &LabelMap, num_classes: usize) -> Result<ProbMap> {
    if num_classes == 0 || num_classes > IGNORE as usize {
        return Err(Error::InvalidInput(format!(
            "num_classes {num_classes} outside 1..={}",
            IGNORE
        )));
    }
    labels.validate(num_classes)?;
    let mut data = vec![0.0; labels.data().len() * num_classes];
    for (row, &l) in data.chunks_exact_mut(num_classes).zip(labels.data()) {
        if l != IGNORE {
            row[l as usize] = 1.0;
        }
    }
    ProbMap::unchecked(labels.height(), labels.width(), num_classes, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unique_max() {
        let p = ProbMap::new(1, 1, 3, vec![0.1, 0.7, 0.2]).unwrap();
        assert_eq!(argmax_label(&p).data(), &[1]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let p = ProbMap::new(1, 1, 2, vec![0.5, 0.5]).unwrap();
        assert_eq!(argmax_label(&p).data(), &[0]);
        let p = ProbMap::new(1, 1, 3, vec![0.2, 0.4, 0.4]).unwrap();
        assert_eq!(argmax_label(&p).data(), &[1]);
    }

    #[test]
    fn one_hot_rows_identity() {
        let l = LabelMap::new(2, 2, vec![0, 1, 2, 1]).unwrap();
        let p = one_hot(&l, 3).unwrap();
        assert_eq!(argmax_label(&p), l);
    }

    #[test]
    fn one_hot_values() {
        let l = LabelMap::new(1, 2, vec![2, IGNORE]).unwrap();
        let p = one_hot(&l, 4).unwrap();
        assert_eq!(p.data(), &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn one_hot_rejects_out_of_range_label() {
        let l = LabelMap::new(1, 1, vec![4]).unwrap();
        assert!(matches!(one_hot(&l, 4), Err(Error::InvalidLabel { .. })));
    }

    fn label_map(max_class: u8) -> impl Strategy<Value = LabelMap> {
        (1usize..6, 1usize..6).prop_flat_map(move |(h, w)| {
            proptest::collection::vec(0..max_class, h * w)
                .prop_map(move |d| LabelMap::new(h, w, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn round_trip(l in label_map(6)) {
            let p = one_hot(&l, 6).unwrap();
            prop_assert_eq!(argmax_label(&p), l);
            // Non-ignore rows satisfy the simplex invariant exactly.
            for row in p.rows() {
                prop_assert_eq!(row.iter().sum::<f64>(), 1.0);
            }
        }

        #[test]
        fn argmax_invariant_under_row_rescaling(
            raw in proptest::collection::vec(0.01f64..1.0, 12),
            scales in proptest::collection::vec(0.1f64..10.0, 4),
        ) {
            let normalize = |v: &[f64]| -> Vec<f64> {
                v.chunks(3).flat_map(|r| {
                    let s: f64 = r.iter().sum();
                    r.iter().map(move |x| x / s)
                }).collect()
            };
            let base = ProbMap::new(2, 2, 3, normalize(&raw)).unwrap();
            let scaled: Vec<f64> = raw
                .chunks(3)
                .zip(&scales)
                .flat_map(|(r, s)| r.iter().map(move |x| x * s))
                .collect();
            let rescaled = ProbMap::new(2, 2, 3, normalize(&scaled)).unwrap();
            prop_assert_eq!(argmax_label(&base), argmax_label(&rescaled));
        }
    }
}
