//! Mask overlap metrics. Intersections and unions are counted in integer
//! arithmetic; the floating division happens once at the end.

use thiserror::Error;

use crate::datakit::mask::Bitmap;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("mask shapes differ: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("empty batch has no defined aggregate")]
    EmptyBatch,
}

/// How to treat a pair where both masks are empty (union zero).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EmptyPolicy {
    /// Score the pair 1.0: predicting absence correctly is a hit.
    #[default]
    ScoreOne,
    /// Drop the pair from the aggregate.
    Skip,
}

pub fn intersection_union(pred: &Bitmap, gt: &Bitmap) -> Result<(u64, u64), MetricError> {
    if !pred.same_shape(gt) {
        return Err(MetricError::ShapeMismatch(pred.height(), pred.width(), gt.height(), gt.width()));
    }
    let mut inter = 0u64;
    let mut union = 0u64;
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        inter += (p & g) as u64;
        union += (p | g) as u64;
    }
    Ok((inter, union))
}

pub fn iou(pred: &Bitmap, gt: &Bitmap) -> Result<f64, MetricError> {
    let (inter, union) = intersection_union(pred, gt)?;
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Mean of per-pair IoU.
pub fn giou(pairs: &[(Bitmap, Bitmap)], empty: EmptyPolicy) -> Result<f64, MetricError> {
    let mut total = 0.0;
    let mut n = 0usize;
    for (pred, gt) in pairs {
        let (inter, union) = intersection_union(pred, gt)?;
        if union == 0 && empty == EmptyPolicy::Skip {
            continue;
        }
        total += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
        n += 1;
    }
    if n == 0 {
        return Err(MetricError::EmptyBatch);
    }
    Ok(total / n as f64)
}

/// Cumulative intersection over cumulative union.
pub fn ciou(pairs: &[(Bitmap, Bitmap)], empty: EmptyPolicy) -> Result<f64, MetricError> {
    let mut inter_sum = 0u64;
    let mut union_sum = 0u64;
    let mut n = 0usize;
    for (pred, gt) in pairs {
        let (inter, union) = intersection_union(pred, gt)?;
        if union == 0 && empty == EmptyPolicy::Skip {
            continue;
        }
        inter_sum += inter;
        union_sum += union;
        n += 1;
    }
    if n == 0 {
        return Err(MetricError::EmptyBatch);
    }
    Ok(if union_sum == 0 { 1.0 } else { inter_sum as f64 / union_sum as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(h: usize, w: usize, ones: &[(usize, usize)]) -> Bitmap {
        let mut m = Bitmap::zeros(h, w);
        for &(y, x) in ones {
            m.set(y, x, true);
        }
        m
    }

    /// Worked pairs: one with IoU 1/3 (areas 4 and 4, overlap 2)
    /// and one identical pair (IoU 1).
    fn worked_pairs() -> Vec<(Bitmap, Bitmap)> {
        let pred = mask(4, 4, &[(0, 0), (0, 1), (1, 0), (1, 1)]);
        let gt = mask(4, 4, &[(1, 0), (1, 1), (2, 0), (2, 1)]);
        let same = mask(2, 2, &[(0, 0)]);
        vec![(pred, gt), (same.clone(), same)]
    }

    #[test]
    fn identical_and_disjoint() {
        let a = mask(3, 3, &[(0, 0), (1, 1)]);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let b = mask(3, 3, &[(2, 2)]);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn worked_example_values() {
        let pairs = worked_pairs();
        assert!((iou(&pairs[0].0, &pairs[0].1).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!((giou(&pairs, EmptyPolicy::ScoreOne).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((ciou(&pairs, EmptyPolicy::ScoreOne).unwrap() - 3.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn empty_policy() {
        let empty = Bitmap::zeros(2, 2);
        assert_eq!(iou(&empty, &empty).unwrap(), 1.0);
        let pairs = vec![(empty.clone(), empty.clone())];
        assert_eq!(giou(&pairs, EmptyPolicy::ScoreOne).unwrap(), 1.0);
        assert!(matches!(giou(&pairs, EmptyPolicy::Skip), Err(MetricError::EmptyBatch)));
    }

    #[test]
    fn shape_mismatch_and_empty_batch() {
        let a = Bitmap::zeros(2, 2);
        let b = Bitmap::zeros(3, 2);
        assert!(matches!(iou(&a, &b), Err(MetricError::ShapeMismatch(..))));
        assert!(matches!(giou(&[], EmptyPolicy::ScoreOne), Err(MetricError::EmptyBatch)));
    }

    #[test]
    fn ciou_tracks_large_pair_closer_than_giou() {
        // One large pair (IoU 0.9ish) dominating a small disjoint pair.
        let mut large_pred = Bitmap::zeros(32, 32);
        let mut large_gt = Bitmap::zeros(32, 32);
        for y in 0..30 {
            for x in 0..30 {
                large_pred.set(y, x, true);
            }
        }
        for y in 0..30 {
            for x in 2..32 {
                large_gt.set(y, x, true);
            }
        }
        let small_pred = mask(32, 32, &[(31, 0)]);
        let small_gt = mask(32, 32, &[(31, 31)]);
        let pairs = [(large_pred.clone(), large_gt.clone())];
        let iou_large = iou(&large_pred, &large_gt).unwrap();
        let both = vec![pairs[0].clone(), (small_pred, small_gt)];
        let g = giou(&both, EmptyPolicy::ScoreOne).unwrap();
        let c = ciou(&both, EmptyPolicy::ScoreOne).unwrap();
        assert!((c - iou_large).abs() < (g - iou_large).abs());
    }

    #[test]
    fn equal_unions_make_giou_equal_ciou() {
        // Identical-area pairs with equal unions: the mean of ratios equals
        // the ratio of sums.
        let base = |ones: &[(usize, usize)]| mask(4, 4, ones);
        let pairs = vec![
            // union 4, intersection 1
            (base(&[(0, 0), (0, 1)]), base(&[(0, 1), (0, 2), (0, 3)])),
            // union 4, intersection 2
            (base(&[(1, 0), (1, 1), (1, 2)]), base(&[(1, 1), (1, 2), (1, 3)])),
        ];
        for (pred, gt) in &pairs {
            let (_, u) = intersection_union(pred, gt).unwrap();
            assert_eq!(u, 4);
        }
        let g = giou(&pairs, EmptyPolicy::ScoreOne).unwrap();
        let c = ciou(&pairs, EmptyPolicy::ScoreOne).unwrap();
        assert!((g - c).abs() < 1e-12, "giou {g} vs ciou {c}");
    }

    #[test]
    fn reorder_invariance() {
        let pairs = worked_pairs();
        let swapped: Vec<_> = pairs.iter().rev().cloned().collect();
        assert_eq!(
            giou(&pairs, EmptyPolicy::ScoreOne).unwrap(),
            giou(&swapped, EmptyPolicy::ScoreOne).unwrap()
        );
        assert_eq!(
            ciou(&pairs, EmptyPolicy::ScoreOne).unwrap(),
            ciou(&swapped, EmptyPolicy::ScoreOne).unwrap()
        );
    }
}
