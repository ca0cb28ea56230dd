//! Confidence filtering, top-K capping and greedy NMS with cost accounting.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::anchors::ProposalBox;
use crate::geometry::rotated_iou;

/// Cost accounting for one NMS call.
///
/// `iou_evaluations` is the hardware-independent proxy for NMS cost.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NmsStats {
    pub input_count: usize,
    pub iou_evaluations: u64,
    /// Outer-loop iterations, one per kept box.
    pub iterations: usize,
    pub survivors: usize,
    /// Filled in by timed callers; zero otherwise.
    pub wall_time_s: f64,
}

/// Descending score, then ascending source index.
pub fn ranking(a: &ProposalBox, b: &ProposalBox) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.source.cmp(&b.source))
}

/// Number of proposals at or above `threshold`.
pub fn count_above(proposals: &[ProposalBox], threshold: f64) -> usize {
    proposals.iter().filter(|p| p.score >= threshold).count()
}

/// Keeps proposals with `score >= threshold`, caps them at the `max_keep`
/// best, and returns them ranked by [`ranking`].
pub fn confidence_filter(proposals: &[ProposalBox], threshold: f64, max_keep: usize) -> Vec<ProposalBox> {
    let mut kept: Vec<ProposalBox> = proposals.iter().filter(|p| p.score >= threshold).copied().collect();
    if kept.len() > max_keep {
        if max_keep == 0 {
            return Vec::new();
        }
        kept.select_nth_unstable_by(max_keep - 1, ranking);
        kept.truncate(max_keep);
    }
    kept.sort_unstable_by(ranking);
    kept
}

/// Greedy NMS over proposals already ranked by descending score.
///
/// Each outer iteration keeps the best unsuppressed box and compares it
/// against every later unsuppressed box, suppressing those with
/// IoU strictly above `iou_threshold`.
///
/// # Panics
///
/// If the input is not sorted by descending score.
pub fn nms(proposals: &[ProposalBox], iou_threshold: f64) -> (Vec<ProposalBox>, NmsStats) {
    assert!(
        proposals.windows(2).all(|w| w[0].score >= w[1].score),
        "nms input must be sorted by descending score"
    );
    let m = proposals.len();
    let mut suppressed = vec![false; m];
    let mut kept = Vec::new();
    let mut stats = NmsStats { input_count: m, ..NmsStats::default() };
    for i in 0..m {
        if suppressed[i] {
            continue;
        }
        kept.push(proposals[i]);
        stats.iterations += 1;
        let current = &proposals[i];
        for j in (i + 1)..m {
            if suppressed[j] {
                continue;
            }
            stats.iou_evaluations += 1;
            if rotated_iou(current, &proposals[j]) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    stats.survivors = kept.len();
    (kept, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchors::ProposalBox;

    fn boxed(x: f64, score: f64, idx: u32) -> ProposalBox {
        ProposalBox::bev(x, 0.0, 4.0, 1.8, 0.0, score).with_source(0, 0, idx)
    }

    #[test]
    fn paper_defaults_keep_everything_above_point_two() {
        let props: Vec<_> = (0..10).map(|i| boxed(i as f64 * 10.0, i as f64 / 10.0, i)).collect();
        let kept = confidence_filter(&props, 0.2, 1000);
        assert_eq!(kept.len(), 8);
        assert!(kept.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn all_below_threshold() {
        let props: Vec<_> = (0..5).map(|i| boxed(0.0, 0.1, i)).collect();
        assert!(confidence_filter(&props, 0.2, 1000).is_empty());
    }

    #[test]
    fn cap_matches_full_sort_oracle() {
        // 1500 scores above threshold, many ties
        let props: Vec<_> = (0..1500u32).map(|i| boxed(0.0, 0.3 + ((i * 7919) % 97) as f64 / 200.0, i)).collect();
        let kept = confidence_filter(&props, 0.2, 1000);
        let mut oracle = props.clone();
        oracle.sort_by(|a, b| {
            b.score.partial_cmp(&a.score).unwrap().then(a.source.col.cmp(&b.source.col))
        });
        oracle.truncate(1000);
        assert_eq!(kept, oracle);
    }

    #[test]
    fn singleton() {
        let (kept, stats) = nms(&[boxed(0.0, 0.9, 0)], 0.15);
        assert_eq!(kept.len(), 1);
        assert_eq!(stats.iou_evaluations, 0);
        assert_eq!(stats.survivors, 1);
    }

    #[test]
    fn identical_pair() {
        let props = confidence_filter(&[boxed(0.0, 0.8, 1), boxed(0.0, 0.8, 0)], 0.0, 10);
        let (kept, stats) = nms(&props, 0.15);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].source.col, 0);
        assert_eq!(stats.iou_evaluations, 1);
    }

    #[test]
    fn no_suppression_costs_all_pairs() {
        let props: Vec<_> = (0..50).map(|i| boxed(i as f64 * 10.0, 1.0 - i as f64 / 100.0, i)).collect();
        let (kept, stats) = nms(&props, 0.15);
        assert_eq!(kept.len(), 50);
        assert_eq!(stats.iou_evaluations, 50 * 49 / 2);
        assert_eq!(stats.iterations, 50);
    }

    #[test]
    #[should_panic]
    fn unsorted_input_panics() {
        nms(&[boxed(0.0, 0.1, 0), boxed(10.0, 0.9, 1)], 0.5);
    }
}
