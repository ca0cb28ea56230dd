//! Evaluation metrics: rates of increase, latency statistics, attack success
//! rate, complexity fits and detection quality.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::anchors::ProposalBox;
use crate::error::{validation, Result};
use crate::geometry::rotated_iou;
use crate::math::{ln, sqrt};

/// `(t_attack - t_benign) / t_benign`.
pub fn roi_latency(t_attack: f64, t_benign: f64) -> Result<f64> {
    rate_of_increase(t_attack, t_benign)
}

/// Same contract as [`roi_latency`] over proposal counts.
pub fn roi_proposals(p_attack: f64, p_benign: f64) -> Result<f64> {
    rate_of_increase(p_attack, p_benign)
}

fn rate_of_increase(attack: f64, benign: f64) -> Result<f64> {
    if !(benign > 0.0) {
        return Err(validation("benign baseline must be positive"));
    }
    Ok((attack - benign) / benign)
}

/// Rate of increase averaged over frames whose benign value is positive,
/// alongside the ratio of means. Returns `None` when no frame qualifies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiSummary {
    pub per_frame_mean: f64,
    pub ratio_of_means: f64,
    pub frames_used: usize,
}

pub fn summarize_roi(attack: &[f64], benign: &[f64]) -> Option<RoiSummary> {
    assert_eq!(attack.len(), benign.len(), "per-frame series must align");
    let used: Vec<(f64, f64)> = attack.iter().zip(benign).filter(|(_, &b)| b > 0.0).map(|(&a, &b)| (a, b)).collect();
    if used.is_empty() {
        return None;
    }
    let n = used.len() as f64;
    let per_frame_mean = used.iter().map(|&(a, b)| (a - b) / b).sum::<f64>() / n;
    let mean_a = used.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_b = used.iter().map(|p| p.1).sum::<f64>() / n;
    Some(RoiSummary { per_frame_mean, ratio_of_means: (mean_a - mean_b) / mean_b, frames_used: used.len() })
}

/// Fraction of frames whose latency is strictly above `threshold` seconds.
pub fn attack_success_rate(latencies: &[f64], threshold: f64) -> Result<f64> {
    if latencies.is_empty() {
        return Err(validation("no latency samples"));
    }
    if !(threshold > 0.0) {
        return Err(validation("threshold must be positive"));
    }
    Ok(latencies.iter().filter(|&&t| t > threshold).count() as f64 / latencies.len() as f64)
}

/// Summary of latency samples in seconds. `std` is the population standard
/// deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub samples: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub rsd_percent: f64,
}

impl LatencyStats {
    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(validation("no latency samples"));
        }
        if samples.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(validation("latency samples must be finite and non-negative"));
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
        let std = sqrt(var);
        let median = median(&samples);
        let rsd_percent = if mean > 0.0 { 100.0 * std / mean } else { 0.0 };
        Ok(Self { samples, mean, median, std, rsd_percent })
    }
}

/// Median of a non-empty slice; the mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Least-squares slope of `ln(cost)` against `ln(size)`.
pub fn fit_complexity_exponent(sizes: &[f64], costs: &[f64]) -> Result<f64> {
    if sizes.len() != costs.len() {
        return Err(validation("sizes and costs must align"));
    }
    if sizes.len() < 3 {
        return Err(validation("need at least three sizes"));
    }
    if sizes.iter().chain(costs).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(validation("sizes and costs must be positive"));
    }
    if sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(validation("sizes must be strictly increasing"));
    }
    let xs: Vec<f64> = sizes.iter().map(|&s| ln(s)).collect();
    let ys: Vec<f64> = costs.iter().map(|&c| ln(c)).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

/// Greedy one-to-one matching by descending detection score. Returns, per
/// detection in that order, whether it matched.
fn greedy_match(detections: &[ProposalBox], ground_truth: &[ProposalBox], iou_threshold: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score).then(a.cmp(&b)));
    let mut taken = vec![false; ground_truth.len()];
    order
        .iter()
        .map(|&d| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in ground_truth.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let iou = rotated_iou(&detections[d], gt);
                if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            match best {
                Some((g, _)) => {
                    taken[g] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// Average precision with all-points interpolation on BEV rotated IoU.
/// Zero when there is no ground truth.
pub fn average_precision(detections: &[ProposalBox], ground_truth: &[ProposalBox], iou_threshold: f64) -> f64 {
    if ground_truth.is_empty() {
        return 0.0;
    }
    let hits = greedy_match(detections, ground_truth, iou_threshold);
    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (k, &hit) in hits.iter().enumerate() {
        if hit {
            tp += 1;
        }
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / ground_truth.len() as f64);
    }
    // precision envelope from the right
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

/// Matched detections over the union of two detection sets, matching
/// greedily at `iou_threshold`. Two empty sets agree fully.
pub fn detection_jaccard(a: &[ProposalBox], b: &[ProposalBox], iou_threshold: f64) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let matched = greedy_match(a, b, iou_threshold).iter().filter(|&&m| m).count();
    matched as f64 / (a.len() + b.len() - matched) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(x: f64, score: f64) -> ProposalBox {
        ProposalBox::bev(x, 0.0, 4.0, 2.0, 0.0, score)
    }

    #[test]
    fn roi_cases() {
        assert_eq!(roi_latency(0.3, 0.3).unwrap(), 0.0);
        assert_eq!(roi_latency(0.6, 0.3).unwrap(), 1.0);
        assert!(roi_latency(1.0, 0.0).is_err());
        assert!((roi_proposals(100.0, 10.0).unwrap() - 9.0).abs() < 1e-12);
        assert!(roi_latency(0.4, 0.3).unwrap() < roi_latency(0.5, 0.3).unwrap());
    }

    #[test]
    fn roi_summary_skips_zero_baselines() {
        let s = summarize_roi(&[2.0, 5.0, 9.0], &[1.0, 0.0, 3.0]).unwrap();
        assert_eq!(s.frames_used, 2);
        assert!((s.per_frame_mean - 1.5).abs() < 1e-12);
        assert!((s.ratio_of_means - 1.75).abs() < 1e-12);
        assert!(summarize_roi(&[1.0], &[0.0]).is_none());
    }

    #[test]
    fn asr_cases() {
        assert_eq!(attack_success_rate(&[0.1, 0.2], 1.5).unwrap(), 0.0);
        assert_eq!(attack_success_rate(&[0.1, 2.0, 3.0, 1.0], 1.5).unwrap(), 0.5);
        assert!(attack_success_rate(&[], 1.5).is_err());
        assert!(attack_success_rate(&[1.0], 0.0).is_err());
    }

    #[test]
    fn latency_stats_hand_values() {
        let s = LatencyStats::from_samples(vec![2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap();
        assert_eq!(s.mean, 5.0);
        assert_eq!(s.std, 2.0);
        assert_eq!(s.median, 4.5);
        assert!((s.rsd_percent - 40.0).abs() < 1e-12);
        let one = LatencyStats::from_samples(vec![0.25]).unwrap();
        assert_eq!((one.std, one.rsd_percent), (0.0, 0.0));
        assert!(LatencyStats::from_samples(vec![]).is_err());
    }

    #[test]
    fn exponent_of_power_laws() {
        let sizes = [10.0, 20.0, 40.0, 80.0];
        let sq: Vec<f64> = sizes.iter().map(|s| s * s).collect();
        assert!((fit_complexity_exponent(&sizes, &sq).unwrap() - 2.0).abs() < 1e-9);
        assert!((fit_complexity_exponent(&sizes, &sizes).unwrap() - 1.0).abs() < 1e-9);
        assert!(fit_complexity_exponent(&sizes[..2], &sq[..2]).is_err());
        assert!(fit_complexity_exponent(&[1.0, 2.0, 3.0], &[1.0, 0.0, 2.0]).is_err());
        assert!(fit_complexity_exponent(&[1.0, 3.0, 2.0], &[1.0, 2.0, 2.0]).is_err());
    }

    #[test]
    fn ap_perfect_and_empty() {
        let gt = [det(0.0, 1.0), det(10.0, 1.0)];
        assert_eq!(average_precision(&gt, &gt, 0.5), 1.0);
        assert_eq!(average_precision(&[], &gt, 0.5), 0.0);
        assert_eq!(average_precision(&gt, &[], 0.5), 0.0);
    }

    #[test]
    fn ap_hand_pr_curve() {
        let gt = [det(0.0, 1.0), det(10.0, 1.0), det(20.0, 1.0)];
        // TP, FP, TP; one ground truth is missed
        let dets = [det(0.0, 0.9), det(50.0, 0.8), det(10.2, 0.7)];
        // PR points (1/3, 1), (1/3, 1/2), (2/3, 2/3)
        let expected = (1.0 / 3.0) * 1.0 + (1.0 / 3.0) * (2.0 / 3.0);
        assert!((average_precision(&dets, &gt, 0.5) - expected).abs() < 1e-12);
    }

    #[test]
    fn ap_ignores_score_scale() {
        let gt = [det(0.0, 1.0), det(10.0, 1.0), det(20.0, 1.0)];
        let dets = [det(0.3, 0.9), det(50.0, 0.95), det(10.2, 0.4), det(20.1, 0.2)];
        let scaled: Vec<ProposalBox> = dets.iter().map(|d| ProposalBox { score: d.score * 0.37, ..*d }).collect();
        assert_eq!(average_precision(&dets, &gt, 0.5), average_precision(&scaled, &gt, 0.5));
    }

    #[test]
    fn duplicates_do_not_double_match() {
        let gt = [det(0.0, 1.0)];
        let dets = [det(0.0, 0.9), det(0.0, 0.8)];
        assert!((average_precision(&dets, &gt, 0.5) - 1.0).abs() < 1e-12);
        assert!((detection_jaccard(&dets, &gt, 0.5) - 0.5).abs() < 1e-12);
        assert_eq!(detection_jaccard(&[], &[], 0.5), 1.0);
    }
}
