use std::fmt::Write as _;

use super::{auc, default_thresholds, success_curve};
use crate::error::{Error, Result};
use crate::sacl::fnd_select;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneResult {
    pub scene_id: usize,
    pub ciou: f64,
    pub sim_diff: f64,
    pub box_iou: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    /// Mean per-scene cIoU with the map thresholded at 0.5.
    pub ciou: f64,
    pub auc: f64,
    pub thresholds: Vec<f64>,
    pub success: Vec<f64>,
    pub mean_sim_diff: f64,
    pub mean_box_iou: f64,
}

impl Summary {
    pub fn from_results(results: &[SceneResult]) -> Result<Summary> {
        if results.is_empty() {
            return Err(Error::InvalidArgument("no scenes to summarize".into()));
        }
        let n = results.len() as f64;
        let scores: Vec<f64> = results.iter().map(|r| r.ciou).collect();
        let thresholds = default_thresholds();
        let success = success_curve(&scores, &thresholds)?;
        Ok(Summary {
            ciou: scores.iter().sum::<f64>() / n,
            auc: auc(&success),
            mean_sim_diff: results.iter().map(|r| r.sim_diff).sum::<f64>() / n,
            mean_box_iou: results.iter().map(|r| r.box_iou).sum::<f64>() / n,
            thresholds,
            success,
        })
    }
}

pub fn results_csv(results: &[SceneResult]) -> String {
    let mut s = String::from("scene_id,ciou,sim_diff,box_iou\n");
    for r in results {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{:.6}",
            r.scene_id, r.ciou, r.sim_diff, r.box_iou
        );
    }
    s
}

pub fn summary_text(summary: &Summary) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "ciou@0.5 = {:.6}", summary.ciou);
    let _ = writeln!(s, "auc = {:.6}", summary.auc);
    let _ = writeln!(s, "sim_diff = {:.6}", summary.mean_sim_diff);
    let _ = writeln!(s, "box_iou = {:.6}", summary.mean_box_iou);
    for (t, r) in summary.thresholds.iter().zip(&summary.success) {
        let _ = writeln!(s, "success@{t:.2} = {r:.6}");
    }
    s
}

/// Two whitespace-separated columns, one sample per line.
pub fn curve_text(xs: &[f64], ys: &[f64]) -> String {
    let mut s = String::from("# threshold success_ratio\n");
    for (x, y) in xs.iter().zip(ys) {
        let _ = writeln!(s, "{x:.4} {y:.6}");
    }
    s
}

/// False-negative detection quality aggregated over batches.
#[derive(Clone, Debug, PartialEq)]
pub struct FndReport {
    pub batches: usize,
    /// Same-class candidates per batch, summed over anchors.
    pub actual_per_batch: f64,
    /// Same-class candidates left out of the negative set, per batch.
    pub detected_per_batch: f64,
    /// Other-class candidates wrongly left out, per batch.
    pub false_alarms_per_batch: f64,
    pub actual: usize,
    pub detected: usize,
    /// `detected / actual`; 1 when a batch holds no false negatives at all.
    pub recall: f64,
}

/// Scores `fnd_select` against oracle class labels. Each batch is an
/// `N x N` audio similarity matrix with the labels of its rows.
pub fn fnd_report(batches: &[(Tensor<f64>, Vec<usize>)], k: usize) -> Result<FndReport> {
    let (mut actual, mut detected, mut alarms) = (0usize, 0usize, 0usize);
    for (sim, labels) in batches {
        let n = labels.len();
        for anchor in 0..n {
            let neg = fnd_select(sim, anchor, k)?;
            let mut selected = vec![false; n];
            for &j in &neg.indices {
                selected[j] = true;
            }
            for j in (0..n).filter(|&j| j != anchor) {
                let same = labels[j] == labels[anchor];
                actual += same as usize;
                if !selected[j] {
                    if same {
                        detected += 1;
                    } else {
                        alarms += 1;
                    }
                }
            }
        }
    }
    let b = batches.len().max(1) as f64;
    Ok(FndReport {
        batches: batches.len(),
        actual_per_batch: actual as f64 / b,
        detected_per_batch: detected as f64 / b,
        false_alarms_per_batch: alarms as f64 / b,
        actual,
        detected,
        recall: if actual == 0 {
            1.0
        } else {
            detected as f64 / actual as f64
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::default_thresholds;

    fn one_hot_sim(labels: &[usize]) -> Tensor<f64> {
        let n = labels.len();
        Tensor::from_fn(&[n, n], |i| {
            if labels[i / n] == labels[i % n] {
                1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn separable_batch_has_full_recall() {
        let labels = vec![0, 1, 2, 3, 0, 1, 2, 3];
        let r = fnd_report(&[(one_hot_sim(&labels), labels.clone())], 6).unwrap();
        assert_eq!(r.actual, 8);
        assert_eq!(r.detected, 8);
        assert_eq!(r.recall, 1.0);
        assert_eq!(r.false_alarms_per_batch, 0.0);
        let none = fnd_report(&[(one_hot_sim(&labels), labels)], 7).unwrap();
        assert_eq!(none.detected, 0);
    }

    #[test]
    fn csv_and_summary_layout() {
        let rows = [
            SceneResult {
                scene_id: 3,
                ciou: 1.0,
                sim_diff: 0.5,
                box_iou: 0.25,
            },
            SceneResult {
                scene_id: 4,
                ciou: 0.0,
                sim_diff: -0.5,
                box_iou: 0.0,
            },
        ];
        let csv = results_csv(&rows);
        assert!(csv.starts_with("scene_id,ciou,sim_diff,box_iou\n3,1.000000,0.500000,0.250000\n"));
        let s = Summary::from_results(&rows).unwrap();
        assert_eq!(s.ciou, 0.5);
        assert_eq!(s.success.len(), default_thresholds().len());
        let text = summary_text(&s);
        assert!(text.starts_with("ciou@0.5 = 0.500000\nauc = "));
        assert!(Summary::from_results(&[]).is_err());
        assert_eq!(
            curve_text(&[0.0, 0.5], &[1.0, 0.5]),
            "# threshold success_ratio\n0.0000 1.000000\n0.5000 0.500000\n"
        );
    }
}
