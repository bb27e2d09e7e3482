//! Evaluation: gaze estimation as binary classification over grid cells
//! with a best-F1 threshold sweep, mean class accuracy, and top-k accuracy.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridDist;

/// One evaluated clip: the predicted gaze map and the ground-truth positive
/// cells (aggregated fixation cells). Windows without fixations are marked
/// invalid and skipped, mirroring the exclusion of saccade-only windows.
#[derive(Debug, Clone)]
pub struct GazeEvalItem {
    pub predicted: GridDist,
    pub positives: BTreeSet<usize>,
    pub valid: bool,
}

impl GazeEvalItem {
    pub fn new(predicted: GridDist, positives: BTreeSet<usize>) -> Self {
        let valid = !positives.is_empty();
        GazeEvalItem {
            predicted,
            positives,
            valid,
        }
    }
}

/// How per-item counts combine across the evaluation set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrAveraging {
    /// Pool TP/FP/FN over all items before computing P and R.
    Micro,
    /// Compute P and R per item, then average.
    Macro,
}

/// One entry of the threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn f1_of(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Precision/recall sweep over every distinct predicted cell value. A cell
/// is predicted-positive iff its value >= threshold; counts pool over all
/// valid items (micro averaging).
pub fn gaze_pr_sweep(items: &[GazeEvalItem]) -> Result<Vec<SweepPoint>> {
    gaze_pr_sweep_with(items, PrAveraging::Micro)
}

pub fn gaze_pr_sweep_with(
    items: &[GazeEvalItem],
    averaging: PrAveraging,
) -> Result<Vec<SweepPoint>> {
    let valid: Vec<&GazeEvalItem> = items.iter().filter(|i| i.valid).collect();
    if valid.is_empty() {
        return Err(Error::Validation(
            "gaze sweep requires at least one valid item".into(),
        ));
    }
    for item in &valid {
        if item.positives.iter().any(|&c| c >= item.predicted.shape.cells()) {
            return Err(Error::Validation("positive cell outside grid".into()));
        }
    }
    match averaging {
        PrAveraging::Micro => Ok(micro_sweep(&valid)),
        PrAveraging::Macro => Ok(macro_sweep(&valid)),
    }
}

fn candidate_thresholds(valid: &[&GazeEvalItem]) -> Vec<f64> {
    let mut thresholds: Vec<f64> = valid
        .iter()
        .flat_map(|i| i.predicted.probs.iter().copied())
        .collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    thresholds
}

fn micro_sweep(valid: &[&GazeEvalItem]) -> Vec<SweepPoint> {
    // Sort every (value, is_positive) pair descending once; walking down the
    // distinct values accumulates TP and FP, and FN = total_pos - TP.
    let mut pairs: Vec<(f64, bool)> = Vec::new();
    let mut total_pos = 0usize;
    for item in valid {
        for (cell, &v) in item.predicted.probs.iter().enumerate() {
            pairs.push((v, item.positives.contains(&cell)));
        }
        total_pos += item.positives.len();
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = Vec::new();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0usize;
    while i < pairs.len() {
        let threshold = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == threshold {
            if pairs[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let p = tp as f64 / (tp + fp) as f64;
        let r = tp as f64 / total_pos as f64;
        points.push(SweepPoint {
            threshold,
            precision: p,
            recall: r,
            f1: f1_of(p, r),
        });
    }
    points
}

fn macro_sweep(valid: &[&GazeEvalItem]) -> Vec<SweepPoint> {
    let thresholds = candidate_thresholds(valid);
    thresholds
        .into_iter()
        .map(|threshold| {
            let mut psum = 0.0;
            let mut rsum = 0.0;
            for item in valid {
                let mut tp = 0usize;
                let mut fp = 0usize;
                for (cell, &v) in item.predicted.probs.iter().enumerate() {
                    if v >= threshold {
                        if item.positives.contains(&cell) {
                            tp += 1;
                        } else {
                            fp += 1;
                        }
                    }
                }
                psum += if tp + fp > 0 {
                    tp as f64 / (tp + fp) as f64
                } else {
                    0.0
                };
                rsum += tp as f64 / item.positives.len() as f64;
            }
            let p = psum / valid.len() as f64;
            let r = rsum / valid.len() as f64;
            SweepPoint {
                threshold,
                precision: p,
                recall: r,
                f1: f1_of(p, r),
            }
        })
        .collect()
}

/// The sweep entry maximizing F1; ties broken toward the larger threshold.
pub fn best_f1(sweep: &[SweepPoint]) -> Result<SweepPoint> {
    sweep
        .iter()
        .copied()
        .max_by(|a, b| {
            a.f1.total_cmp(&b.f1)
                .then(a.threshold.total_cmp(&b.threshold))
        })
        .ok_or_else(|| Error::Validation("empty sweep".into()))
}

/// Average of per-class accuracies over classes with at least one instance.
/// Returns the mean and the per-class vector (`None` for absent classes).
pub fn mean_class_accuracy(
    predictions: &[usize],
    labels: &[usize],
    k: usize,
) -> Result<(f64, Vec<Option<f64>>)> {
    if predictions.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|&l| l >= k) {
        return Err(Error::Validation("label out of range".into()));
    }
    let mut counts = vec![0usize; k];
    let mut hits = vec![0usize; k];
    for (&p, &l) in predictions.iter().zip(labels) {
        counts[l] += 1;
        hits[l] += usize::from(p == l);
    }
    let per_class: Vec<Option<f64>> = counts
        .iter()
        .zip(&hits)
        .map(|(&n, &h)| (n > 0).then(|| h as f64 / n as f64))
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::Validation("no test instances".into()));
    }
    let mca = present.iter().sum::<f64>() / present.len() as f64;
    Ok((mca, per_class))
}

/// Fraction of items whose label ranks among the `k` highest scores; ties
/// resolved by the lower class index taking the earlier rank.
pub fn topk_accuracy(score_vectors: &[Vec<f64>], labels: &[usize], k: usize) -> Result<f64> {
    if score_vectors.len() != labels.len() {
        return Err(Error::Validation("length mismatch".into()));
    }
    if score_vectors.is_empty() {
        return Err(Error::Validation("no items".into()));
    }
    let classes = score_vectors[0].len();
    if k > classes || k == 0 {
        return Err(Error::Validation(format!("k = {k} out of range")));
    }
    let mut hits = 0usize;
    for (scores, &label) in score_vectors.iter().zip(labels) {
        // Rank of the label = number of classes strictly better, where ties
        // go to the lower index.
        let rank = scores
            .iter()
            .enumerate()
            .filter(|&(i, &s)| s > scores[label] || (s == scores[label] && i < label))
            .count();
        hits += usize::from(rank < k);
    }
    Ok(hits as f64 / labels.len() as f64)
}

/// Combined gaze and action metrics for one evaluation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub best_f1: Option<SweepPoint>,
    pub mean_class_accuracy: f64,
    pub per_class_accuracy: Vec<Option<f64>>,
    pub topk: BTreeMap<usize, f64>,
    pub instance_accuracy: f64,
}

impl MetricsReport {
    /// Builds a report from per-item predictions. `gaze_items` may be empty
    /// (no gaze evaluation requested).
    pub fn build(
        gaze_items: &[GazeEvalItem],
        score_vectors: &[Vec<f64>],
        labels: &[usize],
        k: usize,
        averaging: PrAveraging,
    ) -> Result<MetricsReport> {
        let best = if gaze_items.iter().any(|i| i.valid) {
            Some(best_f1(&gaze_pr_sweep_with(gaze_items, averaging)?)?)
        } else {
            None
        };
        let predictions: Vec<usize> = score_vectors
            .iter()
            .map(|s| {
                s.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                    .unwrap()
                    .0
            })
            .collect();
        let (mca, per_class) = mean_class_accuracy(&predictions, labels, k)?;
        let mut topk = BTreeMap::new();
        for kk in [1usize, 5] {
            if kk <= k {
                topk.insert(kk, topk_accuracy(score_vectors, labels, kk)?);
            }
        }
        let instance = predictions
            .iter()
            .zip(labels)
            .filter(|(p, l)| p == l)
            .count() as f64
            / labels.len() as f64;
        Ok(MetricsReport {
            best_f1: best,
            mean_class_accuracy: mca,
            per_class_accuracy: per_class,
            topk,
            instance_accuracy: instance,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;

    fn shape_7x7() -> GridShape {
        GridShape::default()
    }

    fn item(predicted: GridDist, positives: &[usize]) -> GazeEvalItem {
        GazeEvalItem::new(predicted, positives.iter().copied().collect())
    }

    #[test]
    fn perfect_one_hot_prediction_reaches_f1_one() {
        let items = vec![item(GridDist::one_hot(shape_7x7(), 5), &[5])];
        let best = best_f1(&gaze_pr_sweep(&items).unwrap()).unwrap();
        assert_eq!(best.precision, 1.0);
        assert_eq!(best.recall, 1.0);
        assert_eq!(best.f1, 1.0);
    }

    #[test]
    fn uniform_prediction_single_positive_counts() {
        // At the all-positive threshold: P = 1/49, R = 1, F1 = 2/50.
        let items = vec![item(GridDist::uniform(shape_7x7()), &[10])];
        let sweep = gaze_pr_sweep(&items).unwrap();
        assert_eq!(sweep.len(), 1, "uniform map yields one distinct threshold");
        let pt = sweep[0];
        assert!((pt.precision - 1.0 / 49.0).abs() < 1e-12);
        assert_eq!(pt.recall, 1.0);
        assert!((pt.f1 - 0.04).abs() < 1e-12);
    }

    #[test]
    fn no_valid_items_errors() {
        let items = vec![GazeEvalItem::new(
            GridDist::uniform(shape_7x7()),
            BTreeSet::new(),
        )];
        assert!(gaze_pr_sweep(&items).is_err());
        assert!(gaze_pr_sweep(&[]).is_err());
    }

    #[test]
    fn invalid_items_are_skipped() {
        let mut items = vec![item(GridDist::one_hot(shape_7x7(), 5), &[5])];
        items.push(GazeEvalItem::new(
            GridDist::uniform(shape_7x7()),
            BTreeSet::new(),
        ));
        let best = best_f1(&gaze_pr_sweep(&items).unwrap()).unwrap();
        assert_eq!(best.f1, 1.0);
    }

    #[test]
    fn sweep_matches_brute_force_counts() {
        // Independent oracle: recount TP/FP/FN per threshold directly.
        let shape = GridShape::new(1, 2, 2).unwrap();
        let items = vec![
            item(
                GridDist {
                    shape,
                    probs: vec![0.4, 0.3, 0.2, 0.1],
                },
                &[0, 2],
            ),
            item(
                GridDist {
                    shape,
                    probs: vec![0.1, 0.2, 0.3, 0.4],
                },
                &[3],
            ),
        ];
        let sweep = gaze_pr_sweep(&items).unwrap();
        for pt in &sweep {
            let mut tp = 0;
            let mut fp = 0;
            let mut fnn = 0;
            for it in &items {
                for (cell, &v) in it.predicted.probs.iter().enumerate() {
                    let pos = it.positives.contains(&cell);
                    if v >= pt.threshold {
                        if pos {
                            tp += 1
                        } else {
                            fp += 1
                        }
                    } else if pos {
                        fnn += 1
                    }
                }
            }
            let p = tp as f64 / (tp + fp) as f64;
            let r = tp as f64 / (tp + fnn) as f64;
            assert!((pt.precision - p).abs() < 1e-12);
            assert!((pt.recall - r).abs() < 1e-12);
            assert!((pt.f1 - f1_of(p, r)).abs() < 1e-12);
        }
    }

    #[test]
    fn best_f1_improves_as_prediction_sharpens() {
        let shape = shape_7x7();
        let blend = |alpha: f64| -> GridDist {
            let onehot = GridDist::one_hot(shape, 24);
            let uni = GridDist::uniform(shape);
            GridDist {
                shape,
                probs: onehot
                    .probs
                    .iter()
                    .zip(&uni.probs)
                    .map(|(o, u)| alpha * o + (1.0 - alpha) * u)
                    .collect(),
            }
        };
        let mut last = 0.0;
        for alpha in [0.0, 0.3, 0.9] {
            let items = vec![item(blend(alpha), &[24])];
            let best = best_f1(&gaze_pr_sweep(&items).unwrap()).unwrap();
            assert!(best.f1 >= last, "alpha {alpha}: {} < {last}", best.f1);
            last = best.f1;
        }
    }

    #[test]
    fn macro_averaging_differs_from_micro_when_items_unbalanced() {
        let shape = GridShape::new(1, 2, 2).unwrap();
        let items = vec![
            item(
                GridDist {
                    shape,
                    probs: vec![0.7, 0.1, 0.1, 0.1],
                },
                &[0],
            ),
            item(
                GridDist {
                    shape,
                    probs: vec![0.25; 4],
                },
                &[1, 2, 3],
            ),
        ];
        let micro = gaze_pr_sweep_with(&items, PrAveraging::Micro).unwrap();
        let macro_ = gaze_pr_sweep_with(&items, PrAveraging::Macro).unwrap();
        assert!(!micro.is_empty() && !macro_.is_empty());
    }

    #[test]
    fn mca_all_correct() {
        let (mca, _) = mean_class_accuracy(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!(mca, 1.0);
    }

    #[test]
    fn mca_balances_classes() {
        // Class 0: 2/2 correct, class 1: 0/3. MCA = 0.5; instance acc 0.4.
        let predictions = [0, 0, 0, 0, 0];
        let labels = [0, 0, 1, 1, 1];
        let (mca, per_class) = mean_class_accuracy(&predictions, &labels, 2).unwrap();
        assert_eq!(mca, 0.5);
        assert_eq!(per_class, vec![Some(1.0), Some(0.0)]);
    }

    #[test]
    fn mca_excludes_absent_classes() {
        let (mca, per_class) = mean_class_accuracy(&[0, 1], &[0, 1], 5).unwrap();
        assert_eq!(mca, 1.0);
        assert_eq!(per_class[2], None);
    }

    #[test]
    fn mca_invariant_to_class_duplication() {
        let predictions = [0, 1, 1, 0];
        let labels = [0, 1, 0, 0];
        let (base, _) = mean_class_accuracy(&predictions, &labels, 2).unwrap();
        // Duplicate every class-0 instance.
        let mut dp = predictions.to_vec();
        let mut dl = labels.to_vec();
        for (&p, &l) in predictions.iter().zip(&labels) {
            if l == 0 {
                dp.push(p);
                dl.push(l);
            }
        }
        let (dup, _) = mean_class_accuracy(&dp, &dl, 2).unwrap();
        assert!((base - dup).abs() < 1e-15);
    }

    #[test]
    fn mca_length_mismatch_errors() {
        assert!(mean_class_accuracy(&[0], &[0, 1], 2).is_err());
    }

    #[test]
    fn topk_full_k_is_one() {
        let scores = vec![vec![0.1, 0.5, 0.4], vec![0.9, 0.05, 0.05]];
        let labels = [2, 1];
        assert_eq!(topk_accuracy(&scores, &labels, 3).unwrap(), 1.0);
    }

    #[test]
    fn top1_equals_argmax_accuracy() {
        let scores = vec![vec![0.1, 0.5, 0.4], vec![0.9, 0.05, 0.05], vec![0.2, 0.3, 0.5]];
        let labels = [1, 1, 2];
        // Argmax: 1, 0, 2 -> 2/3 correct.
        assert!((topk_accuracy(&scores, &labels, 1).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn topk_hand_counted_fixture() {
        // Item 1: label 2 ranks 2nd -> in top-2. Item 2: label 1 ranks 3rd
        // -> out. Item 3: label 0 ranks 1st -> in. 2/3 at k = 2.
        let scores = vec![
            vec![0.5, 0.1, 0.4],
            vec![0.6, 0.1, 0.3],
            vec![0.8, 0.1, 0.1],
        ];
        let labels = [2, 1, 0];
        assert!((topk_accuracy(&scores, &labels, 2).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn topk_tie_goes_to_lower_index() {
        // Scores tied between class 0 and 1: class 0 takes the earlier rank.
        let scores = vec![vec![0.5, 0.5]];
        assert_eq!(topk_accuracy(&scores, &[0], 1).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&scores, &[1], 1).unwrap(), 0.0);
    }

    #[test]
    fn report_f1_consistent_with_p_and_r() {
        let items = vec![item(GridDist::uniform(shape_7x7()), &[3])];
        let report = MetricsReport::build(
            &items,
            &[vec![0.9, 0.1]],
            &[0],
            2,
            PrAveraging::Micro,
        )
        .unwrap();
        let b = report.best_f1.unwrap();
        assert!((b.f1 - f1_of(b.precision, b.recall)).abs() < 1e-12);
    }
}
