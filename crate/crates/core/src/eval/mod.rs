//! Segmentation metrics: confusion-based accuracy and IoU, histogram
//! entropy of maps, and precision-recall analysis of uncertainty against
//! error masks.
//!
//! Metric scalars are always `f64` (they are statistics of integer counts,
//! not geometry); entropies are in nats.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::LabelMask;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Class-by-class counts; rows are ground truth, columns are prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    counts: Array2<u64>,
}

/// Accumulates a confusion matrix over `num_classes` classes, skipping
/// pixels whose ground-truth class is in `exclude`.
pub fn confusion(
    gt: &LabelMask,
    pred: &LabelMask,
    num_classes: usize,
    exclude: &[u8],
) -> Result<ConfusionMatrix> {
    if gt.dim() != pred.dim() {
        return Err(Error::dims(
            "confusion masks",
            format!("{:?}", gt.dim()),
            format!("{:?}", pred.dim()),
        ));
    }
    confusion_from_labels(gt.iter().copied(), pred.iter().copied(), num_classes, exclude)
}

/// Slice/iterator form of [`confusion`] for 3D point labels.
pub fn confusion_from_labels(
    gt: impl IntoIterator<Item = u8>,
    pred: impl IntoIterator<Item = u8>,
    num_classes: usize,
    exclude: &[u8],
) -> Result<ConfusionMatrix> {
    if num_classes == 0 {
        return Err(Error::InvalidArgument("num_classes must be positive".into()));
    }
    let mut counts = Array2::zeros((num_classes, num_classes));
    let mut gt_iter = gt.into_iter();
    let mut pred_iter = pred.into_iter();
    loop {
        match (gt_iter.next(), pred_iter.next()) {
            (None, None) => break,
            (Some(g), Some(p)) => {
                if g as usize >= num_classes || p as usize >= num_classes {
                    return Err(Error::InvalidArgument(format!(
                        "class id {} exceeds num_classes {num_classes}",
                        g.max(p)
                    )));
                }
                if exclude.contains(&g) {
                    continue;
                }
                counts[(g as usize, p as usize)] += 1;
            }
            _ => {
                return Err(Error::InvalidArgument(
                    "ground-truth and prediction lengths differ".into(),
                ))
            }
        }
    }
    Ok(ConfusionMatrix { counts })
}

impl ConfusionMatrix {
    /// Rebuilds a matrix from row-major counts (as produced by
    /// [`ConfusionMatrix::to_rows`]), e.g. to sum per-scan matrices.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<ConfusionMatrix> {
        let c = rows.len();
        if c == 0 {
            return Err(Error::InvalidArgument(
                "confusion matrix needs at least one class".into(),
            ));
        }
        let mut counts = Array2::zeros((c, c));
        for (g, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(Error::dims(format!("confusion row {g}"), c, row.len()));
            }
            for (p, &v) in row.iter().enumerate() {
                counts[(g, p)] = v;
            }
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.nrows()
    }

    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[(gt, pred)]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.counts[(c, c)]
    }

    pub fn false_positives(&self, c: usize) -> u64 {
        self.counts.column(c).sum() - self.counts[(c, c)]
    }

    pub fn false_negatives(&self, c: usize) -> u64 {
        self.counts.row(c).sum() - self.counts[(c, c)]
    }

    /// Row-major counts, for serialization.
    pub fn to_rows(&self) -> Vec<Vec<u64>> {
        (0..self.num_classes())
            .map(|g| self.counts.row(g).to_vec())
            .collect()
    }
}

/// Global and per-class segmentation quality derived from a confusion
/// matrix. Classes that appear in neither ground truth nor prediction have
/// no defined score and are reported as `None`, excluded from the means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub overall_accuracy: f64,
    /// Mean per-class recall over classes with ground-truth support.
    pub mean_accuracy: f64,
    pub per_class_recall: Vec<Option<f64>>,
    pub per_class_iou: Vec<Option<f64>>,
    /// Mean IoU over classes with support or predictions.
    pub mean_iou: f64,
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<SegMetrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::DegenerateInput(
            "confusion matrix holds no observations".into(),
        ));
    }
    let c = cm.num_classes();
    let mut per_class_recall = Vec::with_capacity(c);
    let mut per_class_iou = Vec::with_capacity(c);
    let mut trace = 0u64;
    for k in 0..c {
        let tp = cm.true_positives(k);
        let fp = cm.false_positives(k);
        let fn_ = cm.false_negatives(k);
        trace += tp;
        per_class_recall.push(if tp + fn_ > 0 {
            Some(tp as f64 / (tp + fn_) as f64)
        } else {
            None
        });
        per_class_iou.push(if tp + fp + fn_ > 0 {
            Some(tp as f64 / (tp + fp + fn_) as f64)
        } else {
            None
        });
    }
    let mean = |v: &[Option<f64>]| {
        let defined: Vec<f64> = v.iter().flatten().copied().collect();
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    Ok(SegMetrics {
        overall_accuracy: trace as f64 / total as f64,
        mean_accuracy: mean(&per_class_recall),
        per_class_recall,
        per_class_iou: per_class_iou.clone(),
        mean_iou: mean(&per_class_iou),
    })
}

/// Aligned plain-text rendering of [`SegMetrics`]; `class_names` may be
/// shorter than the class count (missing names fall back to `class <id>`).
pub fn metrics_table(m: &SegMetrics, class_names: &[String]) -> String {
    let name = |c: usize| {
        class_names
            .get(c)
            .cloned()
            .unwrap_or_else(|| format!("class {c}"))
    };
    let width = (0..m.per_class_iou.len())
        .map(|c| name(c).len())
        .max()
        .unwrap_or(5)
        .max(5);
    let fmt = |v: &Option<f64>| match v {
        Some(x) => format!("{x:.4}"),
        None => "--".to_string(),
    };
    let mut out = String::new();
    out.push_str(&format!("{:<width$}  {:>8}  {:>8}\n", "class", "recall", "IoU"));
    for c in 0..m.per_class_iou.len() {
        out.push_str(&format!(
            "{:<width$}  {:>8}  {:>8}\n",
            name(c),
            fmt(&m.per_class_recall[c]),
            fmt(&m.per_class_iou[c]),
        ));
    }
    out.push_str(&format!(
        "oAcc {:.4}  mAcc {:.4}  mIoU {:.4}\n",
        m.overall_accuracy, m.mean_accuracy, m.mean_iou
    ));
    out
}

/// Shannon entropy (nats) of the histogram of `map` over `bins` equal-width
/// bins spanning the observed [min, max]. Only pixels where `valid` is true
/// count; pass `None` to use every pixel. A constant map has entropy 0.
pub fn map_entropy<T: Real>(
    map: &Array2<T>,
    valid: Option<&Array2<bool>>,
    bins: usize,
) -> Result<f64> {
    if bins < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 histogram bins, got {bins}"
        )));
    }
    if let Some(v) = valid {
        if v.dim() != map.dim() {
            return Err(Error::dims(
                "entropy validity mask",
                format!("{:?}", map.dim()),
                format!("{:?}", v.dim()),
            ));
        }
    }
    let values: Vec<f64> = map
        .indexed_iter()
        .filter(|(idx, _)| valid.map_or(true, |v| v[*idx]))
        .map(|(_, &x)| x.as_f64())
        .collect();
    if values.is_empty() {
        return Err(Error::DegenerateInput(
            "entropy of an all-void map is undefined".into(),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("map values must be finite".into()));
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Ok(0.0);
    }
    let width = (max - min) / bins as f64;
    let mut histogram = vec![0u64; bins];
    for v in &values {
        let k = (((v - min) / width) as usize).min(bins - 1);
        histogram[k] += 1;
    }
    let n = values.len() as f64;
    let mut entropy = 0.0;
    for &count in &histogram {
        if count > 0 {
            let p = count as f64 / n;
            entropy -= p * p.ln();
        }
    }
    Ok(entropy)
}

/// One operating point of a precision-recall sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PRPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision-recall curve over descending thresholds; recall never
/// decreases along `points`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PRCurve {
    pub points: Vec<PRPoint>,
}

/// Sweeps every unique score value as a threshold (predicting "error" where
/// `score >= threshold`) and measures precision/recall against `error_mask`.
///
/// The first returned point is an anchor at recall 0 with the precision of
/// the strictest threshold (its threshold is `+inf`), so the curve always
/// starts at zero recall and integrates cleanly.
pub fn pr_curve<T: Real>(score: &Array2<T>, error_mask: &Array2<bool>) -> Result<PRCurve> {
    if score.dim() != error_mask.dim() {
        return Err(Error::dims(
            "PR masks",
            format!("{:?}", score.dim()),
            format!("{:?}", error_mask.dim()),
        ));
    }
    let positives = error_mask.iter().filter(|&&e| e).count();
    if positives == 0 {
        return Err(Error::DegenerateInput(
            "error mask has no positive pixels".into(),
        ));
    }
    if score.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("scores must be finite".into()));
    }
    let mut ranked: Vec<(T, bool)> = score
        .iter()
        .copied()
        .zip(error_mask.iter().copied())
        .collect();
    ranked.sort_unstable_by(|a, b| b.0.partial_cmp(&a.0).expect("finite scores"));
    let mut points = Vec::new();
    let mut tp = 0u64;
    for (k, &(value, is_error)) in ranked.iter().enumerate() {
        if is_error {
            tp += 1;
        }
        // close the group when the next score differs
        if k + 1 < ranked.len() && ranked[k + 1].0 == value {
            continue;
        }
        points.push(PRPoint {
            threshold: value.as_f64(),
            precision: tp as f64 / (k + 1) as f64,
            recall: tp as f64 / positives as f64,
        });
    }
    let anchor = PRPoint {
        threshold: f64::INFINITY,
        precision: points[0].precision,
        recall: 0.0,
    };
    points.insert(0, anchor);
    Ok(PRCurve { points })
}

/// Area under a PR curve as the right-Riemann sum
/// `sum_j (R_{j+1} - R_j) * P_{j+1}` over consecutive points.
pub fn auprc(curve: &PRCurve) -> Result<f64> {
    if curve.points.len() < 2 {
        return Err(Error::InvalidArgument(
            "AUPRC needs at least two curve points".into(),
        ));
    }
    let mut area = 0.0;
    for pair in curve.points.windows(2) {
        area += (pair[1].recall - pair[0].recall) * pair[1].precision;
    }
    Ok(area)
}

/// CSV rendering of a PR curve with a `threshold,precision,recall` header.
pub fn pr_curve_csv(curve: &PRCurve) -> String {
    let mut out = String::from("threshold,precision,recall\n");
    for p in &curve.points {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.precision, p.recall));
    }
    out
}
