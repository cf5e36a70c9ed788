//! Change-detection metrics over binary masks with ignore regions.
//!
//! Ratios with a zero denominator are reported as 0. The one exception is
//! IoU of a class absent from both prediction and ground truth, which is 1.

use serde::{Deserialize, Serialize};

use crate::mask::{BinaryMask, Label, LabelMask};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("prediction is {pred}, ground truth is {gt}")]
    Dimension { pred: String, gt: String },
    #[error("no evaluated pixels")]
    EmptyEvaluation,
    #[error("nothing to aggregate")]
    EmptyAggregate,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationScheme {
    MeanOfVideos,
    PooledCounts,
}

impl Default for AggregationScheme {
    fn default() -> Self {
        AggregationScheme::MeanOfVideos
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub recall: f64,
    pub precision: f64,
    pub specificity: f64,
    pub fpr: f64,
    pub fnr: f64,
    /// Percentage, in `[0, 100]`.
    pub pwc: f64,
    pub f_measure: f64,
    pub mcc: f64,
    pub iou_fg: f64,
    pub iou_bg: f64,
    pub miou: f64,
    pub auc: Option<f64>,
    /// Summed counts behind the report.
    pub counts: ConfusionCounts,
}

/// Table column headers in output order.
pub const TABLE_COLUMNS: [&str; 8] = ["FPR", "FNR", "Recall", "Precision", "PWC", "F-Measure", "MCC", "mIoU"];
pub const AUC_COLUMN: &str = "AUC";

impl MetricsReport {
    /// Values in [`TABLE_COLUMNS`] order.
    pub fn table_values(&self) -> [f64; 8] {
        [
            self.fpr,
            self.fnr,
            self.recall,
            self.precision,
            self.pwc,
            self.f_measure,
            self.mcc,
            self.miou,
        ]
    }
}

fn dims(mask_w: usize, mask_h: usize) -> String {
    format!("{mask_w}x{mask_h}")
}

fn check_shape(pw: usize, ph: usize, gt: &LabelMask) -> Result<(), MetricsError> {
    if pw != gt.width || ph != gt.height {
        return Err(MetricsError::Dimension {
            pred: dims(pw, ph),
            gt: dims(gt.width, gt.height),
        });
    }
    Ok(())
}

pub fn confusion(pred: &BinaryMask, gt: &LabelMask) -> Result<ConfusionCounts, MetricsError> {
    check_shape(pred.width, pred.height, gt)?;
    let mut c = ConfusionCounts::default();
    for (&p, &l) in pred.bits.iter().zip(&gt.labels) {
        match (l, p) {
            (Label::Ignore, _) => {}
            (Label::Foreground, true) => c.tp += 1,
            (Label::Foreground, false) => c.fn_ += 1,
            (Label::Background, true) => c.fp += 1,
            (Label::Background, false) => c.tn += 1,
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn iou(inter: u64, union: u64) -> f64 {
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn mcc(c: &ConfusionCounts) -> f64 {
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if den == 0.0 {
        return 0.0;
    }
    (tp * tn - fp * fn_) / den.sqrt()
}

pub fn f_measure(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Every count-based metric; `auc` is left empty.
pub fn derive(c: &ConfusionCounts) -> Result<MetricsReport, MetricsError> {
    let total = c.total();
    if total == 0 {
        return Err(MetricsError::EmptyEvaluation);
    }
    let recall = ratio(c.tp, c.tp + c.fn_);
    let precision = ratio(c.tp, c.tp + c.fp);
    let iou_fg = iou(c.tp, c.tp + c.fp + c.fn_);
    let iou_bg = iou(c.tn, c.tn + c.fn_ + c.fp);
    Ok(MetricsReport {
        recall,
        precision,
        specificity: ratio(c.tn, c.tn + c.fp),
        fpr: ratio(c.fp, c.fp + c.tn),
        fnr: ratio(c.fn_, c.tp + c.fn_),
        pwc: ratio(100 * (c.fp + c.fn_), total),
        f_measure: f_measure(precision, recall),
        mcc: mcc(c),
        iou_fg,
        iou_bg,
        miou: (iou_fg + iou_bg) / 2.0,
        auc: None,
        counts: *c,
    })
}

/// `(iou_fg, iou_bg, miou)`.
pub fn miou(pred: &BinaryMask, gt: &LabelMask) -> Result<(f64, f64, f64), MetricsError> {
    let c = confusion(pred, gt)?;
    let fg = iou(c.tp, c.tp + c.fp + c.fn_);
    let bg = iou(c.tn, c.tn + c.fn_ + c.fp);
    Ok((fg, bg, (fg + bg) / 2.0))
}

/// Probability that a random foreground pixel scores above a random
/// background pixel (ties count half). `None` unless both classes occur.
pub fn auc(scores: &[f32], gt: &LabelMask) -> Result<Option<f64>, MetricsError> {
    if scores.len() != gt.labels.len() {
        return Err(MetricsError::Dimension {
            pred: format!("{} scores", scores.len()),
            gt: dims(gt.width, gt.height),
        });
    }
    let mut pts: Vec<(f32, bool)> = scores
        .iter()
        .zip(&gt.labels)
        .filter(|(_, &l)| l != Label::Ignore)
        .map(|(&s, &l)| (s, l == Label::Foreground))
        .collect();
    let n_pos = pts.iter().filter(|p| p.1).count();
    let n_neg = pts.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Sum of 1-based ranks of positives, ties sharing the average rank.
    let mut rank_sum = 0.0f64;
    let mut i = 0;
    while i < pts.len() {
        let mut j = i;
        while j < pts.len() && pts[j].0 == pts[i].0 {
            j += 1;
        }
        let avg = (i + 1 + j) as f64 / 2.0;
        let pos = pts[i..j].iter().filter(|p| p.1).count();
        rank_sum += avg * pos as f64;
        i = j;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    Ok(Some((rank_sum - np * (np + 1.0) / 2.0) / (np * nn)))
}

/// One frame's counts and AUC.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameEvaluation {
    pub counts: ConfusionCounts,
    pub auc: Option<f64>,
}

pub fn evaluate_frame(pred: &BinaryMask, scores: &[f32], gt: &LabelMask) -> Result<FrameEvaluation, MetricsError> {
    let counts = confusion(pred, gt)?;
    if counts.tp + counts.fp + counts.fn_ == 0 || counts.tn + counts.fp + counts.fn_ == 0 {
        log::debug!("frame with an empty class: IoU of that class reported as 1");
    }
    Ok(FrameEvaluation {
        counts,
        auc: auc(scores, gt)?,
    })
}

/// Report for one video: metrics of the summed frame counts, AUC averaged
/// over the frames where it is defined.
pub fn video_report(frames: &[FrameEvaluation]) -> Result<MetricsReport, MetricsError> {
    if frames.is_empty() {
        return Err(MetricsError::EmptyAggregate);
    }
    let mut total = ConfusionCounts::default();
    for f in frames {
        total.add(&f.counts);
    }
    let mut report = derive(&total)?;
    report.auc = mean_option(frames.iter().map(|f| f.auc));
    Ok(report)
}

fn mean_option(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

pub fn aggregate(reports: &[MetricsReport], scheme: AggregationScheme) -> Result<MetricsReport, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::EmptyAggregate);
    }
    let mut counts = ConfusionCounts::default();
    for r in reports {
        counts.add(&r.counts);
    }
    let auc = mean_option(reports.iter().map(|r| r.auc));
    match scheme {
        AggregationScheme::PooledCounts => {
            let mut out = derive(&counts)?;
            out.auc = auc;
            Ok(out)
        }
        AggregationScheme::MeanOfVideos => {
            let n = reports.len() as f64;
            let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
            Ok(MetricsReport {
                recall: mean(|r| r.recall),
                precision: mean(|r| r.precision),
                specificity: mean(|r| r.specificity),
                fpr: mean(|r| r.fpr),
                fnr: mean(|r| r.fnr),
                pwc: mean(|r| r.pwc),
                f_measure: mean(|r| r.f_measure),
                mcc: mean(|r| r.mcc),
                iou_fg: mean(|r| r.iou_fg),
                iou_bg: mean(|r| r.iou_bg),
                miou: mean(|r| r.miou),
                auc,
                counts,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    const F: Label = Label::Foreground;
    const B: Label = Label::Background;
    const I: Label = Label::Ignore;

    fn gt(labels: &[Label]) -> LabelMask {
        LabelMask::new(labels.len(), 1, labels.to_vec())
    }

    fn pred(bits: &[bool]) -> BinaryMask {
        BinaryMask::new(bits.len(), 1, bits.to_vec())
    }

    fn counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> ConfusionCounts {
        ConfusionCounts { tp, fp, tn, fn_ }
    }

    #[test]
    fn perfect_all_foreground() {
        let g = LabelMask::filled(2, 2, F);
        let c = confusion(&g.foreground(), &g).unwrap();
        assert_eq!(c, counts(4, 0, 0, 0));
    }

    #[test]
    fn hand_counted_four_pixels() {
        let c = confusion(&pred(&[true, true, true, false]), &gt(&[F, B, I, F])).unwrap();
        assert_eq!(c, counts(1, 1, 0, 1));
    }

    #[test]
    fn complement_has_no_true_cells() {
        let g = gt(&[F, B, B, F, B]);
        let c = confusion(&g.foreground().complement(), &g).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
    }

    #[test]
    fn shape_mismatch() {
        let g = LabelMask::filled(2, 2, F);
        assert!(matches!(
            confusion(&pred(&[true; 4]), &g),
            Err(MetricsError::Dimension { .. })
        ));
    }

    #[test]
    fn mcc_hand_value() {
        let r = derive(&counts(4, 1, 3, 2)).unwrap();
        assert!((r.mcc - 10.0 / 600f64.sqrt()).abs() < 1e-12);
        assert!((r.mcc - 0.408248).abs() < 1e-6);
    }

    #[test]
    fn perfect_classifier() {
        let r = derive(&counts(5, 0, 5, 0)).unwrap();
        assert_eq!((r.mcc, r.pwc, r.f_measure, r.miou), (1.0, 0.0, 1.0, 1.0));
    }

    #[test]
    fn zero_denominators_are_zero() {
        let r = derive(&counts(0, 0, 10, 0)).unwrap();
        assert_eq!((r.recall, r.precision, r.f_measure, r.mcc), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(r.iou_fg, 1.0);
        assert_eq!(derive(&counts(0, 0, 0, 0)), Err(MetricsError::EmptyEvaluation));
    }

    #[test]
    fn miou_examples() {
        let g = LabelMask::new(2, 2, vec![F, F, B, B]);
        let p = BinaryMask::new(2, 2, vec![true; 4]);
        assert_eq!(miou(&p, &g).unwrap(), (0.5, 0.0, 0.25));
        let bg = LabelMask::filled(2, 2, B);
        assert_eq!(miou(&bg.foreground(), &bg).unwrap().2, 1.0);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.4], &gt(&[F, B])).unwrap(), Some(1.0));
        assert_eq!(auc(&[0.3; 4], &gt(&[F, B, F, B])).unwrap(), Some(0.5));
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &gt(&[B, B, F, F])).unwrap(), Some(0.75));
        assert_eq!(auc(&[0.1, 0.4], &gt(&[B, B])).unwrap(), None);
    }

    fn report_with(f: f64, c: ConfusionCounts) -> MetricsReport {
        let mut r = derive(&c).unwrap();
        r.f_measure = f;
        r
    }

    #[test]
    fn aggregation_schemes() {
        let one = derive(&counts(3, 1, 5, 2)).unwrap();
        for s in [AggregationScheme::MeanOfVideos, AggregationScheme::PooledCounts] {
            let a = aggregate(std::slice::from_ref(&one), s).unwrap();
            assert!((a.recall - one.recall).abs() < 1e-15 && (a.mcc - one.mcc).abs() < 1e-15);
        }
        let two = [
            report_with(0.9, counts(1, 0, 1, 0)),
            report_with(1.0, counts(1, 0, 1, 0)),
        ];
        let m = aggregate(&two, AggregationScheme::MeanOfVideos).unwrap();
        assert!((m.f_measure - 0.95).abs() < 1e-12);

        let a = derive(&counts(1, 0, 99, 0)).unwrap();
        let b = derive(&counts(50, 0, 0, 50)).unwrap();
        let mean = aggregate(&[a.clone(), b.clone()], AggregationScheme::MeanOfVideos).unwrap();
        let pooled = aggregate(&[a, b], AggregationScheme::PooledCounts).unwrap();
        assert!((mean.recall - 0.75).abs() < 1e-12);
        assert!((pooled.recall - 51.0 / 101.0).abs() < 1e-12);
        assert_eq!(aggregate(&[], AggregationScheme::PooledCounts), Err(MetricsError::EmptyAggregate));
    }

    #[test]
    fn video_report_sums_frames() {
        let frames = vec![
            FrameEvaluation {
                counts: counts(1, 0, 0, 0),
                auc: Some(1.0),
            },
            FrameEvaluation {
                counts: counts(0, 0, 0, 1),
                auc: None,
            },
        ];
        let r = video_report(&frames).unwrap();
        assert_eq!(r.recall, 0.5);
        assert_eq!(r.auc, Some(1.0));
    }
}
