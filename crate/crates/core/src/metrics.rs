//! Confusion matrices and background-excluded mean IoU.
//!
//! Background (class 0) has a row and column like every other class, but its
//! own IoU never enters the mean: pixels confused with background only show up
//! as false positives or false negatives of foreground classes.

use std::io::Write;

use crate::error::{Error, Result};
use crate::types::{ClassMask, IGNORE_LABEL};

/// `(C + 1) x (C + 1)` pixel counts; rows are ground truth, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

/// Per-class counts for one foreground class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassIou {
    pub class_id: usize,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    /// `None` when the class never appears in ground truth or prediction.
    pub iou: Option<f64>,
}

impl ConfusionMatrix {
    /// All-zero matrix over background plus `num_classes` foreground classes.
    pub fn zeros(num_classes: usize) -> Self {
        let n = num_classes + 1;
        Self {
            num_classes,
            counts: vec![0; n * n],
        }
    }

    pub fn from_counts(num_classes: usize, counts: Vec<u64>) -> Result<Self> {
        let n = num_classes + 1;
        if counts.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "{} counts for a {n}x{n} confusion matrix",
                counts.len()
            )));
        }
        Ok(Self {
            num_classes,
            counts,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * (self.num_classes + 1) + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn add(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::DimensionMismatch(format!(
                "merging confusion matrices over {} and {} classes",
                self.num_classes, other.num_classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// IoU bookkeeping for each foreground class `1..=C`.
    pub fn class_ious(&self) -> Vec<ClassIou> {
        let n = self.num_classes + 1;
        (1..n)
            .map(|c| {
                let tp = self.get(c, c);
                let fp = (0..n).filter(|&g| g != c).map(|g| self.get(g, c)).sum();
                let fn_ = (0..n).filter(|&p| p != c).map(|p| self.get(c, p)).sum();
                let denom = tp + fp + fn_;
                ClassIou {
                    class_id: c,
                    tp,
                    fp,
                    fn_,
                    iou: (denom > 0).then(|| tp as f64 / denom as f64),
                }
            })
            .collect()
    }
}

/// Counts `(gt, pred)` pairs over every pixel whose ground truth is not ignored.
pub fn confusion(pred: &ClassMask, gt: &ClassMask, num_classes: usize) -> Result<ConfusionMatrix> {
    if pred.size() != gt.size() {
        return Err(Error::MaskSizeMismatch {
            expected: gt.size(),
            found: pred.size(),
        });
    }
    let mut cm = ConfusionMatrix::zeros(num_classes);
    let n = num_classes + 1;
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        if g == IGNORE_LABEL {
            continue;
        }
        for label in [g, p] {
            if label as usize > num_classes {
                return Err(Error::InvalidLabel { label, num_classes });
            }
        }
        cm.counts[g as usize * n + p as usize] += 1;
    }
    Ok(cm)
}

/// Elementwise sum of equally-sized matrices.
pub fn merge(cms: &[ConfusionMatrix]) -> Result<ConfusionMatrix> {
    let first = cms
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to merge".into()))?;
    let mut out = ConfusionMatrix::zeros(first.num_classes);
    for cm in cms {
        out.add(cm)?;
    }
    Ok(out)
}

/// Mean IoU over foreground classes that occur in ground truth or prediction.
pub fn miou(cm: &ConfusionMatrix) -> Result<f64> {
    let ious: Vec<f64> = cm.class_ious().into_iter().filter_map(|c| c.iou).collect();
    if ious.is_empty() {
        return Err(Error::UndefinedMiou);
    }
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}

pub fn episode_miou(pred: &ClassMask, gt: &ClassMask, num_classes: usize) -> Result<f64> {
    miou(&confusion(pred, gt, num_classes)?)
}

/// Writes `class_id,tp,fp,fn,iou` rows followed by a final `mIoU` row.
///
/// Classes absent from both sides are listed with an empty IoU cell.
pub fn write_iou_csv<W: Write>(cm: &ConfusionMatrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["class_id", "tp", "fp", "fn", "iou"])?;
    for c in cm.class_ious() {
        w.write_record([
            c.class_id.to_string(),
            c.tp.to_string(),
            c.fp.to_string(),
            c.fn_.to_string(),
            c.iou.map(|v| format!("{v:.6}")).unwrap_or_default(),
        ])?;
    }
    let m = miou(cm)
        .map(|v| format!("{v:.6}"))
        .unwrap_or_else(|_| "NA".into());
    w.write_record(["mIoU", "", "", "", m.as_str()])?;
    w.flush()?;
    Ok(())
}
