use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ClassSchema;
use crate::mask::{LabelMask, MaskError};

/// Per-class pixel confusion counts, accumulated over one or more masks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    #[serde(rename = "fn")]
    pub fn_: Vec<u64>,
}

impl ConfusionCounts {
    pub fn new(num_classes: usize) -> Self {
        Self {
            tp: vec![0; num_classes],
            fp: vec![0; num_classes],
            fn_: vec![0; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.tp.len()
    }

    pub fn add(&mut self, pred: &LabelMask, gt: &LabelMask) -> Result<(), MaskError> {
        gt.same_size(pred.width(), pred.height())?;
        let c = self.num_classes();
        pred.check_labels(c)?;
        gt.check_labels(c)?;
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            if p == g {
                self.tp[p as usize] += 1;
            } else {
                self.fp[p as usize] += 1;
                self.fn_[g as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        for c in 0..self.num_classes().min(other.num_classes()) {
            self.tp[c] += other.tp[c];
            self.fp[c] += other.fp[c];
            self.fn_[c] += other.fn_[c];
        }
    }

    /// `(TP, TP + FP + FN)` for class `c`.
    pub fn ratio(&self, c: usize) -> (u64, u64) {
        (self.tp[c], self.tp[c] + self.fp[c] + self.fn_[c])
    }

    /// Classes entering the mean: nonzero union, background optional.
    pub fn included(&self, include_background: bool) -> Vec<usize> {
        (0..self.num_classes())
            .filter(|&c| include_background || c != 0)
            .filter(|&c| self.ratio(c).1 > 0)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoUReport {
    pub per_class_iou: BTreeMap<String, f64>,
    pub mean_iou: f64,
    pub include_background: bool,
    pub counts: ConfusionCounts,
}

impl IoUReport {
    pub fn from_counts(counts: ConfusionCounts, schema: &ClassSchema, include_background: bool) -> Self {
        let per_class_iou: BTreeMap<String, f64> = counts
            .included(include_background)
            .into_iter()
            .map(|c| {
                let (tp, union) = counts.ratio(c);
                let label = schema.label(c as u8).unwrap_or("?").to_owned();
                (label, tp as f64 / union as f64)
            })
            .collect();
        let mean_iou = if per_class_iou.is_empty() {
            0.0
        } else {
            per_class_iou.values().sum::<f64>() / per_class_iou.len() as f64
        };
        Self {
            per_class_iou,
            mean_iou,
            include_background,
            counts,
        }
    }
}

/// Mean IoU of `pred` against `gt`, background excluded.
pub fn compute_iou(pred: &LabelMask, gt: &LabelMask, schema: &ClassSchema) -> Result<IoUReport, MaskError> {
    compute_iou_with(pred, gt, schema, false)
}

pub fn compute_iou_with(
    pred: &LabelMask,
    gt: &LabelMask,
    schema: &ClassSchema,
    include_background: bool,
) -> Result<IoUReport, MaskError> {
    let mut counts = ConfusionCounts::new(schema.num_classes());
    counts.add(pred, gt)?;
    Ok(IoUReport::from_counts(counts, schema, include_background))
}
