//! Evaluation harness: segmentation IoU tables and function-mapping accuracy
//! trials, bundled into a reproducible report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::Category;
use crate::mapping::{build_overlay, map_functions, mapping_accuracy, AccuracyReport, MapContext, MappingError, MappingResult};
use crate::mask::{LabelMask, MaskError};
use crate::provider::{params, Capability, Gateway, MockRule};
use crate::segmentation::{
    regions, ClassSchema, ConfusionCounts, IoUReport, PaletteSegmenter, Sample, SegmentError, Segmenter,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
    #[error("no masks to evaluate")]
    Empty,
    #[error("{0} has no counterpart in the ground-truth directory")]
    Unmatched(String),
}

/// Pooled IoU of `seg` over `samples`; predictions are compared at the
/// ground-truth resolution.
pub fn evaluate_segmenter(
    seg: &dyn Segmenter,
    samples: &[Sample],
    include_background: bool,
) -> Result<IoUReport, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut counts = ConfusionCounts::new(seg.schema().num_classes());
    for s in samples {
        let pred = seg.predict(&s.image).resize_nearest(s.mask.width(), s.mask.height());
        counts.add(&pred, &s.mask)?;
    }
    Ok(IoUReport::from_counts(counts, seg.schema(), include_background))
}

/// Pooled IoU of every `*.png` label mask in `pred_dir` against the file of
/// the same name in `gt_dir`.
pub fn evaluate_mask_dirs(
    pred_dir: &Path,
    gt_dir: &Path,
    schema: &ClassSchema,
    include_background: bool,
) -> Result<IoUReport, EvalError> {
    let io = |p: &Path, e| EvalError::Io(p.display().to_string(), e);
    let mut names: Vec<_> = std::fs::read_dir(pred_dir)
        .map_err(|e| io(pred_dir, e))?
        .filter_map(Result::ok)
        .map(|e| e.file_name())
        .filter(|n| n.to_string_lossy().ends_with(".png"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut counts = ConfusionCounts::new(schema.num_classes());
    for name in names {
        let (p, g) = (pred_dir.join(&name), gt_dir.join(&name));
        if !g.exists() {
            return Err(EvalError::Unmatched(name.to_string_lossy().into_owned()));
        }
        let pred = LabelMask::from_png(&std::fs::read(&p).map_err(|e| io(&p, e))?)?;
        let gt = LabelMask::from_png(&std::fs::read(&g).map_err(|e| io(&g, e))?)?;
        pred.check_labels(schema.num_classes())?;
        gt.check_labels(schema.num_classes())?;
        counts.add(&pred, &gt)?;
    }
    Ok(IoUReport::from_counts(counts, schema, include_background))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingTrialConfig {
    pub category: Category,
    pub trials: u32,
    /// Side length of the rendered fixtures.
    pub size: u32,
    pub seed: u64,
}

impl MappingTrialConfig {
    pub fn new(category: Category) -> Self {
        Self {
            category,
            trials: 8,
            size: 128,
            seed: 0,
        }
    }
}

/// Map the category's evaluation functions onto `trials` procedurally
/// rendered fixtures (palette segmentation, colour overlay, one vision query
/// per function). Trial `t` renders with seed `seed + t`.
pub fn run_mapping_trials(gw: &Gateway, cfg: &MappingTrialConfig) -> Result<Vec<MappingResult>, EvalError> {
    let seg = PaletteSegmenter::for_category(cfg.category);
    let functions: Vec<String> = cfg.category.eval_functions().iter().map(|f| f.to_string()).collect();
    (0..cfg.trials as u64)
        .map(|t| {
            let (image, _) = cfg.category.render(cfg.size, cfg.seed + t);
            let overlay = build_overlay(&image, &regions(&seg.predict(&image), seg.schema())?)?;
            let ctx = MapContext {
                category: cfg.category.slug(),
                trial: Some(t),
            };
            Ok(map_functions(gw, &overlay.image, &overlay.legend, &functions, &ctx)?)
        })
        .collect()
}

/// A mock rule making `function` unmappable in trial `trial` only.
pub fn planted_error_rule(function: &str, trial: u64) -> MockRule {
    MockRule::text(Capability::Vision, "none")
        .when_param(params::FUNCTION, function)
        .when_param(params::TRIAL, trial)
}

pub fn gold_for(category: Category) -> BTreeMap<String, String> {
    category
        .gold_mapping()
        .into_iter()
        .map(|(f, c)| (f.to_owned(), c.to_owned()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub category: String,
    pub seed: u64,
    /// Everything needed to regenerate the report.
    pub config: serde_json::Value,
    pub iou: Option<IoUReport>,
    pub mapping: Option<AccuracyReport>,
}

impl EvalReport {
    pub fn mapping(
        gw: &Gateway,
        cfg: &MappingTrialConfig,
        gold: &BTreeMap<String, String>,
        extra: serde_json::Value,
    ) -> Result<Self, EvalError> {
        let trials = run_mapping_trials(gw, cfg)?;
        Ok(Self {
            category: cfg.category.slug().to_owned(),
            seed: cfg.seed,
            config: serde_json::json!({ "trials": cfg, "extra": extra }),
            iou: None,
            mapping: Some(mapping_accuracy(&trials, gold)?),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text tables for terminal output.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "category: {}  seed: {}", self.category, self.seed).unwrap();
        if let Some(iou) = &self.iou {
            let width = iou.per_class_iou.keys().map(String::len).max().unwrap_or(5).max(5);
            writeln!(out, "\n{:<width$}  IoU", "class").unwrap();
            for (class, v) in &iou.per_class_iou {
                writeln!(out, "{class:<width$}  {v:.4}").unwrap();
            }
            writeln!(out, "{:<width$}  {:.4}", "mean", iou.mean_iou).unwrap();
        }
        if let Some(m) = &self.mapping {
            let width = m.per_function.keys().map(String::len).max().unwrap_or(8).max(8);
            writeln!(out, "\n{:<width$}  accuracy (%)  [{} trials]", "function", m.trials).unwrap();
            for (f, v) in &m.per_function {
                writeln!(out, "{f:<width$}  {v:.1}").unwrap();
            }
            writeln!(out, "{:<width$}  {:.1}", "overall", m.overall).unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::MockScript;
    use crate::segmentation::synthetic_shapes;

    #[test]
    fn oracle_mapping_is_perfect() {
        let gw = Gateway::mock(7);
        for cat in Category::ALL {
            let cfg = MappingTrialConfig::new(cat);
            let report = EvalReport::mapping(&gw, &cfg, &gold_for(cat), serde_json::Value::Null).unwrap();
            let m = report.mapping.unwrap();
            assert_eq!(m.per_function.len(), 7);
            assert!(m.per_function.values().all(|v| *v == 100.0), "{cat}: {m:?}");
        }
    }

    #[test]
    fn planted_error_gives_87_5() {
        let gw = Gateway::mock_with_script(MockScript::new(7).rule(planted_error_rule("hip", 3)));
        let cfg = MappingTrialConfig::new(Category::RobotDog);
        let report = EvalReport::mapping(&gw, &cfg, &gold_for(Category::RobotDog), serde_json::Value::Null).unwrap();
        let m = report.mapping.as_ref().unwrap();
        assert_eq!(m.per_function["hip"], 87.5);
        assert!(m.per_function.iter().filter(|(f, _)| *f != "hip").all(|(_, v)| *v == 100.0));
        let table = report.render_table();
        assert!(table.contains("87.5"));
        let again = EvalReport::mapping(&gw, &cfg, &gold_for(Category::RobotDog), serde_json::Value::Null).unwrap();
        assert_eq!(again.to_json(), report.to_json());
    }

    #[test]
    fn identical_dirs_score_one() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..3 {
            let (_, mask) = synthetic_shapes(32, i);
            std::fs::write(dir.path().join(format!("m{i}.png")), mask.to_png()).unwrap();
        }
        let schema = crate::segmentation::shapes_schema();
        let r = evaluate_mask_dirs(dir.path(), dir.path(), &schema, false).unwrap();
        assert_eq!(r.mean_iou, 1.0);
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(evaluate_mask_dirs(empty.path(), dir.path(), &schema, false), Err(EvalError::Empty)));
        assert!(matches!(
            evaluate_mask_dirs(dir.path(), empty.path(), &schema, false),
            Err(EvalError::Unmatched(_))
        ));
    }

    #[test]
    fn palette_segmenter_is_exact_on_fixtures() {
        let samples: Vec<Sample> = (0..3)
            .map(|i| {
                let (image, mask) = Category::Car.render(64, i);
                Sample {
                    id: format!("c{i}"),
                    image,
                    mask,
                }
            })
            .collect();
        let r = evaluate_segmenter(&PaletteSegmenter::for_category(Category::Car), &samples, false).unwrap();
        assert_eq!(r.mean_iou, 1.0);
        let report = EvalReport {
            category: "car".into(),
            seed: 0,
            config: serde_json::Value::Null,
            iou: Some(r),
            mapping: None,
        };
        let table = report.render_table();
        let mean = table.lines().find(|l| l.starts_with("mean ")).unwrap();
        assert!(mean.ends_with(" 1.0000"), "{table}");
    }
}
