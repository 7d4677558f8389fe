//! Component-level edits: swap a function's solution for a recommended
//! alternative, or redraw a component by hand. Both paths end in a masked
//! inpaint of the component's (dilated) region.

use serde::{Deserialize, Serialize};

use crate::generation::{refine, GenerationError};
use crate::mapping::{ChartEntry, ComponentRegion, FunctionChart};
use crate::mask::BinaryMask;
use crate::model::{draw_strokes_over, Canvas, ConceptCandidate, RasterImage, SketchError, Stroke, TxId};
use crate::provider::templates::{EDIT_FUNCTION, VISIBILITY};
use crate::provider::{params, tasks, Capability, Gateway, ProviderError, ProviderRequest};

pub const DEFAULT_MARGIN: u32 = 8;

const VISIBILITY_SYSTEM: &str =
    "Start your answer with \"Yes\" or \"No\", then give a one-sentence reason.";

#[derive(Debug, thiserror::Error)]
pub enum EditError {
    #[error("{chosen:?} is not an alternative for {function:?}")]
    NotAnAlternative { function: String, chosen: String },
    #[error("component {0:?} has an empty region")]
    EmptyRegion(String),
    #[error("region is {0}x{1} but the image is {2}x{3}")]
    RegionSize(u32, u32, u32, u32),
    #[error("a sketch edit needs strokes or a description")]
    EmptySketchEdit,
    #[error(transparent)]
    Sketch(#[from] SketchError),
}

/// Dilate `region` with a `(2 * margin + 1)` square structuring element,
/// clipped to the mask bounds.
pub fn make_inpaint_mask(region: &BinaryMask, margin: u32) -> BinaryMask {
    let (w, h) = (region.width() as usize, region.height() as usize);
    let m = margin as usize;
    let dilate_line = |line: &[bool]| -> Vec<bool> {
        let mut prefix = vec![0u32; line.len() + 1];
        for (i, &b) in line.iter().enumerate() {
            prefix[i + 1] = prefix[i] + b as u32;
        }
        (0..line.len())
            .map(|i| prefix[(i + m + 1).min(line.len())] > prefix[i.saturating_sub(m)])
            .collect()
    };
    let mut rows = Vec::with_capacity(w * h);
    for row in region.bits().chunks(w.max(1)) {
        rows.extend(dilate_line(row));
    }
    let mut out = vec![false; w * h];
    for x in 0..w {
        let column: Vec<bool> = (0..h).map(|y| rows[y * w + x]).collect();
        for (y, on) in dilate_line(&column).into_iter().enumerate() {
            out[y * w + x] = on;
        }
    }
    BinaryMask::new(region.width(), region.height(), out).expect("same dimensions")
}

/// Copy of `image` with every pixel under `mask` set to opaque white.
pub fn white_out(image: &RasterImage, mask: &BinaryMask) -> RasterImage {
    image.map_pixels(|buf| {
        for (i, _) in mask.bits().iter().enumerate().filter(|(_, on)| **on) {
            buf[i * 4..i * 4 + 4].copy_from_slice(&[255; 4]);
        }
    })
}

/// `edited` inside `mask`, `base` everywhere else.
fn composite(base: &RasterImage, edited: &RasterImage, mask: &BinaryMask) -> RasterImage {
    base.map_pixels(|buf| {
        let src = edited.pixels();
        for (i, _) in mask.bits().iter().enumerate().filter(|(_, on)| **on) {
            buf[i * 4..i * 4 + 4].copy_from_slice(&src[i * 4..i * 4 + 4]);
        }
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisibilityVerdict {
    pub visible: bool,
    pub rationale: String,
}

impl VisibilityVerdict {
    /// A leading "yes"/"no" decides; anything else counts as visible.
    pub fn parse(answer: &str) -> Self {
        let first = answer
            .split(|c: char| !c.is_alphabetic())
            .find(|w| !w.is_empty())
            .unwrap_or_default()
            .to_lowercase();
        Self {
            visible: first != "no",
            rationale: answer.trim().to_owned(),
        }
    }
}

pub fn check_visibility(
    gw: &Gateway,
    image: &RasterImage,
    function: &str,
    category: &str,
) -> Result<VisibilityVerdict, ProviderError> {
    let prompt = gw.templates().render(VISIBILITY, &[]).map_err(|e| ProviderError::InvalidRequest(e.to_string()))?;
    let req = ProviderRequest::new(Capability::Vision, prompt)
        .image(image.clone())
        .param(params::TASK, tasks::VISIBILITY)
        .param(params::FUNCTION, function)
        .param(params::CATEGORY, category)
        .param(params::SYSTEM, format!("The function is \"{function}\". {VISIBILITY_SYSTEM}"));
    Ok(VisibilityVerdict::parse(gw.invoke(&req)?.require_text()?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EditKind {
    Recommendation,
    Sketch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EditStatus {
    Pending,
    Applied,
    MetadataOnly,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditTransaction {
    pub id: TxId,
    pub kind: EditKind,
    pub component: String,
    /// Empty for sketch edits.
    pub function: String,
    pub from_solution: String,
    /// The chosen alternative, or the refined prompt of a sketch edit.
    pub to_solution: String,
    pub verdict: Option<VisibilityVerdict>,
    pub inpaint_mask: Option<BinaryMask>,
    /// Prompt sent to the inpainter, when one was sent.
    pub prompt: Option<String>,
    pub base_version: u32,
    pub result_version: u32,
    pub status: EditStatus,
    pub error: Option<String>,
}

impl EditTransaction {
    pub fn pending(id: TxId, kind: EditKind, component: &str, base_version: u32) -> Self {
        Self {
            id,
            kind,
            component: component.to_owned(),
            function: String::new(),
            from_solution: String::new(),
            to_solution: String::new(),
            verdict: None,
            inpaint_mask: None,
            prompt: None,
            base_version,
            result_version: base_version,
            status: EditStatus::Pending,
            error: None,
        }
    }

    fn fail(mut self, error: impl ToString) -> Self {
        self.status = EditStatus::Failed;
        self.result_version = self.base_version;
        self.error = Some(error.to_string());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditOutcome {
    pub transaction: EditTransaction,
    /// The candidate after the edit; the input candidate when it failed.
    pub candidate: ConceptCandidate,
}

#[derive(Debug, Clone)]
pub struct EditOptions {
    pub tx_id: TxId,
    pub margin: u32,
}

impl EditOptions {
    pub fn new(tx_id: TxId) -> Self {
        Self {
            tx_id,
            margin: DEFAULT_MARGIN,
        }
    }
}

fn check_region(candidate: &ConceptCandidate, region: &ComponentRegion) -> Result<(), EditError> {
    let (iw, ih) = (candidate.image.width(), candidate.image.height());
    let (mw, mh) = (region.mask.width(), region.mask.height());
    if (mw, mh) != (iw, ih) {
        return Err(EditError::RegionSize(mw, mh, iw, ih));
    }
    if region.mask.is_empty() {
        return Err(EditError::EmptyRegion(region.class_label.clone()));
    }
    Ok(())
}

/// Inpaint `base` under `mask` and paste the result back over `original`, so
/// pixels outside the mask never change whatever the provider returns.
fn inpaint(
    gw: &Gateway,
    original: &RasterImage,
    base: &RasterImage,
    mask: &BinaryMask,
    prompt: &str,
    category: &str,
) -> Result<RasterImage, ProviderError> {
    let req = ProviderRequest::new(Capability::Inpaint, prompt)
        .image(base.clone())
        .mask(mask.clone())
        .param(params::CATEGORY, category);
    let mut resp = gw.invoke(&req)?;
    let edited = resp.images.swap_remove(0);
    if (edited.width(), edited.height()) != (original.width(), original.height()) {
        return Err(ProviderError::MalformedResponse {
            detail: format!(
                "inpainted image is {}x{}, expected {}x{}",
                edited.width(),
                edited.height(),
                original.width(),
                original.height()
            ),
            raw: String::new(),
        });
    }
    Ok(composite(original, &edited, mask))
}

fn with_solution(candidate: &ConceptCandidate, function: &str, solution: &str) -> ConceptCandidate {
    let mut next = candidate.clone();
    for p in next.pairs.iter_mut().filter(|p| p.function == function) {
        p.solution = solution.to_owned();
    }
    next
}

/// Replace `entry.current` with `chosen`. Visible functions are inpainted
/// and bump the version; invisible ones only update the recorded solution.
pub fn edit_by_recommendation(
    gw: &Gateway,
    candidate: &ConceptCandidate,
    region: &ComponentRegion,
    entry: &ChartEntry,
    chosen: &str,
    opts: &EditOptions,
) -> Result<EditOutcome, EditError> {
    if !entry.alternatives.iter().any(|a| a == chosen) {
        return Err(EditError::NotAnAlternative {
            function: entry.function.clone(),
            chosen: chosen.to_owned(),
        });
    }
    check_region(candidate, region)?;
    let mut tx = EditTransaction::pending(
        opts.tx_id.clone(),
        EditKind::Recommendation,
        &region.class_label,
        candidate.version,
    );
    tx.function = entry.function.clone();
    tx.from_solution = entry.current.clone();
    tx.to_solution = chosen.to_owned();
    let failed = |tx: EditTransaction, e: &dyn std::fmt::Display| EditOutcome {
        transaction: tx.fail(e),
        candidate: candidate.clone(),
    };

    let category = candidate.brief.category.as_str();
    let verdict = match check_visibility(gw, &candidate.image, &entry.function, category) {
        Ok(v) => v,
        Err(e) => return Ok(failed(tx, &e)),
    };
    let visible = verdict.visible;
    tx.verdict = Some(verdict);
    if !visible {
        tx.status = EditStatus::MetadataOnly;
        return Ok(EditOutcome {
            transaction: tx,
            candidate: with_solution(candidate, &entry.function, chosen),
        });
    }

    let prompt = match gw.templates().render(
        EDIT_FUNCTION,
        &[("FUNCTION", &entry.function), ("SOLUTION_A", &entry.current), ("SOLUTION_B", chosen)],
    )
    {
        Ok(p) => p,
        Err(e) => return Ok(failed(tx, &e)),
    };
    let mask = make_inpaint_mask(&region.mask, opts.margin);
    tx.prompt = Some(prompt.clone());
    tx.inpaint_mask = Some(mask.clone());
    match inpaint(gw, &candidate.image, &candidate.image, &mask, &prompt, category) {
        Ok(image) => {
            let mut next = with_solution(candidate, &entry.function, chosen);
            next.image = image;
            next.version += 1;
            tx.status = EditStatus::Applied;
            tx.result_version = next.version;
            Ok(EditOutcome {
                transaction: tx,
                candidate: next,
            })
        }
        Err(e) => Ok(failed(tx, &e)),
    }
}

/// Redraw a component: white it out, draw `strokes` on top, refine the
/// result with `transcript` and inpaint the component with the refined
/// description.
pub fn edit_by_sketch(
    gw: &Gateway,
    candidate: &ConceptCandidate,
    region: &ComponentRegion,
    strokes: &[Stroke],
    transcript: &str,
    opts: &EditOptions,
) -> Result<EditOutcome, EditError> {
    if strokes.is_empty() && transcript.trim().is_empty() {
        return Err(EditError::EmptySketchEdit);
    }
    check_region(candidate, region)?;
    let canvas = Canvas {
        width: candidate.image.width(),
        height: candidate.image.height(),
    };
    for (i, s) in strokes.iter().enumerate() {
        s.validate(i, canvas)?;
    }
    let mut tx =
        EditTransaction::pending(opts.tx_id.clone(), EditKind::Sketch, &region.class_label, candidate.version);
    let failed = |tx: EditTransaction, e: &dyn std::fmt::Display| {
        Ok(EditOutcome {
            transaction: tx.fail(e),
            candidate: candidate.clone(),
        })
    };

    let drawn = draw_strokes_over(&white_out(&candidate.image, &region.mask), strokes);
    let refined = match refine(gw, Some(&drawn), transcript) {
        Ok(r) => r,
        Err(GenerationError::EmptyBrief) => return Err(EditError::EmptySketchEdit),
        Err(e) => return failed(tx, &e),
    };
    let prompt = refined.refined_description;
    let mask = make_inpaint_mask(&region.mask, opts.margin);
    tx.to_solution = prompt.clone();
    tx.prompt = Some(prompt.clone());
    tx.inpaint_mask = Some(mask.clone());
    match inpaint(gw, &candidate.image, &drawn, &mask, &prompt, &candidate.brief.category) {
        Ok(image) => {
            let mut next = candidate.clone();
            next.image = image;
            next.version += 1;
            tx.status = EditStatus::Applied;
            tx.result_version = next.version;
            Ok(EditOutcome {
                transaction: tx,
                candidate: next,
            })
        }
        Err(e) => failed(tx, &e),
    }
}

/// Exchange the transaction's two solutions in the matching chart entry.
/// Applying the same transaction twice restores the original chart. Failed,
/// pending and sketch transactions leave the chart as it is.
pub fn update_chart_after_edit(chart: &FunctionChart, tx: &EditTransaction) -> FunctionChart {
    let mut next = chart.clone();
    if tx.kind != EditKind::Recommendation
        || !matches!(tx.status, EditStatus::Applied | EditStatus::MetadataOnly)
    {
        return next;
    }
    if let Some(entry) = next.find_mut(&tx.function) {
        for (cur, alt) in [(&tx.from_solution, &tx.to_solution), (&tx.to_solution, &tx.from_solution)] {
            if entry.current == *cur {
                if let Some(slot) = entry.alternatives.iter_mut().find(|a| *a == alt) {
                    std::mem::swap(&mut entry.current, slot);
                    break;
                }
            }
        }
    }
    next
}
