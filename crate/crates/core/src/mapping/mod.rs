//! Function-to-component mapping.
//!
//! Components are tinted with named palette colours; a vision provider is
//! asked which colour realises each function, and the answers are matched
//! back to component labels. Mapped functions are then charted with two
//! alternative solutions each.

mod chart;
mod overlay;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use chart::{alternatives_for, build_chart, parse_alternatives, ChartEntry, FunctionChart};
pub use overlay::{blend, build_overlay, ComponentRegion, Legend, LegendEntry, Overlay, PALETTE};

use crate::model::{FunctionSolutionPair, RasterImage};
use crate::provider::templates::MAP_FUNCTION;
use crate::provider::{params, tasks, Capability, Gateway, ProviderError, ProviderRequest, TemplateError};

#[derive(Debug, thiserror::Error)]
pub enum MappingError {
    #[error("{regions} regions but only {palette} overlay colours")]
    PaletteExhausted { regions: usize, palette: usize },
    #[error("region {0:?} does not match the image size")]
    RegionSize(String),
    #[error("region {0:?} overlaps an earlier region")]
    OverlappingRegions(String),
    #[error("the colour legend is empty")]
    EmptyLegend,
    #[error("no functions to map")]
    NoFunctions,
    #[error("gold mapping is empty")]
    EmptyGold,
    #[error("reading gold file {path}: {detail}")]
    Gold { path: String, detail: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MappingResult {
    /// function -> component label
    pub assignments: BTreeMap<String, String>,
    pub unmapped: Vec<String>,
}

/// Match a free-text colour answer against the legend.
///
/// Accepts the bare name in any case and surrounding punctuation, or an
/// answer that mentions exactly one legend colour as a word.
pub fn parse_color_answer<'a>(answer: &str, legend: &'a Legend) -> Option<&'a str> {
    let words: Vec<String> = answer
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    if let [only] = words.as_slice() {
        return legend.label_of(only);
    }
    let mentioned: Vec<&LegendEntry> = legend
        .entries
        .iter()
        .filter(|e| words.iter().any(|w| *w == e.color))
        .collect();
    match mentioned.as_slice() {
        [one] => Some(one.label.as_str()),
        _ => None,
    }
}

/// Options threaded into each mapping query.
#[derive(Debug, Clone, Default)]
pub struct MapContext<'a> {
    pub category: &'a str,
    /// Evaluation trial index, forwarded so scripted providers can key on it.
    pub trial: Option<u64>,
}

/// Ask which legend colour realises each function, one query per function,
/// fanned out concurrently. Any provider failure fails the whole call.
pub fn map_functions(
    gw: &Gateway,
    overlay_image: &RasterImage,
    legend: &Legend,
    functions: &[String],
    ctx: &MapContext<'_>,
) -> Result<MappingResult, MappingError> {
    if legend.is_empty() {
        return Err(MappingError::EmptyLegend);
    }
    if functions.is_empty() {
        return Err(MappingError::NoFunctions);
    }
    let colors = legend.color_names().join(", ");
    let requests = functions
        .iter()
        .map(|f| {
            let prompt = gw
                .templates()
                .render(MAP_FUNCTION, &[("COLORS", &colors), ("FUNCTION", f)])?;
            let mut req = ProviderRequest::new(Capability::Vision, prompt)
                .image(overlay_image.clone())
                .param(params::TASK, tasks::MAP_FUNCTION)
                .param(params::FUNCTION, f.as_str())
                .param(params::CATEGORY, ctx.category)
                .param(params::LEGEND, legend.to_param());
            if let Some(t) = ctx.trial {
                req = req.param(params::TRIAL, t);
            }
            Ok(req)
        })
        .collect::<Result<Vec<_>, TemplateError>>()?;
    let answers: Vec<Result<String, ProviderError>> = std::thread::scope(|s| {
        let handles: Vec<_> = requests
            .iter()
            .map(|r| s.spawn(move || gw.invoke(r).and_then(|resp| Ok(resp.require_text()?.to_owned()))))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("mapping worker panicked"))
            .collect()
    });
    let mut result = MappingResult::default();
    for (f, answer) in functions.iter().zip(answers) {
        match parse_color_answer(&answer?, legend) {
            Some(label) => {
                result.assignments.insert(f.clone(), label.to_owned());
            }
            None => result.unmapped.push(f.clone()),
        }
    }
    Ok(result)
}

/// Convenience wrapper taking function-solution pairs.
pub fn map_pairs(
    gw: &Gateway,
    overlay: &Overlay,
    pairs: &[FunctionSolutionPair],
    ctx: &MapContext<'_>,
) -> Result<MappingResult, MappingError> {
    let functions: Vec<String> = pairs.iter().map(|p| p.function.clone()).collect();
    map_functions(gw, &overlay.image, &overlay.legend, &functions, ctx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    /// function -> percent correct across trials
    pub per_function: BTreeMap<String, f64>,
    pub overall: f64,
    pub trials: usize,
}

/// Percent of trials in which each gold function was assigned its gold
/// component. Unmapped or missing functions count as wrong.
pub fn mapping_accuracy(
    trials: &[MappingResult],
    gold: &BTreeMap<String, String>,
) -> Result<AccuracyReport, MappingError> {
    if gold.is_empty() {
        return Err(MappingError::EmptyGold);
    }
    let n = trials.len();
    let mut per_function = BTreeMap::new();
    let mut total_correct = 0usize;
    for (function, label) in gold {
        let correct = trials
            .iter()
            .filter(|t| t.assignments.get(function) == Some(label))
            .count();
        total_correct += correct;
        let pct = if n == 0 { 0.0 } else { correct as f64 * 100.0 / n as f64 };
        per_function.insert(function.clone(), pct);
    }
    let overall = if n == 0 {
        0.0
    } else {
        total_correct as f64 * 100.0 / (n * gold.len()) as f64
    };
    Ok(AccuracyReport {
        per_function,
        overall,
        trials: n,
    })
}

/// Read a `{function: component}` gold file.
pub fn load_gold(path: &Path) -> Result<BTreeMap<String, String>, MappingError> {
    let err = |detail: String| MappingError::Gold {
        path: path.display().to_string(),
        detail,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| err(e.to_string()))
}
