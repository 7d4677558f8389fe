//! Brief refinement, candidate image generation and function-solution
//! extraction.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::catalog::Category;
use crate::model::{ConceptCandidate, DesignBrief, FunctionSolutionPair, RasterImage};
use crate::provider::templates::{EXTRACT_PAIRS, GENERATE, REFINE};
use crate::provider::{
    params, tasks, Capability, Gateway, ProviderError, ProviderRequest, TemplateError,
};

pub const DEFAULT_CANDIDATES: usize = 3;

const PAIRS_SYSTEM: &str = "Reply only with lines of the form `function: solution`.";

#[derive(Debug, thiserror::Error)]
pub enum GenerationError {
    #[error("refinement needs a sketch or a transcript")]
    EmptyBrief,
    #[error("candidate count must be at least 1")]
    ZeroCandidates,
    #[error("refined description is empty")]
    EmptyDescription,
    #[error("malformed provider response: {detail}")]
    MalformedResponse { detail: String, raw: String },
    #[error("no `function: solution` lines in provider response")]
    ExtractionEmpty { raw: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementResult {
    pub refined_description: String,
    pub style_constraints: String,
    pub placement_constraints: String,
    /// Category slug the provider chose, or the best local guess.
    pub category: String,
}

impl RefinementResult {
    /// Parse `key: value` lines; `description` is required.
    pub fn parse(raw: &str, transcript: &str) -> Result<Self, GenerationError> {
        let field = |key: &str| {
            raw.lines().find_map(|l| {
                let (k, v) = l.split_once(':')?;
                k.trim().eq_ignore_ascii_case(key).then(|| v.trim().to_owned())
            })
        };
        let refined_description = field("description").filter(|d| !d.is_empty()).ok_or_else(|| {
            GenerationError::MalformedResponse {
                detail: "refinement has no description line".into(),
                raw: raw.to_owned(),
            }
        })?;
        let category = field("category")
            .and_then(|c| c.parse::<Category>().ok())
            .or_else(|| Category::infer(transcript))
            .or_else(|| Category::infer(&refined_description))
            .unwrap_or(Category::Car);
        Ok(Self {
            refined_description,
            style_constraints: field("style").unwrap_or_default(),
            placement_constraints: field("placement").unwrap_or_default(),
            category: category.slug().to_owned(),
        })
    }
}

fn is_blank(image: &RasterImage) -> bool {
    image.pixels().chunks_exact(4).all(|p| p[..3] == [255, 255, 255])
}

/// Turn a sketch and/or transcript into a refined description.
pub fn refine(
    gw: &Gateway,
    sketch: Option<&RasterImage>,
    transcript: &str,
) -> Result<RefinementResult, GenerationError> {
    let sketch = sketch.filter(|s| !is_blank(s));
    let transcript = transcript.trim();
    if sketch.is_none() && transcript.is_empty() {
        return Err(GenerationError::EmptyBrief);
    }
    let categories: Vec<&str> = Category::ALL.iter().map(|c| c.slug()).collect();
    let shown = if transcript.is_empty() { "(none; use the sketch)" } else { transcript };
    let prompt = gw.templates().render(
        REFINE,
        &[("TRANSCRIPT", shown), ("CATEGORIES", &categories.join(", "))],
    )?;
    let mut req = ProviderRequest::new(Capability::Vision, prompt)
        .param(params::TASK, tasks::REFINE)
        .param(params::TRANSCRIPT, transcript);
    if let Some(s) = sketch {
        req = req.image(s.clone());
    }
    let resp = gw.invoke(&req)?;
    RefinementResult::parse(resp.require_text()?, transcript)
}

/// Generate `n` candidates concurrently. Each slot carries its own result so
/// a policy rejection for one candidate leaves the others intact; slots keep
/// request order.
pub fn generate_candidates(
    gw: &Gateway,
    refinement: &RefinementResult,
    transcript: &str,
    n: usize,
    size: u32,
) -> Result<Vec<Result<ConceptCandidate, ProviderError>>, GenerationError> {
    if n == 0 {
        return Err(GenerationError::ZeroCandidates);
    }
    if refinement.refined_description.trim().is_empty() {
        return Err(GenerationError::EmptyDescription);
    }
    let style = if refinement.style_constraints.is_empty() { "unspecified" } else { &refinement.style_constraints };
    let placement = if refinement.placement_constraints.is_empty() {
        "unspecified"
    } else {
        &refinement.placement_constraints
    };
    let prompt = gw.templates().render(
        GENERATE,
        &[
            ("DESCRIPTION", &refinement.refined_description),
            ("STYLE", style),
            ("PLACEMENT", placement),
        ],
    )?;
    let brief = DesignBrief {
        transcript: transcript.to_owned(),
        refined_description: refinement.refined_description.clone(),
        category: refinement.category.clone(),
    };
    let one = |i: usize| -> Result<ConceptCandidate, ProviderError> {
        let req = ProviderRequest::new(Capability::Generate, prompt.clone())
            .param(params::CATEGORY, refinement.category.as_str())
            .param(params::SIZE, size)
            .param(params::INDEX, i as u64)
            .param(params::COUNT, 1);
        let image = gw.invoke(&req)?.images.swap_remove(0);
        if !image.is_square() {
            return Err(ProviderError::MalformedResponse {
                detail: format!("generated image is {}x{}, expected square", image.width(), image.height()),
                raw: String::new(),
            });
        }
        Ok(ConceptCandidate {
            image,
            brief: brief.clone(),
            pairs: Vec::new(),
            version: 1,
        })
    };
    Ok(std::thread::scope(|s| {
        let handles: Vec<_> = (0..n).map(|i| s.spawn(move || one(i))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("generation worker panicked"))
            .collect()
    }))
}

/// Parse strict `function: solution` lines, keeping the first occurrence of
/// each function (compared case-insensitively).
pub fn parse_pairs(text: &str) -> Vec<FunctionSolutionPair> {
    let mut out: Vec<FunctionSolutionPair> = Vec::new();
    for line in text.lines() {
        let Some((f, s)) = line.split_once(':') else {
            continue;
        };
        let (f, s) = (f.trim(), s.trim());
        if f.is_empty() || s.is_empty() {
            continue;
        }
        if out.iter().any(|p| p.function.eq_ignore_ascii_case(f)) {
            continue;
        }
        out.push(FunctionSolutionPair::new(f, s));
    }
    out
}

pub fn format_pairs(pairs: &[FunctionSolutionPair]) -> String {
    pairs
        .iter()
        .map(|p| format!("{}: {}", p.function, p.solution))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Ask the vision provider for the candidate's function-solution pairs.
pub fn extract_pairs(
    gw: &Gateway,
    candidate: &ConceptCandidate,
) -> Result<Vec<FunctionSolutionPair>, GenerationError> {
    if candidate.brief.refined_description.trim().is_empty() {
        return Err(GenerationError::EmptyDescription);
    }
    let prompt = gw
        .templates()
        .render(EXTRACT_PAIRS, &[("DESCRIPTION", &candidate.brief.refined_description)])?;
    let req = ProviderRequest::new(Capability::Vision, prompt)
        .image(candidate.image.clone())
        .param(params::TASK, tasks::EXTRACT_PAIRS)
        .param(params::CATEGORY, candidate.brief.category.as_str())
        .param(params::SYSTEM, PAIRS_SYSTEM);
    let resp = gw.invoke(&req)?;
    let raw = resp.require_text()?;
    let pairs = parse_pairs(raw);
    if pairs.is_empty() {
        return Err(GenerationError::ExtractionEmpty { raw: raw.to_owned() });
    }
    Ok(pairs)
}

/// Speech to text through the transcription capability.
pub fn transcribe(gw: &Gateway, audio: &[u8]) -> Result<String, ProviderError> {
    let req = ProviderRequest::new(Capability::Transcribe, "transcribe")
        .param(params::AUDIO_BASE64, B64.encode(audio));
    Ok(gw.invoke(&req)?.require_text()?.trim().to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{MockErrorKind, MockRule, MockScript};
    use proptest::prelude::*;

    fn car_sketch() -> RasterImage {
        RasterImage::filled(64, 64, [255; 4]).map_pixels(|b| b[0..4].copy_from_slice(&[0, 0, 0, 255]))
    }

    #[test]
    fn pink_pickup_refinement() {
        let gw = Gateway::mock(3);
        let r = refine(&gw, Some(&car_sketch()), "a pink pickup truck").unwrap();
        assert!(r.refined_description.contains("pink"));
        assert!(r.refined_description.contains("pickup truck"));
        assert_eq!(r.category, "car");
        assert_eq!(r, refine(&gw, Some(&car_sketch()), "a pink pickup truck").unwrap());
    }

    #[test]
    fn empty_brief_rejected() {
        let gw = Gateway::mock(3);
        let blank = RasterImage::filled(8, 8, [255; 4]);
        assert!(matches!(refine(&gw, Some(&blank), "  "), Err(GenerationError::EmptyBrief)));
        assert!(matches!(refine(&gw, None, ""), Err(GenerationError::EmptyBrief)));
        assert!(refine(&gw, Some(&car_sketch()), "").is_ok());
    }

    #[test]
    fn unparseable_refinement_keeps_raw() {
        let gw = Gateway::mock_with_script(MockScript::new(0).rule(MockRule::text(Capability::Vision, "sure thing")));
        match refine(&gw, None, "a lamp") {
            Err(GenerationError::MalformedResponse { raw, .. }) => assert_eq!(raw, "sure thing"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn three_distinct_candidates_and_partial_failure() {
        let gw = Gateway::mock(7);
        let r = refine(&gw, None, "a pink pickup truck").unwrap();
        let c = generate_candidates(&gw, &r, "a pink pickup truck", 3, 64).unwrap();
        let hashes: std::collections::BTreeSet<_> =
            c.iter().map(|c| c.as_ref().unwrap().image.content_hash().to_owned()).collect();
        assert_eq!(hashes.len(), 3);
        assert!(c.iter().all(|c| c.as_ref().unwrap().version == 1));
        assert!(matches!(generate_candidates(&gw, &r, "", 0, 64), Err(GenerationError::ZeroCandidates)));

        let script = MockScript::new(7).rule(
            MockRule::error(Capability::Generate, MockErrorKind::ContentPolicy).when_param(params::INDEX, 1),
        );
        let gw = Gateway::mock_with_script(script);
        let c = generate_candidates(&gw, &r, "", 3, 64).unwrap();
        assert!(c[0].is_ok() && c[2].is_ok());
        assert!(matches!(c[1], Err(ProviderError::ContentPolicyRejection(_))));
    }

    #[test]
    fn car_pairs_from_mock() {
        let gw = Gateway::mock(7);
        let r = refine(&gw, None, "a pink pickup truck").unwrap();
        let cand = generate_candidates(&gw, &r, "", 1, 64).unwrap().remove(0).unwrap();
        let pairs = extract_pairs(&gw, &cand).unwrap();
        assert!(pairs.contains(&FunctionSolutionPair::new("wheel size", "19 inches")));
        assert!(pairs.contains(&FunctionSolutionPair::new("sunroof", "panoramic")));
    }

    #[test]
    fn prose_is_extraction_empty() {
        let gw = Gateway::mock_with_script(
            MockScript::new(0).rule(MockRule::text(Capability::Vision, "no functions found")),
        );
        let cand = ConceptCandidate {
            image: car_sketch(),
            brief: DesignBrief {
                transcript: String::new(),
                refined_description: "a car".into(),
                category: "car".into(),
            },
            pairs: vec![],
            version: 1,
        };
        assert!(matches!(extract_pairs(&gw, &cand), Err(GenerationError::ExtractionEmpty { .. })));
    }

    #[test]
    fn nine_lines_two_duplicates() {
        let text = "a: 1\nb: 2\nc: 3\nA: 4\nd: 5\ne: 6\nb: 7\nf: 8\ng: 9";
        let pairs = parse_pairs(text);
        assert_eq!(pairs.len(), 7);
        assert_eq!(pairs[0].solution, "1");
    }

    #[test]
    fn transcription_round_trip() {
        assert_eq!(transcribe(&Gateway::mock(0), b"spoked rims").unwrap(), "spoked rims");
    }

    proptest! {
        #[test]
        fn format_parse_round_trip(pairs in prop::collection::vec(("[a-z][a-z ]{0,10}[a-z]", "[a-z0-9][a-z0-9 ]{0,10}[a-z0-9]"), 1..8)) {
            let text: String = pairs.iter().map(|(f, s)| format!("{f}: {s}\n")).collect();
            let parsed = parse_pairs(&text);
            prop_assert_eq!(parse_pairs(&format_pairs(&parsed)), parsed.clone());
            prop_assert!(parsed.len() <= pairs.len());
        }
    }
}
