//! Shared domain types and the design-session state machine.

mod raster;
mod session;
mod sketch;

use serde::{Deserialize, Serialize};

pub use raster::{RasterError, RasterImage};
pub use session::{
    SessionError, SessionEvent, SessionId, SessionRecord, SessionState, TxId,
};
pub use sketch::{
    draw_strokes_over, rasterize, Canvas, Rgb, SketchDocument, SketchError, Stroke, StrokePoint,
    DEFAULT_CANVAS_SIDE, MAX_STROKE_WIDTH, MIN_STROKE_WIDTH,
};

pub(crate) use raster::hash_bytes;

/// The textual side of a design request.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DesignBrief {
    /// Raw voice transcript or typed text.
    pub transcript: String,
    /// Provider-refined description; non-empty once refinement has run.
    pub refined_description: String,
    pub category: String,
}

/// A design function and how the current concept realises it, e.g.
/// `wheel size` / `19 inches`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FunctionSolutionPair {
    pub function: String,
    pub solution: String,
}

impl FunctionSolutionPair {
    pub fn new(function: impl Into<String>, solution: impl Into<String>) -> Self {
        Self {
            function: function.into(),
            solution: solution.into(),
        }
    }
}

/// A generated concept image with its brief and extracted pairs.
///
/// `version` starts at 1 and increases by one for every edit that changes
/// pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptCandidate {
    pub image: RasterImage,
    pub brief: DesignBrief,
    pub pairs: Vec<FunctionSolutionPair>,
    pub version: u32,
}

impl ConceptCandidate {
    pub fn to_record(&self) -> CandidateRecord {
        CandidateRecord {
            image_hash: self.image.content_hash().to_owned(),
            brief: self.brief.clone(),
            pairs: self.pairs.clone(),
            version: self.version,
        }
    }

    /// Rebuild a candidate from its persisted form; `load` resolves the image
    /// hash against a blob store.
    pub fn from_record<E>(
        record: &CandidateRecord,
        load: impl FnOnce(&str) -> Result<RasterImage, E>,
    ) -> Result<Self, E> {
        Ok(Self {
            image: load(&record.image_hash)?,
            brief: record.brief.clone(),
            pairs: record.pairs.clone(),
            version: record.version,
        })
    }
}

/// Persisted form of a [`ConceptCandidate`]: the image is referenced by its
/// content hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub image_hash: String,
    pub brief: DesignBrief,
    pub pairs: Vec<FunctionSolutionPair>,
    pub version: u32,
}
