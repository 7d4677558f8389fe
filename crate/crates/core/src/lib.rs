//! Sketch-driven concept design pipeline.
//!
//! The crate is organised around the three stages of the workflow:
//!
//! * [`generation`]: refine a sketch + brief into a description, generate
//!   candidate concept images and extract function-solution pairs.
//! * [`segmentation`] and [`mapping`]: split a concept image into component
//!   regions, map each textual function onto a region through a colour
//!   overlay and build the per-component function chart.
//! * [`editor`]: component-level edits, either by picking a recommended
//!   alternative or by re-sketching a component.
//!
//! All external model traffic goes through [`provider`], which ships seeded
//! mock providers so the whole pipeline runs offline.

pub mod catalog;
pub mod editor;
pub mod eval;
pub mod generation;
pub mod mapping;
pub mod mask;
pub mod model;
pub mod provider;
pub mod segmentation;

pub use mask::{BinaryMask, LabelMask};
pub use model::{
    Canvas, CandidateRecord, ConceptCandidate, DesignBrief, FunctionSolutionPair, RasterImage,
    Rgb, SessionEvent, SessionId, SessionRecord, SessionState, SketchDocument, Stroke,
    StrokePoint, TxId,
};
