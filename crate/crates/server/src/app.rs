//! Session registry, the per-session writer lock and the background jobs
//! that drive the design pipeline.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex as StdMutex};

use conceptkit::catalog::Category;
use conceptkit::editor::{
    edit_by_recommendation, edit_by_sketch, update_chart_after_edit, EditOptions, EditOutcome, EditStatus,
    EditTransaction,
};
use conceptkit::generation::{extract_pairs, generate_candidates, refine};
use conceptkit::mapping::{build_chart, build_overlay, map_pairs, MapContext};
use conceptkit::model::{RasterImage, SessionEvent, SessionRecord, Stroke};
use conceptkit::provider::{Gateway, ProviderConfig};
use conceptkit::segmentation::{regions, segment, PaletteSegmenter, SegModel, Segmenter};
use conceptkit::{CandidateRecord, ConceptCandidate, DesignBrief, SessionId, TxId};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{broadcast, Mutex};

use crate::store::{CandidateSlot, EventKind, EventMessage, Job, SessionDoc, Store, StoreError};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub data_dir: PathBuf,
    pub provider: ProviderConfig,
    pub candidates: usize,
    pub margin: u32,
    /// Trained segmentation model directory per category slug; categories
    /// without one use the flat-colour palette segmenter.
    pub models: BTreeMap<String, PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("store"),
            provider: ProviderConfig::default(),
            candidates: conceptkit::generation::DEFAULT_CANDIDATES,
            margin: conceptkit::editor::DEFAULT_MARGIN,
            models: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EditRequest {
    Recommendation { function: String, chosen: String },
    Sketch {
        component: String,
        #[serde(default)]
        strokes: Vec<Stroke>,
        #[serde(default)]
        transcript: String,
    },
}

pub(crate) struct Slot {
    pub doc: Mutex<SessionDoc>,
    pub events: broadcast::Sender<EventMessage>,
}

pub struct App {
    pub(crate) store: Store,
    pub(crate) gw: Gateway,
    pub(crate) config: ServerConfig,
    sessions: StdMutex<HashMap<SessionId, Arc<Slot>>>,
}

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("provider configuration: {0}")]
    Config(#[from] conceptkit::provider::ConfigError),
}

fn category_of(slug: &str) -> Category {
    slug.parse().unwrap_or(Category::Car)
}

impl App {
    /// Open the store and fail any work a previous process left unfinished.
    pub fn open(config: ServerConfig) -> Result<Arc<Self>, AppError> {
        let store = Store::open(&config.data_dir)?;
        let gw = Gateway::from_config(&config.provider)?;
        let app = Arc::new(Self {
            store,
            gw,
            config,
            sessions: StdMutex::new(HashMap::new()),
        });
        for id in app.store.list()? {
            if let Some(mut doc) = app.store.load(&id)? {
                if doc.job.is_some() {
                    app.recover(&mut doc);
                    app.store.save(&doc)?;
                }
            }
        }
        Ok(app)
    }

    fn recover(&self, doc: &mut SessionDoc) {
        match doc.job.take() {
            Some(Job::Edit { tx }) => {
                if let Some(t) = doc.transactions.iter_mut().find(|t| t.id == tx) {
                    t.status = EditStatus::Failed;
                    t.result_version = t.base_version;
                    t.error = Some("interrupted by restart".into());
                }
                doc.push_event(EventKind::EditRejected, json!({ "tx_id": tx, "error": "interrupted by restart" }));
            }
            Some(job) => {
                doc.push_event(
                    EventKind::ProviderError,
                    json!({ "stage": job_stage(&job), "error": "Interrupted", "detail": "interrupted by restart" }),
                );
            }
            None => {}
        }
    }

    pub(crate) fn create(&self) -> Result<SessionId, StoreError> {
        let id = SessionId::new(uuid::Uuid::new_v4().simple().to_string());
        let doc = SessionDoc::new(id.clone());
        self.store.save(&doc)?;
        self.insert(doc);
        Ok(id)
    }

    fn insert(&self, doc: SessionDoc) -> Arc<Slot> {
        let id = doc.session_id.clone();
        let slot = Arc::new(Slot {
            doc: Mutex::new(doc),
            events: broadcast::channel(256).0,
        });
        self.sessions
            .lock()
            .unwrap()
            .entry(id)
            .or_insert(slot)
            .clone()
    }

    pub(crate) fn slot(&self, id: &SessionId) -> Result<Option<Arc<Slot>>, StoreError> {
        if let Some(s) = self.sessions.lock().unwrap().get(id) {
            return Ok(Some(s.clone()));
        }
        Ok(self.store.load(id)?.map(|doc| self.insert(doc)))
    }

    /// Persist `doc`, then publish the events appended since `from_seq`.
    pub(crate) fn commit(&self, slot: &Slot, doc: &SessionDoc, from_seq: u64) -> Result<(), StoreError> {
        self.store.save(doc)?;
        for e in doc.events.iter().filter(|e| e.seq > from_seq) {
            let _ = slot.events.send(e.clone());
        }
        Ok(())
    }

    pub(crate) fn load_candidate(&self, record: &CandidateRecord) -> Result<ConceptCandidate, StoreError> {
        ConceptCandidate::from_record(record, |h| self.store.get_blob(h))
    }

    /// Run `event` through the session state machine and copy the result
    /// back into the document.
    fn transition(&self, doc: &mut SessionDoc, event: SessionEvent) -> Result<(), String> {
        let selected = doc
            .selected
            .as_ref()
            .map(|r| self.load_candidate(r))
            .transpose()
            .map_err(|e| e.to_string())?;
        let record = SessionRecord {
            session_id: doc.session_id.clone(),
            state: doc.state,
            selected,
            history: doc.history.clone(),
        };
        let next = record.transition(event).map_err(|e| e.to_string())?;
        doc.state = next.state;
        doc.selected = next.selected.as_ref().map(ConceptCandidate::to_record);
        doc.history = next.history;
        Ok(())
    }

    fn segmenter_for(&self, category: Category) -> Result<Box<dyn Segmenter>, String> {
        match self.config.models.get(category.slug()) {
            Some(dir) => SegModel::load(dir).map(|m| Box::new(m) as Box<dyn Segmenter>).map_err(|e| e.to_string()),
            None => Ok(Box::new(PaletteSegmenter::for_category(category))),
        }
    }

    /// Lock the session, apply `f`, commit. Runs on a blocking thread.
    fn update(&self, slot: &Slot, f: impl FnOnce(&mut SessionDoc)) {
        let mut doc = slot.doc.blocking_lock();
        let from = doc.last_seq();
        f(&mut doc);
        if let Err(e) = self.commit(slot, &doc, from) {
            tracing::error!(session = %doc.session_id, error = %e, "commit failed");
        }
    }

    fn provider_error(&self, slot: &Slot, stage: &str, error: &dyn std::fmt::Display, kind: &str) {
        self.update(slot, |doc| {
            doc.job = None;
            doc.push_event(
                EventKind::ProviderError,
                json!({ "stage": stage, "error": kind, "detail": error.to_string() }),
            );
        });
    }

    pub(crate) fn run_brief(&self, slot: &Slot, transcript: String, count: usize, size: u32) {
        let sketch = slot.doc.blocking_lock().sketch.clone();
        let raster = sketch
            .as_ref()
            .filter(|s| !s.strokes.is_empty())
            .and_then(|s| s.raster().ok().cloned());
        let refined = match refine(&self.gw, raster.as_ref(), &transcript) {
            Ok(r) => r,
            Err(e) => return self.provider_error(slot, "refine", &e, "RefinementFailed"),
        };
        self.update(slot, |doc| {
            doc.refinement = Some(refined.clone());
            doc.brief = Some(DesignBrief {
                transcript: transcript.clone(),
                refined_description: refined.refined_description.clone(),
                category: refined.category.clone(),
            });
            doc.push_event(EventKind::RefinementDone, json!({ "transcript": transcript, "refinement": refined }));
        });
        let results = match generate_candidates(&self.gw, &refined, &transcript, count, size) {
            Ok(r) => r,
            Err(e) => return self.provider_error(slot, "generate", &e, "GenerationFailed"),
        };
        let mut slots = Vec::new();
        for (index, r) in results.into_iter().enumerate() {
            let slot_entry = match r.map_err(|e| e.to_string()).and_then(|c| {
                self.store.put_blob(&c.image).map_err(|e| e.to_string())?;
                Ok(c.to_record())
            }) {
                Ok(record) => CandidateSlot { index, record: Some(record), error: None },
                Err(error) => CandidateSlot { index, record: None, error: Some(error) },
            };
            slots.push(slot_entry);
        }
        self.update(slot, |doc| {
            doc.job = None;
            let first = slots.iter().find_map(|s| s.record.as_ref()).map(|r| self.load_candidate(r));
            let payload = json!({ "candidates": slots });
            match first {
                Some(Ok(provisional)) => match self.transition(doc, SessionEvent::ConceptsGenerated { provisional }) {
                    Ok(()) => {
                        doc.candidates = slots;
                        doc.selected_index = None;
                        doc.versions.clear();
                        doc.push_event(EventKind::CandidatesReady, payload);
                    }
                    Err(e) => {
                        doc.push_event(EventKind::ProviderError, json!({ "stage": "generate", "error": "InvalidTransition", "detail": e }));
                    }
                },
                _ => {
                    doc.push_event(
                        EventKind::ProviderError,
                        json!({ "stage": "generate", "error": "NoCandidates", "detail": payload }),
                    );
                }
            }
        });
    }

    pub(crate) fn run_select(&self, slot: &Slot, index: usize) {
        let record = slot.doc.blocking_lock().candidates[index].record.clone().expect("validated");
        let mut candidate = match self.load_candidate(&record) {
            Ok(c) => c,
            Err(e) => return self.provider_error(slot, "select", &e, "Store"),
        };
        candidate.pairs = match extract_pairs(&self.gw, &candidate) {
            Ok(p) => p,
            Err(e) => return self.provider_error(slot, "extract_pairs", &e, "ExtractionFailed"),
        };
        let category = category_of(&candidate.brief.category);
        let overlay = self.segmenter_for(category).and_then(|seg| {
            let labels = segment(seg.as_ref(), &candidate.image).map_err(|e| e.to_string())?;
            let regs = regions(&labels, seg.schema()).map_err(|e| e.to_string())?;
            build_overlay(&candidate.image, &regs).map_err(|e| e.to_string())
        });
        let overlay = match overlay {
            Ok(o) => o,
            Err(e) => return self.provider_error(slot, "segmentation", &e, "SegmentationFailed"),
        };
        let overlay_hash = match self.store.put_blob(&overlay.image) {
            Ok(h) => h,
            Err(e) => return self.provider_error(slot, "segmentation", &e, "Store"),
        };
        self.update(slot, |doc| {
            let summary: Vec<_> = overlay
                .regions
                .iter()
                .map(|r| json!({ "label": r.class_label, "color": r.color_name, "area": r.mask.area(), "centroid": r.centroid }))
                .collect();
            doc.push_event(
                EventKind::SegmentationReady,
                json!({ "index": index, "pairs": candidate.pairs, "regions": summary, "overlay_hash": overlay_hash }),
            );
        });
        let ctx = MapContext {
            category: category.slug(),
            trial: None,
        };
        let mapping = match map_pairs(&self.gw, &overlay, &candidate.pairs, &ctx) {
            Ok(m) => m,
            Err(e) => return self.provider_error(slot, "mapping", &e, "MappingFailed"),
        };
        let chart = build_chart(&self.gw, &mapping, &candidate.pairs, category.slug());
        self.update(slot, |doc| {
            doc.job = None;
            let hash = candidate.image.content_hash().to_owned();
            match self.transition(doc, SessionEvent::ConceptDecomposed { selected: candidate.clone() }) {
                Ok(()) => {
                    doc.selected_index = Some(index);
                    doc.versions = vec![hash];
                    doc.regions = overlay.regions.clone();
                    doc.legend = Some(overlay.legend.clone());
                    doc.overlay_hash = Some(overlay_hash.clone());
                    doc.mapping = Some(mapping.clone());
                    doc.chart = Some(chart.clone());
                    doc.push_event(EventKind::ChartReady, json!({ "chart": chart }));
                }
                Err(e) => {
                    doc.push_event(EventKind::ProviderError, json!({ "stage": "select", "error": "InvalidTransition", "detail": e }));
                }
            }
        });
    }

    pub(crate) fn run_edit(&self, slot: &Slot, tx: TxId, request: EditRequest) {
        let (record, region, entry) = {
            let doc = slot.doc.blocking_lock();
            let record = doc.selected.clone().expect("decomposed session has a selection");
            match &request {
                EditRequest::Recommendation { function, .. } => {
                    let chart = doc.chart.as_ref().expect("decomposed session has a chart");
                    let (component, entry) = chart.find(function).expect("validated");
                    let region = doc.regions.iter().find(|r| r.class_label == component).cloned();
                    (record, region, Some(entry.clone()))
                }
                EditRequest::Sketch { component, .. } => {
                    (record, doc.regions.iter().find(|r| &r.class_label == component).cloned(), None)
                }
            }
        };
        let opts = EditOptions {
            tx_id: tx.clone(),
            margin: self.config.margin,
        };
        let outcome: Result<EditOutcome, String> = self.load_candidate(&record).map_err(|e| e.to_string()).and_then(|candidate| {
            let region = region.ok_or("component has no region")?;
            let r = match &request {
                EditRequest::Recommendation { chosen, .. } => {
                    edit_by_recommendation(&self.gw, &candidate, &region, entry.as_ref().unwrap(), chosen, &opts)
                }
                EditRequest::Sketch { strokes, transcript, .. } => {
                    edit_by_sketch(&self.gw, &candidate, &region, strokes, transcript, &opts)
                }
            };
            r.map_err(|e| e.to_string())
        });
        if let Ok(o) = &outcome {
            if o.transaction.status == EditStatus::Applied {
                if let Err(e) = self.store.put_blob(&o.candidate.image) {
                    return self.finish_edit(slot, &tx, Err(e.to_string()));
                }
            }
        }
        self.finish_edit(slot, &tx, outcome);
    }

    fn finish_edit(&self, slot: &Slot, tx: &TxId, outcome: Result<EditOutcome, String>) {
        self.update(slot, |doc| {
            doc.job = None;
            let Some(pos) = doc.transactions.iter().position(|t| &t.id == tx) else {
                return;
            };
            let committed = outcome.and_then(|o| {
                if o.transaction.status == EditStatus::Failed {
                    return Err(o.transaction.error.clone().unwrap_or_default());
                }
                self.transition(doc, SessionEvent::EditAccepted { tx: tx.clone(), candidate: o.candidate.clone() })?;
                Ok(o)
            });
            match committed {
                Ok(o) => {
                    let t = o.transaction;
                    if t.status == EditStatus::Applied {
                        doc.versions.push(o.candidate.image.content_hash().to_owned());
                    }
                    if let Some(chart) = &doc.chart {
                        doc.chart = Some(update_chart_after_edit(chart, &t));
                    }
                    let payload = json!({
                        "tx_id": t.id,
                        "status": t.status,
                        "version": t.result_version,
                        "image_hash": o.candidate.image.content_hash(),
                    });
                    doc.transactions[pos] = t;
                    doc.push_event(EventKind::EditApplied, payload);
                }
                Err(error) => {
                    let _ = self.transition(doc, SessionEvent::EditFailed { tx: tx.clone() });
                    let t: &mut EditTransaction = &mut doc.transactions[pos];
                    t.status = EditStatus::Failed;
                    t.result_version = t.base_version;
                    t.error = Some(error.clone());
                    doc.push_event(EventKind::EditRejected, json!({ "tx_id": tx, "error": error }));
                }
            }
        });
    }

    pub(crate) fn image_for_version(&self, doc: &SessionDoc, version: Option<usize>) -> Option<String> {
        match version {
            None => doc.versions.last().cloned().or_else(|| doc.selected.as_ref().map(|s| s.image_hash.clone())),
            Some(v) => doc.versions.get(v.checked_sub(1)?).cloned(),
        }
    }

    pub(crate) fn blob(&self, hash: &str) -> Result<Vec<u8>, StoreError> {
        self.store.blob_bytes(hash)
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gw
    }

    pub(crate) fn transcribe(&self, audio: &[u8]) -> Result<String, conceptkit::provider::ProviderError> {
        conceptkit::generation::transcribe(&self.gw, audio)
    }

    pub(crate) fn default_size(&self) -> u32 {
        self.config.provider.image_size
    }
}

pub(crate) fn job_stage(job: &Job) -> &'static str {
    match job {
        Job::Brief => "brief",
        Job::Select { .. } => "select",
        Job::Edit { .. } => "edit",
    }
}

/// Read-only view of a raster kept for sketch previews.
pub(crate) fn png(image: &RasterImage) -> Vec<u8> {
    image.to_png()
}
