//! On-disk layout: one JSON document per session under `sessions/` and
//! content-addressed PNGs under `blobs/`. Every write goes to a temporary
//! file first and is renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use conceptkit::editor::EditTransaction;
use conceptkit::generation::RefinementResult;
use conceptkit::mapping::{ComponentRegion, FunctionChart, Legend, MappingResult};
use conceptkit::model::RasterError;
use conceptkit::{CandidateRecord, DesignBrief, RasterImage, SessionId, SessionState, SketchDocument, TxId};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
    #[error("session document {0}: {1}")]
    Corrupt(String, serde_json::Error),
    #[error("blob {0}: {1}")]
    Blob(String, RasterError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    RefinementDone,
    CandidatesReady,
    SegmentationReady,
    ChartReady,
    EditApplied,
    EditRejected,
    ProviderError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMessage {
    pub session_id: SessionId,
    pub seq: u64,
    pub kind: EventKind,
    pub payload: serde_json::Value,
}

/// Background work holding a session's single writer slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "job", rename_all = "snake_case")]
pub enum Job {
    Brief,
    Select { index: usize },
    Edit { tx: TxId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSlot {
    pub index: usize,
    pub record: Option<CandidateRecord>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDoc {
    pub session_id: SessionId,
    pub state: SessionState,
    pub sketch: Option<SketchDocument>,
    pub brief: Option<DesignBrief>,
    pub refinement: Option<RefinementResult>,
    pub candidates: Vec<CandidateSlot>,
    pub selected_index: Option<usize>,
    pub selected: Option<CandidateRecord>,
    /// Image hash of version `n` at index `n - 1`.
    pub versions: Vec<String>,
    pub regions: Vec<ComponentRegion>,
    pub legend: Option<Legend>,
    pub overlay_hash: Option<String>,
    pub mapping: Option<MappingResult>,
    pub chart: Option<FunctionChart>,
    pub transactions: Vec<EditTransaction>,
    pub history: Vec<TxId>,
    pub job: Option<Job>,
    pub events: Vec<EventMessage>,
}

impl SessionDoc {
    pub fn new(session_id: SessionId) -> Self {
        Self {
            session_id,
            state: SessionState::Drafting,
            sketch: None,
            brief: None,
            refinement: None,
            candidates: Vec::new(),
            selected_index: None,
            selected: None,
            versions: Vec::new(),
            regions: Vec::new(),
            legend: None,
            overlay_hash: None,
            mapping: None,
            chart: None,
            transactions: Vec::new(),
            history: Vec::new(),
            job: None,
            events: Vec::new(),
        }
    }

    pub fn last_seq(&self) -> u64 {
        self.events.last().map_or(0, |e| e.seq)
    }

    /// Append an event with the next sequence number.
    pub fn push_event(&mut self, kind: EventKind, payload: serde_json::Value) -> EventMessage {
        let event = EventMessage {
            session_id: self.session_id.clone(),
            seq: self.last_seq() + 1,
            kind,
            payload,
        };
        self.events.push(event.clone());
        event
    }

    pub fn pending_tx(&self) -> Option<&EditTransaction> {
        self.transactions
            .iter()
            .find(|t| t.status == conceptkit::editor::EditStatus::Pending)
    }
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |e| StoreError::Io(path.display().to_string(), e)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for sub in ["sessions", "blobs"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn doc_path(&self, id: &SessionId) -> PathBuf {
        self.root.join("sessions").join(format!("{}.json", id.0))
    }

    fn blob_path(&self, hash: &str) -> PathBuf {
        self.root.join("blobs").join(format!("{hash}.png"))
    }

    pub fn put_blob(&self, image: &RasterImage) -> Result<String, StoreError> {
        let hash = image.content_hash().to_owned();
        let path = self.blob_path(&hash);
        if !path.exists() {
            write_atomic(&path, &image.to_png())?;
        }
        Ok(hash)
    }

    pub fn blob_bytes(&self, hash: &str) -> Result<Vec<u8>, StoreError> {
        let path = self.blob_path(hash);
        fs::read(&path).map_err(io_err(&path))
    }

    pub fn get_blob(&self, hash: &str) -> Result<RasterImage, StoreError> {
        RasterImage::from_png(&self.blob_bytes(hash)?).map_err(|e| StoreError::Blob(hash.to_owned(), e))
    }

    pub fn save(&self, doc: &SessionDoc) -> Result<(), StoreError> {
        let bytes = serde_json::to_vec_pretty(doc).expect("session document serializes");
        write_atomic(&self.doc_path(&doc.session_id), &bytes)
    }

    pub fn load(&self, id: &SessionId) -> Result<Option<SessionDoc>, StoreError> {
        let path = self.doc_path(id);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| StoreError::Corrupt(id.0.clone(), e)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    pub fn list(&self) -> Result<Vec<SessionId>, StoreError> {
        let dir = self.root.join("sessions");
        let mut ids: Vec<SessionId> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(Result::ok)
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().into_owned();
                name.strip_suffix(".json").map(SessionId::new)
            })
            .collect();
        ids.sort();
        Ok(ids)
    }
}
