//! Annotation backend: serves pre-extracted frames, records zone labels
//! with overwrite support and exports canonical annotation files.
//!
//! Every mutation of a session goes through that session's write lock and
//! receives the next sequence number, so the label log has a single total
//! order and the latest event per key wins. Reads take the read lock.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    is_token, write_annotation_file, write_sidecar, AnnotationRecord, AnnotationSet, RecordKey, SessionMeta, Slice, Zone,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ServiceError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("frame {0} is not in the session manifest")]
    UnknownFrame(u64),
    #[error("session {0} already exists")]
    DuplicateSession(String),
    #[error("frame file missing: {0}")]
    MissingFrameFile(String),
    #[error("frame path must be relative and stay under the frames root: {0}")]
    FrameOutsideRoot(String),
    #[error("{0}")]
    StrideMismatch(String),
    #[error("unknown zone code {0:?}")]
    UnknownZoneCode(String),
    #[error("unknown track {0}")]
    UnknownTrack(String),
    #[error("no label recorded for {0}")]
    UnknownLabel(String),
    #[error("{0}")]
    InvalidRequest(String),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownSession(_) | ServiceError::UnknownFrame(_) | ServiceError::UnknownLabel(_) => {
                StatusCode::NOT_FOUND
            }
            ServiceError::DuplicateSession(_) => StatusCode::CONFLICT,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ServiceError::UnknownSession(_) => "UnknownSession",
            ServiceError::UnknownFrame(_) => "UnknownFrame",
            ServiceError::DuplicateSession(_) => "DuplicateSession",
            ServiceError::MissingFrameFile(_) => "MissingFrameFile",
            ServiceError::FrameOutsideRoot(_) => "FrameOutsideRoot",
            ServiceError::StrideMismatch(_) => "StrideMismatch",
            ServiceError::UnknownZoneCode(_) => "UnknownZoneCode",
            ServiceError::UnknownTrack(_) => "UnknownTrack",
            ServiceError::UnknownLabel(_) => "UnknownLabel",
            ServiceError::InvalidRequest(_) => "InvalidRequest",
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.kind(), "message": self.to_string() });
        (self.status(), Json(body)).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub frame_index: u64,
    pub path: PathBuf,
}

/// Pre-extracted frame images of one session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameManifest {
    pub frames: Vec<FrameEntry>,
    pub frame_stride: u32,
}

impl FrameManifest {
    /// Checks ordering, stride alignment and that every file exists.
    /// Relative paths resolve against `root`.
    pub fn check(&self, root: &Path) -> Result<(), ServiceError> {
        if self.frame_stride < 1 {
            return Err(ServiceError::StrideMismatch("frame_stride must be at least 1".into()));
        }
        let stride = u64::from(self.frame_stride);
        for (k, f) in self.frames.iter().enumerate() {
            if f.frame_index % stride != 0 {
                return Err(ServiceError::StrideMismatch(format!(
                    "frame_index {} is not a multiple of stride {}",
                    f.frame_index, stride
                )));
            }
            if k > 0 && f.frame_index <= self.frames[k - 1].frame_index {
                return Err(ServiceError::StrideMismatch(format!(
                    "frame_index {} does not increase after {}",
                    f.frame_index,
                    self.frames[k - 1].frame_index
                )));
            }
            if !f.path.components().all(|c| matches!(c, Component::Normal(_) | Component::CurDir)) {
                return Err(ServiceError::FrameOutsideRoot(f.path.display().to_string()));
            }
            if !root.join(&f.path).is_file() {
                return Err(ServiceError::MissingFrameFile(f.path.display().to_string()));
            }
        }
        Ok(())
    }

    /// Builds a manifest from image files whose stem ends in the frame
    /// number (`frame_000012.png`). Files off the stride are skipped and
    /// paths are relative to `dir`.
    pub fn from_dir(dir: &Path, frame_stride: u32) -> std::io::Result<FrameManifest> {
        let mut frames = Vec::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if !path.is_file() {
                continue;
            }
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            let digits: String = stem.chars().rev().take_while(char::is_ascii_digit).collect::<Vec<_>>().into_iter().rev().collect();
            let Ok(index) = digits.parse::<u64>() else { continue };
            if index % u64::from(frame_stride.max(1)) == 0 {
                frames.push(FrameEntry { frame_index: index, path: PathBuf::from(path.file_name().unwrap_or_default()) });
            }
        }
        frames.sort_by_key(|f| f.frame_index);
        frames.dedup_by_key(|f| f.frame_index);
        Ok(FrameManifest { frames, frame_stride })
    }
}

/// Body of `POST /sessions`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    pub meta: SessionMeta,
    pub manifest: FrameManifest,
    /// Defaults to `t1..tN` for a group of N.
    #[serde(default)]
    pub tracks: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub frames: usize,
    pub tracks: Vec<String>,
    pub units_per_track: usize,
}

/// Body of `POST /sessions/{id}/labels`. The service assigns the
/// sequence number on receipt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelRequest {
    pub coder_id: String,
    pub pass_id: u32,
    pub frame_index: u64,
    pub track_id: String,
    pub zone: String,
    #[serde(default)]
    pub note: Option<String>,
}

/// A stored label event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEvent {
    pub coder_id: String,
    pub pass_id: u32,
    pub frame_index: u64,
    pub track_id: String,
    pub zone: Zone,
    pub note: Option<String>,
    pub received_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelAck {
    pub received_at: u64,
    pub frame_index: u64,
    pub track_id: String,
    /// Current zone code for the key after this event.
    pub zone: char,
    pub overwrote: bool,
}

/// Body of `POST /sessions/{id}/notes`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoteRequest {
    pub coder_id: String,
    pub pass_id: u32,
    pub frame_index: u64,
    pub track_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextUnit {
    Unit { frame_index: u64, tracks: Vec<String> },
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackProgress {
    pub labeled: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceProgress {
    pub coder_id: String,
    pub pass_id: u32,
    pub tracks: BTreeMap<String, TrackProgress>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub session_id: String,
    pub units_per_track: usize,
    pub slices: Vec<SliceProgress>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Export {
    pub csv: Vec<u8>,
    pub sidecar: String,
    pub partial: bool,
}

#[derive(Debug, Default)]
struct LabelLog {
    next_seq: u64,
    current: BTreeMap<RecordKey, LabelEvent>,
    events: Vec<LabelEvent>,
}

#[derive(Debug)]
struct Session {
    meta: SessionMeta,
    root: PathBuf,
    frames: BTreeMap<u64, PathBuf>,
    tracks: Vec<String>,
    log: RwLock<LabelLog>,
}

impl Session {
    fn labeled(&self, log: &LabelLog, slice: &Slice, frame: u64, track: &str) -> bool {
        log.current.contains_key(&RecordKey {
            coder_id: slice.coder_id.clone(),
            pass_id: slice.pass_id,
            frame_index: frame,
            track_id: track.to_string(),
        })
    }
}

/// All sessions served by one process.
#[derive(Debug)]
pub struct SessionStore {
    frames_root: PathBuf,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

fn check_slice(coder_id: &str, pass_id: u32) -> Result<Slice, ServiceError> {
    if !is_token(coder_id) {
        return Err(ServiceError::InvalidRequest(format!("invalid coder id {coder_id:?}")));
    }
    if pass_id < 1 {
        return Err(ServiceError::InvalidRequest("pass must be at least 1".into()));
    }
    Ok(Slice::new(coder_id, pass_id))
}

impl SessionStore {
    pub fn new(frames_root: impl Into<PathBuf>) -> Self {
        SessionStore { frames_root: frames_root.into(), sessions: RwLock::new(HashMap::new()) }
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ServiceError> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    pub fn create_session(&self, req: CreateSession) -> Result<SessionSummary, ServiceError> {
        let problems = req.meta.problems();
        if !problems.is_empty() {
            return Err(ServiceError::InvalidRequest(problems.join("; ")));
        }
        if req.manifest.frame_stride != req.meta.frame_stride {
            return Err(ServiceError::StrideMismatch(format!(
                "manifest stride {} differs from session stride {}",
                req.manifest.frame_stride, req.meta.frame_stride
            )));
        }
        req.manifest.check(&self.frames_root)?;
        let tracks = req
            .tracks
            .unwrap_or_else(|| (1..=req.meta.group_size).map(|k| format!("t{k}")).collect());
        let distinct: BTreeSet<&String> = tracks.iter().collect();
        if tracks.is_empty() || distinct.len() != tracks.len() || tracks.iter().any(|t| !is_token(t)) {
            return Err(ServiceError::InvalidRequest("tracks must be distinct non-empty tokens".into()));
        }
        if tracks.len() > req.meta.group_size as usize {
            return Err(ServiceError::InvalidRequest(format!(
                "{} tracks exceed group_size {}",
                tracks.len(),
                req.meta.group_size
            )));
        }

        let mut sessions = self.sessions.write().expect("session map poisoned");
        let id = req.meta.session_id.clone();
        if sessions.contains_key(&id) {
            return Err(ServiceError::DuplicateSession(id));
        }
        let session = Session {
            meta: req.meta,
            root: self.frames_root.clone(),
            frames: req.manifest.frames.into_iter().map(|f| (f.frame_index, f.path)).collect(),
            tracks,
            log: RwLock::new(LabelLog::default()),
        };
        let summary = SessionSummary {
            session_id: id.clone(),
            frames: session.frames.len(),
            tracks: session.tracks.clone(),
            units_per_track: session.frames.len(),
        };
        sessions.insert(id, Arc::new(session));
        Ok(summary)
    }

    pub fn record_label(&self, session_id: &str, req: LabelRequest) -> Result<LabelAck, ServiceError> {
        let session = self.session(session_id)?;
        let slice = check_slice(&req.coder_id, req.pass_id)?;
        if !session.frames.contains_key(&req.frame_index) {
            return Err(ServiceError::UnknownFrame(req.frame_index));
        }
        if !session.tracks.contains(&req.track_id) {
            return Err(ServiceError::UnknownTrack(req.track_id));
        }
        let zone: Zone = req.zone.parse().map_err(|_| ServiceError::UnknownZoneCode(req.zone.clone()))?;
        let note = req.note.filter(|n| !n.is_empty());

        let mut log = session.log.write().expect("label log poisoned");
        let event = LabelEvent {
            coder_id: slice.coder_id,
            pass_id: slice.pass_id,
            frame_index: req.frame_index,
            track_id: req.track_id,
            zone,
            note,
            received_at: log.next_seq,
        };
        Ok(Self::apply(&mut log, event))
    }

    fn apply(log: &mut LabelLog, event: LabelEvent) -> LabelAck {
        log.next_seq += 1;
        let key = RecordKey {
            coder_id: event.coder_id.clone(),
            pass_id: event.pass_id,
            frame_index: event.frame_index,
            track_id: event.track_id.clone(),
        };
        let ack = LabelAck {
            received_at: event.received_at,
            frame_index: event.frame_index,
            track_id: event.track_id.clone(),
            zone: event.zone.code(),
            overwrote: log.current.contains_key(&key),
        };
        log.events.push(event.clone());
        log.current.insert(key, event);
        ack
    }

    /// Attaches a note to the current label of a unit. Recorded as a new
    /// event carrying the same zone.
    pub fn add_note(&self, session_id: &str, req: NoteRequest) -> Result<LabelAck, ServiceError> {
        let session = self.session(session_id)?;
        let slice = check_slice(&req.coder_id, req.pass_id)?;
        let key = RecordKey {
            coder_id: slice.coder_id.clone(),
            pass_id: slice.pass_id,
            frame_index: req.frame_index,
            track_id: req.track_id.clone(),
        };
        let mut log = session.log.write().expect("label log poisoned");
        let current = log.current.get(&key).ok_or_else(|| ServiceError::UnknownLabel(key.to_string()))?;
        let event = LabelEvent {
            note: Some(req.text).filter(|t| !t.is_empty()),
            received_at: log.next_seq,
            ..current.clone()
        };
        Ok(Self::apply(&mut log, event))
    }

    /// Lowest frame with at least one unlabeled track for this slice.
    pub fn next_unit(&self, session_id: &str, coder_id: &str, pass_id: u32) -> Result<NextUnit, ServiceError> {
        let session = self.session(session_id)?;
        let slice = check_slice(coder_id, pass_id)?;
        let log = session.log.read().expect("label log poisoned");
        for &frame in session.frames.keys() {
            let open: Vec<String> = session
                .tracks
                .iter()
                .filter(|t| !session.labeled(&log, &slice, frame, t))
                .cloned()
                .collect();
            if !open.is_empty() {
                return Ok(NextUnit::Unit { frame_index: frame, tracks: open });
            }
        }
        Ok(NextUnit::Done)
    }

    pub fn progress(&self, session_id: &str, slice: Option<Slice>) -> Result<Progress, ServiceError> {
        let session = self.session(session_id)?;
        let log = session.log.read().expect("label log poisoned");
        let slices: BTreeSet<Slice> = match slice {
            Some(s) => [s].into(),
            None => log.current.keys().map(|k| Slice::new(k.coder_id.clone(), k.pass_id)).collect(),
        };
        let total = session.frames.len();
        let slices = slices
            .into_iter()
            .map(|s| {
                let tracks = session
                    .tracks
                    .iter()
                    .map(|t| {
                        let labeled = session.frames.keys().filter(|&&f| session.labeled(&log, &s, f, t)).count();
                        (t.clone(), TrackProgress { labeled, total })
                    })
                    .collect();
                SliceProgress { coder_id: s.coder_id, pass_id: s.pass_id, tracks }
            })
            .collect();
        Ok(Progress { session_id: session_id.to_string(), units_per_track: total, slices })
    }

    /// Canonical annotation CSV of the current labels of one slice.
    pub fn export_session(&self, session_id: &str, coder_id: &str, pass_id: u32) -> Result<Export, ServiceError> {
        let session = self.session(session_id)?;
        let slice = check_slice(coder_id, pass_id)?;
        let log = session.log.read().expect("label log poisoned");
        let records: Vec<AnnotationRecord> = log
            .current
            .values()
            .filter(|e| e.coder_id == slice.coder_id && e.pass_id == slice.pass_id)
            .map(|e| AnnotationRecord {
                coder_id: e.coder_id.clone(),
                pass_id: e.pass_id,
                frame_index: e.frame_index,
                track_id: e.track_id.clone(),
                zone: e.zone,
                note: e.note.clone(),
            })
            .collect();
        let partial = records.len() < session.frames.len() * session.tracks.len();
        let set = AnnotationSet::new(session.meta.clone(), records);
        let csv = write_annotation_file(&set).map_err(|e| ServiceError::InvalidRequest(e.to_string()))?;
        Ok(Export { csv, sidecar: write_sidecar(&session.meta, partial), partial })
    }

    /// Every event received for a session, in sequence order.
    pub fn events(&self, session_id: &str) -> Result<Vec<LabelEvent>, ServiceError> {
        let session = self.session(session_id)?;
        let log = session.log.read().expect("label log poisoned");
        Ok(log.events.clone())
    }

    pub fn frame_path(&self, session_id: &str, frame_index: u64) -> Result<PathBuf, ServiceError> {
        let session = self.session(session_id)?;
        let rel = session.frames.get(&frame_index).ok_or(ServiceError::UnknownFrame(frame_index))?;
        Ok(session.root.join(rel))
    }
}

#[derive(Debug, Deserialize)]
struct SliceQuery {
    coder: String,
    pass: u32,
}

#[derive(Debug, Deserialize)]
struct OptionalSliceQuery {
    coder: Option<String>,
    pass: Option<u32>,
}

type Shared = Arc<SessionStore>;

async fn create_handler(State(store): State<Shared>, Json(req): Json<CreateSession>) -> Result<Response, ServiceError> {
    let summary = store.create_session(req)?;
    Ok((StatusCode::CREATED, Json(summary)).into_response())
}

async fn frame_handler(State(store): State<Shared>, UrlPath((id, index)): UrlPath<(String, u64)>) -> Result<Response, ServiceError> {
    let path = store.frame_path(&id, index)?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|_| ServiceError::MissingFrameFile(path.display().to_string()))?;
    let mime = mime_guess::from_path(&path).first_or_octet_stream();
    Ok(([(header::CONTENT_TYPE, mime.essence_str().to_string())], bytes).into_response())
}

async fn next_handler(
    State(store): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<SliceQuery>,
) -> Result<Json<NextUnit>, ServiceError> {
    Ok(Json(store.next_unit(&id, &q.coder, q.pass)?))
}

async fn label_handler(
    State(store): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<LabelRequest>,
) -> Result<Json<LabelAck>, ServiceError> {
    Ok(Json(store.record_label(&id, req)?))
}

async fn note_handler(
    State(store): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<NoteRequest>,
) -> Result<Json<LabelAck>, ServiceError> {
    Ok(Json(store.add_note(&id, req)?))
}

async fn progress_handler(
    State(store): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<OptionalSliceQuery>,
) -> Result<Json<Progress>, ServiceError> {
    let slice = match (q.coder, q.pass) {
        (Some(c), Some(p)) => Some(check_slice(&c, p)?),
        (None, None) => None,
        _ => return Err(ServiceError::InvalidRequest("give both coder and pass, or neither".into())),
    };
    Ok(Json(store.progress(&id, slice)?))
}

async fn export_handler(
    State(store): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<SliceQuery>,
) -> Result<Response, ServiceError> {
    let export = store.export_session(&id, &q.coder, q.pass)?;
    Ok((
        [
            (header::CONTENT_TYPE, "text/csv; charset=utf-8".to_string()),
            (header::HeaderName::from_static("x-proxkit-partial"), export.partial.to_string()),
        ],
        export.csv,
    )
        .into_response())
}

async fn export_meta_handler(
    State(store): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<SliceQuery>,
) -> Result<Response, ServiceError> {
    let export = store.export_session(&id, &q.coder, q.pass)?;
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], export.sidecar).into_response())
}

pub fn router(store: Arc<SessionStore>) -> Router {
    Router::new()
        .route("/sessions", post(create_handler))
        .route("/sessions/{id}/frames/{index}", get(frame_handler))
        .route("/sessions/{id}/next", get(next_handler))
        .route("/sessions/{id}/labels", post(label_handler))
        .route("/sessions/{id}/notes", post(note_handler))
        .route("/sessions/{id}/progress", get(progress_handler))
        .route("/sessions/{id}/export", get(export_handler))
        .route("/sessions/{id}/export/meta", get(export_meta_handler))
        .with_state(store)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(store: Arc<SessionStore>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(store)).await
}
