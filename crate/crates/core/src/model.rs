//! Domain types shared by every pipeline stage: zone labels, session
//! metadata, annotation records and their canonical CSV form.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Column header of the annotation CSV.
pub const ANNOTATION_HEADER: [&str; 6] = ["coder_id", "pass_id", "frame_index", "track_id", "zone", "note"];

pub const DEFAULT_FRAME_STRIDE: u32 = 4;
pub const DEFAULT_FPS: f64 = 25.0;
pub const DEFAULT_GRID_CM: (u32, u32) = (150, 150);

/// A coding label for one person in one sampled frame.
///
/// The three on-grid variants follow the floor grid colors; `OffScreen`
/// covers everything outside the grid, including the public zone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Zone {
    Intimate,
    Personal,
    Social,
    OffScreen,
}

impl Zone {
    /// All variants in matrix order (also closest-first proximity order).
    pub const ALL: [Zone; 4] = [Zone::Intimate, Zone::Personal, Zone::Social, Zone::OffScreen];
    pub const ON_GRID: [Zone; 3] = [Zone::Intimate, Zone::Personal, Zone::Social];

    pub fn code(self) -> char {
        match self {
            Zone::Intimate => 'i',
            Zone::Personal => 'p',
            Zone::Social => 's',
            Zone::OffScreen => 'x',
        }
    }

    pub fn from_code(c: char) -> Result<Zone, UnknownZoneCode> {
        match c {
            'i' => Ok(Zone::Intimate),
            'p' => Ok(Zone::Personal),
            's' => Ok(Zone::Social),
            'x' => Ok(Zone::OffScreen),
            other => Err(UnknownZoneCode(other.to_string())),
        }
    }

    /// Row/column index in 4×4 matrices.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_on_grid(self) -> bool {
        self != Zone::OffScreen
    }

    /// Grid marker color used in the coding legend.
    pub fn color(self) -> &'static str {
        match self {
            Zone::Intimate => "red",
            Zone::Personal => "orange",
            Zone::Social => "purple",
            Zone::OffScreen => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown zone code {0:?} (expected one of i, p, s, x)")]
pub struct UnknownZoneCode(pub String);

impl FromStr for Zone {
    type Err = UnknownZoneCode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Zone::from_code(c),
            _ => Err(UnknownZoneCode(s.to_string())),
        }
    }
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// True for identifiers usable as coder, track, session or participant ids.
///
/// Tokens are non-empty and free of whitespace and the separators used by
/// the text formats (`,` `;` `:` `=` `"`).
pub fn is_token(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c.is_whitespace() || matches!(c, ',' | ';' | ':' | '=' | '"'))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentType {
    Robot,
    Virtual,
}

impl AgentType {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentType::Robot => "robot",
            AgentType::Virtual => "virtual",
        }
    }
}

impl FromStr for AgentType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "robot" => Ok(AgentType::Robot),
            "virtual" => Ok(AgentType::Virtual),
            other => Err(format!("unknown agent type {other:?} (expected robot or virtual)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub session_id: String,
    pub agent_type: AgentType,
    pub group_size: u32,
    #[serde(default = "default_stride")]
    pub frame_stride: u32,
    #[serde(default = "default_fps")]
    pub frames_per_second: f64,
    #[serde(default = "default_grid")]
    pub grid_size_cm: (u32, u32),
}

fn default_stride() -> u32 {
    DEFAULT_FRAME_STRIDE
}
fn default_fps() -> f64 {
    DEFAULT_FPS
}
fn default_grid() -> (u32, u32) {
    DEFAULT_GRID_CM
}

impl SessionMeta {
    pub fn new(session_id: impl Into<String>, agent_type: AgentType, group_size: u32) -> Self {
        SessionMeta {
            session_id: session_id.into(),
            agent_type,
            group_size,
            frame_stride: DEFAULT_FRAME_STRIDE,
            frames_per_second: DEFAULT_FPS,
            grid_size_cm: DEFAULT_GRID_CM,
        }
    }

    /// Metadata invariant violations, empty when the metadata is usable.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !is_token(&self.session_id) {
            out.push(format!("session_id {:?} is not a valid token", self.session_id));
        }
        if self.group_size < 1 {
            out.push("group_size must be at least 1".to_string());
        }
        if self.frame_stride < 1 {
            out.push("frame_stride must be at least 1".to_string());
        }
        if !(self.frames_per_second.is_finite() && self.frames_per_second > 0.0) {
            out.push(format!("fps must be positive, got {}", self.frames_per_second));
        }
        if self.grid_size_cm.0 == 0 || self.grid_size_cm.1 == 0 {
            out.push("grid_cm dimensions must be positive".to_string());
        }
        out
    }
}

/// Parsed sidecar file: session metadata plus export flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Sidecar {
    pub meta: SessionMeta,
    pub partial: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SidecarError {
    #[error("line {line}: expected `key=value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for {key}: {message}")]
    BadValue { line: usize, key: String, message: String },
    #[error("missing required key {0}")]
    MissingKey(&'static str),
    #[error("invalid metadata: {0}")]
    Invalid(String),
}

/// Renders the sidecar text for `meta`. `partial=true` is only written
/// when set.
pub fn write_sidecar(meta: &SessionMeta, partial: bool) -> String {
    let mut s = format!(
        "session_id={}\nagent_type={}\ngroup_size={}\nframe_stride={}\nfps={}\ngrid_cm={}x{}\n",
        meta.session_id,
        meta.agent_type.as_str(),
        meta.group_size,
        meta.frame_stride,
        meta.frames_per_second,
        meta.grid_size_cm.0,
        meta.grid_size_cm.1
    );
    if partial {
        s.push_str("partial=true\n");
    }
    s
}

pub fn parse_sidecar(text: &str) -> Result<Sidecar, SidecarError> {
    let mut session_id = None;
    let mut agent_type = None;
    let mut group_size = None;
    let mut frame_stride = None;
    let mut fps = None;
    let mut grid = None;
    let mut partial = false;
    let mut warnings = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or(SidecarError::Syntax { line })?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |message: String| SidecarError::BadValue { line, key: key.to_string(), message };
        match key {
            "session_id" => session_id = Some(value.to_string()),
            "agent_type" => agent_type = Some(value.parse::<AgentType>().map_err(bad)?),
            "group_size" => group_size = Some(value.parse::<u32>().map_err(|e| bad(e.to_string()))?),
            "frame_stride" => frame_stride = Some(value.parse::<u32>().map_err(|e| bad(e.to_string()))?),
            "fps" => fps = Some(value.parse::<f64>().map_err(|e| bad(e.to_string()))?),
            "grid_cm" => {
                let (w, h) = value.split_once('x').ok_or_else(|| bad("expected WxH".to_string()))?;
                let w = w.trim().parse::<u32>().map_err(|e| bad(e.to_string()))?;
                let h = h.trim().parse::<u32>().map_err(|e| bad(e.to_string()))?;
                grid = Some((w, h));
            }
            "partial" => partial = value.parse::<bool>().map_err(|e| bad(e.to_string()))?,
            _ => return Err(SidecarError::UnknownKey { line, key: key.to_string() }),
        }
    }

    let frames_per_second = match fps {
        Some(v) => v,
        None => {
            warnings.push(format!("fps missing; defaulting to {DEFAULT_FPS}"));
            DEFAULT_FPS
        }
    };
    let meta = SessionMeta {
        session_id: session_id.ok_or(SidecarError::MissingKey("session_id"))?,
        agent_type: agent_type.ok_or(SidecarError::MissingKey("agent_type"))?,
        group_size: group_size.ok_or(SidecarError::MissingKey("group_size"))?,
        frame_stride: frame_stride.unwrap_or(DEFAULT_FRAME_STRIDE),
        frames_per_second,
        grid_size_cm: grid.unwrap_or(DEFAULT_GRID_CM),
    };
    let problems = meta.problems();
    if !problems.is_empty() {
        return Err(SidecarError::Invalid(problems.join("; ")));
    }
    Ok(Sidecar { meta, partial, warnings })
}

/// Unique key of one label within an annotation set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordKey {
    pub coder_id: String,
    pub pass_id: u32,
    pub frame_index: u64,
    pub track_id: String,
}

impl fmt::Display for RecordKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.coder_id, self.pass_id, self.frame_index, self.track_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub coder_id: String,
    pub pass_id: u32,
    pub frame_index: u64,
    pub track_id: String,
    pub zone: Zone,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl AnnotationRecord {
    pub fn new(coder_id: &str, pass_id: u32, frame_index: u64, track_id: &str, zone: Zone) -> Self {
        AnnotationRecord {
            coder_id: coder_id.to_string(),
            pass_id,
            frame_index,
            track_id: track_id.to_string(),
            zone,
            note: None,
        }
    }

    pub fn key(&self) -> RecordKey {
        RecordKey {
            coder_id: self.coder_id.clone(),
            pass_id: self.pass_id,
            frame_index: self.frame_index,
            track_id: self.track_id.clone(),
        }
    }

    fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.coder_id
            .cmp(&other.coder_id)
            .then(self.pass_id.cmp(&other.pass_id))
            .then(self.frame_index.cmp(&other.frame_index))
            .then_with(|| self.track_id.cmp(&other.track_id))
    }
}

/// A coding slice: one coder's labels from one pass.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Slice {
    pub coder_id: String,
    pub pass_id: u32,
}

impl Slice {
    pub fn new(coder_id: impl Into<String>, pass_id: u32) -> Self {
        Slice { coder_id: coder_id.into(), pass_id }
    }
}

impl fmt::Display for Slice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.coder_id, self.pass_id)
    }
}

impl FromStr for Slice {
    type Err = String;

    /// Parses `coder:pass`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (coder, pass) = s.rsplit_once(':').ok_or_else(|| format!("expected coder:pass, got {s:?}"))?;
        if !is_token(coder) {
            return Err(format!("invalid coder id {coder:?}"));
        }
        let pass_id = pass.parse::<u32>().map_err(|_| format!("invalid pass id {pass:?}"))?;
        if pass_id < 1 {
            return Err("pass id must be at least 1".to_string());
        }
        Ok(Slice::new(coder, pass_id))
    }
}

/// One session's labels across all coders and passes.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    pub meta: SessionMeta,
    pub records: Vec<AnnotationRecord>,
}

impl AnnotationSet {
    pub fn new(meta: SessionMeta, records: Vec<AnnotationRecord>) -> Self {
        AnnotationSet { meta, records }
    }

    /// Sorts records into canonical `(coder, pass, frame, track)` order.
    pub fn canonicalize(&mut self) {
        self.records.sort_by(AnnotationRecord::canonical_cmp);
    }

    pub fn canonicalized(mut self) -> Self {
        self.canonicalize();
        self
    }

    pub fn slices(&self) -> BTreeSet<Slice> {
        self.records.iter().map(|r| Slice::new(r.coder_id.clone(), r.pass_id)).collect()
    }

    pub fn track_ids(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.track_id.as_str()).collect()
    }

    pub fn slice_records<'a>(&'a self, slice: &'a Slice) -> impl Iterator<Item = &'a AnnotationRecord> + 'a {
        self.records
            .iter()
            .filter(move |r| r.coder_id == slice.coder_id && r.pass_id == slice.pass_id)
    }
}

/// Where a validation issue was found.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Locator {
    Meta,
    Record { index: usize, key: RecordKey },
    Set,
}

impl fmt::Display for Locator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Locator::Meta => write!(f, "meta"),
            Locator::Record { index, key } => write!(f, "record {index} {key}"),
            Locator::Set => write!(f, "set"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IssueKind {
    InvalidMeta,
    InvalidToken,
    InvalidPass,
    EmptyNote,
    DuplicateKey,
    NonMonotoneStride,
    TooManyTracks,
    NotCanonicalOrder,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub locator: Locator,
    pub kind: IssueKind,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at {}: {}", self.kind, self.locator, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub errors: Vec<Issue>,
    pub warnings: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn has(&self, kind: IssueKind) -> bool {
        self.errors.iter().any(|e| e.kind == kind)
    }
}

/// Checks every invariant of `set`. Violations are returned as data.
///
/// Record order is not an error (writing canonicalizes it); unsorted
/// records produce a single warning.
pub fn validate_annotation_set(set: &AnnotationSet) -> ValidationReport {
    let mut report = ValidationReport::default();
    for p in set.meta.problems() {
        report.errors.push(Issue { locator: Locator::Meta, kind: IssueKind::InvalidMeta, message: p });
    }
    let stride = u64::from(set.meta.frame_stride.max(1));

    let mut seen: HashMap<RecordKey, usize> = HashMap::new();
    let mut tracks: BTreeSet<&str> = BTreeSet::new();
    for (index, r) in set.records.iter().enumerate() {
        let key = r.key();
        let loc = || Locator::Record { index, key: key.clone() };
        if !is_token(&r.coder_id) {
            report.errors.push(Issue {
                locator: loc(),
                kind: IssueKind::InvalidToken,
                message: format!("coder_id {:?} is not a valid token", r.coder_id),
            });
        }
        if !is_token(&r.track_id) {
            report.errors.push(Issue {
                locator: loc(),
                kind: IssueKind::InvalidToken,
                message: format!("track_id {:?} is not a valid token", r.track_id),
            });
        }
        if r.pass_id < 1 {
            report.errors.push(Issue {
                locator: loc(),
                kind: IssueKind::InvalidPass,
                message: "pass_id must be at least 1".to_string(),
            });
        }
        if matches!(&r.note, Some(n) if n.is_empty()) {
            report.errors.push(Issue {
                locator: loc(),
                kind: IssueKind::EmptyNote,
                message: "note is present but empty".to_string(),
            });
        }
        if r.frame_index % stride != 0 {
            report.errors.push(Issue {
                locator: loc(),
                kind: IssueKind::NonMonotoneStride,
                message: format!("frame_index {} is not a multiple of stride {}", r.frame_index, stride),
            });
        }
        if let Some(first) = seen.get(&key) {
            report.errors.push(Issue {
                locator: loc(),
                kind: IssueKind::DuplicateKey,
                message: format!("duplicate key {key}, first seen at record {first}"),
            });
        } else {
            seen.insert(key, index);
        }
        tracks.insert(&r.track_id);
    }
    if tracks.len() > set.meta.group_size as usize {
        report.errors.push(Issue {
            locator: Locator::Set,
            kind: IssueKind::TooManyTracks,
            message: format!("{} distinct tracks exceed group_size {}", tracks.len(), set.meta.group_size),
        });
    }
    if set.records.windows(2).any(|w| w[0].canonical_cmp(&w[1]) == Ordering::Greater) {
        report.warnings.push(Issue {
            locator: Locator::Set,
            kind: IssueKind::NotCanonicalOrder,
            message: "records are not in canonical order".to_string(),
        });
    }
    report
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnnotationParseError {
    #[error("missing header: first line must be `{}`", ANNOTATION_HEADER.join(","))]
    MissingHeader,
    #[error("line {line}: {source}")]
    UnknownZoneCode { line: u64, source: UnknownZoneCode },
    #[error("line {line}: duplicate key {key} (first at line {first_line})")]
    DuplicateKey { line: u64, key: RecordKey, first_line: u64 },
    #[error("line {line}: frame_index {frame_index} is not a multiple of stride {stride}")]
    NonMonotoneStride { line: u64, frame_index: u64, stride: u32 },
    #[error("line {line}: track {track_id} exceeds group_size {group_size}")]
    TooManyTracks { line: u64, track_id: String, group_size: u32 },
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("invalid session metadata: {0}")]
    InvalidMeta(String),
}

/// Parses annotation CSV bytes against the session metadata from the
/// sidecar. The returned set is in canonical order.
pub fn parse_annotation_file(bytes: &[u8], meta: &SessionMeta) -> Result<AnnotationSet, AnnotationParseError> {
    let problems = meta.problems();
    if !problems.is_empty() {
        return Err(AnnotationParseError::InvalidMeta(problems.join("; ")));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(bytes);
    let mut rows = reader.records();

    match rows.next() {
        Some(Ok(header)) if header.iter().eq(ANNOTATION_HEADER.iter().copied()) => {}
        Some(Err(e)) => {
            return Err(AnnotationParseError::Malformed { line: 1, message: e.to_string() });
        }
        _ => return Err(AnnotationParseError::MissingHeader),
    }

    let stride = meta.frame_stride;
    let mut seen: HashMap<RecordKey, u64> = HashMap::new();
    let mut tracks: BTreeSet<String> = BTreeSet::new();
    let mut records = Vec::new();
    for row in rows {
        let row = row.map_err(|e| AnnotationParseError::Malformed {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let malformed = |message: String| AnnotationParseError::Malformed { line, message };
        if row.len() != ANNOTATION_HEADER.len() {
            return Err(malformed(format!("expected {} columns, found {}", ANNOTATION_HEADER.len(), row.len())));
        }
        let coder_id = &row[0];
        if !is_token(coder_id) {
            return Err(malformed(format!("invalid coder_id {coder_id:?}")));
        }
        let pass_id: u32 = row[1].parse().map_err(|_| malformed(format!("invalid pass_id {:?}", &row[1])))?;
        if pass_id < 1 {
            return Err(malformed("pass_id must be at least 1".to_string()));
        }
        let frame_index: u64 =
            row[2].parse().map_err(|_| malformed(format!("invalid frame_index {:?}", &row[2])))?;
        let track_id = &row[3];
        if !is_token(track_id) {
            return Err(malformed(format!("invalid track_id {track_id:?}")));
        }
        let zone: Zone = row[4].parse().map_err(|source| AnnotationParseError::UnknownZoneCode { line, source })?;
        if !frame_index.is_multiple_of(u64::from(stride)) {
            return Err(AnnotationParseError::NonMonotoneStride { line, frame_index, stride });
        }
        let note = if row[5].is_empty() { None } else { Some(row[5].to_string()) };
        let record = AnnotationRecord {
            coder_id: coder_id.to_string(),
            pass_id,
            frame_index,
            track_id: track_id.to_string(),
            zone,
            note,
        };
        let key = record.key();
        if let Some(&first_line) = seen.get(&key) {
            return Err(AnnotationParseError::DuplicateKey { line, key, first_line });
        }
        seen.insert(key, line);
        if tracks.insert(record.track_id.clone()) && tracks.len() > meta.group_size as usize {
            return Err(AnnotationParseError::TooManyTracks {
                line,
                track_id: record.track_id,
                group_size: meta.group_size,
            });
        }
        records.push(record);
    }
    Ok(AnnotationSet::new(meta.clone(), records).canonicalized())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("annotation set is invalid: {}", .0.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; "))]
pub struct InvalidSet(pub Vec<Issue>);

/// Canonical serialization: sorted records, fixed columns, LF endings,
/// notes quoted only where CSV requires it.
pub fn write_annotation_file(set: &AnnotationSet) -> Result<Vec<u8>, InvalidSet> {
    let report = validate_annotation_set(set);
    if !report.is_valid() {
        return Err(InvalidSet(report.errors));
    }
    let mut records: Vec<&AnnotationRecord> = set.records.iter().collect();
    records.sort_by(|a, b| a.canonical_cmp(b));

    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(Vec::new());
    writer.write_record(ANNOTATION_HEADER).expect("in-memory write");
    for r in records {
        let pass = r.pass_id.to_string();
        let frame = r.frame_index.to_string();
        let zone = r.zone.code().to_string();
        writer
            .write_record([
                r.coder_id.as_str(),
                pass.as_str(),
                frame.as_str(),
                r.track_id.as_str(),
                zone.as_str(),
                r.note.as_deref().unwrap_or(""),
            ])
            .expect("in-memory write");
    }
    Ok(writer.into_inner().expect("in-memory flush"))
}
