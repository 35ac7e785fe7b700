//! Per-track proximity metrics: time share per zone, predominant zone and
//! zone transitions, computed after cleaning the raw label sequence.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::model::{AnnotationSet, Slice, Zone};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("sequence is empty")]
    EmptySequence,
    #[error("every frame is off-screen")]
    AllOffScreen,
    #[error("smoothing window must be odd and at least 3, got {0}")]
    InvalidWindow(usize),
    #[error("no records for coder/pass {0}")]
    UnknownCoderPass(Slice),
}

/// One track's labels in frame order.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneSequence {
    pub track_id: String,
    pub zones: Vec<Zone>,
    pub frame_stride: u32,
    pub frames_per_second: f64,
}

impl ZoneSequence {
    pub fn new(track_id: impl Into<String>, zones: Vec<Zone>, frame_stride: u32, frames_per_second: f64) -> Self {
        ZoneSequence { track_id: track_id.into(), zones, frame_stride, frames_per_second }
    }

    fn with_zones(&self, zones: Vec<Zone>) -> Self {
        ZoneSequence { zones, ..self.clone() }
    }
}

/// Parses a compact code string such as `"xxipp"`.
pub fn zones_from_codes(codes: &str) -> Result<Vec<Zone>, crate::model::UnknownZoneCode> {
    codes.chars().map(Zone::from_code).collect()
}

/// Removes the leading run of off-screen labels, which reflects the
/// coder's default state before the person entered the grid.
pub fn trim_leading_offscreen(seq: &ZoneSequence) -> Result<ZoneSequence, MetricsError> {
    if seq.zones.is_empty() {
        return Err(MetricsError::EmptySequence);
    }
    match seq.zones.iter().position(|z| z.is_on_grid()) {
        Some(start) => Ok(seq.with_zones(seq.zones[start..].to_vec())),
        None => Err(MetricsError::AllOffScreen),
    }
}

/// Width of the centered modal filter. Always odd and at least 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmoothingWindow(usize);

impl SmoothingWindow {
    pub fn new(width: usize) -> Result<Self, MetricsError> {
        if width >= 3 && width % 2 == 1 {
            Ok(SmoothingWindow(width))
        } else {
            Err(MetricsError::InvalidWindow(width))
        }
    }

    pub fn width(self) -> usize {
        self.0
    }
}

impl Default for SmoothingWindow {
    fn default() -> Self {
        SmoothingWindow(3)
    }
}

pub const DEFAULT_MAX_SMOOTHING_PASSES: usize = 10;

/// Result of [`smooth_blips_bounded`].
#[derive(Debug, Clone, PartialEq)]
pub struct Smoothed {
    pub zones: Vec<Zone>,
    pub passes: usize,
    /// False when the pass limit was hit before a fixpoint.
    pub converged: bool,
}

fn modal_pass(zones: &[Zone], half: usize) -> Vec<Zone> {
    let mut out = zones.to_vec();
    for i in half..zones.len() - half {
        let mut counts = [0usize; 4];
        for z in &zones[i - half..=i + half] {
            counts[z.index()] += 1;
        }
        let best = *counts.iter().max().expect("non-empty");
        let mut modes = Zone::ALL.iter().filter(|z| counts[z.index()] == best);
        if let (Some(&mode), None) = (modes.next(), modes.next()) {
            out[i] = mode;
        }
    }
    out
}

/// Iterated centered modal filter. Ties keep the original element and the
/// first and last `width / 2` elements are never changed. Stops at a
/// fixpoint or after `max_passes`.
pub fn smooth_blips_bounded(zones: &[Zone], window: SmoothingWindow, max_passes: usize) -> Smoothed {
    let half = window.width() / 2;
    if zones.len() < window.width() {
        return Smoothed { zones: zones.to_vec(), passes: 0, converged: true };
    }
    let mut current = zones.to_vec();
    for pass in 1..=max_passes {
        let next = modal_pass(&current, half);
        if next == current {
            return Smoothed { zones: current, passes: pass - 1, converged: true };
        }
        current = next;
    }
    let converged = modal_pass(&current, half) == current;
    Smoothed { zones: current, passes: max_passes, converged }
}

pub fn smooth_blips(seq: &ZoneSequence, window: SmoothingWindow) -> ZoneSequence {
    seq.with_zones(smooth_blips_bounded(&seq.zones, window, DEFAULT_MAX_SMOOTHING_PASSES).zones)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZoneShares {
    pub intimate: f64,
    pub personal: f64,
    pub social: f64,
    pub offscreen_fraction: f64,
    /// Frame counts in [`Zone::ALL`] order.
    pub counts: [u64; 4],
    pub on_grid_frames: u64,
    pub total_frames: u64,
}

impl ZoneShares {
    pub fn share(&self, zone: Zone) -> f64 {
        match zone {
            Zone::Intimate => self.intimate,
            Zone::Personal => self.personal,
            Zone::Social => self.social,
            Zone::OffScreen => self.offscreen_fraction,
        }
    }
}

/// On-grid shares use on-grid frames as denominator; the off-screen
/// fraction uses all frames.
pub fn time_in_zone(zones: &[Zone]) -> Result<ZoneShares, MetricsError> {
    if zones.is_empty() {
        return Err(MetricsError::EmptySequence);
    }
    let mut counts = [0u64; 4];
    for z in zones {
        counts[z.index()] += 1;
    }
    let total = zones.len() as u64;
    let off = counts[Zone::OffScreen.index()];
    let on_grid = total - off;
    if on_grid == 0 {
        return Err(MetricsError::AllOffScreen);
    }
    let share = |z: Zone| counts[z.index()] as f64 / on_grid as f64;
    Ok(ZoneShares {
        intimate: share(Zone::Intimate),
        personal: share(Zone::Personal),
        social: share(Zone::Social),
        offscreen_fraction: off as f64 / total as f64,
        counts,
        on_grid_frames: on_grid,
        total_frames: total,
    })
}

/// How ties between equally long dwell shares resolve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    /// Intimate > Personal > Social.
    #[default]
    ClosestFirst,
    /// Social > Personal > Intimate.
    FarthestFirst,
}

impl FromStr for TieBreak {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "closest" => Ok(TieBreak::ClosestFirst),
            "farthest" => Ok(TieBreak::FarthestFirst),
            other => Err(format!("unknown tie-break {other:?} (expected closest or farthest)")),
        }
    }
}

/// On-grid zone with the largest frame count. Never `OffScreen`.
pub fn predominant_zone(shares: &ZoneShares, tie_break: TieBreak) -> Zone {
    let order: [Zone; 3] = match tie_break {
        TieBreak::ClosestFirst => [Zone::Intimate, Zone::Personal, Zone::Social],
        TieBreak::FarthestFirst => [Zone::Social, Zone::Personal, Zone::Intimate],
    };
    let mut best = order[0];
    for &z in &order[1..] {
        if shares.counts[z.index()] > shares.counts[best.index()] {
            best = z;
        }
    }
    best
}

/// Whether a change between on-grid zones separated by off-screen frames
/// counts as a zone transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransitionRule {
    /// Only directly adjacent on-grid pairs count.
    #[default]
    AdjacentOnly,
    /// `i x x p` counts as one i→p transition.
    BridgeOffScreen,
}

impl FromStr for TransitionRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "adjacent" => Ok(TransitionRule::AdjacentOnly),
            "bridge" => Ok(TransitionRule::BridgeOffScreen),
            other => Err(format!("unknown transition rule {other:?} (expected adjacent or bridge)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TransitionStats {
    /// `matrix[from][to]` over adjacent sampled frames, in [`Zone::ALL`] order.
    pub matrix: [[u64; 4]; 4],
    pub zone_transition_count: u64,
    pub raw_change_count: u64,
}

pub fn transition_stats(zones: &[Zone], rule: TransitionRule) -> TransitionStats {
    let mut matrix = [[0u64; 4]; 4];
    let mut raw = 0;
    let mut zone_changes = 0;
    for w in zones.windows(2) {
        matrix[w[0].index()][w[1].index()] += 1;
        if w[0] != w[1] {
            raw += 1;
            if rule == TransitionRule::AdjacentOnly && w[0].is_on_grid() && w[1].is_on_grid() {
                zone_changes += 1;
            }
        }
    }
    if rule == TransitionRule::BridgeOffScreen {
        let mut last: Option<Zone> = None;
        for &z in zones.iter().filter(|z| z.is_on_grid()) {
            if matches!(last, Some(prev) if prev != z) {
                zone_changes += 1;
            }
            last = Some(z);
        }
    }
    TransitionStats { matrix, zone_transition_count: zone_changes, raw_change_count: raw }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProxemicsMetrics {
    pub shares: ZoneShares,
    pub predominant: Zone,
    pub transitions: TransitionStats,
    pub observed_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsConfig {
    pub trim_leading: bool,
    /// `None` disables blip smoothing.
    pub smoothing: Option<SmoothingWindow>,
    pub max_smoothing_passes: usize,
    pub tie_break: TieBreak,
    pub transitions: TransitionRule,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            trim_leading: true,
            smoothing: Some(SmoothingWindow::default()),
            max_smoothing_passes: DEFAULT_MAX_SMOOTHING_PASSES,
            tie_break: TieBreak::default(),
            transitions: TransitionRule::default(),
        }
    }
}

/// Cleans one sequence and derives its metrics.
pub fn sequence_metrics(seq: &ZoneSequence, config: &MetricsConfig) -> Result<ProxemicsMetrics, MetricsError> {
    let trimmed = if config.trim_leading {
        trim_leading_offscreen(seq)?
    } else {
        seq.clone()
    };
    let zones = match config.smoothing {
        Some(window) => smooth_blips_bounded(&trimmed.zones, window, config.max_smoothing_passes).zones,
        None => trimmed.zones,
    };
    let shares = time_in_zone(&zones)?;
    Ok(ProxemicsMetrics {
        predominant: predominant_zone(&shares, config.tie_break),
        transitions: transition_stats(&zones, config.transitions),
        observed_seconds: shares.total_frames as f64 * f64::from(seq.frame_stride) / seq.frames_per_second,
        shares,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedTrack {
    pub track_id: String,
    pub reason: MetricsError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionMetrics {
    pub session_id: String,
    pub slice: Slice,
    pub tracks: BTreeMap<String, ProxemicsMetrics>,
    pub skipped: Vec<SkippedTrack>,
}

/// Frame-ordered sequences for every track in one coding slice.
pub fn slice_sequences(set: &AnnotationSet, slice: &Slice) -> BTreeMap<String, ZoneSequence> {
    let mut frames: BTreeMap<&str, Vec<(u64, Zone)>> = BTreeMap::new();
    for r in set.slice_records(slice) {
        frames.entry(&r.track_id).or_default().push((r.frame_index, r.zone));
    }
    frames
        .into_iter()
        .map(|(track, mut v)| {
            v.sort_by_key(|&(f, _)| f);
            let seq = ZoneSequence::new(
                track,
                v.into_iter().map(|(_, z)| z).collect(),
                set.meta.frame_stride,
                set.meta.frames_per_second,
            );
            (track.to_string(), seq)
        })
        .collect()
}

/// Metrics for every track coded in `slice`. Tracks without any on-grid
/// label are reported in `skipped`.
pub fn session_metrics(set: &AnnotationSet, slice: &Slice, config: &MetricsConfig) -> Result<SessionMetrics, MetricsError> {
    let sequences = slice_sequences(set, slice);
    if sequences.is_empty() {
        return Err(MetricsError::UnknownCoderPass(slice.clone()));
    }
    let mut tracks = BTreeMap::new();
    let mut skipped = Vec::new();
    for (track_id, seq) in sequences {
        match sequence_metrics(&seq, config) {
            Ok(m) => {
                tracks.insert(track_id, m);
            }
            Err(reason) => skipped.push(SkippedTrack { track_id, reason }),
        }
    }
    Ok(SessionMetrics { session_id: set.meta.session_id.clone(), slice: slice.clone(), tracks, skipped })
}

/// Header of the metrics export CSV.
pub const METRICS_HEADER: [&str; 14] = [
    "session_id",
    "coder_id",
    "pass_id",
    "track_id",
    "intimate",
    "personal",
    "social",
    "offscreen",
    "predominant",
    "zone_transitions",
    "raw_changes",
    "on_grid_frames",
    "total_frames",
    "observed_seconds",
];

/// One exported row of the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub session_id: String,
    pub slice: Slice,
    pub track_id: String,
    pub intimate: f64,
    pub personal: f64,
    pub social: f64,
    pub offscreen: f64,
    pub predominant: Zone,
    pub zone_transitions: u64,
    pub raw_changes: u64,
    pub on_grid_frames: u64,
    pub total_frames: u64,
    pub observed_seconds: f64,
}

impl MetricsRow {
    pub fn from_metrics(session_id: &str, slice: &Slice, track_id: &str, m: &ProxemicsMetrics) -> Self {
        MetricsRow {
            session_id: session_id.to_string(),
            slice: slice.clone(),
            track_id: track_id.to_string(),
            intimate: m.shares.intimate,
            personal: m.shares.personal,
            social: m.shares.social,
            offscreen: m.shares.offscreen_fraction,
            predominant: m.predominant,
            zone_transitions: m.transitions.zone_transition_count,
            raw_changes: m.transitions.raw_change_count,
            on_grid_frames: m.shares.on_grid_frames,
            total_frames: m.shares.total_frames,
            observed_seconds: m.observed_seconds,
        }
    }
}

impl SessionMetrics {
    pub fn rows(&self) -> Vec<MetricsRow> {
        self.tracks
            .iter()
            .map(|(t, m)| MetricsRow::from_metrics(&self.session_id, &self.slice, t, m))
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum MetricsCsvError {
    #[error("metrics csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("metrics csv line {line}: {message}")]
    Field { line: u64, message: String },
    #[error("metrics csv: header does not match `{}`", METRICS_HEADER.join(","))]
    Header,
}

pub fn write_metrics_csv<W: std::io::Write>(out: W, rows: &[MetricsRow]) -> Result<(), MetricsCsvError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record([
            r.session_id.clone(),
            r.slice.coder_id.clone(),
            r.slice.pass_id.to_string(),
            r.track_id.clone(),
            r.intimate.to_string(),
            r.personal.to_string(),
            r.social.to_string(),
            r.offscreen.to_string(),
            r.predominant.code().to_string(),
            r.zone_transitions.to_string(),
            r.raw_changes.to_string(),
            r.on_grid_frames.to_string(),
            r.total_frames.to_string(),
            r.observed_seconds.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_metrics_csv<R: std::io::Read>(input: R) -> Result<Vec<MetricsRow>, MetricsCsvError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let expected = &METRICS_HEADER;
    if !rdr.headers()?.iter().eq(expected.iter().copied()) {
        return Err(MetricsCsvError::Header);
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |message: String| MetricsCsvError::Field { line, message };
        let f = |i: usize| -> Result<f64, MetricsCsvError> {
            rec[i].parse::<f64>().map_err(|_| field(format!("{} is not a number: {:?}", expected[i], &rec[i])))
        };
        let n = |i: usize| -> Result<u64, MetricsCsvError> {
            rec[i].parse::<u64>().map_err(|_| field(format!("{} is not a count: {:?}", expected[i], &rec[i])))
        };
        let pass_id = rec[2].parse::<u32>().map_err(|_| field(format!("bad pass_id {:?}", &rec[2])))?;
        rows.push(MetricsRow {
            session_id: rec[0].to_string(),
            slice: Slice::new(&rec[1], pass_id),
            track_id: rec[3].to_string(),
            intimate: f(4)?,
            personal: f(5)?,
            social: f(6)?,
            offscreen: f(7)?,
            predominant: rec[8].parse().map_err(|e: crate::model::UnknownZoneCode| field(e.to_string()))?,
            zone_transitions: n(9)?,
            raw_changes: n(10)?,
            on_grid_frames: n(11)?,
            total_frames: n(12)?,
            observed_seconds: f(13)?,
        });
    }
    Ok(rows)
}

impl fmt::Display for SkippedTrack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "track {} skipped: {}", self.track_id, self.reason)
    }
}
