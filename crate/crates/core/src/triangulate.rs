//! Joins behavioral metrics with bonding measures through the manual
//! participant↔track link table, standardizes every variable and reports
//! pairwise correlations.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::metrics::MetricsRow;
use crate::stats::{self, StatsError};
use crate::survey::BondingMeasure;

/// Proximity variables carried from the metrics export.
pub const PROXIMITY_VARIABLES: [&str; 7] =
    ["intimate", "personal", "social", "offscreen", "zone_transitions", "raw_changes", "observed_seconds"];
/// Bonding variables carried from the survey.
pub const BONDING_VARIABLES: [&str; 2] = ["gas_score", "distance_to_agent_mm"];

const KEY_COLUMNS: [&str; 3] = ["session_id", "participant_id", "track_id"];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct LinkRow {
    pub session_id: String,
    pub participant_id: String,
    pub track_id: String,
}

impl fmt::Display for LinkRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}↔{}", self.session_id, self.participant_id, self.track_id)
    }
}

#[derive(Debug, Error)]
pub enum JoinError {
    #[error("link table: {0}")]
    Csv(#[from] csv::Error),
    #[error("link table: header must be session_id,participant_id,track_id")]
    LinkHeader,
    #[error("link table line {line}: {message}")]
    LinkField { line: u64, message: String },
    #[error("duplicate link key {0}")]
    DuplicateLinkKey(String),
    #[error("link {0} references {1} that does not exist")]
    DanglingReference(LinkRow, &'static str),
    #[error("metrics contain more than one row for session {0} track {1}; export a single coder/pass")]
    AmbiguousMetrics(String, String),
    #[error("bonding data contain more than one row for session {0} participant {1}")]
    AmbiguousBonding(String, String),
}

/// Manual mapping between survey participants and coded tracks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinkTable {
    rows: Vec<LinkRow>,
}

impl LinkTable {
    /// Builds a table, rejecting repeated `(session, participant)` or
    /// `(session, track)` keys.
    pub fn new(rows: Vec<LinkRow>) -> Result<Self, JoinError> {
        let mut participants = BTreeSet::new();
        let mut tracks = BTreeSet::new();
        for r in &rows {
            if !participants.insert((&r.session_id, &r.participant_id)) {
                return Err(JoinError::DuplicateLinkKey(format!("{}/{}", r.session_id, r.participant_id)));
            }
            if !tracks.insert((&r.session_id, &r.track_id)) {
                return Err(JoinError::DuplicateLinkKey(format!("{}/{}", r.session_id, r.track_id)));
            }
        }
        Ok(LinkTable { rows })
    }

    pub fn rows(&self) -> &[LinkRow] {
        &self.rows
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self, JoinError> {
        let mut rdr = csv::ReaderBuilder::new().from_reader(input);
        if !rdr.headers()?.iter().eq(KEY_COLUMNS.iter().copied()) {
            return Err(JoinError::LinkHeader);
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            if rec.iter().any(|f| !crate::model::is_token(f)) {
                return Err(JoinError::LinkField { line, message: "ids must be non-empty tokens".into() });
            }
            rows.push(LinkRow {
                session_id: rec[0].to_string(),
                participant_id: rec[1].to_string(),
                track_id: rec[2].to_string(),
            });
        }
        LinkTable::new(rows)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(KEY_COLUMNS)?;
        for r in &self.rows {
            w.write_record([&r.session_id, &r.participant_id, &r.track_id])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangulatedRow {
    pub session_id: String,
    pub participant_id: String,
    pub track_id: String,
    /// Raw values in [`TriangulatedTable::columns`] order.
    pub values: Vec<Option<f64>>,
    /// Standardized twins of `values`.
    pub z: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangulatedTable {
    pub columns: Vec<String>,
    pub rows: Vec<TriangulatedRow>,
    /// Columns whose z-twin could not be computed, with the reason.
    pub unstandardized: Vec<(String, StatsError)>,
}

/// Rows the join could not match, kept for review.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct JoinReport {
    /// `(session, track)` with metrics but no link.
    pub unmatched_metrics: Vec<(String, String)>,
    /// `(session, participant)` with bonding data but no link.
    pub unmatched_bonding: Vec<(String, String)>,
    /// Link rows pointing at missing data (only with `allow_dangling`).
    pub dangling: Vec<(LinkRow, &'static str)>,
}

impl JoinReport {
    pub fn is_empty(&self) -> bool {
        self.unmatched_metrics.is_empty() && self.unmatched_bonding.is_empty() && self.dangling.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct JoinOptions {
    /// Report link rows without matching data instead of failing.
    pub allow_dangling: bool,
}

fn proximity_values(m: &MetricsRow) -> [f64; 7] {
    [
        m.intimate,
        m.personal,
        m.social,
        m.offscreen,
        m.zone_transitions as f64,
        m.raw_changes as f64,
        m.observed_seconds,
    ]
}

/// Inner join of metrics and bonding through `link`.
pub fn join_triangulated(
    metrics: &[MetricsRow],
    bonding: &[BondingMeasure],
    link: &LinkTable,
    options: JoinOptions,
) -> Result<(TriangulatedTable, JoinReport), JoinError> {
    let mut by_track: HashMap<(&str, &str), &MetricsRow> = HashMap::new();
    for m in metrics {
        if by_track.insert((&m.session_id, &m.track_id), m).is_some() {
            return Err(JoinError::AmbiguousMetrics(m.session_id.clone(), m.track_id.clone()));
        }
    }
    let mut by_participant: HashMap<(&str, &str), &BondingMeasure> = HashMap::new();
    for b in bonding {
        if by_participant.insert((&b.session_id, &b.participant_id), b).is_some() {
            return Err(JoinError::AmbiguousBonding(b.session_id.clone(), b.participant_id.clone()));
        }
    }

    let mut report = JoinReport::default();
    let mut used_tracks = BTreeSet::new();
    let mut used_participants = BTreeSet::new();
    let mut rows = Vec::new();
    for l in link.rows() {
        let m = by_track.get(&(l.session_id.as_str(), l.track_id.as_str()));
        let b = by_participant.get(&(l.session_id.as_str(), l.participant_id.as_str()));
        if m.is_some() {
            used_tracks.insert((l.session_id.as_str(), l.track_id.as_str()));
        }
        if b.is_some() {
            used_participants.insert((l.session_id.as_str(), l.participant_id.as_str()));
        }
        let (m, b) = match (m, b) {
            (Some(m), Some(b)) => (m, b),
            (m, _) => {
                let what = if m.is_none() { "a metrics track" } else { "a bonding participant" };
                if !options.allow_dangling {
                    return Err(JoinError::DanglingReference(l.clone(), what));
                }
                report.dangling.push((l.clone(), what));
                continue;
            }
        };
        let mut values: Vec<Option<f64>> = proximity_values(m).into_iter().map(Some).collect();
        values.push(Some(b.gas_score));
        values.push(b.distance_to_agent_mm);
        rows.push(TriangulatedRow {
            session_id: l.session_id.clone(),
            participant_id: l.participant_id.clone(),
            track_id: l.track_id.clone(),
            values,
            z: Vec::new(),
        });
    }

    let mut unmatched_metrics: Vec<_> = by_track
        .keys()
        .filter(|k| !used_tracks.contains(*k))
        .map(|(s, t)| (s.to_string(), t.to_string()))
        .collect();
    unmatched_metrics.sort();
    let mut unmatched_bonding: Vec<_> = by_participant
        .keys()
        .filter(|k| !used_participants.contains(*k))
        .map(|(s, p)| (s.to_string(), p.to_string()))
        .collect();
    unmatched_bonding.sort();
    report.unmatched_metrics = unmatched_metrics;
    report.unmatched_bonding = unmatched_bonding;

    let columns = PROXIMITY_VARIABLES.iter().chain(BONDING_VARIABLES.iter()).map(|s| s.to_string()).collect();
    let mut table = TriangulatedTable { columns, rows, unstandardized: Vec::new() };
    table.standardize();
    Ok((table, report))
}

impl TriangulatedTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Recomputes every z-twin over the non-missing rows of its column.
    pub fn standardize(&mut self) {
        self.unstandardized.clear();
        for row in &mut self.rows {
            row.z = vec![None; self.columns.len()];
        }
        for (c, name) in self.columns.iter().enumerate() {
            let present: Vec<(usize, f64)> =
                self.rows.iter().enumerate().filter_map(|(i, r)| r.values[c].map(|v| (i, v))).collect();
            let xs: Vec<f64> = present.iter().map(|&(_, v)| v).collect();
            match stats::z_standardize(&xs) {
                Ok(z) => {
                    for ((i, _), zv) in present.iter().zip(z) {
                        self.rows[*i].z[c] = Some(zv);
                    }
                }
                Err(e) => self.unstandardized.push((name.clone(), e)),
            }
        }
    }

    /// Raw or standardized column by name; `z_<name>` selects the twin.
    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        if let Some(i) = self.column_index(name) {
            return Some(self.rows.iter().map(|r| r.values[i]).collect());
        }
        let i = self.column_index(name.strip_prefix("z_")?)?;
        Some(self.rows.iter().map(|r| r.z[i]).collect())
    }

    /// One row per session holding column means over non-missing values,
    /// re-standardized at the session grain.
    pub fn aggregate_by_session(&self) -> TriangulatedTable {
        let mut groups: BTreeMap<&str, Vec<&TriangulatedRow>> = BTreeMap::new();
        for r in &self.rows {
            groups.entry(&r.session_id).or_default().push(r);
        }
        let rows = groups
            .into_iter()
            .map(|(session, members)| {
                let values = (0..self.columns.len())
                    .map(|c| {
                        let xs: Vec<f64> = members.iter().filter_map(|r| r.values[c]).collect();
                        (!xs.is_empty()).then(|| stats::mean(&xs))
                    })
                    .collect();
                TriangulatedRow {
                    session_id: session.to_string(),
                    participant_id: "*".to_string(),
                    track_id: "*".to_string(),
                    values,
                    z: Vec::new(),
                }
            })
            .collect();
        let mut table = TriangulatedTable { columns: self.columns.clone(), rows, unstandardized: Vec::new() };
        table.standardize();
        table
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        let mut header: Vec<String> = KEY_COLUMNS.iter().map(|s| s.to_string()).collect();
        for c in &self.columns {
            header.push(c.clone());
            header.push(format!("z_{c}"));
        }
        w.write_record(&header)?;
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let mut rec = vec![r.session_id.clone(), r.participant_id.clone(), r.track_id.clone()];
            for (v, z) in r.values.iter().zip(&r.z) {
                rec.push(fmt(*v));
                rec.push(fmt(*z));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a table written by [`TriangulatedTable::write_csv`]. Existing
    /// z-columns are recomputed rather than trusted.
    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self, TableCsvError> {
        let mut rdr = csv::ReaderBuilder::new().from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header.len() < 3 || header[..3] != KEY_COLUMNS {
            return Err(TableCsvError::Header);
        }
        let raw: Vec<(usize, String)> = header
            .iter()
            .enumerate()
            .skip(3)
            .filter(|(_, h)| !h.starts_with("z_"))
            .map(|(i, h)| (i, h.clone()))
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let values = raw
                .iter()
                .map(|(i, name)| {
                    let s = &rec[*i];
                    if s.is_empty() {
                        Ok(None)
                    } else {
                        s.parse::<f64>()
                            .map(Some)
                            .map_err(|_| TableCsvError::Field { line, message: format!("{name}: {s:?} is not a number") })
                    }
                })
                .collect::<Result<_, _>>()?;
            rows.push(TriangulatedRow {
                session_id: rec[0].to_string(),
                participant_id: rec[1].to_string(),
                track_id: rec[2].to_string(),
                values,
                z: Vec::new(),
            });
        }
        let mut table = TriangulatedTable { columns: raw.into_iter().map(|(_, n)| n).collect(), rows, unstandardized: Vec::new() };
        table.standardize();
        Ok(table)
    }
}

#[derive(Debug, Error)]
pub enum TableCsvError {
    #[error("table csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("table csv: first columns must be session_id,participant_id,track_id")]
    Header,
    #[error("table csv line {line}: {message}")]
    Field { line: u64, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationEntry {
    pub variable_x: String,
    pub variable_y: String,
    pub n: usize,
    pub pearson_r: f64,
    pub spearman_rho: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrelationReport {
    pub entries: Vec<CorrelationEntry>,
    /// Pairs that could not be correlated, with the reason.
    pub skipped: Vec<(String, String, StatsError)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PairListError {
    #[error("bad pair {0:?}; expected x:y")]
    Syntax(String),
    #[error("unknown variable {0:?}")]
    UnknownVariable(String),
}

/// Parses `x:y,x:y`. `all` expands to every proximity × bonding pair.
pub fn parse_pair_list(list: &str) -> Result<Vec<(String, String)>, PairListError> {
    if list.trim() == "all" {
        return Ok(PROXIMITY_VARIABLES
            .iter()
            .flat_map(|p| BONDING_VARIABLES.iter().map(move |b| (p.to_string(), b.to_string())))
            .collect());
    }
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|p| {
            p.split_once(':')
                .filter(|(x, y)| !x.is_empty() && !y.is_empty())
                .map(|(x, y)| (x.to_string(), y.to_string()))
                .ok_or_else(|| PairListError::Syntax(p.to_string()))
        })
        .collect()
}

/// Correlates each requested pair with pairwise deletion of missing
/// values. Pairs with fewer than three complete rows or a constant side
/// are listed in `skipped`.
pub fn correlate_table(table: &TriangulatedTable, pairs: &[(String, String)]) -> Result<CorrelationReport, PairListError> {
    let mut report = CorrelationReport::default();
    for (xn, yn) in pairs {
        let xs = table.column(xn).ok_or_else(|| PairListError::UnknownVariable(xn.clone()))?;
        let ys = table.column(yn).ok_or_else(|| PairListError::UnknownVariable(yn.clone()))?;
        let (x, y): (Vec<f64>, Vec<f64>) = xs
            .iter()
            .zip(&ys)
            .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
            .unzip();
        match stats::correlate(&x, &y) {
            Ok(c) => report.entries.push(CorrelationEntry {
                variable_x: xn.clone(),
                variable_y: yn.clone(),
                n: x.len(),
                pearson_r: c.pearson_r,
                spearman_rho: c.spearman_rho,
            }),
            Err(e) => report.skipped.push((xn.clone(), yn.clone(), e)),
        }
    }
    Ok(report)
}

pub const CORRELATION_HEADER: [&str; 5] = ["variable_x", "variable_y", "n", "pearson_r", "spearman_rho"];

impl CorrelationReport {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(CORRELATION_HEADER)?;
        for e in &self.entries {
            w.write_record([
                e.variable_x.clone(),
                e.variable_y.clone(),
                e.n.to_string(),
                e.pearson_r.to_string(),
                e.spearman_rho.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
