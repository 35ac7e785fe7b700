//! Bonding self-reports: Likert attitude-scale responses and canvas
//! marker placements, converted into per-participant numeric measures.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::model::is_token;

/// Item layout of an attitude scale with reverse-keyed items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaleDefinition {
    pub item_count: usize,
    pub likert_min: i32,
    pub likert_max: i32,
    /// 1-based item indices.
    pub reversed_items: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScaleError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for {key}")]
    BadValue { line: usize, key: String },
    #[error("missing required key {0}")]
    MissingKey(&'static str),
    #[error("invalid scale: {0}")]
    Invalid(String),
}

impl ScaleDefinition {
    pub fn new(item_count: usize, likert_min: i32, likert_max: i32, reversed: impl IntoIterator<Item = usize>) -> Result<Self, ScaleError> {
        let def = ScaleDefinition {
            item_count,
            likert_min,
            likert_max,
            reversed_items: reversed.into_iter().collect(),
        };
        if item_count < 1 {
            return Err(ScaleError::Invalid("items must be at least 1".into()));
        }
        if likert_min >= likert_max {
            return Err(ScaleError::Invalid(format!("likert_min {likert_min} must be below likert_max {likert_max}")));
        }
        if let Some(bad) = def.reversed_items.iter().find(|&&i| i < 1 || i > item_count) {
            return Err(ScaleError::Invalid(format!("reversed item {bad} outside 1..={item_count}")));
        }
        Ok(def)
    }

    /// Maps a response onto its reverse-keyed value.
    pub fn reverse(&self, response: i32) -> i32 {
        self.likert_min + self.likert_max - response
    }

    pub fn in_range(&self, response: i32) -> bool {
        (self.likert_min..=self.likert_max).contains(&response)
    }

    pub fn to_text(&self) -> String {
        let reversed: Vec<String> = self.reversed_items.iter().map(|i| i.to_string()).collect();
        format!(
            "items = {}\nlikert_min = {}\nlikert_max = {}\nreversed = {}\n",
            self.item_count,
            self.likert_min,
            self.likert_max,
            reversed.join(",")
        )
    }
}

impl FromStr for ScaleDefinition {
    type Err = ScaleError;

    /// Reads the flat `key = value` scale file.
    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let (mut items, mut min, mut max, mut reversed) = (None, None, None, Vec::new());
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (k, v) = t.split_once('=').ok_or(ScaleError::Syntax { line })?;
            let (k, v) = (k.trim(), v.trim());
            let bad = || ScaleError::BadValue { line, key: k.to_string() };
            match k {
                "items" => items = Some(v.parse::<usize>().map_err(|_| bad())?),
                "likert_min" => min = Some(v.parse::<i32>().map_err(|_| bad())?),
                "likert_max" => max = Some(v.parse::<i32>().map_err(|_| bad())?),
                "reversed" => {
                    reversed = v
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| s.parse::<usize>().map_err(|_| bad()))
                        .collect::<Result<_, _>>()?
                }
                _ => return Err(ScaleError::UnknownKey { line, key: k.to_string() }),
            }
        }
        ScaleDefinition::new(
            items.ok_or(ScaleError::MissingKey("items"))?,
            min.ok_or(ScaleError::MissingKey("likert_min"))?,
            max.ok_or(ScaleError::MissingKey("likert_max"))?,
            reversed,
        )
    }
}

/// A canvas marker identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Entity {
    SelfMarker,
    Agent,
    /// Other group member, 1-based.
    Member(u32),
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Entity::SelfMarker => write!(f, "self"),
            Entity::Agent => write!(f, "agent"),
            Entity::Member(k) => write!(f, "member-{k}"),
        }
    }
}

impl FromStr for Entity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "self" => Ok(Entity::SelfMarker),
            "agent" => Ok(Entity::Agent),
            _ => s
                .strip_prefix("member-")
                .and_then(|k| k.parse::<u32>().ok())
                .filter(|&k| k >= 1)
                .map(Entity::Member)
                .ok_or_else(|| format!("unknown canvas entity {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanvasPlacement {
    pub entity: Entity,
    pub x_mm: f64,
    pub y_mm: f64,
}

impl CanvasPlacement {
    pub fn distance_mm(&self, other: &CanvasPlacement) -> f64 {
        (self.x_mm - other.x_mm).hypot(self.y_mm - other.y_mm)
    }
}

/// Canvas plane dimensions shared by every row of a survey export.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Canvas {
    pub width_mm: f64,
    pub height_mm: f64,
}

impl Canvas {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (0.0..=self.width_mm).contains(&x) && (0.0..=self.height_mm).contains(&y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurveyRecord {
    pub participant_id: String,
    pub session_id: String,
    pub gas_responses: Vec<i32>,
    pub placements: Vec<CanvasPlacement>,
    /// Opaque pass-through blob.
    pub demographics: String,
}

impl SurveyRecord {
    pub fn placement(&self, entity: Entity) -> Option<&CanvasPlacement> {
        self.placements.iter().find(|p| p.entity == entity)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SurveyError {
    #[error("line 1: missing `# canvas_mm=W,H` header")]
    MissingCanvasHeader,
    #[error("line {line}: bad canvas header: {message}")]
    BadCanvasHeader { line: u64, message: String },
    #[error("line {line}: header must be participant_id,session_id,gas_1..gas_{items},placements,demographics")]
    BadHeader { line: u64, items: usize },
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("line {line}: no `self` placement")]
    MissingSelfPlacement { line: u64 },
    #[error("line {line}: item gas_{item} response {value} outside {min}..={max}")]
    ResponseOutOfRange { line: u64, item: usize, value: i32, min: i32, max: i32 },
    #[error("line {line}: bad placement {placement:?}: {message}")]
    BadPlacementCoordinate { line: u64, placement: String, message: String },
    #[error("line {line}: entity {entity} placed more than once")]
    DuplicatePlacement { line: u64, entity: Entity },
}

fn parse_canvas_line(line: &str) -> Result<Canvas, SurveyError> {
    let body = line.trim().strip_prefix('#').ok_or(SurveyError::MissingCanvasHeader)?.trim();
    let dims = body.strip_prefix("canvas_mm=").ok_or(SurveyError::MissingCanvasHeader)?;
    let bad = |message: &str| SurveyError::BadCanvasHeader { line: 1, message: message.to_string() };
    let (w, h) = dims.split_once(',').ok_or_else(|| bad("expected W,H"))?;
    let w: f64 = w.trim().parse().map_err(|_| bad("width is not a number"))?;
    let h: f64 = h.trim().parse().map_err(|_| bad("height is not a number"))?;
    if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
        return Err(bad("dimensions must be positive"));
    }
    Ok(Canvas { width_mm: w, height_mm: h })
}

fn parse_placements(field: &str, canvas: &Canvas, line: u64) -> Result<Vec<CanvasPlacement>, SurveyError> {
    let mut out: Vec<CanvasPlacement> = Vec::new();
    for item in field.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let bad = |message: String| SurveyError::BadPlacementCoordinate { line, placement: item.to_string(), message };
        let parts: Vec<&str> = item.split(':').collect();
        let [entity, x, y] = parts[..] else {
            return Err(bad("expected entity:x:y".to_string()));
        };
        let entity: Entity = entity.parse().map_err(bad)?;
        let x: f64 = x.parse().map_err(|_| bad(format!("x {x:?} is not a number")))?;
        let y: f64 = y.parse().map_err(|_| bad(format!("y {y:?} is not a number")))?;
        if !canvas.contains(x, y) {
            return Err(bad(format!("({x}, {y}) outside canvas {}x{} mm", canvas.width_mm, canvas.height_mm)));
        }
        if out.iter().any(|p| p.entity == entity) {
            return Err(SurveyError::DuplicatePlacement { line, entity });
        }
        out.push(CanvasPlacement { entity, x_mm: x, y_mm: y });
    }
    if !out.iter().any(|p| p.entity == Entity::SelfMarker) {
        return Err(SurveyError::MissingSelfPlacement { line });
    }
    Ok(out)
}

/// A parsed survey export.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyFile {
    pub canvas: Canvas,
    pub records: Vec<SurveyRecord>,
}

fn survey_header(items: usize) -> Vec<String> {
    let mut h = vec!["participant_id".to_string(), "session_id".to_string()];
    h.extend((1..=items).map(|i| format!("gas_{i}")));
    h.push("placements".to_string());
    h.push("demographics".to_string());
    h
}

pub fn parse_survey_file(bytes: &[u8], scale: &ScaleDefinition) -> Result<SurveyFile, SurveyError> {
    let text = std::str::from_utf8(bytes).map_err(|e| SurveyError::Malformed { line: 0, message: e.to_string() })?;
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let canvas = parse_canvas_line(first)?;

    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(rest.as_bytes());
    let mut rows = rdr.records();
    let expected = survey_header(scale.item_count);
    match rows.next() {
        Some(Ok(h)) if h.iter().eq(expected.iter().map(String::as_str)) => {}
        _ => return Err(SurveyError::BadHeader { line: 2, items: scale.item_count }),
    }

    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for row in rows {
        // line numbers are relative to `rest`; the canvas line precedes it
        let row = row.map_err(|e| SurveyError::Malformed {
            line: e.position().map(|p| p.line() + 1).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line() + 1).unwrap_or(0);
        let malformed = |message: String| SurveyError::Malformed { line, message };
        if row.len() != expected.len() {
            return Err(malformed(format!("expected {} columns, found {}", expected.len(), row.len())));
        }
        let participant_id = row[0].to_string();
        let session_id = row[1].to_string();
        if !is_token(&participant_id) || !is_token(&session_id) {
            return Err(malformed("participant_id and session_id must be tokens".to_string()));
        }
        if !seen.insert((session_id.clone(), participant_id.clone())) {
            return Err(malformed(format!("duplicate participant {participant_id} in session {session_id}")));
        }
        let mut gas_responses = Vec::with_capacity(scale.item_count);
        for item in 1..=scale.item_count {
            let raw = &row[1 + item];
            let value: i32 = raw.trim().parse().map_err(|_| malformed(format!("gas_{item} {raw:?} is not an integer")))?;
            if !scale.in_range(value) {
                return Err(SurveyError::ResponseOutOfRange {
                    line,
                    item,
                    value,
                    min: scale.likert_min,
                    max: scale.likert_max,
                });
            }
            gas_responses.push(value);
        }
        let placements = parse_placements(&row[2 + scale.item_count], &canvas, line)?;
        records.push(SurveyRecord {
            participant_id,
            session_id,
            gas_responses,
            placements,
            demographics: row[3 + scale.item_count].to_string(),
        });
    }
    Ok(SurveyFile { canvas, records })
}

pub fn write_survey_file(survey: &SurveyFile, scale: &ScaleDefinition) -> Vec<u8> {
    let mut out = format!("# canvas_mm={},{}\n", survey.canvas.width_mm, survey.canvas.height_mm).into_bytes();
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut out);
    w.write_record(survey_header(scale.item_count)).expect("in-memory write");
    for r in &survey.records {
        let mut row = vec![r.participant_id.clone(), r.session_id.clone()];
        row.extend(r.gas_responses.iter().map(|v| v.to_string()));
        let placements: Vec<String> =
            r.placements.iter().map(|p| format!("{}:{}:{}", p.entity, p.x_mm, p.y_mm)).collect();
        row.push(placements.join(";"));
        row.push(r.demographics.clone());
        w.write_record(row).expect("in-memory write");
    }
    w.flush().expect("in-memory flush");
    drop(w);
    out
}

/// Mean of the reverse-corrected item responses.
pub fn score_gas(record: &SurveyRecord, scale: &ScaleDefinition) -> f64 {
    let sum: i64 = record
        .gas_responses
        .iter()
        .enumerate()
        .map(|(i, &r)| i64::from(if scale.reversed_items.contains(&(i + 1)) { scale.reverse(r) } else { r }))
        .sum();
    sum as f64 / record.gas_responses.len() as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("participant {0} has no agent placement")]
pub struct MissingAgentPlacement(pub String);

/// Self-to-marker distances on the canvas. Smaller means closer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CanvasDistances {
    pub distance_to_agent_mm: f64,
    pub distances_to_members_mm: BTreeMap<String, f64>,
}

fn member_distances(record: &SurveyRecord, me: &CanvasPlacement) -> BTreeMap<String, f64> {
    record
        .placements
        .iter()
        .filter(|p| matches!(p.entity, Entity::Member(_)))
        .map(|p| (p.entity.to_string(), me.distance_mm(p)))
        .collect()
}

pub fn canvas_bonding(record: &SurveyRecord) -> Result<CanvasDistances, MissingAgentPlacement> {
    let me = record.placement(Entity::SelfMarker).expect("validated record has a self placement");
    let agent = record
        .placement(Entity::Agent)
        .ok_or_else(|| MissingAgentPlacement(record.participant_id.clone()))?;
    let distances_to_members_mm = member_distances(record, me);
    Ok(CanvasDistances { distance_to_agent_mm: me.distance_mm(agent), distances_to_members_mm })
}

/// Per-participant bonding measures. The agent distance is `None` when
/// the participant placed no agent marker.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BondingMeasure {
    pub participant_id: String,
    pub session_id: String,
    pub gas_score: f64,
    pub distance_to_agent_mm: Option<f64>,
    pub distances_to_members_mm: BTreeMap<String, f64>,
}

pub fn bonding_measure(record: &SurveyRecord, scale: &ScaleDefinition) -> BondingMeasure {
    let me = record.placement(Entity::SelfMarker).expect("validated record has a self placement");
    let distances_to_members_mm = member_distances(record, me);
    BondingMeasure {
        participant_id: record.participant_id.clone(),
        session_id: record.session_id.clone(),
        gas_score: score_gas(record, scale),
        distance_to_agent_mm: record.placement(Entity::Agent).map(|a| me.distance_mm(a)),
        distances_to_members_mm,
    }
}

pub const BONDING_HEADER: [&str; 5] =
    ["session_id", "participant_id", "gas_score", "distance_to_agent_mm", "member_distances_mm"];

pub fn write_bonding_csv<W: std::io::Write>(out: W, rows: &[BondingMeasure]) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(BONDING_HEADER)?;
    for b in rows {
        let members: Vec<String> = b.distances_to_members_mm.iter().map(|(k, d)| format!("{k}:{d}")).collect();
        w.write_record([
            b.session_id.clone(),
            b.participant_id.clone(),
            b.gas_score.to_string(),
            b.distance_to_agent_mm.map(|d| d.to_string()).unwrap_or_default(),
            members.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Error)]
pub enum BondingCsvError {
    #[error("bonding csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("bonding csv: header does not match `{}`", BONDING_HEADER.join(","))]
    Header,
    #[error("bonding csv line {line}: {message}")]
    Field { line: u64, message: String },
}

pub fn read_bonding_csv<R: std::io::Read>(input: R) -> Result<Vec<BondingMeasure>, BondingCsvError> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(input);
    if !rdr.headers()?.iter().eq(BONDING_HEADER.iter().copied()) {
        return Err(BondingCsvError::Header);
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |message: String| BondingCsvError::Field { line, message };
        let num = |s: &str| s.parse::<f64>().map_err(|_| field(format!("{s:?} is not a number")));
        let distance_to_agent_mm = if rec[3].is_empty() { None } else { Some(num(&rec[3])?) };
        let mut members = BTreeMap::new();
        for pair in rec[4].split(';').filter(|s| !s.is_empty()) {
            let (k, d) = pair.rsplit_once(':').ok_or_else(|| field(format!("bad member distance {pair:?}")))?;
            members.insert(k.to_string(), num(d)?);
        }
        out.push(BondingMeasure {
            session_id: rec[0].to_string(),
            participant_id: rec[1].to_string(),
            gas_score: num(&rec[2])?,
            distance_to_agent_mm,
            distances_to_members_mm: members,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scale2() -> ScaleDefinition {
        ScaleDefinition::new(2, 1, 9, []).unwrap()
    }

    fn file(rows: &str) -> String {
        format!("# canvas_mm=200,150\nparticipant_id,session_id,gas_1,gas_2,placements,demographics\n{rows}")
    }

    #[test]
    fn parses_minimal_row() {
        let text = file("p1,s1,5,7,self:10:10;agent:40:50,\"age=30,role=visitor\"\n");
        let survey = parse_survey_file(text.as_bytes(), &scale2()).unwrap();
        assert_eq!(survey.canvas, Canvas { width_mm: 200.0, height_mm: 150.0 });
        let r = &survey.records[0];
        assert_eq!(r.gas_responses, vec![5, 7]);
        assert_eq!(r.demographics, "age=30,role=visitor");
        assert_eq!(canvas_bonding(r).unwrap().distance_to_agent_mm, 50.0);
        assert_eq!(write_survey_file(&survey, &scale2()), text.into_bytes());
    }

    #[test]
    fn out_of_range_response() {
        let text = file("p1,s1,5,7,self:1:1,\np2,s1,10,7,self:1:1,\n");
        assert_eq!(
            parse_survey_file(text.as_bytes(), &scale2()),
            Err(SurveyError::ResponseOutOfRange { line: 4, item: 1, value: 10, min: 1, max: 9 })
        );
    }

    #[test]
    fn missing_self() {
        let text = file("p1,s1,5,7,agent:40:50,\n");
        assert_eq!(parse_survey_file(text.as_bytes(), &scale2()), Err(SurveyError::MissingSelfPlacement { line: 3 }));
    }

    #[test]
    fn placement_errors() {
        for bad in ["self:10", "self:a:1", "self:1:1;ghost:2:2", "self:300:1"] {
            let text = file(&format!("p1,s1,5,7,{bad},\n"));
            assert!(
                matches!(parse_survey_file(text.as_bytes(), &scale2()), Err(SurveyError::BadPlacementCoordinate { line: 3, .. })),
                "{bad}"
            );
        }
        let dup = file("p1,s1,5,7,self:1:1;self:2:2,\n");
        assert!(matches!(parse_survey_file(dup.as_bytes(), &scale2()), Err(SurveyError::DuplicatePlacement { .. })));
    }

    #[test]
    fn header_errors() {
        assert_eq!(
            parse_survey_file(b"participant_id,session_id\n", &scale2()),
            Err(SurveyError::MissingCanvasHeader)
        );
        let wrong_items = "# canvas_mm=10,10\nparticipant_id,session_id,gas_1,placements,demographics\n";
        assert!(matches!(parse_survey_file(wrong_items.as_bytes(), &scale2()), Err(SurveyError::BadHeader { .. })));
    }

    fn record(responses: Vec<i32>, placements: Vec<(Entity, f64, f64)>) -> SurveyRecord {
        SurveyRecord {
            participant_id: "p1".into(),
            session_id: "s1".into(),
            gas_responses: responses,
            placements: placements
                .into_iter()
                .map(|(entity, x_mm, y_mm)| CanvasPlacement { entity, x_mm, y_mm })
                .collect(),
            demographics: String::new(),
        }
    }

    #[test]
    fn gas_scoring_examples() {
        let scale = ScaleDefinition::new(2, 1, 9, [2]).unwrap();
        assert_eq!(score_gas(&record(vec![9, 1], vec![]), &scale), 9.0);
        assert_eq!(score_gas(&record(vec![5, 5], vec![]), &scale), 5.0);
    }

    #[test]
    fn canvas_examples() {
        let r = record(
            vec![],
            vec![(Entity::SelfMarker, 0.0, 0.0), (Entity::Agent, 0.0, 0.0), (Entity::Member(1), 1.0, 1.0)],
        );
        let d = canvas_bonding(&r).unwrap();
        assert_eq!(d.distance_to_agent_mm, 0.0);
        assert!((d.distances_to_members_mm["member-1"] - 2f64.sqrt()).abs() < 1e-12);

        let no_agent = record(vec![], vec![(Entity::SelfMarker, 0.0, 0.0)]);
        assert_eq!(canvas_bonding(&no_agent), Err(MissingAgentPlacement("p1".into())));
    }

    #[test]
    fn scale_file_parsing() {
        let s: ScaleDefinition = "# modified GAS\nitems = 4\nlikert_min = 1\nlikert_max = 9\nreversed = 2, 4\n".parse().unwrap();
        assert_eq!(s, ScaleDefinition::new(4, 1, 9, [2, 4]).unwrap());
        assert_eq!(s.to_text().parse::<ScaleDefinition>().unwrap(), s);
        assert!(matches!("items = 2\nlikert_min = 1\nlikert_max = 9\nreversed = 3\n".parse::<ScaleDefinition>(), Err(ScaleError::Invalid(_))));
        assert!(matches!("items = 2\nlikert_min = 5\nlikert_max = 5\n".parse::<ScaleDefinition>(), Err(ScaleError::Invalid(_))));
        assert!(matches!("items = 2\n".parse::<ScaleDefinition>(), Err(ScaleError::MissingKey("likert_min"))));
    }

    #[test]
    fn entity_tokens() {
        assert_eq!("member-3".parse::<Entity>(), Ok(Entity::Member(3)));
        assert!("member-0".parse::<Entity>().is_err());
        assert_eq!(Entity::Member(2).to_string(), "member-2");
    }

    #[test]
    fn bonding_csv_round_trip() {
        let r = record(
            vec![3, 4],
            vec![(Entity::SelfMarker, 3.0, 4.0), (Entity::Member(2), 0.0, 0.0), (Entity::Member(1), 3.0, 0.0)],
        );
        let rows = vec![bonding_measure(&r, &scale2())];
        assert_eq!(rows[0].distance_to_agent_mm, None);
        let mut buf = Vec::new();
        write_bonding_csv(&mut buf, &rows).unwrap();
        assert_eq!(read_bonding_csv(&buf[..]).unwrap(), rows);
    }
}
