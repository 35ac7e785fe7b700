use proxkit::metrics::{read_metrics_csv, write_metrics_csv, MetricsRow};
use proxkit::model::{Slice, Zone};
use proxkit::survey::{
    bonding_measure, parse_survey_file, read_bonding_csv, score_gas, write_bonding_csv, write_survey_file, Entity,
    ScaleDefinition, SurveyError,
};
use proxkit::synth::{generate_corpus, GeneratorConfig};
use proxkit::triangulate::{
    correlate_table, join_triangulated, parse_pair_list, JoinError, JoinOptions, LinkRow, LinkTable, TriangulatedTable,
};

fn scale() -> ScaleDefinition {
    ScaleDefinition::new(4, 1, 7, [2]).unwrap()
}

const SURVEY: &str = "# canvas_mm=200,100\n\
participant_id,session_id,gas_1,gas_2,gas_3,gas_4,placements,demographics\n\
p1,s1,7,1,7,7,self:10:10;agent:13:14;member-1:10:20,\"age=31;cs\"\n\
p2,s1,4,4,4,4,self:10:20;member-1:10:10,\n";

#[test]
fn scores_and_distances() {
    let file = parse_survey_file(SURVEY.as_bytes(), &scale()).unwrap();
    assert_eq!(file.records.len(), 2);
    // item 2 reversed: 1 → 7, so all sevens
    assert_eq!(score_gas(&file.records[0], &scale()), 7.0);
    let b = bonding_measure(&file.records[0], &scale());
    assert_eq!(b.distance_to_agent_mm, Some(5.0));
    assert_eq!(b.distances_to_members_mm, [("member-1".to_string(), 10.0)].into());
    assert_eq!(file.records[0].demographics, "age=31;cs");

    let b2 = bonding_measure(&file.records[1], &scale());
    assert_eq!(b2.distance_to_agent_mm, None);

    let mut buf = Vec::new();
    write_bonding_csv(&mut buf, &[b.clone(), b2.clone()]).unwrap();
    assert_eq!(read_bonding_csv(buf.as_slice()).unwrap(), vec![b, b2]);
}

#[test]
fn survey_errors() {
    let s = scale();
    let body = |row: &str| {
        format!("# canvas_mm=200,100\nparticipant_id,session_id,gas_1,gas_2,gas_3,gas_4,placements,demographics\n{row}\n")
    };
    assert_eq!(parse_survey_file(b"participant_id\n", &s), Err(SurveyError::MissingCanvasHeader));
    assert!(matches!(
        parse_survey_file(body("p1,s1,8,1,1,1,self:1:1,").as_bytes(), &s),
        Err(SurveyError::ResponseOutOfRange { item: 1, value: 8, .. })
    ));
    assert!(matches!(
        parse_survey_file(body("p1,s1,1,1,1,1,agent:1:1,").as_bytes(), &s),
        Err(SurveyError::MissingSelfPlacement { line: 3 })
    ));
    assert!(matches!(
        parse_survey_file(body("p1,s1,1,1,1,1,self:1:300,").as_bytes(), &s),
        Err(SurveyError::BadPlacementCoordinate { .. })
    ));
    assert!(matches!(
        parse_survey_file(body("p1,s1,1,1,1,1,self:1:1;self:2:2,").as_bytes(), &s),
        Err(SurveyError::DuplicatePlacement { entity: Entity::SelfMarker, .. })
    ));
}

#[test]
fn generated_surveys_round_trip() {
    let config = GeneratorConfig::default();
    let corpus = generate_corpus(&config, 20).unwrap();
    let records: Vec<_> = corpus.iter().flat_map(|s| s.survey.clone()).collect();
    let file = proxkit::survey::SurveyFile { canvas: proxkit::survey::Canvas { width_mm: 300.0, height_mm: 300.0 }, records };
    let bytes = write_survey_file(&file, &config.scale);
    assert_eq!(parse_survey_file(&bytes, &config.scale).unwrap(), file);
}

fn metrics_row(session: &str, track: &str, intimate: f64) -> MetricsRow {
    MetricsRow {
        session_id: session.into(),
        slice: Slice::new("c1", 1),
        track_id: track.into(),
        intimate,
        personal: 1.0 - intimate,
        social: 0.0,
        offscreen: 0.0,
        predominant: Zone::Intimate,
        zone_transitions: 1,
        raw_changes: 1,
        on_grid_frames: 10,
        total_frames: 10,
        observed_seconds: 1.6,
    }
}

fn link(rows: &[(&str, &str, &str)]) -> LinkTable {
    LinkTable::new(
        rows.iter()
            .map(|&(s, p, t)| LinkRow { session_id: s.into(), participant_id: p.into(), track_id: t.into() })
            .collect(),
    )
    .unwrap()
}

#[test]
fn join_and_correlate() {
    let file = parse_survey_file(SURVEY.as_bytes(), &scale()).unwrap();
    let bonding: Vec<_> = file.records.iter().map(|r| bonding_measure(r, &scale())).collect();
    let metrics = vec![metrics_row("s1", "t1", 0.9), metrics_row("s1", "t2", 0.2), metrics_row("s1", "t3", 0.5)];

    let (table, report) =
        join_triangulated(&metrics, &bonding, &link(&[("s1", "p1", "t1"), ("s1", "p2", "t2")]), JoinOptions::default()).unwrap();
    assert_eq!(table.rows.len(), 2);
    assert_eq!(report.unmatched_metrics, vec![("s1".to_string(), "t3".to_string())]);
    let gas = table.column("gas_score").unwrap();
    assert_eq!(gas, vec![Some(7.0), Some(4.0)]);
    assert_eq!(table.column("distance_to_agent_mm").unwrap()[1], None);

    // CSV round trip of the joined table
    let mut buf = Vec::new();
    table.write_csv(&mut buf).unwrap();
    let back = TriangulatedTable::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back.column("z_intimate"), table.column("z_intimate"));

    let dangling = link(&[("s1", "p1", "t1"), ("s1", "p9", "t2")]);
    assert!(matches!(
        join_triangulated(&metrics, &bonding, &dangling, JoinOptions::default()),
        Err(JoinError::DanglingReference(..))
    ));
    let (t, r) = join_triangulated(&metrics, &bonding, &dangling, JoinOptions { allow_dangling: true }).unwrap();
    assert_eq!((t.rows.len(), r.dangling.len()), (1, 1));

    // too few complete rows: reported as skipped, not an error
    let report = correlate_table(&table, &parse_pair_list("intimate:gas_score").unwrap()).unwrap();
    assert_eq!(report.entries.len(), 0);
    assert_eq!(report.skipped.len(), 1);
    assert!(correlate_table(&table, &parse_pair_list("height:gas_score").unwrap()).is_err());
}

#[test]
fn metrics_csv_round_trip() {
    let rows = vec![metrics_row("s1", "t1", 0.75), metrics_row("s2", "t1", 1.0 / 3.0)];
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, &rows).unwrap();
    assert_eq!(read_metrics_csv(buf.as_slice()).unwrap(), rows);
}

#[test]
fn link_table_rejects_repeats() {
    let rows = vec![
        LinkRow { session_id: "s1".into(), participant_id: "p1".into(), track_id: "t1".into() },
        LinkRow { session_id: "s1".into(), participant_id: "p1".into(), track_id: "t2".into() },
    ];
    assert!(matches!(LinkTable::new(rows), Err(JoinError::DuplicateLinkKey(_))));
}
