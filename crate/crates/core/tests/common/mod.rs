//! Helpers shared by the integration tests: an independent brute-force
//! recount of the metrics pipeline and seeded data builders.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use proxkit::model::{AgentType, AnnotationRecord, AnnotationSet, SessionMeta, Zone};

pub const CODES: [char; 4] = ['i', 'p', 's', 'x'];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// The `k`-th of the 4^len sequences, in base-4 digit order.
pub fn exhaustive(len: usize, k: usize) -> Vec<Zone> {
    (0..len)
        .map(|d| Zone::from_code(CODES[(k / 4usize.pow(d as u32)) % 4]).unwrap())
        .collect()
}

/// Half iid labels, half sticky runs, so both blips and long dwells occur.
pub fn random_sequence(rng: &mut impl Rng, max_len: usize) -> Vec<Zone> {
    let len = rng.random_range(1..=max_len);
    let sticky = rng.random_bool(0.5);
    let mut out = Vec::with_capacity(len);
    let mut cur = CODES[rng.random_range(0..4)];
    for _ in 0..len {
        if !sticky || rng.random_bool(0.2) {
            cur = CODES[rng.random_range(0..4)];
        }
        out.push(Zone::from_code(cur).unwrap());
    }
    out
}

/// Recount of one track, written against the documented definitions
/// rather than the library code paths.
#[derive(Debug, Clone, PartialEq)]
pub struct Recount {
    pub cleaned: Vec<char>,
    pub counts: [u64; 4],
    pub on_grid: u64,
    pub total: u64,
    pub shares: [f64; 3],
    pub offscreen: f64,
    pub predominant: char,
    pub zone_transitions: u64,
    pub raw_changes: u64,
    pub observed_seconds: f64,
}

/// One modal-filter pass over a window of three: an interior element
/// takes the unique most frequent label of itself and its neighbours.
fn modal3(s: &[char]) -> Vec<char> {
    let mut out = s.to_vec();
    for i in 1..s.len().saturating_sub(1) {
        let w = [s[i - 1], s[i], s[i + 1]];
        let mut best: Vec<(char, usize)> = CODES.iter().map(|&c| (c, w.iter().filter(|&&v| v == c).count())).collect();
        best.sort_by_key(|&(_, n)| std::cmp::Reverse(n));
        if best[0].1 > best[1].1 {
            out[i] = best[0].0;
        }
    }
    out
}

pub fn clean(zones: &[char], max_passes: usize) -> Option<Vec<char>> {
    let first = zones.iter().position(|&c| c != 'x')?;
    let mut s = zones[first..].to_vec();
    for _ in 0..max_passes {
        let next = modal3(&s);
        if next == s {
            break;
        }
        s = next;
    }
    Some(s)
}

pub fn recount(zones: &[Zone], stride: u32, fps: f64) -> Option<Recount> {
    let codes: Vec<char> = zones.iter().map(|z| z.code()).collect();
    let s = clean(&codes, 10)?;
    let count = |c: char| s.iter().filter(|&&v| v == c).count() as u64;
    let counts = [count('i'), count('p'), count('s'), count('x')];
    let total = s.len() as u64;
    let on_grid = counts[0] + counts[1] + counts[2];
    // closest zone wins ties
    let mut best = 0;
    for k in 1..3 {
        if counts[k] > counts[best] {
            best = k;
        }
    }
    let predominant = ['i', 'p', 's'][best];
    let mut zone_transitions = 0;
    let mut raw_changes = 0;
    for k in 1..s.len() {
        if s[k] != s[k - 1] {
            raw_changes += 1;
            if s[k] != 'x' && s[k - 1] != 'x' {
                zone_transitions += 1;
            }
        }
    }
    Some(Recount {
        counts,
        on_grid,
        total,
        shares: [
            counts[0] as f64 / on_grid as f64,
            counts[1] as f64 / on_grid as f64,
            counts[2] as f64 / on_grid as f64,
        ],
        offscreen: counts[3] as f64 / total as f64,
        predominant,
        zone_transitions,
        raw_changes,
        observed_seconds: (total * u64::from(stride)) as f64 / fps,
        cleaned: s,
    })
}

/// A single-track set coded by `c1` pass 1.
pub fn single_track_set(zones: &[Zone]) -> AnnotationSet {
    let meta = SessionMeta::new("s1", AgentType::Robot, 1);
    let records = zones
        .iter()
        .enumerate()
        .map(|(k, &z)| AnnotationRecord::new("c1", 1, 4 * k as u64, "t1", z))
        .collect();
    AnnotationSet::new(meta, records)
}

const NOTES: [&str; 6] = ["left early", "occluded, re-entered", "said \"hi\"", "línea\nnueva", "  padded  ", "x;y=z"];

/// A valid set with up to 3 coders, 2 passes and 4 tracks, frames with
/// gaps, and notes that need quoting.
pub fn random_annotation_set(rng: &mut impl Rng) -> AnnotationSet {
    let group = rng.random_range(1..=4u32);
    let stride = rng.random_range(1..=6u32);
    let agent = if rng.random_bool(0.5) { AgentType::Robot } else { AgentType::Virtual };
    let mut meta = SessionMeta::new(format!("s{}", rng.random_range(0..1000)), agent, group);
    meta.frame_stride = stride;
    meta.frames_per_second = [25.0, 30.0, 29.97][rng.random_range(0..3)];
    let mut records = Vec::new();
    for coder in 0..rng.random_range(1..=3) {
        for pass in 1..=rng.random_range(1..=2u32) {
            for track in 1..=group {
                let mut frame = 0u64;
                for _ in 0..rng.random_range(0..30) {
                    frame += u64::from(stride) * rng.random_range(1..=3);
                    let mut r = AnnotationRecord::new(
                        &format!("c{coder}"),
                        pass,
                        frame,
                        &format!("t{track}"),
                        Zone::from_code(CODES[rng.random_range(0..4)]).unwrap(),
                    );
                    if rng.random_bool(0.15) {
                        r.note = Some(NOTES[rng.random_range(0..NOTES.len())].to_string());
                    }
                    records.push(r);
                }
            }
        }
    }
    // shuffle so that parsing/writing has to canonicalize
    records.shuffle(rng);
    AnnotationSet::new(meta, records)
}

/// Runs the library pipeline on one sequence and compares it with
/// [`recount`]: integer fields exactly, shares within `1e-12`.
pub fn check_against_recount(zones: &[Zone]) -> Result<(), String> {
    use proxkit::metrics::{session_metrics, MetricsConfig, MetricsError};
    use proxkit::model::Slice;

    let codes: String = zones.iter().map(|z| z.code()).collect();
    let set = single_track_set(zones);
    let sm = session_metrics(&set, &Slice::new("c1", 1), &MetricsConfig::default()).map_err(|e| format!("{codes}: {e}"))?;
    let Some(want) = recount(zones, 4, 25.0) else {
        return match (sm.tracks.is_empty(), sm.skipped.first().map(|s| &s.reason)) {
            (true, Some(MetricsError::AllOffScreen)) => Ok(()),
            _ => Err(format!("{codes}: expected AllOffScreen")),
        };
    };
    let got = sm.tracks.get("t1").ok_or_else(|| format!("{codes}: track missing"))?;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let ok = got.shares.counts == want.counts
        && got.shares.on_grid_frames == want.on_grid
        && got.shares.total_frames == want.total
        && close(got.shares.intimate, want.shares[0])
        && close(got.shares.personal, want.shares[1])
        && close(got.shares.social, want.shares[2])
        && close(got.shares.offscreen_fraction, want.offscreen)
        && got.predominant.code() == want.predominant
        && got.transitions.zone_transition_count == want.zone_transitions
        && got.transitions.raw_change_count == want.raw_changes
        && close(got.observed_seconds, want.observed_seconds);
    if ok {
        Ok(())
    } else {
        Err(format!("{codes}: library {got:?} vs recount {want:?}"))
    }
}

/// Runs generator → metrics → bonding → join → correlation in memory and
/// returns Spearman's rho of agent distance against intimate share, with
/// the number of joined rows.
pub fn planted_rho(config: &proxkit::synth::GeneratorConfig, n_sessions: usize) -> (f64, usize) {
    use proxkit::metrics::{session_metrics, MetricsConfig};
    use proxkit::model::Slice;
    use proxkit::survey::bonding_measure;
    use proxkit::synth::{generate_corpus, SYNTH_CODER};
    use proxkit::triangulate::{correlate_table, join_triangulated, JoinOptions, LinkTable};

    let corpus = generate_corpus(config, n_sessions).unwrap();
    let slice = Slice::new(SYNTH_CODER, 1);
    let metrics: Vec<_> = corpus
        .iter()
        .flat_map(|s| session_metrics(&s.annotation, &slice, &MetricsConfig::default()).unwrap().rows())
        .collect();
    let bonding: Vec<_> = corpus
        .iter()
        .flat_map(|s| s.survey.iter().map(|r| bonding_measure(r, &config.scale)))
        .collect();
    let link = LinkTable::new(corpus.iter().flat_map(|s| s.link.iter().cloned()).collect()).unwrap();
    let (table, report) = join_triangulated(&metrics, &bonding, &link, JoinOptions::default()).unwrap();
    assert!(report.is_empty(), "{report:?}");
    let pairs = [("distance_to_agent_mm".to_string(), "intimate".to_string())];
    let r = correlate_table(&table, &pairs).unwrap();
    let e = &r.entries[0];
    (e.spearman_rho, e.n)
}

pub mod http {
    use axum::body::{Body, Bytes};
    use axum::http::{HeaderMap, Method, Request, StatusCode};
    use axum::Router;
    use http_body_util::BodyExt;
    use tower::ServiceExt;

    pub async fn send(app: &Router, method: Method, uri: &str, json: Option<serde_json::Value>) -> (StatusCode, HeaderMap, Bytes) {
        let builder = Request::builder().method(method).uri(uri);
        let req = match json {
            Some(v) => builder.header("content-type", "application/json").body(Body::from(v.to_string())),
            None => builder.body(Body::empty()),
        }
        .unwrap();
        let res = app.clone().oneshot(req).await.unwrap();
        let status = res.status();
        let headers = res.headers().clone();
        (status, headers, res.into_body().collect().await.unwrap().to_bytes())
    }
}

/// Writes `n` placeholder frames (stride 4) and returns the directory.
pub fn frame_dir(n: u64) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for k in 0..n {
        std::fs::write(dir.path().join(format!("frame_{:06}.jpg", 4 * k)), [0xff, 0xd8, 0xff, k as u8]).unwrap();
    }
    dir
}

pub fn create_body(session: &str, group: u32, frames: u64) -> serde_json::Value {
    let manifest: Vec<_> = (0..frames)
        .map(|k| serde_json::json!({ "frame_index": 4 * k, "path": format!("frame_{:06}.jpg", 4 * k) }))
        .collect();
    serde_json::json!({
        "meta": { "session_id": session, "agent_type": "robot", "group_size": group },
        "manifest": { "frames": manifest, "frame_stride": 4 },
    })
}

/// Scripted coder: 3 tracks × 40 frames, 110 first labels in shuffled
/// order plus 10 overwrites of already-labeled units, sent over HTTP.
/// Returns the exported CSV and the reference built from a plain
/// last-write-wins map.
pub async fn service_replay(seed: u64) -> (String, String, bool) {
    use axum::http::{Method, StatusCode};
    use std::collections::BTreeMap;

    let frames = frame_dir(40);
    let app = proxkit::service::router(std::sync::Arc::new(proxkit::service::SessionStore::new(frames.path())));
    let (status, _, _) = http::send(&app, Method::POST, "/sessions", Some(create_body("s1", 3, 40))).await;
    assert_eq!(status, StatusCode::CREATED);

    let mut rng = rng(seed);
    let mut units: Vec<(u64, String)> = (0..40u64).flat_map(|k| (1..=3).map(move |t| (4 * k, format!("t{t}")))).collect();
    units.shuffle(&mut rng);
    units.truncate(110);
    let mut script: Vec<(u64, String, char)> =
        units.into_iter().map(|(f, t)| (f, t, CODES[rng.random_range(0..4)])).collect();
    for _ in 0..10 {
        let idx = rng.random_range(0..script.len());
        let (f, t, z) = script[idx].clone();
        let other = *CODES.iter().filter(|&&c| c != z).collect::<Vec<_>>()[rng.random_range(0..3)];
        let at = rng.random_range(idx + 1..=script.len());
        script.insert(at, (f, t, other));
    }
    assert_eq!(script.len(), 120);

    let mut reference: BTreeMap<(u64, String), char> = BTreeMap::new();
    for (f, t, z) in &script {
        let body = serde_json::json!({
            "coder_id": "c1", "pass_id": 1, "frame_index": f, "track_id": t, "zone": z.to_string(),
        });
        let (status, _, _) = http::send(&app, Method::POST, "/sessions/s1/labels", Some(body)).await;
        assert_eq!(status, StatusCode::OK);
        reference.insert((*f, t.clone()), *z);
    }

    let mut expected = String::from("coder_id,pass_id,frame_index,track_id,zone,note\n");
    for ((f, t), z) in &reference {
        expected.push_str(&format!("c1,1,{f},{t},{z},\n"));
    }
    let (status, headers, body) = http::send(&app, Method::GET, "/sessions/s1/export?coder=c1&pass=1", None).await;
    assert_eq!(status, StatusCode::OK);
    let partial = headers["x-proxkit-partial"] == "true";
    (String::from_utf8(body.to_vec()).unwrap(), expected, partial)
}

/// Single-pass sums formula, the way it is written in textbooks.
pub fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

/// `1 − 6Σd² / (n(n² − 1))`, valid without ties.
pub fn naive_spearman(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter().map(|a| 1.0 + v.iter().filter(|b| *b < a).count() as f64).collect()
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

pub fn vector_pair(rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    let n = rng.random_range(3..200);
    let slope = rng.random_range(-2.0..2.0);
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
    let y = x.iter().map(|v| slope * v + rng.random_range(-5.0..5.0)).collect();
    (x, y)
}

/// Textbook kappa in floating point, for comparison.
pub fn textbook_kappa(pairs: &[(Zone, Zone)]) -> f64 {
    let n = pairs.len() as f64;
    let po = pairs.iter().filter(|(a, b)| a == b).count() as f64 / n;
    let pe: f64 = Zone::ALL
        .iter()
        .map(|z| {
            let ra = pairs.iter().filter(|(a, _)| a == z).count() as f64 / n;
            let rb = pairs.iter().filter(|(_, b)| b == z).count() as f64 / n;
            ra * rb
        })
        .sum();
    (po - pe) / (1.0 - pe)
}

pub fn random_pairs(rng: &mut impl Rng, n: usize) -> Vec<(Zone, Zone)> {
    (0..n)
        .map(|_| (Zone::ALL[rng.random_range(0..4)], Zone::ALL[rng.random_range(0..4)]))
        .collect()
}
