//! Seeded generator of synthetic coded sessions with a planted
//! bonding→proximity coupling.
//!
//! Randomness comes from ChaCha20 (`rand_chacha::ChaCha20Rng`). The
//! generator for a session is seeded with `seed_from_u64(config.seed)` and
//! then switched to stream `fnv1a64(session_id)`, so every session has its
//! own substream and the corpus does not depend on generation order.
//!
//! Each member draws a bonding value `b ~ U[0, 1]`. Zone labels follow a
//! Markov chain whose transition matrix is the convex blend
//! `(1 − λ)·base + λ·A` with `λ = coupling · b` and `A` the matrix that
//! moves every state to Intimate. The survey places the agent marker at
//! `100·(1 − b) + U[−5, 5]` mm from the self marker (clamped at zero).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::model::{write_annotation_file, write_sidecar, AgentType, AnnotationRecord, AnnotationSet, SessionMeta, Zone};
use crate::survey::{Canvas, CanvasPlacement, Entity, ScaleDefinition, SurveyFile, SurveyRecord};
use crate::triangulate::{LinkRow, LinkTable};

pub const DEFAULT_GROUP_SIZE_WEIGHTS: [f64; 4] = [0.45, 0.30, 0.15, 0.10];
pub const DEFAULT_CORPUS_SIZE: usize = 187;
pub const DEFAULT_SEED: u64 = 20_240_187;

/// Self-transition probability of the default base chain.
pub const DEFAULT_DWELL: f64 = 0.85;

pub const CANVAS_MM: f64 = 300.0;
pub const SYNTH_CODER: &str = "c1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid generator config: {0}")]
pub struct InvalidConfig(pub String);

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    /// Probability of group sizes 1, 2, 3 and 4.
    pub group_size_weights: [f64; 4],
    /// Sampled (annotated) frames per track.
    pub session_frames: usize,
    pub frame_stride: u32,
    pub frames_per_second: f64,
    /// Strength of the bonding → intimate-dwell link, in [0, 1].
    pub coupling: f64,
    /// Row-stochastic matrix over [`Zone::ALL`].
    pub base_transition: [[f64; 4]; 4],
    pub seed: u64,
    pub n_sessions: usize,
    pub scale: ScaleDefinition,
}

pub fn default_base_transition() -> [[f64; 4]; 4] {
    let off = (1.0 - DEFAULT_DWELL) / 3.0;
    let mut m = [[off; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = DEFAULT_DWELL;
    }
    m
}

/// The modified attitude scale used for synthetic surveys: ten items on
/// 1–9 with three reverse-keyed items.
pub fn default_scale() -> ScaleDefinition {
    ScaleDefinition::new(10, 1, 9, [3, 6, 9]).expect("static scale is valid")
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            group_size_weights: DEFAULT_GROUP_SIZE_WEIGHTS,
            session_frames: 150,
            frame_stride: 4,
            frames_per_second: 25.0,
            coupling: 1.0,
            base_transition: default_base_transition(),
            seed: DEFAULT_SEED,
            n_sessions: DEFAULT_CORPUS_SIZE,
            scale: default_scale(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), InvalidConfig> {
        let err = |m: String| Err(InvalidConfig(m));
        if self.group_size_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return err("group size weights must be non-negative".into());
        }
        let total: f64 = self.group_size_weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return err(format!("group size weights sum to {total}, not 1"));
        }
        for (i, row) in self.base_transition.iter().enumerate() {
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return err(format!("transition row {i} has a negative entry"));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return err(format!("transition row {i} sums to {s}, not 1"));
            }
        }
        if !(0.0..=1.0).contains(&self.coupling) {
            return err(format!("coupling {} outside [0, 1]", self.coupling));
        }
        if self.session_frames < 1 {
            return err("session_frames must be at least 1".into());
        }
        if self.frame_stride < 1 {
            return err("frame_stride must be at least 1".into());
        }
        if !(self.frames_per_second.is_finite() && self.frames_per_second > 0.0) {
            return err("fps must be positive".into());
        }
        if self.n_sessions < 1 {
            return err("n_sessions must be at least 1".into());
        }
        Ok(())
    }

    /// Transition matrix for a member with bonding `b`.
    pub fn effective_transition(&self, bonding: f64) -> [[f64; 4]; 4] {
        let lambda = self.coupling * bonding;
        let mut m = self.base_transition;
        for row in m.iter_mut() {
            for (c, p) in row.iter_mut().enumerate() {
                let absorb = if c == Zone::Intimate.index() { 1.0 } else { 0.0 };
                *p = (1.0 - lambda) * *p + lambda * absorb;
            }
        }
        m
    }
}

/// 64-bit FNV-1a, used to derive per-session stream ids.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn session_rng(seed: u64, session_id: &str) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a64(session_id.as_bytes()));
    rng
}

fn uniform(rng: &mut ChaCha20Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn categorical(rng: &mut ChaCha20Rng, weights: &[f64]) -> usize {
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver above the last cumulative weight
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSession {
    pub annotation: AnnotationSet,
    /// Planted bonding per track.
    pub ground_truth_bonding: BTreeMap<String, f64>,
    pub survey: Vec<SurveyRecord>,
    pub link: Vec<LinkRow>,
}

fn zone_chain(rng: &mut ChaCha20Rng, transition: &[[f64; 4]; 4], len: usize) -> Vec<Zone> {
    // start on the grid so no track is trimmed away entirely
    let mut state = Zone::ON_GRID[categorical(rng, &[1.0 / 3.0; 3])];
    let mut out = Vec::with_capacity(len);
    out.push(state);
    for _ in 1..len {
        state = Zone::ALL[categorical(rng, &transition[state.index()])];
        out.push(state);
    }
    out
}

fn gas_responses(rng: &mut ChaCha20Rng, scale: &ScaleDefinition, bonding: f64) -> Vec<i32> {
    let span = f64::from(scale.likert_max - scale.likert_min);
    (1..=scale.item_count)
        .map(|item| {
            let latent = f64::from(scale.likert_min) + span * bonding + uniform(rng, -1.5, 1.5);
            let r = (latent.round() as i32).clamp(scale.likert_min, scale.likert_max);
            if scale.reversed_items.contains(&item) {
                scale.reverse(r)
            } else {
                r
            }
        })
        .collect()
}

pub fn generate_session(config: &GeneratorConfig, session_id: &str) -> Result<SyntheticSession, InvalidConfig> {
    config.validate()?;
    let mut rng = session_rng(config.seed, session_id);
    let group_size = categorical(&mut rng, &config.group_size_weights) + 1;
    let agent_type = if rng.random::<bool>() { AgentType::Robot } else { AgentType::Virtual };
    let mut meta = SessionMeta::new(session_id, agent_type, group_size as u32);
    meta.frame_stride = config.frame_stride;
    meta.frames_per_second = config.frames_per_second;

    let mut records = Vec::with_capacity(group_size * config.session_frames);
    let mut ground_truth = BTreeMap::new();
    let mut survey = Vec::with_capacity(group_size);
    let mut link = Vec::with_capacity(group_size);
    let mut selves = Vec::with_capacity(group_size);

    for member in 1..=group_size {
        let track_id = format!("t{member}");
        let participant_id = format!("p{member}");
        let bonding = rng.random::<f64>();
        let zones = zone_chain(&mut rng, &config.effective_transition(bonding), config.session_frames);
        for (k, zone) in zones.into_iter().enumerate() {
            records.push(AnnotationRecord::new(
                SYNTH_CODER,
                1,
                k as u64 * u64::from(config.frame_stride),
                &track_id,
                zone,
            ));
        }

        let centre = CANVAS_MM / 2.0;
        let me = (centre + uniform(&mut rng, -20.0, 20.0), centre + uniform(&mut rng, -20.0, 20.0));
        let distance = (100.0 * (1.0 - bonding) + uniform(&mut rng, -5.0, 5.0)).max(0.0);
        let angle = uniform(&mut rng, 0.0, std::f64::consts::TAU);
        let agent = (me.0 + distance * angle.cos(), me.1 + distance * angle.sin());
        selves.push(me);

        survey.push(SurveyRecord {
            participant_id: participant_id.clone(),
            session_id: session_id.to_string(),
            gas_responses: gas_responses(&mut rng, &config.scale, bonding),
            placements: vec![
                CanvasPlacement { entity: Entity::SelfMarker, x_mm: me.0, y_mm: me.1 },
                CanvasPlacement { entity: Entity::Agent, x_mm: agent.0, y_mm: agent.1 },
            ],
            demographics: String::new(),
        });
        link.push(LinkRow { session_id: session_id.to_string(), participant_id, track_id: track_id.clone() });
        ground_truth.insert(track_id, bonding);
    }

    // each participant also places the other members where they stand
    for (k, record) in survey.iter_mut().enumerate() {
        let others = selves.iter().enumerate().filter(|&(j, _)| j != k);
        for (slot, (_, &(x, y))) in others.enumerate() {
            record.placements.push(CanvasPlacement { entity: Entity::Member(slot as u32 + 1), x_mm: x, y_mm: y });
        }
    }

    Ok(SyntheticSession {
        annotation: AnnotationSet::new(meta, records).canonicalized(),
        ground_truth_bonding: ground_truth,
        survey,
        link,
    })
}

pub fn session_id_for(index: usize) -> String {
    format!("s{:04}", index + 1)
}

pub fn generate_corpus(config: &GeneratorConfig, n_sessions: usize) -> Result<Vec<SyntheticSession>, InvalidConfig> {
    config.validate()?;
    if n_sessions < 1 {
        return Err(InvalidConfig("n_sessions must be at least 1".into()));
    }
    (0..n_sessions).map(|i| generate_session(config, &session_id_for(i))).collect()
}

/// Files of a written synthetic study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyLayout {
    pub annotations: Vec<PathBuf>,
    pub survey: PathBuf,
    pub scale: PathBuf,
    pub link: PathBuf,
    pub ground_truth: PathBuf,
}

/// Writes a complete study directory: one annotation CSV plus `.meta`
/// sidecar per session under `annotations/`, and `survey.csv`,
/// `scale.txt`, `link.csv` and `ground_truth.csv` at the top level.
pub fn write_study(dir: &Path, config: &GeneratorConfig, corpus: &[SyntheticSession]) -> std::io::Result<StudyLayout> {
    let ann_dir = dir.join("annotations");
    std::fs::create_dir_all(&ann_dir)?;
    let mut annotations = Vec::new();
    for s in corpus {
        let id = &s.annotation.meta.session_id;
        let csv_path = ann_dir.join(format!("{id}.csv"));
        let bytes = write_annotation_file(&s.annotation)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?;
        std::fs::write(&csv_path, bytes)?;
        std::fs::write(ann_dir.join(format!("{id}.meta")), write_sidecar(&s.annotation.meta, false))?;
        annotations.push(csv_path);
    }

    let survey = SurveyFile {
        canvas: Canvas { width_mm: CANVAS_MM, height_mm: CANVAS_MM },
        records: corpus.iter().flat_map(|s| s.survey.iter().cloned()).collect(),
    };
    let survey_path = dir.join("survey.csv");
    std::fs::write(&survey_path, crate::survey::write_survey_file(&survey, &config.scale))?;
    let scale_path = dir.join("scale.txt");
    std::fs::write(&scale_path, config.scale.to_text())?;

    let link = LinkTable::new(corpus.iter().flat_map(|s| s.link.iter().cloned()).collect())
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?;
    let link_path = dir.join("link.csv");
    let mut buf = Vec::new();
    link.write_csv(&mut buf).map_err(std::io::Error::other)?;
    std::fs::write(&link_path, buf)?;

    let mut truth = String::from("session_id,participant_id,track_id,bonding\n");
    for s in corpus {
        for l in &s.link {
            truth.push_str(&format!(
                "{},{},{},{}\n",
                l.session_id, l.participant_id, l.track_id, s.ground_truth_bonding[&l.track_id]
            ));
        }
    }
    let truth_path = dir.join("ground_truth.csv");
    std::fs::write(&truth_path, truth)?;

    Ok(StudyLayout { annotations, survey: survey_path, scale: scale_path, link: link_path, ground_truth: truth_path })
}
