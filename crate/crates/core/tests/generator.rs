mod common;

use proxkit::metrics::{session_metrics, MetricsConfig};
use proxkit::model::{validate_annotation_set, write_annotation_file, Slice};
use proxkit::synth::{generate_corpus, generate_session, write_study, GeneratorConfig, DEFAULT_CORPUS_SIZE};

#[test]
fn same_inputs_same_bytes() {
    let config = GeneratorConfig::default();
    let a = generate_session(&config, "s0042").unwrap();
    let b = generate_session(&config, "s0042").unwrap();
    assert_eq!(a, b);
    assert_eq!(write_annotation_file(&a.annotation).unwrap(), write_annotation_file(&b.annotation).unwrap());

    let other = generate_session(&config, "s0043").unwrap();
    assert_ne!(a.annotation.records, other.annotation.records);
    let reseeded = generate_session(&GeneratorConfig { seed: 1, ..config }, "s0042").unwrap();
    assert_ne!(a.annotation.records, reseeded.annotation.records);
}

#[test]
fn default_corpus_survives_the_pipeline() {
    let corpus = generate_corpus(&GeneratorConfig::default(), DEFAULT_CORPUS_SIZE).unwrap();
    assert_eq!(corpus.len(), 187);
    for s in &corpus {
        assert!(validate_annotation_set(&s.annotation).is_valid());
        let m = session_metrics(&s.annotation, &Slice::new("c1", 1), &MetricsConfig::default()).unwrap();
        assert!(m.skipped.is_empty());
        assert_eq!(m.tracks.len(), s.annotation.meta.group_size as usize);
        assert_eq!(s.survey.len(), m.tracks.len());
        assert_eq!(s.link.len(), m.tracks.len());
    }
}

#[test]
fn group_composition_matches_weights() {
    let corpus = generate_corpus(&GeneratorConfig::default(), 10_000).unwrap();
    let multi = corpus.iter().filter(|s| s.annotation.meta.group_size >= 2).count() as f64 / 1e4;
    assert!((0.53..=0.57).contains(&multi), "{multi}");
}

#[test]
fn planted_signal_follows_coupling() {
    let (rho, n) = common::planted_rho(&GeneratorConfig::default(), 187);
    assert!(rho <= -0.6, "coupling 1: rho {rho} over {n} rows");
    let (rho0, _) = common::planted_rho(&GeneratorConfig { coupling: 0.0, ..GeneratorConfig::default() }, 187);
    assert!(rho0.abs() < 0.1, "coupling 0: rho {rho0}");
}

#[test]
fn study_directory_layout() {
    let dir = tempfile::tempdir().unwrap();
    let config = GeneratorConfig::default();
    let corpus = generate_corpus(&config, 3).unwrap();
    let layout = write_study(dir.path(), &config, &corpus).unwrap();
    assert_eq!(layout.annotations.len(), 3);
    for csv in &layout.annotations {
        assert!(csv.with_extension("meta").is_file());
    }
    for f in [&layout.survey, &layout.scale, &layout.link, &layout.ground_truth] {
        assert!(f.is_file(), "{}", f.display());
    }
}
