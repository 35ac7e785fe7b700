mod common;

use proptest::prelude::*;
use rand::Rng;

use proxkit::model::{AgentType, AnnotationRecord, AnnotationSet, SessionMeta, Slice, Zone};
use proxkit::reliability::{confusion_matrix, kappa_from_confusion, pair_labels, reliability_report, PairedLabels};

#[test]
fn identical_passes_give_exactly_one() {
    let mut rng = common::rng(1);
    for _ in 0..100 {
        let a = common::random_sequence(&mut rng, 200);
        let pairs = PairedLabels::from_pairs(a.iter().map(|&z| (z, z)).collect());
        assert_eq!(reliability_report(&pairs).unwrap().kappa, 1.0);
    }
}

#[test]
fn independent_uniform_passes_near_zero() {
    let mut rng = common::rng(10_000);
    let pairs = PairedLabels::from_pairs(common::random_pairs(&mut rng, 10_000));
    let k = reliability_report(&pairs).unwrap().kappa;
    assert!(k.abs() < 0.05, "{k}");
}

#[test]
fn bounded_and_matches_textbook() {
    let mut rng = common::rng(3);
    for _ in 0..1000 {
        let n = rng.random_range(1..300);
        let pairs = common::random_pairs(&mut rng, n);
        let k = kappa_from_confusion(&confusion_matrix(&pairs)).unwrap();
        assert!((-1.0..=1.0).contains(&k));
        let t = common::textbook_kappa(&pairs);
        if t.is_finite() {
            assert!((k - t).abs() < 1e-12, "{k} vs {t}");
        }
    }
}

proptest! {
    #[test]
    fn symmetric_in_coders(codes in prop::collection::vec((0usize..4, 0usize..4), 1..200)) {
        let pairs: Vec<(Zone, Zone)> = codes.iter().map(|&(a, b)| (Zone::ALL[a], Zone::ALL[b])).collect();
        let swapped: Vec<(Zone, Zone)> = pairs.iter().map(|&(a, b)| (b, a)).collect();
        let k1 = kappa_from_confusion(&confusion_matrix(&pairs)).unwrap();
        let k2 = kappa_from_confusion(&confusion_matrix(&swapped)).unwrap();
        prop_assert_eq!(k1, k2);
    }
}

#[test]
fn slices_align_on_frame_and_track() {
    let mut records = Vec::new();
    for (k, (a, b)) in "iipps".chars().zip("iipss".chars()).enumerate() {
        for track in ["t1", "t2"] {
            records.push(AnnotationRecord::new("ann", 1, 4 * k as u64, track, Zone::from_code(a).unwrap()));
            records.push(AnnotationRecord::new("bob", 1, 4 * k as u64, track, Zone::from_code(b).unwrap()));
        }
    }
    records.push(AnnotationRecord::new("ann", 1, 40, "t1", Zone::Social));
    let set = AnnotationSet::new(SessionMeta::new("s1", AgentType::Virtual, 2), records);
    let pairs = pair_labels(&set, &Slice::new("ann", 1), &Slice::new("bob", 1)).unwrap();
    assert_eq!((pairs.n_aligned, pairs.n_unmatched_a, pairs.n_unmatched_b), (10, 1, 0));
    let r = reliability_report(&pairs).unwrap();
    assert_eq!(r.percent_agreement, 0.8);
    assert!((r.kappa - common::textbook_kappa(&pairs.pairs)).abs() < 1e-12);
}
