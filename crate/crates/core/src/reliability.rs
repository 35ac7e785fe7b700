//! Coding consistency between two slices of the same session: the same
//! coder across passes (intracoder) or two coders (intercoder).

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::model::{AnnotationSet, Slice, Zone};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReliabilityError {
    #[error("slice {0} has no records")]
    EmptySlice(Slice),
    #[error("cannot compare slice {0} with itself")]
    SameSlice(Slice),
    #[error("slices share no (frame, track) units")]
    NoOverlap,
    #[error("no label pairs to compare")]
    NoPairs,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairedLabels {
    pub pairs: Vec<(Zone, Zone)>,
    pub n_aligned: usize,
    pub n_unmatched_a: usize,
    pub n_unmatched_b: usize,
}

impl PairedLabels {
    pub fn from_pairs(pairs: Vec<(Zone, Zone)>) -> Self {
        PairedLabels { n_aligned: pairs.len(), pairs, n_unmatched_a: 0, n_unmatched_b: 0 }
    }
}

fn slice_index<'a>(set: &'a AnnotationSet, slice: &Slice) -> Result<BTreeMap<(u64, &'a str), Zone>, ReliabilityError> {
    let m: BTreeMap<_, _> = set
        .records
        .iter()
        .filter(|r| r.coder_id == slice.coder_id && r.pass_id == slice.pass_id)
        .map(|r| ((r.frame_index, r.track_id.as_str()), r.zone))
        .collect();
    if m.is_empty() {
        Err(ReliabilityError::EmptySlice(slice.clone()))
    } else {
        Ok(m)
    }
}

/// Aligns two slices on `(frame_index, track_id)`. Units coded in only one
/// slice are counted as unmatched.
pub fn pair_labels(set: &AnnotationSet, a: &Slice, b: &Slice) -> Result<PairedLabels, ReliabilityError> {
    if a == b {
        return Err(ReliabilityError::SameSlice(a.clone()));
    }
    let la = slice_index(set, a)?;
    let lb = slice_index(set, b)?;

    let mut pairs = Vec::new();
    let mut unmatched_a = 0;
    for (key, &za) in &la {
        match lb.get(key) {
            Some(&zb) => pairs.push((za, zb)),
            None => unmatched_a += 1,
        }
    }
    let unmatched_b = lb.len() - pairs.len();
    if pairs.is_empty() {
        return Err(ReliabilityError::NoOverlap);
    }
    Ok(PairedLabels { n_aligned: pairs.len(), pairs, n_unmatched_a: unmatched_a, n_unmatched_b: unmatched_b })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReliabilityReport {
    pub n_pairs: u64,
    pub percent_agreement: f64,
    pub kappa: f64,
    /// `confusion[a][b]` in [`Zone::ALL`] order.
    pub confusion: [[u64; 4]; 4],
}

pub fn confusion_matrix(pairs: &[(Zone, Zone)]) -> [[u64; 4]; 4] {
    let mut m = [[0u64; 4]; 4];
    for &(a, b) in pairs {
        m[a.index()][b.index()] += 1;
    }
    m
}

/// Cohen's kappa from a confusion matrix.
///
/// Evaluated as `(n·agree − Σ rₖcₖ) / (n² − Σ rₖcₖ)` in integers, which is
/// `(p_o − p_e) / (1 − p_e)` with a single rounding step. When both sides
/// use one identical category (`p_e = 1`) kappa is 1.
pub fn kappa_from_confusion(confusion: &[[u64; 4]; 4]) -> Result<f64, ReliabilityError> {
    let n: u128 = confusion.iter().flatten().map(|&c| u128::from(c)).sum();
    if n == 0 {
        return Err(ReliabilityError::NoPairs);
    }
    let agree: u128 = (0..4).map(|k| u128::from(confusion[k][k])).sum();
    let chance: u128 = (0..4)
        .map(|k| {
            let row: u128 = confusion[k].iter().map(|&c| u128::from(c)).sum();
            let col: u128 = confusion.iter().map(|r| u128::from(r[k])).sum();
            row * col
        })
        .sum();
    let denom = n * n - chance;
    if denom == 0 {
        return Ok(1.0);
    }
    let num = (n * agree) as i128 - chance as i128;
    Ok((num as f64 / denom as f64).clamp(-1.0, 1.0))
}

pub fn reliability_report(pairs: &PairedLabels) -> Result<ReliabilityReport, ReliabilityError> {
    if pairs.pairs.is_empty() {
        return Err(ReliabilityError::NoPairs);
    }
    let confusion = confusion_matrix(&pairs.pairs);
    let n = pairs.pairs.len() as u64;
    let agree: u64 = (0..4).map(|k| confusion[k][k]).sum();
    Ok(ReliabilityReport {
        n_pairs: n,
        percent_agreement: agree as f64 / n as f64,
        kappa: kappa_from_confusion(&confusion)?,
        confusion,
    })
}

/// Header of the reliability export CSV.
pub const RELIABILITY_HEADER: [&str; 8] =
    ["session_id", "slice_a", "slice_b", "n", "agreement", "kappa", "unmatched_a", "unmatched_b"];

pub fn write_reliability_csv<W: std::io::Write>(
    out: W,
    rows: &[(String, Slice, Slice, PairedLabels, ReliabilityReport)],
) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(RELIABILITY_HEADER)?;
    for (session, a, b, pairs, report) in rows {
        w.write_record([
            session.clone(),
            a.to_string(),
            b.to_string(),
            report.n_pairs.to_string(),
            report.percent_agreement.to_string(),
            report.kappa.to_string(),
            pairs.n_unmatched_a.to_string(),
            pairs.n_unmatched_b.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AgentType, AnnotationRecord, SessionMeta};

    fn set_with(slices: &[(&str, u32, &str)]) -> AnnotationSet {
        let mut records = Vec::new();
        for &(coder, pass, codes) in slices {
            for (k, c) in codes.chars().enumerate() {
                records.push(AnnotationRecord::new(coder, pass, 4 * k as u64, "t1", Zone::from_code(c).unwrap()));
            }
        }
        AnnotationSet::new(SessionMeta::new("s1", AgentType::Robot, 1), records)
    }

    #[test]
    fn identical_passes_agree_perfectly() {
        let set = set_with(&[("c1", 1, "ipsi"), ("c1", 2, "ipsi")]);
        let pairs = pair_labels(&set, &Slice::new("c1", 1), &Slice::new("c1", 2)).unwrap();
        assert_eq!((pairs.n_aligned, pairs.n_unmatched_a, pairs.n_unmatched_b), (4, 0, 0));
        let r = reliability_report(&pairs).unwrap();
        assert_eq!(r.percent_agreement, 1.0);
        assert_eq!(r.kappa, 1.0);
    }

    #[test]
    fn missing_frame_counts_as_unmatched() {
        let set = set_with(&[("c1", 1, "ipsi"), ("c1", 2, "ips")]);
        let pairs = pair_labels(&set, &Slice::new("c1", 1), &Slice::new("c1", 2)).unwrap();
        assert_eq!((pairs.n_aligned, pairs.n_unmatched_a, pairs.n_unmatched_b), (3, 1, 0));
    }

    #[test]
    fn hand_derived_kappa() {
        let mut m = [[0u64; 4]; 4];
        m[0][0] = 20;
        m[1][1] = 10;
        m[0][1] = 5;
        m[1][0] = 5;
        let k = kappa_from_confusion(&m).unwrap();
        assert!((k - 7.0 / 15.0).abs() < 1e-12);
    }

    #[test]
    fn constant_equal_sides_have_kappa_one() {
        let pairs = PairedLabels::from_pairs(vec![(Zone::Social, Zone::Social); 5]);
        assert_eq!(reliability_report(&pairs).unwrap().kappa, 1.0);
    }

    #[test]
    fn total_disagreement_is_minus_one() {
        let pairs = PairedLabels::from_pairs(vec![(Zone::Intimate, Zone::Personal), (Zone::Personal, Zone::Intimate)]);
        assert_eq!(reliability_report(&pairs).unwrap().kappa, -1.0);
    }

    #[test]
    fn error_paths() {
        let set = set_with(&[("c1", 1, "ip"), ("c2", 1, "")]);
        let a = Slice::new("c1", 1);
        assert_eq!(pair_labels(&set, &a, &a), Err(ReliabilityError::SameSlice(a.clone())));
        assert_eq!(
            pair_labels(&set, &a, &Slice::new("c2", 1)),
            Err(ReliabilityError::EmptySlice(Slice::new("c2", 1)))
        );
        assert_eq!(reliability_report(&PairedLabels::from_pairs(vec![])), Err(ReliabilityError::NoPairs));

        let mut disjoint = set_with(&[("c1", 1, "ip")]);
        disjoint.records.push(AnnotationRecord::new("c2", 1, 40, "t1", Zone::Social));
        assert_eq!(pair_labels(&disjoint, &a, &Slice::new("c2", 1)), Err(ReliabilityError::NoOverlap));
    }
}
