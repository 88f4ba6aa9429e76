use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BatchSpec, TrainError};
use crate::dataset::{Manifest, SequenceMeta};

/// One sampled training clip: a recording and the frame indices to read
/// from every modality of it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clip {
    /// The recording; its modality field is whichever modality the
    /// manifest listed first and carries no meaning.
    pub recording: SequenceMeta,
    pub frames: Vec<usize>,
}

impl Clip {
    pub fn subject(&self) -> &str {
        &self.recording.subject_id
    }
}

/// Training subjects in sorted order; the position is the class index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMap {
    subjects: Vec<String>,
}

impl ClassMap {
    pub fn from_manifest(manifest: &Manifest) -> Self {
        ClassMap {
            subjects: manifest.subjects().into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn label(&self, subject: &str) -> Option<usize> {
        self.subjects.binary_search_by(|s| s.as_str().cmp(subject)).ok()
    }

    pub fn subjects(&self) -> &[String] {
        &self.subjects
    }
}

/// Recordings per subject, each with the smallest frame count over its
/// modalities.
pub fn recordings(manifest: &Manifest) -> BTreeMap<String, Vec<(SequenceMeta, usize)>> {
    let mut by_key: BTreeMap<String, (SequenceMeta, usize)> = BTreeMap::new();
    for e in manifest.entries() {
        by_key
            .entry(e.meta.recording_key())
            .and_modify(|(_, n)| *n = (*n).min(e.frame_count))
            .or_insert((e.meta.clone(), e.frame_count));
    }
    let mut out: BTreeMap<String, Vec<(SequenceMeta, usize)>> = BTreeMap::new();
    for (meta, n) in by_key.into_values() {
        out.entry(meta.subject_id.clone()).or_default().push((meta, n));
    }
    out
}

/// Ordered window of `t` frames starting at `start`, wrapping around
/// sequences shorter than `t`.
pub fn window(frame_count: usize, t: usize, start: usize) -> Vec<usize> {
    if frame_count >= t {
        (start..start + t).collect()
    } else {
        (0..t).map(|i| (start + i) % frame_count).collect()
    }
}

fn window_starts(frame_count: usize, t: usize) -> usize {
    if frame_count >= t {
        frame_count - t + 1
    } else {
        frame_count
    }
}

/// `p` distinct identities with `k` clips each. Recordings are drawn
/// without replacement when an identity has at least `k`, otherwise with
/// replacement; repeats of one recording get distinct windows while unused
/// start positions remain.
pub fn pk_sample<R: Rng + ?Sized>(manifest: &Manifest, spec: &BatchSpec, rng: &mut R) -> Result<Vec<Clip>, TrainError> {
    spec.validate()?;
    let groups = recordings(manifest);
    if groups.len() < spec.p {
        return Err(TrainError::TooFewIdentities {
            needed: spec.p,
            available: groups.len(),
        });
    }
    let subjects: Vec<&Vec<(SequenceMeta, usize)>> = groups.values().collect();
    let mut out = Vec::with_capacity(spec.p * spec.k);
    for s in sample(rng, subjects.len(), spec.p) {
        let recs = subjects[s];
        let picks: Vec<usize> = if recs.len() >= spec.k {
            sample(rng, recs.len(), spec.k).into_vec()
        } else {
            (0..spec.k).map(|_| rng.random_range(0..recs.len())).collect()
        };
        let mut used: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for r in picks {
            let (meta, n) = &recs[r];
            let taken = used.entry(r).or_default();
            let free: Vec<usize> = (0..window_starts(*n, spec.t)).filter(|s| !taken.contains(s)).collect();
            let start = if free.is_empty() {
                rng.random_range(0..window_starts(*n, spec.t))
            } else {
                free[rng.random_range(0..free.len())]
            };
            taken.push(start);
            out.push(Clip {
                recording: meta.clone(),
                frames: window(*n, spec.t, start),
            });
        }
    }
    Ok(out)
}
