use std::collections::HashMap;

use ndarray::{s, Array4, Array5};

use super::{ClassMap, Clip, TrainError};
use crate::dataset::storage::{read_image_bytes, read_record};
use crate::dataset::{Manifest, Modality, SequenceMeta};
use crate::model::{Stream, TrainBatch};

/// Decoded image sequences of one manifest, kept as stored bytes.
#[derive(Debug)]
pub struct SequenceStore {
    manifest: Manifest,
    cache: HashMap<SequenceMeta, Array4<u8>>,
}

impl SequenceStore {
    pub fn new(manifest: Manifest) -> Self {
        SequenceStore {
            manifest,
            cache: HashMap::new(),
        }
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn cached(&self) -> usize {
        self.cache.len()
    }

    pub fn contains(&self, meta: &SequenceMeta) -> bool {
        self.manifest.find(meta).is_some()
    }

    /// `[T, C, 64, 64]` bytes of an image sequence.
    pub fn frames(&mut self, meta: &SequenceMeta) -> Result<&Array4<u8>, TrainError> {
        if !self.cache.contains_key(meta) {
            let entry = self
                .manifest
                .find(meta)
                .ok_or_else(|| TrainError::MissingModality(vec![meta.key()]))?;
            let dir = self.manifest.root.join(&entry.rel_path);
            let record = read_record(&dir)?;
            let bytes = read_image_bytes(&dir, &record)?;
            self.cache.insert(meta.clone(), bytes);
        }
        Ok(&self.cache[meta])
    }
}

/// Streams of one training step: every modality alone, then the anchor
/// fused with each other modality.
pub fn omni_streams(modalities: &[Modality], anchor: Modality) -> Vec<Stream> {
    let mut streams: Vec<Stream> = modalities.iter().map(|&m| Stream::Single(m)).collect();
    if modalities.len() > 1 {
        streams.extend(modalities.iter().filter(|&&m| m != anchor).map(|&m| Stream::Pair(anchor, m)));
    }
    streams
}

/// Loads the clips for every modality the streams need and returns the
/// batch with its class labels.
pub fn compose_batch(
    store: &mut SequenceStore,
    clips: &[Clip],
    streams: Vec<Stream>,
    classes: &ClassMap,
) -> Result<(TrainBatch<f32>, Vec<usize>), TrainError> {
    let mut modalities: Vec<Modality> = streams.iter().flat_map(|s| s.modalities()).collect();
    modalities.sort();
    modalities.dedup();

    let missing: Vec<String> = clips
        .iter()
        .flat_map(|c| modalities.iter().map(move |&m| c.recording.with_modality(m)))
        .filter(|meta| !store.contains(meta))
        .map(|meta| meta.key())
        .collect();
    if !missing.is_empty() {
        return Err(TrainError::MissingModality(missing));
    }
    let labels = clips
        .iter()
        .map(|c| classes.label(c.subject()).ok_or_else(|| TrainError::UnknownSubject(c.subject().to_string())))
        .collect::<Result<Vec<_>, _>>()?;

    let t = clips.first().map_or(0, |c| c.frames.len());
    let mut inputs = std::collections::BTreeMap::new();
    for m in modalities {
        let ch = m.channels().ok_or(TrainError::NotAnImageModality(m))?;
        let mut x = Array5::<f32>::zeros((clips.len(), t, ch, 64, 64));
        for (b, clip) in clips.iter().enumerate() {
            let frames = store.frames(&clip.recording.with_modality(m))?;
            for (i, &f) in clip.frames.iter().enumerate() {
                x.slice_mut(s![b, i, .., .., ..])
                    .zip_mut_with(&frames.slice(s![f, .., .., ..]), |o, &v| *o = f32::from(v) / 255.0);
            }
        }
        inputs.insert(m, x);
    }
    Ok((TrainBatch { inputs, streams }, labels))
}

/// [`compose_batch`] with the omni stream layout.
pub fn compose_omni_batch(
    store: &mut SequenceStore,
    clips: &[Clip],
    modalities: &[Modality],
    anchor: Modality,
    classes: &ClassMap,
) -> Result<(TrainBatch<f32>, Vec<usize>), TrainError> {
    if modalities.len() > 1 && !modalities.contains(&anchor) {
        return Err(TrainError::AnchorNotTrained(anchor));
    }
    compose_batch(store, clips, omni_streams(modalities, anchor), classes)
}
