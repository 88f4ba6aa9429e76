use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array2, Array5, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::metrics::{cross_view_average, distance_matrix, mean_ap, rank1, ViewMatrix};
use super::protocol::{build_protocol, EvalUnit, Protocol, ProtocolSpec, Route, PROBE_TRIALS};
use super::EvalError;
use crate::dataset::storage::{read_image_bytes, read_record};
use crate::dataset::{Condition, Manifest, Modality, SequenceMeta};
use crate::model::{file_sha256, Checkpoint, ModelConfig, OmniGait, Variant};

/// Retrieval feature `[C3, P]` of one unit.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub unit: EvalUnit,
    pub feature: Array2<f32>,
}

/// Everything needed to evaluate without the model.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub spec: ProtocolSpec,
    pub checkpoint_sha256: String,
    pub channels: usize,
    pub parts: usize,
    pub skipped_unpaired: usize,
    pub gallery: Vec<EmbeddingRecord>,
    pub probes: Vec<EmbeddingRecord>,
}

/// Fails when the model cannot serve `spec`.
pub fn check_model(config: &ModelConfig, spec: &ProtocolSpec) -> Result<(), EvalError> {
    for m in spec.modalities() {
        if !config.modalities.contains(&m) {
            return Err(EvalError::ModalityNotTrained {
                modality: m,
                trained: config.modalities.clone(),
            });
        }
    }
    let pairs = matches!(spec.gallery(), Route::Pair(..)) || matches!(spec.probe(), Route::Pair(..));
    if pairs && config.variant != Variant::Omni {
        return Err(EvalError::FusionUnavailable);
    }
    Ok(())
}

fn load(manifest: &Manifest, meta: &SequenceMeta) -> Result<Array5<f32>, EvalError> {
    let entry = manifest.find(meta).ok_or_else(|| EvalError::MissingSequence(meta.key()))?;
    let dir = manifest.root.join(&entry.rel_path);
    let bytes = read_image_bytes(&dir, &read_record(&dir)?)?;
    Ok(bytes.mapv(|v| f32::from(v) / 255.0).insert_axis(Axis(0)))
}

fn frames(x: &Array5<f32>, t: usize) -> ndarray::ArrayView5<'_, f32> {
    x.slice(s![.., ..t, .., .., ..])
}

/// Embeds one unit on every frame of its sequences; a fused pair uses the
/// frames both sequences have.
pub fn embed(model: &OmniGait<f32>, manifest: &Manifest, unit: &EvalUnit) -> Result<Array2<f32>, EvalError> {
    let sources = unit.sources();
    let out = match unit.route {
        Route::Single(m) => {
            let x = load(manifest, &sources[0])?;
            model.forward_single(m, x.view())?
        }
        Route::Pair(a, b) => {
            let xa = load(manifest, &sources[0])?;
            let xb = load(manifest, &sources[1])?;
            let t = xa.shape()[1].min(xb.shape()[1]);
            model.forward_pair(a, frames(&xa, t), b, frames(&xb, t))?
        }
    };
    let feature = out.post.index_axis_move(Axis(0), 0);
    if feature.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::NonFiniteFeature(unit.key()));
    }
    Ok(feature)
}

pub fn extract_embeddings(
    model: &OmniGait<f32>,
    manifest: &Manifest,
    protocol: &Protocol,
    checkpoint_sha256: &str,
) -> Result<EmbeddingSet, EvalError> {
    check_model(model.config(), &protocol.spec)?;
    let run = |units: &[EvalUnit]| -> Result<Vec<EmbeddingRecord>, EvalError> {
        units
            .iter()
            .map(|u| {
                Ok(EmbeddingRecord {
                    unit: u.clone(),
                    feature: embed(model, manifest, u)?,
                })
            })
            .collect()
    };
    let gallery = run(&protocol.gallery)?;
    let probes = run(&protocol.probes)?;
    let cfg = model.config();
    Ok(EmbeddingSet {
        spec: protocol.spec,
        checkpoint_sha256: checkpoint_sha256.to_string(),
        channels: cfg.embed_dim,
        parts: cfg.parts,
        skipped_unpaired: protocol.skipped_unpaired,
        gallery,
        probes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    /// Cross-view mean Rank-1 in percent.
    pub rank1: Option<f64>,
    /// Cross-view mean mAP in percent.
    pub map: Option<f64>,
    pub rank1_matrix: ViewMatrix,
    pub map_matrix: ViewMatrix,
    pub evaluated_pairs: usize,
    /// Off-diagonal view pairs with no gallery or no probes.
    pub skipped_pairs: usize,
    /// Probes left out of mAP for lack of a gallery match, summed over pairs.
    pub excluded_probes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub spec: ProtocolSpec,
    pub checkpoint_sha256: String,
    pub views: Vec<u16>,
    pub conditions: BTreeMap<Condition, ConditionReport>,
    pub skipped_unpaired: usize,
}

impl EvalReport {
    pub fn rank1(&self, c: Condition) -> Option<f64> {
        self.conditions.get(&c).and_then(|r| r.rank1)
    }

    pub fn map(&self, c: Condition) -> Option<f64> {
        self.conditions.get(&c).and_then(|r| r.map)
    }

    /// Plain-text summary table.
    pub fn table(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}"));
        let mut s = format!("protocol {}  views {:?}\n", self.spec, self.views);
        let _ = writeln!(s, "{:<5} {:>8} {:>8} {:>6} {:>8}", "cond", "rank1", "mAP", "pairs", "skipped");
        for (c, r) in &self.conditions {
            let _ = writeln!(
                s,
                "{:<5} {:>8} {:>8} {:>6} {:>8}",
                c.code(),
                pct(r.rank1),
                pct(r.map),
                r.evaluated_pairs,
                r.skipped_pairs
            );
        }
        if self.skipped_unpaired > 0 {
            let _ = writeln!(s, "unpaired units skipped: {}", self.skipped_unpaired);
        }
        s
    }
}

/// Scores every off-diagonal view pair per probe condition.
pub fn evaluate(set: &EmbeddingSet) -> Result<EvalReport, EvalError> {
    let views: Vec<u16> = set
        .gallery
        .iter()
        .chain(&set.probes)
        .map(|r| r.unit.view_deg)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let at = |records: &'_ [EmbeddingRecord], view: u16, cond: Option<Condition>| -> Vec<usize> {
        (0..records.len())
            .filter(|&i| records[i].unit.view_deg == view && cond.map_or(true, |c| records[i].unit.condition == c))
            .collect()
    };
    let mut conditions = BTreeMap::new();
    for (cond, _) in PROBE_TRIALS {
        if !set.probes.iter().any(|r| r.unit.condition == cond) {
            continue;
        }
        let mut r1 = ViewMatrix::empty(views.clone());
        let mut ap = ViewMatrix::empty(views.clone());
        let (mut evaluated, mut skipped, mut excluded) = (0, 0, 0);
        for (pi, &pv) in views.iter().enumerate() {
            let probes = at(&set.probes, pv, Some(cond));
            for (gi, &gv) in views.iter().enumerate() {
                if pi == gi {
                    continue;
                }
                let gallery = at(&set.gallery, gv, None);
                if probes.is_empty() || gallery.is_empty() {
                    skipped += 1;
                    continue;
                }
                let pf: Vec<ArrayView2<'_, f32>> = probes.iter().map(|&i| set.probes[i].feature.view()).collect();
                let gf: Vec<ArrayView2<'_, f32>> = gallery.iter().map(|&i| set.gallery[i].feature.view()).collect();
                let pl: Vec<&str> = probes.iter().map(|&i| set.probes[i].unit.subject_id.as_str()).collect();
                let gl: Vec<&str> = gallery.iter().map(|&i| set.gallery[i].unit.subject_id.as_str()).collect();
                let d = distance_matrix(&pf, &gf)?;
                r1.cells[pi][gi] = Some(rank1(d.view(), &pl, &gl)?);
                let m = mean_ap(d.view(), &pl, &gl)?;
                ap.cells[pi][gi] = m.value;
                excluded += m.excluded;
                evaluated += 1;
            }
        }
        conditions.insert(
            cond,
            ConditionReport {
                rank1: cross_view_average(&r1).ok(),
                map: cross_view_average(&ap).ok(),
                rank1_matrix: r1,
                map_matrix: ap,
                evaluated_pairs: evaluated,
                skipped_pairs: skipped,
                excluded_probes: excluded,
            },
        );
    }
    Ok(EvalReport {
        spec: set.spec,
        checkpoint_sha256: set.checkpoint_sha256.clone(),
        views,
        conditions,
        skipped_unpaired: set.skipped_unpaired,
    })
}

/// Loads the checkpoint, checks it against `spec` and the manifest, and
/// embeds the protocol's units.
pub fn embed_checkpoint(checkpoint: &Path, manifest: &Manifest, spec: &ProtocolSpec) -> Result<EmbeddingSet, EvalError> {
    let ckpt = Checkpoint::read(checkpoint)?;
    check_model(&ckpt.config, spec)?;
    if let Some(trained) = ckpt.meta["classes"]["subjects"].as_array() {
        let trained: BTreeSet<&str> = trained.iter().filter_map(|v| v.as_str()).collect();
        let overlap: Vec<String> = manifest.subjects().into_iter().filter(|s| trained.contains(s.as_str())).collect();
        if !overlap.is_empty() {
            return Err(EvalError::SubjectsOverlap(overlap));
        }
    }
    let protocol = build_protocol(manifest, spec)?;
    let model = OmniGait::from_checkpoint(&ckpt)?;
    let hash = file_sha256(checkpoint)?;
    extract_embeddings(&model, manifest, &protocol, &hash)
}

pub fn run_eval(checkpoint: &Path, manifest: &Manifest, spec: &ProtocolSpec) -> Result<EvalReport, EvalError> {
    evaluate(&embed_checkpoint(checkpoint, manifest, spec)?)
}

/// Cross-modal set built from the probes of one single-modal set and the
/// gallery of another, without re-embedding.
pub fn combine(probes_from: &EmbeddingSet, gallery_from: &EmbeddingSet) -> Result<EmbeddingSet, EvalError> {
    let (Route::Single(p), Route::Single(g)) = (probes_from.spec.probe(), gallery_from.spec.gallery()) else {
        return Err(EvalError::InvalidSpec("only single-modal sets can be combined".into()));
    };
    if probes_from.checkpoint_sha256 != gallery_from.checkpoint_sha256 {
        return Err(EvalError::InvalidSpec("sets come from different checkpoints".into()));
    }
    let spec = if p == g { ProtocolSpec::single(p)? } else { ProtocolSpec::cross(p, g)? };
    Ok(EmbeddingSet {
        spec,
        checkpoint_sha256: gallery_from.checkpoint_sha256.clone(),
        channels: gallery_from.channels,
        parts: gallery_from.parts,
        skipped_unpaired: 0,
        gallery: gallery_from.gallery.clone(),
        probes: probes_from.probes.clone(),
    })
}

/// Reports for every probe/gallery combination of `modalities`, embedding
/// each modality once.
pub fn matrix_reports(checkpoint: &Path, manifest: &Manifest, modalities: &[Modality]) -> Result<Vec<EvalReport>, EvalError> {
    let sets = modalities
        .iter()
        .map(|&m| embed_checkpoint(checkpoint, manifest, &ProtocolSpec::single(m)?))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::new();
    for p in &sets {
        for g in &sets {
            out.push(evaluate(&combine(p, g)?)?);
        }
    }
    Ok(out)
}
