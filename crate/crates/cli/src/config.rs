//! Job configuration: one TOML file with a section per command, `--set`
//! overrides and the `--seed` flag.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use omnigait::dataset::Modality;
use omnigait::evalproto::ProtocolSpec;
use omnigait::model::{ModelConfig, Variant};
use omnigait::preprocess::PreprocessConfig;
use omnigait::synthgen::SynthConfig;
use omnigait::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Desk,
    Full,
}

/// A preset plus optional per-field overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub preset: Preset,
    pub variant: Variant,
    pub modalities: Vec<Modality>,
    pub encoder_channels: Option<usize>,
    pub encoder_stride: Option<usize>,
    pub stage_channels: Option<Vec<usize>>,
    pub stage_strides: Option<Vec<usize>>,
    pub blocks_per_stage: Option<usize>,
    pub parts: Option<usize>,
    pub embed_dim: Option<usize>,
    pub gate_hidden: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            preset: Preset::Desk,
            variant: Variant::Omni,
            modalities: vec![Modality::RgbSilhouette, Modality::Depth, Modality::Event],
            encoder_channels: None,
            encoder_stride: None,
            stage_channels: None,
            stage_strides: None,
            blocks_per_stage: None,
            parts: None,
            embed_dim: None,
            gate_hidden: None,
        }
    }
}

impl ModelSection {
    pub fn build(&self, num_classes: usize) -> ModelConfig {
        let base = match self.preset {
            Preset::Desk => ModelConfig::desk(self.modalities.clone(), num_classes),
            Preset::Full => ModelConfig::full(self.modalities.clone(), num_classes),
        };
        ModelConfig {
            variant: self.variant,
            encoder_channels: self.encoder_channels.unwrap_or(base.encoder_channels),
            encoder_stride: self.encoder_stride.unwrap_or(base.encoder_stride),
            stage_channels: self.stage_channels.clone().unwrap_or(base.stage_channels.clone()),
            stage_strides: self.stage_strides.clone().unwrap_or(base.stage_strides.clone()),
            blocks_per_stage: self.blocks_per_stage.unwrap_or(base.blocks_per_stage),
            parts: self.parts.unwrap_or(base.parts),
            embed_dim: self.embed_dim.unwrap_or(base.embed_dim),
            gate_hidden: self.gate_hidden.unwrap_or(base.gate_hidden),
            ..base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Used by `eval` and `export-embeddings` when no `--protocol` is given.
    pub protocols: Vec<ProtocolSpec>,
    /// Used by `report-matrix`; empty means every modality of the checkpoint.
    pub matrix_modalities: Vec<Modality>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            protocols: vec![ProtocolSpec::single(Modality::RgbSilhouette).expect("image modality")],
            matrix_modalities: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JobConfig {
    pub synth: SynthConfig,
    pub preprocess: PreprocessConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

/// A usage problem: bad flags, unreadable or invalid configuration.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(e: anyhow::Error) -> anyhow::Error {
    anyhow!(UsageError(format!("{e:#}")))
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> Value {
    let wrapped = format!("v = {value}");
    match wrapped.parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("just parsed"),
        Err(_) => Value::String(value.to_string()),
    }
}

/// Applies one `a.b.c=value` override.
pub fn apply_set(table: &mut Table, assignment: &str) -> Result<()> {
    let (path, value) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("--set {assignment}: expected key=value"))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!("--set {assignment}: empty key segment");
    }
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cur.entry(k.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("--set {assignment}: `{k}` is not a section"))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), parse_value(value.trim()));
    Ok(())
}

/// Reads the optional config file, applies overrides and the seed, and
/// rejects unknown keys.
pub fn resolve(file: Option<&Path>, sets: &[String], seed: Option<u64>) -> Result<JobConfig> {
    let mut table = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("--config {}", p.display()))
                .map_err(usage)?;
            text.parse::<Table>()
                .with_context(|| format!("--config {}", p.display()))
                .map_err(usage)?
        }
        None => Table::new(),
    };
    for s in sets {
        apply_set(&mut table, s).map_err(usage)?;
    }
    let mut cfg: JobConfig = Value::Table(table)
        .try_into()
        .context("invalid configuration")
        .map_err(usage)?;
    if let Some(seed) = seed {
        cfg.synth.seed = seed;
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

impl JobConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = JobConfig::default();
        let back: JobConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_and_seed() {
        let sets = vec![
            "train.batch.p=4".to_string(),
            "train.lr = 0.05".into(),
            "synth.views=[0, 36]".into(),
            "train.anchor=depth".into(),
            "eval.protocols=[\"cross:depth->rgb_silhouette\"]".into(),
        ];
        let cfg = resolve(None, &sets, Some(9)).unwrap();
        assert_eq!(cfg.train.batch.p, 4);
        assert_eq!(cfg.train.lr, 0.05);
        assert_eq!(cfg.synth.views, vec![0, 36]);
        assert_eq!(cfg.train.anchor, Modality::Depth);
        assert_eq!(cfg.eval.protocols[0].to_string(), "cross:depth->rgb_silhouette");
        assert_eq!((cfg.synth.seed, cfg.train.seed), (9, 9));
    }

    #[test]
    fn unknown_keys_and_bad_sets_are_usage_errors() {
        for bad in ["train.learning_rate=1", "nonsense=1", "train", "train..lr=1", "train.lr.x=1"] {
            let err = resolve(None, &[bad.to_string()], None).unwrap_err();
            assert!(err.downcast_ref::<UsageError>().is_some(), "{bad}: {err:#}");
        }
    }

    #[test]
    fn model_overrides() {
        let mut m = ModelSection::default();
        m.parts = Some(4);
        let c = m.build(7);
        assert_eq!((c.parts, c.num_classes, c.embed_dim), (4, 7, 64));
        m.preset = Preset::Full;
        assert_eq!(m.build(7).encoder_channels, 128);
    }
}
