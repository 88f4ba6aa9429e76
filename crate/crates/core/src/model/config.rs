use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::dataset::{Modality, FRAME_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Omni,
    TwoStream,
}

/// Architecture hyper-parameters. Two configs are compatible (a checkpoint
/// of one loads into the other) iff they compare equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub modalities: Vec<Modality>,
    /// Output width of every modality encoder (C1).
    pub encoder_channels: usize,
    pub encoder_stride: usize,
    /// Width of each shared residual stage; the last one is C2.
    pub stage_channels: Vec<usize>,
    pub stage_strides: Vec<usize>,
    pub blocks_per_stage: usize,
    /// Horizontal strips (P).
    pub parts: usize,
    /// Per-part embedding width (C3).
    pub embed_dim: usize,
    pub gate_hidden: usize,
    pub num_classes: usize,
}

impl ModelConfig {
    /// Full-size network: 128-channel encoders, stages 128/256/512 with a
    /// total stride of 4, 16 parts of width 256.
    pub fn full(modalities: Vec<Modality>, num_classes: usize) -> Self {
        ModelConfig {
            variant: Variant::Omni,
            modalities,
            encoder_channels: 128,
            encoder_stride: 1,
            stage_channels: vec![128, 256, 512],
            stage_strides: vec![1, 2, 2],
            blocks_per_stage: 1,
            parts: 16,
            embed_dim: 256,
            gate_hidden: 32,
            num_classes,
        }
    }

    /// Narrow network that trains on one CPU core in minutes.
    pub fn desk(modalities: Vec<Modality>, num_classes: usize) -> Self {
        ModelConfig {
            variant: Variant::Omni,
            modalities,
            encoder_channels: 16,
            encoder_stride: 2,
            stage_channels: vec![16, 32, 64],
            stage_strides: vec![2, 2, 1],
            blocks_per_stage: 1,
            parts: 8,
            embed_dim: 64,
            gate_hidden: 8,
            num_classes,
        }
    }

    pub fn two_stream(mut self, m1: Modality, m2: Modality) -> Self {
        self.variant = Variant::TwoStream;
        self.modalities = vec![m1, m2];
        self
    }

    /// Spatial size after the encoder.
    pub fn encoder_hw(&self) -> usize {
        FRAME_SIZE.div_ceil(self.encoder_stride)
    }

    /// Spatial size after the last backbone stage.
    pub fn backbone_hw(&self) -> usize {
        self.stage_strides.iter().fold(self.encoder_hw(), |hw, s| hw.div_ceil(*s))
    }

    pub fn backbone_channels(&self) -> usize {
        *self.stage_channels.last().expect("validated")
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.modalities.is_empty() {
            return bad("no modalities".into());
        }
        for (i, m) in self.modalities.iter().enumerate() {
            if m.channels().is_none() {
                return Err(ModelError::UnsupportedModality(*m));
            }
            if self.modalities[..i].contains(m) {
                return bad(format!("modality {m} listed twice"));
            }
        }
        if self.variant == Variant::TwoStream && self.modalities.len() != 2 {
            return bad("two-stream variant needs exactly two modalities".into());
        }
        if self.stage_channels.is_empty() || self.stage_channels.len() != self.stage_strides.len() {
            return bad("stage_channels and stage_strides must be non-empty and equally long".into());
        }
        let dims = [
            self.encoder_channels,
            self.encoder_stride,
            self.blocks_per_stage,
            self.parts,
            self.embed_dim,
            self.gate_hidden,
            self.num_classes,
        ];
        if dims.contains(&0) || self.stage_channels.contains(&0) || self.stage_strides.contains(&0) {
            return bad("all sizes must be positive".into());
        }
        let h = self.backbone_hw();
        if h % self.parts != 0 {
            return Err(ModelError::IndivisibleHeight { height: h, parts: self.parts });
        }
        Ok(())
    }
}
